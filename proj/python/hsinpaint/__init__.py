"""Hyperspectral inpainting: low-rank + sparse ADMM with a plug-and-play
denoiser, with either singular value thresholding or a 1-Lipschitz deep
image prior as the low-rank step.

Cubes are numpy arrays of shape (bands, rows, cols); masks are uint8 arrays
of the same shape with 1 = observed.
"""

import json

from . import _hsinpaint as _core
from ._hsinpaint import (  # noqa: F401
    HsiError,
    __version__,
    add_gaussian_noise,
    certify_nonexpansive,
    ista_sparse_code,
    make_mask,
    mpsnr,
    msam,
    mssim,
    nlm_denoiser,
    nuclear_norm,
    quality,
    run_cli,
    soft_threshold,
    svt,
    synth_lowrank_cube,
)


def default_config():
    return json.loads(_core.default_config())


def learn_dictionary(observed, mask, config=None):
    return _core.learn_dictionary(observed, mask, json.dumps(config or {}))


def inpaint(observed, mask, atoms, config=None, truth=None):
    """Run one solve. Returns (x, report dict, trace CSV text)."""
    out = _core.inpaint(observed, mask, atoms, json.dumps(config or {}), truth)
    return out["x"], json.loads(out["report"]), out["trace_csv"]
