#include "hsinpaint/cli.hpp"
#include "hsinpaint/errors.hpp"
#include "hsinpaint/lowrank.hpp"
#include "hsinpaint/solver.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

namespace py = pybind11;
using namespace hsi;

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

namespace {

// numpy (bands, rows, cols) <-> HsiCube; both are band-major with row-major planes.
HsiCube to_cube(const Array& a) {
    if (a.ndim() != 3) throw py::value_error("cube must be a 3-D array (bands, rows, cols)");
    HsiCube c(int(a.shape(1)), int(a.shape(2)), int(a.shape(0)));
    std::memcpy(c.data.data(), a.data(), sizeof(double) * std::size_t(c.size()));
    return c;
}

Array from_cube(const HsiCube& c) {
    Array a({c.bands, c.rows, c.cols});
    std::memcpy(a.mutable_data(), c.data.data(), sizeof(double) * std::size_t(c.size()));
    return a;
}

MaskCube to_mask(const MaskArray& a) {
    if (a.ndim() != 3) throw py::value_error("mask must be a 3-D array (bands, rows, cols)");
    MaskCube m(int(a.shape(1)), int(a.shape(2)), int(a.shape(0)));
    const auto* p = a.data();
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = p[i] ? 1 : 0;
    return m;
}

MaskArray from_mask(const MaskCube& m) {
    MaskArray a({m.bands, m.rows, m.cols});
    std::memcpy(a.mutable_data(), m.data.data(), m.data.size());
    return a;
}

SolverConfig config_from(const std::string& json_text) {
    SolverConfig cfg;
    if (!json_text.empty()) config_from_json(nlohmann::json::parse(json_text), cfg);
    cfg.validate();
    return cfg;
}

py::dict quality_dict(const QualityReport& q) {
    py::dict d;
    d["mpsnr"] = q.mpsnr;
    d["mssim"] = q.mssim;
    d["msam"] = q.msam;
    d["msam_warning"] = q.msam_warning;
    return d;
}

}  // namespace

PYBIND11_MODULE(_hsinpaint, m) {
    m.doc() = "Hyperspectral inpainting core (low-rank + sparse ADMM with PnP denoising)";
    m.attr("__version__") = kToolVersion;

    py::register_exception<Error>(m, "HsiError", PyExc_RuntimeError);

    m.def("synth_lowrank_cube", [](int rows, int cols, int bands, int rank, std::uint64_t seed) {
        return from_cube(synth_lowrank_cube(rows, cols, bands, rank, seed));
    }, py::arg("rows"), py::arg("cols"), py::arg("bands"), py::arg("rank"), py::arg("seed") = 0);

    m.def("make_mask", [](int rows, int cols, int bands, const std::string& kind, double fraction,
                          std::uint64_t seed) {
        return from_mask(make_mask(rows, cols, bands, parse_mask_kind(kind), fraction, seed));
    }, py::arg("rows"), py::arg("cols"), py::arg("bands"), py::arg("kind"), py::arg("fraction"),
       py::arg("seed") = 0);

    m.def("add_gaussian_noise", [](const Array& x, double sigma, std::uint64_t seed) {
        return from_cube(add_gaussian_noise(to_cube(x), sigma, seed));
    }, py::arg("cube"), py::arg("sigma"), py::arg("seed") = 0);

    m.def("mpsnr", [](const Array& ref, const Array& test) { return mpsnr(to_cube(ref), to_cube(test)); });
    m.def("mssim", [](const Array& ref, const Array& test) { return mssim(to_cube(ref), to_cube(test)); });
    m.def("msam", [](const Array& ref, const Array& test) { return msam(to_cube(ref), to_cube(test)).value; });
    m.def("quality", [](const Array& ref, const Array& test) {
        return quality_dict(quality(to_cube(ref), to_cube(test)));
    });

    m.def("svt", py::overload_cast<const Eigen::MatrixXd&, double>(&svt), py::arg("matrix"), py::arg("tau"));
    m.def("nuclear_norm", py::overload_cast<const Eigen::MatrixXd&>(&nuclear_norm));
    m.def("soft_threshold", py::overload_cast<const Eigen::MatrixXd&, double>(&soft_threshold));

    m.def("ista_sparse_code", [](const Eigen::MatrixXd& phi, const Eigen::MatrixXd& z, double w_s, int iters,
                                 double step) {
        if (step <= 0) step = 1.0 / spectral_norm_sq(phi);
        return ista_sparse_code(phi, z, w_s, iters, step).alpha;
    }, py::arg("phi"), py::arg("z"), py::arg("w_s"), py::arg("iters") = 500, py::arg("step") = 0.0);

    m.def("nlm_denoiser", [](const Eigen::MatrixXd& guide, int grid_rows, int grid_cols, double h, double theta,
                             int search_radius) {
        NlmConfig c;
        c.h = h;
        c.theta = theta;
        c.search_radius = search_radius;
        return build_nlm_denoiser(guide, grid_rows, grid_cols, c).matrix();
    }, py::arg("guide"), py::arg("grid_rows"), py::arg("grid_cols"), py::arg("h") = 0.1, py::arg("theta") = 0.5,
       py::arg("search_radius") = 1);

    m.def("certify_nonexpansive", [](const Eigen::MatrixXd& op, double theta, int trials, std::uint64_t seed) {
        auto r = certify_nonexpansive(op, theta, trials, seed);
        py::dict d;
        d["max_ratio"] = r.max_ratio;
        d["spectral_norm"] = r.spectral_norm;
        d["pass"] = r.pass;
        return d;
    }, py::arg("operator"), py::arg("theta"), py::arg("trials") = 200, py::arg("seed") = 0);

    m.def("default_config", [] { return config_to_json(SolverConfig{}).dump(); },
          "Default solver configuration as a JSON string");

    m.def("learn_dictionary", [](const Array& y, const MaskArray& mask, const std::string& config) {
        return learn_dictionary(to_cube(y), to_mask(mask), config_from(config)).dict.atoms;
    }, py::arg("observed"), py::arg("mask"), py::arg("config") = "");

    m.def("inpaint", [](const Array& y, const MaskArray& mask, const Eigen::MatrixXd& atoms, const std::string& config,
                        std::optional<Array> truth) {
        const SolverConfig cfg = config_from(config);
        const HsiCube yc = to_cube(y);
        const MaskCube mc = to_mask(mask);
        std::optional<HsiCube> t;
        if (truth) t = to_cube(*truth);
        SolveResult r;
        {
            py::gil_scoped_release release;
            r = solve(yc, mc, Dictionary{atoms}, cfg, t ? &*t : nullptr);
        }
        py::dict out;
        out["x"] = from_cube(r.x);
        out["trace_csv"] = r.trace.to_csv();
        out["report"] = report_json(cfg, r).dump();
        return out;
    }, py::arg("observed"), py::arg("mask"), py::arg("atoms"), py::arg("config") = "", py::arg("truth") = py::none());

    m.def("run_cli", [](const std::vector<std::string>& args) { return run_cli(args); },
          "Run a CLI subcommand in-process; returns the exit code");
}
