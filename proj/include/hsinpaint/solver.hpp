#pragma once

#include "hsinpaint/cube.hpp"
#include "hsinpaint/denoise.hpp"
#include "hsinpaint/dict.hpp"
#include "hsinpaint/lipdip.hpp"
#include "hsinpaint/pnp_ista.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hsi {

enum class Branch { Svt, Dip };
std::string branch_name(Branch b);
Branch parse_branch(const std::string& s);

struct SolverConfig {
    // Objective and ADMM penalties.
    double gamma = 0.5;
    double w_lr = 1.0;
    double w_s = 1.0;
    double mu1 = 0.5;
    double mu2 = 0.5;
    double lambda1_init = 0.0;
    double lambda2_init = 0.0;
    double rho1 = 1.05;
    double rho2 = 1.05;
    bool theory_mode = false;  // freezes rho1 = rho2 = 1
    int max_outer_iters = 200;
    Branch branch = Branch::Svt;
    std::uint64_t seed = 0;

    // Early stopping on the windowed moving variance of reconstructions.
    bool early_stop = true;
    int wmv_window = 20;
    int wmv_patience = 100;

    // Lyapunov proxy: number of trailing states kept (anchored at the newest).
    int lyapunov_window = 100;

    // Sparse block: patch geometry, dictionary and PnP-ISTA.
    int patch_size = 3;
    int patch_stride = 1;
    int n_atoms = 12;
    int dict_epochs = 10;
    double ista_lambda = 0.3;
    PnpIstaConfig pnp{};
    NlmConfig nlm{0, 1, 0.005, 0.5};  // h is per-entry RMS; scaled by sqrt(feature length)
    int denoiser_rebuild_every = 1;

    // Low-rank block: SVT threshold is lr_scale * w_lr / mu2.
    double lr_scale = 0.1;

    // DIP branch.
    double dip_lr = 0.1;
    int dip_steps_per_iter = 1;
    double dip_input_noise = 0.0;
    bool dip_prox_term = false;
    double lipschitz_L = 1.0;
    std::vector<int> dip_widths{16, 32, 32, 16};
    int dip_levels = 2;

    // Synthetic-data default noise level (echoed; used by `synth`).
    double noise_sigma = 0.12;

    double effective_rho1() const { return theory_mode ? 1.0 : rho1; }
    double effective_rho2() const { return theory_mode ? 1.0 : rho2; }
    void validate() const;
};

nlohmann::json config_to_json(const SolverConfig& c);
// Fields absent from `j` keep the values already in `c`; unknown keys are errors.
void config_from_json(const nlohmann::json& j, SolverConfig& c);

struct SolverState {
    HsiCube x;
    HsiCube u;
    Eigen::MatrixXd alpha;    // n_atoms x (patches * bands)
    Eigen::MatrixXd lambda1;  // patch_len x (patches * bands)
    HsiCube lambda2;
    double mu1 = 0.5;
    double mu2 = 0.5;
    int iter = 0;
};

struct TraceRow {
    int iter = 0;
    double dx = 0.0;
    double dl1 = 0.0;
    double dl2 = 0.0;
    double objective = 0.0;
    std::optional<double> mpsnr;
    std::optional<double> lyapunov;
    std::optional<double> dip_loss;
};

struct IterTrace {
    std::vector<TraceRow> rows;
    std::string to_csv() const;
};

struct SolveDiagnostics {
    long pnp_monotonicity_violations = 0;
    bool rho_exceeds_half_beta = false;
    double strong_convexity = 0.0;
    double beta = 0.0;
    double min_denoiser_margin = 0.0;  // 1 - max certified spectral norm
    int denoiser_builds = 0;
    bool objective_below_input = false;
    double objective_input = 0.0;
    double objective_output = 0.0;
    std::optional<LipschitzReport> lipschitz;
};

struct SolveResult {
    HsiCube x;
    IterTrace trace;
    std::string stop_reason;
    int iterations = 0;
    int best_iter = -1;  // WMV argmin when early stopping fired
    std::optional<QualityReport> quality;
    SolveDiagnostics diag;
};

// ADMM building blocks.
SolverState init_state(const HsiCube& y, const Dictionary& phi, const PatchLayout& layout, const SolverConfig& cfg);
HsiCube x_update(const SolverState& s, const HsiCube& y, const MaskCube& M, const Dictionary& phi,
                 const PatchLayout& layout, const SolverConfig& cfg);
void multiplier_update(SolverState& s, const Dictionary& phi, const PatchLayout& layout, const SolverConfig& cfg);
void penalty_update(SolverState& s, const SolverConfig& cfg);
double svt_threshold(const SolverState& s, const SolverConfig& cfg);
double objective_value(const HsiCube& x, const Eigen::MatrixXd& alpha, const HsiCube& y, const MaskCube& M,
                       const SolverConfig& cfg);

// Builds the averaged NLM denoiser acting on code matrices from the current
// patch reconstructions (one grid node per patch position, bands stacked).
AveragedDenoiser patch_domain_denoiser(const Eigen::MatrixXd& recon_patches, const PatchLayout& layout, int bands,
                                       const SolverConfig& cfg);
CodeDenoiser code_denoiser(const AveragedDenoiser& D, int bands);

// DIP u-step: train on z = x + lambda2/mu2 against the observed entries, then
// u = f(z). Returns u and the last training loss.
std::pair<HsiCube, double> dip_u_update(Network& net, const HsiCube& z, const HsiCube& y, const MaskCube& M,
                                        const SolverConfig& cfg, double mu2);

// Lyapunov proxy over states [0, K], anchored at the last one.
struct LyapunovState {
    HsiCube x;
    Eigen::MatrixXd lambda1;
    HsiCube lambda2;
    double mu1 = 1.0;
    double mu2 = 1.0;
};
std::vector<double> lyapunov_proxy(const std::vector<LyapunovState>& window);
double nonincreasing_fraction(const std::vector<double>& h, double rel_slack = 1e-12);

struct WmvDecision {
    bool stop = false;
    int stop_iter = -1;
    int best_iter = -1;  // index (into the history) of the window end with minimum variance
    std::vector<double> wmv;  // one value per full window, indexed by window end
};
WmvDecision wmv_early_stop(const std::vector<HsiCube>& history, int window, int patience);

// Incremental version used inside the solver.
class WmvMonitor {
public:
    WmvMonitor(int window, int patience);
    // Returns true when the stop condition fires after adding `x`.
    bool push(const HsiCube& x);
    int best_iter() const { return best_iter_; }
    const std::vector<double>& values() const { return wmv_; }

private:
    int window_, patience_;
    std::vector<HsiCube> ring_;
    int count_ = 0;
    double best_ = 0.0;
    int best_iter_ = -1;
    int since_best_ = 0;
    std::vector<double> wmv_;
};

// Dictionary learned from the observation: patches that are fully observed
// (falling back to all patches when too few are).
DictLearnResult learn_dictionary(const HsiCube& y, const MaskCube& M, const SolverConfig& cfg);
PatchLayout solver_layout(const HsiCube& y, const SolverConfig& cfg);

SolveResult run_lrs_pnp(const HsiCube& y, const MaskCube& M, const Dictionary& phi, const SolverConfig& cfg,
                        const HsiCube* truth = nullptr);
SolveResult run_lrs_pnp_dip(const HsiCube& y, const MaskCube& M, const Dictionary& phi, Network& net,
                            const SolverConfig& cfg, const HsiCube* truth = nullptr);
// Dispatches on cfg.branch; the DIP branch builds its network from cfg.seed.
SolveResult solve(const HsiCube& y, const MaskCube& M, const Dictionary& phi, const SolverConfig& cfg,
                  const HsiCube* truth = nullptr);

nlohmann::json report_json(const SolverConfig& cfg, const SolveResult& r);

}  // namespace hsi
