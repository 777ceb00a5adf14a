#include "hsinpaint/solver.hpp"

#include "hsinpaint/errors.hpp"
#include "hsinpaint/lowrank.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <random>
#include <sstream>

namespace hsi {

using nlohmann::json;

std::string branch_name(Branch b) { return b == Branch::Svt ? "svt" : "dip"; }

Branch parse_branch(const std::string& s) {
    if (s == "svt") return Branch::Svt;
    if (s == "dip") return Branch::Dip;
    throw usage_error("branch must be 'svt' or 'dip', got '" + s + "'");
}

// ---------------------------------------------------------------- config

void SolverConfig::validate() const {
    auto req = [](bool ok, const char* m) {
        if (!ok) throw usage_error(m);
    };
    req(gamma >= 0 && w_lr >= 0 && w_s >= 0, "gamma, w_lr and w_s must be non-negative");
    req(mu1 > 0 && mu2 > 0, "mu1 and mu2 must be positive");
    req(rho1 >= 1 && rho2 >= 1, "rho1 and rho2 must be >= 1");
    req(max_outer_iters >= 1, "max_outer_iters must be >= 1");
    req(wmv_window >= 2, "wmv_window must be >= 2");
    req(wmv_patience >= 1, "wmv_patience must be >= 1");
    req(lyapunov_window >= 0, "lyapunov_window must be >= 0");
    req(patch_size >= 0 && patch_stride >= 1, "patch_size must be >= 0 and patch_stride >= 1");
    req(n_atoms >= 1 && dict_epochs >= 0, "n_atoms must be >= 1 and dict_epochs >= 0");
    req(ista_lambda >= 0, "ista_lambda must be non-negative");
    req(pnp.max_iters >= 1 && pnp.tol >= 0, "pnp iterations must be >= 1 and tolerance >= 0");
    req(nlm.h > 0 && nlm.theta > 0 && nlm.theta < 1, "nlm h must be positive and theta in (0,1)");
    req(nlm.patch_radius >= 0 && nlm.search_radius >= 0, "nlm radii must be non-negative");
    req(denoiser_rebuild_every >= 1, "denoiser_rebuild_every must be >= 1");
    req(lr_scale >= 0, "lr_scale must be non-negative");
    req(dip_lr >= 0 && dip_steps_per_iter >= 1, "dip_lr must be >= 0 and dip_steps_per_iter >= 1");
    req(dip_input_noise >= 0, "dip_input_noise must be non-negative");
    req(lipschitz_L > 0, "lipschitz_L must be positive");
    req(!dip_widths.empty() && dip_levels >= 0, "dip_widths must be non-empty");
    req(noise_sigma >= 0, "noise_sigma must be non-negative");
}

json config_to_json(const SolverConfig& c) {
    return json{{"gamma", c.gamma},
                {"w_lr", c.w_lr},
                {"w_s", c.w_s},
                {"mu1", c.mu1},
                {"mu2", c.mu2},
                {"lambda1_init", c.lambda1_init},
                {"lambda2_init", c.lambda2_init},
                {"rho1", c.rho1},
                {"rho2", c.rho2},
                {"theory_mode", c.theory_mode},
                {"max_outer_iters", c.max_outer_iters},
                {"branch", branch_name(c.branch)},
                {"seed", c.seed},
                {"early_stop", c.early_stop},
                {"wmv_window", c.wmv_window},
                {"wmv_patience", c.wmv_patience},
                {"lyapunov_window", c.lyapunov_window},
                {"patch_size", c.patch_size},
                {"patch_stride", c.patch_stride},
                {"n_atoms", c.n_atoms},
                {"dict_epochs", c.dict_epochs},
                {"ista_lambda", c.ista_lambda},
                {"pnp_iters", c.pnp.max_iters},
                {"pnp_eta", c.pnp.eta},
                {"pnp_tol", c.pnp.tol},
                {"nlm_patch_radius", c.nlm.patch_radius},
                {"nlm_search_radius", c.nlm.search_radius},
                {"nlm_h", c.nlm.h},
                {"nlm_theta", c.nlm.theta},
                {"denoiser_rebuild_every", c.denoiser_rebuild_every},
                {"lr_scale", c.lr_scale},
                {"dip_lr", c.dip_lr},
                {"dip_steps_per_iter", c.dip_steps_per_iter},
                {"dip_input_noise", c.dip_input_noise},
                {"dip_prox_term", c.dip_prox_term},
                {"lipschitz_L", c.lipschitz_L},
                {"dip_widths", c.dip_widths},
                {"dip_levels", c.dip_levels},
                {"noise_sigma", c.noise_sigma}};
}

void config_from_json(const json& j, SolverConfig& c) {
    if (!j.is_object()) throw usage_error("config must be a JSON object");
    using Setter = std::function<void(const json&)>;
    auto num = [](double& f) -> Setter { return [&f](const json& v) { f = v.get<double>(); }; };
    auto integer = [](int& f) -> Setter { return [&f](const json& v) { f = v.get<int>(); }; };
    auto flag = [](bool& f) -> Setter { return [&f](const json& v) { f = v.get<bool>(); }; };
    const std::map<std::string, Setter> table = {
        {"gamma", num(c.gamma)},
        {"w_lr", num(c.w_lr)},
        {"w_s", num(c.w_s)},
        {"mu1", num(c.mu1)},
        {"mu2", num(c.mu2)},
        {"lambda1_init", num(c.lambda1_init)},
        {"lambda2_init", num(c.lambda2_init)},
        {"rho1", num(c.rho1)},
        {"rho2", num(c.rho2)},
        {"theory_mode", flag(c.theory_mode)},
        {"max_outer_iters", integer(c.max_outer_iters)},
        {"branch", [&c](const json& v) { c.branch = parse_branch(v.get<std::string>()); }},
        {"seed", [&c](const json& v) { c.seed = v.get<std::uint64_t>(); }},
        {"early_stop", flag(c.early_stop)},
        {"wmv_window", integer(c.wmv_window)},
        {"wmv_patience", integer(c.wmv_patience)},
        {"lyapunov_window", integer(c.lyapunov_window)},
        {"patch_size", integer(c.patch_size)},
        {"patch_stride", integer(c.patch_stride)},
        {"n_atoms", integer(c.n_atoms)},
        {"dict_epochs", integer(c.dict_epochs)},
        {"ista_lambda", num(c.ista_lambda)},
        {"pnp_iters", integer(c.pnp.max_iters)},
        {"pnp_eta", num(c.pnp.eta)},
        {"pnp_tol", num(c.pnp.tol)},
        {"nlm_patch_radius", integer(c.nlm.patch_radius)},
        {"nlm_search_radius", integer(c.nlm.search_radius)},
        {"nlm_h", num(c.nlm.h)},
        {"nlm_theta", num(c.nlm.theta)},
        {"denoiser_rebuild_every", integer(c.denoiser_rebuild_every)},
        {"lr_scale", num(c.lr_scale)},
        {"dip_lr", num(c.dip_lr)},
        {"dip_steps_per_iter", integer(c.dip_steps_per_iter)},
        {"dip_input_noise", num(c.dip_input_noise)},
        {"dip_prox_term", flag(c.dip_prox_term)},
        {"lipschitz_L", num(c.lipschitz_L)},
        {"dip_widths", [&c](const json& v) { c.dip_widths = v.get<std::vector<int>>(); }},
        {"dip_levels", integer(c.dip_levels)},
        {"noise_sigma", num(c.noise_sigma)},
    };
    for (auto it = j.begin(); it != j.end(); ++it) {
        auto f = table.find(it.key());
        if (f == table.end()) throw usage_error("unknown config key '" + it.key() + "'");
        try {
            f->second(it.value());
        } catch (const json::exception& e) {
            throw usage_error("bad value for config key '" + it.key() + "': " + e.what());
        }
    }
}

// ---------------------------------------------------------------- ADMM blocks

PatchLayout solver_layout(const HsiCube& y, const SolverConfig& cfg) {
    if (cfg.patch_size == 0) return full_plane_layout(y.rows, y.cols);
    if (cfg.patch_size > y.rows || cfg.patch_size > y.cols)
        throw usage_error("patch_size exceeds the spatial extent");
    return make_layout(y.rows, y.cols, cfg.patch_size, cfg.patch_size, cfg.patch_stride, cfg.patch_stride);
}

SolverState init_state(const HsiCube& y, const Dictionary& phi, const PatchLayout& layout, const SolverConfig& cfg) {
    if (phi.atom_len() != layout.patch_len()) throw shape_error("dictionary atom length does not match patch size");
    SolverState s;
    s.x = y;
    s.u = y;
    const Eigen::Index np = Eigen::Index(layout.count()) * y.bands;
    s.alpha = Eigen::MatrixXd::Zero(phi.n_atoms(), np);
    s.lambda1 = Eigen::MatrixXd::Constant(layout.patch_len(), np, cfg.lambda1_init);
    s.lambda2 = HsiCube(y.rows, y.cols, y.bands, cfg.lambda2_init);
    s.mu1 = cfg.mu1;
    s.mu2 = cfg.mu2;
    return s;
}

HsiCube x_update(const SolverState& s, const HsiCube& y, const MaskCube& M, const Dictionary& phi,
                 const PatchLayout& layout, const SolverConfig& cfg) {
    if (!M.same_shape(y) || !s.x.same_shape(y)) throw shape_error("x-update: shape mismatch");
    const Eigen::VectorXd m = M.as_real();
    Eigen::VectorXd num = cfg.gamma * m.cwiseProduct(y.data) + s.mu2 * s.u.data - s.lambda2.data;
    Eigen::VectorXd den = cfg.gamma * m + Eigen::VectorXd::Constant(y.size(), s.mu2);
    if (cfg.w_s > 0) {
        HsiCube rec = assemble_all_patches(phi.atoms * s.alpha, layout, y.bands);
        HsiCube lam = assemble_all_patches(s.lambda1, layout, y.bands);
        RowMatrix cnt = overlap_counts(layout);
        num += cfg.w_s * (s.mu1 * rec.data - lam.data);
        for (int b = 0; b < y.bands; ++b)
            den.segment(Eigen::Index(b) * y.pixels(), y.pixels()) +=
                cfg.w_s * s.mu1 * Eigen::Map<const Eigen::VectorXd>(cnt.data(), y.pixels());
    }
    if ((den.array() <= 0.0).any()) throw numerical_error("x-update: zero denominator");
    HsiCube x = y;
    x.data = num.cwiseQuotient(den);
    return x;
}

void multiplier_update(SolverState& s, const Dictionary& phi, const PatchLayout& layout, const SolverConfig& cfg) {
    if (cfg.w_s > 0) s.lambda1 += s.mu1 * (extract_all_patches(s.x, layout) - phi.atoms * s.alpha);
    s.lambda2.data += s.mu2 * (s.x.data - s.u.data);
}

void penalty_update(SolverState& s, const SolverConfig& cfg) {
    s.mu1 *= cfg.effective_rho1();
    s.mu2 *= cfg.effective_rho2();
}

double svt_threshold(const SolverState& s, const SolverConfig& cfg) { return cfg.lr_scale * cfg.w_lr / s.mu2; }

double objective_value(const HsiCube& x, const Eigen::MatrixXd& alpha, const HsiCube& y, const MaskCube& M,
                       const SolverConfig& cfg) {
    Eigen::VectorXd r = M.as_real().cwiseProduct(x.data) - y.data;
    double f = 0.5 * cfg.gamma * r.squaredNorm();
    if (cfg.w_lr > 0) f += cfg.lr_scale * cfg.w_lr * nuclear_norm(x);
    if (cfg.w_s > 0) f += cfg.w_s * cfg.ista_lambda * alpha.cwiseAbs().sum();
    return f;
}

AveragedDenoiser patch_domain_denoiser(const Eigen::MatrixXd& recon, const PatchLayout& layout, int bands,
                                       const SolverConfig& cfg) {
    const int n = layout.count();
    const Eigen::Index plen = layout.patch_len();
    if (recon.rows() != plen || recon.cols() != Eigen::Index(n) * bands) throw shape_error("denoiser guide shape");
    // Node feature: the patch of every band at this position.
    Eigen::MatrixXd guide(plen * bands, n);
    for (int b = 0; b < bands; ++b) guide.middleRows(plen * b, plen) = recon.middleCols(Eigen::Index(b) * n, n);
    NlmConfig nc = cfg.nlm;
    nc.h = cfg.nlm.h * std::sqrt(double(guide.rows()));
    return build_nlm_denoiser(guide, layout.grid_rows(), layout.grid_cols(), nc);
}

CodeDenoiser code_denoiser(const AveragedDenoiser& D, int bands) {
    return [D, bands](const Eigen::MatrixXd& A) {
        const Eigen::Index n = D.size();
        if (A.cols() != n * bands) throw shape_error("code denoiser: column count mismatch");
        Eigen::MatrixXd out(A.rows(), A.cols());
        for (int b = 0; b < bands; ++b) out.middleCols(b * n, n) = D.apply_rows(A.middleCols(b * n, n));
        return out;
    };
}

std::pair<HsiCube, double> dip_u_update(Network& net, const HsiCube& z, const HsiCube& y, const MaskCube& M,
                                        const SolverConfig& cfg, double mu2) {
    HsiCube mc(M.rows, M.cols, M.bands);
    mc.data = M.as_real();
    Tensor tz = to_tensor(z);
    auto tr = dip_train_steps(net, tz, to_tensor(y), to_tensor(mc), cfg.dip_steps_per_iter, cfg.dip_lr,
                              cfg.dip_prox_term ? mu2 : 0.0);
    return {to_cube(forward(net, tz), y.lo, y.hi), tr.loss.back()};
}

// ---------------------------------------------------------------- diagnostics

std::vector<double> lyapunov_proxy(const std::vector<LyapunovState>& w) {
    std::vector<double> h;
    if (w.empty()) return h;
    const auto& K = w.back();
    h.reserve(w.size());
    for (const auto& s : w) {
        double v = 2.0 * (s.x.data - K.x.data).squaredNorm();
        if (s.lambda1.size()) v += (s.lambda1 - K.lambda1).squaredNorm() / (s.mu1 * s.mu1);
        v += (s.lambda2.data - K.lambda2.data).squaredNorm() / (s.mu2 * s.mu2);
        h.push_back(v);
    }
    return h;
}

double nonincreasing_fraction(const std::vector<double>& h, double rel_slack) {
    if (h.size() < 2) return 1.0;
    int ok = 0;
    for (std::size_t k = 0; k + 1 < h.size(); ++k)
        if (h[k + 1] <= h[k] * (1.0 + rel_slack)) ++ok;
    return double(ok) / double(h.size() - 1);
}

WmvMonitor::WmvMonitor(int window, int patience) : window_(window), patience_(patience) {
    if (window < 2) throw usage_error("wmv: window must be >= 2");
    if (patience < 1) throw usage_error("wmv: patience must be >= 1");
}

bool WmvMonitor::push(const HsiCube& x) {
    if (int(ring_.size()) < window_)
        ring_.push_back(x);
    else
        ring_[std::size_t(count_ % window_)] = x;
    ++count_;
    if (count_ < window_) return false;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(x.size());
    for (const auto& r : ring_) mean += r.data;
    mean /= double(window_);
    double var = 0.0;
    for (const auto& r : ring_) var += (r.data - mean).squaredNorm();
    var /= double(window_) * double(x.size());
    wmv_.push_back(var);
    const int it = count_ - 1;
    if (best_iter_ < 0 || var < best_) {
        best_ = var;
        best_iter_ = it;
        since_best_ = 0;
        return false;
    }
    return ++since_best_ >= patience_;
}

WmvDecision wmv_early_stop(const std::vector<HsiCube>& history, int window, int patience) {
    WmvMonitor m(window, patience);
    WmvDecision d;
    for (std::size_t i = 0; i < history.size(); ++i)
        if (m.push(history[i])) {
            d.stop = true;
            d.stop_iter = int(i);
            break;
        }
    d.best_iter = m.best_iter();
    d.wmv = m.values();
    return d;
}

// ---------------------------------------------------------------- drivers

DictLearnResult learn_dictionary(const HsiCube& y, const MaskCube& M, const SolverConfig& cfg) {
    auto layout = solver_layout(y, cfg);
    Eigen::MatrixXd P = extract_all_patches(y, layout);
    HsiCube mc(M.rows, M.cols, M.bands);
    mc.data = M.as_real();
    Eigen::MatrixXd Pm = extract_all_patches(mc, layout);
    std::vector<Eigen::Index> full;
    for (Eigen::Index j = 0; j < P.cols(); ++j)
        if (Pm.col(j).minCoeff() > 0.5) full.push_back(j);
    Eigen::MatrixXd train;
    if (Eigen::Index(full.size()) >= cfg.n_atoms) {
        train.resize(P.rows(), Eigen::Index(full.size()));
        for (std::size_t k = 0; k < full.size(); ++k) train.col(Eigen::Index(k)) = P.col(full[k]);
    } else {
        train = P;
    }
    return online_dictionary_learn(train, cfg.n_atoms, cfg.ista_lambda, cfg.dict_epochs, cfg.seed);
}

static SolveResult run_impl(const HsiCube& y, const MaskCube& M, const Dictionary& phi, Network* net,
                            const SolverConfig& cfg, const HsiCube* truth) {
    cfg.validate();
    if (!y.finite()) throw numerical_error("observation contains non-finite values");
    if (!M.same_shape(y)) throw shape_error("mask shape does not match the observation");
    if (truth && !truth->same_shape(y)) throw shape_error("ground truth shape does not match the observation");
    const PatchLayout layout = solver_layout(y, cfg);
    SolverState s = init_state(y, phi, layout, cfg);
    SolveResult res;
    const bool dip = net != nullptr;
    const bool sparse = cfg.w_s > 0;

    std::mt19937_64 rng(cfg.seed ^ 0xd1b54a32d192ed03ULL);
    std::normal_distribution<double> n01(0.0, 1.0);

    const double sig2 = beta_smoothness(phi.atoms, 1.0);
    res.diag.strong_convexity = strong_convexity(phi.atoms, cfg.mu1);
    res.diag.beta = cfg.mu1 * sig2;
    res.diag.rho_exceeds_half_beta = res.diag.strong_convexity > 0.5 * res.diag.beta;
    res.diag.min_denoiser_margin = 1.0;
    res.diag.objective_input = objective_value(y, s.alpha, y, M, cfg);

    std::optional<AveragedDenoiser> D;
    WmvMonitor wmv(cfg.wmv_window, cfg.wmv_patience);
    HsiCube best_x = s.x;
    std::deque<LyapunovState> lyap;
    const std::size_t lyap_cap =
        cfg.lyapunov_window > 0 ? std::size_t(cfg.lyapunov_window) : std::size_t(cfg.max_outer_iters);
    res.stop_reason = "max_outer_iters";

    for (int k = 0; k < cfg.max_outer_iters; ++k) {
        const HsiCube x_prev = s.x;
        const Eigen::MatrixXd l1_prev = s.lambda1;
        const Eigen::VectorXd l2_prev = s.lambda2.data;

        // alpha-step: PnP-ISTA on z_i = P_i x + lambda1_i / mu1.
        if (sparse) {
            if (!D || k % cfg.denoiser_rebuild_every == 0) {
                Eigen::MatrixXd recon = k == 0 ? extract_all_patches(s.x, layout) : Eigen::MatrixXd(phi.atoms * s.alpha);
                D = patch_domain_denoiser(recon, layout, y.bands, cfg);
                auto cert = certify_nonexpansive(*D, 8, cfg.seed + std::uint64_t(k));
                ++res.diag.denoiser_builds;
                res.diag.min_denoiser_margin = std::min(res.diag.min_denoiser_margin, 1.0 - cert.spectral_norm);
                if (!cert.pass)
                    throw certification_error("denoiser failed non-expansiveness certification at iteration " +
                                              std::to_string(k + 1));
            }
            Eigen::MatrixXd Z = extract_all_patches(s.x, layout) + s.lambda1 / s.mu1;
            auto r = pnp_ista_solve(phi.atoms, Z, code_denoiser(*D, y.bands), s.mu1, cfg.pnp, s.alpha, s.mu1 * sig2);
            s.alpha = std::move(r.alpha);
            res.diag.pnp_monotonicity_violations += r.monotonicity_violations;
        }

        // u-step.
        std::optional<double> dip_loss;
        HsiCube z = s.x;
        z.data += s.lambda2.data / s.mu2;
        if (!dip) {
            s.u = svt(z, svt_threshold(s, cfg));
        } else {
            if (cfg.dip_input_noise > 0)
                for (Eigen::Index i = 0; i < z.data.size(); ++i) z.data[i] += cfg.dip_input_noise * n01(rng);
            auto [u, loss] = dip_u_update(*net, z, y, M, cfg, s.mu2);
            s.u = std::move(u);
            dip_loss = loss;
        }

        // x-step, multipliers, penalties.
        s.x = x_update(s, y, M, phi, layout, cfg);
        multiplier_update(s, phi, layout, cfg);
        if (!s.x.finite() || !s.lambda1.allFinite() || !s.lambda2.finite() || !s.u.finite())
            throw numerical_error("non-finite iterate at outer iteration " + std::to_string(k + 1));

        TraceRow row;
        row.iter = k + 1;
        row.dx = (s.x.data - x_prev.data).norm();
        row.dl1 = (s.lambda1 - l1_prev).norm();
        row.dl2 = (s.lambda2.data - l2_prev).norm();
        row.objective = objective_value(s.x, s.alpha, y, M, cfg);
        if (truth) row.mpsnr = mpsnr(*truth, s.x);
        row.dip_loss = dip_loss;
        res.trace.rows.push_back(row);

        lyap.push_back({s.x, s.lambda1, s.lambda2, s.mu1, s.mu2});
        if (lyap.size() > lyap_cap) lyap.pop_front();

        penalty_update(s, cfg);
        ++s.iter;
        res.iterations = k + 1;

        if (cfg.early_stop) {
            bool stop = wmv.push(s.x);
            if (wmv.best_iter() == k) best_x = s.x;
            if (stop) {
                res.stop_reason = "wmv_early_stop";
                res.best_iter = wmv.best_iter() + 1;
                break;
            }
        }
    }

    auto h = lyapunov_proxy(std::vector<LyapunovState>(lyap.begin(), lyap.end()));
    const std::size_t off = res.trace.rows.size() - h.size();
    for (std::size_t i = 0; i < h.size(); ++i) res.trace.rows[off + i].lyapunov = h[i];

    res.x = res.stop_reason == "wmv_early_stop" ? best_x : s.x;
    res.diag.objective_output = objective_value(res.x, s.alpha, y, M, cfg);
    res.diag.objective_below_input = res.diag.objective_output <= res.diag.objective_input;
    if (truth) res.quality = quality(*truth, res.x);
    return res;
}

SolveResult run_lrs_pnp(const HsiCube& y, const MaskCube& M, const Dictionary& phi, const SolverConfig& cfg,
                        const HsiCube* truth) {
    return run_impl(y, M, phi, nullptr, cfg, truth);
}

SolveResult run_lrs_pnp_dip(const HsiCube& y, const MaskCube& M, const Dictionary& phi, Network& net,
                            const SolverConfig& cfg, const HsiCube* truth) {
    if (net.in_c != y.bands || net.in_h != y.rows || net.in_w != y.cols || net.out_c() != y.bands)
        throw shape_error("network geometry does not match the observation");
    auto cert = certify_lipschitz(net, 50, cfg.seed + 17);
    if (!cert.pass || net.lip_bound() > 1.0 + 1e-12)
        throw certification_error("network failed Lipschitz certification (empirical ratio " +
                                  std::to_string(cert.empirical_ratio) + ", product bound " +
                                  std::to_string(cert.product_bound) + ")");
    auto r = run_impl(y, M, phi, &net, cfg, truth);
    r.diag.lipschitz = certify_lipschitz(net, 50, cfg.seed + 18);
    return r;
}

SolveResult solve(const HsiCube& y, const MaskCube& M, const Dictionary& phi, const SolverConfig& cfg,
                  const HsiCube* truth) {
    if (cfg.branch == Branch::Svt) return run_lrs_pnp(y, M, phi, cfg, truth);
    cfg.validate();
    Network net = build_network(dip_architecture(y.bands, cfg.dip_widths, cfg.dip_levels, cfg.lipschitz_L), y.bands,
                                y.rows, y.cols, cfg.seed);
    return run_lrs_pnp_dip(y, M, phi, net, cfg, truth);
}

// ---------------------------------------------------------------- reporting

static std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string IterTrace::to_csv() const {
    std::ostringstream os;
    os << "iter,dx,dl1,dl2,objective,mpsnr,lyapunov_proxy,dip_loss\n";
    auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
    for (const auto& r : rows)
        os << r.iter << ',' << fmt(r.dx) << ',' << fmt(r.dl1) << ',' << fmt(r.dl2) << ',' << fmt(r.objective) << ','
           << opt(r.mpsnr) << ',' << opt(r.lyapunov) << ',' << opt(r.dip_loss) << '\n';
    return os.str();
}

static json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json report_json(const SolverConfig& cfg, const SolveResult& r) {
    json q = nullptr;
    if (r.quality)
        q = {{"mpsnr", r.quality->mpsnr},
             {"mssim", finite_or_null(r.quality->mssim)},
             {"msam", r.quality->msam},
             {"msam_warning", r.quality->msam_warning}};
    json d = {{"pnp_monotonicity_violations", r.diag.pnp_monotonicity_violations},
              {"strong_convexity", r.diag.strong_convexity},
              {"beta", r.diag.beta},
              {"rho_exceeds_half_beta", r.diag.rho_exceeds_half_beta},
              {"denoiser_builds", r.diag.denoiser_builds},
              {"min_denoiser_margin", r.diag.min_denoiser_margin},
              {"objective_input", r.diag.objective_input},
              {"objective_output", r.diag.objective_output},
              {"objective_below_input", r.diag.objective_below_input}};
    if (r.diag.lipschitz) d["lipschitz"] = json::parse(r.diag.lipschitz->to_json());
    return {{"config", config_to_json(cfg)},
            {"quality", q},
            {"stop_reason", r.stop_reason},
            {"iterations", r.iterations},
            {"best_iter", r.best_iter},
            {"diagnostics", d}};
}

}  // namespace hsi
