#include "support.hpp"

#include "hsinpaint/errors.hpp"
#include "hsinpaint/solver.hpp"

#include <doctest.h>

using namespace hsi;
using hsitest::Gen;

namespace {

struct Instance {
    HsiCube y;
    MaskCube M;
    Dictionary phi;
    PatchLayout layout;
    SolverState s;
};

Instance random_instance(Gen& g, const SolverConfig& cfg, int rows = 4, int cols = 5, int bands = 2) {
    Instance in;
    in.M = g.mask(rows, cols, bands, 0.3);
    in.y = apply_mask(g.cube(rows, cols, bands), in.M);
    in.phi = Dictionary{g.unit_columns(Eigen::Index(cfg.patch_size) * cfg.patch_size, 5)};
    in.layout = solver_layout(in.y, cfg);
    in.s = init_state(in.y, in.phi, in.layout, cfg);
    in.s.u = g.cube(rows, cols, bands);
    in.s.alpha = g.matrix(in.s.alpha.rows(), in.s.alpha.cols());
    in.s.lambda1 = g.matrix(in.s.lambda1.rows(), in.s.lambda1.cols());
    in.s.lambda2.data = g.vector(in.y.size());
    in.s.mu1 = g.uniform(0.2, 2.0);
    in.s.mu2 = g.uniform(0.2, 2.0);
    return in;
}

// Dense normal equations of the x-subproblem, one band at a time.
Eigen::VectorXd dense_x_oracle(const Instance& in, const SolverConfig& cfg) {
    const HsiCube& y = in.y;
    const int n = in.layout.count();
    const Eigen::VectorXd m = in.M.as_real();
    Eigen::VectorXd x(y.size());
    for (int b = 0; b < y.bands; ++b) {
        const Eigen::Index P = y.pixels(), off = Eigen::Index(b) * P;
        Eigen::MatrixXd H = cfg.gamma * Eigen::MatrixXd(m.segment(off, P).asDiagonal());
        H.diagonal().array() += in.s.mu2;
        Eigen::VectorXd rhs = cfg.gamma * m.segment(off, P).cwiseProduct(y.data.segment(off, P)) +
                              in.s.mu2 * in.s.u.data.segment(off, P) - in.s.lambda2.data.segment(off, P);
        int i = 0;
        for (int r0 : in.layout.row_starts)
            for (int c0 : in.layout.col_starts) {
                Eigen::MatrixXd S = hsitest::selection_matrix(y.rows, y.cols, r0, c0, cfg.patch_size, cfg.patch_size);
                const Eigen::Index col = Eigen::Index(b) * n + i++;
                H += cfg.w_s * in.s.mu1 * S.transpose() * S;
                rhs += cfg.w_s * S.transpose() *
                       (in.s.mu1 * in.phi.atoms * in.s.alpha.col(col) - in.s.lambda1.col(col));
            }
        x.segment(off, P) = H.ldlt().solve(rhs);
    }
    return x;
}

LyapunovState lstate(double x, double l1, double l2, double mu1, double mu2) {
    LyapunovState s{HsiCube(1, 1, 1, x), Eigen::MatrixXd::Constant(1, 1, l1), HsiCube(1, 1, 1, l2), mu1, mu2};
    return s;
}

}  // namespace

TEST_SUITE("solver") {

TEST_CASE("x-update matches a dense normal-equation solve (property)") {
    Gen g(81);
    for (int t = 0; t < 15; ++t) {
        SolverConfig cfg;
        cfg.gamma = g.uniform(0.0, 2.0);
        cfg.w_s = g.integer(0, 1) ? g.uniform(0.1, 2.0) : 0.0;
        cfg.patch_size = g.integer(1, 3);
        Instance in = random_instance(g, cfg);
        HsiCube x = x_update(in.s, in.y, in.M, in.phi, in.layout, cfg);
        CHECK((x.data - dense_x_oracle(in, cfg)).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("x-update limiting cases") {
    Gen g(82);
    SolverConfig cfg;
    Instance in = random_instance(g, cfg);
    // gamma = 0 and no sparse term: x = u - lambda2 / mu2.
    cfg.gamma = 0.0;
    cfg.w_s = 0.0;
    HsiCube x = x_update(in.s, in.y, in.M, in.phi, in.layout, cfg);
    CHECK((x.data - (in.s.u.data - in.s.lambda2.data / in.s.mu2)).cwiseAbs().maxCoeff() < 1e-12);
    // Vanishing penalties with a full mask return the observation.
    cfg.gamma = 1.0;
    cfg.w_s = 1.0;
    in.M = MaskCube(in.y.rows, in.y.cols, in.y.bands, 1);
    in.s.mu1 = in.s.mu2 = 1e-10;
    in.s.lambda1.setZero();
    in.s.lambda2.data.setZero();
    x = x_update(in.s, in.y, in.M, in.phi, in.layout, cfg);
    CHECK((x.data - in.y.data).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("multiplier updates") {
    Gen g(83);
    SolverConfig cfg;
    cfg.patch_size = 1;
    Instance in = random_instance(g, cfg);
    // x = u and P_i x = phi alpha_i leave both multipliers unchanged.
    in.s.x = in.s.u;
    in.phi.atoms = Eigen::MatrixXd::Ones(1, 1);
    in.s.alpha = extract_all_patches(in.s.x, in.layout);
    Eigen::MatrixXd l1 = in.s.lambda1;
    Eigen::VectorXd l2 = in.s.lambda2.data;
    multiplier_update(in.s, in.phi, in.layout, cfg);
    CHECK(in.s.lambda1 == l1);
    CHECK(in.s.lambda2.data == l2);

    // Scalar instance: x - u = 0.4, mu2 = 0.5.
    SolverState s;
    s.x = HsiCube(1, 1, 1, 0.9);
    s.u = HsiCube(1, 1, 1, 0.5);
    s.lambda2 = HsiCube(1, 1, 1, 0.0);
    s.mu2 = 0.5;
    cfg.w_s = 0.0;
    multiplier_update(s, in.phi, in.layout, cfg);
    CHECK(s.lambda2.data[0] == doctest::Approx(0.2));
}

TEST_CASE("penalty schedule and SVT threshold") {
    SolverConfig cfg;
    SolverState s;
    s.mu1 = 0.5;
    s.mu2 = 0.5;
    for (int i = 0; i < 10; ++i) penalty_update(s, cfg);
    CHECK(s.mu1 == doctest::Approx(0.5 * std::pow(1.05, 10)).epsilon(1e-14));
    cfg.theory_mode = true;
    const double mu = s.mu2;
    penalty_update(s, cfg);
    CHECK(s.mu2 == mu);
    const double tau = svt_threshold(s, cfg);
    s.mu2 *= 2.0;
    CHECK(svt_threshold(s, cfg) == doctest::Approx(tau / 2));
}

TEST_CASE("Lyapunov proxy oracles") {
    std::vector<LyapunovState> same(5, lstate(0.3, 0.1, 0.2, 0.5, 0.5));
    for (double h : lyapunov_proxy(same)) CHECK(h == 0.0);
    // 2 (1 - 0.5)^2 + 0.2^2 / 0.5^2 + (1 - 0.4)^2 / 2^2 = 0.5 + 0.16 + 0.09
    auto h = lyapunov_proxy({lstate(1.0, 0.2, 1.0, 0.5, 2.0), lstate(0.5, 0.0, 0.4, 0.5, 2.0)});
    CHECK(h[0] == doctest::Approx(0.75));
    CHECK(h[1] == 0.0);
    CHECK(nonincreasing_fraction({3.0, 2.0, 2.5, 1.0, 0.0}) == doctest::Approx(0.75));
}

TEST_CASE("WMV early stopping cases") {
    HsiCube c(2, 2, 1, 0.5);
    auto flat = wmv_early_stop(std::vector<HsiCube>(40, c), 5, 10);
    CHECK(flat.stop);
    CHECK(flat.best_iter == 4);
    CHECK(flat.stop_iter == 14);
    CHECK(flat.wmv.front() == 0.0);

    std::vector<HsiCube> seq;
    for (int k = 0; k < 90; ++k) {
        double amp = k < 40 ? 0.01 : k < 50 ? 1.0 : 0.05;
        HsiCube x = c;
        x.data.array() += (k % 2 ? amp : -amp);
        seq.push_back(x);
    }
    auto spike = wmv_early_stop(seq, 5, 30);
    CHECK(spike.stop);
    CHECK(spike.best_iter < 40);

    auto shorter = wmv_early_stop(std::vector<HsiCube>(3, c), 5, 10);
    CHECK_FALSE(shorter.stop);
    CHECK(shorter.best_iter == -1);
    CHECK(shorter.wmv.empty());
    CHECK_THROWS_AS(WmvMonitor(1, 5), Error);
}

TEST_CASE("a frozen identity network makes the DIP u-step the identity") {
    Gen g(84);
    LayerSpec s;
    s.kind = LayerKind::Conv2d;
    s.in_ch = 3;
    s.out_ch = 3;
    s.kernel = 1;
    Network net = build_network({s}, 3, 4, 4, 0, false);
    net.layers[0].weight.setZero();
    for (int i = 0; i < 3; ++i) net.layers[0].weight[i * 3 + i] = 1.0;
    SolverConfig cfg;
    cfg.dip_lr = 0.0;
    HsiCube z = g.cube(4, 4, 3), y = g.cube(4, 4, 3);
    MaskCube M = g.mask(4, 4, 3, 0.2);
    auto [u, loss] = dip_u_update(net, z, y, M, cfg, 0.5);
    CHECK(u.data == z.data);
    CHECK(std::isfinite(loss));
}

TEST_CASE("defaults echo the documented hyperparameters") {
    auto j = config_to_json(SolverConfig{});
    CHECK(j["gamma"] == 0.5);
    CHECK(j["w_lr"] == 1.0);
    CHECK(j["w_s"] == 1.0);
    CHECK(j["mu1"] == 0.5);
    CHECK(j["mu2"] == 0.5);
    CHECK(j["lambda1_init"] == 0.0);
    CHECK(j["noise_sigma"] == 0.12);
    CHECK(j["dip_lr"] == 0.1);
    CHECK(j["lipschitz_L"] == 1.0);
    CHECK(j["pnp_iters"] == 50);
    CHECK(j["max_outer_iters"] == 200);
    CHECK(j["branch"] == "svt");
}

TEST_CASE("config JSON round trip and validation") {
    SolverConfig a;
    a.gamma = 0.7;
    a.branch = Branch::Dip;
    a.dip_widths = {4, 8};
    a.dip_levels = 1;
    SolverConfig b;
    config_from_json(config_to_json(a), b);
    CHECK(config_to_json(b) == config_to_json(a));
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"gama", 1.0}}, b), Error);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"gamma", "x"}}, b), Error);
    SolverConfig bad;
    bad.mu1 = 0.0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = SolverConfig{};
    bad.rho2 = 0.9;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("near-identity problem") {
    HsiCube truth = synth_lowrank_cube(6, 6, 4, 2, 3);
    MaskCube M(6, 6, 4, 1);
    SolverConfig cfg;
    cfg.max_outer_iters = 5;
    auto d = learn_dictionary(truth, M, cfg);
    // Without regularisation the observation is a fixed point.
    SolverConfig plain = cfg;
    plain.w_lr = 0.0;
    plain.w_s = 0.0;
    auto exact = run_lrs_pnp(truth, M, d.dict, plain, &truth);
    CHECK(exact.quality->mpsnr >= mpsnr(truth, truth) - 1.0);
    // With the default weights the shrinkage bias stays small.
    auto r = run_lrs_pnp(truth, M, d.dict, cfg, &truth);
    CHECK(r.trace.rows.size() == 5);
    CHECK(r.quality->mpsnr >= 30.0);
    for (const auto& row : r.trace.rows) {
        CHECK(std::isfinite(row.dx));
        CHECK(std::isfinite(row.objective));
        CHECK(row.lyapunov.has_value());
    }
    auto csv = r.trace.to_csv();
    CHECK(csv.rfind("iter,dx,dl1,dl2,objective,mpsnr,lyapunov_proxy,dip_loss\n", 0) == 0);
}

TEST_CASE("DIP branch: zero network runs, sabotaged network is refused") {
    HsiCube truth = synth_lowrank_cube(4, 4, 3, 1, 5);
    MaskCube M = make_mask(4, 4, 3, MaskKind::RandomPixels, 0.25, 1);
    HsiCube y = apply_mask(truth, M);
    SolverConfig cfg;
    cfg.max_outer_iters = 4;
    cfg.patch_size = 2;
    cfg.n_atoms = 4;
    cfg.branch = Branch::Dip;
    auto d = learn_dictionary(y, M, cfg);
    Network net = build_network(dip_architecture(3, {4, 4}, 1), 3, 4, 4, 1);
    Network zero = net;
    for (auto& l : zero.layers) l.weight.setZero();
    cfg.dip_lr = 0.0;
    auto r = run_lrs_pnp_dip(y, M, d.dict, zero, cfg);
    CHECK(r.x.finite());
    CHECK(r.trace.rows.size() == 4);
    for (const auto& row : r.trace.rows) CHECK(row.dip_loss.has_value());

    net.layers[0].weight *= 3.0;
    try {
        run_lrs_pnp_dip(y, M, d.dict, net, cfg);
        FAIL("expected a certification refusal");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Certification);
    }
}

}  // TEST_SUITE
