#include "hsinpaint/denoise.hpp"

#include "hsinpaint/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <random>

namespace hsi {

Eigen::MatrixXd AveragedDenoiser::matrix() const {
    return (1.0 - theta) * Eigen::MatrixXd::Identity(W.rows(), W.cols()) + theta * W;
}

Eigen::MatrixXd AveragedDenoiser::apply_rows(const Eigen::MatrixXd& X) const {
    if (X.cols() != W.rows()) throw shape_error("denoiser: signal length mismatch");
    // W is symmetric, so X W^T = X W.
    return (1.0 - theta) * X + theta * (X * W);
}

Eigen::MatrixXd nlm_weights(const Eigen::MatrixXd& guide, int grid_rows, int grid_cols, const NlmConfig& cfg) {
    if (!(cfg.h > 0.0)) throw usage_error("nlm: bandwidth h must be positive");
    if (cfg.patch_radius < 0 || cfg.search_radius < 0) throw usage_error("nlm: radii must be non-negative");
    const int n = grid_rows * grid_cols;
    if (grid_rows <= 0 || grid_cols <= 0 || guide.cols() != n) throw shape_error("nlm: guide does not match grid");

    const int pr = cfg.patch_radius, side = 2 * pr + 1;
    const Eigen::Index ch = guide.rows();
    Eigen::MatrixXd feat(ch * side * side, n);
    for (int r = 0; r < grid_rows; ++r)
        for (int c = 0; c < grid_cols; ++c) {
            int k = 0;
            for (int dr = -pr; dr <= pr; ++dr)
                for (int dc = -pr; dc <= pr; ++dc) {
                    int rr = std::clamp(r + dr, 0, grid_rows - 1), cc = std::clamp(c + dc, 0, grid_cols - 1);
                    feat.col(r * grid_cols + c).segment(ch * k++, ch) = guide.col(rr * grid_cols + cc);
                }
        }

    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n, n);
    const double h2 = cfg.h * cfg.h;
    for (int i = 0; i < n; ++i) {
        int ri = i / grid_cols, ci = i % grid_cols;
        for (int j = 0; j < n; ++j) {
            int rj = j / grid_cols, cj = j % grid_cols;
            if (std::max(std::abs(ri - rj), std::abs(ci - cj)) > cfg.search_radius) continue;
            W(i, j) = std::exp(-(feat.col(i) - feat.col(j)).squaredNorm() / h2);
        }
    }
    return W;
}

SinkhornResult sinkhorn_symmetrize(const Eigen::MatrixXd& Win, int iters, double tol) {
    const Eigen::Index n = Win.rows();
    if (Win.cols() != n || n == 0) throw shape_error("sinkhorn: matrix must be square and non-empty");
    if ((Win.array() < 0.0).any()) throw usage_error("sinkhorn: entries must be non-negative");
    if ((Win.diagonal().array() <= 0.0).any()) throw usage_error("sinkhorn: diagonal must be strictly positive");
    // The symmetric scaling needs a symmetric kernel; NLM affinities already are.
    const Eigen::MatrixXd W = 0.5 * (Win + Win.transpose());

    Eigen::VectorXd d = Eigen::VectorXd::Ones(n);
    SinkhornResult r;
    for (int k = 0; k < iters; ++k) {
        Eigen::VectorXd s = d.asDiagonal() * (W * d);  // row sums of diag(d) W diag(d)
        r.iterations = k + 1;
        if ((s.array() - 1.0).abs().maxCoeff() <= tol) break;
        d = (d.array() / (W * d).array()).sqrt();
    }
    Eigen::MatrixXd S = d.asDiagonal() * W * d.asDiagonal();
    r.W = 0.5 * (S + S.transpose());
    r.residual = std::max((r.W.rowwise().sum().array() - 1.0).abs().maxCoeff(),
                          (r.W.colwise().sum().array() - 1.0).abs().maxCoeff());
    r.converged = r.residual <= tol;
    return r;
}

AveragedDenoiser make_averaged_denoiser(const Eigen::MatrixXd& W, double theta) {
    if (!(theta > 0.0 && theta < 1.0)) throw usage_error("denoiser: theta must lie in (0,1)");
    if (W.rows() != W.cols()) throw shape_error("denoiser: weight matrix must be square");
    return AveragedDenoiser{W, theta};
}

AveragedDenoiser build_nlm_denoiser(const Eigen::MatrixXd& guide, int grid_rows, int grid_cols, const NlmConfig& cfg,
                                    int sinkhorn_iters) {
    auto s = sinkhorn_symmetrize(nlm_weights(guide, grid_rows, grid_cols, cfg), sinkhorn_iters, 1e-10);
    return make_averaged_denoiser(s.W, cfg.theta);
}

Eigen::VectorXd apply_denoiser(const AveragedDenoiser& D, const Eigen::VectorXd& v) {
    if (v.size() != D.size()) throw shape_error("denoiser: signal length mismatch");
    return (1.0 - D.theta) * v + D.theta * (D.W * v);
}

double power_spectral_norm(const Eigen::MatrixXd& M, int iters, std::uint64_t seed) {
    if (M.size() == 0) return 0.0;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::VectorXd v(M.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = g(rng);
    v.normalize();
    double sigma = 0.0;
    for (int k = 0; k < iters; ++k) {
        Eigen::VectorXd w = M.transpose() * (M * v);
        double nw = w.norm();
        if (nw == 0.0) return 0.0;
        v = w / nw;
        sigma = (M * v).norm();
    }
    return sigma;
}

NonexpansiveReport certify_nonexpansive(const Eigen::MatrixXd& M, double theta, int trials, std::uint64_t seed) {
    if (trials < 1) throw usage_error("certify: trials must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    NonexpansiveReport r;
    r.theta = theta;
    const Eigen::Index n = M.cols();
    for (int t = 0; t < trials; ++t) {
        Eigen::VectorXd a(n), b(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            a[i] = g(rng);
            b[i] = g(rng);
        }
        double den = (a - b).norm();
        if (den == 0.0) continue;
        r.max_ratio = std::max(r.max_ratio, (M * (a - b)).norm() / den);
    }
    r.spectral_norm = power_spectral_norm(M, 500, seed ^ 0x9e3779b97f4a7c15ULL);
    r.pass = r.max_ratio <= 1.0 + 1e-6 && r.spectral_norm <= 1.0 + 1e-6;
    return r;
}

NonexpansiveReport certify_nonexpansive(const AveragedDenoiser& D, int trials, std::uint64_t seed) {
    return certify_nonexpansive(D.matrix(), D.theta, trials, seed);
}

std::string NonexpansiveReport::to_json() const {
    nlohmann::json j = {{"max_ratio", max_ratio}, {"spectral_norm", spectral_norm}, {"theta", theta}, {"pass", pass}};
    return j.dump(2);
}

}  // namespace hsi
