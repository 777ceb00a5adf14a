#include "hsinpaint/pnp_ista.hpp"

#include "hsinpaint/errors.hpp"

#include <cmath>
#include <random>
#include <string>

namespace hsi {

Eigen::MatrixXd grad_f(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& z, const Eigen::MatrixXd& alpha,
                       double mu1) {
    if (z.rows() != phi.rows() || alpha.rows() != phi.cols() || alpha.cols() != z.cols())
        throw shape_error("grad_f: dimension mismatch");
    return mu1 * (phi.transpose() * (phi * alpha - z));
}

double beta_smoothness(const Eigen::MatrixXd& phi, double mu1, int iters) {
    if (phi.size() == 0) return 0.0;
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::VectorXd v(phi.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = g(rng);
    v.normalize();
    double lam = 0.0;
    for (int k = 0; k < iters; ++k) {
        Eigen::VectorXd w = phi.transpose() * (phi * v);
        double nw = w.norm();
        if (nw == 0.0) return 0.0;
        double prev = lam;
        lam = v.dot(w);
        v = w / nw;
        if (k > 10 && std::abs(lam - prev) <= 1e-15 * lam) break;
    }
    return mu1 * lam;
}

double strong_convexity(const Eigen::MatrixXd& phi, double mu1) {
    if (phi.cols() > phi.rows()) return 0.0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(phi);
    const auto& s = svd.singularValues();
    if (s.size() == 0) return 0.0;
    double smin = s[s.size() - 1];
    if (smin <= 1e-12 * s[0]) return 0.0;
    return mu1 * smin * smin;
}

PnpIstaResult pnp_ista_solve(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& z, const CodeDenoiser& denoiser,
                             double mu1, const PnpIstaConfig& cfg, const Eigen::MatrixXd& warm, double beta_hint) {
    if (z.rows() != phi.rows()) throw shape_error("pnp-ista: signal length does not match atom length");
    if (cfg.max_iters < 1) throw usage_error("pnp-ista: max_iters must be >= 1");
    PnpIstaResult r;
    r.beta = beta_hint > 0 ? beta_hint : beta_smoothness(phi, mu1);
    r.eta = cfg.eta > 0 ? cfg.eta : (r.beta > 0 ? 1.0 / r.beta : 1.0);
    if (r.eta * r.beta > 1.0 + 1e-12) throw usage_error("pnp-ista: step violates eta * beta <= 1");
    r.rho = strong_convexity(phi, mu1);
    r.rho_exceeds_half_beta = r.rho > 0.5 * r.beta;

    Eigen::MatrixXd a = warm.size() ? warm : Eigen::MatrixXd::Zero(phi.cols(), z.cols());
    if (a.rows() != phi.cols() || a.cols() != z.cols()) throw shape_error("pnp-ista: warm start shape");
    const Eigen::MatrixXd G = phi.transpose() * phi, c = phi.transpose() * z;
    r.residual.reserve(std::size_t(cfg.max_iters));
    for (int k = 0; k < cfg.max_iters; ++k) {
        Eigen::MatrixXd next = denoiser(a - r.eta * mu1 * (G * a - c));
        if (!next.allFinite())
            throw numerical_error("pnp-ista: non-finite iterate at iteration " + std::to_string(k + 1));
        double res = (next - a).norm();
        double scale = 1.0 + a.norm();
        r.residual.push_back(res);
        r.iterations = k + 1;
        // Increases at round-off level are not counted.
        if (k > cfg.burn_in && res > r.residual[std::size_t(k) - 1] * (1.0 + 1e-12) + 1e-13 * scale)
            ++r.monotonicity_violations;
        a = std::move(next);
        if (res <= cfg.tol * scale) {
            r.converged = true;
            break;
        }
    }
    r.alpha = std::move(a);
    return r;
}

}  // namespace hsi
