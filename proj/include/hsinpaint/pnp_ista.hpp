#pragma once

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace hsi {

// A linear (or at least non-expansive) map on code matrices.
using CodeDenoiser = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

struct PnpIstaConfig {
    int max_iters = 50;
    double eta = 0.0;  // <= 0 selects 1 / beta
    double tol = 1e-6;
    int burn_in = 5;
};

// mu1 * Phi^T (Phi a - z)
Eigen::MatrixXd grad_f(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& z, const Eigen::MatrixXd& alpha,
                       double mu1);

// beta = mu1 * sigma_max(Phi)^2 by power iteration on Phi^T Phi.
double beta_smoothness(const Eigen::MatrixXd& phi, double mu1, int iters = 500);

// mu1 * sigma_min(Phi)^2 when Phi has full column rank, else 0.
double strong_convexity(const Eigen::MatrixXd& phi, double mu1);

struct PnpIstaResult {
    Eigen::MatrixXd alpha;
    std::vector<double> residual;  // ||a^{k+1} - a^k|| per iteration
    int iterations = 0;
    bool converged = false;
    int monotonicity_violations = 0;  // residual increases after burn-in
    double eta = 0.0;
    double beta = 0.0;
    double rho = 0.0;  // strong-convexity modulus
    bool rho_exceeds_half_beta = false;
};

// alpha <- D(alpha - eta * grad_f(alpha)). `warm` seeds the iteration.
PnpIstaResult pnp_ista_solve(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& z, const CodeDenoiser& denoiser,
                             double mu1, const PnpIstaConfig& cfg, const Eigen::MatrixXd& warm = {},
                             double beta_hint = -1.0);

}  // namespace hsi
