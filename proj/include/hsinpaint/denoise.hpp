#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

namespace hsi {

struct NlmConfig {
    int patch_radius = 0;
    int search_radius = 1;
    double h = 0.06;
    double theta = 0.5;
};

// D = (1 - theta) I + theta W with W symmetric and doubly stochastic.
struct AveragedDenoiser {
    Eigen::MatrixXd W;
    double theta = 0.5;

    Eigen::Index size() const { return W.rows(); }
    Eigen::MatrixXd matrix() const;
    // Denoise every row of X (each row is one signal on the grid).
    Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& X) const;
};

// Raw affinities exp(-||p_i - p_j||^2 / h^2) between grid nodes whose
// Chebyshev distance is within the search radius. `guide` holds one column of
// features per node (node index = row * grid_cols + col); the patch around a
// node gathers the features of its (2r+1)^2 neighbourhood, clamped at borders.
Eigen::MatrixXd nlm_weights(const Eigen::MatrixXd& guide, int grid_rows, int grid_cols, const NlmConfig& cfg);

struct SinkhornResult {
    Eigen::MatrixXd W;
    double residual = 0.0;  // max |row sum - 1| after symmetrization
    int iterations = 0;
    bool converged = false;
};

// Symmetric Sinkhorn scaling diag(d) W diag(d), then (W + W^T) / 2.
SinkhornResult sinkhorn_symmetrize(const Eigen::MatrixXd& W, int iters = 50, double tol = 1e-8);

AveragedDenoiser make_averaged_denoiser(const Eigen::MatrixXd& W, double theta);
AveragedDenoiser build_nlm_denoiser(const Eigen::MatrixXd& guide, int grid_rows, int grid_cols, const NlmConfig& cfg,
                                    int sinkhorn_iters = 500);

Eigen::VectorXd apply_denoiser(const AveragedDenoiser& D, const Eigen::VectorXd& v);

struct NonexpansiveReport {
    double max_ratio = 0.0;
    double spectral_norm = 0.0;
    double theta = 0.0;
    bool pass = false;
    std::string to_json() const;
};

// Generic check for a linear map given as a dense matrix.
NonexpansiveReport certify_nonexpansive(const Eigen::MatrixXd& M, double theta, int trials, std::uint64_t seed);
NonexpansiveReport certify_nonexpansive(const AveragedDenoiser& D, int trials, std::uint64_t seed);

// Largest singular value of a dense matrix by power iteration on M^T M.
double power_spectral_norm(const Eigen::MatrixXd& M, int iters = 300, std::uint64_t seed = 1);

}  // namespace hsi
