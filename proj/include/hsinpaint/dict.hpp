#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace hsi {

// Column-major atoms, each of unit Euclidean norm.
struct Dictionary {
    Eigen::MatrixXd atoms;

    int atom_len() const { return int(atoms.rows()); }
    int n_atoms() const { return int(atoms.cols()); }
};

Eigen::VectorXd soft_threshold(const Eigen::VectorXd& v, double tau);
Eigen::MatrixXd soft_threshold(const Eigen::MatrixXd& v, double tau);

// (mu1/2)||z - Phi a||^2 + w_s ||a||_1, summed over columns.
double lasso_objective(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& z, const Eigen::MatrixXd& alpha, double w_s,
                       double mu1 = 1.0);

double spectral_norm_sq(const Eigen::MatrixXd& phi);

struct IstaResult {
    Eigen::MatrixXd alpha;
    std::vector<double> objective;  // after each iteration
};

// Classic ISTA for the lasso above. Works column-wise on a batch of signals;
// `warm` (if non-empty) is the starting code.
IstaResult ista_sparse_code(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& z, double w_s, int iters, double step,
                            double mu1 = 1.0, const Eigen::MatrixXd& warm = {});

struct AdmmCodeResult {
    Eigen::MatrixXd alpha;  // the sparse split variable v
    std::vector<double> primal_residual;
};

// Three-block scaled ADMM: linear solve, shrinkage with threshold w_s/rho,
// u += alpha - v.
AdmmCodeResult admm_sparse_code(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& z, double w_s, double rho,
                                int iters, double mu1 = 1.0);

struct DictLearnResult {
    Dictionary dict;
    std::vector<double> epoch_objective;  // mean per-patch objective of each accepted epoch
    int reseeded = 0;
    bool reverted = false;  // an epoch raised the objective and was rolled back
};

// Online (block-coordinate) dictionary learning over patch columns.
DictLearnResult online_dictionary_learn(const Eigen::MatrixXd& patches, int n_atoms, double w_s, int epochs,
                                        std::uint64_t seed, int inner_iters = 50);

void save_dictionary(const Dictionary& d, const std::filesystem::path& path);
Dictionary load_dictionary(const std::filesystem::path& path);

}  // namespace hsi
