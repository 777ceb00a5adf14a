#pragma once

#include "hsinpaint/cube.hpp"

#include <Eigen/Dense>

namespace hsi {

// Thin SVD with a fixed sign convention: the largest-magnitude entry of every
// left singular vector is non-negative.
struct ThinSvd {
    Eigen::MatrixXd U;
    Eigen::VectorXd s;
    Eigen::MatrixXd V;
};
ThinSvd deterministic_svd(const Eigen::MatrixXd& A);

// U max(S - tau, 0) V^T
Eigen::MatrixXd svt(const Eigen::MatrixXd& A, double tau);
HsiCube svt(const HsiCube& x, double tau);  // on the pixels x bands unfolding

double nuclear_norm(const Eigen::MatrixXd& A);
double nuclear_norm(const HsiCube& x);

}  // namespace hsi
