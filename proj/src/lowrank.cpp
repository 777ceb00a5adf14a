#include "hsinpaint/lowrank.hpp"

#include "hsinpaint/errors.hpp"

namespace hsi {

ThinSvd deterministic_svd(const Eigen::MatrixXd& A) {
    if (!A.allFinite()) throw numerical_error("svd: non-finite input");
    Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    ThinSvd r{svd.matrixU(), svd.singularValues(), svd.matrixV()};
    for (Eigen::Index k = 0; k < r.U.cols(); ++k) {
        Eigen::Index i;
        r.U.col(k).cwiseAbs().maxCoeff(&i);
        if (r.U(i, k) < 0) {
            r.U.col(k) *= -1.0;
            r.V.col(k) *= -1.0;
        }
    }
    return r;
}

Eigen::MatrixXd svt(const Eigen::MatrixXd& A, double tau) {
    if (!(tau >= 0.0)) throw usage_error("svt: tau must be non-negative");
    if (A.size() == 0) return A;
    auto d = deterministic_svd(A);
    Eigen::VectorXd s = (d.s.array() - tau).max(0.0);
    return d.U * s.asDiagonal() * d.V.transpose();
}

HsiCube svt(const HsiCube& x, double tau) {
    HsiCube out = x;
    out.unfold() = svt(Eigen::MatrixXd(x.unfold()), tau);
    return out;
}

double nuclear_norm(const Eigen::MatrixXd& A) {
    if (A.size() == 0) return 0.0;
    if (!A.allFinite()) throw numerical_error("nuclear norm: non-finite input");
    return Eigen::BDCSVD<Eigen::MatrixXd>(A).singularValues().sum();
}

double nuclear_norm(const HsiCube& x) { return nuclear_norm(Eigen::MatrixXd(x.unfold())); }

}  // namespace hsi
