#include "support.hpp"

#include "hsinpaint/errors.hpp"

#include <doctest.h>

using namespace hsi;
using hsitest::Gen;

namespace {

// Lasso optimality: |phi^T (z - phi a)| <= w_s everywhere, with equality and
// matching sign on the support.
double kkt_violation(const Eigen::MatrixXd& phi, const Eigen::VectorXd& z, const Eigen::VectorXd& a, double w_s) {
    Eigen::VectorXd g = phi.transpose() * (z - phi * a);
    double v = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (std::abs(a[i]) > 1e-9)
            v = std::max(v, std::abs(g[i] - w_s * (a[i] > 0 ? 1.0 : -1.0)));
        else
            v = std::max(v, std::abs(g[i]) - w_s);
    }
    return v;
}

}  // namespace

TEST_SUITE("dict") {

TEST_CASE("soft threshold oracle values") {
    Eigen::VectorXd v(5);
    v << -2.0, -0.5, 0.0, 0.3, 1.5;
    Eigen::VectorXd r = soft_threshold(v, 0.5);
    Eigen::VectorXd e(5);
    e << -1.5, 0.0, 0.0, 0.0, 1.0;
    CHECK((r - e).norm() == 0.0);
    CHECK((soft_threshold(v, 0.0) - v).norm() == 0.0);
}

TEST_CASE("ISTA objective is non-increasing (property)") {
    Gen g(21);
    for (int t = 0; t < 20; ++t) {
        Eigen::MatrixXd phi = g.unit_columns(8, 12), z = g.matrix(8, 3);
        double w = g.uniform(0.01, 0.5);
        auto r = ista_sparse_code(phi, z, w, 200, 1.0 / spectral_norm_sq(phi));
        for (std::size_t k = 1; k < r.objective.size(); ++k) CHECK(r.objective[k] <= r.objective[k - 1] + 1e-12);
    }
}

TEST_CASE("ISTA and ADMM reach lasso optimality (KKT oracle)") {
    Gen g(22);
    for (int t = 0; t < 10; ++t) {
        Eigen::MatrixXd phi = g.unit_columns(8, 12);
        Eigen::VectorXd z = g.vector(8);
        double w = g.uniform(0.05, 0.5);
        auto ri = ista_sparse_code(phi, z, w, 20000, 1.0 / spectral_norm_sq(phi));
        auto ra = admm_sparse_code(phi, z, w, 1.0, 5000);
        CHECK(kkt_violation(phi, z, ri.alpha.col(0), w) < 1e-6);
        CHECK(kkt_violation(phi, z, ra.alpha.col(0), w) < 1e-5);
        CHECK(std::abs(lasso_objective(phi, z, ri.alpha, w) - lasso_objective(phi, z, ra.alpha, w)) < 1e-7);
    }
}

TEST_CASE("spectral norm matches an SVD") {
    Gen g(23);
    Eigen::MatrixXd phi = g.matrix(9, 12);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(phi);
    CHECK(spectral_norm_sq(phi) == doctest::Approx(svd.singularValues()[0] * svd.singularValues()[0]));
}

TEST_CASE("dictionary learning: unit atoms, monotone epochs, seeded") {
    Gen g(24);
    // Patches drawn from a planted 4-atom dictionary.
    Eigen::MatrixXd truth = g.unit_columns(9, 4), codes = Eigen::MatrixXd::Zero(4, 300);
    for (Eigen::Index j = 0; j < 300; ++j) codes(g.integer(0, 3), j) = g.uniform(0.5, 2.0);
    Eigen::MatrixXd X = truth * codes + 0.01 * g.matrix(9, 300);
    auto a = online_dictionary_learn(X, 6, 0.1, 10, 5);
    auto b = online_dictionary_learn(X, 6, 0.1, 10, 5);
    CHECK(a.dict.atoms == b.dict.atoms);
    for (Eigen::Index j = 0; j < 6; ++j) CHECK(a.dict.atoms.col(j).norm() == doctest::Approx(1.0));
    for (std::size_t k = 1; k < a.epoch_objective.size(); ++k)
        CHECK(a.epoch_objective[k] <= a.epoch_objective[k - 1] + 1e-6);
    // Each planted atom is recovered by some learned atom.
    for (Eigen::Index j = 0; j < 4; ++j) CHECK((a.dict.atoms.transpose() * truth.col(j)).cwiseAbs().maxCoeff() > 0.95);
}

TEST_CASE("dictionary learning with fewer patches than atoms fills with unit atoms") {
    Gen g(25);
    auto r = online_dictionary_learn(g.matrix(9, 3), 8, 0.1, 2, 1);
    CHECK(r.dict.n_atoms() == 8);
    for (Eigen::Index j = 0; j < 8; ++j) CHECK(r.dict.atoms.col(j).norm() == doctest::Approx(1.0));
    CHECK_THROWS_AS(online_dictionary_learn(Eigen::MatrixXd(9, 0), 4, 0.1, 1, 1), Error);
}

TEST_CASE("soft threshold scalar cases, negative tau, non-expansiveness") {
    Eigen::VectorXd v(3);
    v << -2.0, 0.0, 2.0;
    Eigen::VectorXd e(3);
    e << -1.0, 0.0, 1.0;
    CHECK(soft_threshold(v, 1.0) == e);
    CHECK(soft_threshold(Eigen::VectorXd(Eigen::VectorXd::Constant(1, 1.2)), 0.5)[0] == doctest::Approx(0.7));
    CHECK(soft_threshold(Eigen::VectorXd(Eigen::VectorXd::Constant(1, -0.3)), 0.5)[0] == 0.0);
    CHECK_THROWS_AS(soft_threshold(v, -0.1), Error);
    Gen g(27);
    for (int t = 0; t < 100; ++t) {
        Eigen::VectorXd a = g.vector(6), b = g.vector(6);
        double tau = g.uniform(0.0, 1.0);
        CHECK((soft_threshold(a, tau) - soft_threshold(b, tau)).norm() <= (a - b).norm() + 1e-15);
    }
}

TEST_CASE("orthonormal dictionary: lasso is one soft threshold") {
    Eigen::MatrixXd I = Eigen::MatrixXd::Identity(2, 2);
    Eigen::VectorXd z(2);
    z << 1.2, -0.3;
    Eigen::VectorXd e(2);
    e << 0.7, 0.0;
    CHECK((ista_sparse_code(I, z, 0.5, 200, 1.0).alpha.col(0) - e).norm() < 1e-12);
    CHECK((admm_sparse_code(I, z, 0.5, 1.0, 500).alpha.col(0) - e).norm() < 1e-6);
    // w_s / mu1 = 0.5 with mu1 = 2.
    CHECK((ista_sparse_code(I, z, 1.0, 200, 0.5, 2.0).alpha.col(0) - e).norm() < 1e-12);
}

TEST_CASE("zero weight gives the least-squares solution") {
    Gen g(28);
    Eigen::MatrixXd phi = g.matrix(6, 6) + 3.0 * Eigen::MatrixXd::Identity(6, 6);
    Eigen::VectorXd z = g.vector(6);
    Eigen::VectorXd ls = phi.fullPivLu().solve(z);
    CHECK((ista_sparse_code(phi, z, 0.0, 20000, 1.0 / spectral_norm_sq(phi)).alpha.col(0) - ls).norm() < 1e-6);
    CHECK((admm_sparse_code(phi, z, 0.0, 1.0, 5000).alpha.col(0) - ls).norm() < 1e-6);
    CHECK_THROWS_AS(ista_sparse_code(phi, z, 0.1, 10, 0.0), Error);
    CHECK_THROWS_AS(ista_sparse_code(phi, g.vector(5), 0.1, 10, 0.1), Error);
}

TEST_CASE("ISTA matches a long-run reference solve") {
    Gen g(29);
    Eigen::MatrixXd phi = g.unit_columns(8, 12);
    Eigen::VectorXd z = g.vector(8);
    const double step = 1.0 / spectral_norm_sq(phi);
    auto ref = ista_sparse_code(phi, z, 0.2, 100000, step);
    auto r = ista_sparse_code(phi, z, 0.2, 20000, step);
    CHECK(std::abs(lasso_objective(phi, z, r.alpha, 0.2) - lasso_objective(phi, z, ref.alpha, 0.2)) < 1e-8);
}

TEST_CASE("dictionary learning on rank-one and three-direction data") {
    Gen g(30);
    Eigen::VectorXd v = g.vector(9);
    Eigen::MatrixXd same = v.replicate(1, 40);
    auto one = online_dictionary_learn(same, 1, 0.01, 5, 2);
    CHECK(std::abs(one.dict.atoms.col(0).dot(v.normalized())) == doctest::Approx(1.0).epsilon(1e-8));

    Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(g.matrix(9, 9)).householderQ();
    Eigen::MatrixXd dirs = Q.leftCols(3), X(9, 300);
    for (Eigen::Index j = 0; j < 300; ++j) X.col(j) = dirs.col(j % 3) * g.uniform(0.5, 2.0) * (j % 2 ? 1 : -1);
    auto r = online_dictionary_learn(X, 3, 0.01, 20, 4);
    // Largest principal angle between span(atoms) and span(dirs).
    Eigen::MatrixXd A = Eigen::HouseholderQR<Eigen::MatrixXd>(r.dict.atoms).householderQ() * Eigen::MatrixXd::Identity(9, 3);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A.transpose() * dirs);
    double cos_min = std::min(1.0, svd.singularValues().minCoeff());
    CHECK(std::acos(cos_min) < 1e-3);
}

TEST_CASE("dictionary save/load round trip") {
    Gen g(26);
    Dictionary d{g.unit_columns(9, 5)};
    for (Eigen::Index i = 0; i < d.atoms.size(); ++i) d.atoms.data()[i] = double(float(d.atoms.data()[i]));
    auto dir = hsitest::temp_dir("dict");
    save_dictionary(d, dir / "d");
    Dictionary back = load_dictionary(dir / "d");
    CHECK((back.atoms - d.atoms).cwiseAbs().maxCoeff() < 1e-6);
    CHECK_THROWS_AS(load_dictionary(dir / "missing"), Error);
}

}  // TEST_SUITE
