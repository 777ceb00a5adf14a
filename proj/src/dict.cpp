#include "hsinpaint/dict.hpp"

#include "hsinpaint/cube.hpp"
#include "hsinpaint/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

namespace hsi {

Eigen::VectorXd soft_threshold(const Eigen::VectorXd& v, double tau) {
    return soft_threshold(Eigen::MatrixXd(v), tau).col(0);
}

Eigen::MatrixXd soft_threshold(const Eigen::MatrixXd& v, double tau) {
    if (!(tau >= 0.0)) throw usage_error("soft threshold must be non-negative");
    return v.unaryExpr([tau](double x) { return std::copysign(std::max(std::abs(x) - tau, 0.0), x); });
}

double lasso_objective(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& z, const Eigen::MatrixXd& alpha, double w_s,
                       double mu1) {
    return 0.5 * mu1 * (z - phi * alpha).squaredNorm() + w_s * alpha.cwiseAbs().sum();
}

double spectral_norm_sq(const Eigen::MatrixXd& phi) {
    if (phi.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(phi.transpose() * phi, Eigen::EigenvaluesOnly);
    return std::max(es.eigenvalues().maxCoeff(), 0.0);
}

IstaResult ista_sparse_code(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& z, double w_s, int iters, double step,
                            double mu1, const Eigen::MatrixXd& warm) {
    if (z.rows() != phi.rows()) throw shape_error("ista: signal length does not match atom length");
    if (!(step > 0.0)) throw usage_error("ista: step must be positive");
    if (iters < 1) throw usage_error("ista: iters must be >= 1");
    if (w_s < 0.0) throw usage_error("ista: w_s must be non-negative");
    IstaResult r;
    if (warm.size()) {
        if (warm.rows() != phi.cols() || warm.cols() != z.cols()) throw shape_error("ista: warm start shape");
        r.alpha = warm;
    } else {
        r.alpha = Eigen::MatrixXd::Zero(phi.cols(), z.cols());
    }
    const Eigen::MatrixXd G = phi.transpose() * phi;
    const Eigen::MatrixXd c = phi.transpose() * z;
    r.objective.reserve(std::size_t(iters));
    for (int k = 0; k < iters; ++k) {
        Eigen::MatrixXd grad = mu1 * (G * r.alpha - c);
        r.alpha = soft_threshold(Eigen::MatrixXd(r.alpha - step * grad), step * w_s);
        r.objective.push_back(lasso_objective(phi, z, r.alpha, w_s, mu1));
    }
    return r;
}

AdmmCodeResult admm_sparse_code(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& z, double w_s, double rho,
                                int iters, double mu1) {
    if (z.rows() != phi.rows()) throw shape_error("admm: signal length does not match atom length");
    if (!(rho > 0.0)) throw usage_error("admm: rho must be positive");
    if (iters < 1) throw usage_error("admm: iters must be >= 1");
    const Eigen::Index n = phi.cols();
    Eigen::MatrixXd A = mu1 * phi.transpose() * phi + rho * Eigen::MatrixXd::Identity(n, n);
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) throw numerical_error("admm: alpha-step system is not positive definite");
    const Eigen::MatrixXd rhs0 = mu1 * phi.transpose() * z;
    Eigen::MatrixXd alpha = Eigen::MatrixXd::Zero(n, z.cols()), v = alpha, u = alpha;
    AdmmCodeResult r;
    for (int k = 0; k < iters; ++k) {
        alpha = llt.solve(rhs0 + rho * (v - u));
        v = soft_threshold(Eigen::MatrixXd(alpha + u), w_s / rho);
        u += alpha - v;
        r.primal_residual.push_back((alpha - v).norm());
    }
    r.alpha = v;
    return r;
}

// ---------------------------------------------------------------- learning

static Eigen::VectorXd random_unit(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::VectorXd v(n);
    do {
        for (Eigen::Index i = 0; i < n; ++i) v[i] = g(rng);
    } while (v.norm() == 0.0);
    return v.normalized();
}

static double mean_objective(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& P, const Eigen::MatrixXd& A,
                             double w_s) {
    return lasso_objective(phi, P, A, w_s) / double(P.cols());
}

DictLearnResult online_dictionary_learn(const Eigen::MatrixXd& patches, int n_atoms, double w_s, int epochs,
                                        std::uint64_t seed, int inner_iters) {
    if (patches.cols() == 0 || patches.rows() == 0) throw usage_error("dictionary learning: empty patch set");
    if (n_atoms < 1) throw usage_error("dictionary learning: n_atoms must be >= 1");
    if (epochs < 0) throw usage_error("dictionary learning: epochs must be >= 0");
    if (!patches.allFinite()) throw numerical_error("dictionary learning: non-finite patch values");
    const Eigen::Index m = patches.rows(), N = patches.cols();
    std::mt19937_64 rng(seed);

    // Initialise from distinct patches; top up with random directions when
    // there are fewer usable patches than atoms.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(N));
    std::iota(order.begin(), order.end(), Eigen::Index(0));
    std::shuffle(order.begin(), order.end(), rng);
    Eigen::MatrixXd D(m, n_atoms);
    int filled = 0;
    for (auto idx : order) {
        if (filled == n_atoms) break;
        double nrm = patches.col(idx).norm();
        if (nrm > 1e-12) D.col(filled++) = patches.col(idx) / nrm;
    }
    for (; filled < n_atoms; ++filled) D.col(filled) = random_unit(m, rng);

    DictLearnResult res;
    auto code = [&](const Eigen::MatrixXd& phi, const Eigen::MatrixXd& warm) {
        double L = spectral_norm_sq(phi);
        return ista_sparse_code(phi, patches, w_s, inner_iters, 1.0 / std::max(L, 1e-12), 1.0, warm).alpha;
    };
    Eigen::MatrixXd A = code(D, {});
    double obj = mean_objective(D, patches, A, w_s);
    res.epoch_objective.push_back(obj);

    for (int e = 0; e < epochs; ++e) {
        // Rank-accumulated statistics of the current codes.
        Eigen::MatrixXd AA = Eigen::MatrixXd::Zero(n_atoms, n_atoms), BB = Eigen::MatrixXd::Zero(m, n_atoms);
        for (Eigen::Index t = 0; t < N; ++t) {
            AA.noalias() += A.col(t) * A.col(t).transpose();
            BB.noalias() += patches.col(t) * A.col(t).transpose();
        }
        Eigen::MatrixXd Dn = D;
        Eigen::VectorXd worst_err = (patches - D * A).colwise().squaredNorm().transpose();
        int reseeded = 0;
        for (int j = 0; j < n_atoms; ++j) {
            if (AA(j, j) < 1e-12) {
                Eigen::Index w;
                worst_err.maxCoeff(&w);
                double nrm = patches.col(w).norm();
                Dn.col(j) = nrm > 1e-12 ? Eigen::VectorXd(patches.col(w) / nrm) : random_unit(m, rng);
                worst_err[w] = -1.0;
                ++reseeded;
                continue;
            }
            Eigen::VectorXd u = (BB.col(j) - Dn * AA.col(j)) / AA(j, j) + Dn.col(j);
            double nrm = u.norm();
            Dn.col(j) = nrm > 1e-12 ? Eigen::VectorXd(u / nrm) : random_unit(m, rng);
        }
        Eigen::MatrixXd An = code(Dn, reseeded ? Eigen::MatrixXd() : A);
        double objn = mean_objective(Dn, patches, An, w_s);
        if (objn > obj + 1e-6) {
            res.reverted = true;
            break;
        }
        D = std::move(Dn);
        A = std::move(An);
        obj = objn;
        res.reseeded += reseeded;
        res.epoch_objective.push_back(obj);
    }
    res.dict.atoms = D;
    return res;
}

// ---------------------------------------------------------------- I/O

void save_dictionary(const Dictionary& d, const std::filesystem::path& path) {
    nlohmann::json h = {{"atom_len", d.atom_len()}, {"n_atoms", d.n_atoms()}, {"dtype", "f32le"},
                        {"order", "column-major"}};
    {
        std::ofstream out(header_path(path), std::ios::trunc);
        if (!out) throw io_error("cannot write " + header_path(path).string());
        out << h.dump() << "\n";
    }
    std::string bytes(std::size_t(d.atoms.size()) * 4, '\0');
    for (Eigen::Index i = 0; i < d.atoms.size(); ++i) {
        auto u = std::bit_cast<std::uint32_t>(float(d.atoms.data()[i]));
        if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
        std::memcpy(bytes.data() + 4 * i, &u, 4);
    }
    std::ofstream out(payload_path(path), std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + payload_path(path).string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
}

Dictionary load_dictionary(const std::filesystem::path& path) {
    std::ifstream hin(header_path(path));
    if (!hin) throw io_error("cannot open " + header_path(path).string());
    nlohmann::json h;
    int m = 0, n = 0;
    try {
        hin >> h;
        m = h.at("atom_len").get<int>();
        n = h.at("n_atoms").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("bad dictionary header: ") + e.what());
    }
    if (m <= 0 || n <= 0) throw io_error("dictionary dimensions must be positive");
    std::ifstream in(payload_path(path), std::ios::binary);
    if (!in) throw io_error("cannot open " + payload_path(path).string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() != std::size_t(m) * n * 4) throw io_error("dictionary payload size mismatch");
    Dictionary d;
    d.atoms.resize(m, n);
    for (Eigen::Index i = 0; i < d.atoms.size(); ++i) {
        std::uint32_t u;
        std::memcpy(&u, bytes.data() + 4 * i, 4);
        if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
        float f = std::bit_cast<float>(u);
        if (!std::isfinite(f)) throw io_error("non-finite dictionary entry");
        d.atoms.data()[i] = f;
    }
    // f32 storage perturbs the unit norms slightly; restore them.
    for (int j = 0; j < n; ++j) {
        double nrm = d.atoms.col(j).norm();
        if (nrm > 0) d.atoms.col(j) /= nrm;
    }
    return d;
}

}  // namespace hsi
