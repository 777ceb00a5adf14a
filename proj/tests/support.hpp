#pragma once

// Hand-rolled generators and independent reference implementations shared by
// the unit and acceptance tests.

#include "hsinpaint/cube.hpp"
#include "hsinpaint/dict.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

namespace hsitest {

struct Gen {
    std::mt19937_64 rng;
    explicit Gen(std::uint64_t seed) : rng(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

    Eigen::MatrixXd matrix(Eigen::Index r, Eigen::Index c) {
        Eigen::MatrixXd m(r, c);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal();
        return m;
    }
    Eigen::VectorXd vector(Eigen::Index n) { return matrix(n, 1).col(0); }

    hsi::HsiCube cube(int rows, int cols, int bands) {
        hsi::HsiCube c(rows, cols, bands);
        for (Eigen::Index i = 0; i < c.size(); ++i) c.data[i] = uniform();
        return c;
    }
    // Values exactly representable in f32.
    hsi::HsiCube f32_cube(int rows, int cols, int bands) {
        hsi::HsiCube c = cube(rows, cols, bands);
        for (Eigen::Index i = 0; i < c.size(); ++i) c.data[i] = double(float(c.data[i]));
        return c;
    }
    hsi::MaskCube mask(int rows, int cols, int bands, double p_missing) {
        hsi::MaskCube m(rows, cols, bands);
        for (auto& v : m.data) v = uniform() < p_missing ? 0 : 1;
        return m;
    }
    Eigen::MatrixXd unit_columns(Eigen::Index r, Eigen::Index c) {
        Eigen::MatrixXd m = matrix(r, c);
        m.colwise().normalize();
        return m;
    }
};

// Dense-SVD shrinkage with a different decomposition than the library's.
inline Eigen::MatrixXd svt_oracle(const Eigen::MatrixXd& A, double tau) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::VectorXd s = (svd.singularValues().array() - tau).max(0.0).matrix();
    return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

// Explicit selection matrix of one patch on a rows x cols plane.
inline Eigen::MatrixXd selection_matrix(int rows, int cols, int r0, int c0, int pr, int pc) {
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(pr * pc, rows * cols);
    for (int i = 0; i < pr; ++i)
        for (int j = 0; j < pc; ++j) P(i * pc + j, (r0 + i) * cols + (c0 + j)) = 1.0;
    return P;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / ("hsinpaint_test_" + name);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::FILE* f = std::fopen(p.string().c_str(), "rb");
    if (!f) return {};
    std::string s;
    char buf[4096];
    for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, f)) > 0;) s.append(buf, n);
    std::fclose(f);
    return s;
}

}  // namespace hsitest
