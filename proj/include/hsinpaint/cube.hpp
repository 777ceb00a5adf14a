#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace hsi {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Hyperspectral cube. Storage is band-major; each band is a row-major plane,
// so the pixels x bands unfolding is a zero-copy column-major view.
struct HsiCube {
    int rows = 0;
    int cols = 0;
    int bands = 0;
    Eigen::VectorXd data;
    double lo = 0.0;
    double hi = 1.0;

    HsiCube() = default;
    HsiCube(int r, int c, int b, double fill = 0.0);

    Eigen::Index pixels() const { return Eigen::Index(rows) * cols; }
    Eigen::Index size() const { return pixels() * bands; }
    Eigen::Index index(int b, int r, int c) const { return (Eigen::Index(b) * rows + r) * cols + c; }
    double& at(int b, int r, int c) { return data[index(b, r, c)]; }
    double at(int b, int r, int c) const { return data[index(b, r, c)]; }

    Eigen::Map<Eigen::MatrixXd> unfold() { return {data.data(), pixels(), bands}; }
    Eigen::Map<const Eigen::MatrixXd> unfold() const { return {data.data(), pixels(), bands}; }
    Eigen::Map<RowMatrix> band(int b) { return {data.data() + Eigen::Index(b) * pixels(), rows, cols}; }
    Eigen::Map<const RowMatrix> band(int b) const {
        return {data.data() + Eigen::Index(b) * pixels(), rows, cols};
    }

    bool same_shape(const HsiCube& o) const { return rows == o.rows && cols == o.cols && bands == o.bands; }
    bool finite() const { return data.allFinite(); }
};

struct MaskCube {
    int rows = 0;
    int cols = 0;
    int bands = 0;
    std::vector<std::uint8_t> data;

    MaskCube() = default;
    MaskCube(int r, int c, int b, std::uint8_t fill = 1);

    Eigen::Index pixels() const { return Eigen::Index(rows) * cols; }
    Eigen::Index size() const { return pixels() * bands; }
    Eigen::VectorXd as_real() const;
    double masked_fraction() const;
    template <class Cube>
    bool same_shape(const Cube& o) const {
        return rows == o.rows && cols == o.cols && bands == o.bands;
    }
};

// Patch geometry for the operators P_i. Start positions always include the
// last admissible offset so the union of patches covers the plane.
struct PatchLayout {
    int rows = 0;
    int cols = 0;
    int patch_rows = 0;
    int patch_cols = 0;
    int stride_rows = 1;
    int stride_cols = 1;
    std::vector<int> row_starts;
    std::vector<int> col_starts;

    int count() const { return int(row_starts.size() * col_starts.size()); }
    int patch_len() const { return patch_rows * patch_cols; }
    int grid_rows() const { return int(row_starts.size()); }
    int grid_cols() const { return int(col_starts.size()); }
};

PatchLayout make_layout(int rows, int cols, int patch_rows, int patch_cols, int stride_rows, int stride_cols);
PatchLayout full_plane_layout(int rows, int cols);

struct QualityReport {
    double mpsnr = 0.0;
    double mssim = 0.0;
    double msam = 0.0;
    bool msam_warning = false;
};

struct MsamResult {
    double value = 0.0;
    long skipped = 0;
    bool all_skipped = false;
};

enum class MaskKind { Stripes, Block, RandomPixels, Text };
MaskKind parse_mask_kind(const std::string& s);
std::string mask_kind_name(MaskKind k);

// I/O: <base>.json header plus <base>.bin payload. A trailing .json or .bin
// extension on `path` is ignored.
HsiCube load_cube(const std::filesystem::path& path);
void save_cube(const HsiCube& cube, const std::filesystem::path& path);
MaskCube load_mask(const std::filesystem::path& path);
void save_mask(const MaskCube& mask, const std::filesystem::path& path);
std::filesystem::path header_path(const std::filesystem::path& path);
std::filesystem::path payload_path(const std::filesystem::path& path);

HsiCube apply_mask(const HsiCube& cube, const MaskCube& mask);
HsiCube add_gaussian_noise(const HsiCube& cube, double sigma, std::uint64_t seed);

Eigen::MatrixXd extract_patches(const HsiCube& cube, const PatchLayout& layout, int band);
// Patch matrix over every band; column b * layout.count() + i holds P_i of band b.
Eigen::MatrixXd extract_all_patches(const HsiCube& cube, const PatchLayout& layout);

struct Assembled {
    RowMatrix plane;
    RowMatrix counts;
};
Assembled assemble_patches(const Eigen::MatrixXd& patches, const PatchLayout& layout);
// Adjoint of extract_all_patches; returns the cube of sums (counts via overlap_counts).
HsiCube assemble_all_patches(const Eigen::MatrixXd& patches, const PatchLayout& layout, int bands);
RowMatrix overlap_counts(const PatchLayout& layout);

double mpsnr(const HsiCube& ref, const HsiCube& test, double cap_db = 100.0);
double mssim(const HsiCube& ref, const HsiCube& test);
MsamResult msam(const HsiCube& ref, const HsiCube& test);
QualityReport quality(const HsiCube& ref, const HsiCube& test);

HsiCube synth_lowrank_cube(int rows, int cols, int bands, int rank, std::uint64_t seed);
MaskCube make_mask(int rows, int cols, int bands, MaskKind kind, double fraction, std::uint64_t seed);

}  // namespace hsi
