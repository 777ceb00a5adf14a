#include "hsinpaint/cube.hpp"

#include "hsinpaint/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace hsi {

namespace fs = std::filesystem;
using nlohmann::json;

HsiCube::HsiCube(int r, int c, int b, double fill) : rows(r), cols(c), bands(b) {
    if (r <= 0 || c <= 0 || b <= 0) throw shape_error("cube dimensions must be positive");
    data = Eigen::VectorXd::Constant(Eigen::Index(r) * c * b, fill);
}

MaskCube::MaskCube(int r, int c, int b, std::uint8_t fill) : rows(r), cols(c), bands(b) {
    if (r <= 0 || c <= 0 || b <= 0) throw shape_error("mask dimensions must be positive");
    data.assign(std::size_t(r) * c * b, fill);
}

Eigen::VectorXd MaskCube::as_real() const {
    Eigen::VectorXd v(size());
    for (Eigen::Index i = 0; i < size(); ++i) v[i] = data[i];
    return v;
}

double MaskCube::masked_fraction() const {
    if (data.empty()) return 0.0;
    auto zeros = std::count(data.begin(), data.end(), std::uint8_t(0));
    return double(zeros) / double(data.size());
}

// ---------------------------------------------------------------- layout

static std::vector<int> starts(int extent, int patch, int stride) {
    std::vector<int> s;
    for (int p = 0; p + patch <= extent; p += stride) s.push_back(p);
    if (s.empty() || s.back() != extent - patch) s.push_back(extent - patch);
    return s;
}

PatchLayout make_layout(int rows, int cols, int patch_rows, int patch_cols, int stride_rows, int stride_cols) {
    if (rows <= 0 || cols <= 0) throw shape_error("layout extent must be positive");
    if (patch_rows <= 0 || patch_cols <= 0 || patch_rows > rows || patch_cols > cols)
        throw usage_error("patch size must lie inside the spatial extent");
    if (stride_rows <= 0 || stride_cols <= 0) throw usage_error("patch stride must be positive");
    PatchLayout l;
    l.rows = rows;
    l.cols = cols;
    l.patch_rows = patch_rows;
    l.patch_cols = patch_cols;
    l.stride_rows = stride_rows;
    l.stride_cols = stride_cols;
    l.row_starts = starts(rows, patch_rows, stride_rows);
    l.col_starts = starts(cols, patch_cols, stride_cols);
    return l;
}

PatchLayout full_plane_layout(int rows, int cols) { return make_layout(rows, cols, rows, cols, rows, cols); }

// ---------------------------------------------------------------- masks

MaskKind parse_mask_kind(const std::string& s) {
    if (s == "stripes") return MaskKind::Stripes;
    if (s == "block") return MaskKind::Block;
    if (s == "random_pixels") return MaskKind::RandomPixels;
    if (s == "text") return MaskKind::Text;
    throw usage_error("unknown mask kind '" + s + "'");
}

std::string mask_kind_name(MaskKind k) {
    switch (k) {
        case MaskKind::Stripes: return "stripes";
        case MaskKind::Block: return "block";
        case MaskKind::RandomPixels: return "random_pixels";
        case MaskKind::Text: return "text";
    }
    return "?";
}

// ---------------------------------------------------------------- I/O

static fs::path strip_ext(const fs::path& p) {
    auto e = p.extension();
    if (e == ".json" || e == ".bin") return fs::path(p).replace_extension();
    return p;
}

fs::path header_path(const fs::path& path) {
    auto b = strip_ext(path);
    return b.string() + ".json";
}

fs::path payload_path(const fs::path& path) {
    auto b = strip_ext(path);
    return b.string() + ".bin";
}

static std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
    return v;
}

static std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw io_error("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

static void write_file(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + p.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw io_error("write failed for " + p.string());
}

struct Header {
    int rows, cols, bands;
    std::string dtype;
    double lo, hi;
};

static Header read_header(const fs::path& path) {
    json h;
    try {
        h = json::parse(read_file(header_path(path)));
    } catch (const json::exception& e) {
        throw io_error("bad header " + header_path(path).string() + ": " + e.what());
    }
    Header out{};
    try {
        out.rows = h.at("rows").get<int>();
        out.cols = h.at("cols").get<int>();
        out.bands = h.at("bands").get<int>();
        out.dtype = h.at("dtype").get<std::string>();
        auto order = h.value("order", std::string("band-major"));
        if (order != "band-major") throw io_error("unsupported order '" + order + "'");
        auto range = h.value("range", std::vector<double>{0.0, 1.0});
        if (range.size() != 2) throw io_error("range must have two entries");
        out.lo = range[0];
        out.hi = range[1];
    } catch (const json::exception& e) {
        throw io_error("bad header " + header_path(path).string() + ": " + e.what());
    }
    if (out.rows <= 0 || out.cols <= 0 || out.bands <= 0) throw io_error("header dimensions must be positive");
    return out;
}

static void write_header(const fs::path& path, int rows, int cols, int bands, const char* dtype, double lo,
                         double hi) {
    json h = {{"rows", rows}, {"cols", cols}, {"bands", bands}, {"dtype", dtype}, {"order", "band-major"},
              {"range", {lo, hi}}};
    write_file(header_path(path), h.dump() + "\n");
}

HsiCube load_cube(const fs::path& path) {
    auto h = read_header(path);
    if (h.dtype != "f32le") throw io_error("cube dtype must be f32le, got '" + h.dtype + "'");
    auto bytes = read_file(payload_path(path));
    std::size_t n = std::size_t(h.rows) * h.cols * h.bands;
    if (bytes.size() != n * 4)
        throw io_error("payload size mismatch: header implies " + std::to_string(n * 4) + " bytes, found " +
                       std::to_string(bytes.size()));
    HsiCube c(h.rows, h.cols, h.bands);
    c.lo = h.lo;
    c.hi = h.hi;
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t u;
        std::memcpy(&u, bytes.data() + 4 * i, 4);
        float f = std::bit_cast<float>(to_le(u));
        if (!std::isfinite(f)) throw io_error("non-finite value at index " + std::to_string(i));
        c.data[Eigen::Index(i)] = f;
    }
    return c;
}

void save_cube(const HsiCube& cube, const fs::path& path) {
    std::string bytes(std::size_t(cube.size()) * 4, '\0');
    for (Eigen::Index i = 0; i < cube.size(); ++i) {
        std::uint32_t u = to_le(std::bit_cast<std::uint32_t>(float(cube.data[i])));
        std::memcpy(bytes.data() + 4 * i, &u, 4);
    }
    write_file(payload_path(path), bytes);
    write_header(path, cube.rows, cube.cols, cube.bands, "f32le", cube.lo, cube.hi);
}

MaskCube load_mask(const fs::path& path) {
    auto h = read_header(path);
    if (h.dtype != "u8") throw io_error("mask dtype must be u8, got '" + h.dtype + "'");
    auto bytes = read_file(payload_path(path));
    std::size_t n = std::size_t(h.rows) * h.cols * h.bands;
    if (bytes.size() != n) throw io_error("mask payload size mismatch");
    MaskCube m(h.rows, h.cols, h.bands);
    for (std::size_t i = 0; i < n; ++i) {
        auto v = std::uint8_t(bytes[i]);
        if (v > 1) throw io_error("mask values must be 0 or 1");
        m.data[i] = v;
    }
    return m;
}

void save_mask(const MaskCube& mask, const fs::path& path) {
    write_file(payload_path(path), std::string(mask.data.begin(), mask.data.end()));
    write_header(path, mask.rows, mask.cols, mask.bands, "u8", 0.0, 1.0);
}

// ---------------------------------------------------------------- forward model

HsiCube apply_mask(const HsiCube& cube, const MaskCube& mask) {
    if (!mask.same_shape(cube)) throw shape_error("mask shape does not match cube");
    HsiCube out = cube;
    for (Eigen::Index i = 0; i < cube.size(); ++i)
        if (!mask.data[std::size_t(i)]) out.data[i] = 0.0;
    return out;
}

HsiCube add_gaussian_noise(const HsiCube& cube, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0.0)) throw usage_error("noise sigma must be non-negative");
    HsiCube out = cube;
    if (sigma == 0.0) return out;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data[i] += n(rng);
    return out;
}

// ---------------------------------------------------------------- patches

Eigen::MatrixXd extract_patches(const HsiCube& cube, const PatchLayout& l, int band) {
    if (band < 0 || band >= cube.bands) throw shape_error("band index out of range");
    if (l.rows != cube.rows || l.cols != cube.cols) throw shape_error("layout extent does not match cube");
    Eigen::MatrixXd P(l.patch_len(), l.count());
    auto plane = cube.band(band);
    int i = 0;
    for (int r0 : l.row_starts)
        for (int c0 : l.col_starts) {
            int k = 0;
            for (int r = 0; r < l.patch_rows; ++r)
                for (int c = 0; c < l.patch_cols; ++c) P(k++, i) = plane(r0 + r, c0 + c);
            ++i;
        }
    return P;
}

Eigen::MatrixXd extract_all_patches(const HsiCube& cube, const PatchLayout& l) {
    const int n = l.count();
    Eigen::MatrixXd P(l.patch_len(), Eigen::Index(n) * cube.bands);
    for (int b = 0; b < cube.bands; ++b) P.middleCols(Eigen::Index(b) * n, n) = extract_patches(cube, l, b);
    return P;
}

static void accumulate(const Eigen::MatrixXd& P, Eigen::Index col0, const PatchLayout& l,
                       Eigen::Ref<RowMatrix> plane) {
    Eigen::Index i = col0;
    for (int r0 : l.row_starts)
        for (int c0 : l.col_starts) {
            int k = 0;
            for (int r = 0; r < l.patch_rows; ++r)
                for (int c = 0; c < l.patch_cols; ++c) plane(r0 + r, c0 + c) += P(k++, i);
            ++i;
        }
}

RowMatrix overlap_counts(const PatchLayout& l) {
    RowMatrix counts = RowMatrix::Zero(l.rows, l.cols);
    for (int r0 : l.row_starts)
        for (int c0 : l.col_starts) counts.block(r0, c0, l.patch_rows, l.patch_cols).array() += 1.0;
    return counts;
}

Assembled assemble_patches(const Eigen::MatrixXd& patches, const PatchLayout& l) {
    if (l.count() == 0 || patches.cols() == 0) throw shape_error("empty patch set");
    if (patches.rows() != l.patch_len() || patches.cols() != l.count())
        throw shape_error("patch matrix is inconsistent with the layout");
    Assembled a{RowMatrix::Zero(l.rows, l.cols), overlap_counts(l)};
    accumulate(patches, 0, l, a.plane);
    return a;
}

HsiCube assemble_all_patches(const Eigen::MatrixXd& patches, const PatchLayout& l, int bands) {
    if (patches.rows() != l.patch_len() || patches.cols() != Eigen::Index(l.count()) * bands)
        throw shape_error("patch matrix is inconsistent with the layout");
    HsiCube out(l.rows, l.cols, bands, 0.0);
    for (int b = 0; b < bands; ++b) accumulate(patches, Eigen::Index(b) * l.count(), l, out.band(b));
    return out;
}

// ---------------------------------------------------------------- metrics

double mpsnr(const HsiCube& ref, const HsiCube& test, double cap_db) {
    if (!ref.same_shape(test)) throw shape_error("mpsnr: shape mismatch");
    const double range = ref.hi - ref.lo;
    double acc = 0.0;
    for (int b = 0; b < ref.bands; ++b) {
        double mse = (ref.band(b) - test.band(b)).squaredNorm() / double(ref.pixels());
        double v = mse > 0.0 ? 10.0 * std::log10(range * range / mse) : cap_db;
        acc += std::min(v, cap_db);
    }
    return acc / ref.bands;
}

static Eigen::VectorXd gaussian_kernel(int radius, double sigma) {
    Eigen::VectorXd k(2 * radius + 1);
    for (int i = -radius; i <= radius; ++i) k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    return k / k.sum();
}

// Separable 'valid' filtering with the 11x11 Gaussian window.
static RowMatrix filter_valid(const RowMatrix& a, const Eigen::VectorXd& k) {
    const int w = int(k.size());
    RowMatrix tmp(a.rows(), a.cols() - w + 1);
    for (Eigen::Index r = 0; r < a.rows(); ++r)
        for (Eigen::Index c = 0; c < tmp.cols(); ++c) tmp(r, c) = a.row(r).segment(c, w).dot(k.transpose());
    RowMatrix out(a.rows() - w + 1, tmp.cols());
    for (Eigen::Index r = 0; r < out.rows(); ++r)
        for (Eigen::Index c = 0; c < out.cols(); ++c) out(r, c) = tmp.col(c).segment(r, w).dot(k);
    return out;
}

double mssim(const HsiCube& ref, const HsiCube& test) {
    if (!ref.same_shape(test)) throw shape_error("mssim: shape mismatch");
    constexpr int win = 11;
    if (ref.rows < win || ref.cols < win) throw shape_error("mssim: spatial extent smaller than the 11x11 window");
    const double range = ref.hi - ref.lo;
    const double c1 = (0.01 * range) * (0.01 * range), c2 = (0.03 * range) * (0.03 * range);
    auto k = gaussian_kernel(win / 2, 1.5);
    double acc = 0.0;
    for (int b = 0; b < ref.bands; ++b) {
        RowMatrix x = ref.band(b), y = test.band(b);
        RowMatrix mx = filter_valid(x, k), my = filter_valid(y, k);
        RowMatrix sxx = filter_valid(x.cwiseProduct(x), k) - mx.cwiseProduct(mx);
        RowMatrix syy = filter_valid(y.cwiseProduct(y), k) - my.cwiseProduct(my);
        RowMatrix sxy = filter_valid(x.cwiseProduct(y), k) - mx.cwiseProduct(my);
        auto num = (2 * mx.array() * my.array() + c1) * (2 * sxy.array() + c2);
        auto den = (mx.array().square() + my.array().square() + c1) * (sxx.array() + syy.array() + c2);
        acc += (num / den).mean();
    }
    return acc / ref.bands;
}

MsamResult msam(const HsiCube& ref, const HsiCube& test) {
    if (!ref.same_shape(test)) throw shape_error("msam: shape mismatch");
    auto R = ref.unfold();
    auto T = test.unfold();
    MsamResult res;
    double acc = 0.0;
    long used = 0;
    for (Eigen::Index p = 0; p < ref.pixels(); ++p) {
        double nr = R.row(p).norm(), nt = T.row(p).norm();
        if (nr == 0.0 || nt == 0.0) {
            ++res.skipped;
            continue;
        }
        double c = std::clamp(R.row(p).dot(T.row(p)) / (nr * nt), -1.0, 1.0);
        acc += std::acos(c);
        ++used;
    }
    res.all_skipped = used == 0;
    res.value = used ? acc / double(used) : 0.0;
    return res;
}

QualityReport quality(const HsiCube& ref, const HsiCube& test) {
    QualityReport q;
    q.mpsnr = mpsnr(ref, test);
    if (ref.rows >= 11 && ref.cols >= 11)
        q.mssim = mssim(ref, test);
    else
        q.mssim = std::numeric_limits<double>::quiet_NaN();
    auto s = msam(ref, test);
    q.msam = s.value;
    q.msam_warning = s.all_skipped;
    return q;
}

// ---------------------------------------------------------------- synthesis

// Reflect-padded separable Gaussian blur of a plane.
static RowMatrix blur(const RowMatrix& a, double sigma) {
    const int radius = int(std::ceil(4 * sigma));
    auto k = gaussian_kernel(radius, sigma);
    auto reflect = [](int i, int n) {
        while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
        return i;
    };
    RowMatrix tmp(a.rows(), a.cols()), out(a.rows(), a.cols());
    const int R = int(a.rows()), C = int(a.cols());
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) {
            double s = 0;
            for (int j = -radius; j <= radius; ++j) s += k[j + radius] * a(r, reflect(c + j, C));
            tmp(r, c) = s;
        }
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) {
            double s = 0;
            for (int j = -radius; j <= radius; ++j) s += k[j + radius] * tmp(reflect(r + j, R), c);
            out(r, c) = s;
        }
    return out;
}

HsiCube synth_lowrank_cube(int rows, int cols, int bands, int rank, std::uint64_t seed) {
    if (rows <= 0 || cols <= 0 || bands <= 0) throw usage_error("synth: dimensions must be positive");
    const Eigen::Index P = Eigen::Index(rows) * cols;
    if (rank < 1 || rank > std::min<Eigen::Index>(P, bands)) throw usage_error("synth: rank out of range");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);

    // Spatial factor: constant column plus smooth random fields. Keeping the
    // constant in span(U) makes the final affine rescale rank-preserving.
    Eigen::MatrixXd S(P, rank);
    S.col(0).setOnes();
    for (int k = 1; k < rank; ++k) {
        RowMatrix f(rows, cols);
        for (Eigen::Index i = 0; i < P; ++i) f.data()[i] = n01(rng);
        f = blur(f, 1.5);
        S.col(k) = Eigen::Map<Eigen::VectorXd>(f.data(), P);
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qs(S);
    Eigen::MatrixXd U = qs.householderQ() * Eigen::MatrixXd::Identity(P, rank);

    Eigen::MatrixXd G(bands, rank);
    for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = n01(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qv(G);
    Eigen::MatrixXd V = qv.householderQ() * Eigen::MatrixXd::Identity(bands, rank);

    Eigen::MatrixXd M = U * V.transpose();
    double mn = M.minCoeff(), mx = M.maxCoeff();
    HsiCube out(rows, cols, bands);
    out.unfold() = mx > mn ? Eigen::MatrixXd((M.array() - mn) / (mx - mn)) : Eigen::MatrixXd::Constant(P, bands, 0.5);
    return out;
}

// A 3x5 bitmap font of block glyphs for the text mask.
static const char* kGlyphs[] = {"111101101101111", "110010010010111", "111001111100111", "111001111001111",
                                "101101111001001", "111100111001111", "111100111101111", "111001001001001",
                                "111101111101111", "111101111001111", "010101111101101", "110101110101110"};

MaskCube make_mask(int rows, int cols, int bands, MaskKind kind, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw usage_error("mask fraction must lie in (0,1)");
    if (rows <= 0 || cols <= 0 || bands <= 0) throw usage_error("mask dimensions must be positive");
    const long P = long(rows) * cols;
    std::mt19937_64 rng(seed);
    std::vector<std::uint8_t> plane(std::size_t(P), 1);
    long target = std::clamp<long>(std::lround(fraction * double(P)), 1, P - 1);

    switch (kind) {
        case MaskKind::RandomPixels: {
            std::vector<long> idx(static_cast<std::size_t>(P));
            std::iota(idx.begin(), idx.end(), 0);
            std::shuffle(idx.begin(), idx.end(), rng);
            for (long i = 0; i < target; ++i) plane[std::size_t(idx[std::size_t(i)])] = 0;
            break;
        }
        case MaskKind::Stripes: {
            // Whole columns only, so the fraction is quantized to 1/cols.
            int ncol = std::clamp(int(std::lround(fraction * cols)), 1, cols - 1 > 0 ? cols - 1 : 1);
            std::vector<int> cidx(static_cast<std::size_t>(cols));
            std::iota(cidx.begin(), cidx.end(), 0);
            std::shuffle(cidx.begin(), cidx.end(), rng);
            for (int j = 0; j < ncol; ++j)
                for (int r = 0; r < rows; ++r) plane[std::size_t(long(r) * cols + cidx[std::size_t(j)])] = 0;
            break;
        }
        case MaskKind::Block: {
            // Pixels ordered by Chebyshev distance from a random centre, ties
            // broken row-major; taking the first `target` gives a near-square block.
            std::uniform_int_distribution<int> ur(0, rows - 1), uc(0, cols - 1);
            int r0 = ur(rng), c0 = uc(rng);
            std::vector<long> idx(static_cast<std::size_t>(P));
            std::iota(idx.begin(), idx.end(), 0);
            auto d = [&](long i) { return std::max(std::abs(int(i / cols) - r0), std::abs(int(i % cols) - c0)); };
            std::stable_sort(idx.begin(), idx.end(), [&](long a, long b) { return d(a) < d(b); });
            for (long i = 0; i < target; ++i) plane[std::size_t(idx[std::size_t(i)])] = 0;
            break;
        }
        case MaskKind::Text: {
            std::uniform_int_distribution<int> ug(0, int(std::size(kGlyphs)) - 1);
            std::uniform_int_distribution<int> ur(0, std::max(0, rows - 5)), uc(0, std::max(0, cols - 3));
            long masked = 0;
            int guard = 0;
            while (masked < target && guard++ < 100000) {
                const char* g = kGlyphs[ug(rng)];
                int r0 = ur(rng), c0 = uc(rng);
                for (int k = 0; k < 15 && masked < target; ++k) {
                    int r = r0 + k / 3, c = c0 + k % 3;
                    if (g[k] != '1' || r >= rows || c >= cols) continue;
                    auto& v = plane[std::size_t(long(r) * cols + c)];
                    if (v) {
                        v = 0;
                        ++masked;
                    }
                }
            }
            break;
        }
    }
    MaskCube m(rows, cols, bands);
    for (int b = 0; b < bands; ++b) std::copy(plane.begin(), plane.end(), m.data.begin() + std::ptrdiff_t(b) * P);
    return m;
}

}  // namespace hsi
