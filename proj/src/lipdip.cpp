#include "hsinpaint/lipdip.hpp"

#include "hsinpaint/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

namespace hsi {

using nlohmann::json;

Tensor to_tensor(const HsiCube& cube) {
    Tensor t(cube.bands, cube.rows, cube.cols);
    t.data = cube.data;
    return t;
}

HsiCube to_cube(const Tensor& t, double lo, double hi) {
    HsiCube c(t.h, t.w, t.c);
    c.data = t.data;
    c.lo = lo;
    c.hi = hi;
    return c;
}

std::string layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::Activation: return "activation";
        case LayerKind::ModifiedBatchNorm: return "modified_batchnorm";
        case LayerKind::UpsampleScaled: return "upsample_scaled";
    }
    return "?";
}

LayerKind parse_layer_kind(const std::string& s) {
    for (auto k : {LayerKind::Conv2d, LayerKind::MaxPool, LayerKind::Activation, LayerKind::ModifiedBatchNorm,
                   LayerKind::UpsampleScaled})
        if (layer_kind_name(k) == s) return k;
    throw io_error("unknown layer kind '" + s + "'");
}

double Network::lip_bound() const {
    double b = 1.0;
    for (const auto& l : layers)
        if (l.spec.kind == LayerKind::Conv2d || l.spec.kind == LayerKind::ModifiedBatchNorm) b *= l.spec.lip_budget;
    return b;
}

std::size_t Network::n_params() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += std::size_t(l.weight.size() + l.bias.size());
    return n;
}

// ---------------------------------------------------------------- primitives

namespace {

struct ConvGeom {
    int in_c, in_h, in_w, out_c, out_h, out_w, k, s, p;
};

ConvGeom geom(const Layer& l) {
    return {l.in_c, l.in_h, l.in_w, l.out_c, l.out_h, l.out_w, l.spec.kernel, l.spec.stride, l.spec.kernel / 2};
}

Eigen::MatrixXd im2col(const Tensor& x, const ConvGeom& g) {
    Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(Eigen::Index(g.in_c) * g.k * g.k, Eigen::Index(g.out_h) * g.out_w);
    for (int i = 0; i < g.in_c; ++i)
        for (int ky = 0; ky < g.k; ++ky)
            for (int kx = 0; kx < g.k; ++kx) {
                Eigen::Index row = (Eigen::Index(i) * g.k + ky) * g.k + kx;
                for (int y = 0; y < g.out_h; ++y) {
                    int yy = y * g.s + ky - g.p;
                    if (yy < 0 || yy >= g.in_h) continue;
                    for (int xo = 0; xo < g.out_w; ++xo) {
                        int xx = xo * g.s + kx - g.p;
                        if (xx < 0 || xx >= g.in_w) continue;
                        cols(row, Eigen::Index(y) * g.out_w + xo) = x.at(i, yy, xx);
                    }
                }
            }
    return cols;
}

Tensor col2im(const Eigen::MatrixXd& cols, const ConvGeom& g) {
    Tensor x(g.in_c, g.in_h, g.in_w);
    for (int i = 0; i < g.in_c; ++i)
        for (int ky = 0; ky < g.k; ++ky)
            for (int kx = 0; kx < g.k; ++kx) {
                Eigen::Index row = (Eigen::Index(i) * g.k + ky) * g.k + kx;
                for (int y = 0; y < g.out_h; ++y) {
                    int yy = y * g.s + ky - g.p;
                    if (yy < 0 || yy >= g.in_h) continue;
                    for (int xo = 0; xo < g.out_w; ++xo) {
                        int xx = xo * g.s + kx - g.p;
                        if (xx < 0 || xx >= g.in_w) continue;
                        x.at(i, yy, xx) += cols(row, Eigen::Index(y) * g.out_w + xo);
                    }
                }
            }
    return x;
}

Eigen::Map<const RowMatrix> weight_matrix(const Layer& l) {
    return {l.weight.data(), l.out_c, Eigen::Index(l.in_c) * l.spec.kernel * l.spec.kernel};
}

void check_input(const Tensor& x, int c, int h, int w, const char* what) {
    if (x.c != c || x.h != h || x.w != w) throw shape_error(std::string(what) + ": input shape mismatch");
}

}  // namespace

Tensor conv2d(const Tensor& x, const Layer& l) {
    check_input(x, l.in_c, l.in_h, l.in_w, "conv2d");
    auto g = geom(l);
    Tensor y(g.out_c, g.out_h, g.out_w);
    Eigen::Map<RowMatrix>(y.data.data(), g.out_c, y.plane()).noalias() = weight_matrix(l) * im2col(x, g);
    return y;
}

Tensor conv2d_adjoint(const Tensor& y, const Layer& l) {
    check_input(y, l.out_c, l.out_h, l.out_w, "conv2d adjoint");
    auto g = geom(l);
    Eigen::Map<const RowMatrix> ym(y.data.data(), g.out_c, y.plane());
    return col2im(weight_matrix(l).transpose() * ym, g);
}

Tensor maxpool(const Tensor& x, int f) {
    if (f < 1) throw usage_error("maxpool: factor must be >= 1");
    Tensor y(x.c, x.h / f, x.w / f);
    for (int c = 0; c < y.c; ++c)
        for (int i = 0; i < y.h; ++i)
            for (int j = 0; j < y.w; ++j) {
                double m = -std::numeric_limits<double>::infinity();
                for (int a = 0; a < f; ++a)
                    for (int b = 0; b < f; ++b) m = std::max(m, x.at(c, i * f + a, j * f + b));
                y.at(c, i, j) = m;
            }
    return y;
}

Tensor leaky_relu(const Tensor& x, double slope) {
    Tensor y = x;
    y.data = x.data.unaryExpr([slope](double v) { return v > 0 ? v : slope * v; });
    return y;
}

Tensor modified_batchnorm(const Tensor& x, double L, const Eigen::VectorXd& bias) {
    if (bias.size() != x.c) throw shape_error("batchnorm: bias length must equal channel count");
    Tensor y = x;
    for (int c = 0; c < x.c; ++c) {
        auto seg = y.data.segment(Eigen::Index(c) * x.plane(), x.plane());
        double mean = seg.mean();
        seg = (L * (seg.array() - mean) + bias[c]).matrix();
    }
    return y;
}

Tensor upsample_scaled(const Tensor& x, int f) {
    if (f < 1) throw usage_error("upsample: factor must be >= 1");
    Tensor y(x.c, x.h * f, x.w * f);
    const double s = 1.0 / f;
    for (int c = 0; c < x.c; ++c)
        for (int i = 0; i < y.h; ++i)
            for (int j = 0; j < y.w; ++j) y.at(c, i, j) = s * x.at(c, i / f, j / f);
    return y;
}

// ---------------------------------------------------------------- spectral norm

static Eigen::VectorXd random_normal(Eigen::Index n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = g(rng);
    return v;
}

// Power iteration on A^T A starting from v (updated in place); returns ||A v||.
template <class Apply, class Adjoint>
static double power_iterate(Eigen::VectorXd& v, int iters, Apply&& A, Adjoint&& At) {
    double nv = v.norm();
    if (nv == 0.0) return 0.0;
    v /= nv;
    for (int k = 0; k < iters; ++k) {
        Eigen::VectorXd w = At(A(v));
        double nw = w.norm();
        if (nw == 0.0) return 0.0;
        v = w / nw;
    }
    return A(v).norm();
}

static double conv_power(const Layer& l, Eigen::VectorXd& v, int iters) {
    auto A = [&](const Eigen::VectorXd& x) {
        Tensor t(l.in_c, l.in_h, l.in_w);
        t.data = x;
        return conv2d(t, l).data;
    };
    auto At = [&](const Eigen::VectorXd& y) {
        Tensor t(l.out_c, l.out_h, l.out_w);
        t.data = y;
        return conv2d_adjoint(t, l).data;
    };
    return power_iterate(v, iters, A, At);
}

double power_iteration_sigma(const Layer& conv, int iters, std::uint64_t seed) {
    if (conv.spec.kind != LayerKind::Conv2d) throw usage_error("power iteration needs a conv layer");
    if (iters < 1) throw usage_error("power iteration: iters must be >= 1");
    Eigen::VectorXd v = random_normal(Eigen::Index(conv.in_c) * conv.in_h * conv.in_w, seed);
    return conv_power(conv, v, iters);
}

double power_iteration_sigma(const Eigen::MatrixXd& W, int iters, std::uint64_t seed) {
    if (iters < 1) throw usage_error("power iteration: iters must be >= 1");
    Eigen::VectorXd v = random_normal(W.cols(), seed);
    return power_iterate(
        v, iters, [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return W * x; },
        [&](const Eigen::VectorXd& y) -> Eigen::VectorXd { return W.transpose() * y; });
}

Eigen::MatrixXd conv_matrix(const Layer& l) {
    const Eigen::Index n = Eigen::Index(l.in_c) * l.in_h * l.in_w;
    Eigen::MatrixXd M(Eigen::Index(l.out_c) * l.out_h * l.out_w, n);
    Tensor e(l.in_c, l.in_h, l.in_w);
    for (Eigen::Index j = 0; j < n; ++j) {
        e.data.setZero();
        e.data[j] = 1.0;
        M.col(j) = conv2d(e, l).data;
    }
    return M;
}

double project_weights(Layer& l, double L, int iters, bool warm) {
    if (!(L > 0.0)) throw usage_error("projection: L must be positive");
    if (l.spec.kind != LayerKind::Conv2d) return 0.0;
    const Eigen::Index n = Eigen::Index(l.in_c) * l.in_h * l.in_w;
    if (!warm || l.power_vec.size() != n || l.power_vec.norm() == 0.0) l.power_vec = random_normal(n, 0x5eed);
    // A short power run underestimates sigma when the top singular values are
    // clustered, so keep iterating from the warm vector and rescale until a full
    // round no longer finds sigma above the budget.
    const double first = conv_power(l, l.power_vec, iters);
    double sigma = first;
    for (int round = 0; round < 64 && sigma > L * (1.0 + 1e-9); ++round) {
        l.weight *= L / sigma;
        sigma = conv_power(l, l.power_vec, iters);
    }
    return first;
}

// ---------------------------------------------------------------- building

std::vector<LayerSpec> dip_architecture(int bands, const std::vector<int>& widths, int levels, double lip) {
    const int n = int(widths.size());
    if (bands < 1 || n < 1) throw usage_error("architecture: need bands >= 1 and at least one hidden width");
    if (levels < 0 || 2 * levels > n) throw usage_error("architecture: need 2 * levels <= number of hidden widths");
    std::vector<LayerSpec> s;
    int prev = bands;
    for (int i = 0; i <= n; ++i) {
        int out = i < n ? widths[std::size_t(i)] : bands;
        LayerSpec conv;
        conv.kind = LayerKind::Conv2d;
        conv.in_ch = prev;
        conv.out_ch = out;
        conv.lip_budget = lip;
        s.push_back(conv);
        LayerSpec bn;
        bn.kind = LayerKind::ModifiedBatchNorm;
        bn.lip_budget = lip;
        s.push_back(bn);
        if (i == n) break;
        LayerSpec act;
        act.kind = LayerKind::Activation;
        s.push_back(act);
        if (i < levels) {
            LayerSpec pool;
            pool.kind = LayerKind::MaxPool;
            s.push_back(pool);
        } else if (i >= n - levels) {
            LayerSpec up;
            up.kind = LayerKind::UpsampleScaled;
            s.push_back(up);
        }
        prev = out;
    }
    return s;
}

Network build_network(const std::vector<LayerSpec>& specs, int in_c, int in_h, int in_w, std::uint64_t seed,
                      bool project) {
    if (in_c < 1 || in_h < 1 || in_w < 1) throw usage_error("network input shape must be positive");
    Network net;
    net.in_c = in_c;
    net.in_h = in_h;
    net.in_w = in_w;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    int c = in_c, h = in_h, w = in_w;
    for (const auto& sp : specs) {
        Layer l;
        l.spec = sp;
        l.in_c = c;
        l.in_h = h;
        l.in_w = w;
        switch (sp.kind) {
            case LayerKind::Conv2d: {
                if (sp.kernel < 1 || sp.kernel % 2 == 0) throw usage_error("conv kernels must be odd-sized");
                if (sp.stride != 1 && sp.stride != 2) throw usage_error("conv stride must be 1 or 2");
                if (sp.in_ch != 0 && sp.in_ch != c) throw usage_error("conv input channels do not chain");
                if (sp.out_ch < 1) throw usage_error("conv output channels must be positive");
                l.spec.in_ch = c;
                l.out_c = sp.out_ch;
                const int p = sp.kernel / 2;
                l.out_h = (h + 2 * p - sp.kernel) / sp.stride + 1;
                l.out_w = (w + 2 * p - sp.kernel) / sp.stride + 1;
                const Eigen::Index n = Eigen::Index(l.out_c) * c * sp.kernel * sp.kernel;
                const double scale = std::sqrt(2.0 / double(c * sp.kernel * sp.kernel));
                l.weight.resize(n);
                for (Eigen::Index i = 0; i < n; ++i) l.weight[i] = scale * g(rng);
                break;
            }
            case LayerKind::MaxPool:
                if (sp.factor < 1 || h % sp.factor || w % sp.factor)
                    throw usage_error("maxpool factor must divide the spatial extent");
                l.out_c = c;
                l.out_h = h / sp.factor;
                l.out_w = w / sp.factor;
                break;
            case LayerKind::UpsampleScaled:
                if (sp.factor < 1) throw usage_error("upsample factor must be >= 1");
                l.out_c = c;
                l.out_h = h * sp.factor;
                l.out_w = w * sp.factor;
                break;
            case LayerKind::Activation:
                if (!(std::abs(sp.slope) <= 1.0)) throw usage_error("activation slope must lie in [-1,1]");
                l.out_c = c;
                l.out_h = h;
                l.out_w = w;
                break;
            case LayerKind::ModifiedBatchNorm:
                l.out_c = c;
                l.out_h = h;
                l.out_w = w;
                l.bias = Eigen::VectorXd::Zero(c);
                break;
        }
        l.m_w = l.v_w = Eigen::VectorXd::Zero(l.weight.size());
        l.m_b = l.v_b = Eigen::VectorXd::Zero(l.bias.size());
        c = l.out_c;
        h = l.out_h;
        w = l.out_w;
        net.layers.push_back(std::move(l));
    }
    if (project)
        for (auto& l : net.layers)
            if (l.spec.kind == LayerKind::Conv2d) project_weights(l, l.spec.lip_budget, 200, false);
    return net;
}

Network make_dip_network(int bands, int rows, int cols, std::uint64_t seed, const std::vector<int>& widths,
                         int levels) {
    const int f = 1 << levels;
    if (rows % f || cols % f)
        throw usage_error("spatial extent must be divisible by 2^levels for the DIP encoder-decoder");
    return build_network(dip_architecture(bands, widths, levels), bands, rows, cols, seed);
}

// ---------------------------------------------------------------- forward / backward

static Tensor apply_layer(const Layer& l, const Tensor& x) {
    switch (l.spec.kind) {
        case LayerKind::Conv2d: return conv2d(x, l);
        case LayerKind::MaxPool: return maxpool(x, l.spec.factor);
        case LayerKind::Activation: return leaky_relu(x, l.spec.slope);
        case LayerKind::ModifiedBatchNorm: return modified_batchnorm(x, l.spec.lip_budget, l.bias);
        case LayerKind::UpsampleScaled: return upsample_scaled(x, l.spec.factor);
    }
    return x;
}

Tensor forward(const Network& net, const Tensor& input) {
    check_input(input, net.in_c, net.in_h, net.in_w, "network");
    Tensor x = input;
    for (const auto& l : net.layers) x = apply_layer(l, x);
    return x;
}

HsiCube forward(const Network& net, const HsiCube& input) {
    return to_cube(forward(net, to_tensor(input)), input.lo, input.hi);
}

double loss_and_grad(const Network& net, const Tensor& input, const Tensor& target, const Tensor& mask,
                     Gradients* grads, double prox_weight) {
    check_input(input, net.in_c, net.in_h, net.in_w, "network");
    std::vector<Tensor> acts;
    acts.reserve(net.layers.size() + 1);
    acts.push_back(input);
    for (const auto& l : net.layers) acts.push_back(apply_layer(l, acts.back()));
    const Tensor& out = acts.back();
    if (target.data.size() != out.data.size() || mask.data.size() != out.data.size())
        throw shape_error("loss: target/mask shape does not match the network output");
    Eigen::VectorXd r = mask.data.cwiseProduct(out.data - target.data);
    double loss = r.squaredNorm();
    const bool prox = prox_weight > 0.0;
    if (prox) {
        if (out.data.size() != input.data.size()) throw shape_error("loss: proximity term needs matching shapes");
        loss += 0.5 * prox_weight * (out.data - input.data).squaredNorm();
    }
    if (!grads) return loss;

    grads->weight.assign(net.layers.size(), Eigen::VectorXd());
    grads->bias.assign(net.layers.size(), Eigen::VectorXd());
    Tensor g = out;
    g.data = 2.0 * mask.data.cwiseProduct(r);
    if (prox) g.data += prox_weight * (out.data - input.data);

    for (std::size_t li = net.layers.size(); li-- > 0;) {
        const Layer& l = net.layers[li];
        const Tensor& x = acts[li];
        Tensor gx(l.in_c, l.in_h, l.in_w);
        switch (l.spec.kind) {
            case LayerKind::Conv2d: {
                auto geo = geom(l);
                Eigen::Map<const RowMatrix> gm(g.data.data(), l.out_c, g.plane());
                RowMatrix gw = gm * im2col(x, geo).transpose();
                grads->weight[li] = Eigen::Map<const Eigen::VectorXd>(gw.data(), gw.size());
                gx = col2im(weight_matrix(l).transpose() * gm, geo);
                break;
            }
            case LayerKind::MaxPool: {
                const int f = l.spec.factor;
                for (int c = 0; c < g.c; ++c)
                    for (int i = 0; i < g.h; ++i)
                        for (int j = 0; j < g.w; ++j) {
                            int ba = 0, bb = 0;
                            double m = -std::numeric_limits<double>::infinity();
                            for (int a = 0; a < f; ++a)
                                for (int b = 0; b < f; ++b)
                                    if (x.at(c, i * f + a, j * f + b) > m) {
                                        m = x.at(c, i * f + a, j * f + b);
                                        ba = a;
                                        bb = b;
                                    }
                            gx.at(c, i * f + ba, j * f + bb) += g.at(c, i, j);
                        }
                break;
            }
            case LayerKind::Activation:
                for (Eigen::Index i = 0; i < x.data.size(); ++i)
                    gx.data[i] = x.data[i] > 0 ? g.data[i] : l.spec.slope * g.data[i];
                break;
            case LayerKind::ModifiedBatchNorm: {
                grads->bias[li].resize(l.out_c);
                for (int c = 0; c < l.out_c; ++c) {
                    auto seg = g.data.segment(Eigen::Index(c) * g.plane(), g.plane());
                    grads->bias[li][c] = seg.sum();
                    gx.data.segment(Eigen::Index(c) * g.plane(), g.plane()) =
                        (l.spec.lip_budget * (seg.array() - seg.mean())).matrix();
                }
                break;
            }
            case LayerKind::UpsampleScaled: {
                const int f = l.spec.factor;
                const double s = 1.0 / f;
                for (int c = 0; c < g.c; ++c)
                    for (int i = 0; i < g.h; ++i)
                        for (int j = 0; j < g.w; ++j) gx.at(c, i / f, j / f) += s * g.at(c, i, j);
                break;
            }
        }
        g = std::move(gx);
    }
    return loss;
}

// ---------------------------------------------------------------- training

static void adam(Eigen::VectorXd& p, Eigen::VectorXd& m, Eigen::VectorXd& v, const Eigen::VectorXd& g,
                 const Network& net, double lr) {
    if (p.size() == 0) return;
    m = net.beta1 * m + (1.0 - net.beta1) * g;
    v = net.beta2 * v + (1.0 - net.beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(net.beta1, double(net.step));
    const double c2 = 1.0 - std::pow(net.beta2, double(net.step));
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + net.adam_eps);
}

TrainResult dip_train_steps(Network& net, const Tensor& input, const Tensor& target, const Tensor& mask, int steps,
                            double lr, double prox_weight) {
    if (steps < 1) throw usage_error("dip training: steps must be >= 1");
    if (!(lr >= 0.0)) throw usage_error("dip training: learning rate must be non-negative");
    TrainResult res;
    Gradients g;
    for (int s = 0; s < steps; ++s) {
        double loss = loss_and_grad(net, input, target, mask, &g, prox_weight);
        if (!std::isfinite(loss)) throw numerical_error("dip training: non-finite loss at step " + std::to_string(s + 1));
        res.loss.push_back(loss);
        ++net.step;
        for (std::size_t i = 0; i < net.layers.size(); ++i) {
            Layer& l = net.layers[i];
            if (l.weight.size()) adam(l.weight, l.m_w, l.v_w, g.weight[i], net, lr);
            if (l.bias.size()) adam(l.bias, l.m_b, l.v_b, g.bias[i], net, lr);
        }
        for (auto& l : net.layers)
            if (l.spec.kind == LayerKind::Conv2d) project_weights(l, l.spec.lip_budget, net.train_power_iters, true);
    }
    net.lr = lr;
    return res;
}

// ---------------------------------------------------------------- certification

LipschitzReport certify_lipschitz(const Network& net, int trials, std::uint64_t seed, int power_iters) {
    if (trials < 1) throw usage_error("certify: trials must be >= 1");
    LipschitzReport r;
    r.product_bound = 1.0;
    for (const auto& l : net.layers) {
        if (l.spec.kind == LayerKind::Conv2d) {
            Eigen::VectorXd v = l.power_vec.size() == Eigen::Index(l.in_c) * l.in_h * l.in_w && l.power_vec.norm() > 0
                                    ? l.power_vec
                                    : random_normal(Eigen::Index(l.in_c) * l.in_h * l.in_w, seed);
            double s = conv_power(l, v, power_iters);
            r.per_layer_sigma.push_back(s);
            r.product_bound *= s;
        } else if (l.spec.kind == LayerKind::ModifiedBatchNorm) {
            r.product_bound *= std::abs(l.spec.lip_budget);
        }
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    Tensor a(net.in_c, net.in_h, net.in_w), b = a;
    for (int t = 0; t < trials; ++t) {
        for (Eigen::Index i = 0; i < a.data.size(); ++i) a.data[i] = u01(rng);
        // Alternate far pairs with nearby pairs.
        if (t % 2 == 0) {
            for (Eigen::Index i = 0; i < b.data.size(); ++i) b.data[i] = u01(rng);
        } else {
            double eps = std::pow(10.0, -1.0 - 3.0 * u01(rng));
            for (Eigen::Index i = 0; i < b.data.size(); ++i) b.data[i] = a.data[i] + eps * g(rng);
        }
        double den = (a.data - b.data).norm();
        if (den == 0.0) continue;
        double num = (forward(net, a).data - forward(net, b).data).norm();
        r.empirical_ratio = std::max(r.empirical_ratio, num / den);
    }
    // The product uses power-iteration estimates, hence the 1e-4 slack.
    r.pass = r.empirical_ratio <= 1.0 + 1e-4 && r.product_bound <= 1.0 + 1e-4;
    return r;
}

std::string LipschitzReport::to_json() const {
    json j = {{"empirical_ratio", empirical_ratio},
              {"product_bound", product_bound},
              {"per_layer_sigma", per_layer_sigma},
              {"pass", pass}};
    return j.dump(2);
}

// ---------------------------------------------------------------- checkpoint

void save_network(const Network& net, const std::filesystem::path& path) {
    json layers = json::array();
    std::string bytes;
    auto put = [&](const Eigen::VectorXd& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            auto u = std::bit_cast<std::uint64_t>(v[i]);
            if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
            char buf[8];
            std::memcpy(buf, &u, 8);
            bytes.append(buf, 8);
        }
    };
    for (const auto& l : net.layers) {
        layers.push_back({{"kind", layer_kind_name(l.spec.kind)},
                          {"in_ch", l.spec.in_ch},
                          {"out_ch", l.spec.out_ch},
                          {"kernel", l.spec.kernel},
                          {"stride", l.spec.stride},
                          {"factor", l.spec.factor},
                          {"slope", l.spec.slope},
                          {"lip_budget", l.spec.lip_budget},
                          {"n_weight", l.weight.size()},
                          {"n_bias", l.bias.size()}});
        put(l.weight);
        put(l.bias);
    }
    json h = {{"format", "lipdip-f64le"},
              {"input", {net.in_c, net.in_h, net.in_w}},
              {"lr", net.lr},
              {"step", net.step},
              {"layers", layers}};
    std::ofstream hout(header_path(path), std::ios::trunc);
    if (!hout) throw io_error("cannot write " + header_path(path).string());
    hout << h.dump(2) << "\n";
    std::ofstream out(payload_path(path), std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + payload_path(path).string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
}

Network load_network(const std::filesystem::path& path) {
    std::ifstream hin(header_path(path));
    if (!hin) throw io_error("cannot open " + header_path(path).string());
    json h;
    std::vector<LayerSpec> specs;
    std::vector<std::pair<long, long>> sizes;
    int in_c, in_h, in_w;
    double lr;
    long step;
    try {
        hin >> h;
        auto in = h.at("input");
        in_c = in.at(0).get<int>();
        in_h = in.at(1).get<int>();
        in_w = in.at(2).get<int>();
        lr = h.value("lr", 0.1);
        step = h.value("step", 0L);
        for (const auto& lj : h.at("layers")) {
            LayerSpec s;
            s.kind = parse_layer_kind(lj.at("kind").get<std::string>());
            s.in_ch = lj.value("in_ch", 0);
            s.out_ch = lj.value("out_ch", 0);
            s.kernel = lj.value("kernel", 3);
            s.stride = lj.value("stride", 1);
            s.factor = lj.value("factor", 2);
            s.slope = lj.value("slope", 0.2);
            s.lip_budget = lj.value("lip_budget", 1.0);
            specs.push_back(s);
            sizes.emplace_back(lj.value("n_weight", 0L), lj.value("n_bias", 0L));
        }
    } catch (const json::exception& e) {
        throw io_error(std::string("bad network header: ") + e.what());
    }
    Network net = build_network(specs, in_c, in_h, in_w, 0, false);
    net.lr = lr;
    net.step = 0;  // optimizer moments are not checkpointed
    (void)step;
    std::ifstream in(payload_path(path), std::ios::binary);
    if (!in) throw io_error("cannot open " + payload_path(path).string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t off = 0;
    auto get = [&](Eigen::VectorXd& v, long n) {
        if (n != v.size()) throw io_error("network payload does not match the topology");
        if (off + std::size_t(n) * 8 > bytes.size()) throw io_error("network payload is truncated");
        for (long i = 0; i < n; ++i) {
            std::uint64_t u;
            std::memcpy(&u, bytes.data() + off, 8);
            off += 8;
            if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
            v[i] = std::bit_cast<double>(u);
            if (!std::isfinite(v[i])) throw io_error("non-finite network parameter");
        }
    };
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        get(net.layers[i].weight, sizes[i].first);
        get(net.layers[i].bias, sizes[i].second);
    }
    if (off != bytes.size()) throw io_error("network payload has trailing bytes");
    return net;
}

}  // namespace hsi
