#pragma once

#include "hsinpaint/cube.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hsi {

// Feature map, channel-major with row-major planes (same layout as HsiCube).
struct Tensor {
    int c = 0;
    int h = 0;
    int w = 0;
    Eigen::VectorXd data;

    Tensor() = default;
    Tensor(int c_, int h_, int w_, double fill = 0.0)
        : c(c_), h(h_), w(w_), data(Eigen::VectorXd::Constant(Eigen::Index(c_) * h_ * w_, fill)) {}
    Eigen::Index plane() const { return Eigen::Index(h) * w; }
    double& at(int ch, int y, int x) { return data[(Eigen::Index(ch) * h + y) * w + x]; }
    double at(int ch, int y, int x) const { return data[(Eigen::Index(ch) * h + y) * w + x]; }
};

Tensor to_tensor(const HsiCube& cube);
HsiCube to_cube(const Tensor& t, double lo = 0.0, double hi = 1.0);

enum class LayerKind { Conv2d, MaxPool, Activation, ModifiedBatchNorm, UpsampleScaled };
std::string layer_kind_name(LayerKind k);
LayerKind parse_layer_kind(const std::string& s);

struct LayerSpec {
    LayerKind kind = LayerKind::Conv2d;
    int in_ch = 0;   // conv only
    int out_ch = 0;  // conv only
    int kernel = 3;
    int stride = 1;
    int factor = 2;        // pooling / upsampling
    double slope = 0.2;    // LeakyReLU
    double lip_budget = 1.0;  // conv projection target; scale L of the batch norm
};

struct Layer {
    LayerSpec spec;
    Eigen::VectorXd weight;  // conv: out x in x k x k, row-major
    Eigen::VectorXd bias;    // batch norm: one per channel
    // Resolved input geometry, fixed when the network is built.
    int in_c = 0, in_h = 0, in_w = 0;
    int out_c = 0, out_h = 0, out_w = 0;
    Eigen::VectorXd power_vec;  // warm start for the training-time power iteration
    // Adam moments for weight and bias.
    Eigen::VectorXd m_w, v_w, m_b, v_b;

    bool has_params() const { return weight.size() + bias.size() > 0; }
};

struct Network {
    std::vector<Layer> layers;
    int in_c = 0, in_h = 0, in_w = 0;
    long step = 0;
    double lr = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int train_power_iters = 5;

    // Product of the declared per-layer budgets.
    double lip_bound() const;
    int out_c() const { return layers.empty() ? in_c : layers.back().out_c; }
    std::size_t n_params() const;
};

// Builds a network from layer specs for a fixed input geometry; conv weights
// are He-initialised and projected onto their budgets.
Network build_network(const std::vector<LayerSpec>& specs, int in_c, int in_h, int in_w, std::uint64_t seed,
                      bool project = true);

// Encoder-decoder without skips: bands -> widths... -> bands with `levels`
// max-pool steps mirrored by scaled upsampling.
std::vector<LayerSpec> dip_architecture(int bands, const std::vector<int>& widths, int levels, double lip = 1.0);
Network make_dip_network(int bands, int rows, int cols, std::uint64_t seed,
                         const std::vector<int>& widths = {16, 32, 32, 16}, int levels = 2);

Tensor forward(const Network& net, const Tensor& input);
HsiCube forward(const Network& net, const HsiCube& input);

struct Gradients {
    std::vector<Eigen::VectorXd> weight;
    std::vector<Eigen::VectorXd> bias;
};

// loss = ||mask .* (f(input) - target)||^2 + prox_weight/2 ||f(input) - input||^2
double loss_and_grad(const Network& net, const Tensor& input, const Tensor& target, const Tensor& mask,
                     Gradients* grads, double prox_weight = 0.0);

// Layer primitives (exposed for tests).
Tensor conv2d(const Tensor& x, const Layer& layer);
Tensor conv2d_adjoint(const Tensor& y, const Layer& layer);
Tensor maxpool(const Tensor& x, int factor);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor modified_batchnorm(const Tensor& x, double L, const Eigen::VectorXd& bias);
Tensor upsample_scaled(const Tensor& x, int factor);

// Largest singular value of the conv operator via apply / adjoint-apply.
double power_iteration_sigma(const Layer& conv, int iters, std::uint64_t seed);
double power_iteration_sigma(const Eigen::MatrixXd& W, int iters, std::uint64_t seed);
// Materialised operator matrix of a conv layer (tests only; small grids).
Eigen::MatrixXd conv_matrix(const Layer& conv);

// Scales the weights by 1 / max(1, sigma / L); returns the sigma estimate.
double project_weights(Layer& layer, double L, int iters, bool warm);

struct TrainResult {
    std::vector<double> loss;
};
TrainResult dip_train_steps(Network& net, const Tensor& input, const Tensor& target, const Tensor& mask, int steps,
                            double lr, double prox_weight = 0.0);

struct LipschitzReport {
    double empirical_ratio = 0.0;
    double product_bound = 0.0;
    std::vector<double> per_layer_sigma;  // conv layers, in order
    bool pass = false;
    std::string to_json() const;
};
LipschitzReport certify_lipschitz(const Network& net, int trials, std::uint64_t seed, int power_iters = 50);

void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace hsi
