#include "support.hpp"

#include "hsinpaint/errors.hpp"
#include "hsinpaint/lipdip.hpp"

#include <doctest.h>

using namespace hsi;
using hsitest::Gen;

namespace {

LayerSpec conv_spec(int in, int out, int k = 3, int stride = 1) {
    LayerSpec s;
    s.kind = LayerKind::Conv2d;
    s.in_ch = in;
    s.out_ch = out;
    s.kernel = k;
    s.stride = stride;
    return s;
}

LayerSpec plain(LayerKind k) {
    LayerSpec s;
    s.kind = k;
    return s;
}

Tensor random_tensor(Gen& g, int c, int h, int w) {
    Tensor t(c, h, w);
    for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data[i] = g.normal();
    return t;
}

// Direct zero-padded cross-correlation, written loop by loop.
Tensor naive_conv(const Tensor& x, const Layer& l) {
    const int k = l.spec.kernel, s = l.spec.stride, p = k / 2;
    Tensor y(l.out_c, l.out_h, l.out_w);
    for (int o = 0; o < l.out_c; ++o)
        for (int i = 0; i < l.out_h; ++i)
            for (int j = 0; j < l.out_w; ++j) {
                double acc = 0.0;
                for (int c = 0; c < x.c; ++c)
                    for (int a = 0; a < k; ++a)
                        for (int b = 0; b < k; ++b) {
                            int yy = i * s + a - p, xx = j * s + b - p;
                            if (yy < 0 || yy >= x.h || xx < 0 || xx >= x.w) continue;
                            acc += l.weight[((Eigen::Index(o) * x.c + c) * k + a) * k + b] * x.at(c, yy, xx);
                        }
                y.at(o, i, j) = acc;
            }
    return y;
}

Network small_dip(Gen& g, std::uint64_t seed) {
    Network net = build_network(dip_architecture(2, {3, 4, 4, 3}, 2), 2, 4, 4, seed);
    for (auto& l : net.layers)
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = 0.1 * g.normal();
    return net;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

}  // namespace

TEST_SUITE("lipdip") {

TEST_CASE("zero weights give a zero output") {
    Gen g(61);
    Network net = small_dip(g, 1);
    for (auto& l : net.layers) {
        l.weight.setZero();
        l.bias.setZero();
    }
    CHECK(forward(net, random_tensor(g, 2, 4, 4)).data.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("unit 1x1 convolution is the identity") {
    Gen g(62);
    Network net = build_network({conv_spec(1, 1, 1)}, 1, 5, 3, 0, false);
    net.layers[0].weight.setOnes();
    Tensor x = random_tensor(g, 1, 5, 3);
    CHECK(forward(net, x).data == x.data);
}

TEST_CASE("conv layers match a direct convolution oracle") {
    Gen g(63);
    for (int stride : {1, 2}) {
        Network net = build_network({conv_spec(2, 3, 3, stride), plain(LayerKind::Activation), conv_spec(3, 2, 3, 1)},
                                    2, 4, 4, 5, false);
        Tensor x = random_tensor(g, 2, 4, 4);
        Tensor h = naive_conv(x, net.layers[0]);
        for (auto& v : h.data) v = v > 0 ? v : 0.2 * v;
        Tensor ref = naive_conv(h, net.layers[2]);
        CHECK((forward(net, x).data - ref.data).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("conv adjoint satisfies <Ax, y> = <x, A^T y> (property)") {
    Gen g(64);
    for (int t = 0; t < 20; ++t) {
        int k = 2 * g.integer(0, 2) + 1, stride = g.integer(1, 2);
        int h = g.integer(2, 7), w = g.integer(2, 7), ci = g.integer(1, 3), co = g.integer(1, 3);
        Network net = build_network({conv_spec(ci, co, k, stride)}, ci, h, w, std::uint64_t(t), false);
        const Layer& l = net.layers[0];
        Tensor x = random_tensor(g, ci, h, w), y = random_tensor(g, l.out_c, l.out_h, l.out_w);
        CHECK(conv2d(x, l).data.dot(y.data) == doctest::Approx(x.data.dot(conv2d_adjoint(y, l).data)).epsilon(1e-12));
    }
}

TEST_CASE("loss is zero at the target and under an empty mask") {
    Gen g(65);
    Network net = small_dip(g, 2);
    Tensor x = random_tensor(g, 2, 4, 4);
    Tensor ones(2, 4, 4, 1.0), zeros(2, 4, 4, 0.0);
    Gradients gr;
    CHECK(loss_and_grad(net, x, forward(net, x), ones, &gr) == 0.0);
    for (const auto& v : gr.weight) CHECK((v.size() == 0 || v.cwiseAbs().maxCoeff() == 0.0));
    CHECK(loss_and_grad(net, x, random_tensor(g, 2, 4, 4), zeros, &gr) == 0.0);
    for (const auto& v : gr.bias) CHECK((v.size() == 0 || v.cwiseAbs().maxCoeff() == 0.0));
    CHECK_THROWS_AS(loss_and_grad(net, x, Tensor(2, 4, 3), ones, &gr), Error);
}

TEST_CASE("every parameter gradient matches central differences") {
    Gen g(66);
    for (double prox : {0.0, 0.7}) {
        Network net = small_dip(g, 3);
        // Cube-range data keeps the loss, and with it the difference round-off, small.
        Tensor x(2, 4, 4), target(2, 4, 4), mask(2, 4, 4);
        for (auto& v : x.data) v = g.uniform();
        for (auto& v : target.data) v = g.uniform();
        for (auto& v : mask.data) v = g.uniform() < 0.7 ? 1.0 : 0.0;
        Gradients gr;
        loss_and_grad(net, x, target, mask, &gr, prox);
        const double eps = 1e-5;
        double worst = 0.0;
        for (std::size_t li = 0; li < net.layers.size(); ++li) {
            for (Eigen::VectorXd* p : {&net.layers[li].weight, &net.layers[li].bias}) {
                const Eigen::VectorXd& gp = p == &net.layers[li].weight ? gr.weight[li] : gr.bias[li];
                for (Eigen::Index i = 0; i < p->size(); ++i) {
                    const double keep = (*p)[i];
                    (*p)[i] = keep + eps;
                    double fp = loss_and_grad(net, x, target, mask, nullptr, prox);
                    (*p)[i] = keep - eps;
                    double fm = loss_and_grad(net, x, target, mask, nullptr, prox);
                    (*p)[i] = keep;
                    worst = std::max(worst, rel_err(gp[i], (fp - fm) / (2 * eps)));
                }
            }
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("power iteration oracle values") {
    Eigen::MatrixXd D = Eigen::Vector2d(2.0, 1.0).asDiagonal();
    CHECK(power_iteration_sigma(D, 50, 1) == doctest::Approx(2.0).epsilon(1e-6));
    Eigen::VectorXd u = Eigen::Vector3d(1, 2, 2) / 3.0, v = Eigen::Vector2d(0.6, 0.8);
    CHECK(power_iteration_sigma(Eigen::MatrixXd(u * v.transpose()), 50, 1) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(power_iteration_sigma(Eigen::MatrixXd::Zero(3, 3), 10, 1) == 0.0);

    Network net = build_network({conv_spec(1, 1, 3)}, 1, 8, 8, 7, false);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(conv_matrix(net.layers[0]));
    CHECK(std::abs(power_iteration_sigma(net.layers[0], 2000, 3) - svd.singularValues()[0]) < 1e-4);
    double prev = 0.0;
    for (int it : {1, 2, 5, 10, 50}) {
        double s = power_iteration_sigma(net.layers[0], it, 3);
        CHECK(s >= prev - 1e-12);
        prev = s;
    }
}

TEST_CASE("projection scales by 1 / max(1, sigma / L)") {
    auto one_by_one = [](double w) {
        Network n = build_network({conv_spec(1, 1, 1)}, 1, 3, 3, 0, false);
        n.layers[0].weight.setConstant(w);
        return n.layers[0];
    };
    Layer a = one_by_one(2.0);
    CHECK(project_weights(a, 1.0, 20, false) == doctest::Approx(2.0));
    CHECK(a.weight[0] == doctest::Approx(1.0));
    Layer b = one_by_one(0.8);
    project_weights(b, 1.0, 20, false);
    CHECK(b.weight[0] == 0.8);
    Layer c = one_by_one(2.0);
    project_weights(c, 0.5, 20, false);
    CHECK(c.weight[0] == doctest::Approx(0.5));

    Gen g(67);
    Network net = build_network({conv_spec(3, 4, 3)}, 3, 6, 6, 9, false);
    Layer l = net.layers[0];
    l.weight *= 5.0;
    project_weights(l, 1.0, 50, false);
    Eigen::VectorXd once = l.weight;
    project_weights(l, 1.0, 50, true);
    CHECK((l.weight - once).cwiseAbs().maxCoeff() < 1e-6);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(conv_matrix(l));
    CHECK(svd.singularValues()[0] <= 1.0 + 1e-4);
}

TEST_CASE("modified batch norm centres without variance division") {
    Tensor x(1, 1, 2);
    x.data << 3.0, 3.0;
    CHECK(modified_batchnorm(x, 1.0, Eigen::VectorXd::Zero(1)).data.cwiseAbs().maxCoeff() == 0.0);
    x.data << 1.0, -1.0;
    CHECK(modified_batchnorm(x, 1.0, Eigen::VectorXd::Zero(1)).data == x.data);
    Tensor y(2, 1, 2);
    y.data << 2.0, 0.0, 2.0, 0.0;
    Eigen::VectorXd e(4);
    e << 1.5, 0.5, 1.5, 0.5;
    CHECK((modified_batchnorm(y, 0.5, Eigen::VectorXd::Ones(2)).data - e).norm() < 1e-15);
}

TEST_CASE("scaled upsampling preserves the norm") {
    Gen g(68);
    Tensor x = random_tensor(g, 2, 3, 4);
    CHECK(upsample_scaled(x, 1).data == x.data);
    Tensor one(1, 1, 1, 2.0);
    Tensor up = upsample_scaled(one, 2);
    CHECK(up.data == Eigen::VectorXd::Ones(4));
    CHECK(up.data.norm() == doctest::Approx(2.0));
    for (int f : {2, 3, 4}) CHECK(upsample_scaled(x, f).data.norm() / x.data.norm() == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("pooling and activation are 1-Lipschitz (property)") {
    Gen g(69);
    for (int t = 0; t < 100; ++t) {
        Tensor a = random_tensor(g, 2, 4, 6), b = random_tensor(g, 2, 4, 6);
        CHECK((maxpool(a, 2).data - maxpool(b, 2).data).norm() <= (a.data - b.data).norm() + 1e-12);
        CHECK((leaky_relu(a, 0.2).data - leaky_relu(b, 0.2).data).norm() <= (a.data - b.data).norm() + 1e-12);
    }
}

TEST_CASE("training with zero learning rate leaves weights unchanged") {
    Gen g(70);
    Network net = small_dip(g, 4);
    Network before = net;
    Tensor x = random_tensor(g, 2, 4, 4), t = random_tensor(g, 2, 4, 4), m(2, 4, 4, 1.0);
    auto r = dip_train_steps(net, x, t, m, 5, 0.0);
    for (std::size_t i = 0; i < net.layers.size(); ++i) CHECK(net.layers[i].weight == before.layers[i].weight);
    for (std::size_t k = 1; k < r.loss.size(); ++k) CHECK(r.loss[k] == r.loss[0]);
    CHECK_THROWS_AS(dip_train_steps(net, x, t, m, 0, 0.1), Error);
}

TEST_CASE("1x1 fit halves the loss and every step stays 1-Lipschitz") {
    Gen g(71);
    Network net = build_network({conv_spec(3, 3, 1)}, 3, 6, 6, 11);
    Eigen::MatrixXd A = 0.5 * g.unit_columns(3, 3);
    Tensor x = random_tensor(g, 3, 6, 6), target = x, mask(3, 6, 6, 1.0);
    Eigen::Map<RowMatrix>(target.data.data(), 3, 36) = A * Eigen::Map<RowMatrix>(x.data.data(), 3, 36);
    std::vector<double> loss;
    for (int s = 0; s < 200; ++s) {
        auto r = dip_train_steps(net, x, target, mask, 1, 0.01);
        loss.push_back(r.loss[0]);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(conv_matrix(net.layers[0]));
        REQUIRE(svd.singularValues()[0] <= 1.0 + 1e-4);
    }
    CHECK(loss.back() <= 0.5 * loss.front());
}

TEST_CASE("certification: zero net, fresh net, and a scaled layer") {
    Gen g(72);
    Network zero = small_dip(g, 5);
    for (auto& l : zero.layers) l.weight.setZero();
    CHECK(certify_lipschitz(zero, 20, 1).empirical_ratio == 0.0);

    Network net = make_dip_network(4, 8, 8, 13);
    auto ok = certify_lipschitz(net, 100, 2);
    CHECK(ok.pass);
    CHECK(ok.product_bound <= 1.0 + 1e-4);
    // Composition: the network ratio never beats the product of layer norms.
    CHECK(ok.empirical_ratio <= ok.product_bound + 1e-4);

    // A single 1x1 convolution makes the x3 violation visible end to end.
    Network one = build_network({conv_spec(2, 2, 1)}, 2, 4, 4, 3);
    one.layers[0].weight *= 3.0;
    auto bad = certify_lipschitz(one, 100, 2);
    CHECK_FALSE(bad.pass);
    CHECK(bad.empirical_ratio > 1.0);
    net.layers[0].weight *= 3.0;
    CHECK_FALSE(certify_lipschitz(net, 100, 2).pass);
}

TEST_CASE("architecture has no skips and a unit bound") {
    auto specs = dip_architecture(16, {16, 32, 32, 16}, 2);
    int convs = 0, pools = 0, ups = 0;
    for (const auto& s : specs) {
        convs += s.kind == LayerKind::Conv2d;
        pools += s.kind == LayerKind::MaxPool;
        ups += s.kind == LayerKind::UpsampleScaled;
    }
    CHECK(convs == 5);
    CHECK(pools == 2);
    CHECK(ups == 2);
    Network net = build_network(specs, 16, 8, 8, 1);
    CHECK(net.lip_bound() <= 1.0);
    CHECK(net.out_c() == 16);
    CHECK_THROWS_AS(make_dip_network(4, 6, 8, 1), Error);
    CHECK_THROWS_AS(dip_architecture(4, {8, 8}, 2), Error);
}

TEST_CASE("checkpoint round trip preserves the function") {
    Gen g(73);
    Network net = small_dip(g, 6);
    auto dir = hsitest::temp_dir("net");
    save_network(net, dir / "w");
    Network back = load_network(dir / "w");
    Tensor x = random_tensor(g, 2, 4, 4);
    CHECK(forward(back, x).data == forward(net, x).data);
    CHECK(back.n_params() == net.n_params());
    std::filesystem::resize_file(payload_path(dir / "w"), 16);
    CHECK_THROWS_AS(load_network(dir / "w"), Error);
}

}  // TEST_SUITE
