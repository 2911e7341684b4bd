#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "agsd/data.hpp"
#include "agsd/nn.hpp"
#include "agsd/rng.hpp"

using agsd::Matrix;
namespace nn = agsd::nn;
namespace rng = agsd::rng;

namespace {

nn::ParamVector random_params(const nn::ModelSpec& spec, std::uint64_t seed) {
    nn::ParamVector p = nn::init_params(spec, seed);
    rng::Rng r(seed + 1);
    for (double& v : p.values) v += 0.1 * r.normal(); // nonzero biases too
    return p;
}

Matrix random_inputs(int rows, int cols, std::uint64_t seed) {
    Matrix m(rows, cols);
    rng::Rng r(seed);
    for (double& v : m.data) v = r.uniform();
    return m;
}

Matrix random_onehot(int rows, int classes, std::uint64_t seed) {
    rng::Rng r(seed);
    std::vector<int> labels(static_cast<std::size_t>(rows));
    for (int& y : labels) y = static_cast<int>(r.uniform_below(static_cast<std::uint64_t>(classes)));
    return nn::onehot(labels, classes);
}

// Central finite difference of the loss w.r.t. every parameter.
nn::ParamVector fd_grad_params(const nn::ParamVector& p, const Matrix& x, const Matrix& t,
                               nn::LossKind kind, double h) {
    nn::ParamVector g = p;
    nn::ParamVector probe = p;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
        probe.values[i] = p.values[i] + h;
        const double up = nn::loss_value(probe, x, t, kind);
        probe.values[i] = p.values[i] - h;
        const double dn = nn::loss_value(probe, x, t, kind);
        probe.values[i] = p.values[i];
        g.values[i] = (up - dn) / (2.0 * h);
    }
    return g;
}

Matrix fd_grad_inputs(const nn::ParamVector& p, const Matrix& x, const Matrix& t,
                      nn::LossKind kind, double h) {
    Matrix g = x;
    Matrix probe = x;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        probe.data[i] = x.data[i] + h;
        const double up = nn::loss_value(p, probe, t, kind);
        probe.data[i] = x.data[i] - h;
        const double dn = nn::loss_value(p, probe, t, kind);
        probe.data[i] = x.data[i];
        g.data[i] = (up - dn) / (2.0 * h);
    }
    return g;
}

double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::max(std::sqrt(na), std::sqrt(nb));
    return denom > 0.0 ? std::sqrt(diff) / denom : std::sqrt(diff);
}

} // namespace

TEST_CASE("model spec validation and parameter counting") {
    nn::ModelSpec spec{{4, 6, 3}};
    spec.validate();
    CHECK(spec.input_dim() == 4);
    CHECK(spec.num_classes() == 3);
    CHECK(spec.num_layers() == 2);
    CHECK(spec.param_count() == 4u * 6 + 6 + 6u * 3 + 3);

    CHECK_THROWS_AS((nn::ModelSpec{{5}}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((nn::ModelSpec{{5, 0, 2}}.validate()), std::invalid_argument);
}

TEST_CASE("flatten is the exact inverse of unflatten") {
    const nn::ModelSpec spec{{3, 5, 4, 2}};
    const nn::ParamVector p = random_params(spec, 11);
    const auto layers = nn::unflatten(p);
    REQUIRE(layers.size() == 3);
    CHECK(layers[0].w.rows == 5);
    CHECK(layers[0].w.cols == 3);
    CHECK(layers[2].b.size() == 2);

    const nn::ParamVector back = nn::flatten(spec, layers);
    CHECK(back == p);
}

TEST_CASE("init_params is seeded and leaves biases at zero") {
    const nn::ModelSpec spec{{4, 3, 2}};
    const auto a = nn::init_params(spec, 5);
    const auto b = nn::init_params(spec, 5);
    const auto c = nn::init_params(spec, 6);
    CHECK(a == b);
    CHECK(a.values != c.values);

    const auto layers = nn::unflatten(a);
    for (const auto& l : layers)
        for (double bias : l.b) CHECK(bias == 0.0);
}

TEST_CASE("forward emits probability rows") {
    const nn::ModelSpec spec{{4, 6, 3}};
    const auto p = random_params(spec, 2);
    const Matrix x = random_inputs(5, 4, 3);
    const auto pred = nn::forward(p, x);
    REQUIRE(pred.probs.rows == 5);
    REQUIRE(pred.probs.cols == 3);
    for (int r = 0; r < 5; ++r) {
        double sum = 0.0;
        for (int c = 0; c < 3; ++c) {
            CHECK(pred.probs.at(r, c) >= 0.0);
            sum += pred.probs.at(r, c);
        }
        CHECK(sum == Catch::Approx(1.0).margin(1e-12));
    }
    CHECK_THROWS_AS(nn::forward(p, random_inputs(2, 3, 4)), std::invalid_argument);
}

TEST_CASE("predictions are invariant to a constant logit shift") {
    // A single linear layer: bumping every output bias by the same constant
    // shifts all logits equally, which softmax must cancel.
    const nn::ModelSpec spec{{3, 4}};
    nn::ParamVector p = random_params(spec, 7);
    const Matrix x = random_inputs(6, 3, 8);
    const auto base = nn::forward(p, x);

    auto layers = nn::unflatten(p);
    for (double& b : layers[0].b) b += 100.0;
    const auto shifted = nn::forward(nn::flatten(spec, layers), x);
    for (std::size_t i = 0; i < base.probs.data.size(); ++i)
        CHECK(shifted.probs.data[i] == Catch::Approx(base.probs.data[i]).margin(1e-9));
}

TEST_CASE("softmax survives large logits") {
    std::vector<double> z{1000.0, 1000.5, 999.0};
    nn::softmax_row(z);
    double sum = 0.0;
    for (double v : z) {
        CHECK(std::isfinite(v));
        sum += v;
    }
    CHECK(sum == Catch::Approx(1.0).margin(1e-12));
    CHECK(z[1] > z[0]);
    CHECK(z[0] > z[2]);
}

TEST_CASE("onehot rejects out-of-range labels") {
    const Matrix t = nn::onehot({0, 2, 1}, 3);
    CHECK(t.at(0, 0) == 1.0);
    CHECK(t.at(1, 2) == 1.0);
    CHECK(t.at(2, 1) == 1.0);
    CHECK_THROWS_AS(nn::onehot({3}, 3), std::invalid_argument);
    CHECK_THROWS_AS(nn::onehot({-1}, 3), std::invalid_argument);
}

TEST_CASE("analytic gradients match central finite differences") {
    const nn::ModelSpec spec{{4, 6, 5, 3}};
    const double h = 1e-4;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto p = random_params(spec, 100 + seed);
        const Matrix x = random_inputs(3, 4, 200 + seed);
        const Matrix t = random_onehot(3, 3, 300 + seed);
        for (nn::LossKind kind : {nn::LossKind::cross_entropy, nn::LossKind::agsd}) {
            const auto ag = nn::grad_wrt_params(p, x, t, kind);
            const auto fg = fd_grad_params(p, x, t, kind, h);
            CHECK(rel_error(ag.values, fg.values) < 1e-4);

            const Matrix ai = nn::grad_wrt_inputs(p, x, t, kind);
            const Matrix fi = fd_grad_inputs(p, x, t, kind, h);
            CHECK(rel_error(ai.data, fi.data) < 1e-4);
        }
    }
}

TEST_CASE("all-zero model yields a finite uniform-softmax gradient") {
    const nn::ModelSpec spec{{3, 4, 2}};
    nn::ParamVector p;
    p.spec = spec;
    p.values.assign(spec.param_count(), 0.0);
    const Matrix x(2, 3, 0.0);
    const Matrix t = nn::onehot({0, 1}, 2);
    const Matrix g = nn::grad_wrt_inputs(p, x, t, nn::LossKind::cross_entropy);
    for (double v : g.data) CHECK(std::isfinite(v));
    const auto pred = nn::forward(p, x);
    CHECK(pred.probs.at(0, 0) == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("a relu-dead first layer receives exactly zero gradient") {
    const nn::ModelSpec spec{{2, 3, 2}};
    nn::ParamVector p = random_params(spec, 17);
    auto layers = nn::unflatten(p);
    for (double& b : layers[0].b) b = -100.0; // kills every hidden unit on [0,1] inputs
    p = nn::flatten(spec, layers);

    const Matrix x = random_inputs(4, 2, 18);
    const Matrix t = nn::onehot({0, 1, 0, 1}, 2);
    const auto g = nn::grad_wrt_params(p, x, t, nn::LossKind::cross_entropy);
    const std::size_t layer0 = 2u * 3 + 3;
    for (std::size_t i = 0; i < layer0; ++i) CHECK(g.values[i] == 0.0);

    const Matrix gi = nn::grad_wrt_inputs(p, x, t, nn::LossKind::cross_entropy);
    for (double v : gi.data) CHECK(v == 0.0);
}

TEST_CASE("fgsm with epsilon zero returns the inputs untouched") {
    const nn::ModelSpec spec{{4, 3}};
    const auto p = random_params(spec, 21);
    const Matrix x = random_inputs(3, 4, 22);
    const Matrix t = random_onehot(3, 3, 23);
    const Matrix out = nn::fgsm_perturb(p, x, t, 0.0);
    CHECK(out.data == x.data);
    CHECK_THROWS_AS(nn::fgsm_perturb(p, x, t, -0.1), std::invalid_argument);
}

TEST_CASE("fgsm sign matches the hand-derived linear-model gradient") {
    // Identity-weight 2-class linear model, sample (0.5, 0.5), label 0:
    // probs are uniform, d(ce)/dx = W^T (p - y) = (-0.5, 0.5).
    const nn::ModelSpec spec{{2, 2}};
    nn::ParamVector p;
    p.spec = spec;
    p.values = {1.0, 0.0, 0.0, 1.0, 0.0, 0.0};
    Matrix x(1, 2);
    x.at(0, 0) = 0.5;
    x.at(0, 1) = 0.5;
    const Matrix t = nn::onehot({0}, 2);
    const Matrix out = nn::fgsm_perturb(p, x, t, 0.25);
    CHECK(out.at(0, 0) == 0.25);
    CHECK(out.at(0, 1) == 0.75);
}

TEST_CASE("fgsm clips at the input bounds") {
    const nn::ModelSpec spec{{2, 2}};
    nn::ParamVector p;
    p.spec = spec;
    p.values = {1.0, 0.0, 0.0, 1.0, 0.0, 0.0};
    Matrix x(1, 2);
    x.at(0, 0) = 1.0; // gradient pushes coordinate 0 up (label 1), must stay at 1
    x.at(0, 1) = 0.0;
    const Matrix t = nn::onehot({1}, 2);
    const Matrix out = nn::fgsm_perturb(p, x, t, 0.5);
    CHECK(out.at(0, 0) == 1.0);
    CHECK(out.at(0, 1) == 0.0);
}

TEST_CASE("sgd config validation") {
    nn::SgdConfig cfg;
    cfg.validate();
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.momentum = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("one sgd step applies lr, momentum and weight decay exactly") {
    const nn::ModelSpec spec{{3, 4, 2}};
    const auto start = random_params(spec, 31);
    const Matrix x = random_inputs(4, 3, 32);
    const Matrix t = nn::onehot({0, 1, 1, 0}, 2);
    nn::SgdConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.momentum = 0.9;
    cfg.weight_decay = 1e-3;

    nn::SgdTrainer tr(start, cfg);
    tr.step_batch(x, t, 0);

    nn::ParamVector expect = start;
    std::vector<double> vel(start.values.size(), 0.0);
    const auto g0 = nn::grad_wrt_params(start, x, t, nn::LossKind::cross_entropy);
    for (std::size_t i = 0; i < expect.values.size(); ++i) {
        const double g = g0.values[i] + cfg.weight_decay * expect.values[i];
        vel[i] = cfg.momentum * vel[i] + g;
        expect.values[i] -= cfg.learning_rate * vel[i];
    }
    CHECK(tr.params().values == expect.values);

    // the second step must reuse the velocity buffer
    tr.step_batch(x, t, 1);
    const auto g1 = nn::grad_wrt_params(expect, x, t, nn::LossKind::cross_entropy);
    for (std::size_t i = 0; i < expect.values.size(); ++i) {
        const double g = g1.values[i] + cfg.weight_decay * expect.values[i];
        vel[i] = cfg.momentum * vel[i] + g;
        expect.values[i] -= cfg.learning_rate * vel[i];
    }
    CHECK(tr.params().values == expect.values);
}

TEST_CASE("train_local is deterministic and zero epochs is the identity") {
    const auto d = agsd::data::gen_synthetic(3, 6, 20, 5.0, 41);
    const nn::ModelSpec spec{{6, 8, 3}};
    const auto start = nn::init_params(spec, 42);
    nn::SgdConfig cfg;
    cfg.local_epochs = 2;

    const auto a = nn::train_local(start, d, cfg, 43);
    const auto b = nn::train_local(start, d, cfg, 43);
    CHECK(a == b);
    CHECK(a.values != nn::train_local(start, d, cfg, 44).values);

    cfg.local_epochs = 0;
    CHECK(nn::train_local(start, d, cfg, 43) == start);

    agsd::data::Dataset empty;
    empty.num_classes = 3;
    empty.inputs = Matrix(0, 6);
    CHECK_THROWS_AS(nn::train_local(start, empty, cfg, 43), std::invalid_argument);
}

TEST_CASE("soft targets from one-hot rows reproduce hard-label training") {
    const auto d = agsd::data::gen_synthetic(3, 6, 15, 5.0, 51);
    const nn::ModelSpec spec{{6, 8, 3}};
    const auto start = nn::init_params(spec, 52);
    nn::SgdConfig cfg;
    cfg.local_epochs = 2;
    const auto hard = nn::train_local(start, d, cfg, 53);
    const auto soft = nn::train_local_soft(start, d.inputs, nn::onehot(d.labels, 3), cfg, 53);
    CHECK(hard == soft);
}

TEST_CASE("training separable blobs reaches high accuracy") {
    const auto d = agsd::data::gen_synthetic(3, 8, 50, 10.0, 61);
    const nn::ModelSpec spec{{8, 16, 3}};
    const auto start = nn::init_params(spec, 62);
    nn::SgdConfig cfg;
    cfg.local_epochs = 5;
    const auto trained = nn::train_local(start, d, cfg, 63);

    const auto pred = nn::forward(trained, d.inputs);
    int hits = 0;
    for (int r = 0; r < d.size(); ++r) {
        int arg = 0;
        for (int c = 1; c < 3; ++c)
            if (pred.probs.at(r, c) > pred.probs.at(r, arg)) arg = c;
        if (arg == d.labels[static_cast<std::size_t>(r)]) ++hits;
    }
    CHECK(static_cast<double>(hits) / d.size() >= 0.95);
}

TEST_CASE("agsd loss equals cross entropy on a single-sample batch") {
    // The deviation term measures spread around the batch mean; one sample has none.
    const nn::ModelSpec spec{{4, 5, 3}};
    const auto p = random_params(spec, 71);
    const Matrix x = random_inputs(1, 4, 72);
    const Matrix t = nn::onehot({2}, 3);
    CHECK(nn::loss_value(p, x, t, nn::LossKind::agsd) ==
          nn::loss_value(p, x, t, nn::LossKind::cross_entropy));
}
