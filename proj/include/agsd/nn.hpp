#pragma once

// Dense MLP with relu hidden layers and a softmax head, stored as one flat
// parameter vector so aggregation rules can treat models as plain vectors.
// Gradients are analytic (backprop); training is mini-batch SGD with momentum
// and weight decay, bit-deterministic for a given seed.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "agsd/data.hpp"
#include "agsd/rng.hpp"
#include "agsd/vec.hpp"

namespace agsd::nn {

struct ModelSpec {
    std::vector<int> layer_dims; // [input, hidden..., classes]

    void validate() const {
        if (layer_dims.size() < 2)
            throw std::invalid_argument("ModelSpec: need at least input and output dims");
        for (int d : layer_dims)
            if (d < 1) throw std::invalid_argument("ModelSpec: layer dims must be positive");
    }
    int input_dim() const { return layer_dims.front(); }
    int num_classes() const { return layer_dims.back(); }
    int num_layers() const { return static_cast<int>(layer_dims.size()) - 1; }
    std::size_t param_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l)
            n += static_cast<std::size_t>(layer_dims[l + 1]) * layer_dims[l] +
                 static_cast<std::size_t>(layer_dims[l + 1]);
        return n;
    }
    bool operator==(const ModelSpec&) const = default;
};

struct ParamVector {
    ModelSpec spec;
    std::vector<double> values;

    void validate() const {
        spec.validate();
        if (values.size() != spec.param_count())
            throw std::invalid_argument("ParamVector: " + std::to_string(values.size()) +
                                        " values, layout implies " + std::to_string(spec.param_count()));
    }
    bool operator==(const ParamVector&) const = default;
};

// One weight layer in structured form; flatten/unflatten below round-trip it.
struct LayerWeights {
    Matrix w;               // out x in
    std::vector<double> b;  // out
};

inline std::vector<LayerWeights> unflatten(const ParamVector& p) {
    p.validate();
    std::vector<LayerWeights> layers;
    std::size_t off = 0;
    for (int l = 0; l < p.spec.num_layers(); ++l) {
        const int in = p.spec.layer_dims[static_cast<std::size_t>(l)];
        const int out = p.spec.layer_dims[static_cast<std::size_t>(l) + 1];
        LayerWeights lw;
        lw.w = Matrix(out, in);
        std::copy(p.values.begin() + static_cast<long>(off),
                  p.values.begin() + static_cast<long>(off + lw.w.data.size()), lw.w.data.begin());
        off += lw.w.data.size();
        lw.b.assign(p.values.begin() + static_cast<long>(off),
                    p.values.begin() + static_cast<long>(off) + out);
        off += static_cast<std::size_t>(out);
        layers.push_back(std::move(lw));
    }
    return layers;
}

inline ParamVector flatten(const ModelSpec& spec, const std::vector<LayerWeights>& layers) {
    spec.validate();
    if (static_cast<int>(layers.size()) != spec.num_layers())
        throw std::invalid_argument("flatten: layer count mismatch");
    ParamVector p;
    p.spec = spec;
    p.values.reserve(spec.param_count());
    for (int l = 0; l < spec.num_layers(); ++l) {
        const auto& lw = layers[static_cast<std::size_t>(l)];
        if (lw.w.rows != spec.layer_dims[static_cast<std::size_t>(l) + 1] ||
            lw.w.cols != spec.layer_dims[static_cast<std::size_t>(l)] ||
            static_cast<int>(lw.b.size()) != lw.w.rows)
            throw std::invalid_argument("flatten: layer " + std::to_string(l) + " shape mismatch");
        p.values.insert(p.values.end(), lw.w.data.begin(), lw.w.data.end());
        p.values.insert(p.values.end(), lw.b.begin(), lw.b.end());
    }
    return p;
}

// He-style init: weights N(0, sqrt(2/fan_in)), biases zero.
inline ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    rng::Rng r(seed);
    ParamVector p;
    p.spec = spec;
    p.values.resize(spec.param_count(), 0.0);
    std::size_t off = 0;
    for (int l = 0; l < spec.num_layers(); ++l) {
        const int in = spec.layer_dims[static_cast<std::size_t>(l)];
        const int out = spec.layer_dims[static_cast<std::size_t>(l) + 1];
        const double sd = std::sqrt(2.0 / static_cast<double>(in));
        for (int i = 0; i < out * in; ++i) p.values[off + static_cast<std::size_t>(i)] = sd * r.normal();
        off += static_cast<std::size_t>(out) * in + static_cast<std::size_t>(out);
    }
    return p;
}

inline void softmax_row(std::span<double> z) {
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : z) v /= sum;
}

struct Prediction {
    Matrix probs; // N x K, rows sum to 1
};

namespace detail {

// activations[0] is the input; activations[l+1] is layer l's output
// (relu for hidden layers, softmax for the last).
struct ForwardCache {
    std::vector<Matrix> activations;
};

inline ForwardCache forward_cached(const ParamVector& p, const Matrix& inputs) {
    p.validate();
    if (inputs.cols != p.spec.input_dim())
        throw std::invalid_argument("forward: expected input width " +
                                    std::to_string(p.spec.input_dim()) + ", got " +
                                    std::to_string(inputs.cols));
    const auto layers = unflatten(p);
    ForwardCache cache;
    cache.activations.push_back(inputs);
    for (int l = 0; l < p.spec.num_layers(); ++l) {
        const auto& lw = layers[static_cast<std::size_t>(l)];
        const Matrix& a = cache.activations.back();
        Matrix z(a.rows, lw.w.rows);
        for (int r = 0; r < a.rows; ++r) {
            auto arow = a.row(r);
            for (int o = 0; o < lw.w.rows; ++o)
                z.at(r, o) = dot(arow, lw.w.row(o)) + lw.b[static_cast<std::size_t>(o)];
        }
        const bool last = l == p.spec.num_layers() - 1;
        if (last) {
            for (int r = 0; r < z.rows; ++r) softmax_row(z.row(r));
        } else {
            for (double& v : z.data) v = v > 0.0 ? v : 0.0;
        }
        cache.activations.push_back(std::move(z));
    }
    return cache;
}

} // namespace detail

inline Prediction forward(const ParamVector& p, const Matrix& inputs) {
    auto cache = detail::forward_cached(p, inputs);
    return {std::move(cache.activations.back())};
}

enum class LossKind {
    cross_entropy, // mean CE against (possibly soft) targets
    agsd,          // mean CE minus mean per-sample l2 deviation from the batch-mean prediction;
                   // ascending this is the adversarial direction the healing step wants
};

inline Matrix onehot(const std::vector<int>& labels, int num_classes) {
    Matrix t(static_cast<int>(labels.size()), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || y >= num_classes)
            throw std::invalid_argument("onehot: label " + std::to_string(y) + " outside [0, " +
                                        std::to_string(num_classes) + ")");
        t.at(static_cast<int>(i), y) = 1.0;
    }
    return t;
}

namespace detail {

inline double mean_ce(const Matrix& probs, const Matrix& targets) {
    double loss = 0.0;
    for (std::size_t i = 0; i < probs.data.size(); ++i)
        if (targets.data[i] != 0.0)
            loss -= targets.data[i] * std::log(std::max(probs.data[i], 1e-300));
    return loss / probs.rows;
}

// mean over the batch of || p_i - pbar ||_2
inline double mean_deviation(const Matrix& probs) {
    const int n = probs.rows, k = probs.cols;
    std::vector<double> pbar(static_cast<std::size_t>(k), 0.0);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < k; ++c) pbar[static_cast<std::size_t>(c)] += probs.at(r, c);
    for (double& v : pbar) v /= n;
    double dev = 0.0;
    for (int r = 0; r < n; ++r) {
        double s = 0.0;
        for (int c = 0; c < k; ++c) {
            const double d = probs.at(r, c) - pbar[static_cast<std::size_t>(c)];
            s += d * d;
        }
        dev += std::sqrt(s);
    }
    return dev / n;
}

// d(loss)/d(logits) for the chosen loss, probs already softmaxed
inline Matrix logit_grad(const Matrix& probs, const Matrix& targets, LossKind kind) {
    const int n = probs.rows, k = probs.cols;
    Matrix g(n, k);
    for (std::size_t i = 0; i < g.data.size(); ++i)
        g.data[i] = (probs.data[i] - targets.data[i]) / n;
    if (kind == LossKind::cross_entropy) return g;

    // agsd = CE - deviation: subtract the deviation term's gradient, routed
    // through the softmax jacobian.
    std::vector<double> pbar(static_cast<std::size_t>(k), 0.0);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < k; ++c) pbar[static_cast<std::size_t>(c)] += probs.at(r, c);
    for (double& v : pbar) v /= n;

    Matrix u(n, k); // unit deviation directions (zero where degenerate)
    std::vector<double> ubar(static_cast<std::size_t>(k), 0.0);
    for (int r = 0; r < n; ++r) {
        double s = 0.0;
        for (int c = 0; c < k; ++c) {
            const double d = probs.at(r, c) - pbar[static_cast<std::size_t>(c)];
            u.at(r, c) = d;
            s += d * d;
        }
        const double norm = std::sqrt(s);
        if (norm > 1e-15) {
            for (int c = 0; c < k; ++c) {
                u.at(r, c) /= norm;
                ubar[static_cast<std::size_t>(c)] += u.at(r, c);
            }
        } else {
            for (int c = 0; c < k; ++c) u.at(r, c) = 0.0;
        }
    }
    for (double& v : ubar) v /= n;

    for (int r = 0; r < n; ++r) {
        // d(dev)/d(p_r) then through d(softmax): dz = p .* (dp - <dp, p>)
        double inner = 0.0;
        std::vector<double> dp(static_cast<std::size_t>(k));
        for (int c = 0; c < k; ++c) {
            dp[static_cast<std::size_t>(c)] = (u.at(r, c) - ubar[static_cast<std::size_t>(c)]) / n;
            inner += dp[static_cast<std::size_t>(c)] * probs.at(r, c);
        }
        for (int c = 0; c < k; ++c)
            g.at(r, c) -= probs.at(r, c) * (dp[static_cast<std::size_t>(c)] - inner);
    }
    return g;
}

struct GradResult {
    ParamVector dparams;
    Matrix dinputs;
    double loss = 0.0;
};

inline GradResult backprop(const ParamVector& p, const Matrix& inputs, const Matrix& targets,
                           LossKind kind) {
    if (targets.rows != inputs.rows || targets.cols != p.spec.num_classes())
        throw std::invalid_argument("backprop: target shape mismatch");
    const auto layers = unflatten(p);
    const auto cache = forward_cached(p, inputs);
    const Matrix& probs = cache.activations.back();

    GradResult out;
    out.loss = mean_ce(probs, targets);
    if (kind == LossKind::agsd) out.loss -= mean_deviation(probs);
    out.dparams.spec = p.spec;
    out.dparams.values.resize(p.values.size(), 0.0);

    Matrix g = logit_grad(probs, targets, kind);
    std::size_t off_end = p.values.size();
    for (int l = p.spec.num_layers() - 1; l >= 0; --l) {
        const auto& lw = layers[static_cast<std::size_t>(l)];
        const Matrix& act = cache.activations[static_cast<std::size_t>(l)];
        const std::size_t b_off = off_end - static_cast<std::size_t>(lw.w.rows);
        const std::size_t w_off = b_off - lw.w.data.size();
        for (int r = 0; r < g.rows; ++r) {
            auto arow = act.row(r);
            for (int o = 0; o < lw.w.rows; ++o) {
                const double gv = g.at(r, o);
                if (gv == 0.0) continue;
                double* wrow = out.dparams.values.data() + w_off + static_cast<std::size_t>(o) * lw.w.cols;
                for (int i = 0; i < lw.w.cols; ++i) wrow[i] += gv * arow[static_cast<std::size_t>(i)];
                out.dparams.values[b_off + static_cast<std::size_t>(o)] += gv;
            }
        }
        Matrix gprev(g.rows, lw.w.cols);
        for (int r = 0; r < g.rows; ++r)
            for (int o = 0; o < lw.w.rows; ++o) {
                const double gv = g.at(r, o);
                if (gv == 0.0) continue;
                auto wrow = lw.w.row(o);
                for (int i = 0; i < lw.w.cols; ++i) gprev.at(r, i) += gv * wrow[static_cast<std::size_t>(i)];
            }
        if (l > 0) {
            // relu mask from the activation itself (relu(x) > 0 iff x > 0)
            for (int r = 0; r < gprev.rows; ++r)
                for (int i = 0; i < gprev.cols; ++i)
                    if (act.at(r, i) <= 0.0) gprev.at(r, i) = 0.0;
        }
        g = std::move(gprev);
        off_end = w_off;
    }
    out.dinputs = std::move(g);
    return out;
}

} // namespace detail

inline double loss_value(const ParamVector& p, const Matrix& inputs, const Matrix& targets,
                         LossKind kind) {
    const auto probs = forward(p, inputs).probs;
    if (targets.rows != inputs.rows || targets.cols != p.spec.num_classes())
        throw std::invalid_argument("loss_value: target shape mismatch");
    double loss = detail::mean_ce(probs, targets);
    if (kind == LossKind::agsd) loss -= detail::mean_deviation(probs);
    return loss;
}

inline ParamVector grad_wrt_params(const ParamVector& p, const Matrix& inputs,
                                   const Matrix& targets, LossKind kind = LossKind::cross_entropy) {
    return detail::backprop(p, inputs, targets, kind).dparams;
}

inline Matrix grad_wrt_inputs(const ParamVector& p, const Matrix& inputs, const Matrix& targets,
                              LossKind kind = LossKind::cross_entropy) {
    return detail::backprop(p, inputs, targets, kind).dinputs;
}

// One signed gradient step on the inputs, clipped back into [0,1].
inline Matrix fgsm_perturb(const ParamVector& p, const Matrix& inputs, const Matrix& targets,
                           double epsilon, LossKind kind = LossKind::cross_entropy) {
    if (epsilon < 0.0) throw std::invalid_argument("fgsm_perturb: epsilon must be >= 0");
    const Matrix g = grad_wrt_inputs(p, inputs, targets, kind);
    Matrix out = inputs;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double s = g.data[i] > 0.0 ? 1.0 : (g.data[i] < 0.0 ? -1.0 : 0.0);
        out.data[i] = std::clamp(out.data[i] + epsilon * s, 0.0, 1.0);
    }
    return out;
}

struct SgdConfig {
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int local_epochs = 2;
    int batch_size = 16;

    void validate() const {
        if (learning_rate <= 0.0) throw std::invalid_argument("SgdConfig: learning_rate must be positive");
        if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("SgdConfig: momentum must lie in [0,1)");
        if (weight_decay < 0.0) throw std::invalid_argument("SgdConfig: weight_decay must be >= 0");
        if (local_epochs < 0) throw std::invalid_argument("SgdConfig: local_epochs must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("SgdConfig: batch_size must be positive");
    }
};

inline std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
    return rng::derive_seed(seed, "epoch", static_cast<std::uint64_t>(epoch));
}

// Incremental trainer so callers that interleave work between epochs (the
// attack variants, the bias demo) keep one momentum buffer across the run.
class SgdTrainer {
public:
    SgdTrainer(ParamVector start, SgdConfig cfg) : params_(std::move(start)), cfg_(cfg) {
        cfg_.validate();
        params_.validate();
        velocity_.assign(params_.values.size(), 0.0);
    }

    const ParamVector& params() const { return params_; }

    // Direct weight access for callers that project or clip between steps.
    ParamVector& mutable_params() { return params_; }

    void step_batch(const Matrix& bx, const Matrix& bt, int batch_index) {
        auto res = detail::backprop(params_, bx, bt, LossKind::cross_entropy);
        if (std::isnan(res.loss))
            throw std::runtime_error("train_local: NaN loss at batch " + std::to_string(batch_index));
        for (std::size_t i = 0; i < params_.values.size(); ++i) {
            const double g = res.dparams.values[i] + cfg_.weight_decay * params_.values[i];
            velocity_[i] = cfg_.momentum * velocity_[i] + g;
            params_.values[i] -= cfg_.learning_rate * velocity_[i];
        }
    }

    // One pass over (inputs, targets) in a seeded shuffle order. transform, if
    // given, maps each input batch before the step (adversarial training).
    template <typename BatchTransform>
    void epoch(const Matrix& inputs, const Matrix& targets, std::uint64_t seed,
               BatchTransform&& transform) {
        const std::vector<int> order = rng::shuffled_indices(inputs.rows, seed);
        int batch_index = 0;
        for (int start = 0; start < inputs.rows; start += cfg_.batch_size, ++batch_index) {
            const int len = std::min(cfg_.batch_size, inputs.rows - start);
            Matrix bx(len, inputs.cols), bt(len, targets.cols);
            for (int r = 0; r < len; ++r) {
                const int src = order[static_cast<std::size_t>(start + r)];
                auto xs = inputs.row(src);
                std::copy(xs.begin(), xs.end(), bx.row(r).begin());
                auto ts = targets.row(src);
                std::copy(ts.begin(), ts.end(), bt.row(r).begin());
            }
            transform(bx, bt);
            step_batch(bx, bt, batch_index);
        }
    }

    void epoch(const Matrix& inputs, const Matrix& targets, std::uint64_t seed) {
        epoch(inputs, targets, seed, [](Matrix&, Matrix&) {});
    }

private:
    ParamVector params_;
    std::vector<double> velocity_;
    SgdConfig cfg_;
};

// Soft-target variant; the hard-label train_local funnels through this with
// one-hot rows so the two paths are the same arithmetic.
inline ParamVector train_local_soft(const ParamVector& start, const Matrix& inputs,
                                    const Matrix& targets, const SgdConfig& cfg, std::uint64_t seed) {
    if (inputs.rows == 0) throw std::invalid_argument("train_local: empty dataset");
    if (targets.rows != inputs.rows) throw std::invalid_argument("train_local: target count mismatch");
    SgdTrainer tr(start, cfg);
    for (int e = 0; e < cfg.local_epochs; ++e) tr.epoch(inputs, targets, epoch_seed(seed, e));
    return tr.params();
}

inline ParamVector train_local(const ParamVector& start, const data::Dataset& d,
                               const SgdConfig& cfg, std::uint64_t seed) {
    if (d.size() == 0) throw std::invalid_argument("train_local: empty dataset");
    if (d.num_classes != start.spec.num_classes())
        throw std::invalid_argument("train_local: dataset has " + std::to_string(d.num_classes) +
                                    " classes, model expects " + std::to_string(start.spec.num_classes()));
    return train_local_soft(start, d.inputs, onehot(d.labels, d.num_classes), cfg, seed);
}

} // namespace agsd::nn
