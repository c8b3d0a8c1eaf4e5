#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "densconf/error.hpp"
#include "densconf/matrix.hpp"
#include "densconf/rng.hpp"

namespace densconf {

// Fully-connected classifier with ELU hidden activations and per-hidden-layer
// inverted dropout. The activation of the penultimate layer is the embedding
// used for the distance-based confidence score.
struct MlpModel {
    std::vector<std::size_t> layer_sizes; // input, hidden..., output (= class count)
    std::vector<Matrix> weights;          // weights[l]: layer_sizes[l+1] x layer_sizes[l]
    std::vector<Vector> biases;           // biases[l]: layer_sizes[l+1]
    std::vector<double> dropout_probs;    // one per hidden layer, in [0, 1)
    std::size_t embedding_layer = 0;      // activation index of the embedding

    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t num_classes() const { return layer_sizes.back(); }
    std::size_t num_weight_layers() const { return weights.size(); }
    std::size_t num_hidden_layers() const { return layer_sizes.size() - 2; }
    std::size_t embedding_dim() const { return layer_sizes[embedding_layer]; }

    bool has_dropout() const {
        for (double p : dropout_probs)
            if (p > 0.0) return true;
        return false;
    }
};

// Glorot-style uniform init in +-sqrt(6 / (fan_in + fan_out)); biases start at zero.
inline MlpModel make_mlp(std::vector<std::size_t> layer_sizes, std::vector<double> dropout_probs,
                         Rng& rng) {
    if (layer_sizes.size() < 2)
        throw UsageError("make_mlp: need at least input and output layer sizes");
    for (std::size_t s : layer_sizes)
        if (s == 0) throw UsageError("make_mlp: layer sizes must be positive");
    if (dropout_probs.empty()) dropout_probs.assign(layer_sizes.size() - 2, 0.0);
    if (dropout_probs.size() != layer_sizes.size() - 2)
        throw UsageError("make_mlp: need one dropout probability per hidden layer");
    for (double p : dropout_probs)
        if (p < 0.0 || p >= 1.0) throw UsageError("make_mlp: dropout probabilities must lie in [0, 1)");

    MlpModel m;
    m.layer_sizes = std::move(layer_sizes);
    m.dropout_probs = std::move(dropout_probs);
    m.embedding_layer = m.layer_sizes.size() - 2;
    for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
        const std::size_t fan_in = m.layer_sizes[l];
        const std::size_t fan_out = m.layer_sizes[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> uniform(-limit, limit);
        Matrix w(fan_out, fan_in);
        for (double& v : w.data) v = uniform(rng);
        m.weights.push_back(std::move(w));
        m.biases.emplace_back(fan_out, 0.0);
    }
    return m;
}

enum class ForwardMode { Deterministic, TrainDropout };

// Activations kept for backprop. Hidden activations are post-ELU and, in
// train-dropout mode, post-dropout (that is what feeds the next layer and what
// the embedding exposes). dropout_scale[l] holds 0 for dropped units and
// 1/(1-p) for kept ones; it is empty for layers that used no dropout.
struct ForwardResult {
    std::vector<Vector> activations;    // [0] = input, ..., [L] = logits
    std::vector<Vector> dropout_scale;  // per hidden layer (may be empty vectors)
    std::size_t embedding_layer = 0;

    const Vector& logits() const { return activations.back(); }
    const Vector& embedding() const { return activations[embedding_layer]; }
};

inline ForwardResult forward(const MlpModel& m, std::span<const double> x, ForwardMode mode,
                             Rng* rng = nullptr) {
    if (x.size() != m.input_dim())
        throw UsageError("forward: input dimension mismatch (" + std::to_string(x.size()) +
                         " vs " + std::to_string(m.input_dim()) + ")");

    ForwardResult result;
    result.embedding_layer = m.embedding_layer;
    result.activations.resize(m.num_weight_layers() + 1);
    result.dropout_scale.resize(m.num_hidden_layers());
    result.activations[0].assign(x.begin(), x.end());

    for (std::size_t l = 0; l < m.num_weight_layers(); ++l) {
        const Matrix& w = m.weights[l];
        const Vector& prev = result.activations[l];
        Vector act(w.rows);
        for (std::size_t o = 0; o < w.rows; ++o) {
            double sum = m.biases[l][o];
            const double* wrow = w.data.data() + o * w.cols;
            for (std::size_t i = 0; i < w.cols; ++i) sum += wrow[i] * prev[i];
            act[o] = sum;
        }
        const bool hidden = l + 1 < m.layer_sizes.size() - 1;
        if (hidden) {
            for (double& v : act) v = elu(v);
            const double p = m.dropout_probs[l];
            if (mode == ForwardMode::TrainDropout && p > 0.0) {
                if (rng == nullptr)
                    throw UsageError("forward: train-dropout mode needs a generator");
                std::uniform_real_distribution<double> uniform(0.0, 1.0);
                const double keep_scale = 1.0 / (1.0 - p);
                Vector scale(act.size());
                for (std::size_t i = 0; i < act.size(); ++i) {
                    scale[i] = uniform(*rng) < p ? 0.0 : keep_scale;
                    act[i] *= scale[i];
                }
                result.dropout_scale[l] = std::move(scale);
            }
        }
        result.activations[l + 1] = std::move(act);
    }
    return result;
}

// Deterministic embedding f(x).
inline Vector embed(const MlpModel& m, std::span<const double> x) {
    return forward(m, x, ForwardMode::Deterministic).embedding();
}

inline Matrix embed_all(const MlpModel& m, const Matrix& features) {
    Matrix out(features.rows, m.embedding_dim());
    for (std::size_t r = 0; r < features.rows; ++r) {
        const Vector e = embed(m, features.row(r));
        std::copy(e.begin(), e.end(), out.row(r).begin());
    }
    return out;
}

// Parameter gradients, same shapes as the model.
struct Gradients {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
};

inline Gradients zero_gradients(const MlpModel& m) {
    Gradients g;
    for (std::size_t l = 0; l < m.num_weight_layers(); ++l) {
        g.weights.emplace_back(m.weights[l].rows, m.weights[l].cols);
        g.biases.emplace_back(m.biases[l].size(), 0.0);
    }
    return g;
}

// Reverse pass for one sample. dlogits is dL/d(logits); dembedding (optional)
// is dL/d(embedding) and is injected at the embedding layer. Parameter
// gradients accumulate into `accum`; if `dinput` is given it receives
// dL/d(input).
inline void backprop_sample(const MlpModel& m, const ForwardResult& fwd,
                            std::span<const double> dlogits, std::span<const double> dembedding,
                            Gradients& accum, Vector* dinput = nullptr) {
    if (dlogits.size() != m.num_classes())
        throw UsageError("backprop_sample: dlogits size mismatch");
    if (!dembedding.empty() && dembedding.size() != m.embedding_dim())
        throw UsageError("backprop_sample: dembedding size mismatch");

    Vector delta(dlogits.begin(), dlogits.end()); // dL/d(pre-activation) of layer being processed
    for (std::size_t l = m.num_weight_layers(); l-- > 0;) {
        const Matrix& w = m.weights[l];
        const Vector& prev = fwd.activations[l];
        Matrix& gw = accum.weights[l];
        Vector& gb = accum.biases[l];
        for (std::size_t o = 0; o < w.rows; ++o) {
            const double d = delta[o];
            gb[o] += d;
            double* grow = gw.data.data() + o * w.cols;
            for (std::size_t i = 0; i < w.cols; ++i) grow[i] += d * prev[i];
        }

        // Gradient w.r.t. the previous layer's (post-dropout) activation.
        Vector grad_act(w.cols, 0.0);
        for (std::size_t o = 0; o < w.rows; ++o) {
            const double d = delta[o];
            const double* wrow = w.data.data() + o * w.cols;
            for (std::size_t i = 0; i < w.cols; ++i) grad_act[i] += wrow[i] * d;
        }
        if (l == fwd.embedding_layer && !dembedding.empty())
            for (std::size_t i = 0; i < grad_act.size(); ++i) grad_act[i] += dembedding[i];

        if (l == 0) {
            if (dinput != nullptr) *dinput = std::move(grad_act);
            break;
        }

        // Chain through dropout scaling and the ELU of hidden layer l.
        const Vector& act = fwd.activations[l];
        const Vector& scale = fwd.dropout_scale[l - 1];
        delta.assign(grad_act.size(), 0.0);
        for (std::size_t i = 0; i < grad_act.size(); ++i) {
            double g = grad_act[i];
            double elu_value = act[i];
            if (!scale.empty()) {
                if (scale[i] == 0.0) continue; // dropped unit
                g *= scale[i];
                elu_value = act[i] / scale[i];
            }
            delta[i] = g * elu_derivative_from_value(elu_value);
        }
    }
}

// dL/dx of the cross-entropy loss at (x, label), deterministic forward.
inline Vector input_gradient(const MlpModel& m, std::span<const double> x, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= m.num_classes())
        throw UsageError("input_gradient: label out of range");
    const ForwardResult fwd = forward(m, x, ForwardMode::Deterministic);
    Vector dlogits = stable_softmax(fwd.logits());
    dlogits[static_cast<std::size_t>(label)] -= 1.0;
    Gradients scratch = zero_gradients(m);
    Vector dinput;
    backprop_sample(m, fwd, dlogits, {}, scratch, &dinput);
    return dinput;
}

} // namespace densconf
