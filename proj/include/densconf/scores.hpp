#pragma once

#include <cmath>
#include <optional>
#include <span>

#include "densconf/knn_index.hpp"
#include "densconf/matrix.hpp"
#include "densconf/mlp.hpp"
#include "densconf/train.hpp"

namespace densconf {

// Exponentially weighted fraction of the k nearest training neighbors that
// carry the predicted label:
//
//   D(x) = sum_{y_j = label} exp(-d_j) / sum_j exp(-d_j)
//
// Numerator and denominator are both multiplied by exp(d_min), so the score
// stays finite for arbitrarily large distances. No distance scaling factor is
// applied.
inline double distance_score(const EmbeddingIndex& index, std::span<const double> query,
                             int predicted_label) {
    if (predicted_label < 0 || predicted_label >= index.num_classes)
        throw UsageError("distance_score: predicted label out of range");
    const std::vector<Neighbor> neighbors = knn_query(index, query);
    const double d_min = neighbors.front().distance; // ascending order
    double num = 0.0, den = 0.0;
    for (const Neighbor& nb : neighbors) {
        const double w = std::exp(-(nb.distance - d_min));
        den += w;
        if (nb.label == predicted_label) num += w;
    }
    return num / den;
}

// Maximal softmax activation; in (0, 1].
inline double margin_score(std::span<const double> logits) {
    const Vector p = stable_softmax(logits);
    return *std::max_element(p.begin(), p.end());
}

// Negative Shannon entropy of the softmax output, sum_i p_i log p_i, with the
// convention 0 log 0 = 0. Lies in [-log C, 0]; higher means more confident.
inline double entropy_score(std::span<const double> logits) {
    const Vector p = stable_softmax(logits);
    double score = 0.0;
    for (double v : p)
        if (v > 0.0) score += v * std::log(v);
    return score;
}

// Shifted to [0, log C] so it can serve as a multiplicative weight.
inline double entropy_weight(std::span<const double> logits) {
    const double shifted =
        std::log(static_cast<double>(logits.size())) + entropy_score(logits);
    return std::max(shifted, 0.0);
}

struct ScoredPrediction {
    int predicted_label = 0;
    double distance_score = 0.0;
    double margin_score = 0.0;
    double entropy_score = 0.0;
    std::optional<bool> correct;
};

// All three scores for one sample using the model's own prediction and
// embedding.
inline ScoredPrediction score_sample(const MlpModel& model, const EmbeddingIndex& index,
                                     std::span<const double> x) {
    const ForwardResult fwd = forward(model, x, ForwardMode::Deterministic);
    ScoredPrediction s;
    s.predicted_label = argmax_label(fwd.logits());
    s.margin_score = margin_score(fwd.logits());
    s.entropy_score = entropy_score(fwd.logits());
    s.distance_score = distance_score(index, fwd.embedding(), s.predicted_label);
    return s;
}

// Hybrid scoring: the label (and margin/entropy) come from `predict_model`,
// while the distance score is computed in `embed_model`'s embedding space
// against an index built from that same embedding.
inline ScoredPrediction hybrid_distance_score(const MlpModel& embed_model,
                                              const MlpModel& predict_model,
                                              const EmbeddingIndex& index,
                                              std::span<const double> x) {
    if (embed_model.embedding_dim() != index.dim())
        throw UsageError("hybrid_distance_score: index was not built from embed_model "
                         "(embedding dimension mismatch)");
    const ForwardResult fwd = forward(predict_model, x, ForwardMode::Deterministic);
    ScoredPrediction s;
    s.predicted_label = argmax_label(fwd.logits());
    s.margin_score = margin_score(fwd.logits());
    s.entropy_score = entropy_score(fwd.logits());
    s.distance_score = distance_score(index, embed(embed_model, x), s.predicted_label);
    return s;
}

// MC-dropout variant: margin and entropy come from the averaged stochastic
// softmax; the distance score still uses the deterministic embedding.
inline ScoredPrediction score_sample_mc_dropout(const MlpModel& model,
                                                const EmbeddingIndex& index,
                                                std::span<const double> x, std::size_t passes,
                                                Rng& rng) {
    const Vector probs = mc_dropout_predict(model, x, passes, rng);
    ScoredPrediction s;
    s.predicted_label = argmax_label(probs);
    s.margin_score = *std::max_element(probs.begin(), probs.end());
    double entropy = 0.0;
    for (double v : probs)
        if (v > 0.0) entropy += v * std::log(v);
    s.entropy_score = entropy;
    s.distance_score = distance_score(index, embed(model, x), s.predicted_label);
    return s;
}

} // namespace densconf
