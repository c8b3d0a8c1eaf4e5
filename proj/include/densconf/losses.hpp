#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "densconf/error.hpp"
#include "densconf/matrix.hpp"
#include "densconf/rng.hpp"

namespace densconf {

// Mean over the batch of -log softmax(logits)[label].
inline double cross_entropy_loss(const Matrix& logits, std::span<const int> labels) {
    if (logits.rows != labels.size())
        throw UsageError("cross_entropy_loss: batch size mismatch");
    if (logits.rows == 0) throw UsageError("cross_entropy_loss: empty batch");
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        const int label = labels[r];
        if (label < 0 || static_cast<std::size_t>(label) >= logits.cols)
            throw UsageError("cross_entropy_loss: label " + std::to_string(label) +
                             " out of range for " + std::to_string(logits.cols) + " classes");
        const auto row = logits.row(r);
        total += log_sum_exp(row) - row[static_cast<std::size_t>(label)];
    }
    return total / static_cast<double>(logits.rows);
}

inline double cross_entropy_loss(std::span<const double> logits, int label) {
    Matrix m(1, logits.size());
    std::copy(logits.begin(), logits.end(), m.data.begin());
    const int labels[1] = {label};
    return cross_entropy_loss(m, labels);
}

// d(-log softmax[label]) / d(logits) = softmax - onehot, for one sample.
inline Vector cross_entropy_dlogits(std::span<const double> logits, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
        throw UsageError("cross_entropy_dlogits: label out of range");
    Vector g = stable_softmax(logits);
    g[static_cast<std::size_t>(label)] -= 1.0;
    return g;
}

// ---------------------------------------------------------------------------
// Pair sampling for the embedding distance loss
// ---------------------------------------------------------------------------

struct IndexPair {
    std::size_t first = 0;
    std::size_t second = 0;
    bool same_class = false;
};

struct PairBatch {
    std::vector<IndexPair> pairs;
    std::size_t size() const { return pairs.size(); }
    bool empty() const { return pairs.empty(); }
};

// Samples floor(B/2) index pairs without replacement from a minibatch of B
// labels. At least `same_class_fraction` of the pairs carry equal labels when
// the batch composition permits: same-class pairs are drawn first by picking a
// class proportional to its remaining count and then two of its members; the
// rest of the pool is shuffled and paired off uniformly.
inline PairBatch sample_pair_batch(std::span<const int> batch_labels, double same_class_fraction,
                                   Rng& rng) {
    if (same_class_fraction < 0.0 || same_class_fraction > 1.0)
        throw UsageError("sample_pair_batch: fraction must lie in [0, 1]");
    const std::size_t batch = batch_labels.size();
    const std::size_t num_pairs = batch / 2;
    PairBatch result;
    if (num_pairs == 0) return result;

    const std::size_t target_same = static_cast<std::size_t>(
        std::ceil(same_class_fraction * static_cast<double>(num_pairs) - 1e-9));

    int max_label = 0;
    for (int l : batch_labels) max_label = std::max(max_label, l);
    std::vector<std::vector<std::size_t>> buckets(static_cast<std::size_t>(max_label) + 1);
    for (std::size_t i = 0; i < batch; ++i)
        buckets[static_cast<std::size_t>(batch_labels[i])].push_back(i);

    auto take_from_bucket = [&](std::vector<std::size_t>& bucket) {
        std::uniform_int_distribution<std::size_t> pick(0, bucket.size() - 1);
        const std::size_t at = pick(rng);
        const std::size_t member = bucket[at];
        bucket[at] = bucket.back();
        bucket.pop_back();
        return member;
    };

    while (result.pairs.size() < target_same) {
        std::size_t eligible_total = 0;
        for (const auto& b : buckets)
            if (b.size() >= 2) eligible_total += b.size();
        if (eligible_total == 0) break; // batch composition does not permit more

        std::uniform_int_distribution<std::size_t> pick(0, eligible_total - 1);
        std::size_t roll = pick(rng);
        std::vector<std::size_t>* chosen = nullptr;
        for (auto& b : buckets) {
            if (b.size() < 2) continue;
            if (roll < b.size()) {
                chosen = &b;
                break;
            }
            roll -= b.size();
        }
        const std::size_t a = take_from_bucket(*chosen);
        const std::size_t b = take_from_bucket(*chosen);
        result.pairs.push_back({a, b, true});
    }

    std::vector<std::size_t> pool;
    for (const auto& b : buckets) pool.insert(pool.end(), b.begin(), b.end());
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t i = 0; result.pairs.size() < num_pairs && i + 1 < pool.size(); i += 2) {
        const std::size_t a = pool[i];
        const std::size_t b = pool[i + 1];
        result.pairs.push_back({a, b, batch_labels[a] == batch_labels[b]});
    }
    return result;
}

// ---------------------------------------------------------------------------
// Pairwise embedding distance loss
// ---------------------------------------------------------------------------

// Mean over pairs of: ||e_i - e_j||_2 for same-class pairs, and the hinge
// max{0, margin - ||e_i - e_j||_2} for different-class pairs.
inline double pairwise_distance_loss(const Matrix& embeddings, std::span<const int> labels,
                                     const PairBatch& pairs, double margin) {
    if (pairs.empty()) throw UsageError("pairwise_distance_loss: empty pair set");
    if (embeddings.rows != labels.size())
        throw UsageError("pairwise_distance_loss: embeddings/labels size mismatch");
    if (margin <= 0.0) throw UsageError("pairwise_distance_loss: margin must be positive");
    double total = 0.0;
    for (const IndexPair& p : pairs.pairs) {
        if (p.first >= embeddings.rows || p.second >= embeddings.rows)
            throw UsageError("pairwise_distance_loss: pair index out of range");
        const double d = euclidean_distance(embeddings.row(p.first), embeddings.row(p.second));
        if (labels[p.first] == labels[p.second])
            total += d;
        else
            total += std::max(0.0, margin - d);
    }
    return total / static_cast<double>(pairs.size());
}

// Accumulates scale * d(pair loss)/d(embeddings) into `grad` (same shape as
// embeddings). The loss is the mean over pairs, matching
// pairwise_distance_loss. At the measure-zero points d = 0 and d = margin the
// subgradient 0 (respectively the saturated branch) is used.
inline void accumulate_pairwise_distance_grad(const Matrix& embeddings, std::span<const int> labels,
                                              const PairBatch& pairs, double margin, double scale,
                                              Matrix& grad) {
    if (pairs.empty()) throw UsageError("accumulate_pairwise_distance_grad: empty pair set");
    if (!grad.same_shape(embeddings))
        throw UsageError("accumulate_pairwise_distance_grad: grad shape mismatch");
    const double per_pair = scale / static_cast<double>(pairs.size());
    for (const IndexPair& p : pairs.pairs) {
        const auto ei = embeddings.row(p.first);
        const auto ej = embeddings.row(p.second);
        const double d = euclidean_distance(ei, ej);
        if (d == 0.0) continue;
        double direction; // sign on d(d)/d(e_i) = (e_i - e_j)/d
        if (labels[p.first] == labels[p.second]) {
            direction = per_pair;
        } else {
            if (d >= margin) continue; // hinge saturated
            direction = -per_pair;
        }
        auto gi = grad.row(p.first);
        auto gj = grad.row(p.second);
        for (std::size_t c = 0; c < ei.size(); ++c) {
            const double g = direction * (ei[c] - ej[c]) / d;
            gi[c] += g;
            gj[c] -= g;
        }
    }
}

} // namespace densconf
