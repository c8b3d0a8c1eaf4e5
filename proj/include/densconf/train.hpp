#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "densconf/dataset.hpp"
#include "densconf/error.hpp"
#include "densconf/losses.hpp"
#include "densconf/mlp.hpp"
#include "densconf/rng.hpp"

namespace densconf {

// The three training regimes. They are mutually exclusive by construction;
// combining the distance loss with adversarial examples is not supported.
enum class Regime { Plain, Distance, Adversarial };

inline std::string to_string(Regime r) {
    switch (r) {
        case Regime::Plain: return "plain";
        case Regime::Distance: return "distance";
        case Regime::Adversarial: return "adversarial";
    }
    return "?";
}

inline Regime parse_regime(const std::string& s) {
    if (s == "plain") return Regime::Plain;
    if (s == "distance") return Regime::Distance;
    if (s == "adversarial") return Regime::Adversarial;
    throw UsageError("unknown training regime '" + s +
                     "' (expected plain, distance or adversarial; regimes cannot be combined)");
}

// Piecewise-constant learning rate: rate_at(step) uses the entry with the
// largest start step not exceeding `step`.
struct LrSchedule {
    std::vector<std::pair<std::size_t, double>> points = {{0, 0.05}};

    double rate_at(std::size_t step) const {
        double rate = points.front().second;
        for (const auto& [start, r] : points) {
            if (start > step) break;
            rate = r;
        }
        return rate;
    }

    void validate() const {
        if (points.empty()) throw UsageError("learning rate schedule is empty");
        if (points.front().first != 0)
            throw UsageError("learning rate schedule must start at step 0");
        for (std::size_t i = 1; i < points.size(); ++i)
            if (points[i].first <= points[i - 1].first)
                throw UsageError("learning rate schedule steps must be strictly increasing");
        for (const auto& [start, r] : points)
            if (!(r > 0.0)) throw UsageError("learning rates must be positive");
    }
};

struct TrainConfig {
    Regime regime = Regime::Plain;
    double alpha = 0.2;                    // weight on the pairwise distance loss
    double margin = 25.0;                  // hinge margin for different-class pairs
    double epsilon = 0.1;                  // fast-gradient perturbation size
    double adversarial_weight = 0.5;       // weight on the adversarial term; 0.5 = plain mean
    double same_class_pair_fraction = 0.2;
    std::size_t batch_size = 50;
    std::size_t epochs = 30;
    LrSchedule learning_rate;
    double momentum = 0.9;
    std::uint64_t seed = 1;

    void validate() const {
        if (alpha < 0.0) throw UsageError("train config: alpha must be >= 0");
        if (margin <= 0.0) throw UsageError("train config: margin must be > 0");
        if (epsilon < 0.0) throw UsageError("train config: epsilon must be >= 0");
        if (same_class_pair_fraction < 0.0 || same_class_pair_fraction > 1.0)
            throw UsageError("train config: same_class_pair_fraction must lie in [0, 1]");
        if (regime == Regime::Distance && alpha <= 0.0)
            throw UsageError("train config: regime=distance requires alpha > 0");
        if (adversarial_weight < 0.0 || adversarial_weight > 1.0)
            throw UsageError("train config: adversarial_weight must lie in [0, 1]");
        if (batch_size == 0) throw UsageError("train config: batch_size must be positive");
        if (epochs == 0) throw UsageError("train config: epochs must be positive");
        if (momentum < 0.0 || momentum >= 1.0)
            throw UsageError("train config: momentum must lie in [0, 1)");
        learning_rate.validate();
    }
};

// ---------------------------------------------------------------------------
// Fast gradient perturbation
// ---------------------------------------------------------------------------

// x' = x + epsilon * sign(dL/dx) with sign(0) = 0, so every coordinate moves
// by exactly +epsilon, -epsilon or not at all.
inline Vector fgsm_perturb(const MlpModel& m, std::span<const double> x, int label,
                           double epsilon) {
    if (epsilon < 0.0) throw UsageError("fgsm_perturb: epsilon must be >= 0");
    Vector out(x.begin(), x.end());
    if (epsilon == 0.0) return out;
    const Vector grad = input_gradient(m, x, label);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (grad[i] > 0.0)
            out[i] += epsilon;
        else if (grad[i] < 0.0)
            out[i] -= epsilon;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training loop: momentum SGD over the selected regime
// ---------------------------------------------------------------------------

struct EpochStats {
    std::size_t epoch = 0;
    double total_loss = 0.0;
    double class_loss = 0.0;
    double dist_loss = 0.0;
    double train_accuracy = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
};

inline void write_history_csv(const TrainHistory& history, std::ostream& out) {
    out << "epoch,total_loss,class_loss,dist_loss,train_accuracy\n";
    for (const EpochStats& e : history.epochs)
        out << e.epoch << ',' << detail::format_double(e.total_loss) << ','
            << detail::format_double(e.class_loss) << ',' << detail::format_double(e.dist_loss)
            << ',' << detail::format_double(e.train_accuracy) << '\n';
}

// Index of the largest entry; ties go to the lowest class id.
inline int argmax_label(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return static_cast<int>(best);
}

inline double dataset_accuracy(const MlpModel& m, const Dataset& data) {
    std::size_t correct = 0;
    for (std::size_t r = 0; r < data.size(); ++r) {
        const ForwardResult fwd = forward(m, data.features.row(r), ForwardMode::Deterministic);
        if (argmax_label(fwd.logits()) == data.labels[r]) ++correct;
    }
    return data.size() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace detail {

struct BatchLoss {
    double class_loss = 0.0; // cross entropy on the clean samples
    double dist_loss = 0.0;  // pairwise loss before the alpha weight
    double total_loss = 0.0;
};

// Forward/backward over one minibatch under the given regime. Gradients are
// accumulated per sample in index order, so results are reproducible.
inline BatchLoss batch_gradients(const MlpModel& m, const Matrix& features,
                                 std::span<const int> labels, const TrainConfig& cfg,
                                 Gradients& grads, Rng& rng) {
    const std::size_t batch = features.rows;
    const ForwardMode mode = ForwardMode::TrainDropout;

    std::vector<ForwardResult> fwds;
    fwds.reserve(batch);
    for (std::size_t r = 0; r < batch; ++r)
        fwds.push_back(forward(m, features.row(r), mode, &rng));

    BatchLoss loss;
    Matrix logits(batch, m.num_classes());
    for (std::size_t r = 0; r < batch; ++r)
        std::copy(fwds[r].logits().begin(), fwds[r].logits().end(), logits.row(r).begin());
    loss.class_loss = cross_entropy_loss(logits, labels);

    const double clean_weight =
        cfg.regime == Regime::Adversarial ? 1.0 - cfg.adversarial_weight : 1.0;

    Matrix dembeddings; // only allocated for the distance regime
    PairBatch pairs;
    if (cfg.regime == Regime::Distance) {
        pairs = sample_pair_batch(labels, cfg.same_class_pair_fraction, rng);
        if (!pairs.empty()) {
            Matrix embeddings(batch, m.embedding_dim());
            for (std::size_t r = 0; r < batch; ++r)
                std::copy(fwds[r].embedding().begin(), fwds[r].embedding().end(),
                          embeddings.row(r).begin());
            loss.dist_loss = pairwise_distance_loss(embeddings, labels, pairs, cfg.margin);
            dembeddings = Matrix(batch, m.embedding_dim());
            accumulate_pairwise_distance_grad(embeddings, labels, pairs, cfg.margin, cfg.alpha,
                                              dembeddings);
        }
    }

    for (std::size_t r = 0; r < batch; ++r) {
        Vector dlogits = cross_entropy_dlogits(fwds[r].logits(), labels[r]);
        for (double& v : dlogits) v *= clean_weight / static_cast<double>(batch);
        const std::span<const double> demb =
            dembeddings.rows > 0 ? dembeddings.row(r) : std::span<const double>{};
        backprop_sample(m, fwds[r], dlogits, demb, grads);
    }

    if (cfg.regime == Regime::Adversarial) {
        // One adversarial example per batch point, regenerated from the
        // current parameters; its classification loss enters with weight
        // cfg.adversarial_weight.
        double adv_loss = 0.0;
        for (std::size_t r = 0; r < batch; ++r) {
            const Vector x_adv = fgsm_perturb(m, features.row(r), labels[r], cfg.epsilon);
            const ForwardResult fwd_adv = forward(m, x_adv, mode, &rng);
            adv_loss += cross_entropy_loss(fwd_adv.logits(), labels[r]);
            Vector dlogits = cross_entropy_dlogits(fwd_adv.logits(), labels[r]);
            for (double& v : dlogits) v *= cfg.adversarial_weight / static_cast<double>(batch);
            backprop_sample(m, fwd_adv, dlogits, {}, grads);
        }
        adv_loss /= static_cast<double>(batch);
        loss.total_loss = clean_weight * loss.class_loss + cfg.adversarial_weight * adv_loss;
    } else if (cfg.regime == Regime::Distance) {
        loss.total_loss = loss.class_loss + cfg.alpha * loss.dist_loss;
    } else {
        loss.total_loss = loss.class_loss;
    }
    return loss;
}

} // namespace detail

// Trains the model in place and returns the loss history (one entry per
// epoch). Deterministic given cfg.seed on a fixed platform.
inline TrainHistory train(MlpModel& model, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.size() == 0) throw UsageError("train: dataset is empty");
    if (data.dim() != model.input_dim())
        throw UsageError("train: dataset dimension does not match model input");

    Rng rng(cfg.seed);
    Gradients velocity = zero_gradients(model);
    TrainHistory history;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_total = 0.0, epoch_class = 0.0, epoch_dist = 0.0;
        std::size_t samples_seen = 0;

        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++step) {
            const std::size_t end = std::min(begin + cfg.batch_size, order.size());
            const std::size_t batch = end - begin;
            Matrix features(batch, data.dim());
            std::vector<int> labels(batch);
            for (std::size_t i = 0; i < batch; ++i) {
                const std::size_t src = order[begin + i];
                std::copy(data.features.row(src).begin(), data.features.row(src).end(),
                          features.row(i).begin());
                labels[i] = data.labels[src];
            }

            Gradients grads = zero_gradients(model);
            const detail::BatchLoss loss = detail::batch_gradients(model, features, labels, cfg,
                                                                   grads, rng);
            if (!std::isfinite(loss.total_loss))
                throw TrainingDiverged("train: non-finite loss at epoch " + std::to_string(epoch) +
                                       ", batch " + std::to_string(begin / cfg.batch_size) +
                                       " (loss = " + std::to_string(loss.total_loss) + ")");

            const double lr = cfg.learning_rate.rate_at(step);
            for (std::size_t l = 0; l < model.num_weight_layers(); ++l) {
                for (std::size_t i = 0; i < model.weights[l].data.size(); ++i) {
                    double& v = velocity.weights[l].data[i];
                    v = cfg.momentum * v - lr * grads.weights[l].data[i];
                    model.weights[l].data[i] += v;
                }
                for (std::size_t i = 0; i < model.biases[l].size(); ++i) {
                    double& v = velocity.biases[l][i];
                    v = cfg.momentum * v - lr * grads.biases[l][i];
                    model.biases[l][i] += v;
                }
            }

            epoch_total += loss.total_loss * static_cast<double>(batch);
            epoch_class += loss.class_loss * static_cast<double>(batch);
            epoch_dist += loss.dist_loss * static_cast<double>(batch);
            samples_seen += batch;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.total_loss = epoch_total / static_cast<double>(samples_seen);
        stats.class_loss = epoch_class / static_cast<double>(samples_seen);
        stats.dist_loss = epoch_dist / static_cast<double>(samples_seen);
        stats.train_accuracy = dataset_accuracy(model, data);
        history.epochs.push_back(stats);
    }
    return history;
}

// ---------------------------------------------------------------------------
// MC-dropout inference
// ---------------------------------------------------------------------------

// Mean of the softmax output over `passes` stochastic forward passes with
// dropout active. Undefined for models without dropout.
inline Vector mc_dropout_predict(const MlpModel& m, std::span<const double> x, std::size_t passes,
                                 Rng& rng) {
    if (!m.has_dropout())
        throw UsageError("mc_dropout_predict: model has no nonzero dropout probability");
    if (passes == 0) throw UsageError("mc_dropout_predict: passes must be >= 1");
    Vector mean(m.num_classes(), 0.0);
    for (std::size_t pass = 0; pass < passes; ++pass) {
        const ForwardResult fwd = forward(m, x, ForwardMode::TrainDropout, &rng);
        const Vector p = stable_softmax(fwd.logits());
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += p[i];
    }
    for (double& v : mean) v /= static_cast<double>(passes);
    return mean;
}

} // namespace densconf
