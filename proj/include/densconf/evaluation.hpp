#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "densconf/dataset.hpp"
#include "densconf/ensemble.hpp"
#include "densconf/error.hpp"
#include "densconf/scores.hpp"

namespace densconf {

// ---------------------------------------------------------------------------
// ROC / AUC
// ---------------------------------------------------------------------------

// Mann-Whitney rank statistic with midrank tie handling:
// P(score+ > score-) + 0.5 P(score+ = score-). Exact, no curve integration.
inline double auc(std::span<const double> scores, std::span<const int> positives) {
    if (scores.size() != positives.size()) throw UsageError("auc: scores/flags size mismatch");
    const std::size_t n = scores.size();
    std::size_t num_pos = 0;
    for (int f : positives) num_pos += f != 0;
    const std::size_t num_neg = n - num_pos;
    if (num_pos == 0 || num_neg == 0)
        throw UsageError("auc: both classes must be present");
    for (double s : scores)
        if (!std::isfinite(s)) throw UsageError("auc: non-finite score");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double positive_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j); // ranks i+1 .. j
        for (std::size_t t = i; t < j; ++t)
            if (positives[order[t]] != 0) positive_rank_sum += midrank;
        i = j;
    }
    const double np = static_cast<double>(num_pos);
    const double nn = static_cast<double>(num_neg);
    return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

struct RocPoint {
    double threshold = 0.0; // predict positive when score >= threshold
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points; // from (0,0) to (1,1)
    double auc = 0.0;
};

inline RocCurve roc_curve(std::span<const double> scores, std::span<const int> positives) {
    RocCurve curve;
    curve.auc = auc(scores, positives); // validates inputs

    const std::size_t n = scores.size();
    std::size_t num_pos = 0;
    for (int f : positives) num_pos += f != 0;
    const std::size_t num_neg = n - num_pos;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0, fp = 0, i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        for (std::size_t t = i; t < j; ++t) {
            if (positives[order[t]] != 0)
                ++tp;
            else
                ++fp;
        }
        curve.points.push_back({scores[order[i]],
                                static_cast<double>(fp) / static_cast<double>(num_neg),
                                static_cast<double>(tp) / static_cast<double>(num_pos)});
        i = j;
    }
    return curve;
}

inline void write_roc_csv(const RocCurve& curve, std::ostream& out) {
    out << "threshold,fpr,tpr\n";
    for (const RocPoint& p : curve.points)
        out << detail::format_double(p.threshold) << ',' << detail::format_double(p.fpr) << ','
            << detail::format_double(p.tpr) << '\n';
}

// ---------------------------------------------------------------------------
// Batch scoring helpers
// ---------------------------------------------------------------------------

inline std::vector<ScoredPrediction> score_dataset(const MlpModel& model,
                                                   const EmbeddingIndex& index,
                                                   const Dataset& data) {
    std::vector<ScoredPrediction> preds;
    preds.reserve(data.size());
    for (std::size_t r = 0; r < data.size(); ++r) {
        ScoredPrediction s = score_sample(model, index, data.features.row(r));
        s.correct = s.predicted_label == data.labels[r];
        preds.push_back(std::move(s));
    }
    return preds;
}

inline std::vector<ScoredPrediction> score_dataset_mc_dropout(const MlpModel& model,
                                                              const EmbeddingIndex& index,
                                                              const Dataset& data,
                                                              std::size_t passes,
                                                              std::uint64_t seed) {
    Rng rng(seed);
    std::vector<ScoredPrediction> preds;
    preds.reserve(data.size());
    for (std::size_t r = 0; r < data.size(); ++r) {
        ScoredPrediction s = score_sample_mc_dropout(model, index, data.features.row(r), passes, rng);
        s.correct = s.predicted_label == data.labels[r];
        preds.push_back(std::move(s));
    }
    return preds;
}

inline std::vector<ScoredPrediction> score_dataset_hybrid(const MlpModel& embed_model,
                                                          const MlpModel& predict_model,
                                                          const EmbeddingIndex& index,
                                                          const Dataset& data) {
    std::vector<ScoredPrediction> preds;
    preds.reserve(data.size());
    for (std::size_t r = 0; r < data.size(); ++r) {
        ScoredPrediction s = hybrid_distance_score(embed_model, predict_model, index,
                                                   data.features.row(r));
        s.correct = s.predicted_label == data.labels[r];
        preds.push_back(std::move(s));
    }
    return preds;
}

// Scores an ensemble the way a single model is scored: the prediction and the
// margin/entropy come from the softmax average; the distance score for the
// ensemble's prediction is the mean over indexed members (or, when
// `hybrid_embed_member` is set, comes from that member's embedding alone).
inline std::vector<ScoredPrediction> score_dataset_ensemble(
    std::span<const EnsembleMember> members, const Dataset& data,
    std::optional<std::size_t> hybrid_embed_member = {}) {
    if (members.empty()) throw UsageError("score_dataset_ensemble: no members");
    if (hybrid_embed_member) {
        if (*hybrid_embed_member >= members.size())
            throw UsageError("score_dataset_ensemble: hybrid member index out of range");
        if (!members[*hybrid_embed_member].index)
            throw UsageError("score_dataset_ensemble: hybrid member has no index");
    }
    CombinerSpec average;
    average.rule = CombinerRule::SoftmaxAverage;

    std::vector<ScoredPrediction> preds;
    preds.reserve(data.size());
    for (std::size_t r = 0; r < data.size(); ++r) {
        const auto x = data.features.row(r);
        const CombineResult combined = combine(members, x, average);
        ScoredPrediction s;
        s.predicted_label = combined.label;
        s.margin_score = *std::max_element(combined.probabilities.begin(),
                                           combined.probabilities.end());
        double entropy = 0.0;
        for (double v : combined.probabilities)
            if (v > 0.0) entropy += v * std::log(v);
        s.entropy_score = entropy;

        if (hybrid_embed_member) {
            const EnsembleMember& provider = members[*hybrid_embed_member];
            s.distance_score = distance_score(*provider.index, embed(*provider.model, x),
                                              combined.label);
        } else {
            double sum = 0.0;
            std::size_t indexed = 0;
            for (const EnsembleMember& member : members) {
                if (!member.index) continue;
                sum += distance_score(*member.index, embed(*member.model, x), combined.label);
                ++indexed;
            }
            if (indexed == 0)
                throw UsageError("score_dataset_ensemble: no member carries an index");
            s.distance_score = sum / static_cast<double>(indexed);
        }
        s.correct = s.predicted_label == data.labels[r];
        preds.push_back(std::move(s));
    }
    return preds;
}

inline void write_confidence_report(std::span<const ScoredPrediction> preds, std::ostream& out) {
    out << "sample,predicted_label,correct,distance_score,margin_score,entropy_score\n";
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const ScoredPrediction& s = preds[i];
        out << i << ',' << s.predicted_label << ','
            << (s.correct.has_value() ? (*s.correct ? "1" : "0") : "-1") << ','
            << detail::format_double(s.distance_score) << ','
            << detail::format_double(s.margin_score) << ','
            << detail::format_double(s.entropy_score) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Task protocols
// ---------------------------------------------------------------------------

struct ScoreAuc {
    std::string score;
    double auc = 0.0;
};

struct SweepCell {
    std::string rule;
    std::string weighting;
    std::size_t ensemble_size = 0;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
};

struct TaskResult {
    std::string task;                // error-prediction | novelty | ensemble-accuracy
    std::vector<ScoreAuc> aucs;      // per-score AUC table (first two tasks)
    std::vector<SweepCell> sweep;    // accuracy table (ensemble task)
    std::uint64_t seed = 0;
    std::string config_snapshot;     // resolved key=value text the run used
};

inline void write_task_csv(const TaskResult& result, std::ostream& out) {
    if (result.task == "ensemble-accuracy") {
        out << "rule,weighting,n,mean_accuracy,std_accuracy\n";
        for (const SweepCell& cell : result.sweep)
            out << cell.rule << ',' << cell.weighting << ',' << cell.ensemble_size << ','
                << detail::format_double(cell.mean_accuracy) << ','
                << detail::format_double(cell.std_accuracy) << '\n';
    } else {
        out << "score,auc\n";
        for (const ScoreAuc& row : result.aucs)
            out << row.score << ',' << detail::format_double(row.auc) << '\n';
    }
}

inline double task_auc(const TaskResult& result, const std::string& score) {
    for (const ScoreAuc& row : result.aucs)
        if (row.score == score) return row.auc;
    throw UsageError("task result has no score '" + score + "'");
}

// AUC of each confidence score against the correctness flag.
inline TaskResult error_prediction_task(std::span<const ScoredPrediction> preds,
                                        std::uint64_t seed = 0,
                                        std::string config_snapshot = {}) {
    if (preds.empty()) throw UsageError("error_prediction_task: empty test set");
    std::vector<int> correct;
    std::vector<double> dist, margin, entropy;
    for (const ScoredPrediction& s : preds) {
        if (!s.correct.has_value())
            throw UsageError("error_prediction_task: prediction lacks a correctness flag");
        correct.push_back(*s.correct ? 1 : 0);
        dist.push_back(s.distance_score);
        margin.push_back(s.margin_score);
        entropy.push_back(s.entropy_score);
    }
    TaskResult result;
    result.task = "error-prediction";
    result.seed = seed;
    result.config_snapshot = std::move(config_snapshot);
    result.aucs.push_back({"distance", auc(dist, correct)});
    result.aucs.push_back({"margin", auc(margin, correct)});
    result.aucs.push_back({"entropy", auc(entropy, correct)});
    return result;
}

// AUC of each score for separating known-class samples (positive) from novel
// ones.
inline TaskResult novelty_task(std::span<const ScoredPrediction> known,
                               std::span<const ScoredPrediction> novel,
                               std::uint64_t seed = 0, std::string config_snapshot = {}) {
    if (known.empty() || novel.empty())
        throw UsageError("novelty_task: both known and novel sets must be nonempty");
    std::vector<int> is_known;
    std::vector<double> dist, margin, entropy;
    auto push = [&](const ScoredPrediction& s, int flag) {
        is_known.push_back(flag);
        dist.push_back(s.distance_score);
        margin.push_back(s.margin_score);
        entropy.push_back(s.entropy_score);
    };
    for (const ScoredPrediction& s : known) push(s, 1);
    for (const ScoredPrediction& s : novel) push(s, 0);

    TaskResult result;
    result.task = "novelty";
    result.seed = seed;
    result.config_snapshot = std::move(config_snapshot);
    result.aucs.push_back({"distance", auc(dist, is_known)});
    result.aucs.push_back({"margin", auc(margin, is_known)});
    result.aucs.push_back({"entropy", auc(entropy, is_known)});
    return result;
}

struct SweepSpec {
    std::string name; // reported in the rule column
    CombinerSpec combiner;
};

inline double ensemble_accuracy(std::span<const EnsembleMember> members, const Dataset& test,
                                const CombinerSpec& spec) {
    if (test.size() == 0) throw UsageError("ensemble_accuracy: empty test set");
    std::size_t correct = 0;
    for (std::size_t r = 0; r < test.size(); ++r)
        if (combine(members, test.features.row(r), spec).label == test.labels[r]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

// Accuracy per (combiner, ensemble size) over disjoint slices of the pool:
// repetition r uses members [r*n, (r+1)*n).
inline TaskResult ensemble_accuracy_sweep(std::span<const EnsembleMember> pool,
                                          std::span<const SweepSpec> specs,
                                          std::span<const std::size_t> ensemble_sizes,
                                          const Dataset& test, std::size_t min_repetitions = 5,
                                          std::uint64_t seed = 0,
                                          std::string config_snapshot = {}) {
    if (specs.empty()) throw UsageError("ensemble_accuracy_sweep: no combiner specs");
    if (ensemble_sizes.empty()) throw UsageError("ensemble_accuracy_sweep: no ensemble sizes");
    for (std::size_t n : ensemble_sizes) {
        if (n == 0) throw UsageError("ensemble_accuracy_sweep: ensemble size must be positive");
        if (pool.size() / n < std::max<std::size_t>(min_repetitions, 1))
            throw UsageError("ensemble_accuracy_sweep: pool of " + std::to_string(pool.size()) +
                             " members is too small for " + std::to_string(min_repetitions) +
                             " disjoint repetitions at n = " + std::to_string(n));
    }

    TaskResult result;
    result.task = "ensemble-accuracy";
    result.seed = seed;
    result.config_snapshot = std::move(config_snapshot);
    for (const SweepSpec& spec : specs) {
        for (std::size_t n : ensemble_sizes) {
            const std::size_t reps = pool.size() / n;
            std::vector<double> accuracies;
            accuracies.reserve(reps);
            for (std::size_t r = 0; r < reps; ++r)
                accuracies.push_back(
                    ensemble_accuracy(pool.subspan(r * n, n), test, spec.combiner));
            double mean = 0.0;
            for (double a : accuracies) mean += a;
            mean /= static_cast<double>(reps);
            double var = 0.0;
            for (double a : accuracies) var += (a - mean) * (a - mean);
            const double stddev = reps > 1 ? std::sqrt(var / static_cast<double>(reps - 1)) : 0.0;
            result.sweep.push_back({spec.name, to_string(spec.combiner.weight_score), n, mean,
                                    stddev});
        }
    }
    return result;
}

} // namespace densconf
