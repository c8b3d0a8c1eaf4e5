#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "densconf/config.hpp"
#include "densconf/error.hpp"
#include "densconf/knn_index.hpp"
#include "densconf/mlp.hpp"
#include "densconf/scores.hpp"

namespace densconf {

enum class MemberKind { Regular, Distance, Adversarial };

inline std::string to_string(MemberKind kind) {
    switch (kind) {
        case MemberKind::Regular: return "regular";
        case MemberKind::Distance: return "distance";
        case MemberKind::Adversarial: return "adversarial";
    }
    return "?";
}

inline MemberKind parse_member_kind(const std::string& s) {
    if (s == "regular") return MemberKind::Regular;
    if (s == "distance") return MemberKind::Distance;
    if (s == "adversarial") return MemberKind::Adversarial;
    throw UsageError("unknown ensemble member kind '" + s + "'");
}

struct EnsembleMember {
    std::shared_ptr<const MlpModel> model;
    std::shared_ptr<const EmbeddingIndex> index; // required for distance weighting
    MemberKind kind = MemberKind::Regular;
};

enum class CombinerRule { SoftmaxAverage, SimpleVote, WeightedSoftmax, ConfidenceVote, Dictator };
enum class WeightScore { None, Distance, Entropy, Margin };

inline std::string to_string(CombinerRule rule) {
    switch (rule) {
        case CombinerRule::SoftmaxAverage: return "softmax-average";
        case CombinerRule::SimpleVote: return "simple-vote";
        case CombinerRule::WeightedSoftmax: return "weighted-softmax";
        case CombinerRule::ConfidenceVote: return "confidence-vote";
        case CombinerRule::Dictator: return "dictator";
    }
    return "?";
}

inline CombinerRule parse_combiner_rule(const std::string& s) {
    if (s == "softmax-average") return CombinerRule::SoftmaxAverage;
    if (s == "simple-vote") return CombinerRule::SimpleVote;
    if (s == "weighted-softmax") return CombinerRule::WeightedSoftmax;
    if (s == "confidence-vote") return CombinerRule::ConfidenceVote;
    if (s == "dictator") return CombinerRule::Dictator;
    throw UsageError("unknown combiner rule '" + s + "'");
}

inline std::string to_string(WeightScore w) {
    switch (w) {
        case WeightScore::None: return "none";
        case WeightScore::Distance: return "distance";
        case WeightScore::Entropy: return "entropy";
        case WeightScore::Margin: return "margin";
    }
    return "?";
}

inline WeightScore parse_weight_score(const std::string& s) {
    if (s == "none") return WeightScore::None;
    if (s == "distance") return WeightScore::Distance;
    if (s == "entropy") return WeightScore::Entropy;
    if (s == "margin") return WeightScore::Margin;
    throw UsageError("unknown weight score '" + s + "'");
}

struct CombinerSpec {
    CombinerRule rule = CombinerRule::SoftmaxAverage;
    WeightScore weight_score = WeightScore::None;
    // When set, every member's distance weight is computed against this
    // member's embedding and index (each member keeps its own prediction).
    std::optional<std::size_t> hybrid_partner;

    void validate(std::size_t member_count) const {
        const bool needs_weight = rule == CombinerRule::WeightedSoftmax ||
                                  rule == CombinerRule::ConfidenceVote ||
                                  rule == CombinerRule::Dictator;
        if (needs_weight && weight_score == WeightScore::None)
            throw UsageError("combiner: rule '" + to_string(rule) + "' needs a weight score");
        if (hybrid_partner && *hybrid_partner >= member_count)
            throw UsageError("combiner: hybrid partner index out of range");
    }
};

namespace detail {

struct MemberEval {
    Vector probs;      // softmax of the member's logits
    int predicted = 0; // argmax, lowest class id on ties
};

inline MemberEval evaluate_member(const EnsembleMember& member, std::span<const double> x) {
    const ForwardResult fwd = forward(*member.model, x, ForwardMode::Deterministic);
    MemberEval eval;
    eval.probs = stable_softmax(fwd.logits());
    eval.predicted = argmax_label(eval.probs);
    return eval;
}

} // namespace detail

// Per-member distance weights: each member's own prediction scored against
// either its own index or, when `embed_member` designates a hybrid partner,
// against that member's embedding and index.
inline std::vector<double> member_distance_weights(std::span<const EnsembleMember> members,
                                                   std::span<const double> x,
                                                   std::optional<std::size_t> embed_member = {}) {
    if (embed_member && *embed_member >= members.size())
        throw UsageError("member_distance_weights: designated member index out of range");
    std::vector<double> weights(members.size());
    for (std::size_t i = 0; i < members.size(); ++i) {
        const std::size_t source = embed_member ? *embed_member : i;
        const EnsembleMember& provider = members[source];
        if (!provider.index)
            throw UsageError("member_distance_weights: member " + std::to_string(source) +
                             " has no embedding index");
        const detail::MemberEval eval = detail::evaluate_member(members[i], x);
        const Vector embedding = embed(*provider.model, x);
        weights[i] = distance_score(*provider.index, embedding, eval.predicted);
    }
    return weights;
}

struct CombineResult {
    int label = 0;
    Vector probabilities; // sums to 1
};

// Combines member predictions under the given rule. Vote ties are broken by
// the summed softmax over the tied classes, then by the lowest class id.
inline CombineResult combine(std::span<const EnsembleMember> members, std::span<const double> x,
                             const CombinerSpec& spec) {
    if (members.empty()) throw UsageError("combine: need at least one member");
    spec.validate(members.size());

    const std::size_t n = members.size();
    std::vector<detail::MemberEval> evals(n);
    for (std::size_t i = 0; i < n; ++i) evals[i] = detail::evaluate_member(members[i], x);
    const std::size_t num_classes = evals[0].probs.size();
    for (const auto& e : evals)
        if (e.probs.size() != num_classes)
            throw UsageError("combine: members disagree on the class count");

    Vector mean_probs(num_classes, 0.0);
    for (const auto& e : evals)
        for (std::size_t c = 0; c < num_classes; ++c) mean_probs[c] += e.probs[c];
    for (double& v : mean_probs) v /= static_cast<double>(n);

    // Confidence of each member in its own prediction, per the configured score.
    std::vector<double> weights(n, 1.0);
    if (spec.weight_score == WeightScore::Distance) {
        weights = member_distance_weights(members, x, spec.hybrid_partner);
    } else if (spec.weight_score == WeightScore::Entropy) {
        for (std::size_t i = 0; i < n; ++i) {
            Vector logit_like(evals[i].probs.size());
            for (std::size_t c = 0; c < logit_like.size(); ++c)
                logit_like[c] = std::log(std::max(evals[i].probs[c], 1e-300));
            weights[i] = entropy_weight(logit_like);
        }
    } else if (spec.weight_score == WeightScore::Margin) {
        for (std::size_t i = 0; i < n; ++i)
            weights[i] = *std::max_element(evals[i].probs.begin(), evals[i].probs.end());
    }

    auto break_ties = [&](const std::vector<double>& votes) {
        double best_votes = -1.0;
        for (double v : votes) best_votes = std::max(best_votes, v);
        int winner = -1;
        double winner_mass = -1.0;
        for (std::size_t c = 0; c < votes.size(); ++c) {
            if (votes[c] != best_votes) continue;
            double mass = 0.0;
            for (const auto& e : evals) mass += e.probs[c];
            if (mass > winner_mass) { // strict: first (lowest id) wins equal mass
                winner_mass = mass;
                winner = static_cast<int>(c);
            }
        }
        return winner;
    };

    auto most_confident = [&]() {
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (weights[i] > weights[best]) best = i;
        return best;
    };

    CombineResult result;
    switch (spec.rule) {
        case CombinerRule::SoftmaxAverage: {
            result.probabilities = mean_probs;
            result.label = argmax_label(result.probabilities);
            break;
        }
        case CombinerRule::SimpleVote: {
            std::vector<double> votes(num_classes, 0.0);
            for (const auto& e : evals) votes[static_cast<std::size_t>(e.predicted)] += 1.0;
            result.label = break_ties(votes);
            result.probabilities = mean_probs;
            break;
        }
        case CombinerRule::WeightedSoftmax: {
            Vector weighted(num_classes, 0.0);
            double total_weight = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                total_weight += weights[i];
                for (std::size_t c = 0; c < num_classes; ++c)
                    weighted[c] += weights[i] * evals[i].probs[c];
            }
            if (total_weight == 0.0) {
                result.probabilities = mean_probs; // all members report zero confidence
            } else {
                for (double& v : weighted) v /= total_weight;
                result.probabilities = weighted;
            }
            result.label = argmax_label(result.probabilities);
            break;
        }
        case CombinerRule::ConfidenceVote: {
            const std::size_t leader = most_confident();
            const double leader_votes = std::ceil(static_cast<double>(n) / 2.0);
            std::vector<double> votes(num_classes, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                votes[static_cast<std::size_t>(evals[i].predicted)] +=
                    i == leader ? leader_votes : 1.0;
            result.label = break_ties(votes);
            result.probabilities = mean_probs;
            break;
        }
        case CombinerRule::Dictator: {
            const std::size_t leader = most_confident();
            result.label = evals[leader].predicted;
            result.probabilities = evals[leader].probs;
            break;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Manifest: plain text listing member checkpoints, kinds, index paths and the
// combiner spec, e.g.
//
//   member.0.checkpoint = runs/m0.mlp
//   member.0.kind = distance
//   member.0.index = runs/m0.idx
//   combiner.rule = weighted-softmax
//   combiner.weight_score = distance
//   combiner.hybrid_partner = 0
// ---------------------------------------------------------------------------

struct EnsembleManifest {
    std::vector<EnsembleMember> members;
    CombinerSpec spec;
};

inline EnsembleManifest load_manifest(const std::string& path) {
    const KeyValueConfig cfg = KeyValueConfig::parse_file(path);
    EnsembleManifest manifest;

    std::vector<std::string> allowed = {"combiner.rule", "combiner.weight_score",
                                        "combiner.hybrid_partner"};
    for (std::size_t i = 0;; ++i) {
        const std::string prefix = "member." + std::to_string(i) + ".";
        if (!cfg.has(prefix + "checkpoint")) break;
        allowed.push_back(prefix + "checkpoint");
        allowed.push_back(prefix + "kind");
        allowed.push_back(prefix + "index");

        EnsembleMember member;
        member.model = std::make_shared<MlpModel>(load_checkpoint(cfg.get_string(prefix + "checkpoint")));
        member.kind = parse_member_kind(cfg.get_string(prefix + "kind", "regular"));
        if (cfg.has(prefix + "index"))
            member.index = std::make_shared<EmbeddingIndex>(load_index(cfg.get_string(prefix + "index")));
        manifest.members.push_back(std::move(member));
    }
    if (manifest.members.empty())
        throw FormatError(path + ": manifest lists no members (need member.0.checkpoint)");
    cfg.require_known_keys(allowed);

    manifest.spec.rule = parse_combiner_rule(cfg.get_string("combiner.rule", "softmax-average"));
    manifest.spec.weight_score =
        parse_weight_score(cfg.get_string("combiner.weight_score", "none"));
    if (cfg.has("combiner.hybrid_partner")) {
        const long long partner = cfg.get_int("combiner.hybrid_partner");
        if (partner < 0) throw UsageError(path + ": combiner.hybrid_partner must be >= 0");
        manifest.spec.hybrid_partner = static_cast<std::size_t>(partner);
    }
    manifest.spec.validate(manifest.members.size());
    return manifest;
}

} // namespace densconf
