// densconf command line: reproducible pipelines for training small
// classifiers, building embedding indexes, and evaluating confidence scores.
//
// Every command reads one key=value config file, writes its artifacts into an
// output directory, and writes back the fully-resolved config it used, so a
// run can be replayed bit-for-bit from that file.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "densconf/densconf.hpp"

namespace fs = std::filesystem;
using namespace densconf;

namespace {

const std::vector<std::string> kKnownKeys = {
    "seed",
    "out",
    "data.kind",
    "data.classes",
    "data.per_class",
    "data.test_per_class",
    "data.dim",
    "data.overlap",
    "data.center_scale",
    "data.spread",
    "data.novel_classes",
    "data.novel_radius",
    "data.novel_spread",
    "data.gcn",
    "data.zca",
    "data.zca_regularizer",
    "model.hidden",
    "model.dropout",
    "train.regime",
    "train.alpha",
    "train.margin",
    "train.epsilon",
    "train.adversarial_weight",
    "train.same_class_pair_fraction",
    "train.batch_size",
    "train.epochs",
    "train.lr",
    "train.momentum",
    "index.k",
    "eval.mc_dropout",
    "eval.mc_passes",
};

std::string format_number(double v) { return detail::format_double(v); }

std::string join_doubles(const std::vector<double>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        out += format_number(values[i]);
    }
    return out;
}

std::string join_ints(const std::vector<long long>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(values[i]);
    }
    return out;
}

LrSchedule parse_lr_schedule(const std::string& text) {
    LrSchedule schedule;
    schedule.points.clear();
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos)
            throw UsageError("config: train.lr expects 'step:rate' pairs, got '" + item + "'");
        char* end = nullptr;
        const long long step = std::strtoll(item.c_str(), &end, 10);
        if (end != item.c_str() + colon || step < 0)
            throw UsageError("config: bad step in train.lr item '" + item + "'");
        const std::string rate_text = item.substr(colon + 1);
        end = nullptr;
        const double rate = std::strtod(rate_text.c_str(), &end);
        if (end == rate_text.c_str() || *end != '\0')
            throw UsageError("config: bad rate in train.lr item '" + item + "'");
        schedule.points.emplace_back(static_cast<std::size_t>(step), rate);
    }
    schedule.validate();
    return schedule;
}

std::string lr_to_string(const LrSchedule& schedule) {
    std::string out;
    for (std::size_t i = 0; i < schedule.points.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(schedule.points[i].first) + ':' +
               format_number(schedule.points[i].second);
    }
    return out;
}

// One struct holding every setting any command consults, resolved from the
// config file with defaults applied.
struct Settings {
    std::uint64_t seed = 1;
    std::string out = "runs";

    std::string data_kind = "overlap";
    int classes = 5;
    std::size_t per_class = 200;
    std::size_t test_per_class = 200;
    std::size_t dim = 32;
    double overlap = 0.5;
    double center_scale = 2.0;
    double spread = 1.0;
    int novel_classes = 3;
    double novel_radius = 3.0;
    double novel_spread = 2.0;
    bool gcn = false;
    bool zca = false;
    double zca_regularizer = 1e-5;

    std::vector<long long> hidden = {64, 64};
    std::vector<double> dropout = {0.1, 0.1};

    TrainConfig train_cfg;
    std::string index_k = "auto";
    bool mc_dropout = false;
    std::size_t mc_passes = 100;
};

Settings resolve_settings(const KeyValueConfig& cfg, const std::string& out_override) {
    cfg.require_known_keys(kKnownKeys);
    Settings s;
    s.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 1));
    const char* env_out = std::getenv("DENSCONF_OUT");
    s.out = cfg.get_string("out", env_out != nullptr ? env_out : "runs");
    if (!out_override.empty()) s.out = out_override;

    s.data_kind = cfg.get_string("data.kind", "overlap");
    if (s.data_kind != "overlap" && s.data_kind != "blobs" && s.data_kind != "novelty")
        throw UsageError("config: data.kind must be overlap, blobs or novelty");
    s.classes = static_cast<int>(cfg.get_int("data.classes", 5));
    s.per_class = static_cast<std::size_t>(cfg.get_int("data.per_class", 200));
    s.test_per_class =
        static_cast<std::size_t>(cfg.get_int("data.test_per_class",
                                             static_cast<long long>(s.per_class)));
    s.dim = static_cast<std::size_t>(cfg.get_int("data.dim", 32));
    s.overlap = cfg.get_double("data.overlap", 0.5);
    s.center_scale = cfg.get_double("data.center_scale", 2.0);
    s.spread = cfg.get_double("data.spread", 1.0);
    s.novel_classes = static_cast<int>(cfg.get_int("data.novel_classes", 3));
    s.novel_radius = cfg.get_double("data.novel_radius", 3.0);
    s.novel_spread = cfg.get_double("data.novel_spread", 2.0);
    s.gcn = cfg.get_bool("data.gcn", false);
    s.zca = cfg.get_bool("data.zca", false);
    s.zca_regularizer = cfg.get_double("data.zca_regularizer", 1e-5);

    if (cfg.has("model.hidden")) s.hidden = cfg.get_int_list("model.hidden");
    if (cfg.has("model.dropout")) s.dropout = cfg.get_double_list("model.dropout");
    if (s.dropout.size() != s.hidden.size())
        throw UsageError("config: model.dropout needs one entry per hidden layer");

    s.train_cfg.regime = parse_regime(cfg.get_string("train.regime", "plain"));
    s.train_cfg.alpha = cfg.get_double("train.alpha", 0.2);
    s.train_cfg.margin = cfg.get_double("train.margin", 25.0);
    s.train_cfg.epsilon = cfg.get_double("train.epsilon", 0.1);
    s.train_cfg.adversarial_weight = cfg.get_double("train.adversarial_weight", 0.5);
    s.train_cfg.same_class_pair_fraction =
        cfg.get_double("train.same_class_pair_fraction", 0.2);
    s.train_cfg.batch_size = static_cast<std::size_t>(cfg.get_int("train.batch_size", 50));
    s.train_cfg.epochs = static_cast<std::size_t>(cfg.get_int("train.epochs", 30));
    if (cfg.has("train.lr")) s.train_cfg.learning_rate = parse_lr_schedule(cfg.get_string("train.lr"));
    s.train_cfg.momentum = cfg.get_double("train.momentum", 0.9);
    s.train_cfg.seed = derive_seed(s.seed, 0x7e);
    s.train_cfg.validate();

    s.index_k = cfg.get_string("index.k", "auto");
    if (s.index_k != "auto") {
        char* end = nullptr;
        const long long k = std::strtoll(s.index_k.c_str(), &end, 10);
        if (end == s.index_k.c_str() || *end != '\0' || k < 1)
            throw UsageError("config: index.k must be 'auto' or a positive integer");
    }
    s.mc_dropout = cfg.get_bool("eval.mc_dropout", false);
    s.mc_passes = static_cast<std::size_t>(cfg.get_int("eval.mc_passes", 100));
    return s;
}

KeyValueConfig resolved_config(const Settings& s) {
    KeyValueConfig out;
    out.set("seed", std::to_string(s.seed));
    out.set("out", s.out);
    out.set("data.kind", s.data_kind);
    out.set("data.classes", std::to_string(s.classes));
    out.set("data.per_class", std::to_string(s.per_class));
    out.set("data.test_per_class", std::to_string(s.test_per_class));
    out.set("data.dim", std::to_string(s.dim));
    out.set("data.overlap", format_number(s.overlap));
    out.set("data.center_scale", format_number(s.center_scale));
    out.set("data.spread", format_number(s.spread));
    out.set("data.novel_classes", std::to_string(s.novel_classes));
    out.set("data.novel_radius", format_number(s.novel_radius));
    out.set("data.novel_spread", format_number(s.novel_spread));
    out.set("data.gcn", s.gcn ? "true" : "false");
    out.set("data.zca", s.zca ? "true" : "false");
    out.set("data.zca_regularizer", format_number(s.zca_regularizer));
    out.set("model.hidden", join_ints(s.hidden));
    out.set("model.dropout", join_doubles(s.dropout));
    out.set("train.regime", to_string(s.train_cfg.regime));
    out.set("train.alpha", format_number(s.train_cfg.alpha));
    out.set("train.margin", format_number(s.train_cfg.margin));
    out.set("train.epsilon", format_number(s.train_cfg.epsilon));
    out.set("train.adversarial_weight", format_number(s.train_cfg.adversarial_weight));
    out.set("train.same_class_pair_fraction",
            format_number(s.train_cfg.same_class_pair_fraction));
    out.set("train.batch_size", std::to_string(s.train_cfg.batch_size));
    out.set("train.epochs", std::to_string(s.train_cfg.epochs));
    out.set("train.lr", lr_to_string(s.train_cfg.learning_rate));
    out.set("train.momentum", format_number(s.train_cfg.momentum));
    out.set("index.k", s.index_k);
    out.set("eval.mc_dropout", s.mc_dropout ? "true" : "false");
    out.set("eval.mc_passes", std::to_string(s.mc_passes));
    return out;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw FormatError("write to '" + path.string() + "' failed");
}

fs::path prepare_out_dir(const Settings& s, const std::string& command) {
    const fs::path dir(s.out);
    fs::create_directories(dir);
    write_text_file(dir / (command + ".resolved.cfg"), resolved_config(s).serialize());
    return dir;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_gen_data(const Settings& s) {
    const fs::path dir = prepare_out_dir(s, "gen-data");

    Dataset train_set, test_set;
    std::optional<Dataset> novel_set;
    if (s.data_kind == "overlap") {
        train_set = make_overlap(s.classes, s.per_class, s.overlap, s.seed, s.dim, 0);
        test_set = make_overlap(s.classes, s.test_per_class, s.overlap, s.seed, s.dim, 1);
    } else if (s.data_kind == "blobs") {
        train_set = make_blobs(s.classes, s.per_class, s.dim, s.center_scale, s.spread, s.seed, 0);
        test_set = make_blobs(s.classes, s.test_per_class, s.dim, s.center_scale, s.spread,
                              s.seed, 1);
    } else { // novelty
        const NoveltyPair train_pair =
            make_novelty_pair(s.seed, s.classes, s.novel_classes, s.per_class, s.dim,
                              s.center_scale, s.novel_radius, s.novel_spread, 0);
        const NoveltyPair test_pair =
            make_novelty_pair(s.seed, s.classes, s.novel_classes, s.test_per_class, s.dim,
                              s.center_scale, s.novel_radius, s.novel_spread, 1);
        train_set = train_pair.known;
        test_set = test_pair.known;
        novel_set = test_pair.novel;
    }
    test_set.split = SplitTag::Test;

    if (s.gcn) {
        train_set.features = global_contrast_normalize(train_set.features);
        test_set.features = global_contrast_normalize(test_set.features);
        if (novel_set) novel_set->features = global_contrast_normalize(novel_set->features);
    }
    if (s.zca) {
        const ZcaTransform zca = fit_zca(train_set.features, s.zca_regularizer);
        train_set.features = apply_zca(zca, train_set.features);
        test_set.features = apply_zca(zca, test_set.features);
        if (novel_set) novel_set->features = apply_zca(zca, novel_set->features);
    }

    save_csv(train_set, (dir / "train.csv").string());
    save_csv(test_set, (dir / "test.csv").string());
    if (novel_set) save_csv(*novel_set, (dir / "novel.csv").string());
    std::cout << "wrote " << (dir / "train.csv").string() << " (" << train_set.size()
              << " samples), " << (dir / "test.csv").string() << " (" << test_set.size()
              << " samples)";
    if (novel_set)
        std::cout << ", " << (dir / "novel.csv").string() << " (" << novel_set->size()
                  << " samples)";
    std::cout << "\n";
}

void cmd_train(const Settings& s, const std::string& data_path) {
    const fs::path dir = prepare_out_dir(s, "train");
    const Dataset data = load_csv(data_path);

    std::vector<std::size_t> layer_sizes{data.dim()};
    for (long long h : s.hidden) {
        if (h < 1) throw UsageError("config: model.hidden entries must be positive");
        layer_sizes.push_back(static_cast<std::size_t>(h));
    }
    layer_sizes.push_back(static_cast<std::size_t>(data.num_classes));

    Rng init_rng(derive_seed(s.seed, 0x1d));
    MlpModel model = make_mlp(layer_sizes, std::vector<double>(s.dropout.begin(), s.dropout.end()),
                              init_rng);
    const TrainHistory history = train(model, data, s.train_cfg);

    save_checkpoint(model, (dir / "model.ckpt").string());
    std::ofstream history_csv(dir / "history.csv", std::ios::binary);
    write_history_csv(history, history_csv);
    std::cout << "trained " << to_string(s.train_cfg.regime) << " model for "
              << history.epochs.size() << " epochs, final train accuracy "
              << history.epochs.back().train_accuracy << ", wrote "
              << (dir / "model.ckpt").string() << "\n";
}

std::size_t resolve_k(const Settings& s, std::span<const int> labels) {
    if (s.index_k == "auto") return default_k(labels);
    return static_cast<std::size_t>(std::strtoll(s.index_k.c_str(), nullptr, 10));
}

void cmd_build_index(const Settings& s, const std::string& model_path,
                     const std::string& data_path) {
    const fs::path dir = prepare_out_dir(s, "build-index");
    const MlpModel model = load_checkpoint(model_path);
    const Dataset data = load_csv(data_path);
    const Matrix embeddings = embed_all(model, data.features);
    const EmbeddingIndex index = build_index(embeddings, data.labels, resolve_k(s, data.labels));
    save_index(index, (dir / "index.idx").string());
    std::cout << "indexed " << index.size() << " embeddings (k = " << index.k << ") into "
              << (dir / "index.idx").string() << "\n";
}

void cmd_condense(const Settings& s, const std::string& model_path,
                  const std::string& data_path) {
    const fs::path dir = prepare_out_dir(s, "condense");
    const MlpModel model = load_checkpoint(model_path);
    const Dataset data = load_csv(data_path);
    const Matrix embeddings = embed_all(model, data.features);
    Rng rng(derive_seed(s.seed, 0xca));
    const EmbeddingIndex index = condense(embeddings, data.labels, rng);
    save_index(index, (dir / "condensed.idx").string());
    std::cout << "condensed " << data.size() << " points to " << index.size() << " ("
              << format_number(100.0 * static_cast<double>(index.size()) /
                               static_cast<double>(data.size()))
              << "%), wrote " << (dir / "condensed.idx").string() << "\n";
}

std::vector<ScoredPrediction> scored_predictions(const Settings& s, const MlpModel& model,
                                                 const EmbeddingIndex& index,
                                                 const Dataset& data) {
    if (s.mc_dropout)
        return score_dataset_mc_dropout(model, index, data, s.mc_passes,
                                        derive_seed(s.seed, 0x3c));
    return score_dataset(model, index, data);
}

void cmd_score(const Settings& s, const std::string& model_path, const std::string& index_path,
               const std::string& data_path) {
    const fs::path dir = prepare_out_dir(s, "score");
    const MlpModel model = load_checkpoint(model_path);
    const EmbeddingIndex index = load_index(index_path);
    const Dataset data = load_csv(data_path);
    const auto preds = scored_predictions(s, model, index, data);
    std::ofstream report(dir / "report.csv", std::ios::binary);
    write_confidence_report(preds, report);
    std::cout << "scored " << preds.size() << " samples into " << (dir / "report.csv").string()
              << "\n";
}

void write_score_rocs(const fs::path& dir, std::span<const ScoredPrediction> preds,
                      const std::vector<int>& positives) {
    const auto write_one = [&](const std::string& name, auto getter) {
        std::vector<double> scores;
        scores.reserve(preds.size());
        for (const ScoredPrediction& p : preds) scores.push_back(getter(p));
        std::ofstream out(dir / ("roc_" + name + ".csv"), std::ios::binary);
        write_roc_csv(roc_curve(scores, positives), out);
    };
    write_one("distance", [](const ScoredPrediction& p) { return p.distance_score; });
    write_one("margin", [](const ScoredPrediction& p) { return p.margin_score; });
    write_one("entropy", [](const ScoredPrediction& p) { return p.entropy_score; });
}

void cmd_eval_error(const Settings& s, const std::string& model_path,
                    const std::string& index_path, const std::string& data_path) {
    const fs::path dir = prepare_out_dir(s, "eval-error");
    const MlpModel model = load_checkpoint(model_path);
    const EmbeddingIndex index = load_index(index_path);
    const Dataset data = load_csv(data_path);
    const auto preds = scored_predictions(s, model, index, data);

    const TaskResult result =
        error_prediction_task(preds, s.seed, resolved_config(s).serialize());
    std::ofstream auc_csv(dir / "auc.csv", std::ios::binary);
    write_task_csv(result, auc_csv);

    std::vector<int> correct;
    for (const ScoredPrediction& p : preds) correct.push_back(*p.correct ? 1 : 0);
    write_score_rocs(dir, preds, correct);

    for (const ScoreAuc& row : result.aucs)
        std::cout << row.score << " auc = " << format_number(row.auc) << "\n";
}

void cmd_eval_novelty(const Settings& s, const std::string& model_path,
                      const std::string& index_path, const std::string& known_path,
                      const std::string& novel_path) {
    const fs::path dir = prepare_out_dir(s, "eval-novelty");
    const MlpModel model = load_checkpoint(model_path);
    const EmbeddingIndex index = load_index(index_path);
    const Dataset known = load_csv(known_path);
    Dataset novel = load_csv(novel_path);
    if (novel.dim() != known.dim())
        throw UsageError("eval-novelty: known and novel sets disagree on dimension");

    const auto known_preds = scored_predictions(s, model, index, known);
    const auto novel_preds = scored_predictions(s, model, index, novel);
    const TaskResult result =
        novelty_task(known_preds, novel_preds, s.seed, resolved_config(s).serialize());
    std::ofstream auc_csv(dir / "auc.csv", std::ios::binary);
    write_task_csv(result, auc_csv);

    std::vector<ScoredPrediction> all(known_preds.begin(), known_preds.end());
    all.insert(all.end(), novel_preds.begin(), novel_preds.end());
    std::vector<int> is_known(known_preds.size(), 1);
    is_known.insert(is_known.end(), novel_preds.size(), 0);
    write_score_rocs(dir, all, is_known);

    for (const ScoreAuc& row : result.aucs)
        std::cout << row.score << " auc = " << format_number(row.auc) << "\n";
}

void cmd_ensemble(const Settings& s, const std::string& manifest_path,
                  const std::string& data_path) {
    const fs::path dir = prepare_out_dir(s, "ensemble");
    const EnsembleManifest manifest = load_manifest(manifest_path);
    const Dataset data = load_csv(data_path);

    const double accuracy = ensemble_accuracy(manifest.members, data, manifest.spec);
    std::ostringstream summary;
    summary << "rule,weighting,n,accuracy\n"
            << to_string(manifest.spec.rule) << ',' << to_string(manifest.spec.weight_score)
            << ',' << manifest.members.size() << ',' << format_number(accuracy) << '\n';
    write_text_file(dir / "summary.csv", summary.str());

    const auto preds =
        score_dataset_ensemble(manifest.members, data, manifest.spec.hybrid_partner);
    std::ofstream report(dir / "report.csv", std::ios::binary);
    write_confidence_report(preds, report);
    std::cout << to_string(manifest.spec.rule) << " ensemble of " << manifest.members.size()
              << " members: accuracy " << format_number(accuracy) << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"distance-based confidence scoring for small neural classifiers"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_path, model_path, index_path;
    std::string known_path, novel_path, manifest_path;

    auto add_common = [&](CLI::App* cmd, bool needs_config = true) {
        auto* opt = cmd->add_option("--config", config_path, "key=value config file");
        if (needs_config) opt->required();
        cmd->add_option("--out", out_dir, "output directory (overrides config/env)");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate synthetic train/test CSVs");
    add_common(gen);

    CLI::App* train_cmd = app.add_subcommand("train", "train a classifier on a dataset CSV");
    add_common(train_cmd);
    train_cmd->add_option("--data", data_path, "training CSV")->required();

    CLI::App* index_cmd = app.add_subcommand("build-index", "embed a dataset and build the k-NN index");
    add_common(index_cmd);
    index_cmd->add_option("--model", model_path, "model checkpoint")->required();
    index_cmd->add_option("--data", data_path, "training CSV")->required();

    CLI::App* condense_cmd =
        app.add_subcommand("condense", "build a condensed (prototype) index");
    add_common(condense_cmd);
    condense_cmd->add_option("--model", model_path, "model checkpoint")->required();
    condense_cmd->add_option("--data", data_path, "training CSV")->required();

    CLI::App* score_cmd = app.add_subcommand("score", "write per-sample confidence scores");
    add_common(score_cmd);
    score_cmd->add_option("--model", model_path, "model checkpoint")->required();
    score_cmd->add_option("--index", index_path, "embedding index")->required();
    score_cmd->add_option("--data", data_path, "dataset CSV to score")->required();

    CLI::App* eval_error_cmd =
        app.add_subcommand("eval-error", "AUC of each score for correctness prediction");
    add_common(eval_error_cmd);
    eval_error_cmd->add_option("--model", model_path, "model checkpoint")->required();
    eval_error_cmd->add_option("--index", index_path, "embedding index")->required();
    eval_error_cmd->add_option("--data", data_path, "labeled test CSV")->required();

    CLI::App* eval_novelty_cmd =
        app.add_subcommand("eval-novelty", "AUC of each score for novelty detection");
    add_common(eval_novelty_cmd);
    eval_novelty_cmd->add_option("--model", model_path, "model checkpoint")->required();
    eval_novelty_cmd->add_option("--index", index_path, "embedding index")->required();
    eval_novelty_cmd->add_option("--known", known_path, "known-class test CSV")->required();
    eval_novelty_cmd->add_option("--novel", novel_path, "novel-class CSV")->required();

    CLI::App* ensemble_cmd =
        app.add_subcommand("ensemble", "evaluate an ensemble described by a manifest");
    add_common(ensemble_cmd);
    ensemble_cmd->add_option("--manifest", manifest_path, "ensemble manifest file")->required();
    ensemble_cmd->add_option("--data", data_path, "labeled test CSV")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const KeyValueConfig cfg = KeyValueConfig::parse_file(config_path);
        const Settings settings = resolve_settings(cfg, out_dir);
        if (gen->parsed()) cmd_gen_data(settings);
        if (train_cmd->parsed()) cmd_train(settings, data_path);
        if (index_cmd->parsed()) cmd_build_index(settings, model_path, data_path);
        if (condense_cmd->parsed()) cmd_condense(settings, model_path, data_path);
        if (score_cmd->parsed()) cmd_score(settings, model_path, index_path, data_path);
        if (eval_error_cmd->parsed()) cmd_eval_error(settings, model_path, index_path, data_path);
        if (eval_novelty_cmd->parsed())
            cmd_eval_novelty(settings, model_path, index_path, known_path, novel_path);
        if (ensemble_cmd->parsed()) cmd_ensemble(settings, manifest_path, data_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
