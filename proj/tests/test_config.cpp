#include <catch2/catch_amalgamated.hpp>

#include "densconf/config.hpp"

using namespace densconf;

TEST_CASE("key=value parsing") {
    const KeyValueConfig cfg = KeyValueConfig::parse_string(
        "# experiment\n"
        "seed = 7\n"
        "train.alpha = 0.2\n"
        "model.hidden = 64,64\n"
        "model.dropout = 0.1, 0.2\n"
        "index.condensed = false\n"
        "out = runs/exp1\n");

    CHECK(cfg.get_int("seed") == 7);
    CHECK(cfg.get_double("train.alpha") == 0.2);
    CHECK(cfg.get_int_list("model.hidden") == std::vector<long long>{64, 64});
    CHECK(cfg.get_double_list("model.dropout") == std::vector<double>{0.1, 0.2});
    CHECK(cfg.get_bool("index.condensed") == false);
    CHECK(cfg.get_string("out") == "runs/exp1");
    CHECK(cfg.get_double("train.margin", 25.0) == 25.0); // default path
    CHECK(!cfg.has("train.margin"));
}

TEST_CASE("parse and type errors") {
    CHECK_THROWS_AS(KeyValueConfig::parse_string("just some words\n"), FormatError);
    CHECK_THROWS_AS(KeyValueConfig::parse_string(" = 3\n"), FormatError);

    const KeyValueConfig cfg = KeyValueConfig::parse_string("a = hello\nb = 1.5\n");
    CHECK_THROWS_AS(cfg.get_double("a"), UsageError);
    CHECK_THROWS_AS(cfg.get_int("b"), UsageError); // 1.5 is not an integer
    CHECK_THROWS_AS(cfg.get_bool("a"), UsageError);
    CHECK_THROWS_AS(cfg.get_string("missing"), UsageError);
}

TEST_CASE("unknown keys are rejected") {
    const KeyValueConfig cfg = KeyValueConfig::parse_string("seed = 1\ntrain.alhpa = 0.2\n");
    CHECK_THROWS_WITH(cfg.require_known_keys({"seed", "train.alpha"}),
                      Catch::Matchers::ContainsSubstring("train.alhpa"));
    cfg.require_known_keys({"seed", "train.alhpa"});
}

TEST_CASE("serialization is canonical and round-trips") {
    KeyValueConfig cfg;
    cfg.set("zeta", "1");
    cfg.set("alpha", "two words");
    cfg.set("mid.key", "0.5");
    const std::string text = cfg.serialize();
    CHECK(text == "alpha = two words\nmid.key = 0.5\nzeta = 1\n");

    const KeyValueConfig reparsed = KeyValueConfig::parse_string(text);
    CHECK(reparsed.serialize() == text);
    CHECK(reparsed.get_string("alpha") == "two words");
}
