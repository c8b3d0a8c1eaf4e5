#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "densconf/dataset.hpp"
#include "densconf/knn_index.hpp"

using namespace densconf;

TEST_CASE("global contrast normalization") {
    Matrix m(3, 2);
    m(0, 0) = 1.0;
    m(0, 1) = 3.0;
    m(1, 0) = 5.0;
    m(1, 1) = 5.0; // constant row
    m(2, 0) = -2.0;
    m(2, 1) = 4.0;

    const Matrix out = global_contrast_normalize(m);
    CHECK(out(0, 0) == Catch::Approx(-1.0).margin(1e-12));
    CHECK(out(0, 1) == Catch::Approx(1.0).margin(1e-12));
    CHECK(out(1, 0) == 0.0); // floored std maps constant rows to zero
    CHECK(out(1, 1) == 0.0);

    Rng rng(3);
    std::normal_distribution<double> normal(2.0, 5.0);
    Matrix big(40, 16);
    for (double& v : big.data) v = normal(rng);
    const Matrix norm = global_contrast_normalize(big);
    for (std::size_t r = 0; r < norm.rows; ++r) {
        double mean = 0.0, var = 0.0;
        for (double v : norm.row(r)) mean += v;
        mean /= 16.0;
        for (double v : norm.row(r)) var += (v - mean) * (v - mean);
        var /= 16.0;
        CHECK(std::abs(mean) < 1e-12);
        CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-9);
    }
}

TEST_CASE("zca whitening makes the train covariance white") {
    Rng rng(17);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t n = 10000, d = 4;
    // Correlated sample: x = A g with a fixed mixing matrix.
    Matrix mix(d, d);
    for (double& v : mix.data) v = normal(rng);
    for (std::size_t i = 0; i < d; ++i) mix(i, i) += 2.0;
    Matrix x(n, d);
    for (std::size_t r = 0; r < n; ++r) {
        Vector g(d);
        for (double& v : g) v = normal(rng);
        for (std::size_t i = 0; i < d; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < d; ++j) sum += mix(i, j) * g[j];
            x(r, i) = sum + 3.0;
        }
    }

    const ZcaTransform t = fit_zca(x, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            CHECK(std::abs(t.whitening(i, j) - t.whitening(j, i)) < 1e-10);

    const Matrix white = apply_zca(t, x);
    Vector mean(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < d; ++i) mean[i] += white(r, i);
    for (double& v : mean) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            double cov = 0.0;
            for (std::size_t r = 0; r < n; ++r)
                cov += (white(r, i) - mean[i]) * (white(r, j) - mean[j]);
            cov /= static_cast<double>(n);
            const double expected = i == j ? 1.0 : 0.0;
            CHECK(std::abs(cov - expected) < (i == j ? 1e-2 : 1e-6));
        }
    }
}

TEST_CASE("zca on already-white data is close to identity") {
    Rng rng(23);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix x(20000, 3);
    for (double& v : x.data) v = normal(rng);
    const ZcaTransform t = fit_zca(x, 0.0);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(std::abs(t.whitening(i, j) - (i == j ? 1.0 : 0.0)) < 5e-2);
}

TEST_CASE("zca edge cases") {
    CHECK_THROWS_AS(fit_zca(Matrix(0, 3)), UsageError);

    // Rank-deficient: second column is a copy of the first.
    Rng rng(29);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix x(200, 2);
    for (std::size_t r = 0; r < x.rows; ++r) {
        x(r, 0) = normal(rng);
        x(r, 1) = x(r, 0);
    }
    const ZcaTransform t = fit_zca(x, 1e-5);
    CHECK(all_finite(t.whitening));
    CHECK_THROWS_AS(fit_zca(x, 0.0), UsageError);

    // apply is a pure function of (transform, features).
    const Matrix once = apply_zca(t, x);
    const Matrix twice = apply_zca(t, x);
    CHECK(once.data == twice.data);
}

namespace {

// Split one generated dataset into interleaved halves so train and test share
// cluster centers.
std::pair<Dataset, Dataset> split_half(const Dataset& all) {
    Dataset train, test;
    train.num_classes = test.num_classes = all.num_classes;
    const std::size_t half = all.size() / 2;
    train.features = Matrix(half, all.dim());
    test.features = Matrix(all.size() - half, all.dim());
    std::size_t tr = 0, te = 0;
    for (std::size_t r = 0; r < all.size(); ++r) {
        if (r % 2 == 0) {
            std::copy(all.features.row(r).begin(), all.features.row(r).end(),
                      train.features.row(tr++).begin());
            train.labels.push_back(all.labels[r]);
        } else {
            std::copy(all.features.row(r).begin(), all.features.row(r).end(),
                      test.features.row(te++).begin());
            test.labels.push_back(all.labels[r]);
        }
    }
    test.split = SplitTag::Test;
    return {std::move(train), std::move(test)};
}

double one_nn_accuracy(const Dataset& train, const Dataset& test) {
    const EmbeddingIndex index = build_index(train.features, train.labels, 1);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < test.size(); ++r) {
        const auto neighbors = knn_query(index, test.features.row(r));
        if (neighbors[0].label == test.labels[r]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

} // namespace

TEST_CASE("make_overlap spans separable to indistinguishable") {
    const auto [train, test] = split_half(make_overlap(3, 200, 0.0, 5));
    CHECK(one_nn_accuracy(train, test) >= 0.99);

    const auto [btrain, btest] = split_half(make_overlap(4, 150, 1.0, 9));
    const double acc = one_nn_accuracy(btrain, btest);
    CHECK(acc > 0.25 - 0.12);
    CHECK(acc < 0.25 + 0.12);
}

TEST_CASE("generators are pure functions of the seed") {
    const Dataset a = make_overlap(5, 50, 0.4, 1234);
    const Dataset b = make_overlap(5, 50, 0.4, 1234);
    CHECK(a.features.data == b.features.data);
    CHECK(a.labels == b.labels);

    const Dataset c = make_blobs(3, 40, 8, 2.0, 0.5, 77);
    const Dataset d = make_blobs(3, 40, 8, 2.0, 0.5, 77);
    CHECK(c.features.data == d.features.data);

    const NoveltyPair p1 = make_novelty_pair(99);
    const NoveltyPair p2 = make_novelty_pair(99);
    CHECK(p1.known.features.data == p2.known.features.data);
    CHECK(p1.novel.features.data == p2.novel.features.data);
    CHECK(p1.novel.split == SplitTag::Novel);
}

TEST_CASE("csv round trip and validation") {
    std::istringstream hand("f0,f1,label\n"
                            "# comment line\n"
                            "1.5,-2,0\n"
                            "0,3.25,1\n"
                            "4,5,2\n");
    const Dataset data = load_csv(hand, "hand.csv");
    REQUIRE(data.size() == 3);
    REQUIRE(data.dim() == 2);
    CHECK(data.features(0, 0) == 1.5);
    CHECK(data.features(1, 1) == 3.25);
    CHECK(data.labels == std::vector<int>{0, 1, 2});
    CHECK(data.num_classes == 3);

    std::ostringstream out;
    save_csv(data, out);
    std::istringstream back(out.str());
    const Dataset reload = load_csv(back);
    CHECK(reload.features.data == data.features.data);
    CHECK(reload.labels == data.labels);

    std::istringstream bad_cell("f0,f1,label\n1,2,0\n1,oops,1\n");
    CHECK_THROWS_WITH(load_csv(bad_cell, "bad.csv"),
                      Catch::Matchers::ContainsSubstring("line 3"));

    std::istringstream bad_header("f0,f2,label\n1,2,0\n");
    CHECK_THROWS_AS(load_csv(bad_header, "hdr.csv"), FormatError);

    std::istringstream missing_col("f0,f1,label\n1,2\n");
    CHECK_THROWS_AS(load_csv(missing_col, "cols.csv"), FormatError);

    std::istringstream bad_label("f0,f1,label\n1,2,-3\n");
    CHECK_THROWS_AS(load_csv(bad_label, "lbl.csv"), FormatError);
}
