#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "densconf/checkpoint.hpp"
#include "densconf/error.hpp"
#include "densconf/matrix.hpp"
#include "densconf/rng.hpp"

namespace densconf {

// Embedded training points with labels; answers exact k-nearest-neighbor
// queries by full scan. Immutable after construction, so concurrent queries
// are safe.
struct EmbeddingIndex {
    Matrix points;           // N x d
    std::vector<int> labels; // N, values in [0, num_classes)
    std::size_t k = 1;
    int num_classes = 0;
    bool condensed = false;

    std::size_t size() const { return points.rows; }
    std::size_t dim() const { return points.cols; }
};

struct Neighbor {
    std::size_t index = 0; // row in the index
    double distance = 0.0;
    int label = 0;
};

// Smallest per-class count; the default k ("use every same-class neighbor").
inline std::size_t default_k(std::span<const int> labels) {
    if (labels.empty()) throw UsageError("default_k: empty label set");
    int max_label = 0;
    for (int l : labels) max_label = std::max(max_label, l);
    std::vector<std::size_t> counts(static_cast<std::size_t>(max_label) + 1, 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    std::size_t smallest = labels.size();
    for (std::size_t c : counts)
        if (c > 0) smallest = std::min(smallest, c);
    return smallest;
}

inline EmbeddingIndex build_index(Matrix points, std::vector<int> labels, std::size_t k) {
    if (points.rows != labels.size())
        throw UsageError("build_index: points/labels size mismatch");
    if (points.rows == 0) throw UsageError("build_index: empty point set");
    if (k == 0 || k > points.rows)
        throw UsageError("build_index: k must satisfy 1 <= k <= N (k = " + std::to_string(k) +
                         ", N = " + std::to_string(points.rows) + ")");
    int max_label = 0;
    for (int l : labels) {
        if (l < 0) throw UsageError("build_index: negative label");
        max_label = std::max(max_label, l);
    }
    EmbeddingIndex index;
    index.points = std::move(points);
    index.labels = std::move(labels);
    index.k = k;
    index.num_classes = max_label + 1;
    return index;
}

// The k nearest stored points, ascending by distance; ties broken by
// ascending row index.
inline std::vector<Neighbor> knn_query(const EmbeddingIndex& index,
                                       std::span<const double> query) {
    if (query.size() != index.dim())
        throw UsageError("knn_query: query dimension mismatch (" + std::to_string(query.size()) +
                         " vs " + std::to_string(index.dim()) + ")");
    const std::size_t n = index.size();
    std::vector<std::pair<double, std::size_t>> scored(n);
    for (std::size_t i = 0; i < n; ++i)
        scored[i] = {squared_distance(index.points.row(i), query), i};

    const std::size_t k = index.k;
    std::nth_element(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k - 1),
                     scored.end());
    std::sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k));

    std::vector<Neighbor> neighbors(k);
    for (std::size_t i = 0; i < k; ++i) {
        neighbors[i].index = scored[i].second;
        neighbors[i].distance = std::sqrt(scored[i].first);
        neighbors[i].label = index.labels[scored[i].second];
    }
    return neighbors;
}

namespace detail {

inline std::size_t nearest_stored(const Matrix& points, std::span<const std::size_t> store,
                                  std::span<const double> query) {
    std::size_t best = store[0];
    double best_d = squared_distance(points.row(store[0]), query);
    for (std::size_t i = 1; i < store.size(); ++i) {
        const double d = squared_distance(points.row(store[i]), query);
        if (d < best_d || (d == best_d && store[i] < best)) {
            best = store[i];
            best_d = d;
        }
    }
    return best;
}

} // namespace detail

// Hart's condensation: seed the store with one point per class, then scan in
// one fixed shuffled order, adding every point the current store misclassifies
// under the 1-NN rule, until a full pass adds nothing. The result classifies
// every original point correctly by construction.
inline EmbeddingIndex condense(const Matrix& points, std::span<const int> labels, Rng& rng) {
    if (points.rows != labels.size()) throw UsageError("condense: points/labels size mismatch");
    if (points.rows == 0) throw UsageError("condense: empty point set");

    int max_label = 0;
    for (int l : labels) max_label = std::max(max_label, l);
    const std::size_t num_classes = static_cast<std::size_t>(max_label) + 1;

    std::vector<std::size_t> order(points.rows);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<char> in_store(points.rows, 0);
    std::vector<std::size_t> store;
    std::vector<char> seeded(num_classes, 0);
    for (std::size_t i : order) {
        const std::size_t c = static_cast<std::size_t>(labels[i]);
        if (!seeded[c]) {
            seeded[c] = 1;
            in_store[i] = 1;
            store.push_back(i);
        }
    }

    bool added = true;
    while (added) {
        added = false;
        for (std::size_t i : order) {
            if (in_store[i]) continue;
            const std::size_t nearest = detail::nearest_stored(points, store, points.row(i));
            if (labels[nearest] != labels[i]) {
                in_store[i] = 1;
                store.push_back(i);
                added = true;
            }
        }
    }
    std::sort(store.begin(), store.end());

    Matrix kept(store.size(), points.cols);
    std::vector<int> kept_labels(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
        std::copy(points.row(store[i]).begin(), points.row(store[i]).end(), kept.row(i).begin());
        kept_labels[i] = labels[store[i]];
    }
    const std::size_t k = default_k(kept_labels);
    EmbeddingIndex index = build_index(std::move(kept), std::move(kept_labels), k);
    index.condensed = true;
    return index;
}

// ---------------------------------------------------------------------------
// Serialization: same binary convention as model checkpoints
//   magic "DCONFIDX", u32 version, u64 N, u64 d, u64 k, u32 C, u8 condensed,
//   f64 points (row-major), u32 labels
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kIndexMagic[8] = {'D', 'C', 'O', 'N', 'F', 'I', 'D', 'X'};
constexpr std::uint32_t kIndexVersion = 1;

} // namespace detail

inline void save_index(const EmbeddingIndex& index, std::ostream& out) {
    out.write(detail::kIndexMagic, sizeof(detail::kIndexMagic));
    detail::write_pod(out, detail::kIndexVersion);
    detail::write_pod(out, static_cast<std::uint64_t>(index.size()));
    detail::write_pod(out, static_cast<std::uint64_t>(index.dim()));
    detail::write_pod(out, static_cast<std::uint64_t>(index.k));
    detail::write_pod(out, static_cast<std::uint32_t>(index.num_classes));
    detail::write_pod(out, static_cast<std::uint8_t>(index.condensed ? 1 : 0));
    detail::write_doubles(out, index.points.data);
    for (int l : index.labels) detail::write_pod(out, static_cast<std::uint32_t>(l));
}

inline void save_index(const EmbeddingIndex& index, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("save_index: cannot open '" + path + "' for writing");
    save_index(index, out);
    if (!out) throw FormatError("save_index: write to '" + path + "' failed");
}

inline EmbeddingIndex load_index(std::istream& in) {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, detail::kIndexMagic, sizeof(magic)) != 0)
        throw FormatError("index: bad magic, not an embedding index file");
    std::uint32_t version = 0;
    detail::read_pod(in, version, "format version");
    if (version != detail::kIndexVersion)
        throw FormatError("index: unsupported format version " + std::to_string(version));

    std::uint64_t n = 0, d = 0, k = 0;
    std::uint32_t num_classes = 0;
    std::uint8_t condensed = 0;
    detail::read_pod(in, n, "point count");
    detail::read_pod(in, d, "dimension");
    detail::read_pod(in, k, "k");
    detail::read_pod(in, num_classes, "class count");
    detail::read_pod(in, condensed, "condensed flag");
    if (n == 0 || d == 0 || k == 0 || k > n)
        throw FormatError("index: inconsistent header (N = " + std::to_string(n) +
                          ", d = " + std::to_string(d) + ", k = " + std::to_string(k) + ")");

    Matrix points(static_cast<std::size_t>(n), static_cast<std::size_t>(d));
    detail::read_doubles(in, points.data, "points");
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        std::uint32_t l = 0;
        detail::read_pod(in, l, "label " + std::to_string(i));
        if (l >= num_classes)
            throw FormatError("index: label " + std::to_string(i) + " out of declared class range");
        labels[i] = static_cast<int>(l);
    }
    EmbeddingIndex index = build_index(std::move(points), std::move(labels),
                                       static_cast<std::size_t>(k));
    index.num_classes = static_cast<int>(num_classes);
    index.condensed = condensed != 0;
    return index;
}

inline EmbeddingIndex load_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("load_index: cannot open '" + path + "'");
    return load_index(in);
}

} // namespace densconf
