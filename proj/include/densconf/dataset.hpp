#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "densconf/error.hpp"
#include "densconf/matrix.hpp"
#include "densconf/rng.hpp"

namespace densconf {

enum class SplitTag { Train, Test, Novel };

inline std::string to_string(SplitTag tag) {
    switch (tag) {
        case SplitTag::Train: return "train";
        case SplitTag::Test: return "test";
        case SplitTag::Novel: return "novel";
    }
    return "?";
}

struct Dataset {
    Matrix features;         // N x d
    std::vector<int> labels; // N, values in [0, num_classes)
    int num_classes = 0;
    SplitTag split = SplitTag::Train;

    std::size_t size() const { return features.rows; }
    std::size_t dim() const { return features.cols; }
};

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

// Per-sample normalization: each row is shifted to mean 0 and scaled to unit
// standard deviation (population convention, std floored at 1e-8).
inline Matrix global_contrast_normalize(const Matrix& features) {
    if (features.cols < 2)
        throw UsageError("global_contrast_normalize: need at least 2 feature columns");
    Matrix out = features;
    for (std::size_t r = 0; r < out.rows; ++r) {
        auto row = out.row(r);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(row.size());
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(row.size());
        const double std_dev = std::max(std::sqrt(var), 1e-8);
        for (double& v : row) v = (v - mean) / std_dev;
    }
    return out;
}

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Fine for the d <= a
// few hundred this library deals with. Returns eigenvalues and the matrix of
// column eigenvectors.
inline void jacobi_eigen_symmetric(const Matrix& sym, Vector& eigenvalues, Matrix& eigenvectors) {
    const std::size_t n = sym.rows;
    Matrix a = sym;
    eigenvectors = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) eigenvectors(i, i) = 1.0;

    double frob = 0.0;
    for (double v : a.data) frob += v * v;
    const double tol = 1e-14 * std::max(1.0, std::sqrt(frob));

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (std::sqrt(2.0 * off) < tol) break;

        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < tol / static_cast<double>(n * n)) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = a(i, p), aiq = a(i, q);
                    a(i, p) = c * aip - s * aiq;
                    a(i, q) = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double api = a(p, i), aqi = a(q, i);
                    a(p, i) = c * api - s * aqi;
                    a(q, i) = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = eigenvectors(i, p), viq = eigenvectors(i, q);
                    eigenvectors(i, p) = c * vip - s * viq;
                    eigenvectors(i, q) = s * vip + c * viq;
                }
            }
        }
    }
    eigenvalues.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) eigenvalues[i] = a(i, i);
}

} // namespace detail

// Whitening transform fitted on the train split only.
struct ZcaTransform {
    Vector mean;       // d
    Matrix whitening;  // d x d, symmetric
    double regularizer = 0.0;
};

inline ZcaTransform fit_zca(const Matrix& train_features, double regularizer = 1e-5) {
    if (train_features.rows == 0)
        throw UsageError("fit_zca: cannot fit on an empty feature set");
    const std::size_t n = train_features.rows;
    const std::size_t d = train_features.cols;

    ZcaTransform t;
    t.regularizer = regularizer;
    t.mean.assign(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) t.mean[c] += train_features(r, c);
    for (double& m : t.mean) m /= static_cast<double>(n);

    Matrix cov(d, d);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < d; ++i) {
            const double xi = train_features(r, i) - t.mean[i];
            for (std::size_t j = i; j < d; ++j)
                cov(i, j) += xi * (train_features(r, j) - t.mean[j]);
        }
    }
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) {
            cov(i, j) /= static_cast<double>(n);
            cov(j, i) = cov(i, j);
        }

    Vector eigenvalues;
    Matrix eigenvectors;
    detail::jacobi_eigen_symmetric(cov, eigenvalues, eigenvectors);

    // W = U (L + reg I)^(-1/2) U^T; tiny negative eigenvalues are roundoff.
    Vector inv_sqrt(d);
    for (std::size_t i = 0; i < d; ++i) {
        const double lambda = std::max(eigenvalues[i], 0.0) + regularizer;
        if (lambda <= 0.0)
            throw UsageError("fit_zca: rank-deficient features need a positive regularizer");
        inv_sqrt[i] = 1.0 / std::sqrt(lambda);
    }
    t.whitening = Matrix(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double sum = 0.0;
            for (std::size_t k = 0; k < d; ++k)
                sum += eigenvectors(i, k) * inv_sqrt[k] * eigenvectors(j, k);
            t.whitening(i, j) = sum;
        }
    // Symmetrize away the last bits of roundoff.
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j) {
            const double avg = 0.5 * (t.whitening(i, j) + t.whitening(j, i));
            t.whitening(i, j) = avg;
            t.whitening(j, i) = avg;
        }
    return t;
}

// Applies train-fitted statistics to any split; pure function of (t, features).
inline Matrix apply_zca(const ZcaTransform& t, const Matrix& features) {
    if (features.cols != t.mean.size())
        throw UsageError("apply_zca: feature dimension mismatch");
    const std::size_t d = features.cols;
    Matrix out(features.rows, d);
    for (std::size_t r = 0; r < features.rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
            double sum = 0.0;
            for (std::size_t i = 0; i < d; ++i)
                sum += (features(r, i) - t.mean[i]) * t.whitening(i, j);
            out(r, j) = sum;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

inline Matrix random_centers(int num_classes, std::size_t dim, double scale, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix centers(static_cast<std::size_t>(num_classes), dim);
    for (double& v : centers.data) v = scale * normal(rng);
    return centers;
}

// Gaussian blob per class around the given centers.
inline Dataset make_blobs(int num_classes, std::size_t per_class, std::size_t dim,
                          const Matrix& centers, double spread, std::uint64_t seed) {
    if (num_classes < 1 || per_class == 0 || dim == 0)
        throw UsageError("make_blobs: class count, per-class count and dimension must be positive");
    if (centers.rows != static_cast<std::size_t>(num_classes) || centers.cols != dim)
        throw UsageError("make_blobs: centers must be num_classes x dim");
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Dataset data;
    data.num_classes = num_classes;
    data.features = Matrix(per_class * static_cast<std::size_t>(num_classes), dim);
    data.labels.reserve(data.features.rows);
    std::size_t row = 0;
    for (int c = 0; c < num_classes; ++c) {
        for (std::size_t s = 0; s < per_class; ++s, ++row) {
            for (std::size_t j = 0; j < dim; ++j)
                data.features(row, j) = centers(static_cast<std::size_t>(c), j) + spread * normal(rng);
            data.labels.push_back(c);
        }
    }
    return data;
}

// `stream` selects an independent noise draw over the same seed-derived
// centers, so train and test splits share geometry: stream 0 for train,
// stream 1 for test, and so on.
inline Dataset make_blobs(int num_classes, std::size_t per_class, std::size_t dim,
                          double center_scale, double spread, std::uint64_t seed,
                          std::uint64_t stream = 0) {
    Rng center_rng(derive_seed(seed, 0xc0));
    const Matrix centers = random_centers(num_classes, dim, center_scale, center_rng);
    return make_blobs(num_classes, per_class, dim, centers, spread,
                      derive_seed(seed, 0xb1 + stream));
}

// Gaussian class clusters with unit spread whose centers contract toward the
// origin as `overlap` grows, so the Bayes error is tunable: overlap 0 gives
// well-separated classes, overlap 1 makes all classes indistinguishable.
inline Dataset make_overlap(int num_classes, std::size_t per_class, double overlap,
                            std::uint64_t seed, std::size_t dim = 32,
                            std::uint64_t stream = 0) {
    if (overlap < 0.0 || overlap > 1.0)
        throw UsageError("make_overlap: overlap must lie in [0, 1]");
    // Center scale chosen so overlap=0 yields pairwise center distances around
    // ten cluster standard deviations at the default dimension.
    const double scale = (1.0 - overlap) * 10.0 / std::sqrt(2.0 * static_cast<double>(dim));
    Rng center_rng(derive_seed(seed, 0xc0));
    const Matrix centers = random_centers(num_classes, dim, scale, center_rng);
    return make_blobs(num_classes, per_class, dim, centers, 1.0,
                      derive_seed(seed, 0xb1 + stream));
}

// A known set of `num_known` classes plus a novel set drawn from held-out
// cluster centers placed well outside the known support.
struct NoveltyPair {
    Dataset known;
    Dataset novel;
};

inline NoveltyPair make_novelty_pair(std::uint64_t seed, int num_known = 5, int num_novel = 3,
                                     std::size_t per_class = 200, std::size_t dim = 32,
                                     double known_scale = 1.1, double novel_radius_factor = 3.0,
                                     double novel_spread = 2.0, std::uint64_t stream = 0) {
    Rng center_rng(derive_seed(seed, 0xc0));
    const Matrix known_centers = random_centers(num_known, dim, known_scale, center_rng);
    const Matrix novel_centers =
        random_centers(num_novel, dim, known_scale * novel_radius_factor, center_rng);

    NoveltyPair pair;
    pair.known = make_blobs(num_known, per_class, dim, known_centers, 1.0,
                            derive_seed(seed, 0xb1 + stream));
    pair.novel = make_blobs(num_novel, per_class, dim, novel_centers, novel_spread,
                            derive_seed(seed, 0xd1 + stream));
    pair.novel.split = SplitTag::Novel;
    return pair;
}

// ---------------------------------------------------------------------------
// CSV  (header `f0,...,f{d-1},label`; '#' starts a comment line)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

} // namespace detail

inline void save_csv(const Dataset& data, std::ostream& out) {
    for (std::size_t j = 0; j < data.dim(); ++j) out << 'f' << j << ',';
    out << "label\n";
    for (std::size_t r = 0; r < data.size(); ++r) {
        for (std::size_t j = 0; j < data.dim(); ++j)
            out << detail::format_double(data.features(r, j)) << ',';
        out << data.labels[r] << '\n';
    }
}

inline void save_csv(const Dataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("save_csv: cannot open '" + path + "' for writing");
    save_csv(data, out);
}

inline Dataset load_csv(std::istream& in, const std::string& source = "<stream>") {
    std::string line;
    std::size_t line_no = 0;

    auto next_content_line = [&](std::string& out_line) {
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            out_line = line;
            return true;
        }
        return false;
    };

    std::string header;
    if (!next_content_line(header))
        throw FormatError(source + ": missing header row");
    const auto columns = detail::split_csv_line(header);
    if (columns.size() < 2 || columns.back() != "label")
        throw FormatError(source + ": line " + std::to_string(line_no) +
                          ": header must declare feature columns and a trailing 'label' column");
    const std::size_t dim = columns.size() - 1;
    for (std::size_t j = 0; j < dim; ++j) {
        if (columns[j] != "f" + std::to_string(j))
            throw FormatError(source + ": line " + std::to_string(line_no) +
                              ": expected feature column 'f" + std::to_string(j) +
                              "', found '" + columns[j] + "'");
    }

    std::vector<double> values;
    std::vector<int> labels;
    std::string row;
    while (next_content_line(row)) {
        const auto cells = detail::split_csv_line(row);
        if (cells.size() != dim + 1)
            throw FormatError(source + ": line " + std::to_string(line_no) + ": expected " +
                              std::to_string(dim + 1) + " cells, found " +
                              std::to_string(cells.size()));
        for (std::size_t j = 0; j < dim; ++j) {
            char* end = nullptr;
            const double v = std::strtod(cells[j].c_str(), &end);
            if (end == cells[j].c_str() || *end != '\0' || !std::isfinite(v))
                throw FormatError(source + ": line " + std::to_string(line_no) +
                                  ": non-numeric cell '" + cells[j] + "' in column f" +
                                  std::to_string(j));
            values.push_back(v);
        }
        char* end = nullptr;
        const long lbl = std::strtol(cells[dim].c_str(), &end, 10);
        if (end == cells[dim].c_str() || *end != '\0' || lbl < 0)
            throw FormatError(source + ": line " + std::to_string(line_no) +
                              ": unknown label '" + cells[dim] + "'");
        labels.push_back(static_cast<int>(lbl));
    }

    Dataset data;
    data.features.rows = labels.size();
    data.features.cols = dim;
    data.features.data = std::move(values);
    data.labels = std::move(labels);
    int max_label = -1;
    for (int l : data.labels) max_label = std::max(max_label, l);
    data.num_classes = max_label + 1;
    return data;
}

inline Dataset load_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("load_csv: cannot open '" + path + "'");
    return load_csv(in, path);
}

} // namespace densconf
