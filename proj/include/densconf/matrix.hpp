#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "densconf/error.hpp"

namespace densconf {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles. Small enough at desk scale that no
// blocked or sparse layout is worth the complexity.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data; // rows * cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }
};

inline bool all_finite(std::span<const double> values) {
    return std::all_of(values.begin(), values.end(),
                       [](double v) { return std::isfinite(v); });
}

inline bool all_finite(const Matrix& m) { return all_finite(std::span<const double>(m.data)); }

// ELU with unit scale: x for x > 0, exp(x) - 1 otherwise.
inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }

// Derivative of elu; continuous, elu'(0) = 1.
inline double elu_derivative(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

// Derivative recovered from the activation value itself (a = elu(x)).
inline double elu_derivative_from_value(double a) { return a > 0.0 ? 1.0 : a + 1.0; }

inline Matrix elu(const Matrix& x) {
    Matrix out = x;
    for (double& v : out.data) v = elu(v);
    return out;
}

inline Matrix elu_derivative(const Matrix& x) {
    Matrix out = x;
    for (double& v : out.data) v = elu_derivative(v);
    return out;
}

// Softmax with max-subtraction; safe for arbitrarily large logits and
// invariant to adding a constant to every entry.
inline Vector stable_softmax(std::span<const double> logits) {
    if (logits.empty()) throw UsageError("stable_softmax: empty logits");
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    Vector out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - max_logit);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

// log(sum_i exp(z_i)) with the same max-shift.
inline double log_sum_exp(std::span<const double> logits) {
    if (logits.empty()) throw UsageError("log_sum_exp: empty input");
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - max_logit);
    return max_logit + std::log(sum);
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw UsageError("euclidean_distance: dimension mismatch (" +
                         std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return sum;
}

inline double euclidean_distance(std::span<const double> a, std::span<const double> b) {
    return std::sqrt(squared_distance(a, b));
}

} // namespace densconf
