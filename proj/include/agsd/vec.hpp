#pragma once

// Flat row-major matrix and the handful of vector ops used everywhere.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace agsd {

struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), data(extent(r, c), fill) {}

    // validates before the data vector is sized, so a negative shape cannot
    // wrap around to a huge allocation
    static std::size_t extent(int r, int c) {
        if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative shape");
        return static_cast<std::size_t>(r) * static_cast<std::size_t>(c);
    }

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    std::span<double> row(int r) {
        return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
    }
    std::span<const double> row(int r) const {
        return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
    }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("dot: length mismatch (" + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()) + ")");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Cosine similarity; defined as 0 when either vector is all-zero so that
// degenerate deltas never poison a similarity matrix with NaNs.
inline double cosine_sim(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("cosine_sim: length mismatch (" + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()) + ")");
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median: empty input");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace agsd
