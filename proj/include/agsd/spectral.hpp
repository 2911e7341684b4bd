#pragma once

// Spectral clustering on a similarity matrix: shift nonnegative, normalized
// Laplacian, embed into the k bottom eigenvectors, then seeded k-means on the
// row-normalized embedding. Eigen does the symmetric eigensolve; the rest is
// spelled out because the details (restarts, empty-cluster handling, tie
// breaks) have to be deterministic.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "agsd/rng.hpp"
#include "agsd/vec.hpp"

namespace agsd::defenses {

struct ClusterResult {
    std::vector<int> assignment;     // cluster label per point
    int n_clusters = 0;
    std::vector<std::uint8_t> empty; // clusters flagged empty (only in the n < k degenerate case)
};

namespace detail {

struct KmeansRun {
    std::vector<int> assignment;
    double inertia = std::numeric_limits<double>::infinity();
};

inline double sqdist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline KmeansRun kmeans_once(const Matrix& pts, int k, std::uint64_t seed) {
    const int n = pts.rows, d = pts.cols;
    rng::Rng r(seed);

    // k-means++ seeding
    Matrix centers(k, d);
    std::vector<double> d2(static_cast<std::size_t>(n), 0.0);
    {
        const int first = static_cast<int>(r.uniform_below(static_cast<std::uint64_t>(n)));
        std::copy(pts.row(first).begin(), pts.row(first).end(), centers.row(0).begin());
        for (int c = 1; c < k; ++c) {
            double total = 0.0;
            for (int i = 0; i < n; ++i) {
                double best = std::numeric_limits<double>::infinity();
                for (int cc = 0; cc < c; ++cc) best = std::min(best, sqdist(pts.row(i), centers.row(cc)));
                d2[static_cast<std::size_t>(i)] = best;
                total += best;
            }
            int pick;
            if (total <= 0.0) {
                pick = static_cast<int>(r.uniform_below(static_cast<std::uint64_t>(n)));
            } else {
                const double u = r.uniform() * total;
                double acc = 0.0;
                pick = n - 1;
                for (int i = 0; i < n; ++i) {
                    acc += d2[static_cast<std::size_t>(i)];
                    if (u < acc) {
                        pick = i;
                        break;
                    }
                }
            }
            std::copy(pts.row(pick).begin(), pts.row(pick).end(), centers.row(c).begin());
        }
    }

    std::vector<int> assign(static_cast<std::size_t>(n), 0);
    for (int iter = 0; iter < 300; ++iter) {
        bool changed = iter == 0;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bd = sqdist(pts.row(i), centers.row(0));
            for (int c = 1; c < k; ++c) {
                const double dist = sqdist(pts.row(i), centers.row(c));
                if (dist < bd) {
                    bd = dist;
                    best = c;
                }
            }
            if (assign[static_cast<std::size_t>(i)] != best) {
                assign[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }

        // Refill any empty cluster with the farthest member of the largest one.
        for (int c = 0; c < k; ++c) {
            std::vector<int> counts(static_cast<std::size_t>(k), 0);
            for (int a : assign) ++counts[static_cast<std::size_t>(a)];
            if (counts[static_cast<std::size_t>(c)] > 0) continue;
            int big = 0;
            for (int cc = 1; cc < k; ++cc)
                if (counts[static_cast<std::size_t>(cc)] > counts[static_cast<std::size_t>(big)]) big = cc;
            int far = -1;
            double fd = -1.0;
            for (int i = 0; i < n; ++i) {
                if (assign[static_cast<std::size_t>(i)] != big) continue;
                const double dist = sqdist(pts.row(i), centers.row(big));
                if (dist > fd) {
                    fd = dist;
                    far = i;
                }
            }
            assign[static_cast<std::size_t>(far)] = c;
            changed = true;
        }

        if (!changed) break;
        centers = Matrix(k, d);
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (int i = 0; i < n; ++i) {
            const int c = assign[static_cast<std::size_t>(i)];
            ++counts[static_cast<std::size_t>(c)];
            auto p = pts.row(i);
            auto cr = centers.row(c);
            for (int j = 0; j < d; ++j) cr[static_cast<std::size_t>(j)] += p[static_cast<std::size_t>(j)];
        }
        for (int c = 0; c < k; ++c) {
            auto cr = centers.row(c);
            for (int j = 0; j < d; ++j) cr[static_cast<std::size_t>(j)] /= counts[static_cast<std::size_t>(c)];
        }
    }

    KmeansRun run;
    run.assignment = std::move(assign);
    run.inertia = 0.0;
    for (int i = 0; i < n; ++i)
        run.inertia += sqdist(pts.row(i), centers.row(run.assignment[static_cast<std::size_t>(i)]));
    return run;
}

inline std::vector<int> kmeans(const Matrix& pts, int k, std::uint64_t seed) {
    KmeansRun best;
    for (int restart = 0; restart < 50; ++restart) {
        KmeansRun run = kmeans_once(pts, k, rng::derive_seed(seed, "kmeans", static_cast<std::uint64_t>(restart)));
        if (run.inertia < best.inertia) best = std::move(run);
    }
    return best.assignment;
}

} // namespace detail

inline ClusterResult spectral_cluster(const Matrix& affinity, int k, std::uint64_t seed) {
    const int n = affinity.rows;
    if (n < 1 || affinity.cols != n)
        throw std::invalid_argument("spectral_cluster: affinity must be square and nonempty");
    if (k < 1) throw std::invalid_argument("spectral_cluster: k must be >= 1");
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (std::abs(affinity.at(i, j) - affinity.at(j, i)) > 1e-9)
                throw std::invalid_argument("spectral_cluster: affinity not symmetric at (" +
                                            std::to_string(i) + "," + std::to_string(j) + ")");

    ClusterResult out;
    out.n_clusters = k;
    out.empty.assign(static_cast<std::size_t>(k), 0);
    if (n < k) {
        // Fewer points than clusters: every point gets its own cluster and the
        // rest are flagged empty.
        out.assignment.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) out.assignment[static_cast<std::size_t>(i)] = i;
        for (int c = n; c < k; ++c) out.empty[static_cast<std::size_t>(c)] = 1;
        return out;
    }

    // Shift so the weights are nonnegative (cosine sums can be negative).
    double mn = affinity.data[0];
    for (double v : affinity.data) mn = std::min(mn, v);
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = affinity.at(i, j) - mn;

    Eigen::VectorXd dinv(n);
    for (int i = 0; i < n; ++i) {
        const double deg = a.row(i).sum();
        dinv(i) = deg > 1e-12 ? 1.0 / std::sqrt(deg) : 0.0;
    }
    Eigen::MatrixXd lap = Eigen::MatrixXd::Identity(n, n) - dinv.asDiagonal() * a * dinv.asDiagonal();
    lap = 0.5 * (lap + lap.transpose()); // keep the solver on the symmetric path

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap);
    if (solver.info() != Eigen::Success)
        throw std::runtime_error("spectral_cluster: eigendecomposition failed");

    // Rows of the bottom-k eigenvector block, unit-normalized.
    Matrix emb(n, k);
    for (int i = 0; i < n; ++i) {
        double norm = 0.0;
        for (int c = 0; c < k; ++c) {
            emb.at(i, c) = solver.eigenvectors()(i, c);
            norm += emb.at(i, c) * emb.at(i, c);
        }
        norm = std::sqrt(norm);
        if (norm > 1e-12)
            for (int c = 0; c < k; ++c) emb.at(i, c) /= norm;
    }

    out.assignment = detail::kmeans(emb, k, seed);
    return out;
}

} // namespace agsd::defenses
