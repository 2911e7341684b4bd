#pragma once

// Datasets, partitioning plans and trigger poisoning.
//
// Inputs are flat feature vectors in [0,1]. Synthetic data is Gaussian class
// blobs; real data comes in via the IDX image/label format.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "agsd/rng.hpp"
#include "agsd/vec.hpp"

namespace agsd::data {

struct Dataset {
    Matrix inputs;             // N x D
    std::vector<int> labels;   // N entries in [0, num_classes)
    int num_classes = 0;

    int size() const { return inputs.rows; }
    int dim() const { return inputs.cols; }

    void validate() const {
        if (inputs.rows != static_cast<int>(labels.size()))
            throw std::invalid_argument("Dataset: " + std::to_string(inputs.rows) + " rows but " +
                                        std::to_string(labels.size()) + " labels");
        if (num_classes < 1) throw std::invalid_argument("Dataset: num_classes must be >= 1");
        for (int y : labels)
            if (y < 0 || y >= num_classes)
                throw std::invalid_argument("Dataset: label " + std::to_string(y) +
                                            " outside [0, " + std::to_string(num_classes) + ")");
    }
};

inline Dataset subset(const Dataset& d, const std::vector<int>& indices) {
    Dataset out;
    out.num_classes = d.num_classes;
    out.inputs = Matrix(static_cast<int>(indices.size()), d.dim());
    out.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const int src = indices[r];
        if (src < 0 || src >= d.size())
            throw std::invalid_argument("subset: index " + std::to_string(src) + " out of range");
        auto dst = out.inputs.row(static_cast<int>(r));
        auto s = d.inputs.row(src);
        std::copy(s.begin(), s.end(), dst.begin());
        out.labels.push_back(d.labels[static_cast<std::size_t>(src)]);
    }
    return out;
}

// Gaussian blobs: one uniform mean per class in [0,1]^dim, samples at
// mean + N(0, (1/separation)^2) per coordinate, clipped back into [0,1].
// Larger separation = cleaner blobs.
inline Dataset gen_synthetic(int num_classes, int dim, int samples_per_class,
                             double separation, std::uint64_t seed) {
    if (num_classes < 1 || dim < 1 || samples_per_class < 1)
        throw std::invalid_argument("gen_synthetic: counts must be positive");
    if (separation <= 0.0)
        throw std::invalid_argument("gen_synthetic: separation must be positive");
    rng::Rng r(seed);
    Matrix means(num_classes, dim);
    for (auto& m : means.data) m = r.uniform();
    const double noise = 1.0 / separation;
    Dataset out;
    out.num_classes = num_classes;
    out.inputs = Matrix(num_classes * samples_per_class, dim);
    out.labels.resize(static_cast<std::size_t>(num_classes) * samples_per_class);
    int row = 0;
    for (int k = 0; k < num_classes; ++k) {
        for (int s = 0; s < samples_per_class; ++s, ++row) {
            auto x = out.inputs.row(row);
            for (int j = 0; j < dim; ++j) {
                const double v = means.at(k, j) + noise * r.normal();
                x[j] = std::clamp(v, 0.0, 1.0);
            }
            out.labels[static_cast<std::size_t>(row)] = k;
        }
    }
    return out;
}

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_idx: cannot open " + path);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
           (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

} // namespace detail

// IDX image/label pair (the MNIST container format). Big-endian header,
// magic 2051 for images and 2049 for labels, pixel bytes scaled to [0,1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img = detail::read_file(images_path);
    if (img.size() < 16) throw std::runtime_error("load_idx: truncated image header in " + images_path);
    const std::uint32_t img_magic = detail::be32(img, 0);
    if (img_magic != 2051)
        throw std::runtime_error("load_idx: bad image magic " + std::to_string(img_magic) +
                                 " (expected 2051) in " + images_path);
    const std::uint32_t n = detail::be32(img, 4);
    const std::uint32_t rows = detail::be32(img, 8);
    const std::uint32_t cols = detail::be32(img, 12);
    const std::size_t need = 16 + std::size_t(n) * rows * cols;
    if (img.size() < need)
        throw std::runtime_error("load_idx: truncated image payload in " + images_path + " (" +
                                 std::to_string(img.size()) + " bytes, need " + std::to_string(need) + ")");

    const auto lab = detail::read_file(labels_path);
    if (lab.size() < 8) throw std::runtime_error("load_idx: truncated label header in " + labels_path);
    const std::uint32_t lab_magic = detail::be32(lab, 0);
    if (lab_magic != 2049)
        throw std::runtime_error("load_idx: bad label magic " + std::to_string(lab_magic) +
                                 " (expected 2049) in " + labels_path);
    const std::uint32_t n_lab = detail::be32(lab, 4);
    if (n_lab != n)
        throw std::runtime_error("load_idx: count mismatch: " + std::to_string(n) + " images vs " +
                                 std::to_string(n_lab) + " labels");
    if (lab.size() < 8 + std::size_t(n_lab))
        throw std::runtime_error("load_idx: truncated label payload in " + labels_path);

    Dataset out;
    out.inputs = Matrix(static_cast<int>(n), static_cast<int>(rows * cols));
    out.labels.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        auto x = out.inputs.row(static_cast<int>(i));
        const std::size_t base = 16 + std::size_t(i) * rows * cols;
        for (std::uint32_t j = 0; j < rows * cols; ++j)
            x[j] = static_cast<double>(img[base + j]) / 255.0;
        out.labels[i] = static_cast<int>(lab[8 + i]);
    }
    int maxlab = 0;
    for (int y : out.labels) maxlab = std::max(maxlab, y);
    out.num_classes = maxlab + 1;
    return out;
}

struct PartitionPlan {
    std::vector<std::vector<int>> client_indices; // per client, sample indices into the dataset
};

// Even split of a seeded shuffle; client sizes differ by at most one.
inline PartitionPlan partition_iid(int n_samples, int n_clients, std::uint64_t seed) {
    if (n_clients < 1) throw std::invalid_argument("partition_iid: n_clients must be positive");
    if (n_samples < n_clients)
        throw std::invalid_argument("partition_iid: fewer samples (" + std::to_string(n_samples) +
                                    ") than clients (" + std::to_string(n_clients) + ")");
    std::vector<int> idx = rng::shuffled_indices(n_samples, seed);
    PartitionPlan plan;
    plan.client_indices.resize(static_cast<std::size_t>(n_clients));
    const int base = n_samples / n_clients;
    const int extra = n_samples % n_clients;
    std::size_t pos = 0;
    for (int c = 0; c < n_clients; ++c) {
        const int take = base + (c < extra ? 1 : 0);
        auto& dst = plan.client_indices[static_cast<std::size_t>(c)];
        dst.assign(idx.begin() + static_cast<long>(pos), idx.begin() + static_cast<long>(pos + take));
        pos += static_cast<std::size_t>(take);
    }
    return plan;
}

// Label-skewed split. Each class gets a designated group of ceil(gf*n) clients
// that receives exactly floor(alpha * class_count) of that class; what is left
// is dealt evenly to the clients outside the group, so the group's share of
// its class is exact. alpha = 0 degenerates to an even IID-style deal over
// everyone, alpha = 1 with a one-client group concentrates each class fully.
inline PartitionPlan partition_noniid(const Dataset& d, int n_clients, double alpha,
                                      double group_fraction, std::uint64_t seed) {
    if (n_clients < 1) throw std::invalid_argument("partition_noniid: n_clients must be positive");
    if (alpha < 0.0 || alpha > 1.0)
        throw std::invalid_argument("partition_noniid: alpha must lie in [0,1]");
    if (group_fraction <= 0.0 || group_fraction > 1.0)
        throw std::invalid_argument("partition_noniid: group_fraction must lie in (0,1]");
    const int g = std::min(n_clients, static_cast<int>(std::ceil(group_fraction * n_clients)));

    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(d.num_classes));
    for (int i = 0; i < d.size(); ++i)
        by_class[static_cast<std::size_t>(d.labels[static_cast<std::size_t>(i)])].push_back(i);

    PartitionPlan plan;
    plan.client_indices.resize(static_cast<std::size_t>(n_clients));
    for (int c = 0; c < d.num_classes; ++c) {
        auto& idx = by_class[static_cast<std::size_t>(c)];
        rng::Rng shuf(rng::derive_seed(seed, "noniid_class", static_cast<std::uint64_t>(c)));
        shuf.shuffle(idx);
        const std::vector<int> group = rng::sample_without_replacement(
            n_clients, g, rng::derive_seed(seed, "noniid_group", static_cast<std::uint64_t>(c)));
        const int k = static_cast<int>(std::floor(alpha * static_cast<double>(idx.size())));
        for (int j = 0; j < k; ++j)
            plan.client_indices[static_cast<std::size_t>(group[static_cast<std::size_t>(j % g)])]
                .push_back(idx[static_cast<std::size_t>(j)]);

        std::vector<int> rest;
        if (k > 0 && g < n_clients) {
            std::vector<char> in_group(static_cast<std::size_t>(n_clients), 0);
            for (int m : group) in_group[static_cast<std::size_t>(m)] = 1;
            for (int m = 0; m < n_clients; ++m)
                if (!in_group[static_cast<std::size_t>(m)]) rest.push_back(m);
        } else {
            for (int m = 0; m < n_clients; ++m) rest.push_back(m);
        }
        for (std::size_t j = static_cast<std::size_t>(k); j < idx.size(); ++j)
            plan.client_indices[static_cast<std::size_t>(
                                    rest[(j - static_cast<std::size_t>(k)) % rest.size()])]
                .push_back(idx[j]);
    }
    return plan;
}

struct TriggerSpec {
    std::vector<double> mask;    // 0/1 per input coordinate
    std::vector<double> pattern; // pattern values in [0,1]
    double blend = 1.0;          // blend ratio in (0,1]
    int target = 0;              // label forced onto poisoned rows

    void validate(int dim, int num_classes) const {
        if (static_cast<int>(mask.size()) != dim || static_cast<int>(pattern.size()) != dim)
            throw std::invalid_argument("TriggerSpec: mask/pattern length must equal input dim " +
                                        std::to_string(dim));
        bool any = false;
        for (double m : mask) {
            if (m != 0.0 && m != 1.0) throw std::invalid_argument("TriggerSpec: mask entries must be 0 or 1");
            any = any || m == 1.0;
        }
        if (!any) throw std::invalid_argument("TriggerSpec: mask must select at least one coordinate");
        for (double p : pattern)
            if (p < 0.0 || p > 1.0) throw std::invalid_argument("TriggerSpec: pattern values must lie in [0,1]");
        if (blend <= 0.0 || blend > 1.0) throw std::invalid_argument("TriggerSpec: blend must lie in (0,1]");
        if (target < 0 || target >= num_classes)
            throw std::invalid_argument("TriggerSpec: target " + std::to_string(target) +
                                        " outside [0, " + std::to_string(num_classes) + ")");
    }
};

inline void stamp_trigger(std::span<double> x, const TriggerSpec& t) {
    for (std::size_t j = 0; j < x.size(); ++j)
        x[j] = (1.0 - t.blend * t.mask[j]) * x[j] + t.blend * t.mask[j] * t.pattern[j];
}

struct PoisonResult {
    Dataset data;
    std::vector<int> poisoned; // sorted row indices that were replaced
};

// Replace exactly floor(ratio * N) uniformly chosen rows by their triggered
// version with the target label; everything else is carried over bit-identical.
inline PoisonResult poison(const Dataset& d, const TriggerSpec& t, double ratio, std::uint64_t seed) {
    if (ratio < 0.0 || ratio > 1.0) throw std::invalid_argument("poison: ratio must lie in [0,1]");
    t.validate(d.dim(), d.num_classes);
    const int n_poison = static_cast<int>(std::floor(ratio * d.size()));
    PoisonResult out;
    out.data = d;
    out.poisoned = rng::sample_without_replacement(d.size(), n_poison, seed);
    for (int row : out.poisoned) {
        stamp_trigger(out.data.inputs.row(row), t);
        out.data.labels[static_cast<std::size_t>(row)] = t.target;
    }
    return out;
}

// Trigger applied to every row; labels are the caller's business (evaluation
// keeps the clean ones).
inline Matrix apply_trigger_all(const Matrix& inputs, const TriggerSpec& t) {
    if (static_cast<int>(t.mask.size()) != inputs.cols)
        throw std::invalid_argument("apply_trigger_all: trigger length " + std::to_string(t.mask.size()) +
                                    " vs input dim " + std::to_string(inputs.cols));
    Matrix out = inputs;
    for (int r = 0; r < out.rows; ++r) stamp_trigger(out.row(r), t);
    return out;
}

// Shape adapter for out-of-distribution data: center-crop or center-pad the
// feature vector to target_dim and fold labels mod target_classes.
inline Dataset coerce(const Dataset& d, int target_dim, int target_classes) {
    if (target_dim < 1 || target_classes < 1)
        throw std::invalid_argument("coerce: target shape must be positive");
    Dataset out;
    out.num_classes = target_classes;
    out.inputs = Matrix(d.size(), target_dim);
    out.labels.resize(static_cast<std::size_t>(d.size()));
    const int src_dim = d.dim();
    for (int i = 0; i < d.size(); ++i) {
        auto dst = out.inputs.row(i);
        auto src = d.inputs.row(i);
        if (src_dim >= target_dim) {
            const int start = (src_dim - target_dim) / 2;
            for (int j = 0; j < target_dim; ++j) dst[j] = src[start + j];
        } else {
            const int off = (target_dim - src_dim) / 2;
            for (int j = 0; j < src_dim; ++j) dst[off + j] = src[j];
        }
        out.labels[static_cast<std::size_t>(i)] = d.labels[static_cast<std::size_t>(i)] % target_classes;
    }
    return out;
}

} // namespace agsd::data
