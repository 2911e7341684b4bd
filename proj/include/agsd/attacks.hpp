#pragma once

// Malicious client behaviors. Every attack produces a model submission from
// (global model, local data, round); the harness decides who is malicious.
//
// Seed discipline matters here: all kinds derive the same training seed, so a
// poison ratio of zero (or an impersonation round) collapses bit-identically
// onto the clean submission.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "agsd/data.hpp"
#include "agsd/nn.hpp"
#include "agsd/rng.hpp"

namespace agsd::attacks {

enum class AttackKind { clean, vtba, itba, lba, mtba, dba, rba, pba };

inline const char* kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::clean: return "clean";
        case AttackKind::vtba: return "vtba";
        case AttackKind::itba: return "itba";
        case AttackKind::lba: return "lba";
        case AttackKind::mtba: return "mtba";
        case AttackKind::dba: return "dba";
        case AttackKind::rba: return "rba";
        case AttackKind::pba: return "pba";
    }
    return "?";
}

struct Cohort {
    int index = 0; // this client's slot among the distributed attackers
    int size = 1;
};

struct AttackBehavior {
    AttackKind kind = AttackKind::clean;
    std::vector<data::TriggerSpec> triggers; // one entry; mtba uses several
    double pdr = 0.25;                       // poisoned data ratio
    double scale = 1.0;                      // delta scale s_b
    double lba_confidence = 0.6;
    Cohort dba_cohort;
    int impersonate_until = 0;               // behave clean through this round
    double fgsm_epsilon = 0.2;               // rba adversarial-epoch step

    void validate(int dim, int num_classes) const {
        if (pdr < 0.0 || pdr > 1.0) throw std::invalid_argument("AttackBehavior: pdr must lie in [0,1]");
        if (scale <= 0.0) throw std::invalid_argument("AttackBehavior: scale must be positive");
        if (impersonate_until < 0)
            throw std::invalid_argument("AttackBehavior: impersonate_until must be >= 0");
        if (kind == AttackKind::clean) return;
        if (triggers.empty()) throw std::invalid_argument("AttackBehavior: attack needs a trigger");
        for (const auto& t : triggers) t.validate(dim, num_classes);
        if (kind == AttackKind::mtba) {
            if (triggers.size() < 2)
                throw std::invalid_argument("mtba: needs at least 2 trigger/target pairs");
            for (std::size_t i = 0; i < triggers.size(); ++i)
                for (std::size_t j = i + 1; j < triggers.size(); ++j)
                    if (triggers[i].target == triggers[j].target)
                        throw std::invalid_argument("mtba: pairs must have distinct targets (" +
                                                    std::to_string(triggers[i].target) + " repeated)");
        }
        if (kind == AttackKind::lba) {
            if (num_classes < 2) throw std::invalid_argument("lba: needs at least 2 classes");
            if (lba_confidence <= 0.0 || lba_confidence > 1.0)
                throw std::invalid_argument("lba: confidence must lie in (0,1]");
        }
        if (kind == AttackKind::dba) {
            if (dba_cohort.size < 1 || dba_cohort.index < 0 || dba_cohort.index >= dba_cohort.size)
                throw std::invalid_argument("dba: cohort index " + std::to_string(dba_cohort.index) +
                                            " outside [0, " + std::to_string(dba_cohort.size) + ")");
        }
        if (kind == AttackKind::rba && fgsm_epsilon < 0.0)
            throw std::invalid_argument("rba: fgsm_epsilon must be >= 0");
    }
};

// Slice a full trigger into the cohort's contiguous chunk of mask coordinates
// (even split, remainder to the earlier chunks). The union over the cohort
// reassembles the full mask.
inline data::TriggerSpec dba_subtrigger(const data::TriggerSpec& full, const Cohort& cohort) {
    std::vector<int> coords;
    for (std::size_t j = 0; j < full.mask.size(); ++j)
        if (full.mask[j] == 1.0) coords.push_back(static_cast<int>(j));
    const int n = static_cast<int>(coords.size());
    if (cohort.size > n)
        throw std::invalid_argument("dba: cohort size " + std::to_string(cohort.size) +
                                    " exceeds trigger coordinates " + std::to_string(n));
    const int base = n / cohort.size;
    const int extra = n % cohort.size;
    const int begin = cohort.index * base + std::min(cohort.index, extra);
    const int len = base + (cohort.index < extra ? 1 : 0);
    data::TriggerSpec sub = full;
    std::fill(sub.mask.begin(), sub.mask.end(), 0.0);
    for (int j = begin; j < begin + len; ++j)
        sub.mask[static_cast<std::size_t>(coords[static_cast<std::size_t>(j)])] = 1.0;
    return sub;
}

// Multi-trigger poisoning: one budget of floor(pdr*N) rows dealt across the
// pairs (even split, remainder forward), each row stamped with its pair's
// trigger and target.
inline data::Dataset mtba_poison(const data::Dataset& d, const std::vector<data::TriggerSpec>& pairs,
                                 double pdr, std::uint64_t seed) {
    const int budget = static_cast<int>(std::floor(pdr * d.size()));
    const std::vector<int> order = rng::shuffled_indices(d.size(), seed);
    const int np = static_cast<int>(pairs.size());
    const int base = budget / np;
    const int extra = budget % np;
    data::Dataset out = d;
    int pos = 0;
    for (int p = 0; p < np; ++p) {
        const int quota = base + (p < extra ? 1 : 0);
        for (int q = 0; q < quota; ++q, ++pos) {
            const int row = order[static_cast<std::size_t>(pos)];
            data::stamp_trigger(out.inputs.row(row), pairs[static_cast<std::size_t>(p)]);
            out.labels[static_cast<std::size_t>(row)] = pairs[static_cast<std::size_t>(p)].target;
        }
    }
    return out;
}

// Soft targets for the label-flip variant: poisoned rows put `confidence` on
// the trigger target and spread the rest evenly; clean rows stay one-hot.
// confidence = 1 reproduces the hard-label matrix exactly.
inline Matrix lba_targets(const data::PoisonResult& pr, double confidence) {
    const int k = pr.data.num_classes;
    Matrix t = nn::onehot(pr.data.labels, k);
    const double off = (1.0 - confidence) / (k - 1);
    for (int row : pr.poisoned) {
        auto tr = t.row(row);
        const int target = pr.data.labels[static_cast<std::size_t>(row)];
        for (int c = 0; c < k; ++c) tr[static_cast<std::size_t>(c)] = c == target ? confidence : off;
    }
    return t;
}

// Adversarial-training variant: each pass over the poisoned data is followed
// by a pass where every batch is replaced by its FGSM perturbation (original
// labels kept). epsilon = 0 degenerates to plain training with doubled epochs.
inline nn::ParamVector rba_train(const nn::ParamVector& start, const data::Dataset& d,
                                 const nn::SgdConfig& cfg, double epsilon, std::uint64_t seed) {
    if (d.size() == 0) throw std::invalid_argument("rba_train: empty dataset");
    const Matrix targets = nn::onehot(d.labels, d.num_classes);
    nn::SgdTrainer tr(start, cfg);
    for (int e = 0; e < cfg.local_epochs; ++e) {
        tr.epoch(d.inputs, targets, nn::epoch_seed(seed, 2 * e));
        tr.epoch(d.inputs, targets, nn::epoch_seed(seed, 2 * e + 1), [&](Matrix& bx, Matrix& bt) {
            bx = nn::fgsm_perturb(tr.params(), bx, bt, epsilon, nn::LossKind::cross_entropy);
        });
    }
    return tr.params();
}

struct PbaResult {
    nn::ParamVector poisoned;
    nn::ParamVector clean;
    double last_radius = 0.0;
};

// Projected backdoor: a clean twin and a poisoned twin step in lockstep over
// the same batch order; after every poisoned step the poisoned weights are
// clipped into an l-inf ball of radius r around the clean twin, with
// r = median |clean - global| recomputed at each epoch start. `project` is a
// test hook; with it off this is plain training on the poisoned data.
inline PbaResult pba_train(const nn::ParamVector& start, const data::Dataset& d,
                           const data::TriggerSpec& trig, double pdr, const nn::SgdConfig& cfg,
                           std::uint64_t train_seed, std::uint64_t poison_seed, bool project = true) {
    if (d.size() == 0) throw std::invalid_argument("pba_train: empty dataset");
    const data::Dataset pd = data::poison(d, trig, pdr, poison_seed).data;
    const Matrix tc = nn::onehot(d.labels, d.num_classes);
    const Matrix tp = nn::onehot(pd.labels, pd.num_classes);
    nn::SgdTrainer clean(start, cfg);
    nn::SgdTrainer pois(start, cfg);
    double radius = 0.0;
    for (int e = 0; e < cfg.local_epochs; ++e) {
        {
            std::vector<double> diff(start.values.size());
            for (std::size_t i = 0; i < diff.size(); ++i)
                diff[i] = std::abs(clean.params().values[i] - start.values[i]);
            radius = median(std::move(diff));
        }
        const std::vector<int> order = rng::shuffled_indices(d.size(), nn::epoch_seed(train_seed, e));
        int batch_index = 0;
        for (int s = 0; s < d.size(); s += cfg.batch_size, ++batch_index) {
            const int len = std::min(cfg.batch_size, d.size() - s);
            Matrix bxc(len, d.dim()), btc(len, d.num_classes);
            Matrix bxp(len, d.dim()), btp(len, d.num_classes);
            for (int r = 0; r < len; ++r) {
                const int src = order[static_cast<std::size_t>(s + r)];
                auto c1 = d.inputs.row(src);
                std::copy(c1.begin(), c1.end(), bxc.row(r).begin());
                auto c2 = tc.row(src);
                std::copy(c2.begin(), c2.end(), btc.row(r).begin());
                auto p1 = pd.inputs.row(src);
                std::copy(p1.begin(), p1.end(), bxp.row(r).begin());
                auto p2 = tp.row(src);
                std::copy(p2.begin(), p2.end(), btp.row(r).begin());
            }
            clean.step_batch(bxc, btc, batch_index);
            pois.step_batch(bxp, btp, batch_index);
            if (project) {
                auto& pv = pois.mutable_params().values;
                const auto& cv = clean.params().values;
                for (std::size_t i = 0; i < pv.size(); ++i)
                    pv[i] = std::clamp(pv[i], cv[i] - radius, cv[i] + radius);
            }
        }
    }
    return {pois.params(), clean.params(), radius};
}

// All kinds funnel through here; the harness calls it for clean clients too so
// the seeding is uniform.
inline nn::ParamVector craft_submission(const AttackBehavior& b, const nn::ParamVector& global,
                                        const data::Dataset& d, const nn::SgdConfig& cfg, int round,
                                        std::uint64_t seed) {
    b.validate(d.dim(), d.num_classes);
    const AttackKind kind = round <= b.impersonate_until ? AttackKind::clean : b.kind;
    const std::uint64_t train_seed = rng::derive_seed(seed, "train");
    const std::uint64_t poison_seed = rng::derive_seed(seed, "poison");

    nn::ParamVector f;
    switch (kind) {
        case AttackKind::clean:
            f = nn::train_local(global, d, cfg, train_seed);
            break;
        case AttackKind::vtba:
        case AttackKind::itba:
            f = nn::train_local(global, data::poison(d, b.triggers[0], b.pdr, poison_seed).data, cfg,
                                train_seed);
            break;
        case AttackKind::lba: {
            const auto pr = data::poison(d, b.triggers[0], b.pdr, poison_seed);
            f = nn::train_local_soft(global, pr.data.inputs, lba_targets(pr, b.lba_confidence), cfg,
                                     train_seed);
            break;
        }
        case AttackKind::mtba:
            f = nn::train_local(global, mtba_poison(d, b.triggers, b.pdr, poison_seed), cfg, train_seed);
            break;
        case AttackKind::dba:
            f = nn::train_local(
                global, data::poison(d, dba_subtrigger(b.triggers[0], b.dba_cohort), b.pdr, poison_seed).data,
                cfg, train_seed);
            break;
        case AttackKind::rba:
            f = rba_train(global, data::poison(d, b.triggers[0], b.pdr, poison_seed).data, cfg,
                          b.fgsm_epsilon, train_seed);
            break;
        case AttackKind::pba:
            f = pba_train(global, d, b.triggers[0], b.pdr, cfg, train_seed, poison_seed).poisoned;
            break;
    }
    if (b.scale == 1.0) return f;
    nn::ParamVector out = global;
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] += b.scale * (f.values[i] - global.values[i]);
    return out;
}

} // namespace agsd::attacks
