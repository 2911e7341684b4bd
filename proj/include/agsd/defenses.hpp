#pragma once

// Server-side aggregation rules. The trust-scored defense works in four
// steps per round:
//   1. rescale client deltas onto the median-norm sphere and form a noisy
//      preliminary aggregate,
//   2. spectral-cluster the submissions on a summed cosine-similarity metric,
//   3. score every client on adversarially perturbed healing data (prediction
//      spread sigma, overconfidence eta) and combine into a trust index gamma,
//   4. aggregate only the winning cluster's members whose accumulated trust
//      is still positive, then update the trust history.
// FedAvg, multi-Krum and DP-noised averaging are the baselines.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "agsd/data.hpp"
#include "agsd/nn.hpp"
#include "agsd/rng.hpp"
#include "agsd/spectral.hpp"
#include "agsd/vec.hpp"

namespace agsd::defenses {

struct RoundSubmissions {
    std::vector<int> client_ids;          // strictly ascending
    std::vector<nn::ParamVector> models;  // same order as client_ids
    nn::ParamVector prev_global;

    int count() const { return static_cast<int>(models.size()); }

    void validate() const {
        if (models.empty()) throw std::invalid_argument("RoundSubmissions: no submissions");
        if (client_ids.size() != models.size())
            throw std::invalid_argument("RoundSubmissions: id/model count mismatch");
        for (std::size_t i = 1; i < client_ids.size(); ++i)
            if (client_ids[i] <= client_ids[i - 1])
                throw std::invalid_argument("RoundSubmissions: client ids must be strictly ascending");
        prev_global.validate();
        for (const auto& m : models)
            if (m.values.size() != prev_global.values.size() || m.spec != prev_global.spec)
                throw std::invalid_argument("RoundSubmissions: submission layout differs from global model");
    }
};

inline std::vector<std::vector<double>> raw_deltas(const RoundSubmissions& subs) {
    std::vector<std::vector<double>> out;
    out.reserve(subs.models.size());
    for (const auto& m : subs.models) {
        std::vector<double> d(m.values.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = m.values[i] - subs.prev_global.values[i];
        out.push_back(std::move(d));
    }
    return out;
}

struct RescaleResult {
    std::vector<std::vector<double>> deltas;
    double median_norm = 0.0;
    bool all_zero = false; // every input delta had norm 0; passed through untouched
};

// Project every delta onto the l2 sphere of the median input norm. Directions
// are preserved; zero deltas stay zero.
inline RescaleResult rescale_deltas(const std::vector<std::vector<double>>& deltas) {
    if (deltas.empty()) throw std::invalid_argument("rescale_deltas: no deltas");
    std::vector<double> norms;
    norms.reserve(deltas.size());
    for (const auto& d : deltas) norms.push_back(l2_norm(d));
    RescaleResult out;
    out.median_norm = median(norms);
    out.deltas = deltas;
    if (out.median_norm == 0.0) {
        bool any = false;
        for (double n : norms) any = any || n > 0.0;
        out.all_zero = !any;
        if (out.all_zero) return out;
    }
    for (std::size_t i = 0; i < out.deltas.size(); ++i) {
        const double n = norms[i];
        if (n == 0.0) continue;
        const double f = out.median_norm / n;
        for (double& v : out.deltas[i]) v *= f;
    }
    return out;
}

// Mean of the deltas plus a small Gaussian perturbation per delta, scaled by
// that delta's own elementwise standard deviation. The noise stream is seeded
// per client id, so dropping a client from the input leaves every other
// client's noise (and hence the partial sums) bit-identical.
inline nn::ParamVector noisy_aggregate(const nn::ParamVector& prev_global,
                                       const std::vector<std::vector<double>>& deltas,
                                       const std::vector<int>& client_ids, double noise_scale,
                                       std::uint64_t seed) {
    if (deltas.empty()) throw std::invalid_argument("noisy_aggregate: no deltas");
    if (deltas.size() != client_ids.size())
        throw std::invalid_argument("noisy_aggregate: id/delta count mismatch");
    const std::size_t len = prev_global.values.size();
    std::vector<double> acc(len, 0.0);
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        const auto& d = deltas[i];
        if (d.size() != len) throw std::invalid_argument("noisy_aggregate: delta length mismatch");
        double mean = 0.0;
        for (double v : d) mean += v;
        mean /= static_cast<double>(len);
        double var = 0.0;
        for (double v : d) var += (v - mean) * (v - mean);
        const double sd = std::sqrt(var / static_cast<double>(len));
        rng::Rng noise(rng::derive_seed(seed, "noise", static_cast<std::uint64_t>(client_ids[i])));
        if (noise_scale > 0.0 && sd > 0.0) {
            for (std::size_t j = 0; j < len; ++j) acc[j] += d[j] + noise_scale * sd * noise.normal();
        } else {
            for (std::size_t j = 0; j < len; ++j) acc[j] += d[j];
        }
    }
    nn::ParamVector out = prev_global;
    const double z = static_cast<double>(deltas.size());
    for (std::size_t j = 0; j < len; ++j) out.values[j] += acc[j] / z;
    return out;
}

struct PreliminaryResult {
    nn::ParamVector model;
    RescaleResult rescaled;
};

inline PreliminaryResult preliminary_aggregate(const RoundSubmissions& subs, double noise_scale,
                                               std::uint64_t seed) {
    subs.validate();
    PreliminaryResult out;
    out.rescaled = rescale_deltas(raw_deltas(subs));
    out.model = noisy_aggregate(subs.prev_global, out.rescaled.deltas, subs.client_ids, noise_scale, seed);
    return out;
}

// Pairwise cosine similarities of (scaled submission - preliminary aggregate)
// plus pairwise cosine similarities of the scaled deltas themselves. Entries
// lie in [-2,2] with an exact diagonal of 2.
inline Matrix cluster_metric(const RoundSubmissions& subs,
                             const std::vector<std::vector<double>>& scaled_deltas,
                             const nn::ParamVector& preliminary) {
    const int c = subs.count();
    if (static_cast<int>(scaled_deltas.size()) != c)
        throw std::invalid_argument("cluster_metric: delta count mismatch");
    const std::size_t len = subs.prev_global.values.size();
    std::vector<std::vector<double>> rel(static_cast<std::size_t>(c));
    for (int i = 0; i < c; ++i) {
        auto& v = rel[static_cast<std::size_t>(i)];
        v.resize(len);
        for (std::size_t j = 0; j < len; ++j)
            v[j] = subs.prev_global.values[j] + scaled_deltas[static_cast<std::size_t>(i)][j] -
                   preliminary.values[j];
    }
    Matrix a(c, c);
    for (int i = 0; i < c; ++i) {
        a.at(i, i) = 2.0;
        for (int j = i + 1; j < c; ++j) {
            const double v = cosine_sim(rel[static_cast<std::size_t>(i)], rel[static_cast<std::size_t>(j)]) +
                             cosine_sim(scaled_deltas[static_cast<std::size_t>(i)],
                                        scaled_deltas[static_cast<std::size_t>(j)]);
            a.at(i, j) = v;
            a.at(j, i) = v;
        }
    }
    return a;
}

// One signed-gradient step on the healing inputs under the combined loss
// (cross-entropy up, prediction spread down): the direction a backdoored
// model is most eager to follow.
inline Matrix craft_healing_perturbations(const nn::ParamVector& target_model,
                                          const data::Dataset& healing, double epsilon) {
    if (healing.size() == 0) throw std::invalid_argument("craft_healing_perturbations: empty healing set");
    return nn::fgsm_perturb(target_model, healing.inputs,
                            nn::onehot(healing.labels, target_model.spec.num_classes()), epsilon,
                            nn::LossKind::agsd);
}

// Mean over classes of the per-class population std of the argmax indicator:
// high when predictions spread over many classes, zero when they collapse.
inline double compute_sigma(const nn::Prediction& pred) {
    const int n = pred.probs.rows, k = pred.probs.cols;
    if (n == 0) throw std::invalid_argument("compute_sigma: no predictions");
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int r = 0; r < n; ++r) {
        auto row = pred.probs.row(r);
        int arg = 0;
        for (int c = 1; c < k; ++c)
            if (row[static_cast<std::size_t>(c)] > row[static_cast<std::size_t>(arg)]) arg = c;
        ++counts[static_cast<std::size_t>(arg)];
    }
    double s = 0.0;
    for (int c = 0; c < k; ++c) {
        const double p = static_cast<double>(counts[static_cast<std::size_t>(c)]) / n;
        s += std::sqrt(p * (1.0 - p));
    }
    return s / k;
}

// Peak of the mean prediction vector: high when the model is confidently
// herding everything toward one class.
inline double compute_eta(const nn::Prediction& pred) {
    const int n = pred.probs.rows, k = pred.probs.cols;
    if (n == 0) throw std::invalid_argument("compute_eta: no predictions");
    double best = 0.0;
    for (int c = 0; c < k; ++c) {
        double m = 0.0;
        for (int r = 0; r < n; ++r) m += pred.probs.at(r, c);
        best = std::max(best, m / n);
    }
    return best;
}

inline std::vector<double> softmax_values(const std::vector<double>& v) {
    std::vector<double> out = v;
    nn::softmax_row(out);
    return out;
}

// Spread statistic W = (max - min) / (mean - min) of a softmax vector,
// computed as n*(max-min) / (sum - n*min) to keep simple rationals exact.
// Degenerate (constant) input maps to 0.
inline double weight_of_spread(const std::vector<double>& vals) {
    if (vals.empty()) throw std::invalid_argument("weight_of_spread: empty input");
    const double n = static_cast<double>(vals.size());
    double mx = vals[0], mn = vals[0], sum = 0.0;
    for (double v : vals) {
        mx = std::max(mx, v);
        mn = std::min(mn, v);
        sum += v;
    }
    const double denom = sum - n * mn;
    if (denom < 1e-12 * n) return 0.0;
    return n * (mx - mn) / denom;
}

struct TrustScores {
    std::vector<double> sigma_softmax;
    std::vector<double> eta_softmax;
    std::vector<double> gamma;
    double spread_weight = 0.0; // W over the softmaxed sigmas
};

// gamma_i = softmax(sigma)_i - e^{-W} * softmax(eta)_i. The exp(+W) variant
// matches the alternative published form and is kept behind a flag.
inline TrustScores trust_index(const std::vector<double>& sigmas, const std::vector<double>& etas,
                               bool positive_exponent = false) {
    if (sigmas.empty() || sigmas.size() != etas.size())
        throw std::invalid_argument("trust_index: sigma/eta size mismatch");
    TrustScores ts;
    ts.sigma_softmax = softmax_values(sigmas);
    ts.eta_softmax = softmax_values(etas);
    ts.spread_weight = weight_of_spread(ts.sigma_softmax);
    const double w = positive_exponent ? std::exp(ts.spread_weight) : std::exp(-ts.spread_weight);
    ts.gamma.resize(sigmas.size());
    for (std::size_t i = 0; i < sigmas.size(); ++i)
        ts.gamma[i] = ts.sigma_softmax[i] - w * ts.eta_softmax[i];
    return ts;
}

struct ClusterSelection {
    int alpha = 0;                    // winning cluster label
    std::vector<double> cluster_mean; // mean gamma per cluster (NaN-free; empty clusters excluded)
};

// Winning cluster = highest mean gamma; exact ties go to the larger cluster,
// then the lower label.
inline ClusterSelection select_cluster(const ClusterResult& cl, const std::vector<double>& gamma) {
    if (cl.assignment.size() != gamma.size())
        throw std::invalid_argument("select_cluster: gamma size mismatch");
    const int k = cl.n_clusters;
    std::vector<double> sum(static_cast<std::size_t>(k), 0.0);
    std::vector<int> cnt(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < gamma.size(); ++i) {
        sum[static_cast<std::size_t>(cl.assignment[i])] += gamma[i];
        ++cnt[static_cast<std::size_t>(cl.assignment[i])];
    }
    ClusterSelection sel;
    sel.cluster_mean.assign(static_cast<std::size_t>(k), 0.0);
    int best = -1;
    for (int c = 0; c < k; ++c) {
        if (cnt[static_cast<std::size_t>(c)] == 0) continue;
        sel.cluster_mean[static_cast<std::size_t>(c)] =
            sum[static_cast<std::size_t>(c)] / cnt[static_cast<std::size_t>(c)];
        if (best < 0) {
            best = c;
            continue;
        }
        const double mc = sel.cluster_mean[static_cast<std::size_t>(c)];
        const double mb = sel.cluster_mean[static_cast<std::size_t>(best)];
        if (mc > mb || (mc == mb && cnt[static_cast<std::size_t>(c)] > cnt[static_cast<std::size_t>(best)]))
            best = c;
    }
    if (best < 0) throw std::invalid_argument("select_cluster: all clusters empty");
    sel.alpha = best;
    return sel;
}

// Accumulated per-client trust. Fresh clients start at phi_init; the value is
// deliberately unclamped so repeat offenders sink far below zero.
struct TrustState {
    double phi_init = 0.01;
    std::map<int, double> phi;

    void ensure(int client_id) {
        if (!phi.contains(client_id)) phi[client_id] = phi_init;
    }
    double get(int client_id) const {
        auto it = phi.find(client_id);
        return it == phi.end() ? phi_init : it->second;
    }
};

struct AggregateResult {
    nn::ParamVector model;
    std::vector<int> aggregated_ids; // clients that actually entered the aggregate
    bool skipped = false;            // whole cluster had phi <= 0; previous global returned
};

// Aggregate the winning cluster's members that still hold positive trust.
inline AggregateResult stateful_aggregate(const RoundSubmissions& subs,
                                          const std::vector<int>& alpha_positions,
                                          const TrustState& trust, double noise_scale,
                                          std::uint64_t seed) {
    AggregateResult out;
    std::vector<std::vector<double>> deltas;
    std::vector<int> ids;
    const auto all = raw_deltas(subs);
    for (int pos : alpha_positions) {
        const int id = subs.client_ids[static_cast<std::size_t>(pos)];
        if (trust.get(id) <= 0.0) continue;
        deltas.push_back(all[static_cast<std::size_t>(pos)]);
        ids.push_back(id);
    }
    if (deltas.empty()) {
        out.model = subs.prev_global;
        out.skipped = true;
        return out;
    }
    out.model = noisy_aggregate(subs.prev_global, deltas, ids, noise_scale, seed);
    out.aggregated_ids = std::move(ids);
    return out;
}

// Published in-text alternative: mean over the cluster of submissions scaled
// to the smallest submission norm.
inline AggregateResult min_norm_aggregate(const RoundSubmissions& subs,
                                          const std::vector<int>& alpha_positions,
                                          const TrustState& trust) {
    AggregateResult out;
    double min_norm = 0.0;
    bool first = true;
    for (int pos : alpha_positions) {
        const double n = l2_norm(subs.models[static_cast<std::size_t>(pos)].values);
        if (first || n < min_norm) min_norm = n;
        first = false;
    }
    std::vector<int> ids;
    nn::ParamVector acc = subs.prev_global;
    std::fill(acc.values.begin(), acc.values.end(), 0.0);
    for (int pos : alpha_positions) {
        const int id = subs.client_ids[static_cast<std::size_t>(pos)];
        if (trust.get(id) <= 0.0) continue;
        const auto& m = subs.models[static_cast<std::size_t>(pos)];
        const double n = l2_norm(m.values);
        const double f = n > 0.0 ? min_norm / n : 0.0;
        for (std::size_t j = 0; j < acc.values.size(); ++j) acc.values[j] += f * m.values[j];
        ids.push_back(id);
    }
    if (ids.empty()) {
        out.model = subs.prev_global;
        out.skipped = true;
        return out;
    }
    for (double& v : acc.values) v /= static_cast<double>(alpha_positions.size());
    out.model = std::move(acc);
    out.aggregated_ids = std::move(ids);
    return out;
}

// phi update: accepted clients gain gamma_i / max(gamma), rejected ones lose
// (1 - gamma_i / max(gamma)). When any gamma is <= 0 the whole vector is
// shifted by (1e-9 - min) for the ratios only, which keeps the ordering and
// pins accepted increments into (0,1] and rejected decrements into [0,1).
inline void update_trust_history(TrustState& trust, const std::vector<int>& client_ids,
                                 const std::vector<double>& gamma,
                                 const std::vector<bool>& accepted) {
    if (client_ids.size() != gamma.size() || client_ids.size() != accepted.size())
        throw std::invalid_argument("update_trust_history: size mismatch");
    if (client_ids.empty()) return;
    double mn = gamma[0], mx = gamma[0];
    for (double g : gamma) {
        mn = std::min(mn, g);
        mx = std::max(mx, g);
    }
    const double shift = mn <= 0.0 ? 1e-9 - mn : 0.0;
    const double denom = mx + shift;
    for (std::size_t i = 0; i < client_ids.size(); ++i) {
        trust.ensure(client_ids[i]);
        const double ratio = (gamma[i] + shift) / denom;
        if (accepted[i])
            trust.phi[client_ids[i]] += ratio;
        else
            trust.phi[client_ids[i]] -= 1.0 - ratio;
    }
}

enum class AttackTarget { preliminary_aggregate, plain_fedavg };
enum class FinalAggregation { noisy, min_norm };

struct AgsdConfig {
    double fgsm_epsilon = 0.2;
    int n_clusters = 2;
    double noise_scale = 1e-5;
    double phi_init = 0.01;
    AttackTarget attack_target = AttackTarget::preliminary_aggregate;
    bool positive_exponent = false; // e^{+W} variant of the trust index
    FinalAggregation final_aggregation = FinalAggregation::noisy;
    data::Dataset healing;

    void validate(const nn::ModelSpec& spec) const {
        if (fgsm_epsilon < 0.0) throw std::invalid_argument("AgsdConfig: fgsm_epsilon must be >= 0");
        if (n_clusters < 2) throw std::invalid_argument("AgsdConfig: n_clusters must be >= 2");
        if (noise_scale < 0.0) throw std::invalid_argument("AgsdConfig: noise_scale must be >= 0");
        if (healing.size() == 0) throw std::invalid_argument("AgsdConfig: healing set is empty");
        healing.validate();
        if (healing.dim() != spec.input_dim())
            throw std::invalid_argument("AgsdConfig: healing dim " + std::to_string(healing.dim()) +
                                        " vs model input " + std::to_string(spec.input_dim()));
        if (healing.num_classes != spec.num_classes())
            throw std::invalid_argument("AgsdConfig: healing classes " + std::to_string(healing.num_classes) +
                                        " vs model classes " + std::to_string(spec.num_classes()));
    }
};

struct ClientTrustRow {
    int client_id = 0;
    double sigma = 0.0;
    double eta = 0.0;
    double sigma_softmax = 0.0;
    double eta_softmax = 0.0;
    double gamma = 0.0;
    int cluster = 0;
    bool selected = false;   // member of the winning cluster
    bool aggregated = false; // actually entered the aggregate (phi was > 0)
    double phi_after = 0.0;
};

struct TrustIndexReport {
    std::vector<ClientTrustRow> clients;
    double spread_weight = 0.0;
    int alpha_cluster = 0;
    double median_norm = 0.0;
    bool rescale_all_zero = false;
    bool skipped = false;
};

struct AgsdRoundResult {
    nn::ParamVector model;
    TrustIndexReport report;
    TrustState trust;
};

inline nn::ParamVector fedavg_round(const RoundSubmissions& subs) {
    subs.validate();
    nn::ParamVector out = subs.prev_global;
    std::fill(out.values.begin(), out.values.end(), 0.0);
    for (const auto& m : subs.models)
        for (std::size_t j = 0; j < out.values.size(); ++j) out.values[j] += m.values[j];
    for (double& v : out.values) v /= static_cast<double>(subs.models.size());
    return out;
}

inline AgsdRoundResult agsd_round(const RoundSubmissions& subs, const TrustState& trust_in,
                                  const AgsdConfig& cfg, std::uint64_t seed) {
    subs.validate();
    cfg.validate(subs.prev_global.spec);
    const int c = subs.count();

    AgsdRoundResult out;
    out.trust = trust_in;
    out.trust.phi_init = cfg.phi_init;
    for (int id : subs.client_ids) out.trust.ensure(id);

    // Step 1: median-norm rescale and noisy preliminary aggregate.
    const auto prelim = preliminary_aggregate(subs, cfg.noise_scale, rng::derive_seed(seed, "prelim"));
    out.report.median_norm = prelim.rescaled.median_norm;
    out.report.rescale_all_zero = prelim.rescaled.all_zero;

    // Step 2: cluster. Bit-identical submissions carry no structure to split,
    // so that consensus case short-circuits into a single full cluster.
    ClusterResult cl;
    bool consensus = true;
    for (int i = 1; i < c && consensus; ++i) consensus = subs.models[static_cast<std::size_t>(i)] == subs.models[0];
    if (consensus) {
        cl.n_clusters = cfg.n_clusters;
        cl.assignment.assign(static_cast<std::size_t>(c), 0);
        cl.empty.assign(static_cast<std::size_t>(cfg.n_clusters), 0);
        for (int k = 1; k < cfg.n_clusters; ++k) cl.empty[static_cast<std::size_t>(k)] = 1;
    } else {
        const Matrix affinity = cluster_metric(subs, prelim.rescaled.deltas, prelim.model);
        cl = spectral_cluster(affinity, cfg.n_clusters, rng::derive_seed(seed, "cluster"));
    }

    // Step 3: guided trust scores on adversarially perturbed healing data.
    nn::ParamVector fedavg_target;
    const nn::ParamVector* target = &prelim.model;
    if (cfg.attack_target == AttackTarget::plain_fedavg) {
        fedavg_target = fedavg_round(subs);
        target = &fedavg_target;
    }
    const Matrix adv_inputs = craft_healing_perturbations(*target, cfg.healing, cfg.fgsm_epsilon);
    std::vector<double> sigmas(static_cast<std::size_t>(c)), etas(static_cast<std::size_t>(c));
    for (int i = 0; i < c; ++i) {
        const auto pred = nn::forward(subs.models[static_cast<std::size_t>(i)], adv_inputs);
        sigmas[static_cast<std::size_t>(i)] = compute_sigma(pred);
        etas[static_cast<std::size_t>(i)] = compute_eta(pred);
    }
    const TrustScores ts = trust_index(sigmas, etas, cfg.positive_exponent);
    const ClusterSelection sel = select_cluster(cl, ts.gamma);

    // Step 4: trust-filtered aggregation and history update.
    std::vector<int> alpha_positions;
    std::vector<bool> accepted(static_cast<std::size_t>(c), false);
    for (int i = 0; i < c; ++i)
        if (cl.assignment[static_cast<std::size_t>(i)] == sel.alpha) {
            alpha_positions.push_back(i);
            accepted[static_cast<std::size_t>(i)] = true;
        }
    const AggregateResult agg =
        cfg.final_aggregation == FinalAggregation::noisy
            ? stateful_aggregate(subs, alpha_positions, out.trust, cfg.noise_scale,
                                 rng::derive_seed(seed, "final"))
            : min_norm_aggregate(subs, alpha_positions, out.trust);
    update_trust_history(out.trust, subs.client_ids, ts.gamma, accepted);

    out.model = agg.model;
    out.report.spread_weight = ts.spread_weight;
    out.report.alpha_cluster = sel.alpha;
    out.report.skipped = agg.skipped;
    out.report.clients.resize(static_cast<std::size_t>(c));
    for (int i = 0; i < c; ++i) {
        auto& row = out.report.clients[static_cast<std::size_t>(i)];
        row.client_id = subs.client_ids[static_cast<std::size_t>(i)];
        row.sigma = sigmas[static_cast<std::size_t>(i)];
        row.eta = etas[static_cast<std::size_t>(i)];
        row.sigma_softmax = ts.sigma_softmax[static_cast<std::size_t>(i)];
        row.eta_softmax = ts.eta_softmax[static_cast<std::size_t>(i)];
        row.gamma = ts.gamma[static_cast<std::size_t>(i)];
        row.cluster = cl.assignment[static_cast<std::size_t>(i)];
        row.selected = accepted[static_cast<std::size_t>(i)];
        row.aggregated = std::find(agg.aggregated_ids.begin(), agg.aggregated_ids.end(), row.client_id) !=
                         agg.aggregated_ids.end();
        row.phi_after = out.trust.get(row.client_id);
    }
    return out;
}

struct MkrumResult {
    nn::ParamVector model;
    std::vector<int> selected_ids;
};

// Multi-Krum: score each submission by the sum of its (c - f - 2) smallest
// squared distances to the others, then average the m best-scored.
inline MkrumResult mkrum_round(const RoundSubmissions& subs, int f, int m) {
    subs.validate();
    const int c = subs.count();
    if (c < f + 3)
        throw std::invalid_argument("mkrum: need at least f+3 submissions (got " + std::to_string(c) +
                                    ", f=" + std::to_string(f) + ")");
    if (f < 0) throw std::invalid_argument("mkrum: f must be >= 0");
    if (m < 1 || m > c) throw std::invalid_argument("mkrum: m must lie in [1, " + std::to_string(c) + "]");

    Matrix dist2(c, c);
    for (int i = 0; i < c; ++i)
        for (int j = i + 1; j < c; ++j) {
            double s = 0.0;
            const auto& a = subs.models[static_cast<std::size_t>(i)].values;
            const auto& b = subs.models[static_cast<std::size_t>(j)].values;
            for (std::size_t t = 0; t < a.size(); ++t) {
                const double d = a[t] - b[t];
                s += d * d;
            }
            dist2.at(i, j) = s;
            dist2.at(j, i) = s;
        }
    const int keep = c - f - 2;
    std::vector<std::pair<double, int>> scored;
    for (int i = 0; i < c; ++i) {
        std::vector<double> ds;
        ds.reserve(static_cast<std::size_t>(c) - 1);
        for (int j = 0; j < c; ++j)
            if (j != i) ds.push_back(dist2.at(i, j));
        std::sort(ds.begin(), ds.end());
        double score = 0.0;
        for (int t = 0; t < keep; ++t) score += ds[static_cast<std::size_t>(t)];
        scored.emplace_back(score, i);
    }
    std::sort(scored.begin(), scored.end());

    MkrumResult out;
    out.model = subs.prev_global;
    std::fill(out.model.values.begin(), out.model.values.end(), 0.0);
    std::vector<int> positions;
    for (int t = 0; t < m; ++t) positions.push_back(scored[static_cast<std::size_t>(t)].second);
    std::sort(positions.begin(), positions.end());
    for (int pos : positions) {
        out.selected_ids.push_back(subs.client_ids[static_cast<std::size_t>(pos)]);
        const auto& v = subs.models[static_cast<std::size_t>(pos)].values;
        for (std::size_t j = 0; j < v.size(); ++j) out.model.values[j] += v[j];
    }
    for (double& v : out.model.values) v /= static_cast<double>(m);
    return out;
}

// Norm-clip the deltas, average, and add spherical Gaussian noise.
inline nn::ParamVector dp_round(const RoundSubmissions& subs, double clip_norm, double noise_sigma,
                                std::uint64_t seed) {
    subs.validate();
    if (clip_norm < 0.0) throw std::invalid_argument("dp_round: clip_norm must be >= 0");
    if (noise_sigma < 0.0) throw std::invalid_argument("dp_round: noise_sigma must be >= 0");
    auto deltas = raw_deltas(subs);
    for (auto& d : deltas) {
        const double n = l2_norm(d);
        if (n > clip_norm) {
            const double f = clip_norm / n;
            for (double& v : d) v *= f;
        }
    }
    nn::ParamVector out = subs.prev_global;
    rng::Rng noise(rng::derive_seed(seed, "dp_noise"));
    const double z = static_cast<double>(deltas.size());
    for (std::size_t j = 0; j < out.values.size(); ++j) {
        double s = 0.0;
        for (const auto& d : deltas) s += d[j];
        out.values[j] += s / z + noise_sigma * noise.normal();
    }
    return out;
}

} // namespace agsd::defenses
