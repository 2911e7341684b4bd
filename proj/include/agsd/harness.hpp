#pragma once

// Federated experiment driver: builds the data partition, runs attack/defense
// rounds, tracks metrics with patience-based early stopping, and serializes
// everything to CSV. All randomness is derived from one master seed, so a rerun
// is byte-identical.

#include <cstdint>
#include <cstdio>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "agsd/attacks.hpp"
#include "agsd/data.hpp"
#include "agsd/defenses.hpp"
#include "agsd/nn.hpp"
#include "agsd/rng.hpp"

namespace agsd::harness {

struct SyntheticSpec {
    int num_classes = 10;
    int dim = 16;
    int samples_per_class = 100;
    double separation = 10.0;
};

struct DataSpec {
    enum class Kind { synthetic, idx };
    Kind kind = Kind::synthetic;
    SyntheticSpec synth;
    std::string idx_images;
    std::string idx_labels;
};

struct PartitionSpec {
    enum class Kind { iid, noniid };
    Kind kind = Kind::iid;
    double alpha = 0.5;
    double group_fraction = 0.1;
};

enum class DefenseKind { fedavg, dp, mkrum, agsd_id, agsd_ood };

struct AttackSpec {
    attacks::AttackKind kind = attacks::AttackKind::clean;
    double pdr = 0.25;
    double scale = 1.0;
    double blend = 1.0;
    int target_class = 0;
    int trigger_size = 3;
    double lba_confidence = 0.6;
    int mtba_num_triggers = 2;
    int dba_groups = 2;
    int impersonate_until = 0;
};

struct FlConfig {
    DataSpec data;
    PartitionSpec partition;
    std::vector<int> hidden_dims{32};
    int n_clients = 20;
    double sample_ratio = 0.25;
    int rounds = 60;
    int patience = 0; // 0 = never stop early
    double malicious_ratio = 0.0;
    AttackSpec attack;
    DefenseKind defense = DefenseKind::fedavg;
    nn::SgdConfig sgd;

    double agsd_fgsm_epsilon = 0.2;
    int agsd_n_clusters = 2;
    double agsd_noise_scale = 1e-5;
    double agsd_phi_init = 0.01;
    defenses::AttackTarget agsd_attack_target = defenses::AttackTarget::preliminary_aggregate;
    bool agsd_positive_exponent = false;
    defenses::FinalAggregation agsd_final_aggregation = defenses::FinalAggregation::noisy;
    int healing_size = 50;
    // A diffuse cloud near the input-space center probes the trigger response
    // far more reliably than tight far-away blobs.
    SyntheticSpec ood{10, 16, 50, 1.0};

    int mkrum_f = 1;
    int mkrum_m = 3;
    double dp_clip_norm = 1.0;
    double dp_noise_sigma = 1e-3;

    int demo_epochs = 20;
    int demo_heldout_size = 200;
    double demo_pdr = 0.25;

    std::uint64_t master_seed = 1;

    int sampled_per_round() const {
        return static_cast<int>(std::ceil(sample_ratio * n_clients));
    }
    int malicious_count() const {
        return static_cast<int>(std::floor(malicious_ratio * n_clients));
    }

    void validate() const {
        if (n_clients < 1) throw std::invalid_argument("fl.n_clients must be positive");
        if (rounds < 1) throw std::invalid_argument("fl.rounds must be positive");
        if (patience < 0) throw std::invalid_argument("fl.patience must be >= 0");
        if (sample_ratio <= 0.0 || sample_ratio > 1.0)
            throw std::invalid_argument("fl.sample_ratio must lie in (0,1]");
        if (sampled_per_round() < 1) throw std::invalid_argument("fl.sample_ratio selects no clients");
        if (malicious_ratio < 0.0 || malicious_ratio > 1.0)
            throw std::invalid_argument("fl.malicious_ratio must lie in [0,1]");
        if (healing_size < 1) throw std::invalid_argument("agsd.healing_size must be positive");
        if (hidden_dims.empty()) throw std::invalid_argument("model.hidden_dims must not be empty");
        for (int h : hidden_dims)
            if (h < 1) throw std::invalid_argument("model.hidden_dims entries must be positive");
        sgd.validate();
        if (demo_epochs < 0) throw std::invalid_argument("demo.epochs must be >= 0");
        if (demo_heldout_size < 1) throw std::invalid_argument("demo.heldout_size must be positive");
        if (demo_pdr < 0.0 || demo_pdr > 1.0) throw std::invalid_argument("demo.pdr must lie in [0,1]");
    }
};

inline std::vector<int> sample_clients(int n_clients, int count, int round, std::uint64_t master_seed) {
    if (count < 1 || count > n_clients)
        throw std::invalid_argument("sample_clients: count " + std::to_string(count) +
                                    " outside [1, " + std::to_string(n_clients) + "]");
    return rng::sample_without_replacement(
        n_clients, count, rng::derive_seed(master_seed, "sample", static_cast<std::uint64_t>(round)));
}

inline int argmax_row(std::span<const double> row) {
    int arg = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
        if (row[c] > row[static_cast<std::size_t>(arg)]) arg = static_cast<int>(c);
    return arg;
}

inline double metric_ca(const nn::ParamVector& model, const data::Dataset& test) {
    if (test.size() == 0) throw std::invalid_argument("metric_ca: empty test set");
    const auto pred = nn::forward(model, test.inputs);
    int hits = 0;
    for (int r = 0; r < test.size(); ++r)
        if (argmax_row(pred.probs.row(r)) == test.labels[static_cast<std::size_t>(r)]) ++hits;
    return static_cast<double>(hits) / test.size();
}

struct AsrResult {
    double value = 0.0;
    bool no_eligible = false; // nothing was both correctly classified and non-target
};

// Attack success rate over eligible samples: correctly classified and not
// already labeled with the trigger target. With no eligible samples the rate
// is defined as 0 and flagged.
inline AsrResult metric_asr(const nn::ParamVector& model, const data::Dataset& test,
                            const data::TriggerSpec& trig) {
    if (test.size() == 0) throw std::invalid_argument("metric_asr: empty test set");
    const auto clean = nn::forward(model, test.inputs);
    const auto triggered = nn::forward(model, data::apply_trigger_all(test.inputs, trig));
    int eligible = 0, flipped = 0;
    for (int r = 0; r < test.size(); ++r) {
        const int y = test.labels[static_cast<std::size_t>(r)];
        if (y == trig.target) continue;
        if (argmax_row(clean.probs.row(r)) != y) continue;
        ++eligible;
        if (argmax_row(triggered.probs.row(r)) == trig.target) ++flipped;
    }
    if (eligible == 0) return {0.0, true};
    return {static_cast<double>(flipped) / eligible, false};
}

inline double metric_false_negative(int malicious_aggregated, int total_aggregated) {
    if (malicious_aggregated < 0 || total_aggregated < 0 || malicious_aggregated > total_aggregated)
        throw std::invalid_argument("metric_false_negative: inconsistent counts");
    if (total_aggregated == 0) return 0.0;
    return static_cast<double>(malicious_aggregated) / total_aggregated;
}

struct RoundRecord {
    int round = 0;
    double ca = 0.0;
    double asr = 0.0;
    int selected_cluster = -1;
    int n_selected = 0;           // clients that entered the aggregate
    int n_malicious_selected = 0;
    double fn_rate = 0.0;
    bool skipped = false;

    struct ClientRow {
        int client_id = 0;
        bool malicious = false;
        double sigma = 0.0;
        double eta = 0.0;
        double gamma = 0.0;
        double phi = 0.0;
        int cluster = -1;
        bool aggregated = false;
    };
    std::vector<ClientRow> clients;
};

struct ExperimentResult {
    std::vector<RoundRecord> rounds;
    int best_round = 0;
    double final_ca = 0.0;  // at the restored best-CA weights
    double final_asr = 0.0;
    double mean_fn_rate = 0.0;
    std::vector<int> malicious_ids;
    nn::ParamVector best_model;
};

// Early-stopping bookkeeping: remembers the best accuracy seen so far and
// counts rounds since it improved. patience 0 never stops.
struct PatienceTracker {
    int patience = 0;
    double best_ca = -1.0;
    int best_round = 0;
    int since_best = 0;

    // Returns true when training should stop after this round.
    bool observe(int round, double ca) {
        if (ca > best_ca) {
            best_ca = ca;
            best_round = round;
            since_best = 0;
        } else {
            ++since_best;
        }
        return patience > 0 && since_best >= patience;
    }
};

// Builds the trigger(s) implied by an AttackSpec for a given input shape.
inline std::vector<data::TriggerSpec> build_triggers(const AttackSpec& a, int dim, int num_classes,
                                                     std::uint64_t master_seed) {
    using attacks::AttackKind;
    if (a.kind == AttackKind::clean) return {};
    if (a.trigger_size < 1 || a.trigger_size > dim)
        throw std::invalid_argument("attack.trigger_size must lie in [1, " + std::to_string(dim) + "]");
    std::vector<data::TriggerSpec> out;
    if (a.kind == AttackKind::itba) {
        // full-support faint pattern
        data::TriggerSpec t;
        t.mask.assign(static_cast<std::size_t>(dim), 1.0);
        t.pattern.resize(static_cast<std::size_t>(dim));
        rng::Rng r(rng::derive_seed(master_seed, "trigger"));
        for (auto& p : t.pattern) p = r.uniform();
        t.blend = a.blend;
        t.target = a.target_class;
        out.push_back(std::move(t));
        return out;
    }
    const int pairs = a.kind == AttackKind::mtba ? a.mtba_num_triggers : 1;
    if (a.kind == AttackKind::mtba) {
        if (pairs < 2) throw std::invalid_argument("attack.mtba_num_triggers must be >= 2");
        if (pairs > num_classes)
            throw std::invalid_argument("attack.mtba_num_triggers exceeds class count");
        if (pairs * a.trigger_size > dim)
            throw std::invalid_argument("attack.mtba_num_triggers * trigger_size exceeds input dim");
    }
    for (int j = 0; j < pairs; ++j) {
        data::TriggerSpec t;
        t.mask.assign(static_cast<std::size_t>(dim), 0.0);
        t.pattern.assign(static_cast<std::size_t>(dim), 0.0);
        for (int c = j * a.trigger_size; c < (j + 1) * a.trigger_size; ++c) {
            t.mask[static_cast<std::size_t>(c)] = 1.0;
            t.pattern[static_cast<std::size_t>(c)] = 1.0;
        }
        t.blend = a.blend;
        t.target = (a.target_class + j) % num_classes;
        out.push_back(std::move(t));
    }
    return out;
}

class Experiment {
public:
    explicit Experiment(FlConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        setup();
    }

    const data::Dataset& eval_set() const { return eval_; }
    const std::vector<int>& malicious_ids() const { return malicious_ids_; }
    const nn::ParamVector& global() const { return global_; }
    const defenses::TrustState& trust() const { return trust_; }

    RoundRecord run_round(int round) {
        const std::vector<int> sampled =
            sample_clients(cfg_.n_clients, cfg_.sampled_per_round(), round, cfg_.master_seed);

        defenses::RoundSubmissions subs;
        subs.prev_global = global_;
        subs.client_ids = sampled;
        for (int id : sampled) {
            const std::uint64_t seed =
                rng::derive_seed(cfg_.master_seed, "client", static_cast<std::uint64_t>(round),
                                 static_cast<std::uint64_t>(id));
            const attacks::AttackBehavior& b = is_malicious(id) ? behaviors_.at(id) : clean_behavior_;
            subs.models.push_back(attacks::craft_submission(
                b, global_, client_data_[static_cast<std::size_t>(id)], cfg_.sgd, round, seed));
        }

        RoundRecord rec;
        rec.round = round;
        std::vector<int> aggregated;
        defenses::TrustIndexReport report;
        bool have_report = false;
        switch (cfg_.defense) {
            case DefenseKind::fedavg:
                global_ = defenses::fedavg_round(subs);
                aggregated = sampled;
                break;
            case DefenseKind::dp:
                global_ = defenses::dp_round(subs, cfg_.dp_clip_norm, cfg_.dp_noise_sigma,
                                             rng::derive_seed(cfg_.master_seed, "dp",
                                                              static_cast<std::uint64_t>(round)));
                aggregated = sampled;
                break;
            case DefenseKind::mkrum: {
                auto res = defenses::mkrum_round(subs, cfg_.mkrum_f, cfg_.mkrum_m);
                global_ = std::move(res.model);
                aggregated = std::move(res.selected_ids);
                break;
            }
            case DefenseKind::agsd_id:
            case DefenseKind::agsd_ood: {
                auto res = defenses::agsd_round(subs, trust_, agsd_cfg_,
                                                rng::derive_seed(cfg_.master_seed, "agsd",
                                                                 static_cast<std::uint64_t>(round)));
                global_ = std::move(res.model);
                trust_ = std::move(res.trust);
                report = std::move(res.report);
                have_report = true;
                rec.selected_cluster = report.alpha_cluster;
                rec.skipped = report.skipped;
                for (const auto& row : report.clients)
                    if (row.aggregated) aggregated.push_back(row.client_id);
                break;
            }
        }

        rec.ca = metric_ca(global_, eval_);
        if (!eval_triggers_.empty()) {
            double sum = 0.0;
            for (const auto& t : eval_triggers_) sum += metric_asr(global_, eval_, t).value;
            rec.asr = sum / static_cast<double>(eval_triggers_.size());
        }
        rec.n_selected = static_cast<int>(aggregated.size());
        for (int id : aggregated) rec.n_malicious_selected += is_malicious(id) ? 1 : 0;
        rec.fn_rate = metric_false_negative(rec.n_malicious_selected, rec.n_selected);

        for (std::size_t i = 0; i < sampled.size(); ++i) {
            RoundRecord::ClientRow row;
            row.client_id = sampled[i];
            row.malicious = is_malicious(row.client_id);
            if (have_report) {
                const auto& cr = report.clients[i];
                row.sigma = cr.sigma;
                row.eta = cr.eta;
                row.gamma = cr.gamma;
                row.phi = cr.phi_after;
                row.cluster = cr.cluster;
                row.aggregated = cr.aggregated;
            } else {
                row.aggregated =
                    std::find(aggregated.begin(), aggregated.end(), row.client_id) != aggregated.end();
            }
            rec.clients.push_back(row);
        }
        return rec;
    }

    // With patience > 0, training stops once CA has not improved for that many
    // rounds and the best-CA weights are restored. With patience = 0 the full
    // schedule runs and the last round's model is the result, the usual
    // fixed-budget convention.
    ExperimentResult run() {
        ExperimentResult res;
        res.malicious_ids = malicious_ids_;
        PatienceTracker tracker{cfg_.patience};
        nn::ParamVector best_model = global_;
        for (int r = 1; r <= cfg_.rounds; ++r) {
            RoundRecord rec = run_round(r);
            res.rounds.push_back(rec);
            const bool stop = tracker.observe(r, rec.ca);
            if (tracker.best_round == r) best_model = global_;
            if (stop) break;
        }
        res.best_round = tracker.best_round;
        if (cfg_.patience > 0) {
            global_ = best_model; // restore best weights
        } else {
            res.best_round = static_cast<int>(res.rounds.size());
            best_model = global_;
        }
        res.final_ca = res.rounds[static_cast<std::size_t>(res.best_round - 1)].ca;
        res.final_asr = res.rounds[static_cast<std::size_t>(res.best_round - 1)].asr;
        res.best_model = std::move(best_model);
        double fn = 0.0;
        for (const auto& rec : res.rounds) fn += rec.fn_rate;
        res.mean_fn_rate = res.rounds.empty() ? 0.0 : fn / static_cast<double>(res.rounds.size());
        return res;
    }

private:
    bool is_malicious(int id) const { return malicious_set_.contains(id); }

    void setup() {
        data::Dataset full;
        if (cfg_.data.kind == DataSpec::Kind::synthetic) {
            const auto& s = cfg_.data.synth;
            full = data::gen_synthetic(s.num_classes, s.dim, s.samples_per_class, s.separation,
                                       rng::derive_seed(cfg_.master_seed, "data"));
        } else {
            full = data::load_idx(cfg_.data.idx_images, cfg_.data.idx_labels);
        }
        full.validate();
        const int dim = full.dim();
        const int num_classes = full.num_classes;

        // 20% held out at the server before any partitioning.
        const std::vector<int> order =
            rng::shuffled_indices(full.size(), rng::derive_seed(cfg_.master_seed, "split"));
        const int held = static_cast<int>(std::floor(0.2 * full.size()));
        if (held < 1) throw std::invalid_argument("dataset too small for the 20% held-out split");
        std::vector<int> held_idx(order.begin(), order.begin() + held);
        std::vector<int> train_idx(order.begin() + held, order.end());
        data::Dataset heldout = data::subset(full, held_idx);
        data::Dataset train = data::subset(full, train_idx);

        if (cfg_.defense == DefenseKind::agsd_id) {
            if (cfg_.healing_size >= heldout.size())
                throw std::invalid_argument("agsd.healing_size must be smaller than the held-out split (" +
                                            std::to_string(heldout.size()) + ")");
            std::vector<int> h(static_cast<std::size_t>(cfg_.healing_size));
            for (int i = 0; i < cfg_.healing_size; ++i) h[static_cast<std::size_t>(i)] = i;
            agsd_cfg_.healing = data::subset(heldout, h);
            std::vector<int> e;
            for (int i = cfg_.healing_size; i < heldout.size(); ++i) e.push_back(i);
            eval_ = data::subset(heldout, e);
        } else {
            eval_ = std::move(heldout);
            if (cfg_.defense == DefenseKind::agsd_ood) {
                const auto& o = cfg_.ood;
                data::Dataset ood = data::gen_synthetic(o.num_classes, o.dim, o.samples_per_class,
                                                        o.separation,
                                                        rng::derive_seed(cfg_.master_seed, "ood"));
                ood = data::coerce(ood, dim, num_classes);
                if (cfg_.healing_size > ood.size())
                    throw std::invalid_argument("agsd.healing_size exceeds the OOD pool (" +
                                                std::to_string(ood.size()) + ")");
                const std::vector<int> pick = rng::sample_without_replacement(
                    ood.size(), cfg_.healing_size, rng::derive_seed(cfg_.master_seed, "ood_pick"));
                agsd_cfg_.healing = data::subset(ood, pick);
            }
        }

        const data::PartitionPlan plan =
            cfg_.partition.kind == PartitionSpec::Kind::iid
                ? data::partition_iid(train.size(), cfg_.n_clients,
                                      rng::derive_seed(cfg_.master_seed, "partition"))
                : data::partition_noniid(train, cfg_.n_clients, cfg_.partition.alpha,
                                         cfg_.partition.group_fraction,
                                         rng::derive_seed(cfg_.master_seed, "partition"));
        client_data_.reserve(static_cast<std::size_t>(cfg_.n_clients));
        for (int c = 0; c < cfg_.n_clients; ++c)
            client_data_.push_back(data::subset(train, plan.client_indices[static_cast<std::size_t>(c)]));

        nn::ModelSpec spec;
        spec.layer_dims.push_back(dim);
        for (int h : cfg_.hidden_dims) spec.layer_dims.push_back(h);
        spec.layer_dims.push_back(num_classes);
        global_ = nn::init_params(spec, rng::derive_seed(cfg_.master_seed, "init"));

        const std::vector<int> shuffled =
            rng::shuffled_indices(cfg_.n_clients, rng::derive_seed(cfg_.master_seed, "malicious"));
        malicious_ids_.assign(shuffled.begin(), shuffled.begin() + cfg_.malicious_count());
        std::sort(malicious_ids_.begin(), malicious_ids_.end());
        malicious_set_ = std::set<int>(malicious_ids_.begin(), malicious_ids_.end());

        if (cfg_.attack.kind != attacks::AttackKind::clean) {
            eval_triggers_ = build_triggers(cfg_.attack, dim, num_classes, cfg_.master_seed);
            int rank = 0;
            for (int id : malicious_ids_) {
                attacks::AttackBehavior b;
                b.kind = cfg_.attack.kind;
                b.triggers = eval_triggers_;
                b.pdr = cfg_.attack.pdr;
                b.scale = cfg_.attack.scale;
                b.lba_confidence = cfg_.attack.lba_confidence;
                b.impersonate_until = cfg_.attack.impersonate_until;
                b.fgsm_epsilon = cfg_.agsd_fgsm_epsilon;
                if (b.kind == attacks::AttackKind::dba)
                    b.dba_cohort = {rank % cfg_.attack.dba_groups, cfg_.attack.dba_groups};
                behaviors_.emplace(id, std::move(b));
                ++rank;
            }
        }

        trust_.phi_init = cfg_.agsd_phi_init;
        agsd_cfg_.fgsm_epsilon = cfg_.agsd_fgsm_epsilon;
        agsd_cfg_.n_clusters = cfg_.agsd_n_clusters;
        agsd_cfg_.noise_scale = cfg_.agsd_noise_scale;
        agsd_cfg_.phi_init = cfg_.agsd_phi_init;
        agsd_cfg_.attack_target = cfg_.agsd_attack_target;
        agsd_cfg_.positive_exponent = cfg_.agsd_positive_exponent;
        agsd_cfg_.final_aggregation = cfg_.agsd_final_aggregation;
    }

    FlConfig cfg_;
    data::Dataset eval_;
    std::vector<data::Dataset> client_data_;
    std::vector<int> malicious_ids_;
    std::set<int> malicious_set_;
    std::map<int, attacks::AttackBehavior> behaviors_;
    attacks::AttackBehavior clean_behavior_;
    std::vector<data::TriggerSpec> eval_triggers_;
    nn::ParamVector global_;
    defenses::TrustState trust_;
    defenses::AgsdConfig agsd_cfg_;
};

inline ExperimentResult run_experiment(const FlConfig& cfg) { return Experiment(cfg).run(); }

struct BiasProbe {
    double sigma = 0.0;
    double eta = 0.0;
};

inline BiasProbe measure_bias(const nn::ParamVector& model, const data::Dataset& heldout,
                              double epsilon) {
    const Matrix adv = nn::fgsm_perturb(model, heldout.inputs,
                                        nn::onehot(heldout.labels, model.spec.num_classes()), epsilon,
                                        nn::LossKind::cross_entropy);
    const auto pred = nn::forward(model, adv);
    return {defenses::compute_sigma(pred), defenses::compute_eta(pred)};
}

struct BiasRow {
    int epoch = 0;
    double sigma_clean = 0.0;
    double sigma_poisoned = 0.0;
    double eta_clean = 0.0;
    double eta_poisoned = 0.0;
};

// Side-by-side training of a clean and a trigger-poisoned model from the same
// init; after each epoch both are probed on FGSM-perturbed held-out data.
// This is the standalone reproduction of the spread/overconfidence gap the
// defense exploits.
inline std::vector<BiasRow> demo_bias(const FlConfig& cfg, bool ood) {
    cfg.validate();
    if (cfg.data.kind != DataSpec::Kind::synthetic)
        throw std::invalid_argument("demo_bias: synthetic data only");
    const auto& s = cfg.data.synth;
    const data::Dataset pool = data::gen_synthetic(s.num_classes, s.dim, s.samples_per_class,
                                                   s.separation,
                                                   rng::derive_seed(cfg.master_seed, "data"));
    if (cfg.demo_heldout_size >= pool.size())
        throw std::invalid_argument("demo.heldout_size must leave training data (pool size " +
                                    std::to_string(pool.size()) + ")");
    // The training split is identical for ID and OOD probes; only the probe
    // set changes.
    const std::vector<int> order =
        rng::shuffled_indices(pool.size(), rng::derive_seed(cfg.master_seed, "split"));
    const std::vector<int> held_idx(order.begin(), order.begin() + cfg.demo_heldout_size);
    const std::vector<int> train_idx(order.begin() + cfg.demo_heldout_size, order.end());
    const data::Dataset train = data::subset(pool, train_idx);
    data::Dataset heldout;
    if (ood) {
        const auto& o = cfg.ood;
        heldout = data::coerce(data::gen_synthetic(o.num_classes, o.dim, o.samples_per_class,
                                                   o.separation, rng::derive_seed(cfg.master_seed, "ood")),
                               s.dim, s.num_classes);
        if (cfg.demo_heldout_size > heldout.size())
            throw std::invalid_argument("demo.heldout_size exceeds the OOD pool");
        heldout = data::subset(heldout, rng::sample_without_replacement(
                                            heldout.size(), cfg.demo_heldout_size,
                                            rng::derive_seed(cfg.master_seed, "demo_pick")));
    } else {
        heldout = data::subset(pool, held_idx);
    }

    AttackSpec aspec = cfg.attack;
    if (aspec.kind == attacks::AttackKind::clean) aspec.kind = attacks::AttackKind::vtba;
    const auto triggers = build_triggers(aspec, s.dim, s.num_classes, cfg.master_seed);
    const data::Dataset poisoned =
        data::poison(train, triggers[0], cfg.demo_pdr, rng::derive_seed(cfg.master_seed, "demo_poison"))
            .data;

    nn::ModelSpec spec;
    spec.layer_dims.push_back(s.dim);
    for (int h : cfg.hidden_dims) spec.layer_dims.push_back(h);
    spec.layer_dims.push_back(s.num_classes);
    const nn::ParamVector init = nn::init_params(spec, rng::derive_seed(cfg.master_seed, "init"));

    nn::SgdTrainer clean(init, cfg.sgd);
    nn::SgdTrainer pois(init, cfg.sgd);
    const Matrix tc = nn::onehot(train.labels, s.num_classes);
    const Matrix tp = nn::onehot(poisoned.labels, s.num_classes);
    const std::uint64_t train_seed = rng::derive_seed(cfg.master_seed, "demo_train");

    std::vector<BiasRow> rows;
    for (int e = 1; e <= cfg.demo_epochs; ++e) {
        clean.epoch(train.inputs, tc, nn::epoch_seed(train_seed, e - 1));
        pois.epoch(poisoned.inputs, tp, nn::epoch_seed(train_seed, e - 1));
        const BiasProbe pc = measure_bias(clean.params(), heldout, cfg.agsd_fgsm_epsilon);
        const BiasProbe pp = measure_bias(pois.params(), heldout, cfg.agsd_fgsm_epsilon);
        rows.push_back({e, pc.sigma, pp.sigma, pc.eta, pp.eta});
    }
    return rows;
}

// ---- CSV serialization (fixed column orders, %.10g doubles) ----

inline std::string csv_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

inline std::string rounds_csv(const ExperimentResult& res) {
    std::string out = "round,ca,asr,selected_cluster,n_selected,n_malicious_selected,fn_rate,skipped\n";
    for (const auto& r : res.rounds) {
        out += std::to_string(r.round) + ',' + csv_num(r.ca) + ',' + csv_num(r.asr) + ',' +
               std::to_string(r.selected_cluster) + ',' + std::to_string(r.n_selected) + ',' +
               std::to_string(r.n_malicious_selected) + ',' + csv_num(r.fn_rate) + ',' +
               (r.skipped ? "1" : "0") + '\n';
    }
    return out;
}

inline std::string clients_csv(const ExperimentResult& res) {
    std::string out = "round,client_id,malicious,sigma,eta,gamma,phi,cluster,aggregated\n";
    for (const auto& r : res.rounds)
        for (const auto& c : r.clients) {
            out += std::to_string(r.round) + ',' + std::to_string(c.client_id) + ',' +
                   (c.malicious ? "1" : "0") + ',' + csv_num(c.sigma) + ',' + csv_num(c.eta) + ',' +
                   csv_num(c.gamma) + ',' + csv_num(c.phi) + ',' + std::to_string(c.cluster) + ',' +
                   (c.aggregated ? "1" : "0") + '\n';
        }
    return out;
}

inline std::string bias_csv(const std::vector<BiasRow>& rows) {
    std::string out = "epoch,sigma_clean,sigma_poisoned,eta_clean,eta_poisoned\n";
    for (const auto& r : rows)
        out += std::to_string(r.epoch) + ',' + csv_num(r.sigma_clean) + ',' + csv_num(r.sigma_poisoned) +
               ',' + csv_num(r.eta_clean) + ',' + csv_num(r.eta_poisoned) + '\n';
    return out;
}

} // namespace agsd::harness
