#pragma once

// Flat key=value config format with dotted sections (e.g. agsd.fgsm_epsilon).
// Every key maps onto one FlConfig field; unknown keys and malformed values are
// errors that name the key, so a typo cannot silently fall back to a default.

#include <climits>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "agsd/harness.hpp"

namespace agsd::config {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Parses "key = value" lines; '#' starts a comment, blanks are skipped.
inline std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
        if (out.contains(key))
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": duplicate key '" + key + "'");
        out[key] = value;
    }
    return out;
}

inline std::map<std::string, std::string> load_kv_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("config file not readable: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_kv_text(buf.str());
}

namespace detail {

inline double want_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        throw std::invalid_argument("config key '" + key + "': expected number, got '" + v + "'");
    }
}

inline int want_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long d = std::stoll(v, &pos);
        if (pos != v.size() || d < INT_MIN || d > INT_MAX) throw std::invalid_argument("");
        return static_cast<int>(d);
    } catch (...) {
        throw std::invalid_argument("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

inline std::uint64_t want_u64(const std::string& key, const std::string& v) {
    try {
        // stoull silently wraps negative input, so rule it out up front.
        if (v.find('-') != std::string::npos) throw std::invalid_argument("");
        std::size_t pos = 0;
        const unsigned long long d = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        throw std::invalid_argument("config key '" + key +
                                    "': expected unsigned integer, got '" + v + "'");
    }
}

inline bool want_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::vector<int> want_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) out.push_back(want_int(key, trim(item)));
    if (out.empty())
        throw std::invalid_argument("config key '" + key + "': expected comma-separated integers");
    return out;
}

[[noreturn]] inline void bad_enum(const std::string& key, const std::string& v,
                                  const std::string& allowed) {
    throw std::invalid_argument("config key '" + key + "': got '" + v + "', expected one of " +
                                allowed);
}

} // namespace detail

// Applies one key=value pair to the config. Throws on unknown keys so sweeps
// over a mistyped parameter fail loudly.
inline void set_key(harness::FlConfig& c, const std::string& key, const std::string& value) {
    using namespace detail;
    using attacks::AttackKind;
    using harness::DataSpec;
    using harness::DefenseKind;
    using harness::PartitionSpec;

    if (key == "seed") { c.master_seed = want_u64(key, value); return; }

    if (key == "data.kind") {
        if (value == "synthetic") c.data.kind = DataSpec::Kind::synthetic;
        else if (value == "idx") c.data.kind = DataSpec::Kind::idx;
        else bad_enum(key, value, "synthetic|idx");
        return;
    }
    if (key == "data.classes") { c.data.synth.num_classes = want_int(key, value); return; }
    if (key == "data.dim") { c.data.synth.dim = want_int(key, value); return; }
    if (key == "data.samples_per_class") { c.data.synth.samples_per_class = want_int(key, value); return; }
    if (key == "data.separation") { c.data.synth.separation = want_double(key, value); return; }
    if (key == "data.idx_images") { c.data.idx_images = value; return; }
    if (key == "data.idx_labels") { c.data.idx_labels = value; return; }

    if (key == "partition.kind") {
        if (value == "iid") c.partition.kind = PartitionSpec::Kind::iid;
        else if (value == "noniid") c.partition.kind = PartitionSpec::Kind::noniid;
        else bad_enum(key, value, "iid|noniid");
        return;
    }
    if (key == "partition.alpha") { c.partition.alpha = want_double(key, value); return; }
    if (key == "partition.group_fraction") { c.partition.group_fraction = want_double(key, value); return; }

    if (key == "model.hidden_dims") { c.hidden_dims = want_int_list(key, value); return; }

    if (key == "fl.n_clients") { c.n_clients = want_int(key, value); return; }
    if (key == "fl.sample_ratio") { c.sample_ratio = want_double(key, value); return; }
    if (key == "fl.rounds") { c.rounds = want_int(key, value); return; }
    if (key == "fl.patience") { c.patience = want_int(key, value); return; }
    if (key == "fl.malicious_ratio") { c.malicious_ratio = want_double(key, value); return; }

    if (key == "attack.kind") {
        static const std::map<std::string, AttackKind> kinds{
            {"clean", AttackKind::clean}, {"vtba", AttackKind::vtba}, {"itba", AttackKind::itba},
            {"lba", AttackKind::lba},     {"mtba", AttackKind::mtba}, {"dba", AttackKind::dba},
            {"rba", AttackKind::rba},     {"pba", AttackKind::pba}};
        const auto it = kinds.find(value);
        if (it == kinds.end()) bad_enum(key, value, "clean|vtba|itba|lba|mtba|dba|rba|pba");
        c.attack.kind = it->second;
        return;
    }
    if (key == "attack.pdr") { c.attack.pdr = want_double(key, value); return; }
    if (key == "attack.scale") { c.attack.scale = want_double(key, value); return; }
    if (key == "attack.blend") { c.attack.blend = want_double(key, value); return; }
    if (key == "attack.target_class") { c.attack.target_class = want_int(key, value); return; }
    if (key == "attack.trigger_size") { c.attack.trigger_size = want_int(key, value); return; }
    if (key == "attack.lba_confidence") { c.attack.lba_confidence = want_double(key, value); return; }
    if (key == "attack.mtba_num_triggers") { c.attack.mtba_num_triggers = want_int(key, value); return; }
    if (key == "attack.dba_groups") { c.attack.dba_groups = want_int(key, value); return; }
    if (key == "attack.impersonate_until") { c.attack.impersonate_until = want_int(key, value); return; }

    if (key == "defense.kind") {
        static const std::map<std::string, DefenseKind> kinds{{"fedavg", DefenseKind::fedavg},
                                                              {"dp", DefenseKind::dp},
                                                              {"mkrum", DefenseKind::mkrum},
                                                              {"agsd_id", DefenseKind::agsd_id},
                                                              {"agsd_ood", DefenseKind::agsd_ood}};
        const auto it = kinds.find(value);
        if (it == kinds.end()) bad_enum(key, value, "fedavg|dp|mkrum|agsd_id|agsd_ood");
        c.defense = it->second;
        return;
    }

    if (key == "sgd.lr") { c.sgd.learning_rate = want_double(key, value); return; }
    if (key == "sgd.momentum") { c.sgd.momentum = want_double(key, value); return; }
    if (key == "sgd.weight_decay") { c.sgd.weight_decay = want_double(key, value); return; }
    if (key == "sgd.local_epochs") { c.sgd.local_epochs = want_int(key, value); return; }
    if (key == "sgd.batch_size") { c.sgd.batch_size = want_int(key, value); return; }

    if (key == "agsd.fgsm_epsilon") { c.agsd_fgsm_epsilon = want_double(key, value); return; }
    if (key == "agsd.n_clusters") { c.agsd_n_clusters = want_int(key, value); return; }
    if (key == "agsd.noise_scale") { c.agsd_noise_scale = want_double(key, value); return; }
    if (key == "agsd.phi_init") { c.agsd_phi_init = want_double(key, value); return; }
    if (key == "agsd.attack_target") {
        if (value == "preliminary") c.agsd_attack_target = defenses::AttackTarget::preliminary_aggregate;
        else if (value == "fedavg") c.agsd_attack_target = defenses::AttackTarget::plain_fedavg;
        else bad_enum(key, value, "preliminary|fedavg");
        return;
    }
    if (key == "agsd.positive_exponent") { c.agsd_positive_exponent = want_bool(key, value); return; }
    if (key == "agsd.final_aggregation") {
        if (value == "noisy") c.agsd_final_aggregation = defenses::FinalAggregation::noisy;
        else if (value == "min_norm") c.agsd_final_aggregation = defenses::FinalAggregation::min_norm;
        else bad_enum(key, value, "noisy|min_norm");
        return;
    }
    if (key == "agsd.healing_size") { c.healing_size = want_int(key, value); return; }

    if (key == "ood.classes") { c.ood.num_classes = want_int(key, value); return; }
    if (key == "ood.dim") { c.ood.dim = want_int(key, value); return; }
    if (key == "ood.samples_per_class") { c.ood.samples_per_class = want_int(key, value); return; }
    if (key == "ood.separation") { c.ood.separation = want_double(key, value); return; }

    if (key == "mkrum.f") { c.mkrum_f = want_int(key, value); return; }
    if (key == "mkrum.m") { c.mkrum_m = want_int(key, value); return; }
    if (key == "dp.clip_norm") { c.dp_clip_norm = want_double(key, value); return; }
    if (key == "dp.noise_sigma") { c.dp_noise_sigma = want_double(key, value); return; }

    if (key == "demo.epochs") { c.demo_epochs = want_int(key, value); return; }
    if (key == "demo.heldout_size") { c.demo_heldout_size = want_int(key, value); return; }
    if (key == "demo.pdr") { c.demo_pdr = want_double(key, value); return; }

    throw std::invalid_argument("unknown config key '" + key + "'");
}

inline const std::vector<std::string>& required_keys() {
    static const std::vector<std::string> keys{"seed", "data.kind", "fl.n_clients", "fl.rounds",
                                               "defense.kind"};
    return keys;
}

// Builds an FlConfig from parsed key=value pairs; defaults fill everything not
// listed except the required keys, which must be present.
inline harness::FlConfig resolve(const std::map<std::string, std::string>& kv) {
    for (const auto& key : required_keys())
        if (!kv.contains(key))
            throw std::invalid_argument("missing required config key '" + key + "'");
    harness::FlConfig c;
    for (const auto& [key, value] : kv) set_key(c, key, value);
    c.validate();
    return c;
}

namespace detail {

inline std::string canon_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

// Complete dump of a resolved config, one entry per key. Used for the manifest
// and the config digest; std::map ordering makes it canonical.
inline std::map<std::string, std::string> canonical_map(const harness::FlConfig& c) {
    using detail::canon_num;
    std::map<std::string, std::string> m;
    m["seed"] = std::to_string(c.master_seed);
    m["data.kind"] = c.data.kind == harness::DataSpec::Kind::synthetic ? "synthetic" : "idx";
    m["data.classes"] = std::to_string(c.data.synth.num_classes);
    m["data.dim"] = std::to_string(c.data.synth.dim);
    m["data.samples_per_class"] = std::to_string(c.data.synth.samples_per_class);
    m["data.separation"] = canon_num(c.data.synth.separation);
    m["data.idx_images"] = c.data.idx_images;
    m["data.idx_labels"] = c.data.idx_labels;
    m["partition.kind"] = c.partition.kind == harness::PartitionSpec::Kind::iid ? "iid" : "noniid";
    m["partition.alpha"] = canon_num(c.partition.alpha);
    m["partition.group_fraction"] = canon_num(c.partition.group_fraction);
    std::string dims;
    for (std::size_t i = 0; i < c.hidden_dims.size(); ++i)
        dims += (i ? "," : "") + std::to_string(c.hidden_dims[i]);
    m["model.hidden_dims"] = dims;
    m["fl.n_clients"] = std::to_string(c.n_clients);
    m["fl.sample_ratio"] = canon_num(c.sample_ratio);
    m["fl.rounds"] = std::to_string(c.rounds);
    m["fl.patience"] = std::to_string(c.patience);
    m["fl.malicious_ratio"] = canon_num(c.malicious_ratio);
    m["attack.kind"] = attacks::kind_name(c.attack.kind);
    m["attack.pdr"] = canon_num(c.attack.pdr);
    m["attack.scale"] = canon_num(c.attack.scale);
    m["attack.blend"] = canon_num(c.attack.blend);
    m["attack.target_class"] = std::to_string(c.attack.target_class);
    m["attack.trigger_size"] = std::to_string(c.attack.trigger_size);
    m["attack.lba_confidence"] = canon_num(c.attack.lba_confidence);
    m["attack.mtba_num_triggers"] = std::to_string(c.attack.mtba_num_triggers);
    m["attack.dba_groups"] = std::to_string(c.attack.dba_groups);
    m["attack.impersonate_until"] = std::to_string(c.attack.impersonate_until);
    switch (c.defense) {
        case harness::DefenseKind::fedavg: m["defense.kind"] = "fedavg"; break;
        case harness::DefenseKind::dp: m["defense.kind"] = "dp"; break;
        case harness::DefenseKind::mkrum: m["defense.kind"] = "mkrum"; break;
        case harness::DefenseKind::agsd_id: m["defense.kind"] = "agsd_id"; break;
        case harness::DefenseKind::agsd_ood: m["defense.kind"] = "agsd_ood"; break;
    }
    m["sgd.lr"] = canon_num(c.sgd.learning_rate);
    m["sgd.momentum"] = canon_num(c.sgd.momentum);
    m["sgd.weight_decay"] = canon_num(c.sgd.weight_decay);
    m["sgd.local_epochs"] = std::to_string(c.sgd.local_epochs);
    m["sgd.batch_size"] = std::to_string(c.sgd.batch_size);
    m["agsd.fgsm_epsilon"] = canon_num(c.agsd_fgsm_epsilon);
    m["agsd.n_clusters"] = std::to_string(c.agsd_n_clusters);
    m["agsd.noise_scale"] = canon_num(c.agsd_noise_scale);
    m["agsd.phi_init"] = canon_num(c.agsd_phi_init);
    m["agsd.attack_target"] =
        c.agsd_attack_target == defenses::AttackTarget::preliminary_aggregate ? "preliminary"
                                                                              : "fedavg";
    m["agsd.positive_exponent"] = c.agsd_positive_exponent ? "true" : "false";
    m["agsd.final_aggregation"] =
        c.agsd_final_aggregation == defenses::FinalAggregation::noisy ? "noisy" : "min_norm";
    m["agsd.healing_size"] = std::to_string(c.healing_size);
    m["ood.classes"] = std::to_string(c.ood.num_classes);
    m["ood.dim"] = std::to_string(c.ood.dim);
    m["ood.samples_per_class"] = std::to_string(c.ood.samples_per_class);
    m["ood.separation"] = canon_num(c.ood.separation);
    m["mkrum.f"] = std::to_string(c.mkrum_f);
    m["mkrum.m"] = std::to_string(c.mkrum_m);
    m["dp.clip_norm"] = canon_num(c.dp_clip_norm);
    m["dp.noise_sigma"] = canon_num(c.dp_noise_sigma);
    m["demo.epochs"] = std::to_string(c.demo_epochs);
    m["demo.heldout_size"] = std::to_string(c.demo_heldout_size);
    m["demo.pdr"] = canon_num(c.demo_pdr);
    return m;
}

inline std::string canonical_text(const std::map<std::string, std::string>& m) {
    std::string out;
    for (const auto& [k, v] : m) out += k + "=" + v + "\n";
    return out;
}

// FNV-1a 64-bit over the canonical text, printed as fixed-width hex.
inline std::string config_digest(const harness::FlConfig& c) {
    const std::string text = canonical_text(canonical_map(c));
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace agsd::config
