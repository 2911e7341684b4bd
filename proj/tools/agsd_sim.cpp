// Simulator entry point.
//
// Subcommands:
//   run       --config PATH --out DIR [--seed N]
//   sweep     --config PATH --param NAME --values CSV --out DIR
//   demo-bias --config PATH --out DIR [--ood]
//
// The AGSD_SEED environment variable overrides the config seed; an explicit
// --seed flag overrides both. Exit codes: 0 success, 1 config error (message
// names the offending key), 2 runtime failure.

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "agsd/agsd.hpp"

namespace {

constexpr const char* kToolVersion = "1.0.0";

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

agsd::harness::FlConfig load_config(const std::string& config_path,
                                    const std::optional<std::uint64_t>& seed_flag) {
    auto kv = agsd::config::load_kv_file(config_path);
    agsd::harness::FlConfig cfg = agsd::config::resolve(kv);
    if (const char* env = std::getenv("AGSD_SEED"); env && *env)
        agsd::config::set_key(cfg, "seed", env);
    if (seed_flag) cfg.master_seed = *seed_flag;
    return cfg;
}

std::string manifest_text(const agsd::harness::FlConfig& cfg, const std::string& out_dir) {
    std::string out;
    out += std::string("tool_version=") + kToolVersion + "\n";
    out += "out_dir=" + out_dir + "\n";
    out += "config_digest=" + agsd::config::config_digest(cfg) + "\n";
    for (const auto& [k, v] : agsd::config::canonical_map(cfg)) out += "config." + k + "=" + v + "\n";
    return out;
}

std::string summary_text(const agsd::harness::ExperimentResult& res) {
    std::string out;
    out += "final_ca=" + agsd::harness::csv_num(res.final_ca) + "\n";
    out += "final_asr=" + agsd::harness::csv_num(res.final_asr) + "\n";
    out += "mean_fn_rate=" + agsd::harness::csv_num(res.mean_fn_rate) + "\n";
    out += "best_round=" + std::to_string(res.best_round) + "\n";
    out += "rounds_run=" + std::to_string(res.rounds.size()) + "\n";
    return out;
}

agsd::harness::ExperimentResult run_into(const agsd::harness::FlConfig& cfg,
                                         const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    agsd::harness::ExperimentResult res = agsd::harness::run_experiment(cfg);
    write_file(dir / "rounds.csv", agsd::harness::rounds_csv(res));
    write_file(dir / "clients.csv", agsd::harness::clients_csv(res));
    write_file(dir / "manifest.txt", manifest_text(cfg, dir.string()));
    write_file(dir / "summary.txt", summary_text(res));
    return res;
}

std::string sanitize_dirname(const std::string& s) {
    std::string out;
    for (char c : s)
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_')
                   ? c
                   : '_';
    return out.empty() ? "_" : out;
}

std::vector<std::string> split_csv_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) out.push_back(agsd::config::trim(item));
    return out;
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            const std::optional<std::uint64_t>& seed_flag) {
    const agsd::harness::FlConfig cfg = load_config(config_path, seed_flag);
    const auto res = run_into(cfg, out_dir);
    std::cout << "final_ca=" << agsd::harness::csv_num(res.final_ca)
              << " final_asr=" << agsd::harness::csv_num(res.final_asr) << "\n";
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& param, const std::string& values,
              const std::string& out_dir) {
    const agsd::harness::FlConfig base = load_config(config_path, std::nullopt);
    const std::vector<std::string> vals = split_csv_list(values);
    if (vals.empty()) throw std::invalid_argument("sweep: --values must list at least one value");
    std::filesystem::create_directories(out_dir);
    std::string summary = "value,final_ca,final_asr\n";
    for (const std::string& v : vals) {
        agsd::harness::FlConfig cfg = base;
        agsd::config::set_key(cfg, param, v); // throws on unknown parameter
        cfg.validate();
        const auto res = run_into(cfg, std::filesystem::path(out_dir) / sanitize_dirname(v));
        summary += v + ',' + agsd::harness::csv_num(res.final_ca) + ',' +
                   agsd::harness::csv_num(res.final_asr) + '\n';
        std::cout << param << "=" << v << " final_ca=" << agsd::harness::csv_num(res.final_ca)
                  << " final_asr=" << agsd::harness::csv_num(res.final_asr) << "\n";
    }
    write_file(std::filesystem::path(out_dir) / "sweep_summary.csv", summary);
    return 0;
}

int cmd_demo_bias(const std::string& config_path, const std::string& out_dir, bool ood) {
    const agsd::harness::FlConfig cfg = load_config(config_path, std::nullopt);
    const auto rows = agsd::harness::demo_bias(cfg, ood);
    std::filesystem::create_directories(out_dir);
    write_file(std::filesystem::path(out_dir) / "bias_trace.csv", agsd::harness::bias_csv(rows));
    if (!rows.empty()) {
        const auto& last = rows.back();
        std::cout << "epoch=" << last.epoch << " sigma_clean=" << agsd::harness::csv_num(last.sigma_clean)
                  << " sigma_poisoned=" << agsd::harness::csv_num(last.sigma_poisoned)
                  << " eta_clean=" << agsd::harness::csv_num(last.eta_clean)
                  << " eta_poisoned=" << agsd::harness::csv_num(last.eta_poisoned) << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated-learning backdoor attack/defense simulator"};
    app.require_subcommand(1);

    std::string config_path, out_dir, param, values;
    std::optional<std::uint64_t> seed_flag;
    bool ood = false;

    CLI::App* run = app.add_subcommand("run", "Run one experiment");
    run->add_option("--config", config_path, "Config file")->required();
    run->add_option("--out", out_dir, "Output directory")->required();
    run->add_option("--seed", seed_flag, "Master seed override");

    CLI::App* sweep = app.add_subcommand("sweep", "Run one experiment per parameter value");
    sweep->add_option("--config", config_path, "Config file")->required();
    sweep->add_option("--param", param, "Config key to vary")->required();
    sweep->add_option("--values", values, "Comma-separated values")->required();
    sweep->add_option("--out", out_dir, "Output directory")->required();

    CLI::App* demo = app.add_subcommand("demo-bias", "Trace clean-vs-poisoned sigma/eta per epoch");
    demo->add_option("--config", config_path, "Config file")->required();
    demo->add_option("--out", out_dir, "Output directory")->required();
    demo->add_flag("--ood", ood, "Probe on out-of-distribution held-out data");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (run->parsed()) return cmd_run(config_path, out_dir, seed_flag);
        if (sweep->parsed()) return cmd_sweep(config_path, param, values, out_dir);
        if (demo->parsed()) return cmd_demo_bias(config_path, out_dir, ood);
        std::cerr << "no subcommand\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
}
