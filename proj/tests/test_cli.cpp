#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

// End-to-end tests against the installed binary; AGSD_SIM_BIN is injected by
// the build so the suite always runs the freshly built tool.

namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string output; // stdout and stderr combined
};

CmdResult run_cmd(const std::string& args, const std::string& env_prefix = "") {
    // strip any ambient seed override so tests control it explicitly
    const std::string cmd =
        "env -u AGSD_SEED " + env_prefix + std::string(AGSD_SIM_BIN) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string out;
    char buf[512];
    while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) out.append(buf, n);
    const int status = pclose(pipe);
    CmdResult res;
    res.output = std::move(out);
    if (WIFEXITED(status)) res.exit_code = WEXITSTATUS(status);
    return res;
}

fs::path fresh_dir(const std::string& tag) {
    static int counter = 0;
    const fs::path dir = fs::temp_directory_path() / ("agsd_cli_" + tag + "_" + std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_config(const fs::path& dir, const std::string& name, const std::string& body) {
    const fs::path p = dir / name;
    std::ofstream out(p);
    out << body;
    return p;
}

std::string base_config(int seed) {
    return "seed = " + std::to_string(seed) + "\n" +
           "data.kind = synthetic\n"
           "data.classes = 4\n"
           "data.dim = 8\n"
           "data.samples_per_class = 25\n"
           "data.separation = 10\n"
           "model.hidden_dims = 8\n"
           "fl.n_clients = 4\n"
           "fl.sample_ratio = 0.5\n"
           "fl.rounds = 2\n"
           "sgd.local_epochs = 1\n"
           "defense.kind = fedavg\n";
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

long line_count(const std::string& s) {
    long n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

} // namespace

TEST_CASE("run writes the full artifact set") {
    const auto dir = fresh_dir("run");
    const auto cfg = write_config(dir, "exp.cfg", base_config(5));
    const auto out = dir / "out";

    const auto res = run_cmd("run --config " + cfg.string() + " --out " + out.string());
    INFO(res.output);
    REQUIRE(res.exit_code == 0);
    CHECK(res.output.find("final_ca=") != std::string::npos);
    CHECK(res.output.find("final_asr=") != std::string::npos);

    const std::string rounds = slurp(out / "rounds.csv");
    CHECK(rounds.rfind("round,ca,asr,", 0) == 0);
    CHECK(line_count(rounds) == 1 + 2);
    CHECK(line_count(slurp(out / "clients.csv")) == 1 + 2 * 2); // 2 rounds x 2 sampled

    const std::string manifest = slurp(out / "manifest.txt");
    CHECK(manifest.find("config_digest=") != std::string::npos);
    CHECK(manifest.find("config.seed=5") != std::string::npos);
    CHECK(manifest.find("config.defense.kind=fedavg") != std::string::npos);

    const std::string summary = slurp(out / "summary.txt");
    CHECK(summary.find("final_ca=") != std::string::npos);
    CHECK(summary.find("rounds_run=2") != std::string::npos);
}

TEST_CASE("missing required keys name the key and exit 1") {
    const auto dir = fresh_dir("missingkey");
    const auto cfg = write_config(dir, "bad.cfg",
                                  "seed = 1\ndata.kind = synthetic\nfl.n_clients = 4\nfl.rounds = 2\n");
    const auto res = run_cmd("run --config " + cfg.string() + " --out " + (dir / "o").string());
    CHECK(res.exit_code == 1);
    CHECK(res.output.find("missing required config key 'defense.kind'") != std::string::npos);
}

TEST_CASE("malformed values name the key and exit 1") {
    const auto dir = fresh_dir("badvalue");
    const auto cfg = write_config(dir, "bad.cfg", base_config(1) + "fl.patience = soon\n");
    const auto res = run_cmd("run --config " + cfg.string() + " --out " + (dir / "o").string());
    CHECK(res.exit_code == 1);
    CHECK(res.output.find("config error") != std::string::npos);
    CHECK(res.output.find("fl.patience") != std::string::npos);
}

TEST_CASE("an unreadable config exits 1") {
    const auto res = run_cmd("run --config /no/such/file.cfg --out /tmp/agsd_cli_unused");
    CHECK(res.exit_code == 1);
    CHECK(res.output.find("config file not readable") != std::string::npos);
}

TEST_CASE("missing idx data is a runtime failure with exit 2") {
    const auto dir = fresh_dir("idx");
    const auto cfg = write_config(dir, "idx.cfg",
                                  "seed = 1\ndata.kind = idx\n"
                                  "data.idx_images = /no/images.idx\ndata.idx_labels = /no/labels.idx\n"
                                  "fl.n_clients = 4\nfl.rounds = 2\ndefense.kind = fedavg\n");
    const auto res = run_cmd("run --config " + cfg.string() + " --out " + (dir / "o").string());
    CHECK(res.exit_code == 2);
    CHECK(res.output.find("runtime error") != std::string::npos);
}

TEST_CASE("seed precedence: flag over environment over config") {
    const auto dir = fresh_dir("seeds");
    const auto cfg5 = write_config(dir, "s5.cfg", base_config(5));
    const auto cfg9 = write_config(dir, "s9.cfg", base_config(9));

    const auto run_rounds = [&](const std::string& args, const fs::path& out,
                                const std::string& env = "") {
        const auto res = run_cmd(args + " --out " + out.string(), env);
        INFO(res.output);
        REQUIRE(res.exit_code == 0);
        return slurp(out / "rounds.csv");
    };

    const std::string from_cfg5 = run_rounds("run --config " + cfg5.string(), dir / "a");
    const std::string from_cfg9 = run_rounds("run --config " + cfg9.string(), dir / "b");
    REQUIRE(from_cfg5 != from_cfg9);

    SECTION("environment overrides the config seed") {
        const std::string env9 =
            run_rounds("run --config " + cfg5.string(), dir / "c", "AGSD_SEED=9 ");
        CHECK(env9 == from_cfg9);
    }
    SECTION("the --seed flag overrides the environment") {
        const std::string flag5 =
            run_rounds("run --config " + cfg9.string() + " --seed 5", dir / "d", "AGSD_SEED=9 ");
        CHECK(flag5 == from_cfg5);
    }
    SECTION("reruns are byte-identical") {
        const std::string again = run_rounds("run --config " + cfg5.string(), dir / "e");
        CHECK(again == from_cfg5);
    }
}

TEST_CASE("sweep runs one experiment per value") {
    const auto dir = fresh_dir("sweep");
    const auto cfg = write_config(dir, "exp.cfg", base_config(5));
    const auto out = dir / "sw";

    const auto res = run_cmd("sweep --config " + cfg.string() +
                             " --param fl.rounds --values 1,2 --out " + out.string());
    INFO(res.output);
    REQUIRE(res.exit_code == 0);
    CHECK(res.output.find("fl.rounds=1 final_ca=") != std::string::npos);
    CHECK(res.output.find("fl.rounds=2 final_ca=") != std::string::npos);

    CHECK(line_count(slurp(out / "1" / "rounds.csv")) == 2);
    CHECK(line_count(slurp(out / "2" / "rounds.csv")) == 3);

    const std::string summary = slurp(out / "sweep_summary.csv");
    CHECK(summary.rfind("value,final_ca,final_asr\n", 0) == 0);
    CHECK(line_count(summary) == 3);
    CHECK(summary.find("\n1,") != std::string::npos);
    CHECK(summary.find("\n2,") != std::string::npos);
}

TEST_CASE("sweeping an unknown parameter exits 1") {
    const auto dir = fresh_dir("sweepbad");
    const auto cfg = write_config(dir, "exp.cfg", base_config(5));
    const auto res = run_cmd("sweep --config " + cfg.string() +
                             " --param fl.bogus --values 1 --out " + (dir / "o").string());
    CHECK(res.exit_code == 1);
    CHECK(res.output.find("unknown config key 'fl.bogus'") != std::string::npos);
}

TEST_CASE("sweep values are validated") {
    const auto dir = fresh_dir("sweepval");
    const auto cfg = write_config(dir, "exp.cfg", base_config(5));
    const auto res = run_cmd("sweep --config " + cfg.string() +
                             " --param fl.rounds --values 0 --out " + (dir / "o").string());
    CHECK(res.exit_code == 1);
    CHECK(res.output.find("fl.rounds") != std::string::npos);
}

TEST_CASE("demo-bias traces sigma and eta per epoch") {
    const auto dir = fresh_dir("demo");
    const auto cfg = write_config(dir, "demo.cfg",
                                  base_config(5) + "demo.epochs = 2\ndemo.heldout_size = 20\n");

    const auto id_out = dir / "id";
    const auto res = run_cmd("demo-bias --config " + cfg.string() + " --out " + id_out.string());
    INFO(res.output);
    REQUIRE(res.exit_code == 0);
    CHECK(res.output.find("sigma_clean=") != std::string::npos);

    const std::string trace = slurp(id_out / "bias_trace.csv");
    CHECK(trace.rfind("epoch,sigma_clean,sigma_poisoned,eta_clean,eta_poisoned\n", 0) == 0);
    CHECK(line_count(trace) == 1 + 2);

    const auto ood_out = dir / "ood";
    const auto res2 =
        run_cmd("demo-bias --config " + cfg.string() + " --ood --out " + ood_out.string());
    REQUIRE(res2.exit_code == 0);
    CHECK(slurp(ood_out / "bias_trace.csv") != trace);
}

TEST_CASE("command-line misuse exits 1") {
    CHECK(run_cmd("").exit_code == 1);                       // subcommand required
    CHECK(run_cmd("run --config x.cfg").exit_code == 1);     // --out required
    CHECK(run_cmd("run --config x.cfg --out /tmp/x --frobnicate").exit_code == 1);
    CHECK(run_cmd("--help").exit_code == 0);
}
