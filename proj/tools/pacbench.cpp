// Workbench for the storage engines: benchmark runs, scripted attacks, crash
// schedules, and key generation.
#include <unistd.h>

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "pac/baselines.hpp"
#include "pac/harness.hpp"
#include "pac/pac_engine.hpp"
#include "pac/workload.hpp"

namespace fs = std::filesystem;
using namespace pac;

namespace {

struct Options {
    std::string engine = "pac";
    EngineConfig cfg;
    WorkloadSpec spec;
    std::string key_file;
    std::string state_dir;
    std::string tree = "splay";
    std::size_t history_depth = 4;
    double seal_delay_ms = 5.0;
    std::string csv;
};

void add_engine_flags(CLI::App* app, Options& o) {
    app->add_option("--engine", o.engine, "plain | aead | sync | batch | pac")
        ->check(CLI::IsMember({"plain", "aead", "sync", "batch", "pac"}));
    app->add_option("--capacity-blocks", o.cfg.capacity_blocks, "device size in 4KiB blocks");
    app->add_option("--cache-frac", o.cfg.cache_fraction, "node cache size / tree size");
    app->add_option("--queue-cap", o.cfg.queue_capacity, "pending update slots");
    app->add_option("--low-watermark", o.cfg.low_watermark, "drain exit fraction");
    app->add_option("--bg-rate", o.cfg.target_background_rate, "background updates/s");
    app->add_option("--seal-delay-ms", o.seal_delay_ms, "simulated seal latency");
    app->add_option("--batch-size", o.cfg.batch_size, "batch engine checkpoint threshold");
    app->add_option("--key-file", o.key_file, "48-byte key file (see keygen)");
    app->add_option("--state-dir", o.state_dir, "where device and metadata files live");
    app->add_option("--tree", o.tree, "splay | balanced")
        ->check(CLI::IsMember({"splay", "balanced"}));
    app->add_option("--splay-p", o.cfg.tree.splay_probability, "per-access splay probability");
    app->add_option("--splay-window", o.cfg.tree.splay_window, "restrict splays to the path's top half");
    app->add_option("--history-depth", o.history_depth, "device version log depth");
    app->add_option("--seed", o.spec.seed, "workload and engine seed");
}

void add_workload_flags(CLI::App* app, Options& o) {
    app->add_option("--read-ratio", o.spec.read_ratio, "fraction of read ops");
    app->add_option("--io-size", o.spec.io_size, "bytes per op");
    app->add_option("--zipf", o.spec.zipf_theta, "zipf skew theta");
    app->add_option("--fsync-period", o.spec.fsync_period, "write ops between fsyncs");
    app->add_option("--threads", o.spec.threads, "submitting threads");
    app->add_option("--iodepth", o.spec.io_depth, "reported queue depth");
    app->add_option("--ops", o.spec.op_count, "total ops incl. warm-up");
}

struct Rig {
    std::shared_ptr<AdversarialDisk> disk;
    std::shared_ptr<SealedStore> sealed;
    std::unique_ptr<BlockEngine> engine;
};

Rig build_rig(Options& o) {
    if (o.state_dir.empty())
        o.state_dir =
            (fs::temp_directory_path() / ("pacbench-" + std::to_string(getpid())))
                .string();
    fs::create_directories(o.state_dir);
    for (auto name : {"disk.img", "sealed", "counter", "tree.meta"})
        fs::remove(fs::path(o.state_dir) / name);

    o.cfg.seed = o.spec.seed;
    o.cfg.tree.kind =
        o.tree == "balanced" ? TreeKind::balanced_binary : TreeKind::splay_dynamic;
    o.cfg.seal_delay =
        std::chrono::microseconds(static_cast<long>(o.seal_delay_ms * 1000.0));
    o.cfg.metadata_path = (fs::path(o.state_dir) / "tree.meta").string();
    if (!o.key_file.empty()) {
        o.cfg.keys = load_keys(o.key_file);
    } else {
        std::mt19937_64 rng(o.cfg.seed ^ 0x6B657973);
        o.cfg.keys = random_keys(rng);
    }

    Rig r;
    r.disk = std::make_shared<AdversarialDisk>(
        (fs::path(o.state_dir) / "disk.img").string(), o.cfg.capacity_blocks,
        o.history_depth, o.cfg.seed);
    r.sealed = std::make_shared<SealedStore>(
        (fs::path(o.state_dir) / "sealed").string(),
        (fs::path(o.state_dir) / "counter").string(), o.cfg.keys.hash,
        o.cfg.seal_delay);
    r.engine = make_engine(o.engine, r.disk, r.sealed, o.cfg);
    return r;
}

void append_csv(const Options& o, const BenchResult& r) {
    bool fresh = !fs::exists(o.csv) || fs::file_size(o.csv) == 0;
    std::ofstream out(o.csv, std::ios::app);
    if (!out) throw std::runtime_error("cannot open csv file " + o.csv);
    if (fresh)
        out << "engine,capacity_blocks,cache_frac,queue_cap,bg_rate,read_ratio,"
               "io_size,zipf,fsync_period,threads,iodepth,ops,seed,"
               "throughput_MBps,p50_us,p999_us,cache_hit_rate,mean_wov_ms,"
               "overrides,stalls\n";
    const LatencyStats& lat =
        r.write_ops > 0 ? r.write_latency : r.read_latency;
    out << o.engine << ',' << o.cfg.capacity_blocks << ',' << o.cfg.cache_fraction
        << ',' << o.cfg.queue_capacity << ',' << o.cfg.target_background_rate << ','
        << o.spec.read_ratio << ',' << o.spec.io_size << ',' << o.spec.zipf_theta
        << ',' << o.spec.fsync_period << ',' << o.spec.threads << ','
        << o.spec.io_depth << ',' << o.spec.op_count << ',' << o.spec.seed << ','
        << r.throughput_mbps << ',' << lat.p50_us() << ',' << lat.p999_us() << ','
        << r.engine.cache_hit_rate() << ',' << r.engine.mean_wov_ms() << ','
        << r.engine.overrides << ',' << r.engine.stalls << '\n';
}

int run_bench_cmd(Options& o) {
    auto rig = build_rig(o);
    auto result = run_bench(*rig.engine, o.spec);
    std::cout << result.summary(o.engine) << "\n";
    if (!o.csv.empty()) append_csv(o, result);
    return 0;
}

int run_attack_cmd(Options& o, const std::string& script_path, unsigned injections) {
    auto rig = build_rig(o);
    AttackReport rep;
    if (!script_path.empty()) {
        std::ifstream in(script_path);
        if (!in) throw std::runtime_error("cannot read script " + script_path);
        std::vector<AttackAction> script;
        std::string line;
        while (std::getline(in, line)) {
            auto first = line.find_first_not_of(" \t");
            if (first == std::string::npos || line[first] == '#') continue;
            script.push_back(AttackAction::parse(line));
        }
        rep = run_attack_script(*rig.engine, *rig.disk, o.spec, script);
    } else {
        rep = run_attack_suite(*rig.engine, *rig.disk, o.spec, injections);
    }
    for (const auto& out : rep.outcomes) {
        const char* cls =
            out.result == AttackOutcome::Result::detected_before_return
                ? "detected before return"
            : out.result == AttackOutcome::Result::detected_at_checkpoint
                ? "detected at checkpoint"
                : "UNDETECTED";
        std::cout << "  " << out.action.describe() << ": " << cls;
        if (out.result != AttackOutcome::Result::undetected)
            std::cout << " after " << out.ops_until_detection << " ops, "
                      << out.time_to_detection_ms << " ms";
        std::cout << "\n";
    }
    std::cout << rep.summary() << "\n";
    return 0;
}

int run_crash_cmd(Options& o, const std::string& schedule_path, unsigned random_n) {
    if (o.state_dir.empty())
        o.state_dir =
            (fs::temp_directory_path() / ("pacbench-" + std::to_string(getpid())))
                .string();
    o.cfg.seed = o.spec.seed;
    o.cfg.tree.kind =
        o.tree == "balanced" ? TreeKind::balanced_binary : TreeKind::splay_dynamic;
    if (!o.key_file.empty()) {
        o.cfg.keys = load_keys(o.key_file);
    } else {
        std::mt19937_64 rng(o.cfg.seed ^ 0x6B657973);
        o.cfg.keys = random_keys(rng);
    }

    std::vector<std::vector<CrashStep>> schedules;
    if (!schedule_path.empty()) {
        std::ifstream in(schedule_path);
        if (!in) throw std::runtime_error("cannot read schedule " + schedule_path);
        std::stringstream ss;
        ss << in.rdbuf();
        schedules.push_back(parse_crash_schedule(ss.str()));
    } else {
        schedules = random_crash_schedules(random_n, o.spec.seed);
    }
    auto rep = run_crash_suite(o.cfg, o.state_dir, schedules, o.spec.seed);
    std::cout << rep.summary() << "\n";
    for (const auto& f : rep.failures) std::cout << "  " << f << "\n";
    return rep.clean() ? 0 : 1;
}

int run_keygen_cmd(const std::string& out_path) {
    std::random_device rd;
    std::mt19937_64 rng((static_cast<std::uint64_t>(rd()) << 32) ^ rd());
    save_keys(out_path, random_keys(rng));
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"authenticated block storage workbench"};
    app.require_subcommand(1);
    Options o;

    auto* bench = app.add_subcommand("bench", "run a workload and report throughput/latency");
    add_engine_flags(bench, o);
    add_workload_flags(bench, o);
    bench->add_option("--csv", o.csv, "append one result row to this file");

    std::string script_path;
    unsigned injections = 100;
    auto* attack = app.add_subcommand("attack", "inject adversarial device behavior");
    add_engine_flags(attack, o);
    attack->add_option("--script", script_path, "file of attack actions, one per line");
    attack->add_option("--injections", injections, "randomized injections when no script");

    std::string schedule_path;
    unsigned random_n = 20;
    auto* crash = app.add_subcommand("crash", "crash/rollback recovery schedules");
    add_engine_flags(crash, o);
    crash->add_option("--schedule", schedule_path, "schedule file (ops/fsync/crash/rollback)");
    crash->add_option("--random", random_n, "number of generated schedules");

    std::string key_out;
    auto* keygen = app.add_subcommand("keygen", "generate a key file");
    keygen->add_option("--out", key_out, "output path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*bench) return run_bench_cmd(o);
        if (*attack) return run_attack_cmd(o, script_path, injections);
        if (*crash) return run_crash_cmd(o, schedule_path, random_n);
        if (*keygen) return run_keygen_cmd(key_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
