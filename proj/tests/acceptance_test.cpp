// Acceptance gate: nine end-to-end criteria, one pass/fail line each,
// nonzero exit if any fails. Tolerances are pinned next to each check.
#include <cstdlib>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>

#include "oracle.hpp"
#include "pac/baselines.hpp"
#include "pac/harness.hpp"
#include "pac/pac_engine.hpp"
#include "pac/workload.hpp"
#include "util.hpp"

using namespace pac;
using testutil::TempDir;

namespace {

int g_failures = 0;

void report(int id, bool pass, const std::string& detail) {
    std::printf("criterion %d %s: %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double secs_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
}

struct Rig {
    std::unique_ptr<TempDir> dir;
    std::shared_ptr<AdversarialDisk> disk;
    std::shared_ptr<SealedStore> sealed;
    std::unique_ptr<BlockEngine> engine;
};

// Mutates cfg (metadata path) so the caller can hand the same config to
// PacEngine::recover later.
Rig make_rig(const std::string& kind, EngineConfig& cfg, std::size_t history = 4) {
    Rig r;
    r.dir = std::make_unique<TempDir>("pac-accept");
    cfg.metadata_path = r.dir->file("tree.meta");
    r.disk = std::make_shared<AdversarialDisk>(r.dir->file("disk.img"),
                                               cfg.capacity_blocks, history,
                                               cfg.seed);
    r.sealed = std::make_shared<SealedStore>(r.dir->file("sealed"),
                                             r.dir->file("counter"),
                                             cfg.keys.hash, cfg.seal_delay);
    r.engine = make_engine(kind, r.disk, r.sealed, cfg);
    return r;
}

std::string fmt(double v, int prec = 1) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

// 1. Every replay/corrupt/swap/drop injected mid-workload faults before any
//    byte reaches the caller; nothing slips through. Budget: 2 minutes.
void criterion1() {
    auto t0 = std::chrono::steady_clock::now();
    EngineConfig cfg;
    cfg.capacity_blocks = 4096;
    cfg.keys = testutil::test_keys(0xC1);
    cfg.seed = 0xC1;
    cfg.seal_delay = std::chrono::microseconds(0);  // timing sim only, not detection
    auto rig = make_rig("pac", cfg);

    WorkloadSpec spec;
    spec.read_ratio = 0.01;
    spec.io_size = kBlockSize;
    spec.zipf_theta = 2.5;
    spec.seed = 0xC1;

    const unsigned kInjections = 1000;
    auto rep = run_attack_suite(*rig.engine, *rig.disk, spec, kInjections);
    double el = secs_since(t0);
    bool pass = rep.outcomes.size() == kInjections && rep.all_before_return() &&
                el < 120.0;
    report(1, pass,
           std::to_string(rep.detected_before_return) + "/" +
               std::to_string(rep.outcomes.size()) +
               " detected before return, " +
               std::to_string(rep.detected_at_checkpoint) + " at checkpoint, " +
               std::to_string(rep.undetected) + " undetected, " + fmt(el) + " s");
}

// 2. Crash/restore schedules: benign crashes recover the exact last-fsynced
//    state, disk rollbacks fault, seal rollbacks hit the counter mismatch.
void criterion2() {
    auto t0 = std::chrono::steady_clock::now();
    EngineConfig cfg;
    cfg.capacity_blocks = 128;
    cfg.cache_fraction = 0.25;
    cfg.keys = testutil::test_keys(0xC2);

    auto schedules = random_crash_schedules(147, 0xC2);
    schedules.push_back(parse_crash_schedule("ops 30\nfsync\nops 10\ncrash"));
    schedules.push_back(
        parse_crash_schedule("ops 25\nfsync\nops 12\nfsync\nrollback 1"));
    schedules.push_back(
        parse_crash_schedule("ops 25\nfsync\nops 12\nfsync\nsealrollback 1"));

    TempDir dir("pac-accept-crash");
    auto rep = run_crash_suite(cfg, dir.path.string(), schedules, 0xC2);
    double el = secs_since(t0);
    bool pass = rep.clean() && rep.schedules_run == schedules.size() &&
                rep.rollbacks_detected >= 1 && el < 120.0;
    std::string detail = std::to_string(rep.schedules_run) + " schedules: " +
                         std::to_string(rep.clean_recoveries) + " clean, " +
                         std::to_string(rep.rollbacks_detected) +
                         " rollbacks detected, " +
                         std::to_string(rep.failures.size()) + " failures, " +
                         fmt(el) + " s";
    if (!rep.failures.empty()) detail += "; first: " + rep.failures.front();
    report(2, pass, detail);
}

// 3. Post-drain root matches bottom-up recomputation, bit-exact, across odd
//    capacities and both tree layouts; recovery agrees and a full read sweep
//    authenticates every block.
void criterion3() {
    auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t caps[] = {1, 2, 3, 4, 15, 16, 17, 256, 1024};
    const TreeKind kinds[] = {TreeKind::balanced_binary, TreeKind::splay_dynamic};
    unsigned ok = 0, total = 0;
    std::string first_fail;

    for (std::uint64_t cap : caps) {
        for (TreeKind kind : kinds) {
            ++total;
            EngineConfig cfg;
            cfg.capacity_blocks = cap;
            cfg.keys = testutil::test_keys(3);
            cfg.seed = 0xC300 + cap;
            cfg.manual_background = true;
            cfg.seal_delay = std::chrono::microseconds(0);
            cfg.tree.kind = kind;
            auto rig = make_rig("pac", cfg);
            auto* pe = static_cast<PacEngine*>(rig.engine.get());

            std::mt19937_64 rng(cap * 31 + static_cast<unsigned>(kind));
            std::unordered_map<BlockAddr, std::uint64_t> shadow;
            Bytes buf(kBlockSize);
            std::string err;
            try {
                for (int i = 0; i < 1000; ++i) {
                    BlockAddr addr = rng() % cap;
                    if (rng() % 10 < 7 || shadow.empty()) {
                        std::uint64_t s = rng() | 1;
                        auto blk = testutil::pattern_block(s);
                        rig.engine->write(addr, blk);
                        shadow[addr] = s;
                    } else {
                        rig.engine->read(addr, buf);
                    }
                    if (i % 200 == 199) rig.engine->fsync();
                }
                rig.engine->fsync();

                auto r1 = pe->current_root();
                if (kind == TreeKind::balanced_binary) {
                    std::vector<BlockAuthTag> tags(cap);
                    DiskRecord rec;
                    for (BlockAddr a = 0; a < cap; ++a) {
                        rig.disk->read(a, rec);
                        tags[a] = rec.tag;
                    }
                    if (!(testutil::oracle_root_balanced(tags, cfg.keys.hash) ==
                          r1.hash))
                        err = "root != balanced oracle";
                }

                rig.engine.reset();
                auto recovered = PacEngine::recover(rig.disk, rig.sealed, cfg);
                if (err.empty() && !(recovered->current_root().hash == r1.hash))
                    err = "recovered root differs";
                for (BlockAddr a = 0; err.empty() && a < cap; ++a) {
                    recovered->read(a, buf);
                    auto it = shadow.find(a);
                    Bytes want = it != shadow.end()
                                     ? testutil::pattern_block(it->second)
                                     : Bytes(kBlockSize, 0);
                    if (buf != want) err = "sweep data mismatch";
                }
            } catch (const std::exception& e) {
                err = e.what();
            }
            if (err.empty()) {
                ++ok;
            } else if (first_fail.empty()) {
                first_fail = "cap " + std::to_string(cap) + " kind " +
                             std::to_string(static_cast<int>(kind)) + ": " + err;
            }
        }
    }
    double el = secs_since(t0);
    bool pass = ok == total && el < 60.0;
    std::string detail = std::to_string(ok) + "/" + std::to_string(total) +
                         " capacity+layout configs root-exact and recoverable, " +
                         fmt(el) + " s";
    if (!first_fail.empty()) detail += "; first: " + first_fail;
    report(3, pass, detail);
}

// 4. Deferred verification grows its exposure window with batch size:
//    strictly increasing mean WoV over {1e2, 1e3, 1e4}, >=10x end to end.
void criterion4() {
    WorkloadSpec spec;
    spec.read_ratio = 0.3;
    spec.io_size = kBlockSize;
    spec.zipf_theta = 2.5;
    spec.fsync_period = 1000000;  // checkpoints come only from batch filling
    spec.op_count = 40000;
    spec.seed = 0xC4;

    const std::size_t sizes[] = {100, 1000, 10000};
    double wov[3] = {0, 0, 0};
    for (int i = 0; i < 3; ++i) {
        EngineConfig cfg;
        cfg.capacity_blocks = 65536;
        cfg.keys = testutil::test_keys(4);
        cfg.seed = 0xC4;
        cfg.batch_size = sizes[i];
        auto rig = make_rig("batch", cfg);
        auto r = run_bench(*rig.engine, spec);
        wov[i] = r.engine.mean_wov_ms();
    }
    bool pass = wov[0] > 0 && wov[0] < wov[1] && wov[1] < wov[2] &&
                wov[2] >= 10.0 * wov[0];
    report(4, pass,
           "mean WoV " + fmt(wov[0], 3) + " / " + fmt(wov[1], 3) + " / " +
               fmt(wov[2], 3) + " ms across batch 100/1000/10000 (" +
               fmt(wov[0] > 0 ? wov[2] / wov[0] : 0.0) + "x, need >=10x)");
}

// 5. Async tree maintenance pays off on a write-heavy skewed workload:
//    >=1.5x the synchronous engine, >=70% of tree-less AEAD, and throughput
//    non-decreasing in fsync period (10% noise floor).
void criterion5() {
    WorkloadSpec spec;
    spec.read_ratio = 0.01;
    spec.io_size = kBlockSize;
    spec.zipf_theta = 2.5;
    spec.fsync_period = 10000;
    spec.seed = 0xC5;

    EngineConfig base;
    base.capacity_blocks = 262144;
    base.keys = testutil::test_keys(5);
    base.seed = 0xC5;
    // The sealing sleep models an external trusted device and is calibrated
    // against hardware an order of magnitude slower per op than this rig; at
    // in-memory speeds it would swamp the engine-work ratios this criterion
    // compares. Zeroed here; sealing behavior itself is covered elsewhere.
    base.seal_delay = std::chrono::microseconds(0);

    // Tune the background rate near the workload's own IOPS, probed on the
    // tree-less engine.
    WorkloadSpec probe = spec;
    probe.op_count = 6000;
    double iops;
    {
        auto rig = make_rig("aead", base);
        auto r = run_bench(*rig.engine, probe);
        iops = r.seconds > 0 ? static_cast<double>(r.ops) / r.seconds : 1000.0;
    }
    double bg_rate = std::min(1e7, std::max(1000.0, iops));

    spec.op_count = 30000;
    double thr_aead, thr_sync, thr_pac;
    {
        auto rig = make_rig("aead", base);
        thr_aead = run_bench(*rig.engine, spec).throughput_mbps;
    }
    {
        auto rig = make_rig("sync", base);
        thr_sync = run_bench(*rig.engine, spec).throughput_mbps;
    }
    {
        EngineConfig cfg = base;
        cfg.target_background_rate = bg_rate;
        auto rig = make_rig("pac", cfg);
        thr_pac = run_bench(*rig.engine, spec).throughput_mbps;
    }

    WorkloadSpec sweep = spec;
    sweep.op_count = 20000;
    const std::uint64_t periods[] = {10, 100, 1000, 10000};
    double thr[4];
    for (int i = 0; i < 4; ++i) {
        EngineConfig cfg = base;
        cfg.target_background_rate = bg_rate;
        sweep.fsync_period = periods[i];
        auto rig = make_rig("pac", cfg);
        thr[i] = run_bench(*rig.engine, sweep).throughput_mbps;
    }

    bool vs_sync = thr_pac >= 1.5 * thr_sync;
    bool vs_aead = thr_pac >= 0.70 * thr_aead;
    bool monotone = true;
    for (int i = 0; i + 1 < 4; ++i)
        if (thr[i + 1] < 0.90 * thr[i]) monotone = false;
    bool pass = vs_sync && vs_aead && monotone;
    report(5, pass,
           "pac " + fmt(thr_pac) + " vs sync " + fmt(thr_sync) + " MB/s (" +
               fmt(thr_sync > 0 ? thr_pac / thr_sync : 0.0, 2) +
               "x, need >=1.5x), vs aead " + fmt(thr_aead) + " (" +
               fmt(thr_aead > 0 ? thr_pac / thr_aead : 0.0, 2) +
               "x, need >=0.70x); fsync sweep " + fmt(thr[0]) + "/" +
               fmt(thr[1]) + "/" + fmt(thr[2]) + "/" + fmt(thr[3]) + " MB/s" +
               (monotone ? "" : " NOT non-decreasing"));
}

// 6. With no writes there is nothing to defer: read-only throughput converges
//    to the synchronous engine (within 10%).
void criterion6() {
    WorkloadSpec populate;
    populate.read_ratio = 0.0;
    populate.io_size = kBlockSize;
    populate.zipf_theta = 2.5;
    populate.fsync_period = 1000;
    populate.op_count = 20000;
    populate.seed = 0xC6;

    WorkloadSpec readonly = populate;
    readonly.read_ratio = 1.0;
    readonly.op_count = 30000;

    double thr[2];
    const char* kinds[] = {"sync", "pac"};
    for (int i = 0; i < 2; ++i) {
        EngineConfig cfg;
        cfg.capacity_blocks = 262144;
        cfg.keys = testutil::test_keys(6);
        cfg.seed = 0xC6;
        auto rig = make_rig(kinds[i], cfg);
        run_bench(*rig.engine, populate);
        rig.engine->fsync();  // settle everything so reads hit the tree path
        thr[i] = run_bench(*rig.engine, readonly).throughput_mbps;
    }
    double gap = thr[0] > 0 ? std::fabs(thr[1] - thr[0]) / thr[0] : 1.0;
    bool pass = gap <= 0.10;
    report(6, pass,
           "read-only pac " + fmt(thr[1]) + " vs sync " + fmt(thr[0]) +
               " MB/s (" + fmt(gap * 100.0) + "% apart, need <=10%)");
}

// 7. Verification rides the cache, updates rehash their whole path: per-block
//    verify p50 under half of update p50, cache hit rate >=99%.
void criterion7() {
    EngineConfig cfg;
    cfg.capacity_blocks = 65536;
    cfg.cache_fraction = 0.10;
    cfg.keys = testutil::test_keys(7);
    cfg.seed = 0xC7;
    cfg.target_background_rate = 20000;
    cfg.seal_delay = std::chrono::microseconds(0);
    auto rig = make_rig("pac", cfg);

    WorkloadSpec spec;
    spec.read_ratio = 0.5;
    spec.io_size = kBlockSize;
    spec.zipf_theta = 2.5;
    spec.fsync_period = 1000;
    spec.op_count = 1000000;
    spec.warmup_fraction = 0.30;  // measure the steady state, not cold misses
    spec.seed = 0xC7;

    auto r = run_bench(*rig.engine, spec);
    double v50 = r.engine.verify.p50_us();
    double u50 = r.engine.update.p50_us();
    double hit = r.engine.cache_hit_rate();
    bool pass = v50 > 0 && u50 > 0 && v50 < 0.5 * u50 && hit >= 0.99;
    report(7, pass,
           "verify p50 " + fmt(v50, 2) + " us vs update p50 " + fmt(u50, 2) +
               " us (ratio " + fmt(u50 > 0 ? v50 / u50 : 1.0, 2) +
               ", need <0.5), cache hit " + fmt(hit * 100.0, 2) +
               "% (need >=99%)");
}

// 8. Queue mechanics under fuzz: no duplicate addresses, length bounded by
//    capacity, every fsync returns with an empty queue and a bumped seal
//    counter.
void criterion8() {
    EngineConfig cfg;
    cfg.capacity_blocks = 1024;
    cfg.queue_capacity = 256;
    cfg.keys = testutil::test_keys(8);
    cfg.seed = 0xC8;
    cfg.manual_background = true;
    cfg.seal_delay = std::chrono::microseconds(0);
    cfg.target_background_rate = 100000;
    auto rig = make_rig("pac", cfg);
    auto* pe = static_cast<PacEngine*>(rig.engine.get());

    std::mt19937_64 rng(0xC8);
    std::unordered_map<BlockAddr, std::uint64_t> shadow;
    Bytes buf(kBlockSize);
    auto sim = std::chrono::steady_clock::now();
    auto bg = [&] {
        sim += std::chrono::milliseconds(1);
        pe->background_step(sim);
    };

    std::uint64_t fsyncs = 0, scans = 0;
    std::string err;
    try {
        for (int i = 0; i < 100000 && err.empty(); ++i) {
            // A full queue blocks writers forever without a background
            // thread, so drain ahead of the high-water mark.
            while (pe->queue_size() >= cfg.queue_capacity - 8) bg();

            std::uint64_t roll = rng() % 100;
            if (roll < 62) {
                BlockAddr addr = rng() % cfg.capacity_blocks;
                std::uint64_t s = rng() | 1;
                auto blk = testutil::pattern_block(s);
                rig.engine->write(addr, blk);
                shadow[addr] = s;
            } else if (roll < 87) {
                BlockAddr addr = rng() % cfg.capacity_blocks;
                rig.engine->read(addr, buf);
                auto it = shadow.find(addr);
                Bytes want = it != shadow.end()
                                 ? testutil::pattern_block(it->second)
                                 : Bytes(kBlockSize, 0);
                if (buf != want) err = "read returned wrong bytes";
            } else if (roll < 99) {
                bg();
            } else {
                std::uint64_t before = rig.sealed->counter_value();
                rig.engine->fsync();
                ++fsyncs;
                if (pe->queue_size() != 0) err = "fsync left queue non-empty";
                if (rig.sealed->counter_value() != before + 1)
                    err = "fsync did not bump seal counter";
            }
            if (i % 1000 == 999) {
                pe->check_queue_invariants();
                ++scans;
            }
        }
        pe->check_queue_invariants();
        ++scans;
    } catch (const std::exception& e) {
        err = e.what();
    }

    auto m = rig.engine->metrics();
    if (err.empty() && m.queue_peak > cfg.queue_capacity)
        err = "queue peak exceeded capacity";
    bool pass = err.empty();
    std::string detail = "100000 ops, " + std::to_string(fsyncs) +
                         " fsyncs sealed+drained, " + std::to_string(scans) +
                         " invariant scans, peak queue " +
                         std::to_string(m.queue_peak) + "/" +
                         std::to_string(cfg.queue_capacity);
    if (!err.empty()) detail += "; " + err;
    report(8, pass, detail);
}

// 9. Self-reported queue accounting: 100 B per pending request, split
//    72-B node + 16-B MAC + 12-B IV.
void criterion9() {
    EngineConfig cfg;
    cfg.capacity_blocks = 64;
    cfg.queue_capacity = 512;
    cfg.keys = testutil::test_keys(9);
    cfg.manual_background = true;
    auto rig = make_rig("pac", cfg);
    auto mr = rig.engine->memory_report();
    bool pass = mr.request_bytes == 100 && mr.node_bytes == 72 &&
                mr.mac_bytes == 16 && mr.iv_bytes == 12 &&
                mr.queue_bytes == cfg.queue_capacity * 100;
    report(9, pass,
           "request " + std::to_string(mr.request_bytes) + " B = node " +
               std::to_string(mr.node_bytes) + " + mac " +
               std::to_string(mr.mac_bytes) + " + iv " +
               std::to_string(mr.iv_bytes) + ", queue bytes " +
               std::to_string(mr.queue_bytes));
}

}  // namespace

int main(int argc, char** argv) {
    // Device images live on tmpfs when possible: first-touch extent
    // allocation on a journaling filesystem turns the first flush of a fresh
    // sparse image into hundreds of milliseconds of unrelated I/O, which
    // swamps every throughput comparison below.
    if (std::filesystem::is_directory("/dev/shm")) setenv("TMPDIR", "/dev/shm", 1);

    void (*criteria[])() = {criterion1, criterion2, criterion3,
                            criterion4, criterion5, criterion6,
                            criterion7, criterion8, criterion9};
    auto t0 = std::chrono::steady_clock::now();
    int run = 0;
    if (argc > 1) {
        // Debug aid: run only the listed criteria (still exits nonzero on
        // failure, but a partial run is not the acceptance gate).
        for (int i = 1; i < argc; ++i) {
            int id = std::atoi(argv[i]);
            if (id >= 1 && id <= 9) {
                criteria[id - 1]();
                ++run;
            }
        }
    } else {
        for (auto* fn : criteria) fn();
        run = 9;
    }
    std::printf("%d/%d criteria passed in %.1f s\n", run - g_failures, run,
                secs_since(t0));
    return g_failures == 0 ? 0 : 1;
}
