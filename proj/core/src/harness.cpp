#include "pac/harness.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "pac/pac_engine.hpp"

namespace pac {

namespace {

using Clock = std::chrono::steady_clock;

std::vector<std::uint8_t> fill_pattern(std::uint64_t seed) {
    std::vector<std::uint8_t> b(kBlockSize);
    std::mt19937_64 rng(seed);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    return b;
}

/// Shared engine driver for the attack suite: issues single-block ops and
/// checks every read against the shadow plaintext.
struct ShadowDriver {
    BlockEngine& engine;
    ZipfSampler zipf;
    std::mt19937_64 rng;
    double read_ratio;
    std::uint64_t fsync_every;

    std::unordered_map<BlockAddr, std::uint64_t> shadow;
    std::vector<BlockAddr> written;
    std::unordered_set<BlockAddr> written_set;
    std::uint64_t writes_since_fsync = 0;
    bool wrong_data = false;

    ShadowDriver(BlockEngine& e, const WorkloadSpec& spec)
        : engine(e),
          zipf(spec.zipf_theta, e.capacity_blocks(), spec.seed),
          rng(spec.seed ^ 0xA77AC4),
          read_ratio(spec.read_ratio),
          fsync_every(std::min<std::uint64_t>(spec.fsync_period, 64)) {}

    void do_write(BlockAddr addr) {
        std::uint64_t seed = rng() | 1;
        engine.write(addr, fill_pattern(seed));
        shadow[addr] = seed;
        if (written_set.insert(addr).second) written.push_back(addr);
        if (++writes_since_fsync >= fsync_every) {
            writes_since_fsync = 0;
            engine.fsync();
        }
    }

    /// Returns false when the bytes that came back are not the shadow bytes.
    bool do_read(BlockAddr addr) {
        std::vector<std::uint8_t> out(kBlockSize);
        engine.read(addr, out);
        auto it = shadow.find(addr);
        bool ok = it != shadow.end()
                      ? out == fill_pattern(it->second)
                      : out == std::vector<std::uint8_t>(kBlockSize, 0);
        if (!ok) wrong_data = true;
        return ok;
    }

    void random_op() {
        bool is_read = std::uniform_real_distribution<double>(0, 1)(rng) < read_ratio;
        if (is_read && !written.empty()) {
            do_read(written[rng() % written.size()]);
        } else {
            do_write(zipf.sample(rng));
        }
    }

    BlockAddr pick_written() {
        return written[rng() % written.size()];
    }
};

AttackOutcome run_one_injection(ShadowDriver& drv, AdversarialDisk& disk,
                                const AttackAction& action) {
    AttackOutcome out;
    out.action = action;
    drv.wrong_data = false;

    disk.arm(action);
    auto t0 = Clock::now();
    std::uint64_t ops = 0;
    bool fault = false;

    auto attempt = [&](auto&& fn) {
        if (fault) return;
        ++ops;
        try {
            fn();
        } catch (const Fault&) {
            fault = true;
        }
    };

    // Probe: exercise the attacked address directly so single-shot actions
    // fire deterministically.
    if (action.kind == AttackAction::Kind::drop_write) {
        attempt([&] { drv.do_write(action.a); });
        attempt([&] { drv.do_read(action.a); });
    } else if (action.kind == AttackAction::Kind::swap) {
        attempt([&] { drv.do_read(action.a); });
        attempt([&] { drv.do_read(action.b); });
    } else if (action.kind == AttackAction::Kind::rollback_all) {
        attempt([&] { drv.do_read(drv.pick_written()); });
    } else {
        attempt([&] { drv.do_read(action.a); });
    }

    // Deferred engines surface the fault at their next checkpoint; an fsync
    // forces one. Honest-but-lazy detection still counts, later. Disarm
    // before forcing it: checkpoints judge already-recorded tags, and an
    // armed infinite background delay would park the drain forever.
    for (int i = 0; i < 4 && !fault; ++i) attempt([&] { drv.random_op(); });
    disk.disarm_all();
    if (!fault) attempt([&] { drv.engine.fsync(); });

    auto ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();

    // Repair: a dropped write leaves the engine distrusting that address
    // (correctly), which would misattribute faults to later injections.
    // Rewriting through the engine restores tree/disk agreement.
    auto sponge = [&](auto&& fn) {
        try {
            fn();
        } catch (const Fault&) {
        }
    };
    sponge([&] { drv.do_write(action.a); });
    if (action.kind == AttackAction::Kind::swap) sponge([&] { drv.do_write(action.b); });
    sponge([&] { drv.engine.fsync(); });
    sponge([&] { drv.engine.fsync(); });

    if (fault && !drv.wrong_data) {
        out.result = AttackOutcome::Result::detected_before_return;
    } else if (fault) {
        out.result = AttackOutcome::Result::detected_at_checkpoint;
    } else {
        out.result = AttackOutcome::Result::undetected;
    }
    if (fault) {
        out.time_to_detection_ms = ms;
        out.ops_until_detection = ops;
    }
    return out;
}

void tally(AttackReport& rep, AttackOutcome&& o) {
    switch (o.result) {
        case AttackOutcome::Result::detected_before_return:
            ++rep.detected_before_return;
            break;
        case AttackOutcome::Result::detected_at_checkpoint:
            ++rep.detected_at_checkpoint;
            break;
        case AttackOutcome::Result::undetected:
            ++rep.undetected;
            break;
    }
    rep.outcomes.push_back(std::move(o));
}

}  // namespace

AttackReport run_attack_suite(BlockEngine& engine, AdversarialDisk& disk,
                              const WorkloadSpec& spec, unsigned injections) {
    if (disk.history_depth() < 2)
        throw std::invalid_argument("attack suite needs a version log (history >= 2)");
    AttackReport rep;
    ShadowDriver drv(engine, spec);

    // Seed the device with real content so replays have distinct versions.
    for (int i = 0; i < 64; ++i) drv.do_write(drv.zipf.sample(drv.rng));
    engine.fsync();

    for (unsigned i = 0; i < injections; ++i) {
        for (int k = 0; k < 3; ++k) drv.random_op();

        AttackAction a;
        BlockAddr target = drv.pick_written();
        switch (drv.rng() % 4) {
            case 0:
                a.kind = AttackAction::Kind::replay;
                a.a = target;
                a.steps_back = 1;
                break;
            case 1:
                a.kind = AttackAction::Kind::corrupt;
                a.a = target;
                break;
            case 2: {
                a.kind = AttackAction::Kind::swap;
                a.a = target;
                BlockAddr other = drv.pick_written();
                if (other == target) other = (target + 1) % engine.capacity_blocks();
                a.b = other;
                break;
            }
            case 3:
                a.kind = AttackAction::Kind::drop_write;
                a.a = target;
                break;
        }
        tally(rep, run_one_injection(drv, disk, a));
    }
    return rep;
}

AttackReport run_attack_script(BlockEngine& engine, AdversarialDisk& disk,
                               const WorkloadSpec& spec,
                               std::span<const AttackAction> script) {
    AttackReport rep;
    ShadowDriver drv(engine, spec);
    for (int i = 0; i < 64; ++i) drv.do_write(drv.zipf.sample(drv.rng));
    // A replay against a never-rewritten address is a physical no-op (the
    // version log holds only the current record), so give every scripted
    // target a real version history first.
    for (const auto& action : script) {
        if (action.kind == AttackAction::Kind::delay_background) continue;
        drv.do_write(action.a);
        if (action.kind == AttackAction::Kind::swap) drv.do_write(action.b);
    }
    engine.fsync();
    for (const auto& action : script)
        tally(rep, run_one_injection(drv, disk, action));
    return rep;
}

std::string AttackReport::summary() const {
    std::ostringstream os;
    os << outcomes.size() << " injections: " << detected_before_return
       << " detected before return, " << detected_at_checkpoint
       << " at checkpoint, " << undetected << " undetected";
    return os.str();
}

std::vector<CrashStep> parse_crash_schedule(const std::string& text) {
    std::vector<CrashStep> steps;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string word;
        if (!(ls >> word) || word[0] == '#') continue;
        CrashStep s;
        if (word == "ops") {
            s.kind = CrashStep::Kind::ops;
            if (!(ls >> s.n)) throw std::invalid_argument("ops needs a count");
        } else if (word == "fsync") {
            s.kind = CrashStep::Kind::fsync;
        } else if (word == "crash") {
            s.kind = CrashStep::Kind::crash;
        } else if (word == "rollback") {
            s.kind = CrashStep::Kind::rollback;
            s.n = 1;
            ls >> s.n;
        } else if (word == "sealrollback") {
            s.kind = CrashStep::Kind::seal_rollback;
            s.n = 1;
            ls >> s.n;
        } else {
            throw std::invalid_argument("unknown schedule step: " + word);
        }
        steps.push_back(s);
    }
    return steps;
}

std::vector<std::vector<CrashStep>> random_crash_schedules(unsigned count,
                                                           std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::vector<CrashStep>> out;
    out.reserve(count);
    for (unsigned i = 0; i < count; ++i) {
        std::vector<CrashStep> s;
        unsigned segments = 1 + rng() % 4;
        for (unsigned k = 0; k < segments; ++k) {
            s.push_back({CrashStep::Kind::ops, 5 + rng() % 50});
            s.push_back({CrashStep::Kind::fsync, 0});
            // Sometimes crash benignly mid-schedule, with pending writes.
            if (rng() % 3 == 0) {
                if (rng() % 2) s.push_back({CrashStep::Kind::ops, 1 + rng() % 20});
                s.push_back({CrashStep::Kind::crash, 0});
            }
        }
        switch (rng() % 3) {
            case 0:
                break;  // ends benign
            case 1:
                s.push_back({CrashStep::Kind::rollback, 1});
                break;
            case 2:
                s.push_back({CrashStep::Kind::seal_rollback, 1});
                break;
        }
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("cannot write " + path);
}

struct Epoch {
    std::uint64_t disk_token;
    std::vector<std::uint8_t> metadata;
    std::vector<std::uint8_t> sealed_record;
    std::unordered_map<BlockAddr, std::uint64_t> shadow;
};

/// One schedule against one fresh rig. Returns an error string, empty on a
/// clean run; `benign` and `rollback` report how the schedule ended.
std::string run_one_schedule(const EngineConfig& base_cfg,
                             const std::string& dir,
                             const std::vector<CrashStep>& schedule,
                             std::uint64_t seed, bool& ended_with_rollback) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (auto& name : {"disk.img", "sealed", "counter", "tree.meta"})
        fs::remove(fs::path(dir) / name);

    EngineConfig cfg = base_cfg;
    cfg.manual_background = true;
    cfg.seal_delay = std::chrono::microseconds(0);
    cfg.metadata_path = (fs::path(dir) / "tree.meta").string();
    cfg.seed = seed;

    auto disk = std::make_shared<AdversarialDisk>((fs::path(dir) / "disk.img").string(),
                                                  cfg.capacity_blocks, 4, seed);
    auto sealed = std::make_shared<SealedStore>((fs::path(dir) / "sealed").string(),
                                                (fs::path(dir) / "counter").string(),
                                                cfg.keys.hash, cfg.seal_delay);

    std::mt19937_64 rng(seed ^ 0xC4A54);
    std::unordered_map<BlockAddr, std::uint64_t> live;
    std::vector<Epoch> epochs;
    ended_with_rollback = false;

    auto engine = std::make_unique<PacEngine>(disk, sealed, cfg);
    auto snapshot_epoch = [&] {
        epochs.push_back({disk->snapshot(),
                          read_file(cfg.metadata_path),
                          read_file((fs::path(dir) / "sealed").string()),
                          live});
    };
    snapshot_epoch();  // construction seals the initial root

    auto verify_all = [&](const std::unordered_map<BlockAddr, std::uint64_t>& want)
        -> std::string {
        std::vector<std::uint8_t> out(kBlockSize);
        for (BlockAddr a = 0; a < cfg.capacity_blocks; ++a) {
            engine->read(a, out);
            auto it = want.find(a);
            auto expect = it != want.end() ? fill_pattern(it->second)
                                           : std::vector<std::uint8_t>(kBlockSize, 0);
            if (out != expect) return "block " + std::to_string(a) + " diverged";
        }
        return "";
    };

    for (std::size_t si = 0; si < schedule.size(); ++si) {
        const CrashStep& step = schedule[si];
        switch (step.kind) {
            case CrashStep::Kind::ops: {
                std::uint64_t n =
                    std::min<std::uint64_t>(step.n, cfg.queue_capacity - 1);
                // First op of a segment always writes, so consecutive sealed
                // epochs never carry identical trees.
                for (std::uint64_t i = 0; i < n; ++i) {
                    BlockAddr addr = rng() % cfg.capacity_blocks;
                    if (i != 0 && rng() % 5 == 0) {
                        std::vector<std::uint8_t> out(kBlockSize);
                        engine->read(addr, out);
                        auto it = live.find(addr);
                        auto expect = it != live.end()
                                          ? fill_pattern(it->second)
                                          : std::vector<std::uint8_t>(kBlockSize, 0);
                        if (out != expect)
                            return "live read diverged at block " +
                                   std::to_string(addr);
                    } else {
                        std::uint64_t s = rng() | 1;
                        engine->write(addr, fill_pattern(s));
                        live[addr] = s;
                    }
                }
                break;
            }
            case CrashStep::Kind::fsync:
                engine->fsync();
                snapshot_epoch();
                break;
            case CrashStep::Kind::crash: {
                engine.reset();  // un-drained queue dies with the process
                disk->restore(epochs.back().disk_token);
                live = epochs.back().shadow;
                try {
                    engine = PacEngine::recover(disk, sealed, cfg);
                } catch (const std::exception& e) {
                    return std::string("benign crash failed to recover: ") + e.what();
                }
                if (auto err = verify_all(live); !err.empty())
                    return "post-crash state mismatch: " + err;
                break;
            }
            case CrashStep::Kind::rollback:
            case CrashStep::Kind::seal_rollback: {
                if (epochs.size() < step.n + 1)
                    return "schedule rolls back further than sealed history";
                engine.reset();
                const Epoch& target = epochs[epochs.size() - 1 - step.n];
                disk->restore(target.disk_token);
                write_file(cfg.metadata_path, target.metadata);
                if (step.kind == CrashStep::Kind::seal_rollback)
                    write_file((fs::path(dir) / "sealed").string(),
                               target.sealed_record);
                try {
                    auto e = PacEngine::recover(disk, sealed, cfg);
                    return "epoch rollback went undetected";
                } catch (const RollbackFault&) {
                    if (step.kind != CrashStep::Kind::seal_rollback)
                        return "data rollback misreported as seal rollback";
                } catch (const IntegrityFault&) {
                    if (step.kind != CrashStep::Kind::rollback)
                        return "seal rollback misreported as data rollback";
                } catch (const std::exception& e) {
                    return std::string("unexpected fault class: ") + e.what();
                }
                ended_with_rollback = true;
                if (si + 1 != schedule.size())
                    return "rollback step must terminate its schedule";
                break;
            }
        }
        if (!engine) break;
    }

    for (auto& ep : epochs) disk->drop_snapshot(ep.disk_token);
    return "";
}

}  // namespace

CrashReport run_crash_suite(const EngineConfig& cfg, const std::string& state_dir,
                            std::span<const std::vector<CrashStep>> schedules,
                            std::uint64_t seed) {
    CrashReport rep;
    std::uint64_t i = 0;
    for (const auto& schedule : schedules) {
        bool rolled_back = false;
        auto err = run_one_schedule(cfg, state_dir, schedule, seed + 1000 * i, rolled_back);
        ++rep.schedules_run;
        if (!err.empty()) {
            rep.failures.push_back("schedule " + std::to_string(i) + ": " + err);
        } else if (rolled_back) {
            ++rep.rollbacks_detected;
        } else {
            ++rep.clean_recoveries;
        }
        ++i;
    }
    return rep;
}

std::string CrashReport::summary() const {
    std::ostringstream os;
    os << schedules_run << " schedules: " << clean_recoveries
       << " clean recoveries, " << rollbacks_detected << " rollbacks detected, "
       << failures.size() << " failures";
    return os.str();
}

}  // namespace pac
