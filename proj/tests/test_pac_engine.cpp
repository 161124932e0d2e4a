#include <doctest.h>

#include <map>
#include <thread>

#include "pac/pac_engine.hpp"
#include "util.hpp"

using namespace pac;
using namespace std::chrono_literals;

namespace {

struct Rig {
    testutil::TempDir td;
    std::shared_ptr<AdversarialDisk> disk;
    std::shared_ptr<SealedStore> sealed;
    EngineConfig cfg;

    explicit Rig(std::uint64_t capacity, std::size_t history_depth = 4,
                 bool manual = true) {
        cfg.capacity_blocks = capacity;
        cfg.queue_capacity = 64;
        cfg.cache_fraction = 0.25;
        cfg.seal_delay = 0us;
        cfg.keys = testutil::test_keys();
        cfg.manual_background = manual;
        cfg.metadata_path = td.file("tree.meta");
        disk = std::make_shared<AdversarialDisk>(td.file("disk.img"), capacity,
                                                 history_depth, 99);
        sealed = std::make_shared<SealedStore>(td.file("sealed"), td.file("counter"),
                                               cfg.keys.hash, cfg.seal_delay);
    }

    std::unique_ptr<PacEngine> engine() {
        return std::make_unique<PacEngine>(disk, sealed, cfg);
    }
};

void write_one(PacEngine& e, BlockAddr addr, std::uint64_t seed) {
    auto data = testutil::pattern_block(seed);
    e.write(addr, data);
}

std::vector<std::uint8_t> read_one(PacEngine& e, BlockAddr addr) {
    std::vector<std::uint8_t> out(kBlockSize);
    e.read(addr, out);
    return out;
}

auto now() { return std::chrono::steady_clock::now(); }

// Drives a manual-background engine until its queue empties. The first step
// only primes the token clock; later steps arrive after simulated hours.
void settle(PacEngine& e) {
    auto t = now();
    e.background_step(t);
    for (int i = 0; i < 1000 && e.queue_size() > 0; ++i) {
        t += std::chrono::hours(1);
        e.background_step(t);
    }
    REQUIRE(e.queue_size() == 0);
}

}  // namespace

TEST_CASE("fresh engine seals its initial root") {
    Rig rig(16);
    auto e = rig.engine();
    CHECK(e->sealed_epoch() == 1);
    CHECK(e->queue_size() == 0);

    auto sealed = rig.sealed->load_latest();
    CHECK(sealed.counter == 1);
    CHECK(sealed.root == e->current_root().hash);

    // Untouched blocks read back as zeros through full verification.
    auto got = read_one(*e, 5);
    CHECK(got == std::vector<std::uint8_t>(kBlockSize, 0));
}

TEST_CASE("pending reads come from queue consistency with zero tree work") {
    Rig rig(64);
    auto e = rig.engine();
    e->reset_metrics();

    write_one(*e, 9, 1234);
    CHECK(e->queue_size() == 1);
    auto m = e->metrics();
    CHECK(m.node_hashes == 0);  // write touched no tree state

    auto got = read_one(*e, 9);
    CHECK(got == testutil::pattern_block(1234));
    m = e->metrics();
    CHECK(m.node_hashes == 0);  // pending read: tag compare only
    CHECK(m.leaf_digests == 0);
    CHECK(m.verify.count == 0);  // no tree verification sampled

    settle(*e);

    got = read_one(*e, 9);
    CHECK(got == testutil::pattern_block(1234));
    m = e->metrics();
    CHECK(m.leaf_digests > 0);  // settled read verifies against the tree
    CHECK(m.verify.count == 1);
}

TEST_CASE("stale record behind a pending update is caught by tag compare") {
    Rig rig(16);
    auto e = rig.engine();

    write_one(*e, 3, 1);
    e->fsync();
    write_one(*e, 3, 2);  // pending in queue, v2 on disk

    AttackAction a;
    a.kind = AttackAction::Kind::replay;
    a.a = 3;
    a.steps_back = 1;
    rig.disk->arm(a);

    CHECK_THROWS_AS(read_one(*e, 3), IntegrityFault);
}

TEST_CASE("replay of a settled block is caught by tree verification") {
    Rig rig(16);
    auto e = rig.engine();

    write_one(*e, 7, 1);
    write_one(*e, 7, 2);
    e->fsync();

    AttackAction a;
    a.kind = AttackAction::Kind::replay;
    a.a = 7;
    a.steps_back = 1;
    rig.disk->arm(a);

    CHECK_THROWS_AS(read_one(*e, 7), IntegrityFault);
    rig.disk->disarm_all();
    CHECK(read_one(*e, 7) == testutil::pattern_block(2));
}

TEST_CASE("token bucket: 1000 per second releases ten in a 10 ms window") {
    Rig rig(256);
    rig.cfg.queue_capacity = 128;
    rig.cfg.target_background_rate = 1000.0;
    auto e = rig.engine();

    for (BlockAddr addr = 0; addr < 100; ++addr) write_one(*e, addr, addr);
    CHECK(e->queue_size() == 100);

    auto t0 = now();
    CHECK(e->background_step(t0) == 0);  // bucket starts empty
    CHECK(e->background_step(t0 + 10ms) == 10);
    CHECK(e->queue_size() == 90);

    // The bucket caps: a long idle gap does not build unbounded burst.
    CHECK(e->background_step(t0 + 100s) == 10);
    CHECK(e->queue_size() == 80);
}

TEST_CASE("a full queue drains to the low watermark regardless of rate") {
    Rig rig(64);
    rig.cfg.queue_capacity = 16;
    rig.cfg.low_watermark = 0.75;
    rig.cfg.target_background_rate = 0.25;  // far below arrival rate
    auto e = rig.engine();

    for (BlockAddr addr = 0; addr < 16; ++addr) write_one(*e, addr, addr);
    CHECK(e->queue_size() == 16);
    CHECK(e->queue_draining());

    unsigned applied = e->background_step(now() + 1ms);
    CHECK(applied == 4);  // 16 -> 12, the watermark, then the bucket is dry
    CHECK(e->queue_size() == 12);
    CHECK_FALSE(e->queue_draining());
}

TEST_CASE("override coalescing keeps one entry per hot address") {
    Rig rig(64);
    auto e = rig.engine();
    e->reset_metrics();

    for (int i = 0; i < 1000; ++i) write_one(*e, i % 8, i);
    CHECK(e->queue_size() == 8);
    e->check_queue_invariants();

    auto m = e->metrics();
    CHECK(m.overrides == 1000 - 8);
    CHECK(m.queue_peak == 8);

    // Only the final contents surface after settling.
    settle(*e);
    for (BlockAddr addr = 0; addr < 8; ++addr)
        CHECK(read_one(*e, addr) == testutil::pattern_block(992 + addr));
}

TEST_CASE("fsync drains, seals, and matches the live root") {
    Rig rig(32);
    auto e = rig.engine();

    for (BlockAddr addr = 0; addr < 10; ++addr) write_one(*e, addr, addr * 3);
    CHECK(e->queue_size() == 10);

    auto epoch_before = e->sealed_epoch();
    e->fsync();
    CHECK(e->queue_size() == 0);
    CHECK(e->sealed_epoch() == epoch_before + 1);

    auto sealed = rig.sealed->load_latest();
    CHECK(sealed.root == e->current_root().hash);
    CHECK(sealed.counter == e->sealed_epoch());

    auto m = e->metrics();
    CHECK(m.fsyncs == 1);
    CHECK(m.seals == 1);

    // An empty queue still seals: freshness of the epoch, not of the data.
    e->fsync();
    CHECK(e->sealed_epoch() == epoch_before + 2);
}

TEST_CASE("recover rebuilds the exact sealed state") {
    Rig rig(16);
    std::map<BlockAddr, std::uint64_t> shadow;
    {
        auto e = rig.engine();
        std::mt19937_64 rng(5);
        for (int i = 0; i < 60; ++i) {
            BlockAddr addr = rng() % 16;
            std::uint64_t seed = rng();
            write_one(*e, addr, seed);
            shadow[addr] = seed;
        }
        e->fsync();
    }

    auto e = PacEngine::recover(rig.disk, rig.sealed, rig.cfg);
    CHECK(e->sealed_epoch() == 2);  // initial seal + one fsync
    for (auto& [addr, seed] : shadow)
        CHECK(read_one(*e, addr) == testutil::pattern_block(seed));
    CHECK(read_one(*e, 15) ==
          (shadow.count(15) ? testutil::pattern_block(shadow[15])
                            : std::vector<std::uint8_t>(kBlockSize, 0)));

    // The recovered engine keeps working: writes, fsync, reads.
    write_one(*e, 0, 777);
    e->fsync();
    CHECK(e->sealed_epoch() == 3);
    CHECK(read_one(*e, 0) == testutil::pattern_block(777));
}

TEST_CASE("un-fsynced writes are absent after crash recovery") {
    Rig rig(16);
    {
        auto e = rig.engine();
        write_one(*e, 4, 1);
        e->fsync();
        auto tok = rig.disk->snapshot();
        write_one(*e, 4, 2);  // never fsynced
        // Crash: disk reverts to its last durable image; the engine dies
        // without draining.
        rig.disk->restore(tok);
        rig.disk->drop_snapshot(tok);
    }
    auto e = PacEngine::recover(rig.disk, rig.sealed, rig.cfg);
    CHECK(read_one(*e, 4) == testutil::pattern_block(1));
}

TEST_CASE("recover detects a disk image rolled back across an epoch") {
    Rig rig(16);
    std::uint64_t tok;
    {
        auto e = rig.engine();
        write_one(*e, 2, 1);
        e->fsync();
        tok = rig.disk->snapshot();
        write_one(*e, 2, 2);
        e->fsync();  // seals the newer epoch
    }
    rig.disk->restore(tok);  // adversary rewinds data, not the sealed state
    rig.disk->drop_snapshot(tok);
    CHECK_THROWS_AS(PacEngine::recover(rig.disk, rig.sealed, rig.cfg),
                    IntegrityFault);
}

TEST_CASE("recover detects a rolled-back metadata+disk pair via the seal") {
    namespace fs = std::filesystem;
    Rig rig(16);
    std::uint64_t tok;
    auto meta_copy = rig.td.file("tree.meta.old");
    {
        auto e = rig.engine();
        write_one(*e, 2, 1);
        e->fsync();
        tok = rig.disk->snapshot();
        fs::copy_file(rig.cfg.metadata_path, meta_copy);
        write_one(*e, 2, 2);
        e->fsync();
    }
    // Full epoch rollback: image, history, and metadata all consistent with
    // the older epoch. Only the sealed root can tell.
    rig.disk->restore(tok);
    rig.disk->drop_snapshot(tok);
    fs::copy_file(meta_copy, rig.cfg.metadata_path,
                  fs::copy_options::overwrite_existing);
    CHECK_THROWS_AS(PacEngine::recover(rig.disk, rig.sealed, rig.cfg),
                    IntegrityFault);
}

TEST_CASE("recover rejects a stale sealed record") {
    namespace fs = std::filesystem;
    Rig rig(16);
    auto sealed_copy = rig.td.file("sealed.old");
    {
        auto e = rig.engine();
        write_one(*e, 1, 1);
        e->fsync();
        fs::copy_file(rig.td.file("sealed"), sealed_copy);
        write_one(*e, 1, 2);
        e->fsync();
    }
    fs::copy_file(sealed_copy, rig.td.file("sealed"),
                  fs::copy_options::overwrite_existing);
    CHECK_THROWS_AS(PacEngine::recover(rig.disk, rig.sealed, rig.cfg),
                    RollbackFault);
}

TEST_CASE("recover requires metadata") {
    Rig rig(16);
    {
        auto e = rig.engine();
        e->fsync();
    }
    auto cfg = rig.cfg;
    cfg.metadata_path.clear();
    CHECK_THROWS_AS(PacEngine::recover(rig.disk, rig.sealed, cfg), MetadataCorrupt);

    std::filesystem::remove(rig.cfg.metadata_path);
    CHECK_THROWS(PacEngine::recover(rig.disk, rig.sealed, rig.cfg));
}

TEST_CASE("a background fault latches and fail-stops the engine") {
    Rig rig(16);
    auto e = rig.engine();

    for (BlockAddr addr = 0; addr < 5; ++addr) write_one(*e, addr, addr);
    e->inject_update_fault_after(3);

    auto t = now();
    e->background_step(t);  // prime the token clock
    CHECK_THROWS_AS(e->background_step(t + 1h), IntegrityFault);
    CHECK(e->faulted());

    CHECK_THROWS_AS(write_one(*e, 9, 9), IntegrityFault);
    CHECK_THROWS_AS(read_one(*e, 0), IntegrityFault);
    CHECK_THROWS_AS(e->fsync(), IntegrityFault);
}

TEST_CASE("config validation rejects bad values") {
    Rig rig(16);
    auto bad = rig.cfg;
    bad.capacity_blocks = 0;
    CHECK_THROWS_AS(PacEngine(rig.disk, rig.sealed, bad), std::invalid_argument);
    bad = rig.cfg;
    bad.low_watermark = 1.5;
    CHECK_THROWS_AS(PacEngine(rig.disk, rig.sealed, bad), std::invalid_argument);
    bad = rig.cfg;
    bad.target_background_rate = 0.0;
    CHECK_THROWS_AS(PacEngine(rig.disk, rig.sealed, bad), std::invalid_argument);
    bad = rig.cfg;
    bad.cache_fraction = -0.1;
    CHECK_THROWS_AS(PacEngine(rig.disk, rig.sealed, bad), std::invalid_argument);
}

TEST_CASE("memory self-report: 100 bytes per queued request") {
    Rig rig(16);
    auto e = rig.engine();
    auto r = e->memory_report();
    CHECK(r.request_bytes == 100);
    CHECK(r.node_bytes == 72);
    CHECK(r.mac_bytes == 16);
    CHECK(r.iv_bytes == 12);
    CHECK(r.queue_capacity == rig.cfg.queue_capacity);
    CHECK(r.queue_bytes == rig.cfg.queue_capacity * 100);
    CHECK(r.tree_nodes == 31);  // 16 leaves
}

TEST_CASE("threaded engine: writes, reads, and fsyncs under a live thread") {
    Rig rig(256, 4, /*manual=*/false);
    rig.cfg.target_background_rate = 100000.0;
    rig.cfg.queue_capacity = 32;
    auto e = rig.engine();

    std::map<BlockAddr, std::uint64_t> shadow;
    std::mt19937_64 rng(11);
    for (int i = 0; i < 2000; ++i) {
        BlockAddr addr = rng() % 256;
        if (rng() % 100 < 10 && shadow.count(addr)) {
            CHECK(read_one(*e, addr) == testutil::pattern_block(shadow[addr]));
        } else {
            std::uint64_t seed = rng();
            write_one(*e, addr, seed);
            shadow[addr] = seed;
        }
        if (i % 500 == 499) e->fsync();
    }
    e->fsync();
    CHECK(e->queue_size() == 0);
    CHECK_FALSE(e->faulted());
    e->check_queue_invariants();

    // Compare roots before reading back: reads may splay, and rotations
    // legitimately change the root hash between seals.
    auto sealed = rig.sealed->load_latest();
    CHECK(sealed.root == e->current_root().hash);

    for (auto& [addr, seed] : shadow)
        CHECK(read_one(*e, addr) == testutil::pattern_block(seed));
}

TEST_CASE("threaded engine: a blocked writer resumes after the drain") {
    Rig rig(64, 4, /*manual=*/false);
    rig.cfg.queue_capacity = 8;
    rig.cfg.target_background_rate = 0.25;  // updates only move via draining
    auto e = rig.engine();

    // Pin the background context at its gate so the fill below cannot race
    // against a drain.
    AttackAction gate;
    gate.kind = AttackAction::Kind::delay_background;
    gate.delay_infinite = true;
    rig.disk->arm(gate);

    for (BlockAddr addr = 0; addr < 8; ++addr) write_one(*e, addr, addr);
    CHECK(e->queue_size() == 8);

    // Queue is full; this write must stall until the drain frees space.
    std::thread writer([&] { write_one(*e, 20, 20); });
    auto deadline = now() + std::chrono::seconds(5);
    while (e->metrics().stalls == 0 && now() < deadline)
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
    CHECK(e->metrics().stalls >= 1);

    rig.disk->lift_bg_delay();
    writer.join();
    CHECK(e->queue_size() <= 8);
    CHECK(e->metrics().drains >= 1);

    e->fsync();
    for (BlockAddr addr = 0; addr < 8; ++addr)
        CHECK(read_one(*e, addr) == testutil::pattern_block(addr));
    CHECK(read_one(*e, 20) == testutil::pattern_block(20));
}

TEST_CASE("threaded engine: fsync survives an armed background delay") {
    Rig rig(32, 4, /*manual=*/false);
    auto e = rig.engine();

    AttackAction a;
    a.kind = AttackAction::Kind::delay_background;
    a.delay = std::chrono::milliseconds(60);
    rig.disk->arm(a);

    write_one(*e, 3, 3);
    auto t0 = now();
    e->fsync();
    CHECK(now() - t0 >= 50ms);  // the drain waited out the delay
    CHECK(e->queue_size() == 0);
    CHECK(read_one(*e, 3) == testutil::pattern_block(3));
}

TEST_CASE("threaded engine: infinite delay is released by lifting") {
    Rig rig(32, 4, /*manual=*/false);
    auto e = rig.engine();

    AttackAction a;
    a.kind = AttackAction::Kind::delay_background;
    a.delay_infinite = true;
    rig.disk->arm(a);

    write_one(*e, 1, 1);
    std::thread lifter([&] {
        std::this_thread::sleep_for(80ms);
        rig.disk->lift_bg_delay();
    });
    auto t0 = now();
    e->fsync();
    CHECK(now() - t0 >= 60ms);
    lifter.join();
    CHECK(read_one(*e, 1) == testutil::pattern_block(1));
}
