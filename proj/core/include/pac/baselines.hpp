#pragma once

#include <deque>

#include "pac/disk.hpp"
#include "pac/engine.hpp"
#include "pac/merkle.hpp"
#include "pac/sealed.hpp"

namespace pac {

/// No crypto, no integrity. Lower bound on per-op cost.
class PlainEngine final : public BlockEngine {
public:
    PlainEngine(std::shared_ptr<AdversarialDisk> disk, const EngineConfig& cfg);

    std::string_view name() const override { return "plain"; }
    void write(BlockAddr addr, std::span<const std::uint8_t> data) override;
    void read(BlockAddr addr, std::span<std::uint8_t> out) override;
    void fsync() override;
    EngineMetrics metrics() const override { return m_; }
    MemoryReport memory_report() const override;
    void reset_metrics() override { m_ = EngineMetrics{}; }

private:
    std::shared_ptr<AdversarialDisk> disk_;
    EngineMetrics m_;
};

/// Per-block authenticated encryption, no tree: tamper detection without
/// freshness. Replaying an old self-consistent record succeeds by design.
class AeadEngine final : public BlockEngine {
public:
    AeadEngine(std::shared_ptr<AdversarialDisk> disk, const EngineConfig& cfg);

    std::string_view name() const override { return "aead"; }
    void write(BlockAddr addr, std::span<const std::uint8_t> data) override;
    void read(BlockAddr addr, std::span<std::uint8_t> out) override;
    void fsync() override;
    EngineMetrics metrics() const override { return m_; }
    MemoryReport memory_report() const override;
    void reset_metrics() override { m_ = EngineMetrics{}; }

private:
    std::shared_ptr<AdversarialDisk> disk_;
    EngineConfig cfg_;
    IvSequencer ivseq_;
    EngineMetrics m_;
};

/// Every write folds into the tree and every read verifies, inline on the
/// caller. The fully synchronous reference point.
class SyncEngine final : public BlockEngine {
public:
    SyncEngine(std::shared_ptr<AdversarialDisk> disk, const EngineConfig& cfg);

    std::string_view name() const override { return "sync"; }
    void write(BlockAddr addr, std::span<const std::uint8_t> data) override;
    void read(BlockAddr addr, std::span<std::uint8_t> out) override;
    void fsync() override;
    EngineMetrics metrics() const override;
    MemoryReport memory_report() const override;
    void reset_metrics() override;

    MerkleRoot current_root() const { return store_.root(); }

private:
    void write_block(BlockAddr addr, std::span<const std::uint8_t> data);
    void read_block(BlockAddr addr, std::span<std::uint8_t> out);

    std::shared_ptr<AdversarialDisk> disk_;
    EngineConfig cfg_;
    IvSequencer ivseq_;
    std::mt19937_64 splay_rng_;
    MerkleStore store_;
    EngineMetrics m_;
    Reservoir verify_lat_;
    Reservoir update_lat_;
};

/// Deferred verification with one mixed in-order request queue. Reads return
/// unverified data; the checkpoint that covers them raises any fault late.
/// Each read logs the gap between return and verification.
class BatchEngine final : public BlockEngine {
public:
    BatchEngine(std::shared_ptr<AdversarialDisk> disk, const EngineConfig& cfg);

    std::string_view name() const override { return "batch"; }
    void write(BlockAddr addr, std::span<const std::uint8_t> data) override;
    void read(BlockAddr addr, std::span<std::uint8_t> out) override;
    void fsync() override;
    EngineMetrics metrics() const override;
    MemoryReport memory_report() const override;
    void reset_metrics() override;

    std::size_t pending_requests() const { return queue_.size(); }
    MerkleRoot current_root() const { return store_.root(); }

    /// Applies queued updates and verifies queued reads, strictly in arrival
    /// order, so each verification sees the tree as of its own position.
    void checkpoint();

private:
    struct Request {
        enum class Kind { update, verify } kind;
        BlockAddr addr;
        BlockAuthTag tag;
        std::chrono::steady_clock::time_point stamp;
    };

    void write_block(BlockAddr addr, std::span<const std::uint8_t> data);
    void read_block(BlockAddr addr, std::span<std::uint8_t> out);
    void log_wov(double ms);

    std::shared_ptr<AdversarialDisk> disk_;
    EngineConfig cfg_;
    IvSequencer ivseq_;
    std::mt19937_64 splay_rng_;
    std::mt19937_64 wov_rng_;
    MerkleStore store_;
    std::deque<Request> queue_;
    EngineMetrics m_;
    std::uint64_t wov_count_ = 0;
    Reservoir verify_lat_;
    Reservoir update_lat_;
};

}  // namespace pac
