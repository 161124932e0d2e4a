#pragma once

#include <condition_variable>
#include <list>
#include <mutex>
#include <optional>
#include <thread>
#include <unordered_map>

#include "pac/disk.hpp"
#include "pac/engine.hpp"
#include "pac/sealed.hpp"

namespace pac {

struct UpdateRequest {
    BlockAddr addr = 0;
    BlockAuthTag new_tag;
    std::chrono::steady_clock::time_point enqueue_time;
    std::uint32_t supersede_count = 0;
};

/// FIFO of pending tree updates with an address index; at most one entry per
/// address. Not internally synchronized: the engine guards it with one lock
/// shared by the caller and the background context.
class UpdateQueue {
public:
    UpdateQueue(std::size_t capacity, double low_watermark);

    enum class Push { appended, overridden, rejected_full };
    Push push(BlockAddr addr, const BlockAuthTag& tag,
              std::chrono::steady_clock::time_point now);

    const UpdateRequest* front() const;
    /// Removes the head only if it still carries `tag` for `addr`; an
    /// override that raced the in-flight apply keeps its queue position.
    bool pop_front_if(BlockAddr addr, const BlockAuthTag& tag);

    std::optional<BlockAuthTag> find(BlockAddr addr) const;

    std::size_t size() const { return fifo_.size(); }
    bool empty() const { return fifo_.empty(); }
    std::size_t capacity() const { return capacity_; }
    bool draining() const { return draining_; }
    std::size_t drain_exit_threshold() const;
    std::uint64_t drain_transitions() const { return drain_transitions_; }

    /// Full structural scan; throws std::logic_error on any violation.
    void check_invariants() const;

private:
    void assert_coherent() const;

    std::size_t capacity_;
    double low_watermark_;
    std::list<UpdateRequest> fifo_;
    std::unordered_map<BlockAddr, std::list<UpdateRequest>::iterator> index_;
    bool draining_ = false;
    std::uint64_t drain_transitions_ = 0;
};

/// The asynchronous authenticated engine: writes encrypt and enqueue, a
/// rate-limited background context folds queued tags into the tree, reads
/// verify synchronously (against the queue for pending blocks, against the
/// tree otherwise), and fsync drains, flushes, and seals the root.
class PacEngine final : public BlockEngine {
public:
    PacEngine(std::shared_ptr<AdversarialDisk> disk,
              std::shared_ptr<SealedStore> sealed, const EngineConfig& cfg);
    ~PacEngine() override;

    std::string_view name() const override { return "pac"; }
    void write(BlockAddr addr, std::span<const std::uint8_t> data) override;
    void read(BlockAddr addr, std::span<std::uint8_t> out) override;
    void fsync() override;
    EngineMetrics metrics() const override;
    MemoryReport memory_report() const override;
    void reset_metrics() override;

    /// One rate-limited processing pass; the background thread calls this on
    /// every poll, manual-background tests call it with a simulated clock.
    unsigned background_step(std::chrono::steady_clock::time_point now);

    /// Rebuilds an engine from persisted state: sealed record, metadata, and
    /// disk image. Throws RollbackFault / MetadataCorrupt / IntegrityFault
    /// when the three disagree.
    static std::unique_ptr<PacEngine> recover(std::shared_ptr<AdversarialDisk> disk,
                                              std::shared_ptr<SealedStore> sealed,
                                              const EngineConfig& cfg);

    std::size_t queue_size() const;
    bool queue_draining() const;
    std::uint64_t sealed_epoch() const;
    MerkleRoot current_root() const;
    void check_queue_invariants() const;
    bool faulted() const;

    /// Test seam: the Nth background apply from now raises IntegrityFault.
    void inject_update_fault_after(std::uint64_t applies);

private:
    struct ResumeTag {};
    PacEngine(ResumeTag, std::shared_ptr<AdversarialDisk> disk,
              std::shared_ptr<SealedStore> sealed, const EngineConfig& cfg,
              MerkleStore&& store, std::uint64_t sealed_epoch);

    void start_background();
    void bg_main();
    void write_block(BlockAddr addr, std::span<const std::uint8_t> data);
    void read_block(BlockAddr addr, std::span<std::uint8_t> out);
    bool apply_one(bool draining);
    void drain_and_seal();
    void latch_fault(std::exception_ptr e);
    void rethrow_if_faulted() const;
    double refill_tokens(std::chrono::steady_clock::time_point now);

    std::shared_ptr<AdversarialDisk> disk_;
    std::shared_ptr<SealedStore> sealed_;
    EngineConfig cfg_;
    // Declared ahead of store_: the fresh-engine constructor's leaf
    // initializer draws IVs while the tree is being built.
    IvSequencer ivseq_;
    std::mt19937_64 splay_rng_;
    MerkleStore store_;

    mutable std::mutex store_mu_;
    mutable std::mutex q_mu_;
    std::condition_variable cv_space_;
    std::condition_variable cv_work_;
    std::condition_variable cv_fsync_;
    UpdateQueue queue_;
    double tokens_ = 0.0;
    double burst_cap_;
    std::chrono::steady_clock::time_point last_refill_{};
    bool refill_primed_ = false;

    std::uint64_t fsync_requested_ = 0;
    std::uint64_t fsync_completed_ = 0;
    bool stop_ = false;
    std::exception_ptr fault_;
    std::uint64_t sealed_epoch_ = 0;

    std::uint64_t inject_fault_in_ = 0;  // 0 = disabled

    std::thread bg_thread_;

    mutable std::mutex metrics_mu_;
    EngineMetrics m_;
    Reservoir verify_lat_;
    Reservoir update_lat_;
};

}  // namespace pac
