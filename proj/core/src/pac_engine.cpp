#include "pac/pac_engine.hpp"

#include <cassert>

namespace pac {

using Clock = std::chrono::steady_clock;

UpdateQueue::UpdateQueue(std::size_t capacity, double low_watermark)
    : capacity_(capacity), low_watermark_(low_watermark) {
    index_.reserve(capacity_);
}

std::size_t UpdateQueue::drain_exit_threshold() const {
    return static_cast<std::size_t>(low_watermark_ * static_cast<double>(capacity_));
}

UpdateQueue::Push UpdateQueue::push(BlockAddr addr, const BlockAuthTag& tag,
                                    Clock::time_point now) {
    auto it = index_.find(addr);
    if (it != index_.end()) {
        // Only the latest update to a block is tracked; the entry keeps its
        // queue position.
        it->second->new_tag = tag;
        ++it->second->supersede_count;
        assert_coherent();
        return Push::overridden;
    }
    if (fifo_.size() >= capacity_) return Push::rejected_full;
    fifo_.push_back(UpdateRequest{addr, tag, now, 0});
    index_[addr] = std::prev(fifo_.end());
    if (fifo_.size() == capacity_ && !draining_) {
        draining_ = true;
        ++drain_transitions_;
    }
    assert_coherent();
    return Push::appended;
}

const UpdateRequest* UpdateQueue::front() const {
    return fifo_.empty() ? nullptr : &fifo_.front();
}

bool UpdateQueue::pop_front_if(BlockAddr addr, const BlockAuthTag& tag) {
    if (fifo_.empty()) return false;
    const UpdateRequest& f = fifo_.front();
    if (f.addr != addr || !(f.new_tag == tag)) return false;
    index_.erase(f.addr);
    fifo_.pop_front();
    if (draining_ && fifo_.size() <= drain_exit_threshold()) draining_ = false;
    assert_coherent();
    return true;
}

std::optional<BlockAuthTag> UpdateQueue::find(BlockAddr addr) const {
    auto it = index_.find(addr);
    if (it == index_.end()) return std::nullopt;
    return it->second->new_tag;
}

void UpdateQueue::assert_coherent() const {
    // Cheap form of the uniqueness invariant, checked on every mutation: the
    // index is keyed by addr, so equal sizes rule out duplicates.
    if (index_.size() != fifo_.size() || fifo_.size() > capacity_)
        throw std::logic_error("update queue lost addr/index coherence");
}

void UpdateQueue::check_invariants() const {
    assert_coherent();
    std::unordered_map<BlockAddr, int> seen;
    for (auto it = fifo_.begin(); it != fifo_.end(); ++it) {
        if (++seen[it->addr] > 1)
            throw std::logic_error("duplicate address in update queue");
        auto idx = index_.find(it->addr);
        if (idx == index_.end() || idx->second != it)
            throw std::logic_error("update queue index points at wrong entry");
    }
}

namespace {
const EngineConfig& validated(const EngineConfig& cfg) {
    cfg.validate();
    return cfg;
}
}  // namespace

PacEngine::PacEngine(std::shared_ptr<AdversarialDisk> disk,
                     std::shared_ptr<SealedStore> sealed, const EngineConfig& cfg)
    : BlockEngine(validated(cfg).capacity_blocks),
      disk_(std::move(disk)),
      sealed_(std::move(sealed)),
      cfg_(cfg),
      ivseq_(cfg.seed),
      splay_rng_(cfg.seed ^ 0xD1F5C0DE),
      store_(cfg.capacity_blocks, cfg.tree, cfg.keys.hash, cfg.cache_fraction,
             [this](BlockAddr addr) {
                 // Device bring-up: every block starts as an encrypted
                 // all-zeros record so the tree is total from the first op.
                 static thread_local std::vector<std::uint8_t> zeros(kBlockSize, 0);
                 DiskRecord rec;
                 rec.tag = encrypt_block(addr, zeros, cfg_.keys.block, ivseq_.next(),
                                         rec.data);
                 disk_->write(addr, rec);
                 return rec.tag;
             }),
      queue_(cfg.queue_capacity, cfg.low_watermark),
      burst_cap_(std::max(1.0, cfg.target_background_rate / 100.0)) {
    if (!sealed_) throw SealFault("pac engine requires a sealed store");
    auto rec = sealed_->seal(store_.root_hash());
    sealed_epoch_ = rec.counter;
    if (!cfg_.metadata_path.empty()) store_.persist_metadata(cfg_.metadata_path);
    start_background();
}

PacEngine::PacEngine(ResumeTag, std::shared_ptr<AdversarialDisk> disk,
                     std::shared_ptr<SealedStore> sealed, const EngineConfig& cfg,
                     MerkleStore&& store, std::uint64_t sealed_epoch)
    : BlockEngine(cfg.capacity_blocks),
      disk_(std::move(disk)),
      sealed_(std::move(sealed)),
      cfg_(cfg),
      ivseq_(cfg.seed ^ sealed_epoch),  // fresh IV stream per recovery epoch
      splay_rng_(cfg.seed ^ 0xD1F5C0DE ^ sealed_epoch),
      store_(std::move(store)),
      queue_(cfg.queue_capacity, cfg.low_watermark),
      burst_cap_(std::max(1.0, cfg.target_background_rate / 100.0)),
      sealed_epoch_(sealed_epoch) {
    start_background();
}

PacEngine::~PacEngine() {
    {
        std::lock_guard lk(q_mu_);
        stop_ = true;
    }
    cv_work_.notify_all();
    if (bg_thread_.joinable()) bg_thread_.join();
}

void PacEngine::start_background() {
    if (cfg_.manual_background) return;
    bg_thread_ = std::thread([this] { bg_main(); });
}

void PacEngine::bg_main() {
    // Floor of 1ms: the poll interval doubles as the batching window, and a
    // window shorter than the inter-arrival spread gives hot addresses no
    // chance to supersede their queued entry before it is applied.
    auto poll = std::chrono::microseconds(std::clamp<std::int64_t>(
        static_cast<std::int64_t>(1e6 / cfg_.target_background_rate), 1000, 5000));
    std::unique_lock lk(q_mu_);
    while (true) {
        if (queue_.empty() && !fault_) {
            // Nothing pending: sleep until a writer or an fsync ticket shows
            // up instead of burning wakeups on the poll interval.
            cv_work_.wait(lk, [&] {
                return stop_ || fsync_requested_ > fsync_completed_ || fault_ ||
                       !queue_.empty();
            });
            if (stop_) return;
            if (fsync_requested_ == fsync_completed_ && !fault_) {
                // Woken by a writer: take one poll-length nap first so a
                // burst of writes collapses into a single pass. Applying on
                // every enqueue would re-hash per write and forfeit the
                // override savings.
                continue;
            }
        } else {
            // Rate-limited work is paced by the poll timeout, not the
            // predicate; waking on every enqueue would spin when the bucket
            // is empty.
            cv_work_.wait_for(lk, poll, [&] {
                return stop_ || fsync_requested_ > fsync_completed_ ||
                       (!fault_ && queue_.draining());
            });
        }
        if (stop_) return;
        if (fault_) {
            // Fail-stop: absorb tickets so waiters wake and rethrow.
            fsync_completed_ = fsync_requested_;
            cv_fsync_.notify_all();
            cv_space_.notify_all();
            continue;
        }
        if (fsync_requested_ > fsync_completed_) {
            lk.unlock();
            try {
                drain_and_seal();
            } catch (...) {
                latch_fault(std::current_exception());
            }
            lk.lock();
            ++fsync_completed_;
            cv_fsync_.notify_all();
            continue;
        }
        if (!queue_.empty()) {
            lk.unlock();
            disk_->bg_delay_wait();
            try {
                background_step(Clock::now());
            } catch (...) {
                latch_fault(std::current_exception());
            }
            lk.lock();
        }
    }
}

void PacEngine::latch_fault(std::exception_ptr e) {
    {
        std::lock_guard lk(q_mu_);
        if (!fault_) fault_ = e;
    }
    cv_space_.notify_all();
    cv_fsync_.notify_all();
}

void PacEngine::rethrow_if_faulted() const {
    std::lock_guard lk(q_mu_);
    if (fault_) std::rethrow_exception(fault_);
}

void PacEngine::write(BlockAddr addr, std::span<const std::uint8_t> data) {
    check_span(addr, data.size());
    rethrow_if_faulted();
    for (std::size_t off = 0; off < data.size(); off += kBlockSize)
        write_block(addr + off / kBlockSize, data.subspan(off, kBlockSize));
}

void PacEngine::write_block(BlockAddr addr, std::span<const std::uint8_t> data) {
    DiskRecord rec;
    rec.tag = encrypt_block(addr, data, cfg_.keys.block, ivseq_.next(), rec.data);
    // Record lands on the untrusted device before the queue knows the tag;
    // a pending-queue read must find the new record, never the old one.
    disk_->write(addr, rec);

    bool stalled = false;
    bool overridden = false;
    bool draining = false;
    std::size_t len;
    {
        std::unique_lock lk(q_mu_);
        if (fault_) std::rethrow_exception(fault_);
        while (true) {
            auto res = queue_.push(addr, rec.tag, Clock::now());
            if (res == UpdateQueue::Push::rejected_full) {
                if (!stalled) {
                    stalled = true;
                    // Counted at rejection, not on resume: a writer parked
                    // here shows up in metrics while it is still parked.
                    std::lock_guard mk(metrics_mu_);
                    ++m_.stalls;
                }
                cv_work_.notify_all();
                cv_space_.wait(lk, [&] {
                    return fault_ || queue_.size() < queue_.capacity();
                });
                if (fault_) std::rethrow_exception(fault_);
                continue;
            }
            overridden = res == UpdateQueue::Push::overridden;
            break;
        }
        len = queue_.size();
        draining = queue_.draining();
    }
    // Wake the background thread only when it could actually be asleep
    // waiting for work (empty->nonempty) or when the queue is in drain.
    // Signalling every push costs a futex call per write and drags the
    // applier into lockstep with the writer, re-hashing per write instead
    // of once per batch.
    if (draining || (!overridden && len == 1)) cv_work_.notify_one();

    std::lock_guard mk(metrics_mu_);
    ++m_.writes;
    if (overridden) ++m_.overrides;
    m_.queue_peak = std::max<std::uint64_t>(m_.queue_peak, len);
}

void PacEngine::read(BlockAddr addr, std::span<std::uint8_t> out) {
    check_span(addr, out.size());
    rethrow_if_faulted();
    for (std::size_t off = 0; off < out.size(); off += kBlockSize)
        read_block(addr + off / kBlockSize, out.subspan(off, kBlockSize));
}

void PacEngine::read_block(BlockAddr addr, std::span<std::uint8_t> out) {
    DiskRecord rec;
    disk_->read(addr, rec);

    std::optional<BlockAuthTag> pending;
    {
        std::lock_guard lk(q_mu_);
        pending = queue_.find(addr);
    }
    if (pending) {
        // Freshness by queue consistency: the record must carry exactly the
        // tag of the acknowledged write; no tree traversal happens.
        if (!(rec.tag == *pending))
            throw IntegrityFault("record behind pending update was altered");
    } else {
        auto t0 = Clock::now();
        {
            std::lock_guard lk(store_mu_);
            store_.verify_leaf(addr, rec.tag);
            store_.maybe_splay(addr, splay_rng_);
        }
        auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0);
        std::lock_guard mk(metrics_mu_);
        verify_lat_.add(static_cast<std::uint64_t>(ns.count()));
    }
    decrypt_block(addr, rec.data, rec.tag, cfg_.keys.block, out);
    std::lock_guard mk(metrics_mu_);
    ++m_.reads;
}

bool PacEngine::apply_one(bool) {
    UpdateRequest req;
    {
        std::lock_guard lk(q_mu_);
        const UpdateRequest* f = queue_.front();
        if (!f) return false;
        req = *f;
        if (inject_fault_in_ > 0 && --inject_fault_in_ == 0)
            throw IntegrityFault("background update failed");
    }
    auto t0 = Clock::now();
    {
        std::lock_guard lk(store_mu_);
        store_.update_leaf(req.addr, req.new_tag);
        // A collapsed apply stands in for every write it superseded; splay
        // adaptation should see that full write frequency, not the thinned
        // apply stream.
        store_.maybe_splay(req.addr, splay_rng_, req.supersede_count + 1);
    }
    auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0);
    {
        std::lock_guard lk(q_mu_);
        // An override that landed mid-apply keeps its position and gets
        // re-applied with the newer tag on the next pass.
        queue_.pop_front_if(req.addr, req.new_tag);
    }
    cv_space_.notify_all();
    {
        std::lock_guard mk(metrics_mu_);
        ++m_.updates_applied;
        update_lat_.add(static_cast<std::uint64_t>(ns.count()));
    }
    return true;
}

double PacEngine::refill_tokens(Clock::time_point now) {
    if (!refill_primed_) {
        refill_primed_ = true;
        last_refill_ = now;
        return tokens_;
    }
    std::chrono::duration<double> dt = now - last_refill_;
    if (dt.count() > 0) {
        tokens_ = std::min(burst_cap_, tokens_ + dt.count() * cfg_.target_background_rate);
        last_refill_ = now;
    }
    return tokens_;
}

unsigned PacEngine::background_step(Clock::time_point now) {
    try {
        {
            std::lock_guard lk(q_mu_);
            refill_tokens(now);
        }
        unsigned processed = 0;
        while (true) {
            bool draining;
            {
                std::lock_guard lk(q_mu_);
                if (queue_.empty()) break;
                draining = queue_.draining();
                if (!draining) {
                    if (tokens_ < 1.0) break;
                    tokens_ -= 1.0;
                }
            }
            if (!apply_one(draining)) break;
            ++processed;
        }
        return processed;
    } catch (...) {
        latch_fault(std::current_exception());
        throw;
    }
}

void PacEngine::drain_and_seal() {
    while (true) {
        disk_->bg_delay_wait();
        if (!apply_one(true)) break;
    }
    NodeHash root;
    {
        std::lock_guard lk(store_mu_);
        if (!cfg_.metadata_path.empty()) store_.persist_metadata(cfg_.metadata_path);
        root = store_.root_hash();
    }
    disk_->flush();
    auto rec = sealed_->seal(root);
    {
        std::lock_guard lk(q_mu_);
        sealed_epoch_ = rec.counter;
    }
    std::lock_guard mk(metrics_mu_);
    ++m_.fsyncs;
    ++m_.seals;
}

void PacEngine::fsync() {
    rethrow_if_faulted();
    if (cfg_.manual_background) {
        try {
            drain_and_seal();
        } catch (...) {
            latch_fault(std::current_exception());
            throw;
        }
        return;
    }
    std::unique_lock lk(q_mu_);
    std::uint64_t ticket = ++fsync_requested_;
    cv_work_.notify_all();
    cv_fsync_.wait(lk, [&] { return fsync_completed_ >= ticket || fault_; });
    if (fault_) std::rethrow_exception(fault_);
}

std::unique_ptr<PacEngine> PacEngine::recover(std::shared_ptr<AdversarialDisk> disk,
                                              std::shared_ptr<SealedStore> sealed,
                                              const EngineConfig& cfg) {
    cfg.validate();
    if (!sealed) throw SealFault("recovery requires the sealed store");
    if (cfg.metadata_path.empty()) throw MetadataCorrupt("no metadata path configured");

    SealedRoot rec = sealed->load_latest();
    MerkleStore store =
        MerkleStore::load_metadata(cfg.metadata_path, cfg.keys.hash, cfg.cache_fraction);
    if (store.capacity() != cfg.capacity_blocks)
        throw MetadataCorrupt("metadata capacity does not match engine config");
    if (store.config().kind != cfg.tree.kind)
        throw MetadataCorrupt("metadata tree kind does not match engine config");

    // The committed state must be self-consistent end to end: disk records
    // against metadata tags, stored hashes against recomputation, and the
    // recomputed root against the sealed anchor.
    DiskRecord r;
    for (BlockAddr addr = 0; addr < cfg.capacity_blocks; ++addr) {
        disk->read(addr, r);
        if (!(r.tag == store.leaf_tag(addr)))
            throw IntegrityFault("disk record diverges from committed tag");
    }
    NodeHash root = store.recompute_root(true);
    if (!(root == rec.root))
        throw IntegrityFault("recomputed root differs from sealed root");

    return std::unique_ptr<PacEngine>(new PacEngine(
        ResumeTag{}, std::move(disk), std::move(sealed), cfg, std::move(store),
        rec.counter));
}

EngineMetrics PacEngine::metrics() const {
    EngineMetrics out;
    {
        std::lock_guard mk(metrics_mu_);
        out = m_;
        out.verify = verify_lat_.stats();
        out.update = update_lat_.stats();
    }
    {
        std::lock_guard lk(q_mu_);
        out.queue_len = queue_.size();
        out.drains = queue_.drain_transitions();
    }
    {
        std::lock_guard lk(store_mu_);
        out.cache_hits = store_.cache().hits();
        out.cache_misses = store_.cache().misses();
        out.node_hashes = store_.node_hash_count();
        out.leaf_digests = store_.leaf_digest_count();
    }
    return out;
}

MemoryReport PacEngine::memory_report() const {
    MemoryReport r;
    r.request_bytes = r.node_bytes + r.mac_bytes + r.iv_bytes;
    r.queue_capacity = cfg_.queue_capacity;
    r.queue_bytes = r.queue_capacity * r.request_bytes;
    std::lock_guard lk(store_mu_);
    r.tree_nodes = store_.node_count();
    r.tree_bytes = r.tree_nodes * r.node_bytes;
    r.cache_entries = store_.cache().capacity();
    r.cache_bytes = r.cache_entries * (8 + 32);
    return r;
}

void PacEngine::reset_metrics() {
    std::lock_guard mk(metrics_mu_);
    m_ = EngineMetrics{};
    verify_lat_.reset();
    update_lat_.reset();
    std::lock_guard lk(store_mu_);
    store_.reset_counters();
}

std::size_t PacEngine::queue_size() const {
    std::lock_guard lk(q_mu_);
    return queue_.size();
}

bool PacEngine::queue_draining() const {
    std::lock_guard lk(q_mu_);
    return queue_.draining();
}

std::uint64_t PacEngine::sealed_epoch() const {
    std::lock_guard lk(q_mu_);
    return sealed_epoch_;
}

MerkleRoot PacEngine::current_root() const {
    std::lock_guard lk(store_mu_);
    return store_.root();
}

void PacEngine::check_queue_invariants() const {
    std::lock_guard lk(q_mu_);
    queue_.check_invariants();
}

bool PacEngine::faulted() const {
    std::lock_guard lk(q_mu_);
    return fault_ != nullptr;
}

void PacEngine::inject_update_fault_after(std::uint64_t applies) {
    std::lock_guard lk(q_mu_);
    inject_fault_in_ = applies;
}

}  // namespace pac
