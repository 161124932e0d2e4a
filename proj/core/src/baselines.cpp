#include "pac/baselines.hpp"

#include "pac/pac_engine.hpp"

namespace pac {

using Clock = std::chrono::steady_clock;

namespace {

// Device bring-up shared by the authenticated engines: every block starts as
// an encrypted all-zeros record with a valid tag.
BlockAuthTag fresh_zero_record(AdversarialDisk& disk, BlockAddr addr,
                               const BlockKey& key, IvSequencer& ivseq) {
    static thread_local std::vector<std::uint8_t> zeros(kBlockSize, 0);
    DiskRecord rec;
    rec.tag = encrypt_block(addr, zeros, key, ivseq.next(), rec.data);
    disk.write(addr, rec);
    return rec.tag;
}

}  // namespace

PlainEngine::PlainEngine(std::shared_ptr<AdversarialDisk> disk, const EngineConfig& cfg)
    : BlockEngine(cfg.capacity_blocks), disk_(std::move(disk)) {
    cfg.validate();
}

void PlainEngine::write(BlockAddr addr, std::span<const std::uint8_t> data) {
    check_span(addr, data.size());
    DiskRecord rec{};
    for (std::size_t off = 0; off < data.size(); off += kBlockSize) {
        std::copy_n(data.data() + off, kBlockSize, rec.data.begin());
        disk_->write(addr + off / kBlockSize, rec);
        ++m_.writes;
    }
}

void PlainEngine::read(BlockAddr addr, std::span<std::uint8_t> out) {
    check_span(addr, out.size());
    DiskRecord rec;
    for (std::size_t off = 0; off < out.size(); off += kBlockSize) {
        disk_->read(addr + off / kBlockSize, rec);
        std::copy_n(rec.data.begin(), kBlockSize, out.data() + off);
        ++m_.reads;
    }
}

void PlainEngine::fsync() {
    disk_->flush();
    ++m_.fsyncs;
}

MemoryReport PlainEngine::memory_report() const { return MemoryReport{}; }

AeadEngine::AeadEngine(std::shared_ptr<AdversarialDisk> disk, const EngineConfig& cfg)
    : BlockEngine(cfg.capacity_blocks),
      disk_(std::move(disk)),
      cfg_(cfg),
      ivseq_(cfg.seed) {
    cfg_.validate();
    for (BlockAddr a = 0; a < cfg_.capacity_blocks; ++a)
        fresh_zero_record(*disk_, a, cfg_.keys.block, ivseq_);
}

void AeadEngine::write(BlockAddr addr, std::span<const std::uint8_t> data) {
    check_span(addr, data.size());
    DiskRecord rec;
    for (std::size_t off = 0; off < data.size(); off += kBlockSize) {
        BlockAddr a = addr + off / kBlockSize;
        rec.tag = encrypt_block(a, data.subspan(off, kBlockSize), cfg_.keys.block,
                                ivseq_.next(), rec.data);
        disk_->write(a, rec);
        ++m_.writes;
    }
}

void AeadEngine::read(BlockAddr addr, std::span<std::uint8_t> out) {
    check_span(addr, out.size());
    DiskRecord rec;
    for (std::size_t off = 0; off < out.size(); off += kBlockSize) {
        BlockAddr a = addr + off / kBlockSize;
        disk_->read(a, rec);
        decrypt_block(a, rec.data, rec.tag, cfg_.keys.block,
                      out.subspan(off, kBlockSize));
        ++m_.reads;
    }
}

void AeadEngine::fsync() {
    disk_->flush();
    ++m_.fsyncs;
}

MemoryReport AeadEngine::memory_report() const { return MemoryReport{}; }

SyncEngine::SyncEngine(std::shared_ptr<AdversarialDisk> disk, const EngineConfig& cfg)
    : BlockEngine(cfg.capacity_blocks),
      disk_(std::move(disk)),
      cfg_(cfg),
      ivseq_(cfg.seed),
      splay_rng_(cfg.seed ^ 0xD1F5C0DE),
      store_(cfg.capacity_blocks, cfg.tree, cfg.keys.hash, cfg.cache_fraction,
             [this](BlockAddr addr) {
                 return fresh_zero_record(*disk_, addr, cfg_.keys.block, ivseq_);
             }) {
    cfg_.validate();
}

void SyncEngine::write(BlockAddr addr, std::span<const std::uint8_t> data) {
    check_span(addr, data.size());
    for (std::size_t off = 0; off < data.size(); off += kBlockSize)
        write_block(addr + off / kBlockSize, data.subspan(off, kBlockSize));
}

void SyncEngine::write_block(BlockAddr addr, std::span<const std::uint8_t> data) {
    DiskRecord rec;
    rec.tag = encrypt_block(addr, data, cfg_.keys.block, ivseq_.next(), rec.data);
    disk_->write(addr, rec);
    auto t0 = Clock::now();
    store_.update_leaf(addr, rec.tag);
    store_.maybe_splay(addr, splay_rng_);
    auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0);
    update_lat_.add(static_cast<std::uint64_t>(ns.count()));
    ++m_.writes;
    ++m_.updates_applied;
}

void SyncEngine::read(BlockAddr addr, std::span<std::uint8_t> out) {
    check_span(addr, out.size());
    for (std::size_t off = 0; off < out.size(); off += kBlockSize)
        read_block(addr + off / kBlockSize, out.subspan(off, kBlockSize));
}

void SyncEngine::read_block(BlockAddr addr, std::span<std::uint8_t> out) {
    DiskRecord rec;
    disk_->read(addr, rec);
    auto t0 = Clock::now();
    store_.verify_leaf(addr, rec.tag);
    store_.maybe_splay(addr, splay_rng_);
    auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0);
    verify_lat_.add(static_cast<std::uint64_t>(ns.count()));
    decrypt_block(addr, rec.data, rec.tag, cfg_.keys.block, out);
    ++m_.reads;
}

void SyncEngine::fsync() {
    disk_->flush();
    ++m_.fsyncs;
}

EngineMetrics SyncEngine::metrics() const {
    EngineMetrics out = m_;
    out.verify = verify_lat_.stats();
    out.update = update_lat_.stats();
    out.cache_hits = store_.cache().hits();
    out.cache_misses = store_.cache().misses();
    out.node_hashes = store_.node_hash_count();
    out.leaf_digests = store_.leaf_digest_count();
    return out;
}

MemoryReport SyncEngine::memory_report() const {
    MemoryReport r;
    r.request_bytes = r.node_bytes + r.mac_bytes + r.iv_bytes;
    r.tree_nodes = store_.node_count();
    r.tree_bytes = r.tree_nodes * r.node_bytes;
    r.cache_entries = store_.cache().capacity();
    r.cache_bytes = r.cache_entries * (8 + 32);
    return r;
}

void SyncEngine::reset_metrics() {
    m_ = EngineMetrics{};
    verify_lat_.reset();
    update_lat_.reset();
    store_.reset_counters();
}

BatchEngine::BatchEngine(std::shared_ptr<AdversarialDisk> disk, const EngineConfig& cfg)
    : BlockEngine(cfg.capacity_blocks),
      disk_(std::move(disk)),
      cfg_(cfg),
      ivseq_(cfg.seed),
      splay_rng_(cfg.seed ^ 0xD1F5C0DE),
      wov_rng_(cfg.seed ^ 0xB0A7ED),
      store_(cfg.capacity_blocks, cfg.tree, cfg.keys.hash, cfg.cache_fraction,
             [this](BlockAddr addr) {
                 return fresh_zero_record(*disk_, addr, cfg_.keys.block, ivseq_);
             }) {
    cfg_.validate();
}

void BatchEngine::write(BlockAddr addr, std::span<const std::uint8_t> data) {
    check_span(addr, data.size());
    for (std::size_t off = 0; off < data.size(); off += kBlockSize)
        write_block(addr + off / kBlockSize, data.subspan(off, kBlockSize));
}

void BatchEngine::write_block(BlockAddr addr, std::span<const std::uint8_t> data) {
    DiskRecord rec;
    rec.tag = encrypt_block(addr, data, cfg_.keys.block, ivseq_.next(), rec.data);
    disk_->write(addr, rec);
    queue_.push_back({Request::Kind::update, addr, rec.tag, Clock::now()});
    ++m_.writes;
    if (queue_.size() >= cfg_.batch_size) checkpoint();
}

void BatchEngine::read(BlockAddr addr, std::span<std::uint8_t> out) {
    check_span(addr, out.size());
    for (std::size_t off = 0; off < out.size(); off += kBlockSize)
        read_block(addr + off / kBlockSize, out.subspan(off, kBlockSize));
}

void BatchEngine::read_block(BlockAddr addr, std::span<std::uint8_t> out) {
    DiskRecord rec;
    disk_->read(addr, rec);
    // Data goes back to the caller now; tree verification happens at the
    // covering checkpoint. The tag observed here is what gets checked.
    decrypt_block(addr, rec.data, rec.tag, cfg_.keys.block, out);
    queue_.push_back({Request::Kind::verify, addr, rec.tag, Clock::now()});
    ++m_.reads;
    if (queue_.size() >= cfg_.batch_size) checkpoint();
}

void BatchEngine::log_wov(double ms) {
    ++wov_count_;
    constexpr std::size_t kCap = 1 << 16;
    if (m_.wov_ms.size() < kCap) {
        m_.wov_ms.push_back(ms);
        return;
    }
    std::uint64_t j = wov_rng_() % wov_count_;
    if (j < kCap) m_.wov_ms[j] = ms;
}

void BatchEngine::checkpoint() {
    // In-order replay: a verify request sees exactly the updates queued
    // before it, matching what was on disk when its read returned.
    while (!queue_.empty()) {
        Request req = queue_.front();
        queue_.pop_front();
        if (req.kind == Request::Kind::update) {
            auto t0 = Clock::now();
            store_.update_leaf(req.addr, req.tag);
            store_.maybe_splay(req.addr, splay_rng_);
            update_lat_.add(static_cast<std::uint64_t>(
                std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0)
                    .count()));
            ++m_.updates_applied;
        } else {
            auto t0 = Clock::now();
            try {
                store_.verify_leaf(req.addr, req.tag);
            } catch (...) {
                // The rest of the batch's verifies are poisoned, but its
                // updates mirror writes that really landed on disk. Dropping
                // those too would leave the tree behind the device and turn
                // later clean reads into faults (or mask replays that happen
                // to match the stale tree).
                while (!queue_.empty()) {
                    Request rest = queue_.front();
                    queue_.pop_front();
                    if (rest.kind == Request::Kind::update) {
                        store_.update_leaf(rest.addr, rest.tag);
                        ++m_.updates_applied;
                    }
                }
                throw;
            }
            store_.maybe_splay(req.addr, splay_rng_);
            verify_lat_.add(static_cast<std::uint64_t>(
                std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0)
                    .count()));
            std::chrono::duration<double, std::milli> gap = Clock::now() - req.stamp;
            log_wov(gap.count());
        }
    }
}

void BatchEngine::fsync() {
    checkpoint();
    disk_->flush();
    ++m_.fsyncs;
}

EngineMetrics BatchEngine::metrics() const {
    EngineMetrics out = m_;
    out.queue_len = queue_.size();
    out.verify = verify_lat_.stats();
    out.update = update_lat_.stats();
    out.cache_hits = store_.cache().hits();
    out.cache_misses = store_.cache().misses();
    out.node_hashes = store_.node_hash_count();
    out.leaf_digests = store_.leaf_digest_count();
    return out;
}

MemoryReport BatchEngine::memory_report() const {
    MemoryReport r;
    r.request_bytes = r.node_bytes + r.mac_bytes + r.iv_bytes;
    r.queue_capacity = cfg_.batch_size;
    r.queue_bytes = r.queue_capacity * r.request_bytes;
    r.tree_nodes = store_.node_count();
    r.tree_bytes = r.tree_nodes * r.node_bytes;
    r.cache_entries = store_.cache().capacity();
    r.cache_bytes = r.cache_entries * (8 + 32);
    return r;
}

void BatchEngine::reset_metrics() {
    m_ = EngineMetrics{};
    wov_count_ = 0;
    verify_lat_.reset();
    update_lat_.reset();
    store_.reset_counters();
}

std::unique_ptr<BlockEngine> make_engine(std::string_view kind,
                                         std::shared_ptr<AdversarialDisk> disk,
                                         std::shared_ptr<SealedStore> sealed,
                                         const EngineConfig& cfg) {
    if (kind == "plain") return std::make_unique<PlainEngine>(std::move(disk), cfg);
    if (kind == "aead") return std::make_unique<AeadEngine>(std::move(disk), cfg);
    if (kind == "sync") return std::make_unique<SyncEngine>(std::move(disk), cfg);
    if (kind == "batch") return std::make_unique<BatchEngine>(std::move(disk), cfg);
    if (kind == "pac")
        return std::make_unique<PacEngine>(std::move(disk), std::move(sealed), cfg);
    throw std::invalid_argument("unknown engine kind: " + std::string(kind));
}

}  // namespace pac
