#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "pac/crypto.hpp"
#include "pac/merkle.hpp"
#include "pac/types.hpp"

namespace pac {

class AdversarialDisk;
class SealedStore;

struct EngineConfig {
    std::uint64_t capacity_blocks = 262144;
    double cache_fraction = 0.10;
    std::size_t queue_capacity = 1024;
    double low_watermark = 0.75;
    double target_background_rate = 1000.0;  // requests per second
    std::chrono::microseconds seal_delay{5000};
    TreeConfig tree{};
    KeyPair keys{};
    std::uint64_t seed = 1;
    std::size_t batch_size = 1000;      // batch engine checkpoint threshold
    bool manual_background = false;     // no thread; tests drive background_step
    std::string metadata_path;          // tree metadata persisted at fsync when set

    void validate() const;
};

/// Fixed-size reservoir of latency samples; quantiles come from the sample.
struct LatencyStats {
    std::vector<std::uint64_t> samples_ns;
    std::uint64_t count = 0;

    double quantile_us(double q) const;
    double p50_us() const { return quantile_us(0.50); }
    double p999_us() const { return quantile_us(0.999); }
    double mean_us() const;
};

struct EngineMetrics {
    std::uint64_t reads = 0;
    std::uint64_t writes = 0;
    std::uint64_t fsyncs = 0;
    std::uint64_t seals = 0;
    std::uint64_t overrides = 0;
    std::uint64_t stalls = 0;
    std::uint64_t drains = 0;  // entries into the draining state
    std::uint64_t updates_applied = 0;
    std::uint64_t queue_len = 0;
    std::uint64_t queue_peak = 0;
    std::uint64_t cache_hits = 0;
    std::uint64_t cache_misses = 0;
    std::uint64_t node_hashes = 0;
    std::uint64_t leaf_digests = 0;
    LatencyStats verify;
    LatencyStats update;
    std::vector<double> wov_ms;  // batch engine: write-to-verification gaps

    double cache_hit_rate() const {
        std::uint64_t total = cache_hits + cache_misses;
        return total == 0 ? 0.0 : static_cast<double>(cache_hits) / static_cast<double>(total);
    }
    double mean_wov_ms() const;
};

/// In-memory accounting for one tree node: 32-byte hash, parent/left/right
// links and node id at 8 bytes each, plus a flags word.
inline constexpr std::size_t kAccountedNodeBytes = 32 + 8 + 8 + 8 + 8 + 8;
inline constexpr std::size_t kAccountedRequestBytes =
    kAccountedNodeBytes + sizeof(BlockAuthTag::mac) + sizeof(BlockAuthTag::iv);

struct MemoryReport {
    std::size_t node_bytes = kAccountedNodeBytes;
    std::size_t mac_bytes = sizeof(BlockAuthTag::mac);
    std::size_t iv_bytes = sizeof(BlockAuthTag::iv);
    std::size_t request_bytes = 0;   // node + mac + iv
    std::size_t queue_capacity = 0;
    std::size_t queue_bytes = 0;     // capacity * request_bytes
    std::size_t tree_nodes = 0;
    std::size_t tree_bytes = 0;
    std::size_t cache_entries = 0;
    std::size_t cache_bytes = 0;     // entries * (id + hash)
};

/// Common surface of all storage engines. Calls are synchronous; `write` and
/// `read` accept any multiple of the block size and split it into per-block
/// operations internally.
class BlockEngine {
public:
    virtual ~BlockEngine() = default;

    virtual std::string_view name() const = 0;
    virtual void write(BlockAddr addr, std::span<const std::uint8_t> data) = 0;
    virtual void read(BlockAddr addr, std::span<std::uint8_t> out) = 0;
    virtual void fsync() = 0;

    virtual EngineMetrics metrics() const = 0;
    virtual MemoryReport memory_report() const = 0;
    virtual void reset_metrics() = 0;

    std::uint64_t capacity_blocks() const { return capacity_; }

protected:
    explicit BlockEngine(std::uint64_t capacity) : capacity_(capacity) {}

    void check_span(BlockAddr addr, std::size_t len) const;

    std::uint64_t capacity_;
};

/// Reservoir sampler for latency collection; keeps an unbiased subset once
/// the buffer fills.
class Reservoir {
public:
    explicit Reservoir(std::size_t cap = 1 << 16) : cap_(cap), rng_(0x9E3779B9) {}

    void add(std::uint64_t ns) {
        ++count_;
        if (samples_.size() < cap_) {
            samples_.push_back(ns);
            return;
        }
        std::uint64_t j = rng_() % count_;
        if (j < cap_) samples_[j] = ns;
    }
    void reset() {
        samples_.clear();
        count_ = 0;
    }
    LatencyStats stats() const { return {samples_, count_}; }

private:
    std::size_t cap_;
    std::vector<std::uint64_t> samples_;
    std::uint64_t count_ = 0;
    std::mt19937_64 rng_;
};

std::unique_ptr<BlockEngine> make_engine(std::string_view kind,
                                         std::shared_ptr<AdversarialDisk> disk,
                                         std::shared_ptr<SealedStore> sealed,
                                         const EngineConfig& cfg);

}  // namespace pac
