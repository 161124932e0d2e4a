#include "pac/engine.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace pac {

void EngineConfig::validate() const {
    if (capacity_blocks == 0) throw std::invalid_argument("capacity_blocks must be positive");
    if (queue_capacity == 0) throw std::invalid_argument("queue_capacity must be positive");
    if (!(cache_fraction >= 0.0 && cache_fraction <= 1.0))
        throw std::invalid_argument("cache_fraction must be in [0,1]");
    if (!(low_watermark > 0.0 && low_watermark <= 1.0))
        throw std::invalid_argument("low_watermark must be in (0,1]");
    if (!(target_background_rate > 0.0))
        throw std::invalid_argument("target_background_rate must be positive");
    if (seal_delay.count() < 0) throw std::invalid_argument("seal_delay must be non-negative");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (!(tree.splay_probability >= 0.0 && tree.splay_probability <= 1.0))
        throw std::invalid_argument("splay_probability must be in [0,1]");
}

double LatencyStats::quantile_us(double q) const {
    if (samples_ns.empty()) return 0.0;
    std::vector<std::uint64_t> sorted(samples_ns);
    std::sort(sorted.begin(), sorted.end());
    double pos = q * static_cast<double>(sorted.size() - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    double frac = pos - static_cast<double>(lo);
    double ns = static_cast<double>(sorted[lo]) * (1.0 - frac) +
                static_cast<double>(sorted[hi]) * frac;
    return ns / 1000.0;
}

double LatencyStats::mean_us() const {
    if (samples_ns.empty()) return 0.0;
    double sum = std::accumulate(samples_ns.begin(), samples_ns.end(), 0.0);
    return sum / static_cast<double>(samples_ns.size()) / 1000.0;
}

double EngineMetrics::mean_wov_ms() const {
    if (wov_ms.empty()) return 0.0;
    return std::accumulate(wov_ms.begin(), wov_ms.end(), 0.0) /
           static_cast<double>(wov_ms.size());
}

void BlockEngine::check_span(BlockAddr addr, std::size_t bytes) const {
    if (bytes == 0 || bytes % kBlockSize != 0)
        throw std::invalid_argument("span must be a positive multiple of the block size");
    std::size_t blocks = bytes / kBlockSize;
    if (addr >= capacity_ || blocks > capacity_ - addr)
        throw std::out_of_range("block range exceeds device capacity");
}

}  // namespace pac
