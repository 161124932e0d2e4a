#pragma once

#include <random>
#include <vector>

#include "pac/engine.hpp"

namespace pac {

struct WorkloadSpec {
    double read_ratio = 0.01;
    std::size_t io_size = 32768;      // bytes per op, multiple of the block size
    double zipf_theta = 2.5;
    std::uint64_t fsync_period = 1000;  // write ops between fsyncs
    unsigned threads = 1;
    unsigned io_depth = 32;           // reported, not simulated: calls are synchronous
    std::uint64_t op_count = 10000;
    std::uint64_t seed = 1;
    double warmup_fraction = 0.10;    // leading ops excluded from measurement

    void validate(std::uint64_t capacity_blocks) const;
};

/// Zipf(theta) over ranks, mapped through a seeded permutation of the address
/// space so the hot set is scattered rather than clustered at low addresses.
class ZipfSampler {
public:
    ZipfSampler(double theta, std::uint64_t n, std::uint64_t seed);

    std::uint64_t sample(std::mt19937_64& rng) const;
    std::uint64_t rank_to_address(std::uint64_t rank) const { return perm_[rank]; }
    std::uint64_t size() const { return perm_.size(); }

private:
    std::vector<double> cdf_;
    std::vector<std::uint64_t> perm_;
};

struct BenchResult {
    double seconds = 0.0;             // measured phase only
    std::uint64_t ops = 0;
    std::uint64_t read_ops = 0;
    std::uint64_t write_ops = 0;
    std::uint64_t bytes = 0;
    double throughput_mbps = 0.0;
    LatencyStats write_latency;       // per engine call
    LatencyStats read_latency;
    EngineMetrics engine;             // engine self-report over the measured phase

    std::string summary(std::string_view engine_name) const;
};

/// Drives one engine with the seeded workload: warm-up first, then the
/// measured phase. Multiple workers funnel through one submission mutex, so
/// the engine sees a single caller context.
BenchResult run_bench(BlockEngine& engine, const WorkloadSpec& spec);

}  // namespace pac
