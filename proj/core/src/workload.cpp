#include "pac/workload.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace pac {

void WorkloadSpec::validate(std::uint64_t capacity_blocks) const {
    if (io_size == 0 || io_size % kBlockSize != 0)
        throw std::invalid_argument("io_size must be a positive multiple of 4096");
    if (io_size / kBlockSize > capacity_blocks)
        throw std::invalid_argument("io_size exceeds device capacity");
    if (!(read_ratio >= 0.0 && read_ratio <= 1.0))
        throw std::invalid_argument("read_ratio must be in [0,1]");
    if (zipf_theta < 0.0) throw std::invalid_argument("zipf_theta must be >= 0");
    if (threads == 0) throw std::invalid_argument("threads must be positive");
    if (op_count == 0) throw std::invalid_argument("op_count must be positive");
    if (fsync_period == 0) throw std::invalid_argument("fsync_period must be positive");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
        throw std::invalid_argument("warmup_fraction must be in [0,1)");
}

ZipfSampler::ZipfSampler(double theta, std::uint64_t n, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("zipf over empty range");
    cdf_.resize(n);
    double acc = 0.0;
    for (std::uint64_t k = 0; k < n; ++k) {
        acc += std::pow(static_cast<double>(k + 1), -theta);
        cdf_[k] = acc;
    }
    for (auto& c : cdf_) c /= acc;
    cdf_.back() = 1.0;

    perm_.resize(n);
    std::iota(perm_.begin(), perm_.end(), 0);
    std::mt19937_64 rng(seed ^ 0x5EEDFACE);
    std::shuffle(perm_.begin(), perm_.end(), rng);
}

std::uint64_t ZipfSampler::sample(std::mt19937_64& rng) const {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    std::size_t rank = static_cast<std::size_t>(it - cdf_.begin());
    if (rank >= perm_.size()) rank = perm_.size() - 1;
    return perm_[rank];
}

namespace {

struct OpStream {
    ZipfSampler zipf;
    std::mt19937_64 rng;
    std::uint64_t blocks_per_op;
    std::uint64_t capacity;
    double read_ratio;

    struct Op {
        bool is_read;
        BlockAddr addr;
    };

    Op next() {
        bool is_read =
            std::uniform_real_distribution<double>(0.0, 1.0)(rng) < read_ratio;
        BlockAddr addr = zipf.sample(rng);
        if (addr + blocks_per_op > capacity) addr = capacity - blocks_per_op;
        return {is_read, addr};
    }
};

}  // namespace

BenchResult run_bench(BlockEngine& engine, const WorkloadSpec& spec) {
    spec.validate(engine.capacity_blocks());

    const std::uint64_t blocks_per_op = spec.io_size / kBlockSize;
    const std::uint64_t warmup_ops =
        static_cast<std::uint64_t>(std::ceil(static_cast<double>(spec.op_count) *
                                             spec.warmup_fraction));
    const std::uint64_t measured_ops = spec.op_count - warmup_ops;

    std::vector<std::uint8_t> buf(spec.io_size);
    std::mt19937_64 fill_rng(spec.seed ^ 0xF111ED);

    std::mutex submit_mu;
    std::uint64_t writes_since_fsync = 0;

    Reservoir write_lat, read_lat;
    std::uint64_t reads = 0, writes = 0;

    auto issue = [&](OpStream& ops, std::vector<std::uint8_t>& iobuf,
                     bool measured) {
        auto op = ops.next();
        std::lock_guard lk(submit_mu);
        auto t0 = std::chrono::steady_clock::now();
        if (op.is_read) {
            engine.read(op.addr, iobuf);
        } else {
            // Cheap deterministic fill; contents only need to differ per op.
            for (std::size_t i = 0; i < iobuf.size(); i += 512)
                iobuf[i] = static_cast<std::uint8_t>(fill_rng());
            engine.write(op.addr, iobuf);
        }
        auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
            std::chrono::steady_clock::now() - t0);
        if (measured) {
            if (op.is_read) {
                read_lat.add(static_cast<std::uint64_t>(ns.count()));
                ++reads;
            } else {
                write_lat.add(static_cast<std::uint64_t>(ns.count()));
                ++writes;
            }
        }
        if (!op.is_read && ++writes_since_fsync >= spec.fsync_period) {
            writes_since_fsync = 0;
            engine.fsync();
        }
    };

    // Warm-up runs on the caller with worker 0's stream position.
    OpStream warm{ZipfSampler(spec.zipf_theta, engine.capacity_blocks(), spec.seed),
                  std::mt19937_64(spec.seed), blocks_per_op,
                  engine.capacity_blocks(), spec.read_ratio};
    for (std::uint64_t i = 0; i < warmup_ops; ++i) issue(warm, buf, false);

    engine.reset_metrics();
    auto t0 = std::chrono::steady_clock::now();

    if (spec.threads <= 1) {
        for (std::uint64_t i = 0; i < measured_ops; ++i) issue(warm, buf, true);
    } else {
        std::vector<std::thread> workers;
        std::uint64_t per = measured_ops / spec.threads;
        std::uint64_t extra = measured_ops % spec.threads;
        for (unsigned w = 0; w < spec.threads; ++w) {
            std::uint64_t mine = per + (w < extra ? 1 : 0);
            workers.emplace_back([&, w, mine] {
                OpStream stream{ZipfSampler(spec.zipf_theta, engine.capacity_blocks(),
                                            spec.seed),
                                std::mt19937_64(spec.seed ^ (0x1000 + w)),
                                blocks_per_op, engine.capacity_blocks(),
                                spec.read_ratio};
                std::vector<std::uint8_t> wbuf(spec.io_size);
                for (std::uint64_t i = 0; i < mine; ++i) issue(stream, wbuf, true);
            });
        }
        for (auto& t : workers) t.join();
    }

    auto seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    BenchResult r;
    r.seconds = seconds;
    r.ops = measured_ops;
    r.read_ops = reads;
    r.write_ops = writes;
    r.bytes = measured_ops * spec.io_size;
    r.throughput_mbps =
        seconds > 0 ? static_cast<double>(r.bytes) / seconds / 1e6 : 0.0;
    r.write_latency = write_lat.stats();
    r.read_latency = read_lat.stats();
    r.engine = engine.metrics();
    return r;
}

std::string BenchResult::summary(std::string_view engine_name) const {
    std::ostringstream os;
    os << engine_name << ": " << throughput_mbps << " MB/s over " << ops
       << " ops (" << write_ops << "w/" << read_ops << "r) in " << seconds
       << "s; write p50 " << write_latency.p50_us() << "us p99.9 "
       << write_latency.p999_us() << "us";
    if (engine.cache_hits + engine.cache_misses > 0)
        os << "; cache hit " << engine.cache_hit_rate();
    if (!engine.wov_ms.empty()) os << "; mean WoV " << engine.mean_wov_ms() << "ms";
    return os.str();
}

}  // namespace pac
