#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "pac/types.hpp"

namespace pac {

/// One on-disk block record: ciphertext followed by its auth tag. The tag
/// travels with the data on the untrusted device; freshness comes from the
/// tree, not from the record.
struct DiskRecord {
    std::array<std::uint8_t, kBlockSize> data;
    BlockAuthTag tag;

    bool operator==(const DiskRecord& o) const {
        return data == o.data && tag == o.tag;
    }
};

inline constexpr std::size_t kRecordBytes = kBlockSize + 16 + 12;

/// Flat file of fixed-size records, one per block address.
class FileDisk {
public:
    FileDisk(const std::string& path, std::uint64_t capacity_blocks);
    ~FileDisk();
    FileDisk(const FileDisk&) = delete;
    FileDisk& operator=(const FileDisk&) = delete;

    void read(BlockAddr addr, DiskRecord& out) const;
    void write(BlockAddr addr, const DiskRecord& rec);
    void flush();

    std::uint64_t capacity() const { return capacity_; }
    std::vector<std::uint8_t> image() const;
    void restore_image(const std::vector<std::uint8_t>& bytes);

private:
    int fd_ = -1;
    std::uint64_t capacity_;
};

/// One armed adversarial behavior. Parsed from harness script lines like
/// "replay 17 1" or "delay_background inf".
struct AttackAction {
    enum class Kind {
        replay,            // serve a block's k-steps-stale record
        corrupt,           // flip one random byte of the served record
        swap,              // serve block b's record at address a and vice versa
        drop_write,        // silently discard the next write to an address
        rollback_all,      // serve every address k steps stale
        delay_background,  // postpone the engine's next background poll
    };

    Kind kind = Kind::corrupt;
    BlockAddr a = 0;
    BlockAddr b = 0;
    std::uint64_t steps_back = 1;
    std::chrono::milliseconds delay{0};
    bool delay_infinite = false;
    bool persistent = false;  // default: disarm after first firing

    static AttackAction parse(const std::string& line);
    std::string describe() const;
};

/// Wraps FileDisk with a version log and scriptable misbehavior, playing the
/// role of the untrusted device an attacker fully controls.
class AdversarialDisk {
public:
    AdversarialDisk(const std::string& path, std::uint64_t capacity_blocks,
                    std::size_t history_depth = 0, std::uint64_t seed = 1);

    void read(BlockAddr addr, DiskRecord& out);
    void write(BlockAddr addr, const DiskRecord& rec);
    void flush();

    void arm(const AttackAction& action);
    void disarm_all();
    std::uint64_t fired_count() const;

    /// Engine background contexts call this once per poll; an armed
    /// delay_background blocks here.
    void bg_delay_wait();
    void lift_bg_delay();

    std::uint64_t snapshot();
    void restore(std::uint64_t token);
    void drop_snapshot(std::uint64_t token);

    std::uint64_t capacity() const { return capacity_; }
    std::size_t history_depth() const { return history_depth_; }

private:
    const DiskRecord& stale_record(BlockAddr addr, std::uint64_t steps_back,
                                   DiskRecord& scratch);

    FileDisk file_;
    std::uint64_t capacity_;
    std::size_t history_depth_;
    std::mt19937_64 rng_;

    mutable std::mutex mu_;
    std::vector<AttackAction> armed_;
    std::atomic<std::uint64_t> fired_{0};
    std::unordered_map<BlockAddr, std::deque<DiskRecord>> history_;

    struct Snapshot {
        std::vector<std::uint8_t> image;
        std::unordered_map<BlockAddr, std::deque<DiskRecord>> history;
    };
    std::unordered_map<std::uint64_t, Snapshot> snapshots_;
    std::uint64_t next_token_ = 1;

    std::mutex delay_mu_;
    std::condition_variable delay_cv_;
    std::optional<AttackAction> delay_armed_;
};

}  // namespace pac
