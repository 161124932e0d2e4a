#pragma once

#include <chrono>
#include <cstdint>
#include <mutex>
#include <string>

#include "pac/crypto.hpp"
#include "pac/types.hpp"

namespace pac {

/// Trusted monotonic counter, persisted as 8 little-endian bytes. Stands in
/// for tamper-resistant hardware: the adversary model never touches it.
class CounterStore {
public:
    explicit CounterStore(std::string path);

    std::uint64_t value() const;
    std::uint64_t increment();

private:
    std::string path_;
    std::uint64_t value_ = 0;
};

struct SealedRoot {
    NodeHash root;
    std::uint64_t counter = 0;
    std::array<std::uint8_t, 32> signature{};
};

/// Signs the current tree root together with a fresh counter value and
/// persists the pair. Sealing is deliberately slow (counter hardware);
/// loading cross-checks the trusted counter so a stale sealed record is a
/// detected rollback, not a silent reset.
class SealedStore {
public:
    SealedStore(std::string record_path, std::string counter_path,
                const HashKey& key, std::chrono::microseconds seal_delay);

    SealedRoot seal(const NodeHash& root);
    SealedRoot load_latest() const;

    std::uint64_t seal_count() const { return seal_count_; }
    std::uint64_t counter_value() const { return counter_.value(); }
    std::chrono::microseconds seal_delay() const { return seal_delay_; }
    void set_seal_delay(std::chrono::microseconds d) { seal_delay_ = d; }

private:
    std::array<std::uint8_t, 32> sign(const NodeHash& root, std::uint64_t counter) const;

    std::string record_path_;
    CounterStore counter_;
    Hmac256 keyed_;
    std::chrono::microseconds seal_delay_;
    std::uint64_t seal_count_ = 0;
    mutable std::mutex mu_;
};

}  // namespace pac
