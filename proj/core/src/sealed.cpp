#include "pac/sealed.hpp"

#include <cstdio>
#include <cstring>
#include <memory>
#include <thread>

namespace pac {
namespace {

constexpr char kSealMagic[4] = {'P', 'A', 'C', 'S'};
constexpr std::size_t kSealBytes = 4 + 8 + 32 + 32;

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

CounterStore::CounterStore(std::string path) : path_(std::move(path)) {
    FilePtr f(std::fopen(path_.c_str(), "rb"));
    if (!f) return;  // fresh counter starts at zero
    std::uint8_t buf[8];
    if (std::fread(buf, 1, 8, f.get()) == 8) value_ = get_u64le(buf);
}

std::uint64_t CounterStore::value() const { return value_; }

std::uint64_t CounterStore::increment() {
    std::uint64_t next = value_ + 1;
    FilePtr f(std::fopen(path_.c_str(), "wb"));
    if (!f) throw SealFault("cannot open counter file: " + path_);
    std::uint8_t buf[8];
    put_u64le(buf, next);
    if (std::fwrite(buf, 1, 8, f.get()) != 8 || std::fflush(f.get()) != 0)
        throw SealFault("counter write failed");
    value_ = next;
    return next;
}

SealedStore::SealedStore(std::string record_path, std::string counter_path,
                         const HashKey& key, std::chrono::microseconds seal_delay)
    : record_path_(std::move(record_path)),
      counter_(std::move(counter_path)),
      keyed_(key),
      seal_delay_(seal_delay) {}

std::array<std::uint8_t, 32> SealedStore::sign(const NodeHash& root,
                                               std::uint64_t counter) const {
    std::uint8_t ctr[8];
    put_u64le(ctr, counter);
    return keyed_.digest2(root.bytes, ctr).bytes;
}

SealedRoot SealedStore::seal(const NodeHash& root) {
    std::lock_guard lk(mu_);
    SealedRoot out;
    out.root = root;
    out.counter = counter_.increment();
    out.signature = sign(root, out.counter);

    std::string tmp = record_path_ + ".tmp";
    FilePtr f(std::fopen(tmp.c_str(), "wb"));
    if (!f) throw SealFault("cannot open sealed record: " + tmp);
    std::uint8_t buf[kSealBytes];
    std::memcpy(buf, kSealMagic, 4);
    put_u64le(buf + 4, out.counter);
    std::memcpy(buf + 12, out.root.bytes.data(), 32);
    std::memcpy(buf + 44, out.signature.data(), 32);
    if (std::fwrite(buf, 1, kSealBytes, f.get()) != kSealBytes ||
        std::fflush(f.get()) != 0)
        throw SealFault("sealed record write failed");
    f.reset();
    if (std::rename(tmp.c_str(), record_path_.c_str()) != 0)
        throw SealFault("sealed record rename failed");

    // Models the fixed cost of driving a tamper-resistant counter.
    if (seal_delay_.count() > 0) std::this_thread::sleep_for(seal_delay_);
    ++seal_count_;
    return out;
}

SealedRoot SealedStore::load_latest() const {
    std::lock_guard lk(mu_);
    FilePtr f(std::fopen(record_path_.c_str(), "rb"));
    if (!f) throw RollbackFault("no sealed record present");
    std::uint8_t buf[kSealBytes];
    if (std::fread(buf, 1, kSealBytes, f.get()) != kSealBytes)
        throw RollbackFault("sealed record truncated");
    if (std::memcmp(buf, kSealMagic, 4) != 0)
        throw RollbackFault("sealed record magic mismatch");

    SealedRoot out;
    out.counter = get_u64le(buf + 4);
    std::memcpy(out.root.bytes.data(), buf + 12, 32);
    std::memcpy(out.signature.data(), buf + 44, 32);

    if (out.signature != sign(out.root, out.counter))
        throw RollbackFault("sealed record signature mismatch");
    if (out.counter != counter_.value())
        throw RollbackFault("sealed record counter is stale");
    return out;
}

}  // namespace pac
