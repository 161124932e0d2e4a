#include "pac/disk.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <sstream>

namespace pac {
namespace {

void serialize(const DiskRecord& rec, std::uint8_t* out) {
    std::memcpy(out, rec.data.data(), kBlockSize);
    std::memcpy(out + kBlockSize, rec.tag.mac.data(), 16);
    std::memcpy(out + kBlockSize + 16, rec.tag.iv.data(), 12);
}

void deserialize(const std::uint8_t* in, DiskRecord& rec) {
    std::memcpy(rec.data.data(), in, kBlockSize);
    std::memcpy(rec.tag.mac.data(), in + kBlockSize, 16);
    std::memcpy(rec.tag.iv.data(), in + kBlockSize + 16, 12);
}

}  // namespace

FileDisk::FileDisk(const std::string& path, std::uint64_t capacity_blocks)
    : capacity_(capacity_blocks) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0600);
    if (fd_ < 0) throw DiskFault("cannot open device file: " + path);
    if (::ftruncate(fd_, static_cast<off_t>(capacity_ * kRecordBytes)) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw DiskFault("cannot size device file: " + path);
    }
}

FileDisk::~FileDisk() {
    if (fd_ >= 0) ::close(fd_);
}

void FileDisk::read(BlockAddr addr, DiskRecord& out) const {
    if (addr >= capacity_) throw DiskFault("read past device capacity");
    std::uint8_t buf[kRecordBytes];
    ssize_t n = ::pread(fd_, buf, kRecordBytes,
                        static_cast<off_t>(addr * kRecordBytes));
    if (n != static_cast<ssize_t>(kRecordBytes))
        throw DiskFault("short device read: " + std::string(std::strerror(errno)));
    deserialize(buf, out);
}

void FileDisk::write(BlockAddr addr, const DiskRecord& rec) {
    if (addr >= capacity_) throw DiskFault("write past device capacity");
    std::uint8_t buf[kRecordBytes];
    serialize(rec, buf);
    ssize_t n = ::pwrite(fd_, buf, kRecordBytes,
                         static_cast<off_t>(addr * kRecordBytes));
    if (n != static_cast<ssize_t>(kRecordBytes))
        throw DiskFault("short device write: " + std::string(std::strerror(errno)));
}

void FileDisk::flush() {
    if (::fdatasync(fd_) != 0) throw DiskFault("device flush failed");
}

std::vector<std::uint8_t> FileDisk::image() const {
    std::vector<std::uint8_t> out(capacity_ * kRecordBytes);
    std::size_t got = 0;
    while (got < out.size()) {
        ssize_t n = ::pread(fd_, out.data() + got, out.size() - got,
                            static_cast<off_t>(got));
        if (n <= 0) throw DiskFault("device image read failed");
        got += static_cast<std::size_t>(n);
    }
    return out;
}

void FileDisk::restore_image(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() != capacity_ * kRecordBytes)
        throw DiskFault("image size does not match device");
    std::size_t put = 0;
    while (put < bytes.size()) {
        ssize_t n = ::pwrite(fd_, bytes.data() + put, bytes.size() - put,
                             static_cast<off_t>(put));
        if (n <= 0) throw DiskFault("device image write failed");
        put += static_cast<std::size_t>(n);
    }
}

AttackAction AttackAction::parse(const std::string& line) {
    std::istringstream in(line);
    std::string word;
    if (!(in >> word)) throw std::invalid_argument("empty attack line");

    AttackAction act;
    auto need_addr = [&](BlockAddr& out) {
        if (!(in >> out)) throw std::invalid_argument("missing address in: " + line);
    };
    if (word == "replay") {
        act.kind = Kind::replay;
        need_addr(act.a);
        if (!(in >> act.steps_back)) throw std::invalid_argument("missing steps in: " + line);
    } else if (word == "corrupt") {
        act.kind = Kind::corrupt;
        need_addr(act.a);
    } else if (word == "swap") {
        act.kind = Kind::swap;
        need_addr(act.a);
        need_addr(act.b);
    } else if (word == "drop_write") {
        act.kind = Kind::drop_write;
        need_addr(act.a);
    } else if (word == "rollback_all") {
        act.kind = Kind::rollback_all;
        if (!(in >> act.steps_back)) throw std::invalid_argument("missing steps in: " + line);
    } else if (word == "delay_background") {
        act.kind = Kind::delay_background;
        std::string amount;
        if (!(in >> amount)) throw std::invalid_argument("missing delay in: " + line);
        if (amount == "inf") {
            act.delay_infinite = true;
        } else {
            act.delay = std::chrono::milliseconds(std::stoull(amount));
        }
    } else {
        throw std::invalid_argument("unknown attack: " + word);
    }
    std::string extra;
    while (in >> extra) {
        if (extra == "persistent") {
            act.persistent = true;
        } else {
            throw std::invalid_argument("unexpected token in: " + line);
        }
    }
    return act;
}

std::string AttackAction::describe() const {
    std::ostringstream out;
    switch (kind) {
        case Kind::replay: out << "replay " << a << " " << steps_back; break;
        case Kind::corrupt: out << "corrupt " << a; break;
        case Kind::swap: out << "swap " << a << " " << b; break;
        case Kind::drop_write: out << "drop_write " << a; break;
        case Kind::rollback_all: out << "rollback_all " << steps_back; break;
        case Kind::delay_background:
            out << "delay_background ";
            if (delay_infinite) {
                out << "inf";
            } else {
                out << delay.count();
            }
            break;
    }
    if (persistent) out << " persistent";
    return out.str();
}

AdversarialDisk::AdversarialDisk(const std::string& path, std::uint64_t capacity_blocks,
                                 std::size_t history_depth, std::uint64_t seed)
    : file_(path, capacity_blocks),
      capacity_(capacity_blocks),
      history_depth_(history_depth),
      rng_(seed) {}

const DiskRecord& AdversarialDisk::stale_record(BlockAddr addr, std::uint64_t steps_back,
                                                DiskRecord& scratch) {
    auto it = history_.find(addr);
    if (it == history_.end() || it->second.empty()) {
        file_.read(addr, scratch);
        return scratch;
    }
    const auto& log = it->second;
    std::size_t idx = steps_back >= log.size() ? 0 : log.size() - 1 - steps_back;
    return log[idx];
}

void AdversarialDisk::read(BlockAddr addr, DiskRecord& out) {
    std::lock_guard lk(mu_);
    for (auto it = armed_.begin(); it != armed_.end(); ++it) {
        AttackAction act = *it;
        bool applies = false;
        switch (act.kind) {
            case AttackAction::Kind::replay: applies = act.a == addr; break;
            case AttackAction::Kind::rollback_all: applies = true; break;
            case AttackAction::Kind::corrupt: applies = act.a == addr; break;
            case AttackAction::Kind::swap: applies = act.a == addr || act.b == addr; break;
            default: break;
        }
        if (!applies) continue;
        ++fired_;
        if (!act.persistent) armed_.erase(it);

        DiskRecord scratch;
        switch (act.kind) {
            case AttackAction::Kind::replay:
            case AttackAction::Kind::rollback_all:
                out = stale_record(addr, act.steps_back, scratch);
                return;
            case AttackAction::Kind::corrupt: {
                file_.read(addr, out);
                std::uint8_t buf[kRecordBytes];
                serialize(out, buf);
                buf[rng_() % kRecordBytes] ^= static_cast<std::uint8_t>(1u << (rng_() % 8));
                deserialize(buf, out);
                return;
            }
            case AttackAction::Kind::swap:
                file_.read(act.a == addr ? act.b : act.a, out);
                return;
            default: break;
        }
    }
    file_.read(addr, out);
}

void AdversarialDisk::write(BlockAddr addr, const DiskRecord& rec) {
    std::lock_guard lk(mu_);
    for (auto it = armed_.begin(); it != armed_.end(); ++it) {
        if (it->kind == AttackAction::Kind::drop_write && it->a == addr) {
            ++fired_;
            if (!it->persistent) armed_.erase(it);
            return;  // swallowed
        }
    }
    file_.write(addr, rec);
    if (history_depth_ > 0) {
        auto& log = history_[addr];
        log.push_back(rec);
        while (log.size() > history_depth_ + 1) log.pop_front();
    }
}

void AdversarialDisk::flush() {
    std::lock_guard lk(mu_);
    file_.flush();
}

void AdversarialDisk::arm(const AttackAction& action) {
    switch (action.kind) {
        case AttackAction::Kind::replay:
        case AttackAction::Kind::rollback_all:
            if (action.steps_back == 0)
                throw std::invalid_argument("replay of zero steps is a no-op");
            if (action.steps_back > history_depth_)
                throw std::invalid_argument("replay depth exceeds version log");
            break;
        default:
            break;
    }
    if (action.kind == AttackAction::Kind::delay_background) {
        std::lock_guard lk(delay_mu_);
        delay_armed_ = action;
        return;
    }
    if (action.a >= capacity_ ||
        (action.kind == AttackAction::Kind::swap && action.b >= capacity_))
        throw std::invalid_argument("attack address past capacity");
    std::lock_guard lk(mu_);
    armed_.push_back(action);
}

void AdversarialDisk::disarm_all() {
    {
        std::lock_guard lk(mu_);
        armed_.clear();
    }
    lift_bg_delay();
}

std::uint64_t AdversarialDisk::fired_count() const { return fired_; }

void AdversarialDisk::bg_delay_wait() {
    std::unique_lock lk(delay_mu_);
    if (!delay_armed_) return;
    AttackAction act = *delay_armed_;
    ++fired_;
    if (act.delay_infinite) {
        delay_cv_.wait(lk, [&] { return !delay_armed_.has_value(); });
        return;
    }
    delay_cv_.wait_for(lk, act.delay, [&] { return !delay_armed_.has_value(); });
    if (!act.persistent) delay_armed_.reset();
}

void AdversarialDisk::lift_bg_delay() {
    std::lock_guard lk(delay_mu_);
    delay_armed_.reset();
    delay_cv_.notify_all();
}

std::uint64_t AdversarialDisk::snapshot() {
    std::lock_guard lk(mu_);
    std::uint64_t token = next_token_++;
    snapshots_[token] = Snapshot{file_.image(), history_};
    return token;
}

void AdversarialDisk::restore(std::uint64_t token) {
    std::lock_guard lk(mu_);
    auto it = snapshots_.find(token);
    if (it == snapshots_.end()) throw DiskFault("unknown snapshot token");
    file_.restore_image(it->second.image);
    history_ = it->second.history;
}

void AdversarialDisk::drop_snapshot(std::uint64_t token) {
    std::lock_guard lk(mu_);
    snapshots_.erase(token);
}

}  // namespace pac
