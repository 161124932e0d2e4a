#pragma once

#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pac/crypto.hpp"
#include "pac/types.hpp"

namespace testutil {

inline std::vector<std::uint8_t> unhex(const std::string& s) {
    std::vector<std::uint8_t> out(s.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<std::uint8_t>(std::stoul(s.substr(2 * i, 2), nullptr, 16));
    return out;
}

inline std::string hex(const std::uint8_t* p, std::size_t n) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        s.push_back(digits[p[i] >> 4]);
        s.push_back(digits[p[i] & 0xF]);
    }
    return s;
}

template <class C>
std::string hex(const C& c) {
    return hex(c.data(), c.size());
}

inline std::string hex(const pac::NodeHash& h) { return hex(h.bytes); }

/// Fresh directory under the build tree, removed when the object dies.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& stem = "pac-test") {
        static std::atomic<unsigned> seq{0};
        path = std::filesystem::temp_directory_path() /
               (stem + "-" + std::to_string(::getpid()) + "-" + std::to_string(seq++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline pac::KeyPair test_keys(std::uint64_t seed = 7) {
    std::mt19937_64 rng(seed);
    return pac::random_keys(rng);
}

inline pac::BlockAuthTag synth_tag(std::uint64_t salt) {
    pac::BlockAuthTag t{};
    for (std::size_t i = 0; i < t.mac.size(); ++i)
        t.mac[i] = static_cast<std::uint8_t>(salt * 131 + i * 17 + 3);
    for (std::size_t i = 0; i < t.iv.size(); ++i)
        t.iv[i] = static_cast<std::uint8_t>(salt * 29 + i * 7 + 1);
    return t;
}

inline std::vector<std::uint8_t> pattern_block(std::uint64_t seed,
                                               std::size_t n = pac::kBlockSize) {
    std::vector<std::uint8_t> b(n);
    std::mt19937_64 rng(seed);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    return b;
}

}  // namespace testutil
