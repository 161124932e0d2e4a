#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pac {

inline constexpr std::size_t kBlockSize = 4096;

using BlockAddr = std::uint64_t;
using Bytes = std::vector<std::uint8_t>;

/// 128-bit block encryption key. Lives in trusted memory only; never
/// written to any untrusted persistence surface.
struct BlockKey {
    std::array<std::uint8_t, 16> bytes{};
};

/// 256-bit key for internal tree hashing and seal signatures.
struct HashKey {
    std::array<std::uint8_t, 32> bytes{};
};

/// 32-byte digest held by every tree node.
struct NodeHash {
    std::array<std::uint8_t, 32> bytes{};
    bool operator==(const NodeHash&) const = default;
};

/// Sentinel standing in for an absent sibling/child.
inline constexpr NodeHash kZeroHash{};

/// Per-block integrity witness: AEAD tag plus the nonce it was produced
/// under. Stored on disk next to the ciphertext and mirrored in tree leaves.
struct BlockAuthTag {
    std::array<std::uint8_t, 16> mac{};
    std::array<std::uint8_t, 12> iv{};
    bool operator==(const BlockAuthTag&) const = default;
};

// ---------------------------------------------------------------------------
// Fault taxonomy. Integrity violations are exceptional: engines either return
// correct data or throw; the harness catches and classifies.
// ---------------------------------------------------------------------------

class Fault : public std::runtime_error {
public:
    explicit Fault(const std::string& what) : std::runtime_error(what) {}
};

/// AEAD tag failed to verify: corruption, swap, or tag/data mismatch.
class AuthFault : public Fault {
public:
    explicit AuthFault(const std::string& what) : Fault(what) {}
};

/// Merkle path, queue-consistency, or recovery root mismatch.
/// `depth` is the tree depth at which the mismatch was observed
/// (0 = root, leaf depth = path length), -1 when not applicable.
class IntegrityFault : public Fault {
public:
    explicit IntegrityFault(const std::string& what, int depth = -1)
        : Fault(what), depth_(depth) {}
    int depth() const { return depth_; }

private:
    int depth_;
};

/// Sealed record counter regressed or its signature failed.
class RollbackFault : public Fault {
public:
    explicit RollbackFault(const std::string& what) : Fault(what) {}
};

/// Tree metadata file failed structural validation.
class MetadataCorrupt : public Fault {
public:
    explicit MetadataCorrupt(const std::string& what) : Fault(what) {}
};

/// Underlying image file I/O failure.
class DiskFault : public Fault {
public:
    explicit DiskFault(const std::string& what) : Fault(what) {}
};

/// Seal persistence failure; latches the owning engine.
class SealFault : public Fault {
public:
    explicit SealFault(const std::string& what) : Fault(what) {}
};

// Little-endian scalar encode/decode used by every on-disk format.
inline void put_u64le(std::uint8_t* p, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

inline std::uint64_t get_u64le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

}  // namespace pac
