#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

#include "pac/types.hpp"

namespace pac {

/// Keyed SHA-256 (HMAC). The pad blocks are precomputed once per key; digest()
/// is safe to call concurrently from any thread.
class Hmac256 {
public:
    Hmac256() = default;
    explicit Hmac256(std::span<const std::uint8_t> key);
    explicit Hmac256(const HashKey& key) : Hmac256(std::span(key.bytes)) {}

    NodeHash digest(std::span<const std::uint8_t> msg) const;
    NodeHash digest2(std::span<const std::uint8_t> a,
                     std::span<const std::uint8_t> b) const;

private:
    std::array<std::uint8_t, 64> ipad_{};
    std::array<std::uint8_t, 64> opad_{};
};

/// Raw AEAD surface (AES-128-GCM). encrypt_block/decrypt_block wrap these
/// with the block-address associated data.
void aead_seal(const BlockKey& key, std::span<const std::uint8_t, 12> iv,
               std::span<const std::uint8_t> aad,
               std::span<const std::uint8_t> plaintext,
               std::span<std::uint8_t> ciphertext_out,
               std::span<std::uint8_t, 16> tag_out);

bool aead_open(const BlockKey& key, std::span<const std::uint8_t, 12> iv,
               std::span<const std::uint8_t> aad,
               std::span<const std::uint8_t> ciphertext,
               std::span<const std::uint8_t, 16> tag,
               std::span<std::uint8_t> plaintext_out);

/// Encrypts one 4 KB block. The block address is bound as associated data
/// (8-byte little-endian), so a tag only verifies at the address it was
/// produced for.
BlockAuthTag encrypt_block(BlockAddr addr,
                           std::span<const std::uint8_t> plaintext,
                           const BlockKey& key,
                           std::span<const std::uint8_t, 12> iv,
                           std::span<std::uint8_t> ciphertext_out);

/// Throws AuthFault unless (addr, ciphertext, tag) were produced together
/// under `key`.
void decrypt_block(BlockAddr addr, std::span<const std::uint8_t> ciphertext,
                   const BlockAuthTag& tag, const BlockKey& key,
                   std::span<std::uint8_t> plaintext_out);

/// Internal tree node hash: HMAC-SHA-256 over left ‖ right. Absent children
/// are the 32-byte zero sentinel.
NodeHash node_hash(const NodeHash& left, const NodeHash& right,
                   const Hmac256& keyed);

/// 32-byte leaf digest of a block tag: HMAC-SHA-256 over mac ‖ iv.
NodeHash leaf_hash(const BlockAuthTag& tag, const Hmac256& keyed);

/// Issues 12-byte nonces unique within one run: 4-byte per-run prefix plus a
/// 64-bit counter. Uniqueness is the requirement, unpredictability is not.
class IvSequencer {
public:
    explicit IvSequencer(std::uint64_t seed);
    std::array<std::uint8_t, 12> next();

private:
    std::array<std::uint8_t, 4> prefix_{};
    std::uint64_t counter_ = 0;
};

struct KeyPair {
    BlockKey block;
    HashKey hash;
};

/// Key file layout: raw 48 bytes, 16-byte block key followed by the 32-byte
/// hash key.
KeyPair load_keys(const std::string& path);
void save_keys(const std::string& path, const KeyPair& keys);
KeyPair random_keys(std::mt19937_64& rng);

NodeHash sha256(std::span<const std::uint8_t> msg);

}  // namespace pac
