#include "pac/crypto.hpp"

#include <openssl/evp.h>

#include <cstring>
#include <fstream>
#include <memory>

namespace pac {

namespace {

struct MdCtxFree {
    void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
};
struct CipherCtxFree {
    void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};

// Reused per thread; init_ex resets state without reallocating.
EVP_MD_CTX* md_ctx() {
    thread_local std::unique_ptr<EVP_MD_CTX, MdCtxFree> ctx(EVP_MD_CTX_new());
    return ctx.get();
}

EVP_CIPHER_CTX* cipher_ctx() {
    thread_local std::unique_ptr<EVP_CIPHER_CTX, CipherCtxFree> ctx(
        EVP_CIPHER_CTX_new());
    return ctx.get();
}

void sha256_into(std::span<const std::uint8_t> a,
                 std::span<const std::uint8_t> b, std::uint8_t* out32) {
    EVP_MD_CTX* ctx = md_ctx();
    if (EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 init failed");
    EVP_DigestUpdate(ctx, a.data(), a.size());
    if (!b.empty()) EVP_DigestUpdate(ctx, b.data(), b.size());
    unsigned len = 0;
    EVP_DigestFinal_ex(ctx, out32, &len);
}

}  // namespace

NodeHash sha256(std::span<const std::uint8_t> msg) {
    NodeHash out;
    sha256_into(msg, {}, out.bytes.data());
    return out;
}

Hmac256::Hmac256(std::span<const std::uint8_t> key) {
    std::array<std::uint8_t, 64> k{};
    if (key.size() > 64) {
        sha256_into(key, {}, k.data());
    } else {
        std::memcpy(k.data(), key.data(), key.size());
    }
    for (std::size_t i = 0; i < 64; ++i) {
        ipad_[i] = k[i] ^ 0x36;
        opad_[i] = k[i] ^ 0x5c;
    }
}

NodeHash Hmac256::digest(std::span<const std::uint8_t> msg) const {
    return digest2(msg, {});
}

NodeHash Hmac256::digest2(std::span<const std::uint8_t> a,
                          std::span<const std::uint8_t> b) const {
    // HMAC(K,m) = H(opad || H(ipad || m)); two passes over the reused ctx.
    EVP_MD_CTX* ctx = md_ctx();
    std::uint8_t inner[32];
    if (EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("hmac init failed");
    EVP_DigestUpdate(ctx, ipad_.data(), ipad_.size());
    if (!a.empty()) EVP_DigestUpdate(ctx, a.data(), a.size());
    if (!b.empty()) EVP_DigestUpdate(ctx, b.data(), b.size());
    unsigned len = 0;
    EVP_DigestFinal_ex(ctx, inner, &len);

    NodeHash out;
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    EVP_DigestUpdate(ctx, opad_.data(), opad_.size());
    EVP_DigestUpdate(ctx, inner, sizeof inner);
    EVP_DigestFinal_ex(ctx, out.bytes.data(), &len);
    return out;
}

void aead_seal(const BlockKey& key, std::span<const std::uint8_t, 12> iv,
               std::span<const std::uint8_t> aad,
               std::span<const std::uint8_t> plaintext,
               std::span<std::uint8_t> ciphertext_out,
               std::span<std::uint8_t, 16> tag_out) {
    EVP_CIPHER_CTX* ctx = cipher_ctx();
    if (EVP_EncryptInit_ex(ctx, EVP_aes_128_gcm(), nullptr, key.bytes.data(),
                           iv.data()) != 1)
        throw std::runtime_error("gcm encrypt init failed");
    int len = 0;
    if (!aad.empty())
        EVP_EncryptUpdate(ctx, nullptr, &len, aad.data(),
                          static_cast<int>(aad.size()));
    if (EVP_EncryptUpdate(ctx, ciphertext_out.data(), &len, plaintext.data(),
                          static_cast<int>(plaintext.size())) != 1)
        throw std::runtime_error("gcm encrypt failed");
    EVP_EncryptFinal_ex(ctx, ciphertext_out.data() + len, &len);
    EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_GET_TAG, 16, tag_out.data());
}

bool aead_open(const BlockKey& key, std::span<const std::uint8_t, 12> iv,
               std::span<const std::uint8_t> aad,
               std::span<const std::uint8_t> ciphertext,
               std::span<const std::uint8_t, 16> tag,
               std::span<std::uint8_t> plaintext_out) {
    EVP_CIPHER_CTX* ctx = cipher_ctx();
    if (EVP_DecryptInit_ex(ctx, EVP_aes_128_gcm(), nullptr, key.bytes.data(),
                           iv.data()) != 1)
        throw std::runtime_error("gcm decrypt init failed");
    int len = 0;
    if (!aad.empty())
        EVP_DecryptUpdate(ctx, nullptr, &len, aad.data(),
                          static_cast<int>(aad.size()));
    if (EVP_DecryptUpdate(ctx, plaintext_out.data(), &len, ciphertext.data(),
                          static_cast<int>(ciphertext.size())) != 1)
        return false;
    EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_SET_TAG, 16,
                        const_cast<std::uint8_t*>(tag.data()));
    return EVP_DecryptFinal_ex(ctx, plaintext_out.data() + len, &len) == 1;
}

namespace {
std::array<std::uint8_t, 8> addr_aad(BlockAddr addr) {
    std::array<std::uint8_t, 8> a;
    put_u64le(a.data(), addr);
    return a;
}
}  // namespace

BlockAuthTag encrypt_block(BlockAddr addr,
                           std::span<const std::uint8_t> plaintext,
                           const BlockKey& key,
                           std::span<const std::uint8_t, 12> iv,
                           std::span<std::uint8_t> ciphertext_out) {
    BlockAuthTag tag;
    std::copy(iv.begin(), iv.end(), tag.iv.begin());
    auto aad = addr_aad(addr);
    aead_seal(key, iv, aad, plaintext, ciphertext_out, tag.mac);
    return tag;
}

void decrypt_block(BlockAddr addr, std::span<const std::uint8_t> ciphertext,
                   const BlockAuthTag& tag, const BlockKey& key,
                   std::span<std::uint8_t> plaintext_out) {
    auto aad = addr_aad(addr);
    if (!aead_open(key, tag.iv, aad, ciphertext, tag.mac, plaintext_out))
        throw AuthFault("block tag verification failed at address " +
                        std::to_string(addr));
}

NodeHash node_hash(const NodeHash& left, const NodeHash& right,
                   const Hmac256& keyed) {
    return keyed.digest2(left.bytes, right.bytes);
}

NodeHash leaf_hash(const BlockAuthTag& tag, const Hmac256& keyed) {
    return keyed.digest2(tag.mac, tag.iv);
}

IvSequencer::IvSequencer(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uint32_t p = static_cast<std::uint32_t>(rng());
    for (int i = 0; i < 4; ++i)
        prefix_[i] = static_cast<std::uint8_t>(p >> (8 * i));
    counter_ = rng();
}

std::array<std::uint8_t, 12> IvSequencer::next() {
    std::array<std::uint8_t, 12> iv;
    std::memcpy(iv.data(), prefix_.data(), 4);
    put_u64le(iv.data() + 4, counter_++);
    return iv;
}

KeyPair load_keys(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DiskFault("cannot open key file: " + path);
    std::array<char, 48> raw;
    f.read(raw.data(), raw.size());
    if (f.gcount() != 48) throw DiskFault("key file must be exactly 48 bytes");
    KeyPair k;
    std::memcpy(k.block.bytes.data(), raw.data(), 16);
    std::memcpy(k.hash.bytes.data(), raw.data() + 16, 32);
    return k;
}

void save_keys(const std::string& path, const KeyPair& keys) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DiskFault("cannot write key file: " + path);
    f.write(reinterpret_cast<const char*>(keys.block.bytes.data()), 16);
    f.write(reinterpret_cast<const char*>(keys.hash.bytes.data()), 32);
}

KeyPair random_keys(std::mt19937_64& rng) {
    KeyPair k;
    for (auto& b : k.block.bytes) b = static_cast<std::uint8_t>(rng());
    for (auto& b : k.hash.bytes) b = static_cast<std::uint8_t>(rng());
    return k;
}

}  // namespace pac
