#pragma once

#include <cstdint>
#include <functional>
#include <list>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "pac/crypto.hpp"
#include "pac/types.hpp"

namespace pac {

inline constexpr std::uint64_t kNilId = ~std::uint64_t{0};

enum class TreeKind : std::uint8_t { balanced_binary = 0, splay_dynamic = 1 };

struct TreeConfig {
    TreeKind kind = TreeKind::splay_dynamic;
    double splay_probability = 0.01;
    bool splay_window = true;  // ignored for balanced_binary
};

struct MerkleRoot {
    NodeHash hash;
    std::uint64_t version = 0;  // incremented on every completed update
};

/// LRU cache of authenticated node hashes. Entries are inserted only from a
/// verified path or a freshly computed update, so a hit during verification
/// is a valid early-exit anchor.
class HashCache {
public:
    explicit HashCache(std::size_t capacity_entries);

    std::optional<NodeHash> get(std::uint64_t node_id);
    void put(std::uint64_t node_id, const NodeHash& h);

    std::size_t size() const { return map_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::uint64_t hits() const { return hits_; }
    std::uint64_t misses() const { return misses_; }
    void reset_counters() { hits_ = misses_ = 0; }

    void for_each(const std::function<void(std::uint64_t, const NodeHash&)>& fn) const;

private:
    std::size_t capacity_;
    std::list<std::pair<std::uint64_t, NodeHash>> lru_;  // front = most recent
    std::unordered_map<std::uint64_t, decltype(lru_)::iterator> map_;
    std::uint64_t hits_ = 0;
    std::uint64_t misses_ = 0;
};

/// Snapshot of one tree node, used by metadata persistence and by tests that
/// recompute the root independently from the topology.
struct NodeView {
    std::uint64_t id = 0;
    std::uint64_t parent = kNilId;
    std::uint64_t left = kNilId;
    std::uint64_t right = kNilId;
    bool is_leaf = false;
    bool dirty = false;
    NodeHash hash;
    BlockAuthTag tag;  // leaves only
};

/// Merkle tree over per-block auth tags. Internal nodes hold the keyed hash
/// of their children; a leaf holds the digest of its block tag. Supports the
/// implicit-array balanced layout and a self-adjusting splay layout with
/// explicit links.
///
/// Not internally synchronized: the owning engine serializes all access.
class MerkleStore {
public:
    using LeafTagFn = std::function<BlockAuthTag(BlockAddr)>;

    /// Builds a tree of `capacity_blocks` leaves, pulling each initial tag
    /// from `initial_tag`. Capacity 0 is rejected.
    MerkleStore(std::uint64_t capacity_blocks, const TreeConfig& config,
                const HashKey& key, double cache_fraction,
                const LeafTagFn& initial_tag);

    // Throws IntegrityFault (with the mismatch depth) unless the path from
    // leaf(addr) to the root recomputes to the trusted root. Exits early at
    // the first cached ancestor; on success the path is inserted into the
    // cache.
    void verify_leaf(BlockAddr addr, const BlockAuthTag& observed);

    MerkleRoot update_leaf(BlockAddr addr, const BlockAuthTag& new_tag);

    /// Weighted variant: one promotion trial per represented access, for
    /// paths where a single tree touch stands in for several writes.
    void maybe_splay(BlockAddr addr, std::mt19937_64& rng, std::uint64_t accesses);

    /// With probability `splay_probability`, rotates the accessed leaf's
    /// subtree toward the root, recomputing every affected hash. No-op for
    /// the balanced layout.
    void maybe_splay(BlockAddr addr, std::mt19937_64& rng);

    MerkleRoot root() const { return {root_hash(), version_}; }
    NodeHash root_hash() const;
    std::uint64_t capacity() const { return capacity_; }
    const TreeConfig& config() const { return config_; }
    std::size_t node_count() const;
    const BlockAuthTag& leaf_tag(BlockAddr addr) const;
    std::size_t leaf_depth(BlockAddr addr) const;  // edges from root

    /// One-pass bottom-up recomputation over the current topology from leaf
    /// tags only. With `verify_stored`, any stored hash that disagrees with
    /// the recomputation raises IntegrityFault. Used by recovery.
    NodeHash recompute_root(bool verify_stored) const;

    void persist_metadata(const std::string& path);
    static MerkleStore load_metadata(const std::string& path,
                                     const HashKey& key,
                                     double cache_fraction);

    void for_each_node(const std::function<void(const NodeView&)>& fn) const;

    HashCache& cache() { return cache_; }
    const HashCache& cache() const { return cache_; }
    std::uint64_t node_hash_count() const { return node_hash_count_; }
    std::uint64_t leaf_digest_count() const { return leaf_digest_count_; }
    void reset_counters();

    /// Test-mode shadow comparison: every cached hash must equal the hash
    /// stored at that node. Throws std::logic_error on violation.
    void audit_cache() const;

private:
    struct SplayNode {
        NodeHash hash;
        std::uint64_t parent = kNilId;
        std::uint64_t left = kNilId;
        std::uint64_t right = kNilId;
        bool is_leaf = false;
        bool dirty = false;
    };

    MerkleStore(std::uint64_t capacity, const TreeConfig& config,
                const HashKey& key, double cache_fraction);

    // Balanced layout helpers. Node ids are positions in the ragged level
    // array; a leaf's id equals its block address.
    std::size_t level_count() const { return level_off_.size(); }
    std::uint64_t bal_id(std::size_t level, std::uint64_t idx) const {
        return level_off_[level] + idx;
    }
    std::optional<NodeHash> cached_or_stored(std::uint64_t id);

    // Splay layout helpers.
    void splay_build_initial(const LeafTagFn& initial_tag);
    void rotate_up(std::uint64_t x);
    void splay_to_root(std::uint64_t x);
    void recompute_node(std::uint64_t id);
    void recompute_ancestors(std::uint64_t id);
    std::uint64_t splay_target(BlockAddr addr) const;
    NodeHash child_hash(std::uint64_t id) const {
        return id == kNilId ? kZeroHash : nodes_[id].hash;
    }

    NodeHash hash_children(const NodeHash& l, const NodeHash& r) const;
    NodeHash digest_leaf(const BlockAuthTag& tag) const;
    void validate_loaded();
    void for_each_view_at(std::uint64_t id, NodeView& out, bool& found) const;

    std::uint64_t capacity_;
    TreeConfig config_;
    Hmac256 keyed_;
    HashCache cache_;
    std::uint64_t version_ = 0;

    // balanced_binary representation
    std::vector<std::uint64_t> level_off_;
    std::vector<std::uint64_t> level_size_;
    std::vector<NodeHash> hashes_;
    std::vector<bool> dirty_;
    std::vector<BlockAuthTag> tags_;

    // splay_dynamic representation
    std::vector<SplayNode> nodes_;
    std::vector<BlockAuthTag> splay_tags_;  // indexed by leaf id == addr
    std::uint64_t root_id_ = kNilId;

    mutable std::uint64_t node_hash_count_ = 0;
    mutable std::uint64_t leaf_digest_count_ = 0;
};

std::size_t cache_entries_for(std::uint64_t node_count, double fraction);

}  // namespace pac
