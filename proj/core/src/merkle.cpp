#include "pac/merkle.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace pac {
namespace {

constexpr char kMetaMagic[4] = {'P', 'A', 'C', 'M'};
constexpr std::uint32_t kMetaVersion = 1;

void put_u32le(std::uint8_t* p, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint32_t get_u32le(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

std::size_t cache_entries_for(std::uint64_t node_count, double fraction) {
    if (fraction < 0.0) fraction = 0.0;
    if (fraction > 1.0) fraction = 1.0;
    auto n = static_cast<std::size_t>(std::floor(static_cast<double>(node_count) * fraction));
    return std::max<std::size_t>(1, n);
}

HashCache::HashCache(std::size_t capacity_entries)
    : capacity_(std::max<std::size_t>(1, capacity_entries)) {
    map_.reserve(capacity_);
}

std::optional<NodeHash> HashCache::get(std::uint64_t node_id) {
    auto it = map_.find(node_id);
    if (it == map_.end()) {
        ++misses_;
        return std::nullopt;
    }
    ++hits_;
    lru_.splice(lru_.begin(), lru_, it->second);
    return it->second->second;
}

void HashCache::put(std::uint64_t node_id, const NodeHash& h) {
    auto it = map_.find(node_id);
    if (it != map_.end()) {
        it->second->second = h;
        lru_.splice(lru_.begin(), lru_, it->second);
        return;
    }
    if (map_.size() >= capacity_) {
        map_.erase(lru_.back().first);
        lru_.pop_back();
    }
    lru_.emplace_front(node_id, h);
    map_[node_id] = lru_.begin();
}

void HashCache::for_each(const std::function<void(std::uint64_t, const NodeHash&)>& fn) const {
    for (const auto& [id, h] : lru_) fn(id, h);
}

MerkleStore::MerkleStore(std::uint64_t capacity, const TreeConfig& config,
                         const HashKey& key, double cache_fraction)
    : capacity_(capacity), config_(config), keyed_(key), cache_(1) {
    if (capacity_ == 0) throw std::invalid_argument("tree capacity must be positive");
    // Ragged level sizes are shared by both layouts: the splay tree starts in
    // the same shape the balanced layout keeps forever.
    std::uint64_t n = capacity_;
    std::uint64_t off = 0;
    level_off_.push_back(off);
    level_size_.push_back(n);
    while (n > 1) {
        off += n;
        n = (n + 1) / 2;
        level_off_.push_back(off);
        level_size_.push_back(n);
    }
    if (capacity_ == 1) {  // root sits above the single leaf
        level_off_.push_back(1);
        level_size_.push_back(1);
    }
    std::uint64_t total = level_off_.back() + level_size_.back();
    cache_ = HashCache(cache_entries_for(total, cache_fraction));
}

MerkleStore::MerkleStore(std::uint64_t capacity_blocks, const TreeConfig& config,
                         const HashKey& key, double cache_fraction,
                         const LeafTagFn& initial_tag)
    : MerkleStore(capacity_blocks, config, key, cache_fraction) {
    if (config_.kind == TreeKind::balanced_binary) {
        std::uint64_t total = level_off_.back() + 1;
        hashes_.resize(total);
        dirty_.assign(total, false);
        tags_.resize(capacity_);
        for (BlockAddr a = 0; a < capacity_; ++a) {
            tags_[a] = initial_tag(a);
            hashes_[a] = digest_leaf(tags_[a]);
        }
        for (std::size_t lv = 1; lv < level_count(); ++lv) {
            for (std::uint64_t i = 0; i < level_size_[lv]; ++i) {
                std::uint64_t l = 2 * i;
                std::uint64_t r = 2 * i + 1;
                const NodeHash& lh = hashes_[bal_id(lv - 1, l)];
                NodeHash rh = r < level_size_[lv - 1] ? hashes_[bal_id(lv - 1, r)] : kZeroHash;
                hashes_[bal_id(lv, i)] = hash_children(lh, rh);
            }
        }
    } else {
        splay_build_initial(initial_tag);
    }
}

NodeHash MerkleStore::hash_children(const NodeHash& l, const NodeHash& r) const {
    ++node_hash_count_;
    return node_hash(l, r, keyed_);
}

NodeHash MerkleStore::digest_leaf(const BlockAuthTag& tag) const {
    ++leaf_digest_count_;
    return leaf_hash(tag, keyed_);
}

void MerkleStore::splay_build_initial(const LeafTagFn& initial_tag) {
    std::uint64_t total = level_off_.back() + 1;
    nodes_.resize(total);
    splay_tags_.resize(capacity_);
    for (BlockAddr a = 0; a < capacity_; ++a) {
        splay_tags_[a] = initial_tag(a);
        nodes_[a].is_leaf = true;
        nodes_[a].hash = digest_leaf(splay_tags_[a]);
    }
    // Internal ids continue after the leaves, mirroring the level layout.
    std::vector<std::uint64_t> row(capacity_);
    for (std::uint64_t a = 0; a < capacity_; ++a) row[a] = a;
    std::uint64_t next_id = capacity_;
    while (row.size() > 1 || nodes_[row[0]].is_leaf) {
        std::vector<std::uint64_t> up;
        up.reserve((row.size() + 1) / 2);
        for (std::size_t i = 0; i < row.size(); i += 2) {
            std::uint64_t id = next_id++;
            SplayNode& n = nodes_[id];
            n.left = row[i];
            nodes_[row[i]].parent = id;
            if (i + 1 < row.size()) {
                n.right = row[i + 1];
                nodes_[row[i + 1]].parent = id;
            }
            n.hash = hash_children(child_hash(n.left), child_hash(n.right));
            up.push_back(id);
        }
        row = std::move(up);
    }
    root_id_ = row[0];
}

NodeHash MerkleStore::root_hash() const {
    if (config_.kind == TreeKind::balanced_binary) return hashes_.back();
    return nodes_[root_id_].hash;
}

std::size_t MerkleStore::node_count() const {
    return config_.kind == TreeKind::balanced_binary ? hashes_.size() : nodes_.size();
}

const BlockAuthTag& MerkleStore::leaf_tag(BlockAddr addr) const {
    if (addr >= capacity_) throw std::out_of_range("block address past capacity");
    return config_.kind == TreeKind::balanced_binary ? tags_[addr] : splay_tags_[addr];
}

std::size_t MerkleStore::leaf_depth(BlockAddr addr) const {
    if (config_.kind == TreeKind::balanced_binary) return level_count() - 1;
    std::size_t d = 0;
    for (std::uint64_t id = addr; nodes_[id].parent != kNilId; id = nodes_[id].parent) ++d;
    return d;
}

std::optional<NodeHash> MerkleStore::cached_or_stored(std::uint64_t id) {
    if (auto c = cache_.get(id)) return c;
    return std::nullopt;
}

void MerkleStore::verify_leaf(BlockAddr addr, const BlockAuthTag& observed) {
    if (addr >= capacity_) throw std::out_of_range("block address past capacity");
    NodeHash cur = digest_leaf(observed);
    // (node id, recomputed hash) pairs are cached only after the path is
    // anchored to trusted state.
    std::vector<std::pair<std::uint64_t, NodeHash>> path;
    const std::size_t full_depth = leaf_depth(addr);

    auto accept = [&] {
        for (const auto& [id, h] : path) cache_.put(id, h);
    };
    auto check_anchor = [&](std::uint64_t id, const NodeHash& computed,
                            std::size_t depth) -> bool {
        if (auto c = cache_.get(id)) {
            if (*c != computed)
                throw IntegrityFault("merkle path mismatch at cached node", static_cast<int>(depth));
            accept();
            return true;
        }
        path.emplace_back(id, computed);
        return false;
    };

    if (config_.kind == TreeKind::balanced_binary) {
        if (check_anchor(addr, cur, full_depth)) return;
        std::uint64_t i = addr;
        for (std::size_t lv = 0; lv + 1 < level_count(); ++lv) {
            std::uint64_t sib = i ^ 1;
            NodeHash sib_h = kZeroHash;
            if (sib < level_size_[lv]) {
                std::uint64_t sid = bal_id(lv, sib);
                if (auto c = cached_or_stored(sid)) {
                    sib_h = *c;
                } else {
                    sib_h = hashes_[sid];
                    cache_.put(sid, sib_h);
                }
            }
            cur = (i & 1) ? hash_children(sib_h, cur) : hash_children(cur, sib_h);
            i >>= 1;
            std::uint64_t pid = bal_id(lv + 1, i);
            std::size_t pdepth = level_count() - 2 - lv;
            if (lv + 2 == level_count()) {
                if (cur != hashes_.back())
                    throw IntegrityFault("merkle root mismatch", 0);
                path.emplace_back(pid, cur);
                accept();
                return;
            }
            if (check_anchor(pid, cur, pdepth)) return;
        }
        return;  // capacity_ == 1 handled by the loop's root case
    }

    std::uint64_t id = addr;
    if (check_anchor(id, cur, full_depth)) return;
    std::size_t depth = full_depth;
    while (nodes_[id].parent != kNilId) {
        std::uint64_t pid = nodes_[id].parent;
        const SplayNode& p = nodes_[pid];
        bool is_left = p.left == id;
        std::uint64_t sib = is_left ? p.right : p.left;
        NodeHash sib_h = kZeroHash;
        if (sib != kNilId) {
            if (auto c = cached_or_stored(sib)) {
                sib_h = *c;
            } else {
                sib_h = nodes_[sib].hash;
                cache_.put(sib, sib_h);
            }
        }
        cur = is_left ? hash_children(cur, sib_h) : hash_children(sib_h, cur);
        id = pid;
        --depth;
        if (id == root_id_) {
            if (cur != nodes_[root_id_].hash)
                throw IntegrityFault("merkle root mismatch", 0);
            path.emplace_back(id, cur);
            accept();
            return;
        }
        if (check_anchor(id, cur, depth)) return;
    }
}

MerkleRoot MerkleStore::update_leaf(BlockAddr addr, const BlockAuthTag& new_tag) {
    if (addr >= capacity_) throw std::out_of_range("block address past capacity");
    NodeHash cur = digest_leaf(new_tag);
    if (config_.kind == TreeKind::balanced_binary) {
        tags_[addr] = new_tag;
        hashes_[addr] = cur;
        dirty_[addr] = true;
        cache_.put(addr, cur);
        std::uint64_t i = addr;
        for (std::size_t lv = 0; lv + 1 < level_count(); ++lv) {
            std::uint64_t sib = i ^ 1;
            NodeHash sib_h = kZeroHash;
            if (sib < level_size_[lv]) {
                std::uint64_t sid = bal_id(lv, sib);
                if (auto c = cached_or_stored(sid)) {
                    sib_h = *c;
                } else {
                    sib_h = hashes_[sid];
                    cache_.put(sid, sib_h);
                }
            }
            cur = (i & 1) ? hash_children(sib_h, cur) : hash_children(cur, sib_h);
            i >>= 1;
            std::uint64_t pid = bal_id(lv + 1, i);
            hashes_[pid] = cur;
            dirty_[pid] = true;
            cache_.put(pid, cur);
        }
    } else {
        splay_tags_[addr] = new_tag;
        nodes_[addr].hash = cur;
        nodes_[addr].dirty = true;
        cache_.put(addr, cur);
        std::uint64_t id = addr;
        while (nodes_[id].parent != kNilId) {
            std::uint64_t pid = nodes_[id].parent;
            const SplayNode& p = nodes_[pid];
            bool is_left = p.left == id;
            std::uint64_t sib = is_left ? p.right : p.left;
            NodeHash sib_h = kZeroHash;
            if (sib != kNilId) {
                if (auto c = cached_or_stored(sib)) {
                    sib_h = *c;
                } else {
                    sib_h = nodes_[sib].hash;
                    cache_.put(sib, sib_h);
                }
            }
            cur = is_left ? hash_children(cur, sib_h) : hash_children(sib_h, cur);
            nodes_[pid].hash = cur;
            nodes_[pid].dirty = true;
            cache_.put(pid, cur);
            id = pid;
        }
    }
    ++version_;
    return {cur, version_};
}

void MerkleStore::recompute_node(std::uint64_t id) {
    SplayNode& n = nodes_[id];
    n.hash = hash_children(child_hash(n.left), child_hash(n.right));
    n.dirty = true;
    cache_.put(id, n.hash);
}

void MerkleStore::recompute_ancestors(std::uint64_t id) {
    for (std::uint64_t p = nodes_[id].parent; p != kNilId; p = nodes_[p].parent)
        recompute_node(p);
}

void MerkleStore::rotate_up(std::uint64_t x) {
    std::uint64_t p = nodes_[x].parent;
    assert(p != kNilId);
    std::uint64_t g = nodes_[p].parent;
    if (nodes_[p].left == x) {
        nodes_[p].left = nodes_[x].right;
        if (nodes_[x].right != kNilId) nodes_[nodes_[x].right].parent = p;
        nodes_[x].right = p;
    } else {
        nodes_[p].right = nodes_[x].left;
        if (nodes_[x].left != kNilId) nodes_[nodes_[x].left].parent = p;
        nodes_[x].left = p;
    }
    nodes_[p].parent = x;
    nodes_[x].parent = g;
    if (g == kNilId) {
        root_id_ = x;
    } else if (nodes_[g].left == p) {
        nodes_[g].left = x;
    } else {
        nodes_[g].right = x;
    }
    // Only the two rotated nodes change children; recompute bottom-up.
    recompute_node(p);
    recompute_node(x);
}

void MerkleStore::splay_to_root(std::uint64_t x) {
    while (nodes_[x].parent != kNilId) {
        std::uint64_t p = nodes_[x].parent;
        std::uint64_t g = nodes_[p].parent;
        if (g == kNilId) {
            rotate_up(x);
        } else if ((nodes_[g].left == p) == (nodes_[p].left == x)) {
            rotate_up(p);  // zig-zig
            rotate_up(x);
        } else {
            rotate_up(x);  // zig-zag
            rotate_up(x);
        }
    }
}

std::uint64_t MerkleStore::splay_target(BlockAddr addr) const {
    std::uint64_t target = nodes_[addr].parent;
    if (target == kNilId) return kNilId;
    if (config_.splay_window) {
        // Keep rotations in the upper half of the access path: lift the
        // target to the ancestor halfway between the leaf's parent and root.
        std::size_t d = 0;
        for (std::uint64_t id = target; nodes_[id].parent != kNilId; id = nodes_[id].parent) ++d;
        std::size_t climb = d - d / 2;
        for (std::size_t k = 0; k < climb; ++k) target = nodes_[target].parent;
    }
    return target;
}

void MerkleStore::maybe_splay(BlockAddr addr, std::mt19937_64& rng) {
    maybe_splay(addr, rng, 1);
}

void MerkleStore::maybe_splay(BlockAddr addr, std::mt19937_64& rng,
                              std::uint64_t accesses) {
    if (config_.kind != TreeKind::splay_dynamic) return;
    if (addr >= capacity_) throw std::out_of_range("block address past capacity");
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    // One trial per represented access: a tree touch standing in for k
    // superseded writes adapts as k independent touches would, keeping the
    // promotion rate tied to write frequency rather than apply frequency.
    double p = accesses <= 1
                   ? config_.splay_probability
                   : 1.0 - std::pow(1.0 - config_.splay_probability,
                                    static_cast<double>(accesses));
    if (coin(rng) >= p) return;
    std::uint64_t target = splay_target(addr);
    if (target == kNilId || target == root_id_) return;
    splay_to_root(target);
}

NodeHash MerkleStore::recompute_root(bool verify_stored) const {
    if (config_.kind == TreeKind::balanced_binary) {
        std::vector<NodeHash> below(capacity_);
        for (BlockAddr a = 0; a < capacity_; ++a) {
            below[a] = digest_leaf(tags_[a]);
            if (verify_stored && below[a] != hashes_[a])
                throw IntegrityFault("stored leaf hash mismatch");
        }
        for (std::size_t lv = 1; lv < level_count(); ++lv) {
            std::vector<NodeHash> row(level_size_[lv]);
            for (std::uint64_t i = 0; i < level_size_[lv]; ++i) {
                NodeHash rh = 2 * i + 1 < level_size_[lv - 1] ? below[2 * i + 1] : kZeroHash;
                row[i] = hash_children(below[2 * i], rh);
                if (verify_stored && row[i] != hashes_[bal_id(lv, i)])
                    throw IntegrityFault("stored node hash mismatch");
            }
            below = std::move(row);
        }
        return below[0];
    }
    // Iterative post-order; recursion depth is unbounded after splays.
    std::vector<NodeHash> computed(nodes_.size());
    std::vector<std::pair<std::uint64_t, bool>> stack{{root_id_, false}};
    while (!stack.empty()) {
        auto [id, expanded] = stack.back();
        stack.pop_back();
        const SplayNode& n = nodes_[id];
        if (n.is_leaf) {
            computed[id] = digest_leaf(splay_tags_[id]);
        } else if (!expanded) {
            stack.emplace_back(id, true);
            if (n.left != kNilId) stack.emplace_back(n.left, false);
            if (n.right != kNilId) stack.emplace_back(n.right, false);
            continue;
        } else {
            computed[id] = hash_children(
                n.left == kNilId ? kZeroHash : computed[n.left],
                n.right == kNilId ? kZeroHash : computed[n.right]);
        }
        if (verify_stored && computed[id] != n.hash)
            throw IntegrityFault("stored node hash mismatch");
    }
    return computed[root_id_];
}

void MerkleStore::for_each_node(const std::function<void(const NodeView&)>& fn) const {
    NodeView v;
    if (config_.kind == TreeKind::balanced_binary) {
        for (std::uint64_t id = 0; id < hashes_.size(); ++id) {
            auto lv_it = std::upper_bound(level_off_.begin(), level_off_.end(), id);
            std::size_t lv = static_cast<std::size_t>(lv_it - level_off_.begin()) - 1;
            std::uint64_t i = id - level_off_[lv];
            v.id = id;
            v.parent = lv + 1 < level_count() ? bal_id(lv + 1, i / 2) : kNilId;
            v.is_leaf = lv == 0;
            if (v.is_leaf) {
                v.left = v.right = kNilId;
                v.tag = tags_[id];
            } else {
                std::uint64_t l = 2 * i;
                std::uint64_t r = 2 * i + 1;
                v.left = l < level_size_[lv - 1] ? bal_id(lv - 1, l) : kNilId;
                v.right = r < level_size_[lv - 1] ? bal_id(lv - 1, r) : kNilId;
                v.tag = BlockAuthTag{};
            }
            v.dirty = dirty_[id];
            v.hash = hashes_[id];
            fn(v);
        }
        return;
    }
    for (std::uint64_t id = 0; id < nodes_.size(); ++id) {
        const SplayNode& n = nodes_[id];
        v.id = id;
        v.parent = n.parent;
        v.left = n.left;
        v.right = n.right;
        v.is_leaf = n.is_leaf;
        v.dirty = n.dirty;
        v.hash = n.hash;
        v.tag = n.is_leaf ? splay_tags_[id] : BlockAuthTag{};
        fn(v);
    }
}

void MerkleStore::reset_counters() {
    node_hash_count_ = 0;
    leaf_digest_count_ = 0;
    cache_.reset_counters();
}

void MerkleStore::audit_cache() const {
    cache_.for_each([&](std::uint64_t id, const NodeHash& h) {
        const NodeHash& stored = config_.kind == TreeKind::balanced_binary
                                     ? hashes_[id]
                                     : nodes_[id].hash;
        if (!(h == stored)) throw std::logic_error("cache entry diverged from tree");
    });
}

namespace {

constexpr std::size_t kHeaderBytes = 4 + 4 + 8 + 1 + 8;
constexpr std::size_t kNodeBytesInternal = 8 + 8 + 8 + 8 + 1 + 32;
constexpr std::size_t kNodeBytesLeaf = kNodeBytesInternal + sizeof(BlockAuthTag::mac) + sizeof(BlockAuthTag::iv);

}  // namespace

void MerkleStore::persist_metadata(const std::string& path) {
    std::string tmp = path + ".tmp";
    FilePtr f(std::fopen(tmp.c_str(), "wb"));
    if (!f) throw DiskFault("cannot open metadata file for writing: " + tmp);

    std::uint8_t hdr[kHeaderBytes + 8];
    std::memcpy(hdr, kMetaMagic, 4);
    put_u32le(hdr + 4, kMetaVersion);
    put_u64le(hdr + 8, capacity_);
    std::uint8_t kind_byte = config_.kind == TreeKind::balanced_binary ? 0
                             : config_.splay_window                    ? 2
                                                                       : 1;
    hdr[16] = kind_byte;
    std::memcpy(hdr + 17, &config_.splay_probability, 8);
    put_u64le(hdr + kHeaderBytes, node_count());
    if (std::fwrite(hdr, 1, sizeof hdr, f.get()) != sizeof hdr)
        throw DiskFault("metadata header write failed");

    bool ok = true;
    for_each_node([&](const NodeView& v) {
        std::uint8_t rec[kNodeBytesLeaf];
        put_u64le(rec + 0, v.id);
        put_u64le(rec + 8, v.parent);
        put_u64le(rec + 16, v.left);
        put_u64le(rec + 24, v.right);
        rec[32] = v.is_leaf ? 1 : 0;
        std::memcpy(rec + 33, v.hash.bytes.data(), 32);
        std::size_t len = kNodeBytesInternal;
        if (v.is_leaf) {
            std::memcpy(rec + 65, v.tag.mac.data(), 16);
            std::memcpy(rec + 81, v.tag.iv.data(), 12);
            len = kNodeBytesLeaf;
        }
        if (std::fwrite(rec, 1, len, f.get()) != len) ok = false;
    });
    if (!ok || std::fflush(f.get()) != 0) throw DiskFault("metadata write failed");
    f.reset();
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw DiskFault("metadata rename failed: " + path);

    if (config_.kind == TreeKind::balanced_binary) {
        dirty_.assign(dirty_.size(), false);
    } else {
        for (auto& n : nodes_) n.dirty = false;
    }
}

MerkleStore MerkleStore::load_metadata(const std::string& path, const HashKey& key,
                                       double cache_fraction) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw MetadataCorrupt("cannot open metadata file: " + path);

    std::uint8_t hdr[kHeaderBytes + 8];
    if (std::fread(hdr, 1, sizeof hdr, f.get()) != sizeof hdr)
        throw MetadataCorrupt("metadata header truncated");
    if (std::memcmp(hdr, kMetaMagic, 4) != 0) throw MetadataCorrupt("bad metadata magic");
    if (get_u32le(hdr + 4) != kMetaVersion) throw MetadataCorrupt("bad metadata version");
    std::uint64_t capacity = get_u64le(hdr + 8);
    std::uint8_t kind_byte = hdr[16];
    if (capacity == 0 || kind_byte > 2) throw MetadataCorrupt("bad metadata header fields");
    double p;
    std::memcpy(&p, hdr + 17, 8);
    if (!(p >= 0.0 && p <= 1.0)) throw MetadataCorrupt("splay probability out of range");
    std::uint64_t count = get_u64le(hdr + kHeaderBytes);

    TreeConfig cfg;
    cfg.kind = kind_byte == 0 ? TreeKind::balanced_binary : TreeKind::splay_dynamic;
    cfg.splay_probability = p;
    cfg.splay_window = kind_byte == 2;

    MerkleStore s(capacity, cfg, key, cache_fraction);
    std::uint64_t expect = s.level_off_.back() + 1;
    if (count != expect) throw MetadataCorrupt("node count does not match capacity");

    if (cfg.kind == TreeKind::balanced_binary) {
        s.hashes_.resize(count);
        s.dirty_.assign(count, false);
        s.tags_.resize(capacity);
    } else {
        s.nodes_.resize(count);
        s.splay_tags_.resize(capacity);
    }

    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint8_t rec[kNodeBytesLeaf];
        if (std::fread(rec, 1, kNodeBytesInternal, f.get()) != kNodeBytesInternal)
            throw MetadataCorrupt("metadata record truncated");
        std::uint64_t id = get_u64le(rec + 0);
        std::uint64_t parent = get_u64le(rec + 8);
        std::uint64_t left = get_u64le(rec + 16);
        std::uint64_t right = get_u64le(rec + 24);
        if (rec[32] > 1) throw MetadataCorrupt("non-canonical leaf flag");
        bool is_leaf = rec[32] == 1;
        if (id != i) throw MetadataCorrupt("metadata records out of order");
        if (is_leaf != (id < capacity))
            throw MetadataCorrupt("leaf flag does not match id range");
        BlockAuthTag tag{};
        if (is_leaf) {
            if (std::fread(rec + kNodeBytesInternal, 1,
                           kNodeBytesLeaf - kNodeBytesInternal,
                           f.get()) != kNodeBytesLeaf - kNodeBytesInternal)
                throw MetadataCorrupt("metadata leaf record truncated");
            std::memcpy(tag.mac.data(), rec + 65, 16);
            std::memcpy(tag.iv.data(), rec + 81, 12);
        }
        NodeHash h;
        std::memcpy(h.bytes.data(), rec + 33, 32);

        if (cfg.kind == TreeKind::balanced_binary) {
            s.hashes_[id] = h;
            if (is_leaf) s.tags_[id] = tag;
            // Link fields are implied by the layout; a record that disagrees
            // is structural corruption.
            NodeView expect_v;
            bool found = false;
            s.for_each_view_at(id, expect_v, found);
            if (!found || expect_v.parent != parent || expect_v.left != left ||
                expect_v.right != right)
                throw MetadataCorrupt("balanced layout links are inconsistent");
        } else {
            SplayNode& n = s.nodes_[id];
            n.hash = h;
            n.parent = parent;
            n.left = left;
            n.right = right;
            n.is_leaf = is_leaf;
            if (is_leaf) s.splay_tags_[id] = tag;
        }
    }
    std::uint8_t extra;
    if (std::fread(&extra, 1, 1, f.get()) == 1)
        throw MetadataCorrupt("trailing bytes after metadata records");
    s.validate_loaded();
    return s;
}

void MerkleStore::validate_loaded() {
    if (config_.kind == TreeKind::balanced_binary) return;
    std::uint64_t root = kNilId;
    for (std::uint64_t id = 0; id < nodes_.size(); ++id) {
        const SplayNode& n = nodes_[id];
        if (n.is_leaf && (n.left != kNilId || n.right != kNilId))
            throw MetadataCorrupt("leaf with children");
        if (n.parent == kNilId) {
            if (root != kNilId) throw MetadataCorrupt("multiple roots");
            root = id;
        } else {
            if (n.parent >= nodes_.size()) throw MetadataCorrupt("parent id out of range");
            const SplayNode& p = nodes_[n.parent];
            if (p.left != id && p.right != id)
                throw MetadataCorrupt("parent link not reciprocated");
        }
        for (std::uint64_t c : {n.left, n.right}) {
            if (c == kNilId) continue;
            if (c >= nodes_.size() || nodes_[c].parent != id)
                throw MetadataCorrupt("child link not reciprocated");
        }
    }
    if (root == kNilId) throw MetadataCorrupt("no root node");
    // In-order traversal must visit every node once and the leaves in
    // address order; anything else is a mangled topology.
    std::vector<std::pair<std::uint64_t, bool>> stack{{root, false}};
    std::uint64_t visited = 0;
    std::uint64_t next_leaf = 0;
    while (!stack.empty()) {
        auto [id, expanded] = stack.back();
        stack.pop_back();
        const SplayNode& n = nodes_[id];
        if (!expanded) {
            if (++visited > nodes_.size()) throw MetadataCorrupt("cycle in topology");
            if (n.right != kNilId) stack.emplace_back(n.right, false);
            stack.emplace_back(id, true);
            if (n.left != kNilId) stack.emplace_back(n.left, false);
        } else if (n.is_leaf) {
            if (id != next_leaf++) throw MetadataCorrupt("leaves out of order");
        }
    }
    if (visited != nodes_.size()) throw MetadataCorrupt("unreachable nodes");
    if (next_leaf != capacity_) throw MetadataCorrupt("missing leaves");
    root_id_ = root;
}

void MerkleStore::for_each_view_at(std::uint64_t id, NodeView& out, bool& found) const {
    auto lv_it = std::upper_bound(level_off_.begin(), level_off_.end(), id);
    std::size_t lv = static_cast<std::size_t>(lv_it - level_off_.begin()) - 1;
    if (id >= level_off_[lv] + level_size_[lv]) {
        found = false;
        return;
    }
    std::uint64_t i = id - level_off_[lv];
    out.id = id;
    out.parent = lv + 1 < level_count() ? bal_id(lv + 1, i / 2) : kNilId;
    out.is_leaf = lv == 0;
    if (out.is_leaf) {
        out.left = out.right = kNilId;
    } else {
        std::uint64_t l = 2 * i;
        std::uint64_t r = 2 * i + 1;
        out.left = l < level_size_[lv - 1] ? bal_id(lv - 1, l) : kNilId;
        out.right = r < level_size_[lv - 1] ? bal_id(lv - 1, r) : kNilId;
    }
    found = true;
}

}  // namespace pac
