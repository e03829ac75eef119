// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "chunkkv/attn_context.hpp"
#include "chunkkv/chunk.hpp"
#include "chunkkv/chunk_allocator.hpp"
#include "chunkkv/common.hpp"

namespace chunkkv {

struct TreeOptions {
    /// When false every sequence becomes a fresh root (the non-sharing baseline).
    bool prefix_matching = true;
    /// Minimum number of covering sequences for a chunk to be scheduled in the chunk-first phase.
    std::size_t share_threshold = 2;
};

struct InsertResult {
    SeqId id = 0;
    std::size_t matched_tokens = 0;
};

/// Fills keys/values for absolute positions [begin, end) into the given chunk rows.
using KvSupplier = std::function<void(std::size_t begin, std::size_t end, KvRows rows)>;

/**
 * Prefix-aware KV cache: a forest of chunks where every root-to-leaf path is
 * the token sequence of one or more live sequences.
 *
 * Only complete chunks are shared, so a chunk with ref_count > 1 is always
 * full and never mutated. Children are ordered by first token, then by
 * insertion, which fixes the depth-first batch order.
 *
 * Not thread-safe; the caller serializes all mutations.
 */
class PrefixTree {
public:
    explicit PrefixTree(ChunkAllocator& alloc, TreeOptions opts = {})
        : alloc_(&alloc), cfg_(alloc.config()), opts_(opts) {
        if (opts_.share_threshold < 2) throw ContractError("share_threshold must be >= 2");
    }

    PrefixTree(const PrefixTree&) = delete;
    PrefixTree& operator=(const PrefixTree&) = delete;

    ~PrefixTree() { clear(); }

    const ModelConfig& config() const { return cfg_; }
    const TreeOptions& options() const { return opts_; }
    ChunkAllocator& allocator() { return *alloc_; }
    const ChunkAllocator& allocator() const { return *alloc_; }

    /// Bumped on every structural change: join, leave, or a leaf growing a new chunk.
    std::uint64_t epoch() const { return epoch_; }

    InsertResult insert_sequence(std::span<const TokenId> tokens, const KvSupplier& supplier) {
        if (tokens.empty()) throw ContractError("insert_sequence: empty token list");
        const std::size_t c = cfg_.chunk_capacity;

        std::vector<Chunk*> path;
        path.reserve((tokens.size() + c - 1) / c);
        std::size_t pos = 0;
        Chunk* parent = nullptr;

        if (opts_.prefix_matching) {
            while (tokens.size() - pos >= c) {
                Chunk* hit = find_full_child(parent, tokens.subspan(pos, c));
                if (hit == nullptr) break;
                path.push_back(hit);
                parent = hit;
                pos += c;
            }
        }
        const std::size_t matched = pos;

        // Acquire the private suffix up front so a capacity failure leaves the tree untouched.
        std::vector<Chunk*> fresh;
        try {
            for (std::size_t p = pos; p < tokens.size(); p += c) fresh.push_back(alloc_->acquire());
        } catch (...) {
            for (Chunk* ch : fresh) alloc_->release(ch);
            throw;
        }

        for (Chunk* ch : path) ++ch->ref_count_;
        for (Chunk* ch : fresh) {
            const std::size_t len = std::min(c, tokens.size() - pos);
            ch->tokens_.assign(tokens.begin() + static_cast<std::ptrdiff_t>(pos),
                               tokens.begin() + static_cast<std::ptrdiff_t>(pos + len));
            ch->start_pos_ = pos;
            ch->ref_count_ = 1;
            if (supplier) supplier(pos, pos + len, KvRows(*ch, 0, len));
            attach(parent, ch);
            path.push_back(ch);
            parent = ch;
            pos += len;
        }

        const SeqId id = next_seq_id_++;
        seqs_.emplace(id, SeqRecord{std::move(path), tokens.size()});
        ++epoch_;
        return {id, matched};
    }

    /// Appends one decoded token with its per-head key/value rows (layout [head][dim]).
    void append_token(SeqId id, TokenId token, std::span<const float> key, std::span<const float> value) {
        SeqRecord& rec = record(id);
        const std::size_t hd = cfg_.num_heads * cfg_.head_dim;
        if (key.size() != hd || value.size() != hd)
            throw ShapeError("append_token: key/value must hold heads*head_dim floats");

        Chunk* leaf = rec.path.back();
        if (leaf->ref_count_ > 1 || leaf->full()) {
            // Shared chunks are always full, so the new leaf starts on a chunk boundary.
            assert(leaf->full());
            assert(rec.length % cfg_.chunk_capacity == 0);
            Chunk* fresh = alloc_->acquire();
            fresh->start_pos_ = rec.length;
            fresh->ref_count_ = 1;
            fresh->tokens_.push_back(token);
            attach(leaf, fresh);
            rec.path.push_back(fresh);
            leaf = fresh;
            ++epoch_;
        } else {
            leaf->tokens_.push_back(token);
        }

        const std::size_t slot = leaf->size() - 1;
        KvRows rows(*leaf, slot, 1);
        for (std::size_t h = 0; h < cfg_.num_heads; ++h) {
            std::copy_n(key.begin() + static_cast<std::ptrdiff_t>(h * cfg_.head_dim), cfg_.head_dim,
                        rows.key(h, 0).begin());
            std::copy_n(value.begin() + static_cast<std::ptrdiff_t>(h * cfg_.head_dim), cfg_.head_dim,
                        rows.value(h, 0).begin());
        }
        ++rec.length;
    }

    /// Drops the sequence's path; returns how many chunks went back to the allocator.
    std::size_t remove_sequence(SeqId id) {
        auto it = seqs_.find(id);
        if (it == seqs_.end()) throw UnknownSequenceError(id);
        std::vector<Chunk*> path = std::move(it->second.path);
        seqs_.erase(it);

        std::size_t released = 0;
        for (auto rit = path.rbegin(); rit != path.rend(); ++rit) {
            Chunk* ch = *rit;
            assert(ch->ref_count_ > 0);
            if (--ch->ref_count_ == 0) {
                assert(ch->children_.empty());
                detach(ch);
                alloc_->release(ch);
                ++released;
            }
        }
        ++epoch_;
        return released;
    }

    /// Removes every live sequence.
    void clear() {
        while (!seqs_.empty()) remove_sequence(seqs_.begin()->first);
    }

    /// Kernel schedule for the current epoch; rebuilt only after a structural change.
    std::shared_ptr<const AttnContext> build_context() {
        if (ctx_ && ctx_->epoch == epoch_) return ctx_;
        ctx_ = make_context();
        ++context_builds_;
        return ctx_;
    }

    /// Number of times build_context had to regenerate the schedule.
    std::size_t context_builds() const { return context_builds_; }

    bool contains(SeqId id) const { return seqs_.count(id) != 0; }
    std::size_t num_sequences() const { return seqs_.size(); }

    std::size_t sequence_length(SeqId id) const { return record(id).length; }

    std::span<Chunk* const> path(SeqId id) const { return record(id).path; }

    std::vector<TokenId> sequence_tokens(SeqId id) const {
        std::vector<TokenId> out;
        for (const Chunk* ch : record(id).path) out.insert(out.end(), ch->tokens().begin(), ch->tokens().end());
        return out;
    }

    /// Live sequence ids in ascending (insertion) order.
    std::vector<SeqId> sequence_ids() const {
        std::vector<SeqId> ids;
        ids.reserve(seqs_.size());
        for (const auto& [id, rec] : seqs_) ids.push_back(id);
        return ids;
    }

    std::span<Chunk* const> roots() const { return roots_; }

    /// Visits every chunk in depth-first pre-order (children in schedule order).
    template <typename Fn>
    void for_each_chunk(Fn&& fn) const {
        std::vector<const Chunk*> stack(roots_.rbegin(), roots_.rend());
        while (!stack.empty()) {
            const Chunk* ch = stack.back();
            stack.pop_back();
            fn(*ch);
            for (auto it = ch->children_.rbegin(); it != ch->children_.rend(); ++it) stack.push_back(*it);
        }
    }

    std::size_t chunk_count() const {
        std::size_t n = 0;
        for_each_chunk([&](const Chunk&) { ++n; });
        return n;
    }

private:
    struct SeqRecord {
        std::vector<Chunk*> path;
        std::size_t length = 0;
    };

    SeqRecord& record(SeqId id) {
        auto it = seqs_.find(id);
        if (it == seqs_.end()) throw UnknownSequenceError(id);
        return it->second;
    }
    const SeqRecord& record(SeqId id) const {
        auto it = seqs_.find(id);
        if (it == seqs_.end()) throw UnknownSequenceError(id);
        return it->second;
    }

    std::vector<Chunk*>& siblings(Chunk* parent) { return parent ? parent->children_ : roots_; }

    static bool child_before(const Chunk* a, const Chunk* b) {
        if (a->first_token() != b->first_token()) return a->first_token() < b->first_token();
        return a->insertion_ < b->insertion_;
    }

    Chunk* find_full_child(Chunk* parent, std::span<const TokenId> window) {
        auto& sibs = siblings(parent);
        auto lo = std::lower_bound(sibs.begin(), sibs.end(), window.front(),
                                   [](const Chunk* ch, TokenId t) { return ch->first_token() < t; });
        for (auto it = lo; it != sibs.end() && (*it)->first_token() == window.front(); ++it) {
            Chunk* ch = *it;
            if (ch->full() && std::equal(window.begin(), window.end(), ch->tokens_.begin())) return ch;
        }
        return nullptr;
    }

    void attach(Chunk* parent, Chunk* ch) {
        assert(!ch->empty());
        ch->parent_ = parent;
        ch->insertion_ = next_insertion_++;
        auto& sibs = siblings(parent);
        sibs.insert(std::upper_bound(sibs.begin(), sibs.end(), ch, child_before), ch);
    }

    void detach(Chunk* ch) {
        auto& sibs = siblings(ch->parent_);
        auto it = std::find(sibs.begin(), sibs.end(), ch);
        assert(it != sibs.end());
        sibs.erase(it);
        ch->parent_ = nullptr;
    }

    std::shared_ptr<AttnContext> make_context() {
        auto ctx = std::make_shared<AttnContext>();
        ctx->epoch = epoch_;
        const std::size_t b = seqs_.size();
        ctx->order.reserve(b);

        std::unordered_map<const Chunk*, std::vector<SeqId>> terminals;
        for (const auto& [id, rec] : seqs_) terminals[rec.path.back()].push_back(id);

        std::unordered_map<const Chunk*, std::size_t> entry_of;
        std::vector<const Chunk*> stack(roots_.rbegin(), roots_.rend());
        while (!stack.empty()) {
            const Chunk* ch = stack.back();
            stack.pop_back();
            const std::size_t first = ctx->order.size();
            if (ch->ref_count_ >= opts_.share_threshold) {
                entry_of.emplace(ch, ctx->shared_entries.size());
                ctx->shared_entries.push_back({ch, first, first + ch->ref_count_ - 1});
            }
            if (auto t = terminals.find(ch); t != terminals.end())
                for (SeqId id : t->second) ctx->order.push_back(id);
            for (auto it = ch->children_.rbegin(); it != ch->children_.rend(); ++it) stack.push_back(*it);
        }
        assert(ctx->order.size() == b);

        ctx->shared_path.resize(b);
        ctx->private_entries.resize(b);
        for (std::size_t i = 0; i < b; ++i) {
            const SeqId id = ctx->order[i];
            ctx->index.emplace(id, i);
            for (const Chunk* ch : seqs_.at(id).path) {
                if (auto e = entry_of.find(ch); e != entry_of.end())
                    ctx->shared_path[i].push_back(e->second);
                else
                    ctx->private_entries[i].push_back(ch);
            }
        }
        return ctx;
    }

    ChunkAllocator* alloc_;
    ModelConfig cfg_;
    TreeOptions opts_;
    std::vector<Chunk*> roots_;
    std::map<SeqId, SeqRecord> seqs_;
    SeqId next_seq_id_ = 0;
    std::uint64_t next_insertion_ = 0;
    std::uint64_t epoch_ = 0;
    std::shared_ptr<const AttnContext> ctx_;
    std::size_t context_builds_ = 0;
};

} // namespace chunkkv
