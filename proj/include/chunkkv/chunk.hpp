// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

#include "chunkkv/common.hpp"

namespace chunkkv {

/**
 * A fixed-capacity slice of KV cache: up to c tokens plus their keys and
 * values for every head.
 *
 * Storage layout for both keys and values is [head][slot][dim], so the rows
 * of one head form a dense (c x d) matrix that the attention kernels read
 * with stride d. Slots past size() hold stale data.
 *
 * Chunks are owned by a ChunkAllocator; the prefix tree links them through
 * non-owning pointers.
 */
class Chunk {
public:
    Chunk(ChunkId id, const ModelConfig& cfg)
        : id_(id),
          heads_(cfg.num_heads),
          capacity_(cfg.chunk_capacity),
          dim_(cfg.head_dim),
          keys_(cfg.chunk_floats()),
          values_(cfg.chunk_floats()) {
        tokens_.reserve(capacity_);
    }

    Chunk(const Chunk&) = delete;
    Chunk& operator=(const Chunk&) = delete;

    ChunkId id() const { return id_; }
    std::size_t size() const { return tokens_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool full() const { return tokens_.size() == capacity_; }
    bool empty() const { return tokens_.empty(); }
    std::size_t start_pos() const { return start_pos_; }
    std::size_t ref_count() const { return ref_count_; }
    std::size_t num_heads() const { return heads_; }
    std::size_t head_dim() const { return dim_; }

    std::span<const TokenId> tokens() const { return tokens_; }
    TokenId first_token() const { return tokens_.front(); }
    TokenId last_token() const { return tokens_.back(); }

    const Chunk* parent() const { return parent_; }
    Chunk* parent() { return parent_; }
    std::span<Chunk* const> children() const { return children_; }

    /// Dense (c x d) key block of one head; only the first size() rows are valid.
    const float* keys(std::size_t head) const { return keys_.data() + head * capacity_ * dim_; }
    const float* values(std::size_t head) const { return values_.data() + head * capacity_ * dim_; }
    float* keys(std::size_t head) { return keys_.data() + head * capacity_ * dim_; }
    float* values(std::size_t head) { return values_.data() + head * capacity_ * dim_; }

private:
    friend class ChunkAllocator;
    friend class PrefixTree;

    void reset() {
        tokens_.clear();
        start_pos_ = 0;
        ref_count_ = 0;
        parent_ = nullptr;
        children_.clear();
        insertion_ = 0;
    }

    ChunkId id_;
    std::size_t heads_;
    std::size_t capacity_;
    std::size_t dim_;
    std::vector<TokenId> tokens_;
    std::vector<float> keys_;
    std::vector<float> values_;
    std::size_t start_pos_ = 0;
    std::size_t ref_count_ = 0;
    Chunk* parent_ = nullptr;
    std::vector<Chunk*> children_;
    std::uint64_t insertion_ = 0;
    bool in_use_ = false;
};

/// Writable view over a run of consecutive slots of one chunk, for every head.
class KvRows {
public:
    KvRows(Chunk& chunk, std::size_t first_slot, std::size_t rows)
        : chunk_(&chunk), first_(first_slot), rows_(rows) {}

    std::size_t rows() const { return rows_; }
    std::size_t num_heads() const { return chunk_->num_heads(); }
    std::size_t head_dim() const { return chunk_->head_dim(); }

    std::span<float> key(std::size_t head, std::size_t row) {
        assert(row < rows_);
        return {chunk_->keys(head) + (first_ + row) * head_dim(), head_dim()};
    }
    std::span<float> value(std::size_t head, std::size_t row) {
        assert(row < rows_);
        return {chunk_->values(head) + (first_ + row) * head_dim(), head_dim()};
    }

private:
    Chunk* chunk_;
    std::size_t first_;
    std::size_t rows_;
};

} // namespace chunkkv
