// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "chunkkv/chunk.hpp"
#include "chunkkv/common.hpp"

namespace chunkkv {

/**
 * Pool of fixed-size chunks with a free list.
 *
 * Released chunks are kept for reuse and never handed back to the system
 * allocator, so created() only grows and equals used() + free() at all times.
 * An optional hard cap turns exhaustion into a CapacityError.
 */
class ChunkAllocator {
public:
    explicit ChunkAllocator(const ModelConfig& cfg,
                            std::size_t max_chunks = std::numeric_limits<std::size_t>::max())
        : cfg_(cfg), max_chunks_(max_chunks) {
        cfg_.validate();
    }

    ChunkAllocator(const ChunkAllocator&) = delete;
    ChunkAllocator& operator=(const ChunkAllocator&) = delete;

    /// Returns an empty chunk, preferring the most recently released one.
    Chunk* acquire() {
        Chunk* chunk = nullptr;
        if (!free_list_.empty()) {
            chunk = free_list_.back();
            free_list_.pop_back();
        } else {
            if (storage_.size() >= max_chunks_)
                throw CapacityError("chunk allocator exhausted: cap of " + std::to_string(max_chunks_) +
                                    " chunks reached");
            storage_.push_back(std::make_unique<Chunk>(storage_.size(), cfg_));
            chunk = storage_.back().get();
        }
        chunk->in_use_ = true;
        ++used_;
        if (used_ > high_water_mark_) high_water_mark_ = used_;
        return chunk;
    }

    void release(Chunk* chunk) {
        if (chunk == nullptr) throw ContractError("release of a null chunk");
        if (chunk->id() >= storage_.size() || storage_[chunk->id()].get() != chunk)
            throw ContractError("release of a chunk owned by another allocator");
        if (!chunk->in_use_) throw ContractError("double release of chunk " + std::to_string(chunk->id()));
        if (chunk->ref_count_ != 0)
            throw ContractError("release of chunk " + std::to_string(chunk->id()) + " still referenced by " +
                                std::to_string(chunk->ref_count_) + " sequence(s)");
        chunk->reset();
        chunk->in_use_ = false;
        free_list_.push_back(chunk);
        --used_;
    }

    std::size_t used() const { return used_; }
    std::size_t free() const { return free_list_.size(); }
    std::size_t created() const { return storage_.size(); }
    std::size_t high_water_mark() const { return high_water_mark_; }
    std::size_t max_chunks() const { return max_chunks_; }
    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    std::size_t max_chunks_;
    std::vector<std::unique_ptr<Chunk>> storage_;
    std::vector<Chunk*> free_list_;
    std::size_t used_ = 0;
    std::size_t high_water_mark_ = 0;
};

} // namespace chunkkv
