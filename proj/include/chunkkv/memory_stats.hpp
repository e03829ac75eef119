// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>

#include "chunkkv/prefix_tree.hpp"

namespace chunkkv {

struct MemoryStats {
    std::size_t chunks_used = 0;
    std::size_t chunks_free = 0;
    /// Accounted bytes of all chunks handed out: used * 2 * h * c * d * bytes_per_element.
    std::size_t kv_bytes = 0;
    /// Token slots stored in the tree (each shared token counted once).
    std::size_t stored_tokens = 0;
    /// Sum of sequence lengths (each shared token counted once per sequence).
    std::size_t logical_tokens = 0;
    /// Unused slots over all slots of chunks in the tree.
    double waste_fraction = 0.0;
    /// Mean over live sequences of (tokens in shared chunks) / (sequence length).
    double sharing_ratio = 0.0;
};

inline MemoryStats memory_stats(const PrefixTree& tree) {
    MemoryStats s;
    const ChunkAllocator& alloc = tree.allocator();
    s.chunks_used = alloc.used();
    s.chunks_free = alloc.free();
    s.kv_bytes = alloc.used() * tree.config().chunk_bytes();

    std::size_t slots = 0;
    tree.for_each_chunk([&](const Chunk& ch) {
        slots += ch.capacity();
        s.stored_tokens += ch.size();
    });
    if (slots > 0) s.waste_fraction = static_cast<double>(slots - s.stored_tokens) / static_cast<double>(slots);

    double ratio_sum = 0.0;
    for (SeqId id : tree.sequence_ids()) {
        std::size_t shared = 0;
        for (const Chunk* ch : tree.path(id))
            if (ch->ref_count() >= 2) shared += ch->size();
        const std::size_t len = tree.sequence_length(id);
        s.logical_tokens += len;
        ratio_sum += static_cast<double>(shared) / static_cast<double>(len);
    }
    if (tree.num_sequences() > 0) s.sharing_ratio = ratio_sum / static_cast<double>(tree.num_sequences());
    return s;
}

} // namespace chunkkv
