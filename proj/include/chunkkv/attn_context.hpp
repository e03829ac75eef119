// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "chunkkv/chunk.hpp"
#include "chunkkv/common.hpp"

namespace chunkkv {

/// A chunk covered by the contiguous batch rows [first, last].
struct SharedEntry {
    const Chunk* chunk = nullptr;
    std::size_t first = 0;
    std::size_t last = 0;

    std::size_t rows() const { return last - first + 1; }
};

/**
 * Flattened kernel schedule derived from a prefix tree at one epoch.
 *
 * Batch index i is the position of a sequence in the tree's depth-first leaf
 * order, so every shared chunk covers a contiguous row range of the query
 * batch. shared_entries lists parents before their descendants;
 * shared_path[i] indexes into it in root-to-leaf order and
 * private_entries[i] holds the remaining chunks of sequence i in path order.
 *
 * A snapshot stays valid while the chunks it references are alive: in-place
 * appends to a private leaf do not invalidate it, structural changes do.
 */
struct AttnContext {
    std::uint64_t epoch = 0;
    std::vector<SeqId> order;
    std::vector<SharedEntry> shared_entries;
    std::vector<std::vector<std::size_t>> shared_path;
    std::vector<std::vector<const Chunk*>> private_entries;
    std::unordered_map<SeqId, std::size_t> index;

    std::size_t batch_size() const { return order.size(); }

    std::size_t index_of(SeqId id) const {
        auto it = index.find(id);
        if (it == index.end()) throw UnknownSequenceError(id);
        return it->second;
    }
};

} // namespace chunkkv
