// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace chunkkv {

using TokenId = std::int32_t;
using SeqId = std::uint64_t;
using ChunkId = std::uint64_t;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The allocator hit its configured hard cap on chunk count.
class CapacityError : public Error {
public:
    using Error::Error;
};

/// A caller broke a documented precondition (double release, empty prompt, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

class UnknownSequenceError : public Error {
public:
    explicit UnknownSequenceError(SeqId id)
        : Error("unknown sequence id " + std::to_string(id)) {}
};

/// Partial attention results do not belong to the context they are combined with.
class EpochMismatchError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Shape of the attention model a tree is built for. Fixed for a tree's lifetime.
struct ModelConfig {
    std::size_t num_heads = 32;
    std::size_t head_dim = 128;
    std::size_t chunk_capacity = 64;
    /// Only used for byte accounting; all arithmetic is 32-bit float.
    std::size_t kv_bytes_per_element = 2;

    void validate() const {
        if (num_heads == 0 || head_dim == 0 || chunk_capacity == 0)
            throw ContractError("model config: heads, head_dim and chunk_capacity must be >= 1");
        if (kv_bytes_per_element == 0)
            throw ContractError("model config: kv_bytes_per_element must be >= 1");
    }

    /// Floats per chunk for one of keys/values: h * c * d.
    std::size_t chunk_floats() const { return num_heads * chunk_capacity * head_dim; }

    /// Accounted bytes for one chunk (keys and values).
    std::size_t chunk_bytes() const { return 2 * chunk_floats() * kv_bytes_per_element; }
};

} // namespace chunkkv
