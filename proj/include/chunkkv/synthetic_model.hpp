// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "chunkkv/chunk.hpp"
#include "chunkkv/common.hpp"

namespace chunkkv {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Maps the top 24 bits of a hash to an exactly representable float in [-1, 1).
inline constexpr float unit_float(std::uint64_t bits) {
    return static_cast<float>(bits >> 40) * (2.0f / 16777216.0f) - 1.0f;
}

enum class Projection : std::uint64_t { Query = 0, Key = 1, Value = 2 };

/**
 * Deterministic stand-in for the QKV projections of a transformer layer.
 *
 * Every element is a counter-based hash of (seed, token, position, head,
 * projection, index). The same token at the same absolute position always
 * yields the same key/value, which is what makes sharing a prefix valid.
 */
class SyntheticModel {
public:
    SyntheticModel(std::uint64_t seed, std::size_t heads, std::size_t head_dim)
        : seed_(seed), heads_(heads), dim_(head_dim) {}

    std::uint64_t seed() const { return seed_; }
    std::size_t num_heads() const { return heads_; }
    std::size_t head_dim() const { return dim_; }

    /// Fills `out` (head_dim floats) with one projection of one head.
    void project(Projection which, TokenId token, std::size_t position, std::size_t head, std::span<float> out) const {
        std::uint64_t key = splitmix64(seed_);
        key = splitmix64(key ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(token)));
        key = splitmix64(key ^ static_cast<std::uint64_t>(position));
        key = splitmix64(key ^ (static_cast<std::uint64_t>(head) << 2 | static_cast<std::uint64_t>(which)));
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = unit_float(splitmix64(key + i));
    }

    /// q, k and v for every head, each laid out [head][dim].
    void qkv(TokenId token, std::size_t position, std::span<float> q, std::span<float> k, std::span<float> v) const {
        for (std::size_t h = 0; h < heads_; ++h) {
            project(Projection::Query, token, position, h, q.subspan(h * dim_, dim_));
            project(Projection::Key, token, position, h, k.subspan(h * dim_, dim_));
            project(Projection::Value, token, position, h, v.subspan(h * dim_, dim_));
        }
    }

    /// Writes keys/values of tokens[begin, end) straight into chunk rows.
    void fill_kv(std::span<const TokenId> tokens, std::size_t begin, std::size_t end, KvRows rows) const {
        for (std::size_t p = begin; p < end; ++p)
            for (std::size_t h = 0; h < heads_; ++h) {
                project(Projection::Key, tokens[p], p, h, rows.key(h, p - begin));
                project(Projection::Value, tokens[p], p, h, rows.value(h, p - begin));
            }
    }

private:
    std::uint64_t seed_;
    std::size_t heads_;
    std::size_t dim_;
};

} // namespace chunkkv
