// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reference implementations and invariant checkers shared by the unit tests
// and the acceptance binary. Nothing here calls into the kernels under test.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "chunkkv/chunkkv.hpp"

namespace testsupport {

using chunkkv::Chunk;
using chunkkv::PrefixTree;
using chunkkv::SeqId;
using chunkkv::TokenId;

/// softmax(scale * q . k_j) weighted sum of v_j, all in double.
inline std::vector<double> softmax_attend(const float* q, const std::vector<std::vector<float>>& keys,
                                          const std::vector<std::vector<float>>& values, double scale) {
    const std::size_t d = values.front().size();
    std::vector<double> w(keys.size());
    double mx = -INFINITY;
    for (std::size_t j = 0; j < keys.size(); ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < keys[j].size(); ++k) s += static_cast<double>(q[k]) * keys[j][k];
        w[j] = s * scale;
        mx = std::max(mx, w[j]);
    }
    double z = 0.0;
    for (double& x : w) z += (x = std::exp(x - mx));
    std::vector<double> out(d, 0.0);
    for (std::size_t j = 0; j < keys.size(); ++j)
        for (std::size_t k = 0; k < d; ++k) out[k] += w[j] / z * values[j][k];
    return out;
}

/// Relative deviation of a float row from a double reference, normalized by the reference's max magnitude.
inline double rel_error(const float* got, const std::vector<double>& want) {
    double diff = 0.0, ref = 0.0;
    for (std::size_t k = 0; k < want.size(); ++k) {
        diff = std::max(diff, std::abs(got[k] - want[k]));
        ref = std::max(ref, std::abs(want[k]));
    }
    return diff / std::max(ref, 1e-30);
}

/// Per-sequence shadow of what was inserted and appended, kept outside the tree.
struct Shadow {
    std::map<SeqId, std::vector<TokenId>> tokens;
};

/// Number of leading aligned chunks two token lists could share: both complete and equal.
inline std::size_t shareable_chunks(const std::vector<TokenId>& a, const std::vector<TokenId>& b, std::size_t c) {
    const std::size_t limit = std::min(a.size(), b.size()) / c;
    std::size_t k = 0;
    while (k < limit && std::equal(a.begin() + k * c, a.begin() + (k + 1) * c, b.begin() + k * c)) ++k;
    return k;
}

/**
 * Checks every structural invariant of the tree against the shadow. Returns an
 * empty string when all hold, otherwise a description of the first violation.
 */
inline std::string check_tree(PrefixTree& tree, const Shadow& shadow) {
    const std::size_t c = tree.config().chunk_capacity;
    const auto& alloc = tree.allocator();
    if (alloc.created() != alloc.used() + alloc.free()) return "allocator: created != used + free";
    if (tree.num_sequences() != shadow.tokens.size()) return "sequence count differs from shadow";

    // Reconstruction and per-chunk coverage.
    std::map<const Chunk*, std::vector<SeqId>> covering;
    for (const auto& [id, toks] : shadow.tokens) {
        if (tree.sequence_tokens(id) != toks) return "reconstruction failed for seq " + std::to_string(id);
        if (tree.sequence_length(id) != toks.size()) return "length mismatch for seq " + std::to_string(id);
        std::size_t pos = 0;
        const Chunk* parent = nullptr;
        for (const Chunk* ch : tree.path(id)) {
            if (ch->parent() != parent) return "path is not a parent chain";
            if (ch->start_pos() != pos) return "chunk start_pos is not aligned to its path offset";
            if (ch->empty() || ch->size() > c) return "chunk size out of range";
            if (pos % c != 0) return "chunk does not start on an aligned boundary";
            pos += ch->size();
            parent = ch;
            covering[ch].push_back(id);
        }
        // Only full chunks may have children; a sequence can end on a full chunk shared with longer ones.
        if (!tree.path(id).back()->children().empty() && !tree.path(id).back()->full())
            return "partial chunk has children";
    }

    std::size_t chunks = 0;
    std::string err;
    tree.for_each_chunk([&](const Chunk& ch) {
        ++chunks;
        if (!err.empty()) return;
        const auto it = covering.find(&ch);
        const std::size_t n = it == covering.end() ? 0 : it->second.size();
        if (ch.ref_count() != n) err = "ref_count != covering sequences for chunk " + std::to_string(ch.id());
        if (ch.ref_count() > 1 && !ch.full()) err = "shared chunk is not full";
        std::size_t child_refs = 0;
        for (const Chunk* k : ch.children()) child_refs += k->ref_count();
        if (child_refs > ch.ref_count()) err = "children cover more sequences than their parent";
    });
    if (!err.empty()) return err;
    if (chunks != alloc.used()) return "tree chunk count != allocator used count";

    // Contiguity and schedule consistency.
    auto ctx = tree.build_context();
    if (ctx->epoch != tree.epoch()) return "context epoch stale";
    if (ctx->batch_size() != shadow.tokens.size()) return "context batch size wrong";
    std::map<SeqId, std::size_t> index;
    for (std::size_t i = 0; i < ctx->order.size(); ++i) index[ctx->order[i]] = i;
    for (const auto& [ch, ids] : covering) {
        std::vector<std::size_t> rows;
        for (SeqId id : ids) rows.push_back(index.at(id));
        std::sort(rows.begin(), rows.end());
        if (rows.back() - rows.front() + 1 != rows.size()) return "non-contiguous batch rows for a chunk";
    }
    std::size_t shared_seen = 0;
    for (const auto& e : ctx->shared_entries) {
        const auto& ids = covering.at(e.chunk);
        if (ids.size() < tree.options().share_threshold) return "shared entry below threshold";
        std::vector<std::size_t> rows;
        for (SeqId id : ids) rows.push_back(index.at(id));
        if (*std::min_element(rows.begin(), rows.end()) != e.first ||
            *std::max_element(rows.begin(), rows.end()) != e.last)
            return "shared entry range wrong";
        ++shared_seen;
    }
    std::size_t expected_shared = 0;
    for (const auto& [ch, ids] : covering)
        if (ids.size() >= tree.options().share_threshold) ++expected_shared;
    if (shared_seen != expected_shared) return "shared entry count wrong";
    for (std::size_t i = 0; i < ctx->order.size(); ++i) {
        const auto path = tree.path(ctx->order[i]);
        if (ctx->shared_path[i].size() + ctx->private_entries[i].size() != path.size())
            return "schedule does not cover the full path";
    }
    return {};
}

/// Randomized insert/append/remove driver that keeps a shadow and checks after every op.
class TreeFuzzer {
public:
    TreeFuzzer(PrefixTree& tree, std::uint64_t seed) : tree_(tree), rng_(seed) {
        const std::size_t c = tree.config().chunk_capacity;
        for (int f = 0; f < 4; ++f) {
            std::vector<TokenId> fam(static_cast<std::size_t>(4 * c));
            for (auto& t : fam) t = static_cast<TokenId>(rng_() % 1000);
            families_.push_back(std::move(fam));
        }
        hd_ = tree.config().num_heads * tree.config().head_dim;
    }

    /// Runs `ops` operations; returns the first invariant violation or an empty string.
    std::string run(std::size_t ops) {
        const std::size_t c = tree_.config().chunk_capacity;
        std::vector<float> k(hd_, 0.5f), v(hd_, -0.5f);
        for (std::size_t op = 0; op < ops; ++op) {
            const unsigned r = static_cast<unsigned>(rng_() % 10);
            if (shadow_.tokens.empty() || r < 3) {
                const auto& fam = families_[rng_() % families_.size()];
                std::vector<TokenId> toks(fam.begin(), fam.begin() + static_cast<std::ptrdiff_t>(rng_() % (fam.size() + 1)));
                const std::size_t extra = (toks.empty() ? 1 : 0) + rng_() % (2 * c);
                for (std::size_t i = 0; i < extra; ++i) toks.push_back(fresh_token());
                std::size_t best = 0;
                for (const auto& [id, other] : shadow_.tokens) best = std::max(best, shareable_chunks(toks, other, c));
                const auto res = tree_.insert_sequence(toks, nullptr);
                if (res.matched_tokens != best * c)
                    return "insert matched " + std::to_string(res.matched_tokens) + " tokens, expected " +
                           std::to_string(best * c);
                shadow_.tokens[res.id] = std::move(toks);
            } else if (r < 8) {
                auto it = pick();
                const TokenId t = fresh_token();
                tree_.append_token(it->first, t, k, v);
                it->second.push_back(t);
            } else {
                auto it = pick();
                tree_.remove_sequence(it->first);
                shadow_.tokens.erase(it);
            }
            if (std::string e = check_tree(tree_, shadow_); !e.empty()) return "op " + std::to_string(op) + ": " + e;
        }
        return {};
    }

    void drain() {
        for (const auto& [id, toks] : shadow_.tokens) tree_.remove_sequence(id);
        shadow_.tokens.clear();
    }

private:
    std::map<SeqId, std::vector<TokenId>>::iterator pick() {
        auto it = shadow_.tokens.begin();
        std::advance(it, static_cast<std::ptrdiff_t>(rng_() % shadow_.tokens.size()));
        return it;
    }
    // Drawn from a range disjoint from the family tokens, so appended tails never collide.
    TokenId fresh_token() { return static_cast<TokenId>(1000 + rng_() % 1000000); }

    PrefixTree& tree_;
    std::mt19937_64 rng_;
    std::vector<std::vector<TokenId>> families_;
    std::size_t hd_ = 0;
    Shadow shadow_;
};

} // namespace testsupport
