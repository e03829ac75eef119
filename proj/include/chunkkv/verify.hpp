// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "chunkkv/attention.hpp"
#include "chunkkv/chunk_allocator.hpp"
#include "chunkkv/prefix_tree.hpp"
#include "chunkkv/synthetic_model.hpp"
#include "chunkkv/thread_pool.hpp"

namespace chunkkv {

/// Largest row-wise relative deviation: max over (row, head) of |a - b|_inf / |b|_inf.
inline double max_relative_error(const HeadTensor& a, const HeadTensor& b) {
    if (a.batch() != b.batch() || a.heads() != b.heads() || a.dim() != b.dim())
        throw ShapeError("max_relative_error: shape mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.batch(); ++i)
        for (std::size_t h = 0; h < a.heads(); ++h) {
            double diff = 0.0, ref = 0.0;
            for (std::size_t k = 0; k < a.dim(); ++k) {
                diff = std::max(diff, std::abs(static_cast<double>(a.row(i, h)[k]) - b.row(i, h)[k]));
                ref = std::max(ref, std::abs(static_cast<double>(b.row(i, h)[k])));
            }
            worst = std::max(worst, diff / std::max(ref, 1e-30));
        }
    return worst;
}

/// One randomized tree state plus query batch.
struct OracleCase {
    std::size_t batch = 0;
    std::size_t heads = 0;
    std::size_t head_dim = 0;
    std::size_t chunk = 0;
    std::size_t shared_prefix = 0;
    float max_logit = 0.0f;
};

/**
 * Keys and queries built so that logits land anywhere in [-max_logit, max_logit]:
 * every query is a small perturbation of one direction u per head, and every
 * key is noise plus a multiple of u chosen from a hashed target logit. Values
 * are uniform in [-1, 1]. All vectors are pure functions of (token, position,
 * head), so shared and private copies of a prefix agree.
 */
class LogitControlledModel {
public:
    LogitControlledModel(std::uint64_t seed, std::size_t heads, std::size_t dim, float max_logit)
        : seed_(seed), heads_(heads), dim_(dim), max_logit_(max_logit), base_(seed ^ 0x51ull, heads, dim) {
        u_.resize(heads * dim);
        for (std::size_t h = 0; h < heads; ++h) base_.project(Projection::Query, -1, 0, h, {u_.data() + h * dim, dim});
        scale_ = 1.0f / std::sqrt(static_cast<float>(dim));
    }

    void key(TokenId tok, std::size_t pos, std::size_t h, std::span<float> out) const {
        base_.project(Projection::Key, tok, pos, h, out);
        for (float& x : out) x *= 0.05f;
        const float* u = u_.data() + h * dim_;
        const float target = max_logit_ * unit_float(splitmix64(splitmix64(seed_ ^ 0x7a7aull) ^ (pos * 7919u + h) ^
                                                               static_cast<std::uint32_t>(tok)));
        const float uu = detail::dot(u, u, dim_);
        const float alpha = target / (scale_ * uu);
        for (std::size_t k = 0; k < dim_; ++k) out[k] += alpha * u[k];
    }

    void value(TokenId tok, std::size_t pos, std::size_t h, std::span<float> out) const {
        base_.project(Projection::Value, tok, pos, h, out);
    }

    void query(std::uint64_t row, std::size_t h, std::span<float> out) const {
        base_.project(Projection::Query, static_cast<TokenId>(row), 1, h, out);
        const float* u = u_.data() + h * dim_;
        for (std::size_t k = 0; k < dim_; ++k) out[k] = u[k] + 0.01f * out[k];
    }

    void fill(std::span<const TokenId> toks, std::size_t begin, std::size_t end, KvRows rows) const {
        for (std::size_t p = begin; p < end; ++p)
            for (std::size_t h = 0; h < heads_; ++h) {
                key(toks[p], p, h, rows.key(h, p - begin));
                value(toks[p], p, h, rows.value(h, p - begin));
            }
    }

    void kv(TokenId tok, std::size_t pos, std::span<float> k, std::span<float> v) const {
        for (std::size_t h = 0; h < heads_; ++h) {
            key(tok, pos, h, k.subspan(h * dim_, dim_));
            value(tok, pos, h, v.subspan(h * dim_, dim_));
        }
    }

private:
    std::uint64_t seed_;
    std::size_t heads_;
    std::size_t dim_;
    float max_logit_;
    SyntheticModel base_;
    std::vector<float> u_;
    float scale_;
};

/**
 * Draws a random tree: b sequences sharing a common prefix, some exact
 * duplicates, each with a private suffix and a few decoded tokens appended.
 */
inline void build_random_tree(PrefixTree& tree, const OracleCase& oc, const LogitControlledModel& model,
                              std::mt19937_64& rng) {
    const std::size_t c = oc.chunk;
    std::uniform_int_distribution<int> token(0, 40);
    std::vector<TokenId> prefix(oc.shared_prefix);
    for (auto& t : prefix) t = token(rng);
    std::vector<std::vector<TokenId>> prompts;
    std::vector<SeqId> ids;
    for (std::size_t i = 0; i < oc.batch; ++i) {
        std::vector<TokenId> p;
        if (!prompts.empty() && rng() % 5 == 0) {
            p = prompts[rng() % prompts.size()];
        } else {
            p = prefix;
            const std::size_t extra = (prefix.empty() ? 1 : 0) + rng() % (2 * c + 1);
            for (std::size_t k = 0; k < extra; ++k) p.push_back(token(rng));
        }
        std::span<const TokenId> toks = p;
        ids.push_back(tree.insert_sequence(toks, [&](std::size_t b, std::size_t e, KvRows rows) {
                              model.fill(toks, b, e, rows);
                          }).id);
        prompts.push_back(std::move(p));
    }
    const std::size_t hd = oc.heads * oc.head_dim;
    std::vector<float> k(hd), v(hd);
    for (SeqId id : ids) {
        const std::size_t steps = rng() % (c + 2);
        for (std::size_t s = 0; s < steps; ++s) {
            const TokenId tok = token(rng);
            const std::size_t pos = tree.sequence_length(id);
            model.kv(tok, pos, k, v);
            tree.append_token(id, tok, k, v);
        }
    }
}

inline QueryBatch random_queries(const PrefixTree& tree, const AttnContext& ctx, const LogitControlledModel& model) {
    const ModelConfig& mc = tree.config();
    QueryBatch q(ctx.batch_size(), mc.num_heads, mc.head_dim);
    for (std::size_t b = 0; b < ctx.batch_size(); ++b)
        for (std::size_t h = 0; h < mc.num_heads; ++h) model.query(ctx.order[b], h, q.vec(b, h));
    return q;
}

struct VerifyOptions {
    std::size_t cases = 1000;
    std::uint64_t seed = 0;
    double tolerance = 1e-4;
    std::size_t threads = 1;
};

struct VerifyReport {
    std::size_t passed = 0;
    std::size_t failed = 0;
    double max_error = 0.0;
    double max_error_direct = 0.0;
    std::vector<OracleCase> failures;
};

inline OracleCase draw_oracle_case(std::mt19937_64& rng) {
    static constexpr std::size_t kHeads[] = {1, 4};
    static constexpr std::size_t kDims[] = {8, 64, 128};
    static constexpr std::size_t kChunks[] = {2, 16, 64};
    OracleCase oc;
    oc.batch = 1 + rng() % 8;
    oc.heads = kHeads[rng() % 2];
    oc.head_dim = kDims[rng() % 3];
    oc.chunk = kChunks[rng() % 3];
    oc.shared_prefix = rng() % (4 * oc.chunk + 1);
    oc.max_logit = std::uniform_real_distribution<float>(0.0f, 80.0f)(rng);
    return oc;
}

/**
 * Randomized equivalence check of both two-phase variants against the naive
 * oracle. A case passes when the materialized and the direct-reduce outputs
 * are both within `tolerance` relative error.
 */
inline VerifyReport run_oracle_suite(const VerifyOptions& opts) {
    VerifyReport rep;
    ThreadPool pool(opts.threads);
    for (std::size_t i = 0; i < opts.cases; ++i) {
        std::mt19937_64 rng(splitmix64(opts.seed + i));
        const OracleCase oc = draw_oracle_case(rng);
        const ModelConfig mc{oc.heads, oc.head_dim, oc.chunk, 2};
        ChunkAllocator alloc(mc);
        PrefixTree tree(alloc);
        LogitControlledModel model(opts.seed + i, oc.heads, oc.head_dim, oc.max_logit);
        build_random_tree(tree, oc, model, rng);
        auto ctx = tree.build_context();
        const QueryBatch q = random_queries(tree, *ctx, model);

        const AttnOutput expect = naive_attn_oracle(q, tree);
        TwoPhaseKernel kernel(pool);
        AttnOutput got;
        kernel.run(q, *ctx, got);
        TwoPhaseKernel direct(pool, AttnOptions{0.0f, true});
        AttnOutput got_direct;
        direct.run(q, *ctx, got_direct);

        const double err = max_relative_error(got, expect);
        const double err_direct = max_relative_error(got_direct, expect);
        rep.max_error = std::max(rep.max_error, err);
        rep.max_error_direct = std::max(rep.max_error_direct, err_direct);
        if (err < opts.tolerance && err_direct < opts.tolerance) {
            ++rep.passed;
        } else {
            ++rep.failed;
            rep.failures.push_back(oc);
        }
    }
    return rep;
}

} // namespace chunkkv
