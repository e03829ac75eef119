// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//
// Three requests share a 96-token system prompt. The prefix tree stores the
// prompt once; one decode step of two-phase attention is checked against the
// naive oracle, then a small Poisson trace is served in both cache modes.

#include <cstdio>
#include <iostream>
#include <vector>

#include "chunkkv/chunkkv.hpp"

int main() {
    using namespace chunkkv;

    const ModelConfig cfg{4, 64, 32, 2};
    ChunkAllocator alloc(cfg);
    PrefixTree tree(alloc);
    SyntheticModel model(/*seed=*/1, cfg.num_heads, cfg.head_dim);

    std::vector<TokenId> system_prompt(96);
    for (std::size_t i = 0; i < system_prompt.size(); ++i) system_prompt[i] = static_cast<TokenId>(1000 + i);

    for (TokenId question : {7, 8, 9}) {
        std::vector<TokenId> prompt = system_prompt;
        prompt.insert(prompt.end(), {question, question, question});
        std::span<const TokenId> toks = prompt;
        const InsertResult r = tree.insert_sequence(toks, [&](std::size_t b, std::size_t e, KvRows rows) {
            model.fill_kv(toks, b, e, rows);
        });
        std::printf("seq %llu: reused %zu of %zu prompt tokens\n", static_cast<unsigned long long>(r.id),
                    r.matched_tokens, prompt.size());
    }

    auto ctx = tree.build_context();
    QueryBatch q(ctx->batch_size(), cfg.num_heads, cfg.head_dim);
    for (std::size_t b = 0; b < ctx->batch_size(); ++b)
        for (std::size_t h = 0; h < cfg.num_heads; ++h) model.project(Projection::Query, 42, 99, h, q.vec(b, h));

    ThreadPool pool;
    const AttnOutput out = two_phase_attn(q, tree, pool);
    const AttnOutput ref = naive_attn_oracle(q, tree);
    std::printf("shared entries: %zu, max relative error vs oracle: %.3g\n", ctx->shared_entries.size(),
                max_relative_error(out, ref));

    const MemoryStats s = memory_stats(tree);
    std::printf("chunks %zu (%zu bytes), stored %zu of %zu logical tokens\n", s.chunks_used, s.kv_bytes,
                s.stored_tokens, s.logical_tokens);
    dump_tree_text(tree, std::cout);

    WorkloadSpec spec;
    spec.request_count = 16;
    spec.prompt_tokens = 256;
    spec.shared_tokens = 192;
    spec.completion_tokens = 32;
    spec.lambda = 20.0;
    EngineConfig ecfg;
    ecfg.model = cfg;
    ecfg.max_batch = 8;
    const E2eComparison cmp = bench_e2e(spec, ecfg);
    std::printf("peak KV shared/monolithic: %.3f, normalized latency ratio: %.3f\n", cmp.kv_bytes_ratio(),
                cmp.latency_ratio());
    return 0;
}
