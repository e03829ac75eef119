// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include <fstream>
#include <numeric>
#include <sstream>
#include <vector>

#include "chunkkv/memory_stats.hpp"
#include "chunkkv/prefix_tree.hpp"
#include "chunkkv/tree_dump.hpp"
#include "support.hpp"

using namespace chunkkv;

namespace {

std::vector<TokenId> iota_tokens(std::size_t n, TokenId start = 0) {
    std::vector<TokenId> v(n);
    std::iota(v.begin(), v.end(), start);
    return v;
}

std::vector<TokenId> concat(std::vector<TokenId> a, const std::vector<TokenId>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

struct Fixture {
    explicit Fixture(std::size_t c, std::size_t heads = 1, std::size_t dim = 4)
        : cfg{heads, dim, c, 2}, alloc(cfg), tree(alloc) {}

    SeqId insert(const std::vector<TokenId>& toks) {
        const auto id = tree.insert_sequence(toks, nullptr).id;
        shadow.tokens[id] = toks;
        return id;
    }
    void append(SeqId id, TokenId t) {
        std::vector<float> kv(cfg.num_heads * cfg.head_dim, 0.0f);
        tree.append_token(id, t, kv, kv);
        shadow.tokens[id].push_back(t);
    }
    void remove(SeqId id) {
        tree.remove_sequence(id);
        shadow.tokens.erase(id);
    }
    std::string check() { return testsupport::check_tree(tree, shadow); }

    ModelConfig cfg;
    ChunkAllocator alloc;
    PrefixTree tree;
    testsupport::Shadow shadow;
};

// Three sequences sharing 3 chunks of instruction/examples, each with its own question.
struct Fig1 : Fixture {
    Fig1() : Fixture(4) {
        common = iota_tokens(12, 100);
        s0 = insert(concat(common, {1, 2, 3, 4, 5}));
        s1 = insert(concat(common, {2, 3, 4, 5, 6, 7, 8, 9}));
        s2 = insert(concat(common, {3, 4, 5, 6, 7, 8, 9, 10}));
    }
    std::vector<TokenId> common;
    SeqId s0, s1, s2;
};

} // namespace

TEST(PrefixTree, EmptyInsertRejected) {
    Fixture f(4);
    EXPECT_THROW(f.tree.insert_sequence({}, nullptr), ContractError);
}

TEST(PrefixTree, FullDuplicateSharesEverything) {
    Fixture f(4);
    const auto toks = iota_tokens(12);
    f.insert(toks);
    const auto used = f.alloc.used();
    const auto res = f.tree.insert_sequence(toks, nullptr);
    f.shadow.tokens[res.id] = toks;
    EXPECT_EQ(res.matched_tokens, 12u);
    EXPECT_EQ(f.alloc.used(), used);
    EXPECT_EQ(f.check(), "");
}

TEST(PrefixTree, Figure1SharedChunksCountedThreeTimes) {
    Fig1 f;
    const auto p0 = f.tree.path(f.s0);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(p0[i]->ref_count(), 3u);
        EXPECT_EQ(f.tree.path(f.s1)[i], p0[i]);
        EXPECT_EQ(f.tree.path(f.s2)[i], p0[i]);
    }
    EXPECT_EQ(p0[3]->ref_count(), 1u);
    EXPECT_EQ(f.check(), "");
}

TEST(PrefixTree, DivergenceInsideLastChunkMatchesAlignedPrefixOnly) {
    const std::size_t c = 64, n = 2048;
    Fixture f(c);
    const auto a = iota_tokens(n);
    auto b = a;
    b[2046] = -1;  // 2047 common tokens
    f.insert(a);
    const auto res = f.tree.insert_sequence(b, nullptr);
    f.shadow.tokens[res.id] = b;
    // Chunk-boundary arithmetic: the mismatch at index 2046 lies in chunk 2046 / 64 = 31.
    const std::size_t common = 2047;
    const std::size_t expected = (common / c) * c;
    EXPECT_EQ(res.matched_tokens, expected);
    EXPECT_EQ(res.matched_tokens, 1984u);
    EXPECT_EQ(f.check(), "");
}

TEST(PrefixTree, PartialChunksAreNeverMatched) {
    Fixture f(4);
    f.insert(iota_tokens(6));
    const auto res = f.tree.insert_sequence(iota_tokens(6), nullptr);
    EXPECT_EQ(res.matched_tokens, 4u);
    f.tree.remove_sequence(res.id);
}

TEST(PrefixTree, SupplierOnlySeesUnmatchedPositions) {
    Fixture f(4);
    f.insert(iota_tokens(8));
    std::vector<std::pair<std::size_t, std::size_t>> calls;
    const auto res = f.tree.insert_sequence(iota_tokens(11), [&](std::size_t b, std::size_t e, KvRows rows) {
        calls.emplace_back(b, e);
        EXPECT_EQ(rows.rows(), e - b);
    });
    f.shadow.tokens[res.id] = iota_tokens(11);
    ASSERT_EQ(calls.size(), 1u);
    EXPECT_EQ(calls[0], std::make_pair(std::size_t{8}, std::size_t{11}));
    EXPECT_EQ(f.check(), "");
}

TEST(PrefixTree, AppendFillsExclusiveLeafInPlace) {
    Fixture f(4);
    const auto id = f.insert(iota_tokens(7));
    const auto used = f.alloc.used();
    f.append(id, 99);
    EXPECT_EQ(f.alloc.used(), used);
    EXPECT_EQ(f.tree.path(id).back()->size(), 4u);
    f.append(id, 100);
    EXPECT_EQ(f.alloc.used(), used + 1);
    EXPECT_EQ(f.tree.path(id).back()->size(), 1u);
    EXPECT_EQ(f.check(), "");
}

TEST(PrefixTree, AppendOnSharedLeafBranchesPrivately) {
    Fixture f(4);
    const auto a = f.insert(iota_tokens(8));
    const auto b = f.insert(iota_tokens(8));
    const Chunk* shared_leaf = f.tree.path(a).back();
    ASSERT_EQ(shared_leaf->ref_count(), 2u);
    const auto used = f.alloc.used();
    f.append(a, 50);
    f.append(b, 50);
    EXPECT_EQ(f.alloc.used(), used + 2);
    EXPECT_EQ(shared_leaf->size(), 4u);
    EXPECT_EQ(shared_leaf->ref_count(), 2u);
    EXPECT_NE(f.tree.path(a).back(), f.tree.path(b).back());
    EXPECT_EQ(f.tree.path(a).back()->parent(), shared_leaf);
    EXPECT_EQ(f.check(), "");
}

TEST(PrefixTree, AppendRejectsUnknownSequenceAndBadShape) {
    Fixture f(4);
    std::vector<float> kv(4);
    EXPECT_THROW(f.tree.append_token(42, 1, kv, kv), UnknownSequenceError);
    const auto id = f.insert({1});
    std::vector<float> bad(3);
    EXPECT_THROW(f.tree.append_token(id, 1, bad, bad), ShapeError);
}

TEST(PrefixTree, RemoveOnlySequenceReleasesEverything) {
    Fixture f(4);
    const auto id = f.insert(iota_tokens(10));
    EXPECT_EQ(f.tree.remove_sequence(id), 3u);
    EXPECT_EQ(f.alloc.used(), 0u);
    EXPECT_TRUE(f.tree.roots().empty());
    EXPECT_THROW(f.tree.remove_sequence(id), UnknownSequenceError);
}

TEST(PrefixTree, RemoveOneOfTwoDuplicatesReleasesNothing) {
    Fixture f(4);
    const auto a = f.insert(iota_tokens(8));
    const auto b = f.insert(iota_tokens(8));
    EXPECT_EQ(f.tree.remove_sequence(a), 0u);
    f.shadow.tokens.erase(a);
    for (const Chunk* ch : f.tree.path(b)) EXPECT_EQ(ch->ref_count(), 1u);
    EXPECT_EQ(f.check(), "");
}

TEST(PrefixTree, Figure1RemoveReleasesOnlyPrivateSuffix) {
    Fig1 f;
    const std::size_t private_chunks = f.tree.path(f.s2).size() - 3;
    EXPECT_EQ(f.tree.remove_sequence(f.s2), private_chunks);
    f.shadow.tokens.erase(f.s2);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(f.tree.path(f.s0)[i]->ref_count(), 2u);
    EXPECT_EQ(f.check(), "");
}

TEST(PrefixTree, Figure2ContextEntries) {
    // S0,S1,S2 share C0..C2; C3 private to S0; C4,C6 to S1; C5,C7 to S2.
    Fixture f(4);
    const auto common = iota_tokens(12, 100);
    const auto s0 = f.insert(concat(common, {1, 1}));
    const auto s1 = f.insert(concat(common, {2, 2, 2, 2}));
    const auto s2 = f.insert(concat(common, {3, 3, 3, 3}));
    f.append(s1, 7);
    f.append(s2, 8);
    ASSERT_EQ(f.check(), "");

    auto ctx = f.tree.build_context();
    ASSERT_EQ(ctx->order, (std::vector<SeqId>{s0, s1, s2}));
    ASSERT_EQ(ctx->shared_entries.size(), 3u);
    for (std::size_t e = 0; e < 3; ++e) {
        EXPECT_EQ(ctx->shared_entries[e].chunk->id(), e);
        EXPECT_EQ(ctx->shared_entries[e].first, 0u);
        EXPECT_EQ(ctx->shared_entries[e].last, 2u);
    }
    auto ids = [](const std::vector<const Chunk*>& v) {
        std::vector<ChunkId> out;
        for (const Chunk* c : v) out.push_back(c->id());
        return out;
    };
    EXPECT_EQ(ids(ctx->private_entries[0]), (std::vector<ChunkId>{3}));
    EXPECT_EQ(ids(ctx->private_entries[1]), (std::vector<ChunkId>{4, 6}));
    EXPECT_EQ(ids(ctx->private_entries[2]), (std::vector<ChunkId>{5, 7}));
    EXPECT_EQ(ctx->shared_path[1], (std::vector<std::size_t>{0, 1, 2}));
}

TEST(PrefixTree, SingleSequenceHasNoSharedEntries) {
    Fixture f(4);
    const auto id = f.insert(iota_tokens(9));
    auto ctx = f.tree.build_context();
    EXPECT_TRUE(ctx->shared_entries.empty());
    EXPECT_EQ(ctx->private_entries[0].size(), f.tree.path(id).size());
}

TEST(PrefixTree, ContextCachedUntilStructuralChange) {
    Fixture f(4);
    const auto id = f.insert(iota_tokens(5));
    auto a = f.tree.build_context();
    auto b = f.tree.build_context();
    EXPECT_EQ(a.get(), b.get());
    EXPECT_EQ(f.tree.context_builds(), 1u);
    f.append(id, 1);  // in place, leaf not full yet
    EXPECT_EQ(f.tree.build_context().get(), a.get());
    f.append(id, 2);
    f.append(id, 3);
    f.append(id, 4);  // grows a new chunk
    EXPECT_NE(f.tree.build_context().get(), a.get());
    EXPECT_EQ(f.tree.context_builds(), 2u);
    f.insert({9});
    f.tree.build_context();
    EXPECT_EQ(f.tree.context_builds(), 3u);
}

TEST(PrefixTree, ChildrenOrderedByFirstTokenThenInsertion) {
    Fixture f(2);
    const auto a = f.insert({1, 2, 9, 9});
    const auto b = f.insert({1, 2, 3, 3});
    const auto c = f.insert({1, 2, 9, 9});
    const auto d = f.insert({0});
    auto ctx = f.tree.build_context();
    EXPECT_EQ(ctx->order, (std::vector<SeqId>{d, b, a, c}));
}

TEST(PrefixTree, ShareThresholdBelowTwoRejected) {
    ModelConfig cfg{1, 4, 4, 2};
    ChunkAllocator alloc(cfg);
    EXPECT_THROW(PrefixTree(alloc, TreeOptions{true, 1}), ContractError);
}

TEST(PrefixTree, ShareThresholdKeepsNarrowChunksPrivate) {
    ModelConfig cfg{1, 4, 4, 2};
    ChunkAllocator alloc(cfg);
    PrefixTree tree(alloc, TreeOptions{true, 3});
    const auto toks = iota_tokens(8);
    tree.insert_sequence(toks, nullptr);
    tree.insert_sequence(toks, nullptr);
    auto ctx = tree.build_context();
    EXPECT_TRUE(ctx->shared_entries.empty());
    EXPECT_EQ(ctx->private_entries[0].size(), 2u);
    tree.insert_sequence(toks, nullptr);
    EXPECT_EQ(tree.build_context()->shared_entries.size(), 2u);
}

TEST(PrefixTree, MatchingDisabledGivesIndependentRoots) {
    ModelConfig cfg{1, 4, 4, 2};
    ChunkAllocator alloc(cfg);
    PrefixTree tree(alloc, TreeOptions{false, 2});
    const auto toks = iota_tokens(8);
    tree.insert_sequence(toks, nullptr);
    const auto res = tree.insert_sequence(toks, nullptr);
    EXPECT_EQ(res.matched_tokens, 0u);
    EXPECT_EQ(tree.roots().size(), 2u);
    EXPECT_EQ(alloc.used(), 4u);
}

// ---------------------------------------------------------------------------
// Memory statistics
// ---------------------------------------------------------------------------

TEST(MemoryStats, EmptyTreeIsAllZero) {
    Fixture f(4);
    const MemoryStats s = memory_stats(f.tree);
    EXPECT_EQ(s.chunks_used, 0u);
    EXPECT_EQ(s.kv_bytes, 0u);
    EXPECT_EQ(s.stored_tokens, 0u);
    EXPECT_EQ(s.logical_tokens, 0u);
    EXPECT_EQ(s.waste_fraction, 0.0);
    EXPECT_EQ(s.sharing_ratio, 0.0);
}

TEST(MemoryStats, SingleSequenceWasteBound) {
    for (std::size_t c : {1u, 3u, 16u, 64u})
        for (std::size_t n : {1u, 5u, 63u, 64u, 65u, 200u}) {
            Fixture f(c);
            f.insert(iota_tokens(n));
            const MemoryStats s = memory_stats(f.tree);
            const std::size_t slots = (n + c - 1) / c * c;
            const double expect = static_cast<double>((c - n % c) % c) / static_cast<double>(slots);
            EXPECT_DOUBLE_EQ(s.waste_fraction, expect) << "c=" << c << " n=" << n;
            EXPECT_LE(s.waste_fraction, static_cast<double>(c - 1) / static_cast<double>(n) + 1e-12);
        }
}

TEST(MemoryStats, SharedPromptChunkArithmetic) {
    // b sequences with an identical n_p-token prompt, each decoding n_c tokens.
    const std::size_t b = 32, n_p = 2048, n_c = 512, c = 64;
    auto chunks = [&](bool share) {
        ModelConfig cfg{1, 1, c, 2};
        ChunkAllocator alloc(cfg);
        PrefixTree tree(alloc, TreeOptions{share, 2});
        const auto prompt = iota_tokens(n_p);
        std::vector<SeqId> ids;
        for (std::size_t i = 0; i < b; ++i) ids.push_back(tree.insert_sequence(prompt, nullptr).id);
        const std::vector<float> kv(1, 0.0f);
        for (std::size_t t = 0; t < n_c; ++t)
            for (std::size_t i = 0; i < b; ++i) tree.append_token(ids[i], static_cast<TokenId>(10000 + i), kv, kv);
        return memory_stats(tree);
    };
    const MemoryStats shared = chunks(true);
    const MemoryStats mono = chunks(false);
    const std::size_t expect_shared = n_p / c + b * ((n_c + c - 1) / c);
    const std::size_t expect_mono = b * ((n_p + n_c + c - 1) / c);
    EXPECT_EQ(shared.chunks_used, expect_shared);
    EXPECT_EQ(mono.chunks_used, expect_mono);
    EXPECT_EQ(shared.chunks_used, 288u);
    EXPECT_EQ(mono.chunks_used, 1280u);
    EXPECT_NEAR(1.0 - static_cast<double>(shared.chunks_used) / static_cast<double>(mono.chunks_used), 0.775, 1e-12);
    EXPECT_EQ(shared.logical_tokens, b * (n_p + n_c));
    EXPECT_EQ(shared.stored_tokens, n_p + b * n_c);
    EXPECT_NEAR(shared.sharing_ratio, static_cast<double>(n_p) / static_cast<double>(n_p + n_c), 1e-12);
}

// ---------------------------------------------------------------------------
// Invariant fuzz
// ---------------------------------------------------------------------------

class TreeFuzz : public ::testing::TestWithParam<std::size_t> {};

TEST_P(TreeFuzz, InvariantsHoldAfterEveryOperation) {
    ModelConfig cfg{2, 4, GetParam(), 2};
    ChunkAllocator alloc(cfg);
    PrefixTree tree(alloc);
    testsupport::TreeFuzzer fuzz(tree, 1000 + GetParam());
    EXPECT_EQ(fuzz.run(3000), "");
    fuzz.drain();
    EXPECT_EQ(alloc.used(), 0u);
    EXPECT_EQ(alloc.free(), alloc.created());
    EXPECT_EQ(alloc.created(), alloc.high_water_mark());
}

INSTANTIATE_TEST_SUITE_P(ChunkSizes, TreeFuzz, ::testing::Values(1u, 2u, 3u, 8u));

// ---------------------------------------------------------------------------
// Dumps
// ---------------------------------------------------------------------------

TEST(TreeDump, TextMatchesGolden) {
    Fig1 f;
    f.append(f.s0, 77);
    std::ifstream in(std::string(CHUNKKV_GOLDEN_DIR) + "/fig1_tree.txt");
    ASSERT_TRUE(in) << "missing golden file";
    std::stringstream golden;
    golden << in.rdbuf();
    EXPECT_EQ(dump_tree_text(f.tree), golden.str());
}

TEST(TreeDump, DotMarksSharedChunks) {
    Fig1 f;
    std::ostringstream os;
    dump_tree_dot(f.tree, os);
    const std::string dot = os.str();
    EXPECT_EQ(dot.rfind("digraph", 0), 0u);
    std::size_t filled = 0;
    for (std::size_t p = dot.find("filled"); p != std::string::npos; p = dot.find("filled", p + 1)) ++filled;
    EXPECT_EQ(filled, 3u);
}
