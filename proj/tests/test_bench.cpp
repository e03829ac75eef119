// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <vector>

#include "chunkkv/bench.hpp"
#include "chunkkv/report.hpp"
#include "chunkkv/roofline.hpp"
#include "chunkkv/workload.hpp"

using namespace chunkkv;

// ---------------------------------------------------------------------------
// Workload
// ---------------------------------------------------------------------------

TEST(Workload, PoissonMeanGap) {
    WorkloadSpec spec;
    spec.lambda = 1.0;
    spec.request_count = 1000;
    spec.prompt_tokens = 4;
    spec.shared_tokens = 2;
    spec.completion_tokens = 1;
    const auto trace = gen_workload(spec);
    ASSERT_EQ(trace.size(), 1000u);
    double prev = 0.0, sum = 0.0;
    for (const auto& r : trace) {
        ASSERT_GE(r.arrival_s, prev);
        sum += r.arrival_s - prev;
        prev = r.arrival_s;
    }
    const double mean = sum / 1000.0;
    EXPECT_GE(mean, 0.9);
    EXPECT_LE(mean, 1.1);
}

TEST(Workload, BurstArrivesAtZero) {
    WorkloadSpec spec;
    spec.lambda = std::numeric_limits<double>::infinity();
    spec.request_count = 5;
    spec.prompt_tokens = 3;
    spec.shared_tokens = 0;
    for (const auto& r : gen_workload(spec)) EXPECT_EQ(r.arrival_s, 0.0);
}

TEST(Workload, FullySharedPrompts) {
    WorkloadSpec spec;
    spec.request_count = 10;
    spec.prompt_tokens = spec.shared_tokens = 64;
    const auto trace = gen_workload(spec);
    for (const auto& r : trace) EXPECT_EQ(r.prompt, trace[0].prompt);
}

TEST(Workload, PoolPerRequestSharesNothing) {
    WorkloadSpec spec;
    spec.request_count = 16;
    spec.prompt_pool = 16;
    spec.prompt_tokens = 32;
    spec.shared_tokens = 16;
    const auto trace = gen_workload(spec);
    std::set<std::vector<TokenId>> prefixes;
    for (const auto& r : trace) prefixes.emplace(r.prompt.begin(), r.prompt.begin() + 16);
    EXPECT_EQ(prefixes.size(), 16u);
}

TEST(Workload, PoolsRoundRobinAndSuffixesDiffer) {
    WorkloadSpec spec;
    spec.request_count = 6;
    spec.prompt_pool = 2;
    spec.prompt_tokens = 40;
    spec.shared_tokens = 24;
    const auto trace = gen_workload(spec);
    for (const auto& r : trace) {
        EXPECT_EQ(r.pool, r.id % 2);
        EXPECT_TRUE(std::equal(r.prompt.begin(), r.prompt.begin() + 24, trace[r.pool].prompt.begin()));
    }
    EXPECT_FALSE(std::equal(trace[0].prompt.begin() + 24, trace[0].prompt.end(), trace[2].prompt.begin() + 24));
}

TEST(Workload, TraceIsByteIdenticalPerSeed) {
    WorkloadSpec spec;
    spec.request_count = 50;
    spec.prompt_tokens = 30;
    spec.shared_tokens = 10;
    spec.seed = 77;
    std::ostringstream a, b, c;
    write_trace(gen_workload(spec), a);
    write_trace(gen_workload(spec), b);
    spec.seed = 78;
    write_trace(gen_workload(spec), c);
    EXPECT_EQ(a.str(), b.str());
    EXPECT_NE(a.str(), c.str());
}

TEST(Workload, InvalidSpecsRejected) {
    WorkloadSpec spec;
    spec.shared_tokens = spec.prompt_tokens + 1;
    EXPECT_THROW(gen_workload(spec), ContractError);
    spec = WorkloadSpec{};
    spec.lambda = 0.0;
    EXPECT_THROW(gen_workload(spec), ContractError);
    spec = WorkloadSpec{};
    spec.completion_tokens = 0;
    EXPECT_THROW(gen_workload(spec), ContractError);
}

// ---------------------------------------------------------------------------
// Roofline
// ---------------------------------------------------------------------------

TEST(Roofline, UnitCaseIsExact) {
    const RooflineEstimate r = estimate_roofline(1, 1, 1, 1, 1);
    EXPECT_EQ(r.flops, 4.0);
    // K,V read (2) + q read, o write (2) + logits write and read (2).
    EXPECT_EQ(r.mops, 6.0);
    EXPECT_EQ(r.arithmetic_intensity, 4.0 / 6.0);
    EXPECT_THROW(estimate_roofline(0, 1, 1, 1, 1), ContractError);
}

struct ReferenceRow {
    std::size_t batch;
    double flops_e6;
    double mops_e6;
};

class RooflineReference : public ::testing::TestWithParam<ReferenceRow> {};

TEST_P(RooflineReference, SelfAttentionRowWithinTolerance) {
    const ReferenceRow row = GetParam();
    const RooflineEstimate r = estimate_roofline(row.batch, 32, 2048, 128, 2);
    EXPECT_NEAR(r.flops / 1e6, row.flops_e6, 0.05 * row.flops_e6);
    EXPECT_NEAR(r.mops / 1e6, row.mops_e6, 0.05 * row.mops_e6);
    EXPECT_NEAR(r.arithmetic_intensity, 0.99, 0.02);
    // Closed form for the flops column: 4 b h n d.
    EXPECT_EQ(r.flops, 4.0 * static_cast<double>(row.batch) * 32 * 2048 * 128);
}

INSTANTIATE_TEST_SUITE_P(H32N2048D128, RooflineReference,
                         ::testing::Values(ReferenceRow{1, 33.57, 33.85}, ReferenceRow{32, 1074.27, 1083.18},
                                           ReferenceRow{64, 2148.53, 2166.36}),
                         [](const auto& info) { return "b" + std::to_string(info.param.batch); });

TEST(Roofline, TableMatchesGolden) {
    const std::vector<std::size_t> batches{1, 32, 64};
    const ResultTable got = roofline_table(batches, 32, 2048, 128, 2);
    std::ifstream in(std::string(CHUNKKV_GOLDEN_DIR) + "/roofline.csv");
    ASSERT_TRUE(in);
    const ResultTable want = parse_csv(in);
    ASSERT_EQ(got.columns, want.columns);
    ASSERT_EQ(got.rows.size(), want.rows.size());
    for (std::size_t r = 0; r < got.rows.size(); ++r)
        for (std::size_t c = 0; c < got.columns.size(); ++c) {
            const Cell& g = got.rows[r][c];
            const Cell& w = want.rows[r][c];
            if (const auto* gd = std::get_if<double>(&g)) {
                ASSERT_TRUE(std::holds_alternative<double>(w));
                EXPECT_NEAR(*gd, std::get<double>(w), 1e-9 * std::abs(*gd)) << got.columns[c];
            } else {
                EXPECT_EQ(g, w) << got.columns[c];
            }
        }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

ResultTable sample_table() {
    ResultTable t;
    t.columns = {"mode", "batch", "latency_ms", "note"};
    t.add_row({std::string("shared"), std::int64_t{32}, 1.25, std::string("a,b \"quoted\"")});
    return t;
}

} // namespace

TEST(Report, EmptyTableWritesHeaderOnly) {
    ResultTable t;
    t.columns = {"a", "b"};
    std::ostringstream os;
    write_csv(t, os);
    EXPECT_EQ(os.str(), "a,b\n");
    std::ostringstream js;
    write_jsonl(t, js);
    EXPECT_EQ(js.str(), "");
}

TEST(Report, CsvRoundTrip) {
    const ResultTable t = sample_table();
    std::stringstream ss;
    write_csv(t, ss);
    EXPECT_EQ(parse_csv(ss), t);
}

TEST(Report, JsonlRoundTrip) {
    const ResultTable t = sample_table();
    std::stringstream ss;
    write_jsonl(t, ss);
    EXPECT_EQ(ss.str(), "{\"mode\":\"shared\",\"batch\":32,\"latency_ms\":1.25,\"note\":\"a,b \\\"quoted\\\"\"}\n");
    EXPECT_EQ(parse_jsonl(ss), t);
}

TEST(Report, IntegralDoublesStayDoubles) {
    ResultTable t;
    t.columns = {"x"};
    t.add_row({2.0});
    std::stringstream ss;
    write_csv(t, ss);
    EXPECT_EQ(ss.str(), "x\n2.0\n");
    EXPECT_EQ(parse_csv(ss), t);
}

TEST(Report, AlignedTable) {
    std::ostringstream os;
    write_table(sample_table(), os);
    const std::string s = os.str();
    EXPECT_NE(s.find("latency_ms"), std::string::npos);
    EXPECT_NE(s.find("1.2500"), std::string::npos);
}

TEST(Report, RowWidthChecked) {
    ResultTable t;
    t.columns = {"a"};
    EXPECT_THROW(t.add_row({std::int64_t{1}, std::int64_t{2}}), ShapeError);
}

TEST(Report, UnwritableDestinationIsError) {
    EXPECT_THROW(write_report(sample_table(), ReportFormat::Csv, "/nonexistent-dir/x.csv"), Error);
    const auto path = std::filesystem::temp_directory_path() / "chunkkv_report_test.jsonl";
    write_report(sample_table(), ReportFormat::Jsonl, path.string());
    std::ifstream in(path);
    EXPECT_EQ(parse_jsonl(in), sample_table());
    std::filesystem::remove(path);
    EXPECT_THROW(parse_report_format("xml"), ContractError);
}

// ---------------------------------------------------------------------------
// Benchmarks (smoke-sized)
// ---------------------------------------------------------------------------

TEST(BenchKernel, SmallComparisonProducesBothModes) {
    KernelBenchConfig cfg;
    cfg.heads = 2;
    cfg.head_dim = 16;
    cfg.chunk = 8;
    cfg.batch = 4;
    cfg.prompt_tokens = 64;
    cfg.shared_tokens = 64;
    cfg.completion_tokens = 4;
    cfg.repeats = 3;
    cfg.threads = 1;
    const KernelComparison c = bench_kernel(cfg);
    EXPECT_EQ(c.shared.samples_ms.size(), 3u);
    ASSERT_EQ(c.paired_speedups.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i)
        EXPECT_DOUBLE_EQ(c.paired_speedups[i], c.monolithic.samples_ms[i] / c.shared.samples_ms[i]);
    EXPECT_EQ(c.speedup(), median(c.paired_speedups));
    EXPECT_GT(c.shared.token_rate, 0.0);
    EXPECT_GT(c.monolithic.token_rate, 0.0);
    // Shared prompt: 8 shared chunks + 4 private; monolithic: 4 x 9.
    EXPECT_EQ(c.shared.peak_chunks, 8u + 4u);
    EXPECT_EQ(c.monolithic.peak_chunks, 4u * 9u);
    const ResultTable t = kernel_table({c});
    EXPECT_EQ(t.rows.size(), 2u);
}

TEST(BenchKernel, RejectsInvalidConfig) {
    KernelBenchConfig cfg;
    cfg.shared_tokens = cfg.prompt_tokens + 1;
    EXPECT_THROW(bench_kernel(cfg), ContractError);
    cfg = KernelBenchConfig{};
    cfg.repeats = 0;
    EXPECT_THROW(bench_kernel(cfg), ContractError);
}

TEST(Median, OddAndEven) {
    EXPECT_EQ(median({3, 1, 2}), 2.0);
    EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
    EXPECT_EQ(median({}), 0.0);
}
