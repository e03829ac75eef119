// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//
// chunkkv command-line tool: oracle verification, kernel and end-to-end
// benchmarks, roofline tables and prefix-tree dumps.
//
// Exit codes: 0 success, 1 verification or runtime failure, 2 usage error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "chunkkv/chunkkv.hpp"

namespace {

using namespace chunkkv;

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct Options {
    std::size_t heads = 8;
    std::size_t head_dim = 128;
    std::size_t chunk = 64;
    std::size_t batch = 32;
    std::size_t prompt = 1024;
    std::size_t shared = 1024;
    std::size_t completion = 64;
    double lambda = 1.0;
    std::size_t requests = 32;
    std::string mode;
    std::uint64_t seed = 0;
    std::string format = "table";
    std::string out;
    std::size_t repeats = 5;

    // Subcommand extras.
    std::size_t cases = 1000;
    std::string config;
    std::string clock = "wall";
    bool per_request = false;
    bool dot = false;
    std::vector<std::size_t> batches;
    std::size_t bytes = 2;
};

void add_model_flags(CLI::App* app, Options& o) {
    app->add_option("--heads", o.heads, "Attention heads (h)")->check(CLI::PositiveNumber);
    app->add_option("--head-dim", o.head_dim, "Head dimension (d)")->check(CLI::PositiveNumber);
    app->add_option("--chunk", o.chunk, "Chunk capacity in tokens (c)")->check(CLI::PositiveNumber);
}

void add_shape_flags(CLI::App* app, Options& o) {
    app->add_option("--prompt", o.prompt, "Prompt tokens per sequence (n_p)")->check(CLI::PositiveNumber);
    app->add_option("--shared", o.shared, "Shared prefix tokens (n_s)");
    app->add_option("--completion", o.completion, "Completion tokens per sequence (n_c)")
        ->check(CLI::PositiveNumber);
}

void add_mode_flag(CLI::App* app, Options& o) {
    app->add_option("--mode", o.mode, "Restrict to one cache mode (default: both)")
        ->check(CLI::IsMember({"shared", "monolithic"}));
}

void add_output_flags(CLI::App* app, Options& o) {
    app->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"csv", "jsonl", "table"}));
    app->add_option("--out", o.out, "Write results to PATH instead of stdout");
}

void emit(const ResultTable& t, const Options& o) {
    const ReportFormat fmt = parse_report_format(o.format);
    if (o.out.empty())
        write_report(t, fmt, std::cout);
    else
        write_report(t, fmt, o.out);
}

std::vector<CacheMode> selected_modes(const Options& o) {
    if (o.mode.empty()) return {CacheMode::Monolithic, CacheMode::PrefixShared};
    return {parse_cache_mode(o.mode)};
}

int cmd_verify(const Options& o) {
    VerifyOptions v;
    v.cases = o.cases;
    v.seed = o.seed;
    v.threads = default_worker_count();
    const VerifyReport rep = run_oracle_suite(v);
    ResultTable t;
    t.columns = {"cases", "passed", "failed", "max_rel_error", "max_rel_error_direct", "tolerance"};
    t.add_row({static_cast<std::int64_t>(o.cases), static_cast<std::int64_t>(rep.passed),
               static_cast<std::int64_t>(rep.failed), rep.max_error, rep.max_error_direct, v.tolerance});
    emit(t, o);
    for (const OracleCase& c : rep.failures)
        std::cerr << "failed: b=" << c.batch << " h=" << c.heads << " d=" << c.head_dim << " c=" << c.chunk
                  << " shared=" << c.shared_prefix << " max_logit=" << c.max_logit << '\n';
    return rep.failed == 0 ? kOk : kFailure;
}

int cmd_bench_kernel(const Options& o) {
    KernelBenchConfig cfg;
    cfg.heads = o.heads;
    cfg.head_dim = o.head_dim;
    cfg.chunk = o.chunk;
    cfg.batch = o.batch;
    cfg.prompt_tokens = o.prompt;
    cfg.shared_tokens = o.shared;
    cfg.completion_tokens = o.completion;
    cfg.repeats = o.repeats;
    cfg.seed = o.seed;
    if (o.mode.empty()) {
        emit(kernel_table({bench_kernel(cfg)}), o);
        return kOk;
    }
    const KernelBenchRow row = bench_kernel_mode(cfg, parse_cache_mode(o.mode));
    KernelComparison c;
    c.monolithic = c.shared = row;
    ResultTable t = kernel_table({c});
    t.rows.pop_back();
    emit(t, o);
    return kOk;
}

int cmd_bench_e2e(const Options& o, const CLI::App& sub) {
    RunConfig rc;
    if (!o.config.empty()) rc = load_run_config(o.config, rc);
    // Without a file every flag applies (defaults included); with one, only
    // flags given explicitly on the command line override it.
    auto given = [&](const char* flag) { return o.config.empty() || sub.count(flag) > 0; };
    ModelConfig& mc = rc.engine.model;
    if (given("--heads")) mc.num_heads = o.heads;
    if (given("--head-dim")) mc.head_dim = o.head_dim;
    if (given("--chunk")) mc.chunk_capacity = o.chunk;
    if (o.config.empty()) mc.kv_bytes_per_element = o.bytes;
    if (given("--batch")) rc.engine.max_batch = o.batch;
    if (given("--seed")) rc.engine.seed = rc.workload.seed = o.seed;
    if (given("--clock")) rc.engine.clock = parse_clock(o.clock);
    if (given("--lambda")) rc.workload.lambda = o.lambda;
    if (given("--requests")) rc.workload.request_count = o.requests;
    if (given("--prompt")) rc.workload.prompt_tokens = o.prompt;
    if (given("--shared")) rc.workload.shared_tokens = o.shared;
    if (given("--completion")) rc.workload.completion_tokens = o.completion;
    rc.engine.validate();
    rc.workload.validate();

    const std::vector<Request> trace = gen_workload(rc.workload);
    std::vector<std::pair<std::string, RunMetrics>> runs;
    for (CacheMode m : selected_modes(o)) {
        EngineConfig cfg = rc.engine;
        cfg.mode = m;
        runs.emplace_back(to_string(m), Engine(cfg).run(trace));
    }
    if (o.per_request) {
        ResultTable all;
        for (const auto& [name, m] : runs) {
            ResultTable t = request_table(name, m);
            all.columns = t.columns;
            for (auto& r : t.rows) all.rows.push_back(std::move(r));
        }
        emit(all, o);
    } else {
        std::vector<std::pair<std::string, const RunMetrics*>> refs;
        for (const auto& [name, m] : runs) refs.emplace_back(name, &m);
        emit(metrics_table(refs), o);
    }
    return kOk;
}

int cmd_roofline(const Options& o, const CLI::App& sub) {
    std::vector<std::size_t> batches = o.batches;
    if (batches.empty()) batches = {1, 32, 64};
    const std::size_t heads = sub.count("--heads") ? o.heads : 32;
    const std::size_t n = sub.count("--prompt") ? o.prompt : 2048;
    emit(roofline_table(batches, heads, n, o.head_dim, o.bytes), o);
    return kOk;
}

int cmd_dump_tree(const Options& o) {
    const ModelConfig mc{o.heads, o.head_dim, o.chunk, o.bytes};
    ChunkAllocator alloc(mc);
    const bool share = o.mode != "monolithic";
    PrefixTree tree(alloc, TreeOptions{share, 2});
    WorkloadSpec ws;
    ws.request_count = o.batch;
    ws.prompt_tokens = o.prompt;
    ws.shared_tokens = o.shared;
    ws.completion_tokens = o.completion;
    ws.seed = o.seed;
    ws.lambda = std::numeric_limits<double>::infinity();
    std::vector<SeqId> ids;
    for (const Request& r : gen_workload(ws)) ids.push_back(tree.insert_sequence(r.prompt, nullptr).id);
    const std::vector<float> kv(mc.num_heads * mc.head_dim, 0.0f);
    // Decoded tokens are distinct per sequence so that only the prompt is shared.
    for (std::size_t step = 0; step < o.completion; ++step)
        for (std::size_t i = 0; i < ids.size(); ++i)
            tree.append_token(ids[i], detail::hashed_token(o.seed, 0x64756d70ull, i, step, ws.vocab_size), kv, kv);

    std::ofstream file;
    std::ostream* os = &std::cout;
    if (!o.out.empty()) {
        file.open(o.out, std::ios::binary | std::ios::trunc);
        if (!file) throw Error("cannot open '" + o.out + "' for writing");
        os = &file;
    }
    if (o.dot)
        dump_tree_dot(tree, *os);
    else
        dump_tree_text(tree, *os);
    const MemoryStats s = memory_stats(tree);
    std::cerr << "chunks " << s.chunks_used << ", stored tokens " << s.stored_tokens << ", logical tokens "
              << s.logical_tokens << ", waste " << s.waste_fraction << ", sharing " << s.sharing_ratio << '\n';
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prefix-aware chunked KV cache and two-phase attention"};
    app.require_subcommand(1);
    Options o;

    auto* verify = app.add_subcommand("verify", "Randomized equivalence check of two-phase attention vs the oracle");
    verify->add_option("--seed", o.seed, "Base seed");
    verify->add_option("--cases", o.cases, "Number of random configurations")->check(CLI::PositiveNumber);
    add_output_flags(verify, o);

    auto* bk = app.add_subcommand("bench-kernel", "Lockstep decode micro-benchmark of the attention kernel");
    add_model_flags(bk, o);
    bk->add_option("--batch", o.batch, "Sequences in the batch (b)")->check(CLI::PositiveNumber);
    add_shape_flags(bk, o);
    add_mode_flag(bk, o);
    bk->add_option("--seed", o.seed, "Seed");
    bk->add_option("--repeats", o.repeats, "Timed repetitions (median reported)")->check(CLI::PositiveNumber);
    add_output_flags(bk, o);

    auto* be = app.add_subcommand("bench-e2e", "Serve a Poisson request trace in both cache modes");
    add_model_flags(be, o);
    be->add_option("--batch", o.batch, "Maximum decoding batch (b_max)")->check(CLI::PositiveNumber);
    add_shape_flags(be, o);
    be->add_option("--lambda", o.lambda, "Arrival rate in requests/s (inf for a burst)");
    be->add_option("--requests", o.requests, "Number of requests")->check(CLI::PositiveNumber);
    add_mode_flag(be, o);
    be->add_option("--seed", o.seed, "Seed");
    be->add_option("--config", o.config, "Run configuration file (key = value)")->check(CLI::ExistingFile);
    be->add_option("--clock", o.clock, "Latency clock")->check(CLI::IsMember({"wall", "virtual"}));
    be->add_flag("--per-request", o.per_request, "Emit one record per request instead of aggregates");
    add_output_flags(be, o);

    auto* rf = app.add_subcommand("roofline", "Analytical FLOPs/MOPs of one decode-step self-attention");
    rf->add_option("--batch", o.batches, "Batch sizes (repeatable; default 1 32 64)");
    rf->add_option("--heads", o.heads, "Attention heads (default 32)")->check(CLI::PositiveNumber);
    rf->add_option("--head-dim", o.head_dim, "Head dimension")->check(CLI::PositiveNumber);
    rf->add_option("--prompt", o.prompt, "Context tokens (default 2048)")->check(CLI::PositiveNumber);
    rf->add_option("--bytes", o.bytes, "Bytes per element")->check(CLI::PositiveNumber);
    add_output_flags(rf, o);

    auto* dt = app.add_subcommand("dump-tree", "Build a prefix tree from a synthetic batch and print it");
    add_model_flags(dt, o);
    dt->add_option("--batch", o.batch, "Sequences")->check(CLI::PositiveNumber);
    add_shape_flags(dt, o);
    add_mode_flag(dt, o);
    dt->add_option("--seed", o.seed, "Seed");
    dt->add_option("--out", o.out, "Write the dump to PATH");
    dt->add_flag("--dot", o.dot, "Graphviz output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*verify) return cmd_verify(o);
        if (*bk) return cmd_bench_kernel(o);
        if (*be) return cmd_bench_e2e(o, *be);
        if (*rf) return cmd_roofline(o, *rf);
        if (*dt) return cmd_dump_tree(o);
    } catch (const ContractError& e) {
        std::cerr << "chunkkv: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "chunkkv: " << e.what() << '\n';
        return kFailure;
    }
    return kUsage;
}
