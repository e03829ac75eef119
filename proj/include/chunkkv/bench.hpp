// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "chunkkv/attention.hpp"
#include "chunkkv/chunk_allocator.hpp"
#include "chunkkv/engine.hpp"
#include "chunkkv/prefix_tree.hpp"
#include "chunkkv/report.hpp"
#include "chunkkv/roofline.hpp"
#include "chunkkv/synthetic_model.hpp"
#include "chunkkv/thread_pool.hpp"
#include "chunkkv/workload.hpp"

namespace chunkkv {

// ---------------------------------------------------------------------------
// Kernel micro-benchmark
// ---------------------------------------------------------------------------

/// Fixed batch decoded in lockstep: b sequences with n_p-token prompts, the first
/// n_s tokens common, each generating n_c tokens.
struct KernelBenchConfig {
    std::size_t heads = 8;
    std::size_t head_dim = 128;
    std::size_t chunk = 64;
    std::size_t batch = 32;
    std::size_t prompt_tokens = 1024;
    std::size_t shared_tokens = 1024;
    std::size_t completion_tokens = 64;
    std::size_t repeats = 5;
    std::size_t warmup = 1;
    std::size_t threads = 0;
    std::uint64_t seed = 0;
    std::size_t vocab_size = 32000;
};

struct KernelBenchRow {
    CacheMode mode = CacheMode::PrefixShared;
    std::size_t prompt_tokens = 0;
    std::size_t shared_tokens = 0;
    std::size_t completion_tokens = 0;
    std::size_t batch = 0;
    /// Median over repeats of the summed kernel time for all n_c steps.
    double latency_ms = 0.0;
    /// n_c * b / latency.
    double token_rate = 0.0;
    std::size_t peak_chunks = 0;
    std::vector<double> samples_ms;
};

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

namespace detail {

inline void check_kernel_config(const KernelBenchConfig& cfg) {
    if (cfg.shared_tokens > cfg.prompt_tokens) throw ContractError("bench-kernel: shared exceeds prompt");
    if (cfg.batch == 0 || cfg.prompt_tokens == 0 || cfg.completion_tokens == 0)
        throw ContractError("bench-kernel: batch, prompt and completion must be positive");
    if (cfg.repeats == 0) throw ContractError("bench-kernel: repeats must be >= 1");
}

/// One decode run of n_c steps over a fresh tree. Only the attention kernel is
/// timed; tree updates and projections run outside the timed region.
class KernelHarness {
public:
    KernelHarness(const KernelBenchConfig& cfg, CacheMode mode)
        : cfg_(cfg), mode_(mode), mc_{cfg.heads, cfg.head_dim, cfg.chunk, 2}, alloc_((mc_.validate(), mc_)),
          pool_(cfg.threads == 0 ? default_worker_count() : cfg.threads), kernel_(pool_),
          model_(cfg.seed, cfg.heads, cfg.head_dim) {
        WorkloadSpec ws;
        ws.request_count = cfg.batch;
        ws.prompt_tokens = cfg.prompt_tokens;
        ws.shared_tokens = cfg.shared_tokens;
        ws.completion_tokens = cfg.completion_tokens;
        ws.vocab_size = cfg.vocab_size;
        ws.seed = cfg.seed;
        ws.lambda = std::numeric_limits<double>::infinity();
        prompts_ = gen_workload(ws);
    }

    /// Builds a fresh tree holding every prompt.
    void begin() {
        tree_.reset();
        tree_ = std::make_unique<PrefixTree>(alloc_, TreeOptions{mode_ == CacheMode::PrefixShared, 2});
        ids_.clear();
        for (const Request& r : prompts_) {
            std::span<const TokenId> toks = r.prompt;
            ids_.push_back(tree_->insert_sequence(toks, [&](std::size_t b, std::size_t e, KvRows rows) {
                                   model_.fill_kv(toks, b, e, rows);
                               }).id);
        }
        total_s_ = 0.0;
    }

    /// Appends one token to every sequence, then times one kernel call.
    void step(std::size_t index) {
        const std::size_t hd = cfg_.heads * cfg_.head_dim;
        qs_.resize(cfg_.batch * hd);
        k_.resize(hd);
        v_.resize(hd);
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            const TokenId tok = hashed_token(cfg_.seed, 0x636f6dull, i, index, cfg_.vocab_size);
            const std::size_t pos = tree_->sequence_length(ids_[i]);
            model_.qkv(tok, pos, std::span<float>(qs_).subspan(i * hd, hd), k_, v_);
            tree_->append_token(ids_[i], tok, k_, v_);
        }
        auto ctx = tree_->build_context();
        QueryBatch q(ctx->batch_size(), cfg_.heads, cfg_.head_dim);
        for (std::size_t b = 0; b < ctx->batch_size(); ++b)
            std::copy_n(qs_.data() + ctx->order[b] * hd, hd, q.row(b, 0));
        const auto t0 = std::chrono::steady_clock::now();
        kernel_.run(q, *ctx, out_);
        total_s_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    /// Releases the tree; returns the summed kernel time in milliseconds.
    double finish() {
        peak_chunks_ = std::max(peak_chunks_, alloc_.used());
        tree_.reset();
        return total_s_ * 1e3;
    }

    double run_once() {
        begin();
        for (std::size_t step = 0; step < cfg_.completion_tokens; ++step) this->step(step);
        return finish();
    }

    KernelBenchRow row(std::vector<double> samples_ms) const {
        KernelBenchRow r;
        r.mode = mode_;
        r.prompt_tokens = cfg_.prompt_tokens;
        r.shared_tokens = cfg_.shared_tokens;
        r.completion_tokens = cfg_.completion_tokens;
        r.batch = cfg_.batch;
        r.samples_ms = std::move(samples_ms);
        r.latency_ms = median(r.samples_ms);
        r.token_rate = static_cast<double>(cfg_.completion_tokens * cfg_.batch) / (r.latency_ms * 1e-3);
        r.peak_chunks = peak_chunks_;
        return r;
    }

private:
    KernelBenchConfig cfg_;
    CacheMode mode_;
    ModelConfig mc_;
    ChunkAllocator alloc_;
    ThreadPool pool_;
    TwoPhaseKernel kernel_;
    SyntheticModel model_;
    std::vector<Request> prompts_;
    std::unique_ptr<PrefixTree> tree_;
    std::vector<SeqId> ids_;
    std::vector<float> qs_, k_, v_;
    AttnOutput out_;
    double total_s_ = 0.0;
    std::size_t peak_chunks_ = 0;
};

} // namespace detail

/// Median over `repeats` runs after `warmup` discarded runs, one cache mode.
inline KernelBenchRow bench_kernel_mode(const KernelBenchConfig& cfg, CacheMode mode) {
    detail::check_kernel_config(cfg);
    detail::KernelHarness h(cfg, mode);
    std::vector<double> samples;
    for (std::size_t rep = 0; rep < cfg.warmup + cfg.repeats; ++rep) {
        const double ms = h.run_once();
        if (rep >= cfg.warmup) samples.push_back(ms);
    }
    return h.row(std::move(samples));
}

struct KernelComparison {
    KernelBenchRow shared;
    KernelBenchRow monolithic;
    /// Per-repetition monolithic time / shared time, same order as the samples.
    std::vector<double> paired_speedups;
    /// Median paired speedup; equals the token-rate ratio when there is one repetition.
    double speedup() const {
        if (paired_speedups.empty()) return shared.token_rate / monolithic.token_rate;
        return median(paired_speedups);
    }
};

/**
 * Runs both cache modes on the same prompts. The two runs advance in lockstep,
 * alternating which mode goes first at each decode step, so both see the same
 * machine load and each leaves the other a cache disturbed by a full decode
 * step, as the other layers of a model would. The speedup is the median of the
 * per-repetition time ratios.
 */
inline KernelComparison bench_kernel(const KernelBenchConfig& cfg) {
    detail::check_kernel_config(cfg);
    detail::KernelHarness mono(cfg, CacheMode::Monolithic), shared(cfg, CacheMode::PrefixShared);
    std::vector<double> ms_mono, ms_shared;
    KernelComparison c;
    for (std::size_t rep = 0; rep < cfg.warmup + cfg.repeats; ++rep) {
        mono.begin();
        shared.begin();
        for (std::size_t step = 0; step < cfg.completion_tokens; ++step) {
            detail::KernelHarness& first = step % 2 ? shared : mono;
            detail::KernelHarness& second = step % 2 ? mono : shared;
            first.step(step);
            second.step(step);
        }
        const double a = mono.finish();
        const double b = shared.finish();
        if (rep < cfg.warmup) continue;
        ms_mono.push_back(a);
        ms_shared.push_back(b);
        c.paired_speedups.push_back(a / b);
    }
    c.monolithic = mono.row(std::move(ms_mono));
    c.shared = shared.row(std::move(ms_shared));
    return c;
}

inline ResultTable kernel_table(const std::vector<KernelComparison>& results) {
    ResultTable t;
    t.columns = {"mode", "batch", "prompt", "shared", "completion", "latency_ms", "token_rate", "peak_chunks",
                 "speedup"};
    for (const auto& c : results)
        for (const KernelBenchRow* r : {&c.monolithic, &c.shared})
            t.add_row({std::string(to_string(r->mode)), static_cast<std::int64_t>(r->batch),
                       static_cast<std::int64_t>(r->prompt_tokens), static_cast<std::int64_t>(r->shared_tokens),
                       static_cast<std::int64_t>(r->completion_tokens), r->latency_ms, r->token_rate,
                       static_cast<std::int64_t>(r->peak_chunks), r == &c.shared ? c.speedup() : 1.0});
    return t;
}

// ---------------------------------------------------------------------------
// End-to-end
// ---------------------------------------------------------------------------

struct E2eComparison {
    RunMetrics shared;
    RunMetrics monolithic;

    double kv_bytes_ratio() const {
        return static_cast<double>(shared.peak_kv_bytes) / static_cast<double>(monolithic.peak_kv_bytes);
    }
    double latency_ratio() const { return shared.normalized_latency_ms / monolithic.normalized_latency_ms; }
};

/// Runs both cache modes on the same request trace.
inline E2eComparison bench_e2e(const WorkloadSpec& spec, EngineConfig cfg) {
    const std::vector<Request> trace = gen_workload(spec);
    E2eComparison out;
    cfg.mode = CacheMode::PrefixShared;
    out.shared = Engine(cfg).run(trace);
    cfg.mode = CacheMode::Monolithic;
    out.monolithic = Engine(cfg).run(trace);
    return out;
}

inline ResultTable metrics_table(const std::vector<std::pair<std::string, const RunMetrics*>>& runs) {
    ResultTable t;
    t.columns = {"mode",           "normalized_latency_ms", "token_rate",       "peak_kv_bytes",
                 "peak_kv_chunks", "peak_batch_size",       "completion_tokens", "projections_computed",
                 "projections_skipped", "decode_steps",     "decode_time_s",    "prefill_time_s",
                 "makespan_s"};
    for (const auto& [name, m] : runs)
        t.add_row({name, m->normalized_latency_ms, m->token_rate, static_cast<std::int64_t>(m->peak_kv_bytes),
                   static_cast<std::int64_t>(m->peak_kv_chunks), static_cast<std::int64_t>(m->peak_batch_size),
                   static_cast<std::int64_t>(m->total_completion_tokens),
                   static_cast<std::int64_t>(m->projections_computed),
                   static_cast<std::int64_t>(m->projections_skipped), static_cast<std::int64_t>(m->decode_steps),
                   m->decode_time_s, m->prefill_time_s, m->makespan_s});
    return t;
}

/// Per-request trace records of one run.
inline ResultTable request_table(const std::string& mode, const RunMetrics& m) {
    ResultTable t;
    t.columns = {"mode",        "request",       "arrival_s",          "admit_s",
                 "first_token_s", "finish_s",    "prompt_tokens",      "completion_tokens",
                 "projections_computed", "projections_skipped", "normalized_latency_ms", "token_digest"};
    for (const RequestRecord& r : m.requests)
        t.add_row({mode, static_cast<std::int64_t>(r.id), r.arrival_s, r.admit_s, r.first_token_s, r.finish_s,
                   static_cast<std::int64_t>(r.prompt_tokens), static_cast<std::int64_t>(r.completion_tokens),
                   static_cast<std::int64_t>(r.projections_computed),
                   static_cast<std::int64_t>(r.projections_skipped), r.normalized_latency_ms(),
                   std::to_string(r.token_digest)});
    return t;
}

// ---------------------------------------------------------------------------
// Roofline
// ---------------------------------------------------------------------------

inline ResultTable roofline_table(std::span<const std::size_t> batches, std::size_t h, std::size_t n, std::size_t d,
                                  std::size_t bytes) {
    ResultTable t;
    t.columns = {"batch", "heads", "context", "head_dim", "bytes_per_element", "flops", "mops",
                 "arithmetic_intensity"};
    for (std::size_t b : batches) {
        const RooflineEstimate r = estimate_roofline(b, h, n, d, bytes);
        t.add_row({static_cast<std::int64_t>(b), static_cast<std::int64_t>(h), static_cast<std::int64_t>(n),
                   static_cast<std::int64_t>(d), static_cast<std::int64_t>(bytes), r.flops, r.mops,
                   r.arithmetic_intensity});
    }
    return t;
}

} // namespace chunkkv
