// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "chunkkv/attention.hpp"
#include "chunkkv/chunk_allocator.hpp"
#include "chunkkv/common.hpp"
#include "chunkkv/memory_stats.hpp"
#include "chunkkv/prefix_tree.hpp"
#include "chunkkv/synthetic_model.hpp"
#include "chunkkv/thread_pool.hpp"
#include "chunkkv/workload.hpp"

namespace chunkkv {

enum class CacheMode { PrefixShared, Monolithic };

enum class TokenPolicy {
    /// Next token is a hash of the attention output.
    OutputHash,
    /// Every sequence emits the same token at the same decode index.
    Lockstep,
};

enum class ClockKind {
    /// Time advances by the measured duration of each prefill / decode step.
    Wall,
    /// Time advances by a fixed cost per counted flop and byte; fully reproducible.
    Virtual,
};

inline const char* to_string(CacheMode m) { return m == CacheMode::PrefixShared ? "shared" : "monolithic"; }

inline CacheMode parse_cache_mode(const std::string& s) {
    if (s == "shared") return CacheMode::PrefixShared;
    if (s == "monolithic") return CacheMode::Monolithic;
    throw ContractError("unknown mode '" + s + "' (expected shared|monolithic)");
}

inline ClockKind parse_clock(const std::string& s) {
    if (s == "wall") return ClockKind::Wall;
    if (s == "virtual") return ClockKind::Virtual;
    throw ContractError("unknown clock '" + s + "' (expected wall|virtual)");
}

struct EngineConfig {
    ModelConfig model;
    std::size_t max_batch = 32;
    CacheMode mode = CacheMode::PrefixShared;
    std::size_t share_threshold = 2;
    TokenPolicy policy = TokenPolicy::OutputHash;
    ClockKind clock = ClockKind::Wall;
    bool direct_reduce = false;
    std::uint64_t seed = 0;
    std::size_t vocab_size = 32000;
    /// 0 picks default_worker_count().
    std::size_t threads = 0;
    std::size_t max_chunks = std::numeric_limits<std::size_t>::max();
    /// Rates of the virtual clock.
    double virtual_flops_per_s = 1e10;
    double virtual_bytes_per_s = 1e10;

    void validate() const {
        model.validate();
        if (max_batch == 0) throw ContractError("engine: max_batch must be >= 1");
        if (vocab_size < 2) throw ContractError("engine: vocab_size must be >= 2");
        if (!(virtual_flops_per_s > 0.0) || !(virtual_bytes_per_s > 0.0))
            throw ContractError("engine: virtual clock rates must be positive");
    }
};

enum class Phase { Queued, Prefilling, Decoding, Finished };

struct SequenceState {
    std::size_t request_id = 0;
    SeqId seq = 0;
    std::vector<TokenId> prompt;
    std::vector<TokenId> generated;
    std::size_t target_completion = 0;
    double arrival_s = 0.0;
    double admit_s = 0.0;
    double first_token_s = 0.0;
    double finish_s = 0.0;
    Phase phase = Phase::Queued;
    std::size_t projections_computed = 0;
    std::size_t projections_skipped = 0;
};

/// Per-request outcome of a run.
struct RequestRecord {
    std::size_t id = 0;
    double arrival_s = 0.0;
    double admit_s = 0.0;
    double first_token_s = 0.0;
    double finish_s = 0.0;
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
    std::size_t projections_computed = 0;
    std::size_t projections_skipped = 0;
    /// Hash of the generated token stream.
    std::uint64_t token_digest = 0;

    double latency_s() const { return finish_s - arrival_s; }
    double normalized_latency_ms() const { return latency_s() * 1e3 / static_cast<double>(completion_tokens); }
};

struct RunMetrics {
    /// Mean over requests of end-to-end latency (queuing included) per completion token.
    double normalized_latency_ms = 0.0;
    /// Completion tokens per second of decode time.
    double token_rate = 0.0;
    /// Allocator high-water mark; covers every run of the same Engine.
    std::size_t peak_kv_bytes = 0;
    std::size_t peak_kv_chunks = 0;
    std::size_t peak_batch_size = 0;
    std::size_t total_completion_tokens = 0;
    std::size_t projections_computed = 0;
    std::size_t projections_skipped = 0;
    std::size_t decode_steps = 0;
    double decode_time_s = 0.0;
    double prefill_time_s = 0.0;
    double makespan_s = 0.0;
    std::vector<RequestRecord> requests;
};

/// Recomputes the aggregate from the per-request records, in record order.
inline double mean_normalized_latency_ms(const std::vector<RequestRecord>& recs) {
    if (recs.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& r : recs) sum += r.normalized_latency_ms();
    return sum / static_cast<double>(recs.size());
}

inline std::uint64_t digest_tokens(std::span<const TokenId> tokens) {
    std::uint64_t h = 0x6a09e667f3bcc908ull;
    for (TokenId t : tokens) h = splitmix64(h ^ static_cast<std::uint32_t>(t));
    return h;
}

/// Called once per produced token with the request id, the token's decode index and the attention output ([head][dim]).
using OutputObserver = std::function<void(std::size_t request_id, std::size_t index, std::span<const float> output)>;

/**
 * Iteration-batched decode loop on top of the prefix tree and the two-phase
 * kernel, driven by SyntheticModel.
 *
 * The engine owns its allocator, tree and worker pool. All tree mutations
 * happen on the calling thread between kernel launches.
 */
class Engine {
public:
    explicit Engine(EngineConfig cfg)
        : cfg_(validated(cfg)),
          model_(cfg_.seed, cfg_.model.num_heads, cfg_.model.head_dim),
          alloc_(cfg_.model, cfg_.max_chunks),
          tree_(alloc_, TreeOptions{cfg_.mode == CacheMode::PrefixShared, cfg_.share_threshold}),
          pool_(cfg_.threads == 0 ? default_worker_count() : cfg_.threads),
          kernel_(pool_, AttnOptions{0.0f, cfg_.direct_reduce}) {}

    const EngineConfig& config() const { return cfg_; }
    const PrefixTree& tree() const { return tree_; }
    PrefixTree& tree() { return tree_; }
    const ChunkAllocator& allocator() const { return alloc_; }
    const SyntheticModel& model() const { return model_; }
    ThreadPool& pool() { return pool_; }

    void set_observer(OutputObserver obs) { observer_ = std::move(obs); }

    /**
     * Inserts the prompt (reusing every matched aligned chunk), computes keys
     * and values only for unmatched positions, runs causal prefill attention
     * for those positions and emits the first completion token.
     */
    void prefill(SequenceState& seq) {
        if (seq.phase != Phase::Queued) throw ContractError("prefill: sequence is not queued");
        if (seq.prompt.empty()) throw ContractError("prefill: empty prompt");
        seq.phase = Phase::Prefilling;
        const std::size_t n = seq.prompt.size();
        const std::size_t h = cfg_.model.num_heads;
        const std::size_t d = cfg_.model.head_dim;

        std::span<const TokenId> prompt = seq.prompt;
        std::size_t computed = 0;
        auto supplier = [&](std::size_t begin, std::size_t end, KvRows rows) {
            model_.fill_kv(prompt, begin, end, rows);
            computed += end - begin;
        };
        const InsertResult ins = tree_.insert_sequence(prompt, supplier);
        seq.seq = ins.id;
        seq.projections_computed = computed;
        seq.projections_skipped = ins.matched_tokens;

        // The last position is always evaluated: its output picks the first completion token.
        const std::size_t first_query = std::min(ins.matched_tokens, n - 1);
        std::vector<float> queries((n - first_query) * h * d);
        for (std::size_t p = first_query; p < n; ++p)
            for (std::size_t hh = 0; hh < h; ++hh)
                model_.project(Projection::Query, prompt[p], p, hh,
                               std::span<float>(queries).subspan(((p - first_query) * h + hh) * d, d));
        const SequenceKv kv = gather_kv(tree_, ins.id);
        const std::vector<float> out = prefill_attn(queries, kv, first_query, pool_);

        work_flops_ += 4.0 * static_cast<double>(h * d) *
                       static_cast<double>((n + first_query + 1) * (n - first_query)) / 2.0;
        work_bytes_ += 2.0 * static_cast<double>(n * h * d * sizeof(float)) +
                       2.0 * static_cast<double>(computed * h * d * sizeof(float));

        std::span<const float> last(out.data() + (n - 1 - first_query) * h * d, h * d);
        emit(seq, last);
        seq.phase = seq.generated.size() >= seq.target_completion ? Phase::Finished : Phase::Decoding;
    }

    /**
     * One iteration for every decoding sequence: append the pending token's
     * key/value, run two-phase attention for the whole batch and emit the next
     * token. Finished sequences leave the tree.
     */
    void decode_step(std::vector<SequenceState*>& live) {
        if (live.empty()) throw ContractError("decode_step: no decoding sequences");
        const std::size_t h = cfg_.model.num_heads;
        const std::size_t d = cfg_.model.head_dim;
        const std::size_t hd = h * d;
        q_.resize(live.size() * hd);
        k_.resize(hd);
        v_.resize(hd);

        std::map<SeqId, std::size_t> slot;
        for (std::size_t i = 0; i < live.size(); ++i) {
            SequenceState& s = *live[i];
            if (s.phase != Phase::Decoding) throw ContractError("decode_step: sequence is not decoding");
            const std::size_t pos = tree_.sequence_length(s.seq);
            const TokenId tok = s.generated.back();
            model_.qkv(tok, pos, std::span<float>(q_).subspan(i * hd, hd), k_, v_);
            tree_.append_token(s.seq, tok, k_, v_);
            slot.emplace(s.seq, i);
        }
        work_bytes_ += 2.0 * static_cast<double>(live.size() * hd * sizeof(float));

        auto ctx = tree_.build_context();
        QueryBatch q(ctx->batch_size(), h, d);
        for (std::size_t b = 0; b < ctx->batch_size(); ++b)
            std::copy_n(q_.data() + slot.at(ctx->order[b]) * hd, hd, q.row(b, 0));
        const KernelCounters before = kernel_.counters();
        kernel_.run(q, *ctx, out_);
        work_flops_ += static_cast<double>(kernel_.counters().flops - before.flops);
        work_bytes_ += static_cast<double>(kernel_.counters().kv_bytes_read - before.kv_bytes_read);

        for (std::size_t b = 0; b < ctx->batch_size(); ++b) {
            SequenceState& s = *live[slot.at(ctx->order[b])];
            emit(s, std::span<const float>(out_.row(b, 0), hd));
        }
        std::vector<SequenceState*> still;
        still.reserve(live.size());
        for (SequenceState* s : live) {
            if (s->generated.size() >= s->target_completion) {
                s->phase = Phase::Finished;
                tree_.remove_sequence(s->seq);
            } else {
                still.push_back(s);
            }
        }
        live.swap(still);
    }

    /// Serves a request trace to completion on the configured clock.
    RunMetrics run(const std::vector<Request>& trace) {
        RunMetrics metrics;
        std::vector<SequenceState> states(trace.size());
        std::vector<std::size_t> by_arrival(trace.size());
        for (std::size_t i = 0; i < trace.size(); ++i) {
            const Request& r = trace[i];
            if (r.completion_tokens == 0) throw ContractError("request with zero completion tokens");
            states[i].request_id = r.id;
            states[i].prompt = r.prompt;
            states[i].target_completion = r.completion_tokens;
            states[i].arrival_s = r.arrival_s;
            by_arrival[i] = i;
        }
        std::stable_sort(by_arrival.begin(), by_arrival.end(),
                         [&](std::size_t a, std::size_t b) { return states[a].arrival_s < states[b].arrival_s; });

        double now = 0.0;
        std::size_t next_arrival = 0;
        std::deque<SequenceState*> waiting;
        std::vector<SequenceState*> live;

        // The high-water mark also sees chunks that a decode step releases before returning.
        auto track_memory = [&] {
            metrics.peak_kv_chunks = std::max(metrics.peak_kv_chunks, alloc_.high_water_mark());
            metrics.peak_kv_bytes = metrics.peak_kv_chunks * cfg_.model.chunk_bytes();
        };

        while (next_arrival < by_arrival.size() || !waiting.empty() || !live.empty()) {
            while (next_arrival < by_arrival.size() && states[by_arrival[next_arrival]].arrival_s <= now)
                waiting.push_back(&states[by_arrival[next_arrival++]]);
            if (waiting.empty() && live.empty()) {
                now = states[by_arrival[next_arrival]].arrival_s;
                continue;
            }

            if (!waiting.empty() && live.size() < cfg_.max_batch) {
                SequenceState* s = waiting.front();
                waiting.pop_front();
                s->admit_s = now;
                const double cost = timed([&] { prefill(*s); });
                now += cost;
                metrics.prefill_time_s += cost;
                s->first_token_s = now;
                track_memory();
                if (s->phase == Phase::Finished) {
                    s->finish_s = now;
                    tree_.remove_sequence(s->seq);
                } else {
                    live.push_back(s);
                }
            }

            if (!live.empty()) {
                metrics.peak_batch_size = std::max(metrics.peak_batch_size, live.size());
                std::vector<SequenceState*> before = live;
                const double cost = timed([&] { decode_step(live); });
                now += cost;
                metrics.decode_time_s += cost;
                ++metrics.decode_steps;
                track_memory();
                for (SequenceState* s : before)
                    if (s->phase == Phase::Finished) s->finish_s = now;
            }
        }

        metrics.makespan_s = now;
        metrics.requests.reserve(states.size());
        for (const SequenceState& s : states) {
            RequestRecord rec;
            rec.id = s.request_id;
            rec.arrival_s = s.arrival_s;
            rec.admit_s = s.admit_s;
            rec.first_token_s = s.first_token_s;
            rec.finish_s = s.finish_s;
            rec.prompt_tokens = s.prompt.size();
            rec.completion_tokens = s.generated.size();
            rec.projections_computed = s.projections_computed;
            rec.projections_skipped = s.projections_skipped;
            rec.token_digest = digest_tokens(s.generated);
            metrics.total_completion_tokens += rec.completion_tokens;
            metrics.projections_computed += rec.projections_computed;
            metrics.projections_skipped += rec.projections_skipped;
            metrics.requests.push_back(rec);
        }
        metrics.normalized_latency_ms = mean_normalized_latency_ms(metrics.requests);
        metrics.token_rate = metrics.decode_time_s > 0.0
                                 ? static_cast<double>(metrics.total_completion_tokens) / metrics.decode_time_s
                                 : 0.0;
        return metrics;
    }

    RunMetrics run(const WorkloadSpec& spec) { return run(gen_workload(spec)); }

private:
    static const EngineConfig& validated(const EngineConfig& cfg) {
        cfg.validate();
        return cfg;
    }

    template <typename Fn>
    double timed(Fn&& fn) {
        if (cfg_.clock == ClockKind::Wall) {
            const auto t0 = std::chrono::steady_clock::now();
            fn();
            return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
        work_flops_ = 0.0;
        work_bytes_ = 0.0;
        fn();
        return work_flops_ / cfg_.virtual_flops_per_s + work_bytes_ / cfg_.virtual_bytes_per_s;
    }

    TokenId next_token(const SequenceState& s, std::span<const float> output) const {
        std::uint64_t h = splitmix64(cfg_.seed ^ 0x746f6bull);
        if (cfg_.policy == TokenPolicy::Lockstep) {
            h = splitmix64(h ^ s.generated.size());
        } else {
            for (float f : output) {
                std::uint32_t bits;
                std::memcpy(&bits, &f, sizeof bits);
                h = splitmix64(h ^ bits);
            }
        }
        return static_cast<TokenId>(h % cfg_.vocab_size);
    }

    void emit(SequenceState& s, std::span<const float> output) {
        if (observer_) observer_(s.request_id, s.generated.size(), output);
        s.generated.push_back(next_token(s, output));
    }

    EngineConfig cfg_;
    SyntheticModel model_;
    ChunkAllocator alloc_;
    PrefixTree tree_;
    ThreadPool pool_;
    TwoPhaseKernel kernel_;
    OutputObserver observer_;
    std::vector<float> q_, k_, v_;
    AttnOutput out_;
    double work_flops_ = 0.0;
    double work_bytes_ = 0.0;
};

} // namespace chunkkv
