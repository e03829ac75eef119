// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cmath>
#include <cstring>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "chunkkv/attn_context.hpp"
#include "chunkkv/common.hpp"
#include "chunkkv/prefix_tree.hpp"
#include "chunkkv/thread_pool.hpp"

namespace chunkkv {

inline constexpr float kNegInf = -std::numeric_limits<float>::infinity();

/// Read-only row-major matrix with an arbitrary row stride.
struct MatrixView {
    const float* data = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t stride = 0;

    MatrixView() = default;
    MatrixView(const float* p, std::size_t r, std::size_t c, std::size_t s) : data(p), rows(r), cols(c), stride(s) {}
    MatrixView(std::span<const float> dense, std::size_t r, std::size_t c) : data(dense.data()), rows(r), cols(c), stride(c) {
        if (dense.size() < r * c) throw ShapeError("matrix view larger than its buffer");
    }

    const float* row(std::size_t i) const { return data + i * stride; }
};

/// [batch][head][dim] tensor of per-sequence vectors.
class HeadTensor {
public:
    HeadTensor() = default;
    HeadTensor(std::size_t batch, std::size_t heads, std::size_t dim)
        : batch_(batch), heads_(heads), dim_(dim), data_(batch * heads * dim, 0.0f) {}

    std::size_t batch() const { return batch_; }
    std::size_t heads() const { return heads_; }
    std::size_t dim() const { return dim_; }

    float* row(std::size_t b, std::size_t h) { return data_.data() + (b * heads_ + h) * dim_; }
    const float* row(std::size_t b, std::size_t h) const { return data_.data() + (b * heads_ + h) * dim_; }
    std::span<float> vec(std::size_t b, std::size_t h) { return {row(b, h), dim_}; }
    std::span<const float> vec(std::size_t b, std::size_t h) const { return {row(b, h), dim_}; }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }

    void resize(std::size_t batch, std::size_t heads, std::size_t dim) {
        batch_ = batch;
        heads_ = heads;
        dim_ = dim;
        data_.assign(batch * heads * dim, 0.0f);
    }

private:
    std::size_t batch_ = 0;
    std::size_t heads_ = 0;
    std::size_t dim_ = 0;
    std::vector<float> data_;
};

/// Last-token queries of the live sequences, rows in context batch order.
struct QueryBatch : HeadTensor {
    using HeadTensor::HeadTensor;
};

/// Normalized attention outputs, rows in context batch order.
struct AttnOutput : HeadTensor {
    using HeadTensor::HeadTensor;
};

/// Unnormalized output O, running max m and normalizer n for a block of query rows.
struct PartialAttn {
    std::size_t rows = 0;
    std::size_t dim = 0;
    std::vector<float> o;
    std::vector<float> m;
    std::vector<float> n;

    std::span<const float> o_row(std::size_t r) const { return {o.data() + r * dim, dim}; }
};

namespace detail {

inline constexpr std::size_t kLanes = 8;

// Eight float lanes; GCC and Clang lower this to one SIMD register where available.
typedef float Lanes __attribute__((vector_size(kLanes * sizeof(float))));

inline Lanes load_lanes(const float* p) {
    Lanes v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline float hsum(Lanes acc) {
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// dot() and dot4() perform the same float operations per row, so a query
// produces bit-identical logits whether it is processed alone or batched.
inline float dot(const float* a, const float* b, std::size_t d) {
    Lanes acc = {};
    std::size_t i = 0;
    for (; i + kLanes <= d; i += kLanes) acc += load_lanes(a + i) * load_lanes(b + i);
    float s = hsum(acc);
    for (; i < d; ++i) s += a[i] * b[i];
    return s;
}

inline void dot4(const float* a0, const float* a1, const float* a2, const float* a3, const float* b, std::size_t d,
                 float* out) {
    Lanes c0 = {}, c1 = {}, c2 = {}, c3 = {};
    std::size_t i = 0;
    for (; i + kLanes <= d; i += kLanes) {
        const Lanes bv = load_lanes(b + i);
        c0 += load_lanes(a0 + i) * bv;
        c1 += load_lanes(a1 + i) * bv;
        c2 += load_lanes(a2 + i) * bv;
        c3 += load_lanes(a3 + i) * bv;
    }
    float s0 = hsum(c0), s1 = hsum(c1), s2 = hsum(c2), s3 = hsum(c3);
    for (; i < d; ++i) {
        s0 += a0[i] * b[i];
        s1 += a1[i] * b[i];
        s2 += a2[i] * b[i];
        s3 += a3[i] * b[i];
    }
    out[0] = s0;
    out[1] = s1;
    out[2] = s2;
    out[3] = s3;
}

inline void axpy(float* y, float a, const float* x, std::size_t d) {
    std::size_t i = 0;
    for (; i + kLanes <= d; i += kLanes) {
        const Lanes r = load_lanes(y + i) + a * load_lanes(x + i);
        std::memcpy(y + i, &r, sizeof r);
    }
    for (; i < d; ++i) y[i] += a * x[i];
}

inline std::vector<float>& scratch(std::size_t n) {
    thread_local std::vector<float> buf;
    if (buf.size() < n) buf.resize(n);
    return buf;
}

} // namespace detail

/**
 * Partial attention of `rows` queries against one chunk's `len` keys/values:
 *
 *   W = scale * Q K^T,  m = rowmax(W),  E = exp(W - m),  n = rowsum(E),  O = E V
 *
 * q rows are read with stride q_stride; k and v are dense (len x d).
 * o receives rows x d floats, m and n receive `rows` floats each.
 * logits must hold rows * len floats.
 */
inline void partial_attn_into(const float* q, std::size_t q_stride, std::size_t rows, const float* k, const float* v,
                              std::size_t len, std::size_t d, float scale, float* o, float* m, float* n,
                              float* logits) {
    assert(len >= 1);
    std::size_t r = 0;
    for (; r + 4 <= rows; r += 4) {
        const float* q0 = q + r * q_stride;
        const float* q1 = q0 + q_stride;
        const float* q2 = q1 + q_stride;
        const float* q3 = q2 + q_stride;
        float tmp[4];
        for (std::size_t j = 0; j < len; ++j) {
            detail::dot4(q0, q1, q2, q3, k + j * d, d, tmp);
            logits[(r + 0) * len + j] = tmp[0];
            logits[(r + 1) * len + j] = tmp[1];
            logits[(r + 2) * len + j] = tmp[2];
            logits[(r + 3) * len + j] = tmp[3];
        }
    }
    for (; r < rows; ++r) {
        const float* qr = q + r * q_stride;
        for (std::size_t j = 0; j < len; ++j) logits[r * len + j] = detail::dot(qr, k + j * d, d);
    }

    for (r = 0; r < rows; ++r) {
        float* w = logits + r * len;
        float mx = kNegInf;
        for (std::size_t j = 0; j < len; ++j) {
            w[j] *= scale;
            mx = std::max(mx, w[j]);
        }
        float sum = 0.0f;
        for (std::size_t j = 0; j < len; ++j) {
            w[j] = std::exp(w[j] - mx);
            sum += w[j];
        }
        m[r] = mx;
        n[r] = sum;
    }

    std::fill(o, o + rows * d, 0.0f);
    r = 0;
    for (; r + 4 <= rows; r += 4) {
        float* o0 = o + r * d;
        for (std::size_t j = 0; j < len; ++j) {
            const float* vj = v + j * d;
            detail::axpy(o0, logits[(r + 0) * len + j], vj, d);
            detail::axpy(o0 + d, logits[(r + 1) * len + j], vj, d);
            detail::axpy(o0 + 2 * d, logits[(r + 2) * len + j], vj, d);
            detail::axpy(o0 + 3 * d, logits[(r + 3) * len + j], vj, d);
        }
    }
    for (; r < rows; ++r)
        for (std::size_t j = 0; j < len; ++j) detail::axpy(o + r * d, logits[r * len + j], v + j * d, d);
}

/// Value-returning form of partial_attn_into.
inline PartialAttn partial_attn(MatrixView q, MatrixView k, MatrixView v, float scale) {
    if (k.rows == 0) throw ContractError("partial_attn: chunk holds no keys");
    if (k.rows != v.rows || q.cols != k.cols || k.cols != v.cols)
        throw ShapeError("partial_attn: q/k/v dimensions disagree");
    const std::size_t d = q.cols;
    // partial_attn_into reads k and v densely.
    std::vector<float> kd, vd;
    const float* kp = k.data;
    const float* vp = v.data;
    if (k.stride != d) {
        kd.resize(k.rows * d);
        for (std::size_t j = 0; j < k.rows; ++j) std::copy_n(k.row(j), d, kd.data() + j * d);
        kp = kd.data();
    }
    if (v.stride != d) {
        vd.resize(v.rows * d);
        for (std::size_t j = 0; j < v.rows; ++j) std::copy_n(v.row(j), d, vd.data() + j * d);
        vp = vd.data();
    }
    PartialAttn p;
    p.rows = q.rows;
    p.dim = d;
    p.o.resize(q.rows * d);
    p.m.resize(q.rows);
    p.n.resize(q.rows);
    std::vector<float> logits(q.rows * k.rows);
    partial_attn_into(q.data, q.stride, q.rows, kp, vp, k.rows, d, scale, p.o.data(), p.m.data(), p.n.data(),
                      logits.data());
    return p;
}

/**
 * Online-softmax merge of one partial row (o, m, n) into an accumulator:
 *
 *   x = exp(m - max(m, acc_m)),  y = exp(acc_m - max(m, acc_m))
 *   acc_o = x*o + y*acc_o,  acc_n = x*n + y*acc_n,  acc_m = max(m, acc_m)
 *
 * A fresh accumulator is (0, -inf, 0); merging into it reproduces the partial exactly.
 */
inline void attn_reduce(const float* o, float m, float n, float* acc_o, float& acc_m, float& acc_n, std::size_t d) {
    if (m == kNegInf) return;
    const float mx = std::max(m, acc_m);
    const float x = std::exp(m - mx);
    const float y = std::exp(acc_m - mx);
    for (std::size_t i = 0; i < d; ++i) acc_o[i] = x * o[i] + y * acc_o[i];
    acc_n = x * n + y * acc_n;
    acc_m = mx;
}

/// Running (o, m, n) for one query row.
struct AttnAccumulator {
    std::vector<float> o;
    float m = kNegInf;
    float n = 0.0f;

    explicit AttnAccumulator(std::size_t dim = 0) : o(dim, 0.0f) {}

    void merge(std::span<const float> part_o, float part_m, float part_n) {
        if (part_o.size() != o.size()) throw ShapeError("attn_reduce: dimension mismatch");
        attn_reduce(part_o.data(), part_m, part_n, o.data(), m, n, o.size());
    }
    void merge(const AttnAccumulator& other) { merge(other.o, other.m, other.n); }

    std::vector<float> normalized() const {
        std::vector<float> out(o.size());
        for (std::size_t i = 0; i < o.size(); ++i) out[i] = o[i] / n;
        return out;
    }
};

struct AttnOptions {
    /// Logit scale; 0 selects 1/sqrt(head_dim).
    float scale = 0.0f;
    /// Merge chunk-first partials straight into per-sequence accumulators
    /// under a per-accumulator spin lock instead of materializing them.
    bool direct_reduce = false;
};

inline float resolve_scale(const AttnOptions& opts, std::size_t head_dim) {
    return opts.scale != 0.0f ? opts.scale : 1.0f / std::sqrt(static_cast<float>(head_dim));
}

/// Chunk-first results: one (O, m, n) block per shared entry and head.
struct SharedPartials {
    std::uint64_t epoch = 0;
    std::size_t heads = 0;
    std::size_t dim = 0;
    std::size_t total_rows = 0;
    std::unordered_map<ChunkId, std::size_t> slot_of;
    std::vector<std::size_t> row_offset;
    std::vector<float> o;
    std::vector<float> m;
    std::vector<float> n;

    std::size_t size() const { return row_offset.size(); }
    bool empty() const { return row_offset.empty(); }

    std::size_t flat_row(std::size_t slot, std::size_t head, std::size_t row) const {
        return head * total_rows + row_offset[slot] + row;
    }
    const float* o_row(std::size_t slot, std::size_t head, std::size_t row) const {
        return o.data() + flat_row(slot, head, row) * dim;
    }
};

struct KernelCounters {
    std::uint64_t kv_bytes_read = 0;
    std::uint64_t flops = 0;
    std::uint64_t calls = 0;
};

namespace detail {

class SpinLock {
public:
    void lock() {
        while (flag_.exchange(true, std::memory_order_acquire))
            while (flag_.load(std::memory_order_relaxed)) std::this_thread::yield();
    }
    void unlock() { flag_.store(false, std::memory_order_release); }

private:
    std::atomic<bool> flag_{false};
};

inline void check_batch(const QueryBatch& q, const AttnContext& ctx) {
    if (q.batch() != ctx.batch_size())
        throw ShapeError("query batch has " + std::to_string(q.batch()) + " rows but the tree holds " +
                         std::to_string(ctx.batch_size()) + " live sequences");
}

inline std::size_t max_chunk_len(const AttnContext& ctx) {
    std::size_t len = 1;
    for (const auto& e : ctx.shared_entries) len = std::max(len, e.chunk->size());
    for (const auto& p : ctx.private_entries)
        for (const Chunk* ch : p) len = std::max(len, ch->size());
    return len;
}

} // namespace detail

/**
 * Two-phase attention over a prefix tree for one decode step.
 *
 * Chunk-first: every shared entry (C, i, j) and head computes partial
 * attention of query rows i..j against C in one batched call. Sequence-first:
 * every (sequence, head) folds the shared partials on its path and then its
 * private chunks into an online-softmax accumulator and emits O / n.
 *
 * The kernel object owns reusable scratch; it is not reentrant.
 */
class TwoPhaseKernel {
public:
    explicit TwoPhaseKernel(ThreadPool& pool, AttnOptions opts = {}) : pool_(&pool), opts_(opts) {}

    const AttnOptions& options() const { return opts_; }
    const KernelCounters& counters() const { return counters_; }
    void reset_counters() { counters_ = {}; }

    SharedPartials chunk_first(const QueryBatch& q, const AttnContext& ctx) {
        detail::check_batch(q, ctx);
        SharedPartials parts;
        prepare_partials(q, ctx, parts);
        run_chunk_first(q, ctx, parts);
        return parts;
    }

    void seq_first(const QueryBatch& q, const AttnContext& ctx, const SharedPartials& parts, AttnOutput& out) {
        detail::check_batch(q, ctx);
        if (parts.epoch != ctx.epoch)
            throw EpochMismatchError("partials from epoch " + std::to_string(parts.epoch) +
                                     " used with context epoch " + std::to_string(ctx.epoch));
        for (std::size_t e = 0; e < ctx.shared_entries.size(); ++e) {
            auto it = parts.slot_of.find(ctx.shared_entries[e].chunk->id());
            if (it == parts.slot_of.end() || it->second != e)
                throw EpochMismatchError("no partial result for shared chunk " +
                                         std::to_string(ctx.shared_entries[e].chunk->id()));
        }
        if (!ctx.shared_entries.empty() && (parts.heads != q.heads() || parts.dim != q.dim()))
            throw EpochMismatchError("partials computed for a different head layout");
        out.resize(q.batch(), q.heads(), q.dim());
        run_seq_first(q, ctx, &parts, out);
    }

    /// Full step against a context snapshot; writes rows in ctx batch order.
    void run(const QueryBatch& q, const AttnContext& ctx, AttnOutput& out) {
        detail::check_batch(q, ctx);
        out.resize(q.batch(), q.heads(), q.dim());
        count_work(q, ctx);
        if (opts_.direct_reduce) {
            run_direct(q, ctx, out);
            return;
        }
        prepare_partials(q, ctx, partials_);
        run_chunk_first(q, ctx, partials_);
        run_seq_first(q, ctx, &partials_, out);
    }

    AttnOutput run(const QueryBatch& q, PrefixTree& tree) {
        auto ctx = tree.build_context();
        AttnOutput out;
        run(q, *ctx, out);
        return out;
    }

private:
    void count_work(const QueryBatch& q, const AttnContext& ctx) {
        const std::uint64_t hd = q.heads() * q.dim();
        auto add = [&](std::size_t rows, std::size_t len) {
            counters_.kv_bytes_read += 2ull * len * hd * sizeof(float);
            counters_.flops += 4ull * rows * len * hd;
        };
        for (const auto& e : ctx.shared_entries) add(e.rows(), e.chunk->size());
        for (const auto& p : ctx.private_entries)
            for (const Chunk* ch : p) add(1, ch->size());
        ++counters_.calls;
    }

    void prepare_partials(const QueryBatch& q, const AttnContext& ctx, SharedPartials& parts) const {
        parts.epoch = ctx.epoch;
        parts.heads = q.heads();
        parts.dim = q.dim();
        parts.slot_of.clear();
        parts.row_offset.resize(ctx.shared_entries.size());
        std::size_t rows = 0;
        for (std::size_t e = 0; e < ctx.shared_entries.size(); ++e) {
            parts.slot_of.emplace(ctx.shared_entries[e].chunk->id(), e);
            parts.row_offset[e] = rows;
            rows += ctx.shared_entries[e].rows();
        }
        parts.total_rows = rows;
        parts.o.resize(q.heads() * rows * q.dim());
        parts.m.resize(q.heads() * rows);
        parts.n.resize(q.heads() * rows);
    }

    void run_chunk_first(const QueryBatch& q, const AttnContext& ctx, SharedPartials& parts) {
        const std::size_t heads = q.heads();
        const std::size_t d = q.dim();
        const float scale = resolve_scale(opts_, d);
        const std::size_t entries = ctx.shared_entries.size();
        pool_->parallel_for(entries * heads, [&](std::size_t task) {
            const std::size_t e = task / heads;
            const std::size_t h = task % heads;
            const SharedEntry& entry = ctx.shared_entries[e];
            const std::size_t len = entry.chunk->size();
            const std::size_t base = parts.flat_row(e, h, 0);
            float* logits = detail::scratch(entry.rows() * len).data();
            partial_attn_into(q.row(entry.first, h), heads * d, entry.rows(), entry.chunk->keys(h),
                              entry.chunk->values(h), len, d, scale, parts.o.data() + base * d, parts.m.data() + base,
                              parts.n.data() + base, logits);
        });
    }

    // parts == nullptr means the shared chunks were already folded into acc_ (direct-reduce).
    void run_seq_first(const QueryBatch& q, const AttnContext& ctx, const SharedPartials* parts, AttnOutput& out) {
        const std::size_t heads = q.heads();
        const std::size_t d = q.dim();
        const float scale = resolve_scale(opts_, d);
        const std::size_t max_len = detail::max_chunk_len(ctx);
        pool_->parallel_for(q.batch() * heads, [&](std::size_t task) {
            const std::size_t i = task / heads;
            const std::size_t h = task % heads;
            if (ctx.shared_path[i].empty() && ctx.private_entries[i].empty())
                throw ContractError("sequence at batch index " + std::to_string(i) + " owns no chunks");

            std::vector<float>& buf = detail::scratch(2 * d + max_len);
            float* part_o = buf.data();
            float* logits = buf.data() + d;
            float* acc_o = out.row(i, h);
            float acc_m = kNegInf;
            float acc_n = 0.0f;
            if (parts) {
                std::fill(acc_o, acc_o + d, 0.0f);
                for (std::size_t e : ctx.shared_path[i]) {
                    const std::size_t row = parts->flat_row(e, h, i - ctx.shared_entries[e].first);
                    attn_reduce(parts->o.data() + row * d, parts->m[row], parts->n[row], acc_o, acc_m, acc_n, d);
                }
            } else {
                const std::size_t a = i * heads + h;
                std::copy_n(acc_o_.data() + a * d, d, acc_o);
                acc_m = acc_m_[a];
                acc_n = acc_n_[a];
            }
            for (const Chunk* ch : ctx.private_entries[i]) {
                float pm = 0.0f, pn = 0.0f;
                partial_attn_into(q.row(i, h), d, 1, ch->keys(h), ch->values(h), ch->size(), d, scale, part_o, &pm,
                                  &pn, logits);
                attn_reduce(part_o, pm, pn, acc_o, acc_m, acc_n, d);
            }
            const float inv = 1.0f / acc_n;
            for (std::size_t k = 0; k < d; ++k) acc_o[k] *= inv;
        });
    }

    void run_direct(const QueryBatch& q, const AttnContext& ctx, AttnOutput& out) {
        const std::size_t heads = q.heads();
        const std::size_t d = q.dim();
        const float scale = resolve_scale(opts_, d);
        const std::size_t accs = q.batch() * heads;
        acc_o_.assign(accs * d, 0.0f);
        acc_m_.assign(accs, kNegInf);
        acc_n_.assign(accs, 0.0f);
        if (lock_count_ < accs) {
            locks_ = std::make_unique<detail::SpinLock[]>(accs);
            lock_count_ = accs;
        }
        const std::size_t entries = ctx.shared_entries.size();
        pool_->parallel_for(entries * heads, [&](std::size_t task) {
            const std::size_t e = task / heads;
            const std::size_t h = task % heads;
            const SharedEntry& entry = ctx.shared_entries[e];
            const std::size_t rows = entry.rows();
            const std::size_t len = entry.chunk->size();
            std::vector<float>& buf = detail::scratch(rows * (d + 2) + rows * len);
            float* po = buf.data();
            float* pm = po + rows * d;
            float* pn = pm + rows;
            float* logits = pn + rows;
            partial_attn_into(q.row(entry.first, h), heads * d, rows, entry.chunk->keys(h), entry.chunk->values(h),
                              len, d, scale, po, pm, pn, logits);
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t a = (entry.first + r) * heads + h;
                locks_[a].lock();
                attn_reduce(po + r * d, pm[r], pn[r], acc_o_.data() + a * d, acc_m_[a], acc_n_[a], d);
                locks_[a].unlock();
            }
        });
        run_seq_first(q, ctx, nullptr, out);
    }

    ThreadPool* pool_;
    AttnOptions opts_;
    KernelCounters counters_;
    SharedPartials partials_;
    std::vector<float> acc_o_;
    std::vector<float> acc_m_;
    std::vector<float> acc_n_;
    std::unique_ptr<detail::SpinLock[]> locks_;
    std::size_t lock_count_ = 0;
};

/// Chunk-first phase on its own; partials are keyed by chunk id.
inline SharedPartials attn_chunk_first(const QueryBatch& q, const AttnContext& ctx, ThreadPool& pool,
                                       AttnOptions opts = {}) {
    TwoPhaseKernel kernel(pool, opts);
    return kernel.chunk_first(q, ctx);
}

/// Sequence-first phase; throws EpochMismatchError when `parts` was built for another schedule.
inline AttnOutput attn_seq_first(const QueryBatch& q, const AttnContext& ctx, const SharedPartials& parts,
                                 ThreadPool& pool, AttnOptions opts = {}) {
    TwoPhaseKernel kernel(pool, opts);
    AttnOutput out;
    kernel.seq_first(q, ctx, parts, out);
    return out;
}

inline AttnOutput two_phase_attn(const QueryBatch& q, PrefixTree& tree, ThreadPool& pool, AttnOptions opts = {}) {
    TwoPhaseKernel kernel(pool, opts);
    return kernel.run(q, tree);
}

inline AttnOutput two_phase_attn(const QueryBatch& q, PrefixTree& tree, AttnOptions opts = {}) {
    ThreadPool serial(1);
    return two_phase_attn(q, tree, serial, opts);
}

/// Writes per-chunk (m, n) statistics, one line per (chunk, head, row), for kernel triage.
inline void dump_partial_stats(const SharedPartials& parts, const AttnContext& ctx, std::ostream& os) {
    os << "# chunk head batch_index m n\n";
    for (std::size_t e = 0; e < ctx.shared_entries.size() && e < parts.size(); ++e) {
        const SharedEntry& entry = ctx.shared_entries[e];
        for (std::size_t h = 0; h < parts.heads; ++h)
            for (std::size_t r = 0; r < entry.rows(); ++r) {
                const std::size_t row = parts.flat_row(e, h, r);
                os << entry.chunk->id() << ' ' << h << ' ' << entry.first + r << ' ' << parts.m[row] << ' '
                   << parts.n[row] << '\n';
            }
    }
}

// ---------------------------------------------------------------------------
// Reference paths
// ---------------------------------------------------------------------------

/// Keys and values of one sequence gathered into contiguous [head][position][dim] arrays.
struct SequenceKv {
    std::size_t length = 0;
    std::size_t heads = 0;
    std::size_t dim = 0;
    std::vector<float> keys;
    std::vector<float> values;

    const float* key(std::size_t h, std::size_t pos) const { return keys.data() + (h * length + pos) * dim; }
    const float* value(std::size_t h, std::size_t pos) const { return values.data() + (h * length + pos) * dim; }
};

inline SequenceKv gather_kv(const PrefixTree& tree, SeqId id) {
    const ModelConfig& cfg = tree.config();
    SequenceKv kv;
    kv.length = tree.sequence_length(id);
    kv.heads = cfg.num_heads;
    kv.dim = cfg.head_dim;
    kv.keys.resize(kv.heads * kv.length * kv.dim);
    kv.values.resize(kv.keys.size());
    for (const Chunk* ch : tree.path(id)) {
        for (std::size_t h = 0; h < kv.heads; ++h) {
            std::copy_n(ch->keys(h), ch->size() * kv.dim, kv.keys.data() + (h * kv.length + ch->start_pos()) * kv.dim);
            std::copy_n(ch->values(h), ch->size() * kv.dim,
                        kv.values.data() + (h * kv.length + ch->start_pos()) * kv.dim);
        }
    }
    return kv;
}

/**
 * softmax(q K^T * scale) V evaluated directly per sequence and head, in double
 * precision. This is the ground truth the chunked kernels are checked against.
 */
inline AttnOutput naive_attn_oracle(const QueryBatch& q, std::span<const SequenceKv> kvs, float scale = 0.0f) {
    if (kvs.size() != q.batch()) throw ShapeError("naive_attn_oracle: one KV set per query row required");
    const std::size_t heads = q.heads();
    const std::size_t d = q.dim();
    const double s = scale != 0.0f ? scale : 1.0 / std::sqrt(static_cast<double>(d));
    AttnOutput out(q.batch(), heads, d);
    std::vector<double> logits;
    std::vector<double> acc(d);
    for (std::size_t b = 0; b < q.batch(); ++b) {
        const SequenceKv& kv = kvs[b];
        if (kv.length == 0) throw ContractError("naive_attn_oracle: empty sequence");
        logits.resize(kv.length);
        for (std::size_t h = 0; h < heads; ++h) {
            const float* qr = q.row(b, h);
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < kv.length; ++j) {
                double w = 0.0;
                const float* kr = kv.key(h, j);
                for (std::size_t k = 0; k < d; ++k) w += static_cast<double>(qr[k]) * kr[k];
                logits[j] = w * s;
                mx = std::max(mx, logits[j]);
            }
            double denom = 0.0;
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t j = 0; j < kv.length; ++j) {
                const double e = std::exp(logits[j] - mx);
                denom += e;
                const float* vr = kv.value(h, j);
                for (std::size_t k = 0; k < d; ++k) acc[k] += e * vr[k];
            }
            float* o = out.row(b, h);
            for (std::size_t k = 0; k < d; ++k) o[k] = static_cast<float>(acc[k] / denom);
        }
    }
    return out;
}

/// Oracle over the live sequences of a tree, rows in the tree's current batch order.
inline AttnOutput naive_attn_oracle(const QueryBatch& q, PrefixTree& tree, float scale = 0.0f) {
    auto ctx = tree.build_context();
    std::vector<SequenceKv> kvs;
    kvs.reserve(ctx->order.size());
    for (SeqId id : ctx->order) kvs.push_back(gather_kv(tree, id));
    return naive_attn_oracle(q, kvs, scale);
}

/**
 * Causal attention over a prompt: query p attends keys 0..p. `queries` holds
 * positions first_query..length-1 as [position][head][dim]; earlier positions
 * were served by a prefix hit and need no recomputation. Keys/values come from
 * `kv`. Outputs use the same layout as `queries`.
 */
inline std::vector<float> prefill_attn(std::span<const float> queries, const SequenceKv& kv, std::size_t first_query,
                                       ThreadPool& pool, float scale = 0.0f) {
    const std::size_t n = kv.length;
    const std::size_t heads = kv.heads;
    const std::size_t d = kv.dim;
    if (first_query > n) throw ContractError("prefill_attn: first_query past the prompt end");
    const std::size_t outputs = n - first_query;
    if (queries.size() != outputs * heads * d) throw ShapeError("prefill_attn: query tensor shape mismatch");
    const float s = scale != 0.0f ? scale : 1.0f / std::sqrt(static_cast<float>(d));
    std::vector<float> out(outputs * heads * d, 0.0f);
    pool.parallel_for(outputs * heads, [&](std::size_t task) {
        const std::size_t row = task / heads;
        const std::size_t p = first_query + row;
        const std::size_t h = task % heads;
        const float* qp = queries.data() + (row * heads + h) * d;
        std::vector<float>& w = detail::scratch(p + 1);
        float mx = kNegInf;
        for (std::size_t j = 0; j <= p; ++j) {
            w[j] = detail::dot(qp, kv.key(h, j), d) * s;
            mx = std::max(mx, w[j]);
        }
        float sum = 0.0f;
        float* o = out.data() + (row * heads + h) * d;
        for (std::size_t j = 0; j <= p; ++j) {
            w[j] = std::exp(w[j] - mx);
            sum += w[j];
            detail::axpy(o, w[j], kv.value(h, j), d);
        }
        const float inv = 1.0f / sum;
        for (std::size_t k = 0; k < d; ++k) o[k] *= inv;
    });
    return out;
}

} // namespace chunkkv
