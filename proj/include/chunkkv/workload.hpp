// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "chunkkv/common.hpp"
#include "chunkkv/synthetic_model.hpp"

namespace chunkkv {

/// Open-loop request stream: Poisson arrivals, n_p-token prompts whose first n_s tokens
/// come from one of `prompt_pool` shared system prompts, and n_c completion tokens each.
struct WorkloadSpec {
    /// Mean arrivals per second; infinity submits every request at t = 0.
    double lambda = 1.0;
    std::size_t request_count = 32;
    std::size_t prompt_tokens = 2048;
    std::size_t shared_tokens = 2048;
    std::size_t completion_tokens = 512;
    std::size_t prompt_pool = 1;
    std::size_t vocab_size = 32000;
    std::uint64_t seed = 0;

    void validate() const {
        if (shared_tokens > prompt_tokens) throw ContractError("workload: shared tokens exceed prompt tokens");
        if (prompt_tokens == 0) throw ContractError("workload: prompt must hold at least one token");
        if (completion_tokens == 0) throw ContractError("workload: completion must hold at least one token");
        if (prompt_pool == 0) throw ContractError("workload: prompt_pool must be >= 1");
        if (vocab_size < 2) throw ContractError("workload: vocab_size must be >= 2");
        if (!(lambda > 0.0)) throw ContractError("workload: lambda must be positive");
    }
};

struct Request {
    std::size_t id = 0;
    double arrival_s = 0.0;
    std::size_t pool = 0;
    std::vector<TokenId> prompt;
    std::size_t completion_tokens = 0;
};

namespace detail {

inline TokenId hashed_token(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t i,
                            std::size_t vocab) {
    const std::uint64_t h = splitmix64(splitmix64(splitmix64(seed ^ stream) ^ a) + i);
    return static_cast<TokenId>(h % vocab);
}

inline constexpr std::uint64_t kPrefixStream = 0x70726566ull;
inline constexpr std::uint64_t kSuffixStream = 0x73756666ull;

} // namespace detail

/// Deterministic per seed; the arrival gaps are i.i.d. exponential(lambda).
inline std::vector<Request> gen_workload(const WorkloadSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::vector<Request> out;
    out.reserve(spec.request_count);
    double t = 0.0;
    for (std::size_t r = 0; r < spec.request_count; ++r) {
        if (std::isfinite(spec.lambda)) {
            // Inverse CDF on 53 uniform bits; keeps the trace identical across standard libraries.
            const double u = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
            t += -std::log1p(-u) / spec.lambda;
        }
        Request req;
        req.id = r;
        req.arrival_s = t;
        req.pool = r % spec.prompt_pool;
        req.completion_tokens = spec.completion_tokens;
        req.prompt.resize(spec.prompt_tokens);
        for (std::size_t i = 0; i < spec.shared_tokens; ++i)
            req.prompt[i] = detail::hashed_token(spec.seed, detail::kPrefixStream, req.pool, i, spec.vocab_size);
        for (std::size_t i = spec.shared_tokens; i < spec.prompt_tokens; ++i)
            req.prompt[i] = detail::hashed_token(spec.seed, detail::kSuffixStream, r, i, spec.vocab_size);
        out.push_back(std::move(req));
    }
    return out;
}

/// One line per request: id, arrival (hex float, exact), pool, n_c, then the prompt tokens.
inline void write_trace(const std::vector<Request>& trace, std::ostream& os) {
    char buf[64];
    for (const Request& r : trace) {
        std::snprintf(buf, sizeof buf, "%a", r.arrival_s);
        os << r.id << ' ' << buf << ' ' << r.pool << ' ' << r.completion_tokens;
        for (TokenId t : r.prompt) os << ' ' << t;
        os << '\n';
    }
}

} // namespace chunkkv
