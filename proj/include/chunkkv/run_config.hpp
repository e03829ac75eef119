// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>
#include <string>

#include "chunkkv/common.hpp"
#include "chunkkv/engine.hpp"
#include "chunkkv/workload.hpp"

namespace chunkkv {

struct RunConfig {
    EngineConfig engine;
    WorkloadSpec workload;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::size_t to_count(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    unsigned long long x = 0;
    try {
        if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
        x = std::stoull(v, &used);
    } catch (const std::exception&) {
        throw ContractError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    if (used != v.size()) throw ContractError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    return static_cast<std::size_t>(x);
}

inline double to_real(const std::string& key, const std::string& v) {
    if (v == "inf") return std::numeric_limits<double>::infinity();
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        throw ContractError("config: '" + key + "' expects a number, got '" + v + "'");
    }
    if (used != v.size()) throw ContractError("config: '" + key + "' expects a number, got '" + v + "'");
    return x;
}

} // namespace detail

/**
 * Reads `key = value` lines; `#` starts a comment. Recognized keys:
 *
 *   h | heads, d | head_dim, c | chunk, b_max | batch, bytes_per_element,
 *   mode (shared|monolithic), clock (wall|virtual), seed, threads, vocab,
 *   lambda (number or inf), requests, prompt, shared, completion, prompt_pool
 *
 * Missing keys keep their defaults; unknown keys are an error.
 */
inline RunConfig parse_run_config(std::istream& is, RunConfig cfg = {}) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ContractError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        EngineConfig& e = cfg.engine;
        WorkloadSpec& w = cfg.workload;
        if (key == "h" || key == "heads")
            e.model.num_heads = detail::to_count(key, val);
        else if (key == "d" || key == "head_dim")
            e.model.head_dim = detail::to_count(key, val);
        else if (key == "c" || key == "chunk")
            e.model.chunk_capacity = detail::to_count(key, val);
        else if (key == "b_max" || key == "batch")
            e.max_batch = detail::to_count(key, val);
        else if (key == "bytes_per_element")
            e.model.kv_bytes_per_element = detail::to_count(key, val);
        else if (key == "mode")
            e.mode = parse_cache_mode(val);
        else if (key == "clock")
            e.clock = parse_clock(val);
        else if (key == "seed")
            e.seed = w.seed = detail::to_count(key, val);
        else if (key == "threads")
            e.threads = detail::to_count(key, val);
        else if (key == "vocab")
            e.vocab_size = w.vocab_size = detail::to_count(key, val);
        else if (key == "lambda")
            w.lambda = detail::to_real(key, val);
        else if (key == "requests")
            w.request_count = detail::to_count(key, val);
        else if (key == "prompt")
            w.prompt_tokens = detail::to_count(key, val);
        else if (key == "shared")
            w.shared_tokens = detail::to_count(key, val);
        else if (key == "completion")
            w.completion_tokens = detail::to_count(key, val);
        else if (key == "prompt_pool")
            w.prompt_pool = detail::to_count(key, val);
        else
            throw ContractError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    return cfg;
}

inline RunConfig load_run_config(const std::string& path, RunConfig defaults = {}) {
    std::ifstream is(path);
    if (!is) throw Error("cannot read config file '" + path + "'");
    return parse_run_config(is, std::move(defaults));
}

} // namespace chunkkv
