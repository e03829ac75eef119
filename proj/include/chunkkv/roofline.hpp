// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>

#include "chunkkv/common.hpp"

namespace chunkkv {

struct RooflineEstimate {
    double flops = 0.0;
    /// Bytes moved to or from memory.
    double mops = 0.0;
    double arithmetic_intensity = 0.0;
};

/**
 * Analytical cost of one decode-step self-attention for one layer:
 * b sequences, h heads, n context tokens, head dimension d.
 *
 *   flops = 4 b h n d                 (q.K^T and E.V, a multiply-add counts 2)
 *   mops  = 2 b h n d * bytes         (K and V reads)
 *         + 2 b h d * bytes           (q read, o write)
 *         + 2 b h n * bytes           (logits written, then read back by softmax)
 */
inline RooflineEstimate estimate_roofline(std::size_t b, std::size_t h, std::size_t n, std::size_t d,
                                          std::size_t bytes_per_element) {
    if (b == 0 || h == 0 || n == 0 || d == 0 || bytes_per_element == 0)
        throw ContractError("estimate_roofline: all arguments must be positive");
    const double B = static_cast<double>(b), H = static_cast<double>(h), N = static_cast<double>(n),
                 D = static_cast<double>(d), E = static_cast<double>(bytes_per_element);
    RooflineEstimate r;
    r.flops = 4.0 * B * H * N * D;
    r.mops = (2.0 * B * H * N * D + 2.0 * B * H * D + 2.0 * B * H * N) * E;
    r.arithmetic_intensity = r.flops / r.mops;
    return r;
}

} // namespace chunkkv
