// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include "chunkkv/attention.hpp"
#include "chunkkv/attn_context.hpp"
#include "chunkkv/bench.hpp"
#include "chunkkv/chunk.hpp"
#include "chunkkv/chunk_allocator.hpp"
#include "chunkkv/common.hpp"
#include "chunkkv/engine.hpp"
#include "chunkkv/memory_stats.hpp"
#include "chunkkv/prefix_tree.hpp"
#include "chunkkv/report.hpp"
#include "chunkkv/roofline.hpp"
#include "chunkkv/run_config.hpp"
#include "chunkkv/synthetic_model.hpp"
#include "chunkkv/thread_pool.hpp"
#include "chunkkv/tree_dump.hpp"
#include "chunkkv/verify.hpp"
#include "chunkkv/workload.hpp"
