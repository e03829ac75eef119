// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <ostream>
#include <sstream>
#include <string>

#include "chunkkv/prefix_tree.hpp"

namespace chunkkv {

// Text dump, one chunk per line in depth-first schedule order:
//   <id> <parent-id|-> <start_pos> <len> <ref_count> <first_token> <last_token>
// The column order is stable; golden tests depend on it.
inline void dump_tree_text(const PrefixTree& tree, std::ostream& os) {
    os << "# id parent start_pos len ref_count first_token last_token\n";
    tree.for_each_chunk([&](const Chunk& ch) {
        os << ch.id() << ' ';
        if (ch.parent())
            os << ch.parent()->id();
        else
            os << '-';
        os << ' ' << ch.start_pos() << ' ' << ch.size() << ' ' << ch.ref_count() << ' ' << ch.first_token() << ' '
           << ch.last_token() << '\n';
    });
}

/// Graphviz description of the forest; shared chunks are filled.
inline void dump_tree_dot(const PrefixTree& tree, std::ostream& os) {
    os << "digraph prefix_tree {\n";
    os << "  node [shape=box, fontname=\"monospace\"];\n";
    tree.for_each_chunk([&](const Chunk& ch) {
        os << "  c" << ch.id() << " [label=\"C" << ch.id() << "\\npos " << ch.start_pos() << " len " << ch.size()
           << "\\nref " << ch.ref_count() << "\"";
        if (ch.ref_count() >= 2) os << ", style=filled, fillcolor=lightgrey";
        os << "];\n";
    });
    tree.for_each_chunk([&](const Chunk& ch) {
        if (ch.parent()) os << "  c" << ch.parent()->id() << " -> c" << ch.id() << ";\n";
    });
    os << "}\n";
}

inline std::string dump_tree_text(const PrefixTree& tree) {
    std::ostringstream os;
    dump_tree_text(tree, os);
    return os.str();
}

} // namespace chunkkv
