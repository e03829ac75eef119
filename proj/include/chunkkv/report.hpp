// Copyright (C) 2026 The chunkkv Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "chunkkv/common.hpp"

namespace chunkkv {

using Cell = std::variant<std::int64_t, double, std::string>;

/// Column-ordered result set; every row has one cell per column.
struct ResultTable {
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;

    void add_row(std::vector<Cell> row) {
        if (row.size() != columns.size()) throw ShapeError("result row width does not match the header");
        rows.push_back(std::move(row));
    }

    bool operator==(const ResultTable&) const = default;
};

enum class ReportFormat { Csv, Jsonl, Table };

inline ReportFormat parse_report_format(const std::string& s) {
    if (s == "csv") return ReportFormat::Csv;
    if (s == "jsonl") return ReportFormat::Jsonl;
    if (s == "table") return ReportFormat::Table;
    throw ContractError("unknown format '" + s + "' (expected csv|jsonl|table)");
}

namespace detail {

// Shortest round-trip form, always marked as floating point.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, res.ptr);
    if (s.find_first_of(".e") == std::string::npos) s += ".0";
    return s;
}

inline std::string format_cell(const Cell& c) {
    if (const auto* i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
    if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
    return std::get<std::string>(c);
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

inline Cell parse_cell(const std::string& s) {
    std::int64_t i = 0;
    auto ri = std::from_chars(s.data(), s.data() + s.size(), i);
    if (!s.empty() && ri.ec == std::errc() && ri.ptr == s.data() + s.size()) return i;
    if (s == "nan") return std::nan("");
    if (s == "inf") return HUGE_VAL;
    if (s == "-inf") return -HUGE_VAL;
    double d = 0.0;
    auto rd = std::from_chars(s.data(), s.data() + s.size(), d);
    if (!s.empty() && rd.ec == std::errc() && rd.ptr == s.data() + s.size()) return d;
    return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

} // namespace detail

inline void write_csv(const ResultTable& t, std::ostream& os) {
    for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << detail::csv_escape(t.columns[i]);
    os << '\n';
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << detail::csv_escape(detail::format_cell(row[i]));
        os << '\n';
    }
}

/// One JSON object per row, keys in column order. An empty table writes nothing.
inline void write_jsonl(const ResultTable& t, std::ostream& os) {
    for (const auto& row : t.rows) {
        nlohmann::ordered_json obj = nlohmann::ordered_json::object();
        for (std::size_t i = 0; i < row.size(); ++i)
            std::visit([&](const auto& v) { obj[t.columns[i]] = v; }, row[i]);
        os << obj.dump() << '\n';
    }
}

inline void write_table(const ResultTable& t, std::ostream& os) {
    std::vector<std::size_t> width(t.columns.size());
    std::vector<std::vector<std::string>> text;
    for (std::size_t i = 0; i < t.columns.size(); ++i) width[i] = t.columns[i].size();
    for (const auto& row : t.rows) {
        text.emplace_back();
        for (std::size_t i = 0; i < row.size(); ++i) {
            std::string s;
            if (const auto* d = std::get_if<double>(&row[i])) {
                char buf[64];
                // Small magnitudes (errors, tolerances) would print as 0.0000.
                const bool tiny = *d != 0.0 && std::abs(*d) < 1e-3;
                std::snprintf(buf, sizeof buf, tiny ? "%.3e" : "%.4f", *d);
                s = buf;
            } else {
                s = detail::format_cell(row[i]);
            }
            width[i] = std::max(width[i], s.size());
            text.back().push_back(std::move(s));
        }
    }
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) os << "  ";
            os << std::string(width[i] - cells[i].size(), ' ') << cells[i];
        }
        os << '\n';
    };
    line(t.columns);
    std::size_t total = 0;
    for (std::size_t w : width) total += w;
    os << std::string(total + 2 * (width.empty() ? 0 : width.size() - 1), '-') << '\n';
    for (const auto& cells : text) line(cells);
}

inline void write_report(const ResultTable& t, ReportFormat fmt, std::ostream& os) {
    switch (fmt) {
    case ReportFormat::Csv: write_csv(t, os); break;
    case ReportFormat::Jsonl: write_jsonl(t, os); break;
    case ReportFormat::Table: write_table(t, os); break;
    }
}

/// Writes to `path`; throws Error when the destination cannot be written.
inline void write_report(const ResultTable& t, ReportFormat fmt, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    write_report(t, fmt, os);
    os.flush();
    if (!os) throw Error("write to '" + path + "' failed");
}

inline ResultTable parse_csv(std::istream& is) {
    ResultTable t;
    std::string line;
    if (!std::getline(is, line)) return t;
    t.columns = detail::split_csv_line(line);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        std::vector<Cell> row;
        row.reserve(fields.size());
        for (const auto& f : fields) row.push_back(detail::parse_cell(f));
        t.add_row(std::move(row));
    }
    return t;
}

inline ResultTable parse_jsonl(std::istream& is) {
    ResultTable t;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto obj = nlohmann::ordered_json::parse(line);
        if (t.columns.empty())
            for (const auto& [key, _] : obj.items()) t.columns.push_back(key);
        std::vector<Cell> row;
        for (const auto& col : t.columns) {
            const auto& v = obj.at(col);
            if (v.is_number_integer())
                row.emplace_back(v.get<std::int64_t>());
            else if (v.is_number())
                row.emplace_back(v.get<double>());
            else
                row.emplace_back(v.get<std::string>());
        }
        t.add_row(std::move(row));
    }
    return t;
}

} // namespace chunkkv
