#include "csir/table.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "csir/common.hpp"

namespace csir {

namespace {

std::vector<std::string> split_line(const std::string& line, char delim, std::size_t lineno) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"' && cur.empty()) {
            quoted = true;
        } else if (c == delim) {
            cells.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted)
        throw ValidationError("unterminated quote on line " + std::to_string(lineno));
    cells.push_back(std::move(cur));
    return cells;
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace

std::optional<std::size_t> Table::find(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return i;
    return std::nullopt;
}

std::size_t Table::require(const std::string& name) const {
    if (auto i = find(name)) return *i;
    throw ValidationError("missing required column '" + name + "'");
}

Table read_table(std::istream& in, char delimiter) {
    Table t;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_line(line, delimiter, lineno);
        for (auto& c : cells) c = trim(c);
        if (!have_header) {
            if (cells.empty()) throw ValidationError("empty header row");
            t.columns = std::move(cells);
            have_header = true;
            continue;
        }
        if (cells.size() != t.columns.size())
            throw ValidationError("line " + std::to_string(lineno) + ": expected " +
                                  std::to_string(t.columns.size()) + " cells, found " +
                                  std::to_string(cells.size()));
        t.rows.push_back(std::move(cells));
    }
    if (!have_header) throw ValidationError("missing header row");
    return t;
}

Table read_table_file(const std::string& path, char delimiter) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    try {
        return read_table(in, delimiter);
    } catch (const ValidationError& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

namespace {

void write_cell(std::ostream& out, const std::string& cell, char delim) {
    if (cell.find(delim) != std::string::npos || cell.find('"') != std::string::npos) {
        out << '"';
        for (char c : cell) {
            if (c == '"') out << '"';
            out << c;
        }
        out << '"';
    } else {
        out << cell;
    }
}

}  // namespace

void write_table(std::ostream& out, const Table& table, char delimiter) {
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
        if (i) out << delimiter;
        write_cell(out, table.columns[i], delimiter);
    }
    out << '\n';
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << delimiter;
            write_cell(out, row[i], delimiter);
        }
        out << '\n';
    }
}

void write_table_file(const std::string& path, const Table& table, char delimiter) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    write_table(out, table, delimiter);
}

double parse_double(const std::string& cell, std::size_t row, const std::string& column) {
    double v = 0.0;
    const char* b = cell.data();
    const char* e = b + cell.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc{} || p != e)
        throw ValidationError("row " + std::to_string(row) + ", column '" + column +
                              "': not a number: '" + cell + "'");
    return v;
}

long long parse_count(const std::string& cell, std::size_t row, const std::string& column) {
    long long v = 0;
    const char* b = cell.data();
    const char* e = b + cell.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc{} || p != e || v < 0)
        throw ValidationError("row " + std::to_string(row) + ", column '" + column +
                              "': not a nonnegative integer: '" + cell + "'");
    return v;
}

std::string format_double(double v) {
    char buf[64];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        double back = 0.0;
        std::sscanf(buf, "%lf", &back);
        if (back == v || (std::isnan(back) && std::isnan(v))) return buf;
    }
    return buf;
}

bool is_blank(const std::string& cell) { return trim(cell).empty(); }

}  // namespace csir
