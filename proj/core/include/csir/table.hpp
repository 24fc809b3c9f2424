#pragma once

// Minimal delimited-text tables: UTF-8, header row, configurable delimiter
// (comma default), double quotes for cells containing the delimiter.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace csir {

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    /// Index of a header column, or nullopt.
    std::optional<std::size_t> find(const std::string& name) const;
    /// Index of a required header column; ValidationError naming it otherwise.
    std::size_t require(const std::string& name) const;
    const std::string& cell(std::size_t row, std::size_t col) const { return rows[row][col]; }
};

Table read_table(std::istream& in, char delimiter = ',');
Table read_table_file(const std::string& path, char delimiter = ',');

void write_table(std::ostream& out, const Table& table, char delimiter = ',');
void write_table_file(const std::string& path, const Table& table, char delimiter = ',');

/// Parse a double; ValidationError with 1-based row/column on failure.
double parse_double(const std::string& cell, std::size_t row, const std::string& column);
/// Parse a nonnegative integer; ValidationError with 1-based row/column on failure.
long long parse_count(const std::string& cell, std::size_t row, const std::string& column);

/// Shortest decimal form that round-trips to the same double.
std::string format_double(double v);

bool is_blank(const std::string& cell);

}  // namespace csir
