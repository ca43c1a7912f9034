#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mema::csv {

// Minimal comma-separated reader: header required, fields may be blank or
// double-quoted, blank lines and lines starting with '#' are skipped.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;  // 1-based source line of each row

    std::optional<std::size_t> column(std::string_view name) const;
    std::size_t require_column(std::string_view name) const;
};

// With strict_width, a row whose field count differs from the header is a
// ParseError; otherwise rows are kept as-is for the caller to check.
Table read(const std::filesystem::path& path, bool strict_width = true);
Table parse(std::string_view text, std::string_view source = "<memory>", bool strict_width = true);

std::vector<std::string> split_line(std::string_view line);

// Field converters; throw ParseError naming the row and column on failure.
double to_double(const Table& t, std::size_t row, std::size_t col);
long long to_integer(const Table& t, std::size_t row, std::size_t col);
bool to_bool(const Table& t, std::size_t row, std::size_t col);
std::optional<double> to_optional_double(const Table& t, std::size_t row, std::size_t col);

// Round-trip-exact formatting for doubles.
std::string format_double(double v);

std::string location(const Table& t, std::size_t row, std::size_t col);

}  // namespace mema::csv
