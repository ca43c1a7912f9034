#include "mema/csv.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mema/error.hpp"

namespace mema::csv {
namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::vector<std::string> split_line(std::string_view line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

Table parse(std::string_view text, std::string_view source, bool strict_width) {
    Table t;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool have_header = false;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
        pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
        ++line_no;
        if (line_no == 1 && line.size() >= 3 && line.substr(0, 3) == "\xEF\xBB\xBF") line.remove_prefix(3);
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped.front() == '#') continue;
        auto fields = split_line(line);
        if (!have_header) {
            t.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (strict_width && fields.size() != t.header.size()) {
            throw Error(ErrorCode::ParseError, std::string(source) + ":" + std::to_string(line_no) + ": expected " +
                                                   std::to_string(t.header.size()) + " fields, found " +
                                                   std::to_string(fields.size()));
        }
        t.rows.push_back(std::move(fields));
        t.line_numbers.push_back(line_no);
    }
    if (!have_header) throw Error(ErrorCode::SchemaError, std::string(source) + ": missing header row");
    return t;
}

Table read(const std::filesystem::path& path, bool strict_width) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string(), strict_width);
}

std::optional<std::size_t> Table::column(std::string_view name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
}

std::size_t Table::require_column(std::string_view name) const {
    auto c = column(name);
    if (!c) throw Error(ErrorCode::SchemaError, "missing required column '" + std::string(name) + "'");
    return *c;
}

std::string location(const Table& t, std::size_t row, std::size_t col) {
    return "line " + std::to_string(t.line_numbers.at(row)) + ", column '" + t.header.at(col) + "'";
}

double to_double(const Table& t, std::size_t row, std::size_t col) {
    const std::string& s = t.rows.at(row).at(col);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
        throw Error(ErrorCode::ParseError, location(t, row, col) + ": not a number: '" + s + "'");
    }
    return v;
}

long long to_integer(const Table& t, std::size_t row, std::size_t col) {
    const std::string& s = t.rows.at(row).at(col);
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
        throw Error(ErrorCode::ParseError, location(t, row, col) + ": not an integer: '" + s + "'");
    }
    return v;
}

bool to_bool(const Table& t, std::size_t row, std::size_t col) {
    std::string s = t.rows.at(row).at(col);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw Error(ErrorCode::ParseError, location(t, row, col) + ": expected true/false, found '" + s + "'");
}

std::optional<double> to_optional_double(const Table& t, std::size_t row, std::size_t col) {
    if (t.rows.at(row).at(col).empty()) return std::nullopt;
    return to_double(t, row, col);
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace mema::csv
