#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace sae::csv {

/// A parsed comma-separated table. The first line is the header.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    /// 1-based source line of each row, for error messages.
    std::vector<std::size_t> lines;

    /// Index of a header column, or npos.
    std::size_t column(std::string_view name) const;
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

/// Parses RFC 4180 style CSV: quoted fields, doubled quotes, CRLF, and a
/// leading UTF-8 byte order mark. Throws DataError on unterminated quotes or
/// ragged rows.
Table parse(std::string_view text, std::string_view source = "<memory>");

Table read_file(const std::string& path);

/// Parses a finite double, throwing DataError mentioning `what` otherwise.
double to_double(std::string_view field, std::string_view what);

/// Shortest text that parses back to exactly the same double.
std::string format_double(double value);

/// Writes one record, quoting fields that need it.
void write_row(std::ostream& out, const std::vector<std::string>& fields);

} // namespace sae::csv
