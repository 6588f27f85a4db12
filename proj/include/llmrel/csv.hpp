#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace llmrel::csv {

using Row = std::vector<std::string>;

struct Table {
  Row header;
  std::vector<Row> rows;

  /// Index of a header column; throws InputError naming the missing column.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
};

/// RFC 4180 reader. Quoted fields may contain separators, doubled quotes and
/// raw line breaks (kept byte-for-byte, including CR). Every row must have
/// the header's width.
Table read(std::istream& in);
Table read_file(const std::filesystem::path& path);

/// Quotes a field only when it contains a comma, quote, CR/LF, or
/// leading/trailing whitespace.
std::string escape(std::string_view field);
void write_row(std::ostream& out, std::span<const std::string> fields);
void write_row(std::ostream& out, std::initializer_list<std::string_view> fields);

}  // namespace llmrel::csv
