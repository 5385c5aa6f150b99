#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace hallu {

// Plain comma-separated table. Cells may not contain commas, quotes or
// newlines; write() rejects them instead of quoting.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;  // throws Error if absent
  const std::string& at(std::size_t row, std::string_view name) const;
  double number(std::size_t row, std::string_view name) const;

  void write(std::ostream& out) const;
  void write(const std::filesystem::path& path) const;
  std::string str() const;

  static Table parse(std::istream& in);
  static Table parse(std::string_view text);
  static Table read(const std::filesystem::path& path);

  friend bool operator==(const Table&, const Table&) = default;
};

// Shortest decimal text that reads back to the same double.
std::string format_number(double v);

}  // namespace hallu
