#include "hallu/table.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "hallu/common.hpp"

namespace hallu {

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw Error(fmt::format("table has no column '{}'", name));
}

const std::string& Table::at(std::size_t row, std::string_view name) const {
  return rows.at(row).at(column(name));
}

double Table::number(std::size_t row, std::string_view name) const {
  const auto& cell = at(row, name);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw ParseError(fmt::format("column '{}' row {}: '{}' is not a number", name, row, cell), row + 2);
  }
  return v;
}

namespace {

void put_line(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].find_first_of(",\"\n\r") != std::string::npos) {
      throw Error(fmt::format("cell '{}' cannot be written unquoted", cells[i]));
    }
    if (i) out << ',';
    out << cells[i];
  }
  out << '\n';
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  for (;;) {
    auto comma = line.find(',', start);
    cells.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

}  // namespace

void Table::write(std::ostream& out) const {
  put_line(out, header);
  for (const auto& r : rows) {
    if (r.size() != header.size()) throw Error("table row width differs from header");
    put_line(out, r);
  }
}

void Table::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  write(out);
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

std::string Table::str() const {
  std::ostringstream s;
  write(s);
  return s.str();
}

Table Table::parse(std::istream& in) {
  Table t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
    } else if (cells.size() != t.header.size()) {
      throw ParseError(fmt::format("line {}: {} cells, header has {}", lineno, cells.size(),
                                   t.header.size()),
                       lineno);
    } else {
      t.rows.push_back(std::move(cells));
    }
  }
  if (t.header.empty()) throw ParseError("empty table", 1);
  return t;
}

Table Table::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse(in);
}

Table Table::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  return parse(in);
}

std::string format_number(double v) { return fmt::format("{}", v); }

}  // namespace hallu
