#include "deeptransport/csv.hpp"

#include <algorithm>
#include <fstream>

#include "deeptransport/errors.hpp"

namespace deeptransport::csv {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = was_quoted = true;
    } else if (c == ',') {
      out.push_back(was_quoted ? field : trim(field));
      field.clear();
      was_quoted = false;
    } else {
      field += c;
    }
  }
  if (quoted) throw DataError("unterminated quote in CSV line: " + std::string(line));
  out.push_back(was_quoted ? field : trim(field));
  return out;
}

std::size_t Table::column(std::string_view name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw DataError("CSV is missing column '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - header.begin());
}

bool Table::has_column(std::string_view name) const {
  return std::find(header.begin(), header.end(), name) != header.end();
}

Table read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  Table table;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    auto fields = split_line(line);
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size())
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(table.header.size()) + " fields, got " + std::to_string(fields.size()));
    table.rows.push_back(std::move(fields));
    table.lines.push_back(lineno);
  }
  if (!have_header) throw DataError(path.string() + ": empty CSV (no header)");
  return table;
}

}  // namespace deeptransport::csv
