#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace deeptransport::csv {

/// Minimal RFC-4180 reader: comma separated, optional double quotes,
/// CRLF tolerant. Enough for the flat tables this project exchanges.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// 1-based source line of each row, for error messages.
  std::vector<std::size_t> lines;

  std::size_t column(std::string_view name) const;  // throws DataError
  bool has_column(std::string_view name) const;
};

std::vector<std::string> split_line(std::string_view line);
Table read(const std::filesystem::path& path);

}  // namespace deeptransport::csv
