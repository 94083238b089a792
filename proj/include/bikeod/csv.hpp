#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace bikeod {

/// Minimal comma-separated table with a header row. Quoting is not
/// supported; none of the documented formats need it.
class CsvTable {
 public:
  static CsvTable read(const std::filesystem::path& path);
  static CsvTable parse(std::string_view text, std::string_view source = "<memory>");

  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return rows_.size(); }
  const std::vector<std::string>& row(std::size_t i) const { return rows_[i]; }

  /// Index of a required column; throws DataError naming the file otherwise.
  std::size_t column(std::string_view name) const;
  /// Throws DataError unless every name is present.
  void require(std::initializer_list<std::string_view> names) const;

  double number(std::size_t row, std::size_t col) const;
  const std::string& cell(std::size_t row, std::size_t col) const { return rows_[row][col]; }
  const std::string& source() const { return source_; }

 private:
  std::string source_;
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Shortest round-trip decimal representation.
std::string format_number(double v);

}  // namespace bikeod
