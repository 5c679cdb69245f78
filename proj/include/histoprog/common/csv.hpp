#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace histoprog {

/// Minimal comma-separated table; no quoting (fields never contain commas).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
  void add_row(std::vector<std::string> row);
  std::string str() const;
  void save(const std::filesystem::path& path) const;
};

CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::filesystem::path& path);

/// Fixed-precision decimal rendering used in every emitted table.
std::string fmt(double value, int precision = 6);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace histoprog
