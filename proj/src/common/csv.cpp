#include "histoprog/common/csv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "histoprog/common/config.hpp"
#include "histoprog/common/error.hpp"

namespace histoprog {

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw ValidationError("CSV has no column '" + name + "'");
}

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != header.size()) {
    throw ValidationError("CSV row has " + std::to_string(row.size()) + " fields, header has " +
                          std::to_string(header.size()));
  }
  rows.push_back(std::move(row));
}

std::string CsvTable::str() const {
  auto join = [](const std::vector<std::string>& fields) {
    std::string line;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i > 0) line += ",";
      line += fields[i];
    }
    return line + "\n";
  };
  std::string out = join(header);
  for (const auto& row : rows) out += join(row);
  return out;
}

void CsvTable::save(const std::filesystem::path& path) const { write_text_file(path, str()); }

CsvTable parse_csv(const std::string& text) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split(line, ',');
    for (auto& f : fields) f = trim(f);
    if (first) {
      table.header = std::move(fields);
      first = false;
    } else {
      table.add_row(std::move(fields));
    }
  }
  if (first) throw ValidationError("CSV is empty");
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(read_text_file(path)); }

std::string fmt(double value, int precision) {
  if (std::isnan(value)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, value);
  std::string s(buf);
  if (s.front() == '-' && s.find_first_not_of("0.", 1) == std::string::npos) {
    s.erase(0, 1);  // no "-0.000000"
  }
  return s;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeFailure("failed writing " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace histoprog
