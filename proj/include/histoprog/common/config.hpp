#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace histoprog {

/// Flat key=value settings over a fixed schema.
///
/// Every key must be declared with a default before it can be set; unknown
/// keys in files or overrides are rejected. Lines starting with '#' and
/// blank lines are ignored.
class KeyValueConfig {
 public:
  void declare(const std::string& key, const std::string& default_value,
               const std::string& help = "");

  void set(const std::string& key, const std::string& value);
  /// Applies "key=value".
  void set_assignment(const std::string& assignment);
  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& origin = "<text>");

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  /// All keys in sorted order, one "key=value" per line.
  std::string resolved() const;
  const std::map<std::string, std::string>& values() const { return values_; }
  const std::string& help(const std::string& key) const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> help_;
};

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);

}  // namespace histoprog
