#include "histoprog/common/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "histoprog/common/error.hpp"

namespace histoprog {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string current;
  for (char c : s) {
    if (c == sep) {
      out.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  out.push_back(current);
  return out;
}

void KeyValueConfig::declare(const std::string& key, const std::string& default_value,
                             const std::string& help) {
  values_[key] = default_value;
  help_[key] = help;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("unknown config key: " + key);
  it->second = value;
}

void KeyValueConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ValidationError("expected key=value, got '" + assignment + "'");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void KeyValueConfig::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    try {
      set_assignment(t);
    } catch (const ValidationError& e) {
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void KeyValueConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  load_text(buf.str(), path.string());
}

const std::string& KeyValueConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("unknown config key: " + key);
  return it->second;
}

namespace {
template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* begin = text.data();
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw ValidationError("config key " + key + ": cannot parse '" + text + "' as a number");
  }
  return value;
}
}  // namespace

double KeyValueConfig::get_double(const std::string& key) const {
  return parse_number<double>(key, get(key));
}

long long KeyValueConfig::get_int(const std::string& key) const {
  return parse_number<long long>(key, get(key));
}

bool KeyValueConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError("config key " + key + ": expected a boolean, got '" + v + "'");
}

std::vector<double> KeyValueConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& part : split(get(key), ',')) {
    const auto t = trim(part);
    if (!t.empty()) out.push_back(parse_number<double>(key, t));
  }
  return out;
}

std::string KeyValueConfig::resolved() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

const std::string& KeyValueConfig::help(const std::string& key) const {
  auto it = help_.find(key);
  if (it == help_.end()) throw ValidationError("unknown config key: " + key);
  return it->second;
}

}  // namespace histoprog
