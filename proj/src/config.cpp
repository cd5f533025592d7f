#include "simhum/config.hpp"

#include <fstream>
#include <sstream>

#include "simhum/errors.hpp"
#include "simhum/text.hpp"

namespace simhum {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const fs::path& base_dir, const std::string& origin) {
  KeyValueConfig c;
  c.parse_into(text, base_dir, origin, 0);
  return c;
}

KeyValueConfig KeyValueConfig::load(const fs::path& path) {
  KeyValueConfig c;
  c.parse_into(read_file(path), path.parent_path(), path.string(), 0);
  return c;
}

void KeyValueConfig::parse_into(const std::string& text, const fs::path& base_dir, const std::string& origin,
                                int depth) {
  if (depth > 16) throw ConfigError(origin + ": include depth exceeded (cycle?)");
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (key == "include" && section.empty()) {
      const fs::path inc = fs::path(value).is_absolute() ? fs::path(value) : base_dir / value;
      parse_into(read_file(inc), inc.parent_path(), inc.string(), depth + 1);
      continue;
    }
    values_[section.empty() ? key : section + "." + key] = value;
  }
}

void KeyValueConfig::apply_overrides(const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + a + "' is not of the form key=value");
    values_[trim(std::string_view(a).substr(0, eq))] = trim(std::string_view(a).substr(eq + 1));
  }
}

void KeyValueConfig::merge(const KeyValueConfig& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string KeyValueConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key) const { return parse_double(get_string(key), key); }

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

int KeyValueConfig::get_int(const std::string& key) const { return parse_int(get_string(key), key); }

int KeyValueConfig::get_int(const std::string& key, int fallback) const { return has(key) ? get_int(key) : fallback; }

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  return has(key) ? parse_bool(get_string(key), key) : fallback;
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& part : split(get_string(key), ',')) {
    if (!trim(part).empty()) out.push_back(parse_double(part, key));
  }
  return out;
}

std::map<std::string, std::string> KeyValueConfig::with_prefix(const std::string& prefix) const {
  std::map<std::string, std::string> out;
  for (auto it = values_.lower_bound(prefix); it != values_.end() && it->first.starts_with(prefix); ++it) {
    out[it->first.substr(prefix.size())] = it->second;
  }
  return out;
}

std::string KeyValueConfig::to_text() const {
  std::ostringstream os;
  std::string current;
  bool first = true;
  for (const auto& [key, value] : values_) {
    if (key.find('.') != std::string::npos) continue;
    os << key << " = " << value << '\n';
    first = false;
  }
  for (const auto& [key, value] : values_) {
    const auto dot = key.rfind('.');
    if (dot == std::string::npos) continue;
    const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
    if (first || section != current) {
      if (!first) os << '\n';
      if (!section.empty()) os << '[' << section << "]\n";
      current = section;
      first = false;
    }
    os << name << " = " << value << '\n';
  }
  return os.str();
}

}  // namespace simhum
