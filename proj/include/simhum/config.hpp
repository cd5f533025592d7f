#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace simhum {

// Layered key/value document.
//
//   # comment
//   include = base.cfg        (resolved relative to the including file)
//   [train]
//   steps = 2000              -> key "train.steps"
//
// Later layers override earlier ones; `include` lines are expanded in place.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::filesystem::path& base_dir = {},
                              const std::string& origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  // Applies "section.key=value" strings on top of this document.
  void apply_overrides(const std::vector<std::string>& assignments);
  void merge(const KeyValueConfig& other);

  bool has(const std::string& key) const { return values_.contains(key); }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key) const;

  // Keys sharing a prefix, e.g. keys_with_prefix("background.") -> "checker.kind", ...
  std::map<std::string, std::string> with_prefix(const std::string& prefix) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  // Sectioned text that parses back to the same values.
  std::string to_text() const;

 private:
  void parse_into(const std::string& text, const std::filesystem::path& base_dir, const std::string& origin,
                  int depth);

  std::map<std::string, std::string> values_;
};

}  // namespace simhum
