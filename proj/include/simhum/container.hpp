#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace simhum {

// Binary container of named n-d arrays plus string metadata.
//
// Layout (all integers little-endian):
//   "SHCN" | u32 version
//   u32 n_meta   { u32 len, key bytes, u32 len, value bytes }*
//   u32 n_arrays { u32 len, name bytes, u8 dtype, u32 ndim, u64 dims[ndim], payload }*
//   u64 FNV-1a hash of every preceding byte
//
// Entries are written in key order so identical content gives identical bytes.
class Container {
 public:
  static constexpr std::uint32_t kVersion = 1;

  using U8Array = std::vector<std::uint8_t>;
  using F32Array = std::vector<float>;
  using F64Array = std::vector<double>;
  using Payload = std::variant<U8Array, F32Array, F64Array>;

  struct Array {
    std::vector<std::uint64_t> shape;
    Payload data;
  };

  void set_meta(const std::string& key, std::string value) { meta_[key] = std::move(value); }
  void set_array(const std::string& name, std::vector<std::uint64_t> shape, Payload data);

  bool has_meta(const std::string& key) const { return meta_.contains(key); }
  bool has_array(const std::string& name) const { return arrays_.contains(name); }
  const std::string& meta(const std::string& key) const;
  const Array& array(const std::string& name) const;
  const std::map<std::string, std::string>& all_meta() const { return meta_; }
  const std::map<std::string, Array>& arrays() const { return arrays_; }

  template <typename T>
  const std::vector<T>& get(const std::string& name) const {
    const Array& a = array(name);
    if (!std::holds_alternative<std::vector<T>>(a.data)) throw_wrong_type(name);
    return std::get<std::vector<T>>(a.data);
  }

  std::vector<std::uint8_t> serialize() const;
  static Container deserialize(std::span<const std::uint8_t> bytes, const std::string& origin);

  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);

 private:
  [[noreturn]] static void throw_wrong_type(const std::string& name);

  std::map<std::string, std::string> meta_;
  std::map<std::string, Array> arrays_;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace simhum
