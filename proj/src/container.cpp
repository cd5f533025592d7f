#include "simhum/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "simhum/errors.hpp"

namespace simhum {

static_assert(std::endian::native == std::endian::little,
              "container I/O writes native byte order and assumes little-endian hosts");

namespace {

constexpr char kMagic[4] = {'S', 'H', 'C', 'N'};

enum class DType : std::uint8_t { U8 = 1, F32 = 2, F64 = 3 };

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, const std::string& origin)
      : bytes_(bytes), origin_(origin) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError(origin_ + ": truncated container");
  }
  std::span<const std::uint8_t> bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::uint64_t element_count(const std::vector<std::uint64_t>& shape) {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void Container::set_array(const std::string& name, std::vector<std::uint64_t> shape, Payload data) {
  const auto n = element_count(shape);
  const auto size = std::visit([](const auto& v) { return v.size(); }, data);
  if (n != size) {
    throw ArgumentError("array '" + name + "': shape holds " + std::to_string(n) +
                        " elements but payload has " + std::to_string(size));
  }
  arrays_[name] = Array{std::move(shape), std::move(data)};
}

const std::string& Container::meta(const std::string& key) const {
  auto it = meta_.find(key);
  if (it == meta_.end()) throw FormatError("container has no metadata key '" + key + "'");
  return it->second;
}

const Container::Array& Container::array(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw FormatError("container has no array '" + name + "'");
  return it->second;
}

void Container::throw_wrong_type(const std::string& name) {
  throw FormatError("array '" + name + "' has an unexpected element type");
}

std::vector<std::uint8_t> Container::serialize() const {
  Writer w;
  w.raw(kMagic, 4);
  w.pod<std::uint32_t>(kVersion);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(meta_.size()));
  for (const auto& [k, v] : meta_) {
    w.str(k);
    w.str(v);
  }
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(arrays_.size()));
  for (const auto& [name, a] : arrays_) {
    w.str(name);
    std::visit(
        [&](const auto& vec) {
          using T = typename std::decay_t<decltype(vec)>::value_type;
          DType dt = std::is_same_v<T, std::uint8_t> ? DType::U8
                     : std::is_same_v<T, float>      ? DType::F32
                                                     : DType::F64;
          w.pod<std::uint8_t>(static_cast<std::uint8_t>(dt));
          w.pod<std::uint32_t>(static_cast<std::uint32_t>(a.shape.size()));
          for (auto d : a.shape) w.pod<std::uint64_t>(d);
          w.raw(vec.data(), vec.size() * sizeof(T));
        },
        a.data);
  }
  const auto h = fnv1a64(w.bytes());
  w.pod<std::uint64_t>(h);
  return std::move(w.bytes());
}

Container Container::deserialize(std::span<const std::uint8_t> bytes, const std::string& origin) {
  if (bytes.size() < 16) throw FormatError(origin + ": file too short to be a container");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError(origin + ": bad magic");
  const auto body = bytes.first(bytes.size() - 8);
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body.size(), 8);
  if (fnv1a64(body) != stored) throw FormatError(origin + ": checksum mismatch");

  Reader r(body, origin);
  r.pod<std::uint32_t>();  // magic, already checked
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError(origin + ": unsupported container version " + std::to_string(version));
  }
  Container c;
  const auto n_meta = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = r.str();
    c.meta_[k] = r.str();
  }
  const auto n_arrays = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    auto name = r.str();
    const auto dt = static_cast<DType>(r.pod<std::uint8_t>());
    const auto ndim = r.pod<std::uint32_t>();
    std::vector<std::uint64_t> shape(ndim);
    for (auto& d : shape) d = r.pod<std::uint64_t>();
    const auto n = element_count(shape);
    Array a{shape, {}};
    switch (dt) {
      case DType::U8: {
        U8Array v(n);
        r.raw(v.data(), n);
        a.data = std::move(v);
        break;
      }
      case DType::F32: {
        F32Array v(n);
        r.raw(v.data(), n * sizeof(float));
        a.data = std::move(v);
        break;
      }
      case DType::F64: {
        F64Array v(n);
        r.raw(v.data(), n * sizeof(double));
        a.data = std::move(v);
        break;
      }
      default:
        throw FormatError(origin + ": unknown dtype in array '" + name + "'");
    }
    c.arrays_[name] = std::move(a);
  }
  if (r.pos() != body.size()) throw FormatError(origin + ": trailing bytes after arrays");
  return c;
}

void Container::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes, path.string());
}

}  // namespace simhum
