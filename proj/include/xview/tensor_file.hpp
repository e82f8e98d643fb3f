#pragma once

// "SANW" tensor container shared by weight files, optimizer moments, the preprocessed
// tensor cache and the feature store.
//
//   magic "SANW" | u32 version (=1) | u32 tensor count
//   per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims, prod(dims) x f32
//
// All integers and floats are little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xview/error.hpp"
#include "xview/tensor.hpp"

namespace xview {

inline constexpr std::array<char, 4> kSanwMagic = {'S', 'A', 'N', 'W'};
inline constexpr std::uint32_t kSanwVersion = 1;

/// Name of the rank-0 marker tensor that records how a bundle was produced.
inline constexpr std::string_view kProvenancePrefix = "__provenance__.";

struct StoredTensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  std::size_t element_count() const {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, std::uint32_t d) { return a * d; });
  }

  friend bool operator==(const StoredTensor&, const StoredTensor&) = default;
};

struct Provenance {
  enum class Kind { pretrained, random };
  Kind kind = Kind::pretrained;
  std::uint64_t seed = 0;

  std::string to_string() const {
    return kind == Kind::random ? "random(" + std::to_string(seed) + ")" : "pretrained";
  }

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// Ordered collection of uniquely named f32 tensors.
class TensorBundle {
 public:
  void add(std::string name, StoredTensor tensor) {
    if (tensor.values.size() != tensor.element_count()) {
      throw ShapeError("tensor '" + name + "' has " + std::to_string(tensor.values.size()) +
                       " values for its dims");
    }
    if (tensor.dims.size() > 255) throw ShapeError("tensor '" + name + "' rank exceeds 255");
    if (name.size() > 0xFFFF) throw ShapeError("tensor name exceeds 65535 bytes");
    if (tensors_.contains(name)) throw FormatError("duplicate tensor name '" + name + "'");
    order_.push_back(name);
    tensors_.emplace(std::move(name), std::move(tensor));
  }

  /// Inserts or overwrites.
  void set(const std::string& name, StoredTensor tensor) {
    if (auto it = tensors_.find(name); it != tensors_.end()) {
      if (tensor.values.size() != tensor.element_count()) throw ShapeError("tensor '" + name + "' size mismatch");
      it->second = std::move(tensor);
    } else {
      add(name, std::move(tensor));
    }
  }

  template <class T>
  void add(std::string name, const Tensor3<T>& t) {
    StoredTensor st;
    st.dims = {static_cast<std::uint32_t>(t.height()), static_cast<std::uint32_t>(t.width()),
               static_cast<std::uint32_t>(t.channels())};
    st.values.reserve(t.size());
    for (T v : t.data()) st.values.push_back(static_cast<float>(v));
    add(std::move(name), std::move(st));
  }

  bool contains(const std::string& name) const { return tensors_.contains(name); }

  const StoredTensor* find(const std::string& name) const {
    auto it = tensors_.find(name);
    return it == tensors_.end() ? nullptr : &it->second;
  }

  const StoredTensor& at(const std::string& name) const {
    if (const auto* t = find(name)) return *t;
    throw FormatError("missing tensor '" + name + "'");
  }

  template <class T = float>
  Tensor3<T> tensor3(const std::string& name) const {
    const auto& st = at(name);
    if (st.dims.size() != 3) throw ShapeError("tensor '" + name + "' is not rank 3");
    std::vector<T> data(st.values.begin(), st.values.end());
    return Tensor3<T>(st.dims[0], st.dims[1], st.dims[2], std::move(data));
  }

  const std::vector<std::string>& names() const noexcept { return order_; }
  std::size_t size() const noexcept { return order_.size(); }

  /// Unset for plain data containers and for bundles exported by external tools.
  const std::optional<Provenance>& provenance() const noexcept { return provenance_; }
  void set_provenance(Provenance p) noexcept { provenance_ = p; }

  friend bool operator==(const TensorBundle& a, const TensorBundle& b) {
    return a.order_ == b.order_ && a.tensors_ == b.tensors_ && a.provenance_ == b.provenance_;
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, StoredTensor> tensors_;
  std::optional<Provenance> provenance_;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated SANW payload while reading ") + what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint8_t u8(const char* what) { return take(1, what)[0]; }
  std::uint16_t u16(const char* what) {
    auto s = take(2, what);
    return static_cast<std::uint16_t>(s[0] | (s[1] << 8));
  }
  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    return static_cast<std::uint32_t>(s[0]) | (static_cast<std::uint32_t>(s[1]) << 8) |
           (static_cast<std::uint32_t>(s[2]) << 16) | (static_cast<std::uint32_t>(s[3]) << 24);
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_bundle(const TensorBundle& bundle) {
  std::vector<std::uint8_t> out(kSanwMagic.begin(), kSanwMagic.end());
  detail::put_u32(out, kSanwVersion);

  const auto& prov = bundle.provenance();
  detail::put_u32(out, static_cast<std::uint32_t>(bundle.size() + (prov ? 1 : 0)));

  auto write_tensor = [&out](std::string_view name, const StoredTensor& t) {
    detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) detail::put_u32(out, d);
    for (float v : t.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  };
  if (prov) {
    const std::string marker =
        std::string(kProvenancePrefix) +
        (prov->kind == Provenance::Kind::random ? "random." + std::to_string(prov->seed) : "pretrained");
    write_tensor(marker, StoredTensor{{}, {0.0f}});
  }
  for (const auto& name : bundle.names()) write_tensor(name, bundle.at(name));
  return out;
}

inline Provenance parse_provenance_marker(std::string_view name) {
  name.remove_prefix(kProvenancePrefix.size());
  if (name == "pretrained") return {};
  if (name.starts_with("random.")) {
    name.remove_prefix(7);
    Provenance p{Provenance::Kind::random, 0};
    try {
      p.seed = std::stoull(std::string(name));
    } catch (const std::exception&) {
      throw FormatError("malformed provenance marker");
    }
    return p;
  }
  throw FormatError("unknown provenance marker '" + std::string(name) + "'");
}

inline TensorBundle decode_bundle(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  auto magic = in.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kSanwMagic.begin())) throw FormatError("bad magic: not a SANW file");
  const auto version = in.u32("version");
  if (version != kSanwVersion) {
    throw FormatError("unsupported SANW version " + std::to_string(version) + " (expected " +
                      std::to_string(kSanwVersion) + ")");
  }
  const auto count = in.u32("tensor count");
  TensorBundle bundle;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.u16("name length");
    auto name_bytes = in.take(name_len, "name");
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto rank = in.u8("rank");
    StoredTensor t;
    for (std::uint8_t r = 0; r < rank; ++r) t.dims.push_back(in.u32("dims"));
    const std::size_t n = t.element_count();
    auto payload = in.take(n * 4, "values");
    t.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::uint32_t bits = static_cast<std::uint32_t>(payload[4 * k]) |
                                 (static_cast<std::uint32_t>(payload[4 * k + 1]) << 8) |
                                 (static_cast<std::uint32_t>(payload[4 * k + 2]) << 16) |
                                 (static_cast<std::uint32_t>(payload[4 * k + 3]) << 24);
      t.values[k] = std::bit_cast<float>(bits);
    }
    if (name.starts_with(kProvenancePrefix)) {
      bundle.set_provenance(parse_provenance_marker(name));
      continue;
    }
    bundle.add(std::move(name), std::move(t));
  }
  if (!in.done()) throw FormatError("trailing bytes after SANW payload");
  return bundle;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

inline TensorBundle load_bundle(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  try {
    return decode_bundle(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void save_bundle(const TensorBundle& bundle, const std::filesystem::path& path) {
  write_file_bytes(path, encode_bundle(bundle));
}

/// FNV-1a over the encoded bytes of the named tensors; used for bitwise-identity checks.
inline std::uint64_t tensor_checksum(const StoredTensor& t) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint8_t b) {
    h ^= b;
    h *= 1099511628211ULL;
  };
  for (auto d : t.dims)
    for (int i = 0; i < 4; ++i) mix(static_cast<std::uint8_t>(d >> (8 * i)));
  for (float v : t.values) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) mix(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return h;
}

}  // namespace xview
