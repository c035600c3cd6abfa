#pragma once

// MMRF binary field files:
//   "MMRF" | u16 version=1 | u8 dim | u8 components | u8 dtype (0 f32, 1 f64)
//   | u32 size x dim | f32 spacing x dim | planar component data, axis 0 fastest.
// All multi-byte values little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "mforge/grid.hpp"

namespace mforge {

namespace io {

static_assert(std::endian::native == std::endian::little, "MMRF I/O assumes a little-endian host");

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* src, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(src);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

  template <class T>
  T get() {
    T v;
    get_bytes(&v, sizeof(T));
    return v;
  }
  void get_bytes(void* dst, std::size_t n) {
    if (pos_ + n > bytes_.size()) throw DataError("unexpected end of file");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::string get_string(std::size_t max_len = 1 << 20) {
    const auto n = get<std::uint32_t>();
    if (n > max_len) throw DataError("string length out of range");
    std::string s(n, '\0');
    get_bytes(s.data(), n);
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path);
}

}  // namespace io

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

/// Decoded MMRF payload; values are widened to double regardless of stored dtype.
struct RawField {
  GridSpec grid;
  int components = 1;
  DType dtype = DType::f64;
  std::vector<std::vector<double>> data;
};

namespace detail {

template <class Real>
void put_components(io::ByteWriter& w, const std::vector<const ScalarField<Real>*>& comps, DType dtype) {
  for (const auto* c : comps) {
    for (Real v : c->values()) {
      if (dtype == DType::f32)
        w.put<float>(static_cast<float>(v));
      else
        w.put<double>(static_cast<double>(v));
    }
  }
}

template <class Real>
std::vector<unsigned char> encode(const GridSpec& g, const std::vector<const ScalarField<Real>*>& comps,
                                  DType dtype) {
  io::ByteWriter w;
  w.put_bytes("MMRF", 4);
  w.put<std::uint16_t>(1);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(g.dim));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(comps.size()));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(dtype));
  for (int a = 0; a < g.dim; ++a) w.put<std::uint32_t>(static_cast<std::uint32_t>(g.size[a]));
  for (int a = 0; a < g.dim; ++a) w.put<float>(static_cast<float>(g.spacing[a]));
  put_components(w, comps, dtype);
  return w.bytes();
}

}  // namespace detail

template <class Real>
constexpr DType native_dtype() {
  return std::is_same_v<Real, float> ? DType::f32 : DType::f64;
}

template <class Real>
std::vector<unsigned char> encode_field(const ScalarField<Real>& f, DType dtype = native_dtype<Real>()) {
  return detail::encode<Real>(f.grid(), {&f}, dtype);
}

template <class Real>
std::vector<unsigned char> encode_field(const VectorField<Real>& v, DType dtype = native_dtype<Real>()) {
  std::vector<const ScalarField<Real>*> comps;
  for (int a = 0; a < v.dim(); ++a) comps.push_back(&v[a]);
  return detail::encode<Real>(v.grid(), comps, dtype);
}

inline RawField decode_field(std::vector<unsigned char> bytes) {
  io::ByteReader r(std::move(bytes));
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, "MMRF", 4) != 0) throw DataError("not an MMRF file (bad magic)");
  if (r.get<std::uint16_t>() != 1) throw DataError("unsupported MMRF version");
  RawField out;
  out.grid.dim = r.get<std::uint8_t>();
  out.components = r.get<std::uint8_t>();
  const auto dt = r.get<std::uint8_t>();
  if (dt > 1) throw DataError("unknown MMRF dtype");
  out.dtype = static_cast<DType>(dt);
  if (out.grid.dim != 2 && out.grid.dim != 3) throw DataError("MMRF dimension must be 2 or 3");
  if (out.components != 1 && out.components != out.grid.dim)
    throw DataError("MMRF component count must be 1 or dim");
  for (int a = 0; a < out.grid.dim; ++a) out.grid.size[a] = static_cast<int>(r.get<std::uint32_t>());
  for (int a = 0; a < out.grid.dim; ++a) out.grid.spacing[a] = r.get<float>();
  out.grid.validate();
  const std::size_t n = out.grid.voxels();
  out.data.assign(out.components, std::vector<double>(n));
  for (auto& comp : out.data) {
    for (auto& v : comp) v = out.dtype == DType::f32 ? r.get<float>() : r.get<double>();
  }
  if (!r.at_end()) throw DataError("trailing bytes in MMRF file");
  return out;
}

template <class Real>
ScalarField<Real> to_scalar(const RawField& raw) {
  if (raw.components != 1) throw DataError("expected a scalar MMRF field");
  return ScalarField<Real>(raw.grid, std::vector<Real>(raw.data[0].begin(), raw.data[0].end()));
}

template <class Real>
VectorField<Real> to_vector(const RawField& raw) {
  if (raw.components != raw.grid.dim) throw DataError("expected a vector MMRF field");
  std::vector<ScalarField<Real>> comps;
  for (const auto& c : raw.data)
    comps.emplace_back(raw.grid, std::vector<Real>(c.begin(), c.end()));
  return VectorField<Real>(std::move(comps));
}

template <class Real>
void save_field(const std::string& path, const ScalarField<Real>& f) {
  io::write_file(path, encode_field(f));
}

template <class Real>
void save_field(const std::string& path, const VectorField<Real>& v) {
  io::write_file(path, encode_field(v));
}

template <class Real>
void save_field(const std::string& path, const DeformationMap<Real>& m) {
  io::write_file(path, encode_field(m.map));
}

template <class Real>
ScalarField<Real> load_scalar(const std::string& path) {
  return to_scalar<Real>(decode_field(io::read_file(path)));
}

template <class Real>
VectorField<Real> load_vector(const std::string& path) {
  return to_vector<Real>(decode_field(io::read_file(path)));
}

template <class Real>
DeformationMap<Real> load_map(const std::string& path) {
  return DeformationMap<Real>(load_vector<Real>(path));
}

}  // namespace mforge
