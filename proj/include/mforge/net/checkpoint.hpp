#pragma once

// MMNC checkpoints:
//   "MMNC" | u16 version=1 | string arch_descriptor
//   | u32 n | n x param block | u32 n | n x rmsprop block | u64 steps | u32 n | n x (string key, f64 value)
// block = string name | u8 dtype (0 f32, 1 f64) | u8 rank | u32 extents x rank | little-endian data
// Strings are u32 length-prefixed UTF-8.

#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "mforge/field_io.hpp"
#include "mforge/net/train.hpp"

namespace mforge::net {

namespace ckpt_detail {

template <class Real>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<Real, float> ? 0 : 1;
}

template <class Real>
void put_block(io::ByteWriter& w, const std::string& name, const std::vector<int>& shape,
               const std::vector<Real>& data) {
  w.put_string(name);
  w.put<std::uint8_t>(dtype_code<Real>());
  w.put<std::uint8_t>(static_cast<std::uint8_t>(shape.size()));
  for (int e : shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(e));
  w.put_bytes(data.data(), data.size() * sizeof(Real));
}

template <class Real>
void get_block(io::ByteReader& r, const std::string& name, const std::vector<int>& shape, std::vector<Real>& data) {
  const std::string got = r.get_string(4096);
  if (got != name) throw DataError("checkpoint block '" + got + "' where '" + name + "' was expected");
  if (r.get<std::uint8_t>() != dtype_code<Real>()) throw DataError("checkpoint dtype mismatch in " + name);
  const auto rank = r.get<std::uint8_t>();
  if (rank != shape.size()) throw DataError("checkpoint rank mismatch in " + name);
  for (int e : shape)
    if (r.get<std::uint32_t>() != static_cast<std::uint32_t>(e)) throw DataError("checkpoint shape mismatch in " + name);
  r.get_bytes(data.data(), data.size() * sizeof(Real));
}

}  // namespace ckpt_detail

template <class Real>
std::vector<unsigned char> encode_checkpoint(const NetModel<Real>& model, const RmsPropState<Real>* opt = nullptr) {
  io::ByteWriter w;
  w.put_bytes("MMNC", 4);
  w.put<std::uint16_t>(1);
  w.put_string(model.descriptor());
  const auto params = model.parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) ckpt_detail::put_block(w, p->name, p->shape, p->value);
  const bool has_opt = opt && opt->ms.size() == params.size();
  w.put<std::uint32_t>(has_opt ? static_cast<std::uint32_t>(params.size()) : 0u);
  if (has_opt)
    for (std::size_t k = 0; k < params.size(); ++k)
      ckpt_detail::put_block(w, params[k]->name + ".ms", params[k]->shape, opt->ms[k]);
  w.put<std::uint64_t>(has_opt ? opt->steps : 0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.meta.size()));
  for (const auto& [k, v] : model.meta) {
    w.put_string(k);
    w.put<double>(v);
  }
  return w.bytes();
}

/// Fills `model` (built with the expected architecture) from checkpoint bytes.
template <class Real>
void decode_checkpoint(const std::vector<unsigned char>& bytes, NetModel<Real>& model,
                       RmsPropState<Real>* opt = nullptr) {
  io::ByteReader r(bytes);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::string(magic, 4) != "MMNC") throw DataError("not an MMNC checkpoint");
  if (r.get<std::uint16_t>() != 1) throw DataError("unsupported MMNC version");
  const std::string desc = r.get_string();
  if (desc != model.descriptor()) throw DataError("architecture mismatch");
  auto params = model.parameters();
  if (r.get<std::uint32_t>() != params.size()) throw DataError("checkpoint parameter count mismatch");
  for (auto* p : params) ckpt_detail::get_block(r, p->name, p->shape, p->value);
  const auto nopt = r.get<std::uint32_t>();
  if (nopt != 0 && nopt != params.size()) throw DataError("checkpoint optimizer block count mismatch");
  RmsPropState<Real> st;
  for (std::size_t k = 0; k < nopt; ++k) {
    st.ms.emplace_back(params[k]->value.size());
    ckpt_detail::get_block(r, params[k]->name + ".ms", params[k]->shape, st.ms.back());
  }
  st.steps = r.get<std::uint64_t>();
  const auto nmeta = r.get<std::uint32_t>();
  model.meta.clear();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    const std::string k = r.get_string(4096);
    model.meta[k] = r.get<double>();
  }
  if (!r.at_end()) throw DataError("trailing bytes in checkpoint");
  if (opt) *opt = std::move(st);
}

/// Architecture stored in a checkpoint, recovered from its descriptor.
inline NetArch checkpoint_arch(const std::vector<unsigned char>& bytes) {
  io::ByteReader r(bytes);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::string(magic, 4) != "MMNC") throw DataError("not an MMNC checkpoint");
  if (r.get<std::uint16_t>() != 1) throw DataError("unsupported MMNC version");
  const std::string desc = r.get_string();
  // widths are read back from the layer list and the result re-verified
  auto field = [&](const std::string& key) -> std::string {
    const auto p = desc.find(key);
    if (p == std::string::npos) throw DataError("malformed architecture descriptor");
    const auto e = desc.find_first_of(";,)", p + key.size());
    return desc.substr(p + key.size(), e - p - key.size());
  };
  NetArch a;
  try {
    a.dim = std::stoi(field("dim="));
    a.patch = std::stoi(field("patch="));
    a.enc1 = std::stoi(field("encoder_A=conv(1,"));
    a.enc2 = std::stoi(field("),conv(" + std::to_string(a.enc1) + ","));
    a.dec1 = std::stoi(field("decoder_0=conv(" + std::to_string(2 * a.enc2) + ","));
    a.dec2 = std::stoi(field("deconv_s2(" + std::to_string(a.dec1) + ","));
    a.dropout = std::stod(field("dropout("));
  } catch (const std::logic_error&) {
    throw DataError("malformed architecture descriptor");
  }
  if (arch_descriptor(a) != desc) throw DataError("architecture mismatch");
  return a;
}

template <class Real>
void save_model(const std::string& path, const NetModel<Real>& model, const RmsPropState<Real>* opt = nullptr) {
  io::write_file(path, encode_checkpoint(model, opt));
}

template <class Real>
NetModel<Real> load_model(const std::string& path, RmsPropState<Real>* opt = nullptr) {
  const auto bytes = io::read_file(path);
  NetModel<Real> model(checkpoint_arch(bytes));
  decode_checkpoint(bytes, model, opt);
  return model;
}

/// Loads into a model of a fixed expected architecture; a different descriptor
/// is rejected with "architecture mismatch".
template <class Real>
void load_model_into(const std::string& path, NetModel<Real>& model, RmsPropState<Real>* opt = nullptr) {
  decode_checkpoint(io::read_file(path), model, opt);
}

}  // namespace mforge::net
