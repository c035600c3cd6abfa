#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mforge/net/layers.hpp"

namespace mforge::net {

/// Channel widths of the two-encoder / per-axis-decoder network.
struct NetArch {
  int dim = 2;
  int patch = 15;
  int enc1 = 32;  // first conv and the stride-2 conv
  int enc2 = 64;  // the two convs after downsampling
  int dec1 = 64;  // decoder convs at the coarse level
  int dec2 = 32;  // decoder convs after the deconv
  double dropout = 0.3;

  void validate() const {
    if (dim != 2 && dim != 3) throw UsageError("net dim must be 2 or 3");
    if (patch < 3) throw UsageError("patch size must be >= 3");
    if (enc1 < 1 || enc2 < 1 || dec1 < 1 || dec2 < 1) throw UsageError("channel counts must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("dropout rate must be in [0, 1)");
  }
};

inline std::vector<LayerSpec> encoder_specs(const NetArch& a) {
  return {conv_spec(1, a.enc1),         prelu_spec(a.enc1),          dropout_spec(a.enc1, a.dropout),
          conv_s2_spec(a.enc1, a.enc1), conv_spec(a.enc1, a.enc2),   prelu_spec(a.enc2),
          dropout_spec(a.enc2, a.dropout), conv_spec(a.enc2, a.enc2), prelu_spec(a.enc2),
          dropout_spec(a.enc2, a.dropout)};
}

inline std::vector<LayerSpec> decoder_specs(const NetArch& a) {
  const int in = 2 * a.enc2;
  return {conv_spec(in, a.dec1),          prelu_spec(a.dec1),           dropout_spec(a.dec1, a.dropout),
          conv_spec(a.dec1, a.dec1),      prelu_spec(a.dec1),           dropout_spec(a.dec1, a.dropout),
          deconv_s2_spec(a.dec1, a.dec2), conv_spec(a.dec2, a.dec2),    prelu_spec(a.dec2),
          dropout_spec(a.dec2, a.dropout), conv_spec(a.dec2, 1)};
}

/// Canonical text form; stored in checkpoints and compared on load.
inline std::string arch_descriptor(const NetArch& a) {
  auto join = [](const std::vector<LayerSpec>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i].descriptor();
    return s;
  };
  std::string s = "momentum-net/1;dim=" + std::to_string(a.dim) + ";patch=" + std::to_string(a.patch);
  s += ";encoder_A=" + join(encoder_specs(a));
  s += ";encoder_B=" + join(encoder_specs(a));
  s += ";concat(" + std::to_string(2 * a.enc2) + ")";
  for (int d = 0; d < a.dim; ++d) s += ";decoder_" + std::to_string(d) + "=" + join(decoder_specs(a));
  return s;
}

inline int count_params(const std::vector<LayerSpec>& specs, int dim) {
  const int taps = dim == 3 ? 27 : 9;
  int n = 0;
  for (const auto& s : specs) {
    if (s.has_weights()) n += s.in_channels * s.out_channels * taps + s.out_channels;
    if (s.kind == LayerKind::prelu) n += s.out_channels;
  }
  return n;
}

/// Parameter count of the network as built by NetModel.
inline int param_count(const NetArch& a) {
  return 2 * count_params(encoder_specs(a), a.dim) + a.dim * count_params(decoder_specs(a), a.dim);
}

/// Single encoder fed both patches as two input channels, widened so the
/// features at the concat interface have the same channel count.
inline int single_encoder_param_count(const NetArch& a) {
  NetArch w = a;
  w.enc1 = 2 * a.enc1;
  w.enc2 = 2 * a.enc2;
  auto enc = encoder_specs(w);
  enc[0] = conv_spec(2, w.enc1);
  return count_params(enc, a.dim) + a.dim * count_params(decoder_specs(a), a.dim);
}

template <class Real>
class NetModel {
 public:
  explicit NetModel(const NetArch& arch, std::uint64_t init_seed = 0) : arch_(arch) {
    arch.validate();
    build(encoder_A_, encoder_specs(arch), "encoder_A");
    build(encoder_B_, encoder_specs(arch), "encoder_B");
    decoders_.resize(arch.dim);
    for (int d = 0; d < arch.dim; ++d) build(decoders_[d], decoder_specs(arch), "decoder_" + std::to_string(d));
    Rng rng(init_seed);
    for_each_layer([&](Layer<Real>& l) { l.init(rng); });
  }

  const NetArch& arch() const { return arch_; }
  std::string descriptor() const { return arch_descriptor(arch_); }

  std::vector<Layer<Real>>& encoder_A() { return encoder_A_; }
  std::vector<Layer<Real>>& encoder_B() { return encoder_B_; }
  std::vector<Layer<Real>>& decoder(int d) { return decoders_.at(d); }

  /// All parameters in canonical order: encoder_A, encoder_B, decoders.
  std::vector<Param<Real>*> parameters() {
    std::vector<Param<Real>*> out;
    for_each_layer([&](Layer<Real>& l) {
      for (auto& p : l.params()) out.push_back(&p);
    });
    return out;
  }
  std::vector<const Param<Real>*> parameters() const {
    std::vector<const Param<Real>*> out;
    const_cast<NetModel*>(this)->for_each_layer([&](Layer<Real>& l) {
      for (auto& p : l.params()) out.push_back(&p);
    });
    return out;
  }

  void zero_grad() {
    for_each_layer([](Layer<Real>& l) { l.zero_grad(); });
  }

  void set_dropout_rate(double r) {
    for_each_layer([&](Layer<Real>& l) { l.set_rate(r); });
    arch_.dropout = r;
  }

  /// Zeroes the last conv of every decoder so the output is identically zero.
  void zero_heads() {
    for (auto& dec : decoders_)
      for (auto& p : dec.back().params()) std::fill(p.value.begin(), p.value.end(), Real(0));
  }

  /// moving/target: (N, 1, patch...) tensors. Returns one (N, 1, patch...) tensor per axis.
  /// Dropout masks come from a stream seeded by `mask_seed` (unused in eval mode).
  std::vector<Tensor<Real>> forward(const Tensor<Real>& moving, const Tensor<Real>& target, Mode mode,
                                    std::uint64_t mask_seed = 0) {
    if (moving.shape != target.shape)
      throw DataError("forward: moving " + shape_string(moving.shape) + " and target " + shape_string(target.shape) +
                      " differ");
    if (moving.spatial_dims() != arch_.dim || moving.channels() != 1)
      throw DataError("forward: expected (N, 1, patch x" + std::to_string(arch_.dim) + ") input, got " +
                      shape_string(moving.shape));
    for (int a = 0; a < arch_.dim; ++a)
      if (moving.shape[2 + a] != arch_.patch)
        throw DataError("forward: patch extent " + shape_string(moving.shape) + " does not match model patch " +
                        std::to_string(arch_.patch));
    Rng rng(mask_seed);
    Rng* r = mode == Mode::eval ? nullptr : &rng;
    const std::array<int, 3> ext = moving.extent3();
    const Tensor<Real> fa = run(encoder_A_, moving, mode, r, ext);
    const Tensor<Real> fb = run(encoder_B_, target, mode, r, ext);
    feat_channels_ = fa.channels();
    const Tensor<Real> feat = concat_channels(fa, fb);
    std::vector<Tensor<Real>> out;
    for (auto& dec : decoders_) out.push_back(run(dec, feat, mode, r, ext));
    return out;
  }

  /// Accumulates parameter gradients for d loss / d outputs of the last forward.
  void backward(const std::vector<Tensor<Real>>& grad_out) {
    if (grad_out.size() != decoders_.size()) throw DataError("backward: need one gradient per decoder");
    Tensor<Real> gfeat;
    for (std::size_t d = 0; d < decoders_.size(); ++d) {
      Tensor<Real> g = back(decoders_[d], grad_out[d]);
      if (d == 0) {
        gfeat = std::move(g);
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) gfeat.data[i] += g.data[i];
      }
    }
    Tensor<Real> ga, gb;
    split_channels(gfeat, feat_channels_, ga, gb);
    back(encoder_A_, ga);
    back(encoder_B_, gb);
  }

  /// Encoder outputs of the last forward, for inspection.
  const Tensor<Real>& last_encoder_A_output() const { return last_a_; }
  const Tensor<Real>& last_encoder_B_output() const { return last_b_; }

  template <class F>
  void for_each_layer(F&& f) {
    for (auto& l : encoder_A_) f(l);
    for (auto& l : encoder_B_) f(l);
    for (auto& dec : decoders_)
      for (auto& l : dec) f(l);
  }

  /// Training metadata stored with checkpoints (e.g. target scaling).
  std::map<std::string, double> meta;

 private:
  void build(std::vector<Layer<Real>>& seq, const std::vector<LayerSpec>& specs, const std::string& prefix) {
    for (std::size_t i = 0; i < specs.size(); ++i)
      seq.emplace_back(specs[i], arch_.dim, prefix + "." + std::to_string(i));
  }

  Tensor<Real> run(std::vector<Layer<Real>>& seq, const Tensor<Real>& x, Mode mode, Rng* rng,
                   const std::array<int, 3>& ext) {
    Tensor<Real> h = x;
    for (auto& l : seq) {
      h = l.forward(h, mode, rng, &ext);
#ifndef NDEBUG
      if (!h.all_finite()) throw NumericalError("non-finite activation after layer " + l.name());
#endif
    }
    if (&seq == &encoder_A_) last_a_ = h;
    if (&seq == &encoder_B_) last_b_ = h;
    return h;
  }

  static Tensor<Real> back(std::vector<Layer<Real>>& seq, const Tensor<Real>& g) {
    Tensor<Real> h = g;
    for (auto it = seq.rbegin(); it != seq.rend(); ++it) h = it->backward(h);
    return h;
  }

  NetArch arch_;
  std::vector<Layer<Real>> encoder_A_, encoder_B_;
  std::vector<std::vector<Layer<Real>>> decoders_;
  int feat_channels_ = 0;
  Tensor<Real> last_a_, last_b_;
};

/// Copies parameter values (and meta) between models of the same architecture,
/// e.g. float training weights into a double model.
template <class Dst, class Src>
void copy_parameters(NetModel<Dst>& dst, const NetModel<Src>& src) {
  if (dst.descriptor() != src.descriptor()) throw DataError("architecture mismatch");
  auto d = dst.parameters();
  auto s = src.parameters();
  for (std::size_t i = 0; i < d.size(); ++i) d[i]->value.assign(s[i]->value.begin(), s[i]->value.end());
  dst.meta = src.meta;
}

template <class Real>
struct LossResult {
  double loss = 0.0;
  std::vector<Tensor<Real>> grad;
};

/// Mean absolute error over all entries of all components; gradient sign(diff)/N, sign(0) = 0.
template <class Real>
LossResult<Real> l1_loss(const std::vector<Tensor<Real>>& pred, const std::vector<Tensor<Real>>& truth) {
  if (pred.size() != truth.size()) throw DataError("l1_loss: component count mismatch");
  std::size_t n = 0;
  for (std::size_t c = 0; c < pred.size(); ++c) {
    if (pred[c].shape != truth[c].shape)
      throw DataError("l1_loss: shape " + shape_string(pred[c].shape) + " vs " + shape_string(truth[c].shape));
    n += pred[c].size();
  }
  if (n == 0) throw DataError("l1_loss: empty input");
  LossResult<Real> r;
  double acc = 0.0;
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t c = 0; c < pred.size(); ++c) {
    Tensor<Real> g(pred[c].shape);
    for (std::size_t i = 0; i < pred[c].size(); ++i) {
      const double d = static_cast<double>(pred[c].data[i]) - static_cast<double>(truth[c].data[i]);
      acc += std::abs(d);
      g.data[i] = static_cast<Real>(d > 0 ? inv : (d < 0 ? -inv : 0.0));
    }
    r.grad.push_back(std::move(g));
  }
  r.loss = acc * inv;
  return r;
}

}  // namespace mforge::net
