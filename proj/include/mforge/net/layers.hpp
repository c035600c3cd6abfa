#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mforge/net/tensor.hpp"
#include "mforge/random.hpp"

namespace mforge::net {

enum class LayerKind { conv, conv_stride2, deconv_stride2, prelu, dropout, concat };
enum class Mode { train, eval, mc_dropout };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::conv_stride2: return "conv_s2";
    case LayerKind::deconv_stride2: return "deconv_s2";
    case LayerKind::prelu: return "prelu";
    case LayerKind::dropout: return "dropout";
    case LayerKind::concat: return "concat";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int in_channels = 0;
  int out_channels = 0;
  double rate = 0.0;

  bool has_weights() const {
    return kind == LayerKind::conv || kind == LayerKind::conv_stride2 || kind == LayerKind::deconv_stride2;
  }

  std::string descriptor() const {
    std::string s = to_string(kind);
    if (kind == LayerKind::dropout) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "(%.6g)", rate);
      return s + buf;
    }
    if (kind == LayerKind::prelu) return s + "(" + std::to_string(out_channels) + ")";
    return s + "(" + std::to_string(in_channels) + "," + std::to_string(out_channels) + ")";
  }
};

inline LayerSpec conv_spec(int in, int out) { return {LayerKind::conv, in, out, 0.0}; }
inline LayerSpec conv_s2_spec(int in, int out) { return {LayerKind::conv_stride2, in, out, 0.0}; }
inline LayerSpec deconv_s2_spec(int in, int out) { return {LayerKind::deconv_stride2, in, out, 0.0}; }
inline LayerSpec prelu_spec(int ch) { return {LayerKind::prelu, ch, ch, 0.0}; }
inline LayerSpec dropout_spec(int ch, double rate) { return {LayerKind::dropout, ch, ch, rate}; }

template <class Real>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<Real> value;
  std::vector<Real> grad;
};

/// Geometry of a 3-per-axis, padding-1 convolution between an image of
/// extent `in` and a lattice of extent `out` (all padded to three axes).
struct ConvGeom {
  std::array<int, 3> in{1, 1, 1}, out{1, 1, 1}, k{1, 1, 1}, stride{1, 1, 1}, pad{0, 0, 0};
  int channels = 0;

  std::size_t in_size() const { return static_cast<std::size_t>(in[0]) * in[1] * in[2]; }
  std::size_t out_size() const { return static_cast<std::size_t>(out[0]) * out[1] * out[2]; }
  std::size_t rows() const { return static_cast<std::size_t>(channels) * k[0] * k[1] * k[2]; }
};

inline ConvGeom make_geom(const std::array<int, 3>& in, int spatial_dims, int channels, int s) {
  ConvGeom g;
  g.in = in;
  g.channels = channels;
  for (int a = 3 - spatial_dims; a < 3; ++a) {
    g.k[a] = 3;
    g.stride[a] = s;
    g.pad[a] = 1;
  }
  for (int a = 0; a < 3; ++a) g.out[a] = (in[a] + 2 * g.pad[a] - g.k[a]) / g.stride[a] + 1;
  return g;
}

/// Range [lo, hi) of output positions whose tap k lands inside [0, n) along one axis.
inline std::pair<int, int> valid_taps(int out, int n, int stride, int pad, int k) {
  int lo = 0;
  while (lo < out && lo * stride - pad + k < 0) ++lo;
  int hi = out;
  while (hi > lo && (hi - 1) * stride - pad + k >= n) --hi;
  return {lo, hi};
}

/// Unfolds one sample (channels x in) into columns [offset, offset + out_size) of a
/// rows() x ld row-major buffer.
template <class Real>
void im2col(const Real* img, const ConvGeom& g, Real* col, std::size_t ld, std::size_t offset) {
  std::size_t r = 0;
  const int sx = g.stride[2], ow = g.out[2];
  for (int c = 0; c < g.channels; ++c)
    for (int kz = 0; kz < g.k[0]; ++kz)
      for (int ky = 0; ky < g.k[1]; ++ky)
        for (int kx = 0; kx < g.k[2]; ++kx, ++r) {
          Real* dst = col + r * ld + offset;
          const Real* src = img + static_cast<std::size_t>(c) * g.in_size();
          const auto [lo, hi] = valid_taps(ow, g.in[2], sx, g.pad[2], kx);
          for (int oz = 0; oz < g.out[0]; ++oz) {
            const int iz = oz * g.stride[0] - g.pad[0] + kz;
            for (int oy = 0; oy < g.out[1]; ++oy, dst += ow) {
              const int iy = oy * g.stride[1] - g.pad[1] + ky;
              if (iz < 0 || iz >= g.in[0] || iy < 0 || iy >= g.in[1]) {
                std::fill(dst, dst + ow, Real(0));
                continue;
              }
              const Real* srow = src + (static_cast<std::size_t>(iz) * g.in[1] + iy) * g.in[2];
              const int off = kx - g.pad[2];
              std::fill(dst, dst + lo, Real(0));
              if (sx == 1)
                std::copy(srow + lo + off, srow + hi + off, dst + lo);
              else
                for (int ox = lo; ox < hi; ++ox) dst[ox] = srow[ox * sx + off];
              std::fill(dst + hi, dst + ow, Real(0));
            }
          }
        }
}

/// Adjoint of im2col: scatters columns back and accumulates into img.
template <class Real>
void col2im(const Real* col, std::size_t ld, std::size_t offset, const ConvGeom& g, Real* img) {
  std::size_t r = 0;
  const int sx = g.stride[2], ow = g.out[2];
  for (int c = 0; c < g.channels; ++c)
    for (int kz = 0; kz < g.k[0]; ++kz)
      for (int ky = 0; ky < g.k[1]; ++ky)
        for (int kx = 0; kx < g.k[2]; ++kx, ++r) {
          const Real* src = col + r * ld + offset;
          Real* dst = img + static_cast<std::size_t>(c) * g.in_size();
          const auto [lo, hi] = valid_taps(ow, g.in[2], sx, g.pad[2], kx);
          for (int oz = 0; oz < g.out[0]; ++oz) {
            const int iz = oz * g.stride[0] - g.pad[0] + kz;
            for (int oy = 0; oy < g.out[1]; ++oy, src += ow) {
              const int iy = oy * g.stride[1] - g.pad[1] + ky;
              if (iz < 0 || iz >= g.in[0] || iy < 0 || iy >= g.in[1]) continue;
              Real* drow = dst + (static_cast<std::size_t>(iz) * g.in[1] + iy) * g.in[2];
              const int off = kx - g.pad[2];
              for (int ox = lo; ox < hi; ++ox) drow[ox * sx + off] += src[ox];
            }
          }
        }
}

/// One layer with its parameters and the activations cached by the last
/// forward call for backward.
template <class Real>
class Layer {
 public:
  using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<Mat>;
  using CMapM = Eigen::Map<const Mat>;

  Layer(LayerSpec spec, int spatial_dims, std::string name)
      : spec_(spec), dims_(spatial_dims), name_(std::move(name)) {
    if (spatial_dims != 2 && spatial_dims != 3) throw UsageError("layer spatial dims must be 2 or 3");
    if (spec.kind == LayerKind::dropout && !(spec.rate >= 0.0 && spec.rate < 1.0))
      throw UsageError("dropout rate must be in [0, 1)");
    if (spec.kind == LayerKind::concat) throw UsageError("concat is a model-level join, not a layer");
    const int taps = dims_ == 3 ? 27 : 9;
    if (spec.has_weights()) {
      std::vector<int> wshape = spec.kind == LayerKind::deconv_stride2
                                    ? std::vector<int>{spec.in_channels, spec.out_channels}
                                    : std::vector<int>{spec.out_channels, spec.in_channels};
      for (int a = 0; a < dims_; ++a) wshape.push_back(3);
      add_param(name_ + ".weight", wshape, static_cast<std::size_t>(spec.in_channels) * spec.out_channels * taps);
      add_param(name_ + ".bias", {spec.out_channels}, spec.out_channels);
    } else if (spec.kind == LayerKind::prelu) {
      add_param(name_ + ".slope", {spec.out_channels}, spec.out_channels);
      std::fill(params_[0].value.begin(), params_[0].value.end(), Real(0.25));
    }
  }

  const LayerSpec& spec() const { return spec_; }
  const std::string& name() const { return name_; }
  std::vector<Param<Real>>& params() { return params_; }
  const std::vector<Param<Real>>& params() const { return params_; }

  void set_rate(double r) {
    if (spec_.kind != LayerKind::dropout) return;
    if (!(r >= 0.0 && r < 1.0)) throw UsageError("dropout rate must be in [0, 1)");
    spec_.rate = r;
  }

  /// Fan-in scaled uniform weights (He bound for PReLU at slope 0.25), zero bias.
  void init(Rng& rng) {
    if (!spec_.has_weights()) return;
    const int taps = dims_ == 3 ? 27 : 9;
    const double fan_in = spec_.in_channels * taps;
    const double bound = std::sqrt(6.0 / ((1.0 + 0.25 * 0.25) * fan_in));
    for (auto& w : params_[0].value) w = static_cast<Real>(rng.uniform(-bound, bound));
    std::fill(params_[1].value.begin(), params_[1].value.end(), Real(0));
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), Real(0));
  }

  /// `out_extent` is required by deconv_stride2 (the extent to restore) and ignored otherwise.
  Tensor<Real> forward(const Tensor<Real>& x, Mode mode, Rng* rng, const std::array<int, 3>* out_extent = nullptr) {
    check_input(x);
    cached_ = true;
    in_shape_ = x.shape;
    switch (spec_.kind) {
      case LayerKind::conv: return conv_forward(x, 1);
      case LayerKind::conv_stride2: return conv_forward(x, 2);
      case LayerKind::deconv_stride2:
        if (!out_extent) throw UsageError("layer " + name_ + ": deconv needs an output extent");
        return deconv_forward(x, *out_extent);
      case LayerKind::prelu: return prelu_forward(x);
      case LayerKind::dropout: return dropout_forward(x, mode, rng);
      case LayerKind::concat: break;
    }
    throw UsageError("layer " + name_ + ": unsupported kind");
  }

  /// Returns d loss / d input and accumulates parameter gradients.
  Tensor<Real> backward(const Tensor<Real>& g) {
    if (!cached_) throw UsageError("layer " + name_ + ": backward without cached forward");
    if (g.shape != out_shape_)
      throw DataError("layer " + name_ + ": gradient shape " + shape_string(g.shape) + " does not match output " +
                      shape_string(out_shape_));
    switch (spec_.kind) {
      case LayerKind::conv:
      case LayerKind::conv_stride2: return conv_backward(g);
      case LayerKind::deconv_stride2: return deconv_backward(g);
      case LayerKind::prelu: return prelu_backward(g);
      case LayerKind::dropout: return dropout_backward(g);
      case LayerKind::concat: break;
    }
    throw UsageError("layer " + name_ + ": unsupported kind");
  }

  void clear_cache() {
    cached_ = false;
    input_ = Tensor<Real>();
    mask_.clear();
    mask_.shrink_to_fit();
    col_.clear();
    col_.shrink_to_fit();
    scratch_.clear();
    scratch_.shrink_to_fit();
  }

 private:
  void add_param(std::string name, std::vector<int> shape, std::size_t n) {
    params_.push_back({std::move(name), std::move(shape), std::vector<Real>(n, Real(0)), std::vector<Real>(n, Real(0))});
  }

  void check_input(const Tensor<Real>& x) const {
    if (x.spatial_dims() != dims_)
      throw DataError("layer " + name_ + " (" + to_string(spec_.kind) + "): expected " + std::to_string(dims_) +
                      " spatial dims, got input " + shape_string(x.shape));
    if (x.channels() != spec_.in_channels)
      throw DataError("layer " + name_ + " (" + to_string(spec_.kind) + "): expected " +
                      std::to_string(spec_.in_channels) + " input channels, got " + std::to_string(x.channels()));
  }

  std::vector<int> shape_with(int batch, int ch, const std::array<int, 3>& ext) const {
    std::vector<int> s{batch, ch};
    for (int a = 3 - dims_; a < 3; ++a) s.push_back(ext[a]);
    return s;
  }

  // x (N, C, P) -> C x (N P) matrix buffer
  // Reused work buffer; callers overwrite every entry, so growth is the only fill.
  std::vector<Real>& scratch(std::size_t n) {
    scratch_.resize(n);
    return scratch_;
  }

  static std::vector<Real> to_cols(const Tensor<Real>& x) {
    const int N = x.batch(), C = x.channels();
    const std::size_t P = x.spatial_size(), NP = N * P;
    std::vector<Real> m(static_cast<std::size_t>(C) * NP);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        std::copy(x.sample(n) + c * P, x.sample(n) + (c + 1) * P, m.data() + c * NP + n * P);
    return m;
  }

  static void from_cols(const std::vector<Real>& m, Tensor<Real>& y) {
    const int N = y.batch(), C = y.channels();
    const std::size_t P = y.spatial_size(), NP = N * P;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        std::copy(m.data() + c * NP + n * P, m.data() + c * NP + (n + 1) * P, y.sample(n) + c * P);
  }

  Tensor<Real> conv_forward(const Tensor<Real>& x, int stride) {
    const int N = x.batch();
    geom_ = make_geom(x.extent3(), dims_, spec_.in_channels, stride);
    const std::size_t P = geom_.out_size(), NP = N * P, K = geom_.rows();
    col_.resize(K * NP);
    for (int n = 0; n < N; ++n) im2col(x.sample(n), geom_, col_.data(), NP, n * P);
    std::vector<Real> y(static_cast<std::size_t>(spec_.out_channels) * NP);
    MapM Y(y.data(), spec_.out_channels, NP);
    Y.noalias() = CMapM(params_[0].value.data(), spec_.out_channels, K) * CMapM(col_.data(), K, NP);
    for (int co = 0; co < spec_.out_channels; ++co) Y.row(co).array() += params_[1].value[co];
    Tensor<Real> out(shape_with(N, spec_.out_channels, geom_.out));
    from_cols(y, out);
    out_shape_ = out.shape;
    return out;
  }

  Tensor<Real> conv_backward(const Tensor<Real>& g) {
    const int N = g.batch();
    const std::size_t P = geom_.out_size(), NP = N * P, K = geom_.rows();
    const std::vector<Real> gm = to_cols(g);
    CMapM G(gm.data(), spec_.out_channels, NP);
    CMapM Col(col_.data(), K, NP);
    MapM(params_[0].grad.data(), spec_.out_channels, K).noalias() += G * Col.transpose();
    // plain loops: Eigen reductions peel by address, which makes the sum order allocation dependent
    for (int co = 0; co < spec_.out_channels; ++co) {
      const Real* gr = gm.data() + co * NP;
      Real s = 0;
      for (std::size_t i = 0; i < NP; ++i) s += gr[i];
      params_[1].grad[co] += s;
    }
    std::vector<Real>& dcol = scratch(K * NP);
    MapM(dcol.data(), K, NP).noalias() = CMapM(params_[0].value.data(), spec_.out_channels, K).transpose() * G;
    Tensor<Real> dx(in_shape_);
    for (int n = 0; n < N; ++n) col2im(dcol.data(), NP, n * P, geom_, dx.sample(n));
    return dx;
  }

  // Transposed counterpart of conv_stride2: geometry maps the restored extent
  // (image side) to the input lattice.
  Tensor<Real> deconv_forward(const Tensor<Real>& x, const std::array<int, 3>& out_extent) {
    const int N = x.batch();
    geom_ = make_geom(out_extent, dims_, spec_.out_channels, 2);
    if (geom_.out != x.extent3())
      throw DataError("layer " + name_ + " (deconv_s2): input " + shape_string(x.shape) +
                      " is not the stride-2 image of the requested output extent");
    const std::size_t P = geom_.out_size(), NP = N * P, K = geom_.rows();
    col_ = to_cols(x);  // Cin x NP
    std::vector<Real>& cols = scratch(K * NP);
    MapM(cols.data(), K, NP).noalias() =
        CMapM(params_[0].value.data(), spec_.in_channels, K).transpose() * CMapM(col_.data(), spec_.in_channels, NP);
    Tensor<Real> out(shape_with(N, spec_.out_channels, out_extent));
    for (int n = 0; n < N; ++n) col2im(cols.data(), NP, n * P, geom_, out.sample(n));
    const std::size_t Q = out.spatial_size();
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < spec_.out_channels; ++co) {
        Real* o = out.sample(n) + co * Q;
        for (std::size_t q = 0; q < Q; ++q) o[q] += params_[1].value[co];
      }
    out_shape_ = out.shape;
    return out;
  }

  Tensor<Real> deconv_backward(const Tensor<Real>& g) {
    const int N = g.batch();
    const std::size_t P = geom_.out_size(), NP = N * P, K = geom_.rows();
    std::vector<Real>& gcol = scratch(K * NP);
    for (int n = 0; n < N; ++n) im2col(g.sample(n), geom_, gcol.data(), NP, n * P);
    CMapM Gc(gcol.data(), K, NP);
    CMapM X(col_.data(), spec_.in_channels, NP);
    MapM(params_[0].grad.data(), spec_.in_channels, K).noalias() += X * Gc.transpose();
    const std::size_t Q = g.spatial_size();
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < spec_.out_channels; ++co) {
        const Real* gp = g.sample(n) + co * Q;
        Real s = 0;
        for (std::size_t q = 0; q < Q; ++q) s += gp[q];
        params_[1].grad[co] += s;
      }
    std::vector<Real> dxm(static_cast<std::size_t>(spec_.in_channels) * NP);
    MapM(dxm.data(), spec_.in_channels, NP).noalias() = CMapM(params_[0].value.data(), spec_.in_channels, K) * Gc;
    Tensor<Real> dx(in_shape_);
    from_cols(dxm, dx);
    return dx;
  }

  Tensor<Real> prelu_forward(const Tensor<Real>& x) {
    input_ = x;
    Tensor<Real> out = x;
    const std::size_t P = x.spatial_size();
    for (int n = 0; n < x.batch(); ++n)
      for (int c = 0; c < x.channels(); ++c) {
        const Real a = params_[0].value[c];
        Real* o = out.sample(n) + c * P;
        for (std::size_t p = 0; p < P; ++p)
          if (!(o[p] > 0)) o[p] *= a;
      }
    out_shape_ = out.shape;
    return out;
  }

  Tensor<Real> prelu_backward(const Tensor<Real>& g) {
    Tensor<Real> dx = g;
    const std::size_t P = g.spatial_size();
    for (int n = 0; n < g.batch(); ++n)
      for (int c = 0; c < g.channels(); ++c) {
        const Real a = params_[0].value[c];
        const Real* xi = input_.sample(n) + c * P;
        Real* d = dx.sample(n) + c * P;
        Real ga = 0;
        for (std::size_t p = 0; p < P; ++p)
          if (!(xi[p] > 0)) {
            ga += d[p] * xi[p];
            d[p] *= a;
          }
        params_[0].grad[c] += ga;
      }
    return dx;
  }

  Tensor<Real> dropout_forward(const Tensor<Real>& x, Mode mode, Rng* rng) {
    out_shape_ = x.shape;
    mask_.clear();
    if (mode == Mode::eval || spec_.rate == 0.0) return x;
    if (!rng) throw UsageError("layer " + name_ + ": dropout in " + std::string(mode == Mode::train ? "train" : "mc_dropout") +
                               " mode needs a mask stream");
    const Real keep = static_cast<Real>(1.0 / (1.0 - spec_.rate));
    mask_.resize(x.size());
    Tensor<Real> out = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask_[i] = rng->uniform() < spec_.rate ? Real(0) : keep;
      out.data[i] *= mask_[i];
    }
    return out;
  }

  Tensor<Real> dropout_backward(const Tensor<Real>& g) {
    if (mask_.empty()) return g;
    Tensor<Real> dx = g;
    for (std::size_t i = 0; i < g.size(); ++i) dx.data[i] *= mask_[i];
    return dx;
  }

  LayerSpec spec_;
  int dims_;
  std::string name_;
  std::vector<Param<Real>> params_;

  bool cached_ = false;
  std::vector<int> in_shape_, out_shape_;
  ConvGeom geom_;
  std::vector<Real> col_;
  std::vector<Real> scratch_;
  Tensor<Real> input_;
  std::vector<Real> mask_;
};

}  // namespace mforge::net
