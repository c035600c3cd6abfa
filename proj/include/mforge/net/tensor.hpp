#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "mforge/error.hpp"

namespace mforge::net {

/// Dense (batch, channels, spatial...) tensor, row-major with batch slowest.
/// Spatial extents are listed slowest first, so a 2D patch is (N, C, y, x)
/// and matches the axis-0-fastest layout of field patches.
template <class Real>
struct Tensor {
  std::vector<int> shape;
  std::vector<Real> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, Real fill = Real(0)) : shape(std::move(s)) {
    data.assign(count(shape), fill);
  }

  static std::size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  std::size_t size() const { return data.size(); }
  int batch() const { return shape.at(0); }
  int channels() const { return shape.at(1); }
  int spatial_dims() const { return static_cast<int>(shape.size()) - 2; }

  /// Spatial extents padded to three axes (D, H, W); D = 1 for 2D tensors.
  std::array<int, 3> extent3() const {
    std::array<int, 3> e{1, 1, 1};
    const int sd = spatial_dims();
    for (int i = 0; i < sd; ++i) e[3 - sd + i] = shape[2 + i];
    return e;
  }
  std::size_t spatial_size() const {
    std::size_t n = 1;
    for (int i = 2; i < static_cast<int>(shape.size()); ++i) n *= static_cast<std::size_t>(shape[i]);
    return n;
  }

  Real* sample(int n) { return data.data() + static_cast<std::size_t>(n) * channels() * spatial_size(); }
  const Real* sample(int n) const {
    return data.data() + static_cast<std::size_t>(n) * channels() * spatial_size();
  }

  bool all_finite() const {
    for (Real v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <class Other>
  Tensor<Other> cast() const {
    Tensor<Other> t;
    t.shape = shape;
    t.data.assign(data.begin(), data.end());
    return t;
  }

  bool operator==(const Tensor&) const = default;
};

inline std::string shape_string(const std::vector<int>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

/// Joins two tensors with equal batch and spatial shape along channels.
template <class Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.batch() != b.batch() || a.spatial_size() != b.spatial_size() ||
      !std::equal(a.shape.begin() + 2, a.shape.end(), b.shape.begin() + 2, b.shape.end()))
    throw DataError("concat: shape mismatch " + shape_string(a.shape) + " vs " + shape_string(b.shape));
  std::vector<int> s = a.shape;
  s[1] = a.channels() + b.channels();
  Tensor<Real> out(s);
  const std::size_t na = a.channels() * a.spatial_size(), nb = b.channels() * b.spatial_size();
  for (int n = 0; n < a.batch(); ++n) {
    std::copy(a.sample(n), a.sample(n) + na, out.sample(n));
    std::copy(b.sample(n), b.sample(n) + nb, out.sample(n) + na);
  }
  return out;
}

/// Inverse of concat_channels: first `ca` channels into `a`, the rest into `b`.
template <class Real>
void split_channels(const Tensor<Real>& x, int ca, Tensor<Real>& a, Tensor<Real>& b) {
  std::vector<int> sa = x.shape, sb = x.shape;
  sa[1] = ca;
  sb[1] = x.channels() - ca;
  a = Tensor<Real>(sa);
  b = Tensor<Real>(sb);
  const std::size_t na = a.channels() * x.spatial_size(), nb = b.channels() * x.spatial_size();
  for (int n = 0; n < x.batch(); ++n) {
    std::copy(x.sample(n), x.sample(n) + na, a.sample(n));
    std::copy(x.sample(n) + na, x.sample(n) + na + nb, b.sample(n));
  }
}

}  // namespace mforge::net
