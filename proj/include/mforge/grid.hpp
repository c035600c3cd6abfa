#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mforge/error.hpp"

namespace mforge {

/// Regular periodic grid. Axis 0 is the fastest-varying axis in memory.
struct GridSpec {
  int dim = 2;
  std::array<int, 3> size{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};

  static GridSpec make(std::initializer_list<int> sizes) {
    GridSpec g;
    g.dim = static_cast<int>(sizes.size());
    int a = 0;
    for (int s : sizes) {
      if (a < 3) g.size[a] = s;
      ++a;
    }
    g.validate();
    return g;
  }

  std::size_t voxels() const {
    std::size_t n = 1;
    for (int a = 0; a < dim; ++a) n *= static_cast<std::size_t>(size[a]);
    return n;
  }

  /// Quadrature weight of one voxel.
  double cell_volume() const {
    double w = 1.0;
    for (int a = 0; a < dim; ++a) w *= spacing[a];
    return w;
  }

  std::size_t stride(int axis) const {
    std::size_t s = 1;
    for (int a = 0; a < axis; ++a) s *= static_cast<std::size_t>(size[a]);
    return s;
  }

  void validate() const {
    if (dim != 2 && dim != 3) throw DataError("grid dimension must be 2 or 3");
    for (int a = 0; a < dim; ++a) {
      if (size[a] < 4) throw DataError("grid size must be >= 4 on every axis");
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
        throw DataError("grid spacing must be positive");
    }
    for (int a = dim; a < 3; ++a) {
      if (size[a] != 1) throw DataError("unused grid axes must have size 1");
    }
  }

  std::array<int, 3> coords(std::size_t idx) const {
    std::array<int, 3> c{0, 0, 0};
    c[0] = static_cast<int>(idx % size[0]);
    idx /= size[0];
    c[1] = static_cast<int>(idx % size[1]);
    c[2] = static_cast<int>(idx / size[1]);
    return c;
  }

  std::size_t index(int x, int y, int z = 0) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(size[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(size[1]) * z);
  }

  std::string describe() const {
    std::string s;
    for (int a = 0; a < dim; ++a) {
      if (a) s += "x";
      s += std::to_string(size[a]);
    }
    return s;
  }

  friend bool operator==(const GridSpec& l, const GridSpec& r) {
    if (l.dim != r.dim) return false;
    for (int a = 0; a < 3; ++a) {
      if (l.size[a] != r.size[a] || l.spacing[a] != r.spacing[a]) return false;
    }
    return true;
  }
};

inline int wrap_index(long long i, int n) {
  long long r = i % n;
  return static_cast<int>(r < 0 ? r + n : r);
}

inline void require_same_grid(const GridSpec& a, const GridSpec& b, const char* what) {
  if (!(a == b)) throw DataError(std::string("grid mismatch in ") + what);
}

template <class Real>
class ScalarField {
 public:
  using value_type = Real;

  ScalarField() = default;
  explicit ScalarField(const GridSpec& g, Real fill = Real(0))
      : grid_(g), data_(g.voxels(), fill) {}
  ScalarField(const GridSpec& g, std::vector<Real> data) : grid_(g), data_(std::move(data)) {
    if (data_.size() != grid_.voxels()) throw DataError("field data length does not match grid");
  }

  const GridSpec& grid() const { return grid_; }
  std::size_t size() const { return data_.size(); }
  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::vector<Real>& values() { return data_; }
  const std::vector<Real>& values() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }
  Real& at(int x, int y, int z = 0) { return data_[grid_.index(x, y, z)]; }
  Real at(int x, int y, int z = 0) const { return data_[grid_.index(x, y, z)]; }

  bool all_finite() const {
    for (Real v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <class Other>
  ScalarField<Other> cast() const {
    return ScalarField<Other>(grid_, std::vector<Other>(data_.begin(), data_.end()));
  }

  friend bool operator==(const ScalarField& l, const ScalarField& r) {
    return l.grid_ == r.grid_ && l.data_ == r.data_;
  }

 private:
  GridSpec grid_;
  std::vector<Real> data_;
};

/// d scalar components on one grid (planar layout).
template <class Real>
class VectorField {
 public:
  using value_type = Real;

  VectorField() = default;
  explicit VectorField(const GridSpec& g, Real fill = Real(0)) : grid_(g) {
    comps_.reserve(g.dim);
    for (int a = 0; a < g.dim; ++a) comps_.emplace_back(g, fill);
  }
  explicit VectorField(std::vector<ScalarField<Real>> comps) : comps_(std::move(comps)) {
    if (comps_.empty()) throw DataError("vector field needs at least one component");
    grid_ = comps_.front().grid();
    if (static_cast<int>(comps_.size()) != grid_.dim)
      throw DataError("vector field component count must equal grid dimension");
    for (const auto& c : comps_) require_same_grid(c.grid(), grid_, "vector field components");
  }

  const GridSpec& grid() const { return grid_; }
  int dim() const { return grid_.dim; }
  std::size_t voxels() const { return grid_.voxels(); }

  ScalarField<Real>& operator[](int a) { return comps_[a]; }
  const ScalarField<Real>& operator[](int a) const { return comps_[a]; }

  bool all_finite() const {
    for (const auto& c : comps_)
      if (!c.all_finite()) return false;
    return true;
  }

  template <class Other>
  VectorField<Other> cast() const {
    std::vector<ScalarField<Other>> out;
    for (const auto& c : comps_) out.push_back(c.template cast<Other>());
    return VectorField<Other>(std::move(out));
  }

  friend bool operator==(const VectorField& l, const VectorField& r) {
    return l.grid_ == r.grid_ && l.comps_ == r.comps_;
  }

 private:
  GridSpec grid_;
  std::vector<ScalarField<Real>> comps_;
};

/// Inverse (or forward) map stored as absolute voxel-coordinate positions.
template <class Real>
struct DeformationMap {
  VectorField<Real> map;

  DeformationMap() = default;
  explicit DeformationMap(VectorField<Real> m) : map(std::move(m)) {}

  const GridSpec& grid() const { return map.grid(); }

  static DeformationMap identity(const GridSpec& g) {
    VectorField<Real> m(g);
    const std::size_t n = g.voxels();
    for (std::size_t i = 0; i < n; ++i) {
      auto c = g.coords(i);
      for (int a = 0; a < g.dim; ++a) m[a][i] = static_cast<Real>(c[a]);
    }
    return DeformationMap(std::move(m));
  }

  /// map(x) - x, periodic since the map is a periodic displacement of the identity.
  VectorField<Real> displacement() const {
    const GridSpec& g = grid();
    VectorField<Real> u(g);
    const std::size_t n = g.voxels();
    for (std::size_t i = 0; i < n; ++i) {
      auto c = g.coords(i);
      for (int a = 0; a < g.dim; ++a) u[a][i] = map[a][i] - static_cast<Real>(c[a]);
    }
    return u;
  }

  static DeformationMap from_displacement(const VectorField<Real>& u) {
    DeformationMap m = identity(u.grid());
    const std::size_t n = u.voxels();
    for (int a = 0; a < u.dim(); ++a)
      for (std::size_t i = 0; i < n; ++i) m.map[a][i] += u[a][i];
    return m;
  }

  friend bool operator==(const DeformationMap& l, const DeformationMap& r) { return l.map == r.map; }
};

using Field64 = ScalarField<double>;
using Field32 = ScalarField<float>;
using VField64 = VectorField<double>;
using VField32 = VectorField<float>;

}  // namespace mforge
