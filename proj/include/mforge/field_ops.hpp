#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "mforge/grid.hpp"

namespace mforge {

namespace detail {

struct AxisStencil {
  int lo = 0;
  int hi = 0;
  double t = 0.0;
};

inline AxisStencil axis_stencil(double p, int n) {
  const double fl = std::floor(p);
  AxisStencil s;
  s.t = p - fl;
  const long long i = static_cast<long long>(fl);
  s.lo = wrap_index(i, n);
  s.hi = wrap_index(i + 1, n);
  return s;
}

inline void check_position(const double* p, int dim) {
  for (int a = 0; a < dim; ++a)
    if (!std::isfinite(p[a])) throw DataError("non-finite query position");
}

}  // namespace detail

/// Periodic multilinear interpolation at a position in voxel coordinates.
template <class Real>
Real interpolate(const ScalarField<Real>& f, const std::array<double, 3>& p) {
  const GridSpec& g = f.grid();
  detail::check_position(p.data(), g.dim);
  detail::AxisStencil s[3];
  for (int a = 0; a < g.dim; ++a) s[a] = detail::axis_stencil(p[a], g.size[a]);
  if (g.dim == 2) {
    const double tx = s[0].t, ty = s[1].t;
    const double v00 = f.at(s[0].lo, s[1].lo), v10 = f.at(s[0].hi, s[1].lo);
    const double v01 = f.at(s[0].lo, s[1].hi), v11 = f.at(s[0].hi, s[1].hi);
    return static_cast<Real>((1 - tx) * (1 - ty) * v00 + tx * (1 - ty) * v10 +
                             (1 - tx) * ty * v01 + tx * ty * v11);
  }
  double acc = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    double w = 1.0;
    int idx[3];
    for (int a = 0; a < 3; ++a) {
      const bool up = (corner >> a) & 1;
      w *= up ? s[a].t : 1.0 - s[a].t;
      idx[a] = up ? s[a].hi : s[a].lo;
    }
    acc += w * f.at(idx[0], idx[1], idx[2]);
  }
  return static_cast<Real>(acc);
}

/// Interpolated value plus its derivative with respect to the query position.
template <class Real>
double interpolate_with_gradient(const ScalarField<Real>& f, const std::array<double, 3>& p,
                                 std::array<double, 3>& dp) {
  const GridSpec& g = f.grid();
  detail::check_position(p.data(), g.dim);
  detail::AxisStencil s[3];
  for (int a = 0; a < g.dim; ++a) s[a] = detail::axis_stencil(p[a], g.size[a]);
  dp = {0.0, 0.0, 0.0};
  double acc = 0.0;
  const int corners = 1 << g.dim;
  for (int corner = 0; corner < corners; ++corner) {
    int idx[3] = {0, 0, 0};
    double w[3] = {1.0, 1.0, 1.0};
    double dw[3] = {0.0, 0.0, 0.0};
    for (int a = 0; a < g.dim; ++a) {
      const bool up = (corner >> a) & 1;
      w[a] = up ? s[a].t : 1.0 - s[a].t;
      dw[a] = up ? 1.0 : -1.0;
      idx[a] = up ? s[a].hi : s[a].lo;
    }
    const double v = f.at(idx[0], idx[1], idx[2]);
    double wall = 1.0;
    for (int a = 0; a < g.dim; ++a) wall *= w[a];
    acc += wall * v;
    for (int a = 0; a < g.dim; ++a) {
      double prod = dw[a];
      for (int b = 0; b < g.dim; ++b)
        if (b != a) prod *= w[b];
      dp[a] += prod * v;
    }
  }
  return acc;
}

template <class Real>
std::array<double, 3> map_position(const DeformationMap<Real>& phi, std::size_t i) {
  std::array<double, 3> p{0.0, 0.0, 0.0};
  for (int a = 0; a < phi.grid().dim; ++a) p[a] = phi.map[a][i];
  return p;
}

/// S o phi: pulls S back through the map.
template <class Real>
ScalarField<Real> warp_image(const ScalarField<Real>& S, const DeformationMap<Real>& phi_inv) {
  require_same_grid(S.grid(), phi_inv.grid(), "warp_image");
  ScalarField<Real> out(S.grid());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = interpolate(S, map_position(phi_inv, i));
  return out;
}

/// Periodic central difference along one axis, scaled by 1/(2 h).
template <class Real>
ScalarField<Real> central_diff(const ScalarField<Real>& f, int axis) {
  const GridSpec& g = f.grid();
  ScalarField<Real> out(g);
  const double inv = 1.0 / (2.0 * g.spacing[axis]);
  const int n = g.size[axis];
  const std::size_t st = g.stride(axis);
  const std::size_t outer = g.voxels() / (st * n);
  const Real* src = f.data();
  Real* dst = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * st * n;
    for (int c = 0; c < n; ++c) {
      const Real* up = src + base + static_cast<std::size_t>(c + 1 == n ? 0 : c + 1) * st;
      const Real* dn = src + base + static_cast<std::size_t>(c == 0 ? n - 1 : c - 1) * st;
      Real* o_row = dst + base + static_cast<std::size_t>(c) * st;
      for (std::size_t in = 0; in < st; ++in)
        o_row[in] = static_cast<Real>((static_cast<double>(up[in]) - static_cast<double>(dn[in])) * inv);
    }
  }
  return out;
}

template <class Real>
VectorField<Real> gradient(const ScalarField<Real>& f) {
  std::vector<ScalarField<Real>> comps;
  for (int a = 0; a < f.grid().dim; ++a) comps.push_back(central_diff(f, a));
  return VectorField<Real>(std::move(comps));
}

/// Per-voxel d x d matrix field; entry (i, j) = d v_i / d x_j.
template <class Real>
struct MatrixField {
  int dim = 0;
  std::vector<ScalarField<Real>> entries;

  ScalarField<Real>& operator()(int i, int j) { return entries[i * dim + j]; }
  const ScalarField<Real>& operator()(int i, int j) const { return entries[i * dim + j]; }
};

template <class Real>
MatrixField<Real> jacobian(const VectorField<Real>& v) {
  MatrixField<Real> J;
  J.dim = v.dim();
  for (int i = 0; i < J.dim; ++i)
    for (int j = 0; j < J.dim; ++j) J.entries.push_back(central_diff(v[i], j));
  return J;
}

/// det of D(phi) = I + D(displacement).
template <class Real>
ScalarField<Real> jacobian_determinant(const DeformationMap<Real>& phi) {
  const GridSpec& g = phi.grid();
  const MatrixField<Real> Du = jacobian(phi.displacement());
  ScalarField<Real> det(g);
  const std::size_t n = g.voxels();
  for (std::size_t x = 0; x < n; ++x) {
    double m[3][3] = {};
    for (int i = 0; i < g.dim; ++i)
      for (int j = 0; j < g.dim; ++j) m[i][j] = (i == j ? 1.0 : 0.0) + Du(i, j)[x];
    double d;
    if (g.dim == 2) {
      d = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    } else {
      d = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
          m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
          m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    }
    det[x] = static_cast<Real>(d);
  }
  return det;
}

// Small arithmetic helpers shared by the integrators.

template <class Real>
void axpy(Real alpha, const VectorField<Real>& x, VectorField<Real>& y) {
  for (int a = 0; a < x.dim(); ++a) {
    Real* yd = y[a].data();
    const Real* xd = x[a].data();
    const std::size_t n = x.voxels();
    for (std::size_t i = 0; i < n; ++i) yd[i] += alpha * xd[i];
  }
}

template <class Real>
VectorField<Real> scaled(const VectorField<Real>& x, Real alpha) {
  VectorField<Real> y = x;
  for (int a = 0; a < y.dim(); ++a)
    for (auto& v : y[a].values()) v *= alpha;
  return y;
}

/// Plain Euclidean inner product (no quadrature weight), accumulated in double.
template <class Real>
double dot(const VectorField<Real>& x, const VectorField<Real>& y) {
  double acc = 0.0;
  for (int a = 0; a < x.dim(); ++a) {
    const std::size_t n = x.voxels();
    for (std::size_t i = 0; i < n; ++i)
      acc += static_cast<double>(x[a][i]) * static_cast<double>(y[a][i]);
  }
  return acc;
}

template <class Real>
double max_abs(const VectorField<Real>& x) {
  double m = 0.0;
  for (int a = 0; a < x.dim(); ++a)
    for (Real v : x[a].values()) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

template <class Real>
double min_value(const ScalarField<Real>& f) {
  double m = INFINITY;
  for (Real v : f.values()) m = std::min(m, static_cast<double>(v));
  return m;
}

template <class Real>
double max_value(const ScalarField<Real>& f) {
  double m = -INFINITY;
  for (Real v : f.values()) m = std::max(m, static_cast<double>(v));
  return m;
}

/// Largest per-voxel Euclidean norm of a vector field.
template <class Real>
double max_norm(const VectorField<Real>& x) {
  double m = 0.0;
  for (std::size_t i = 0; i < x.voxels(); ++i) {
    double s = 0.0;
    for (int a = 0; a < x.dim(); ++a) s += static_cast<double>(x[a][i]) * x[a][i];
    m = std::max(m, s);
  }
  return std::sqrt(m);
}

}  // namespace mforge
