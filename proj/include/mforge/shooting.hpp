#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mforge/field_ops.hpp"
#include "mforge/kernel.hpp"

namespace mforge {

enum class Integrator { euler, rk4 };

inline const char* to_string(Integrator i) { return i == Integrator::euler ? "euler" : "rk4"; }

inline Integrator integrator_from_string(const std::string& s) {
  if (s == "euler") return Integrator::euler;
  if (s == "rk4") return Integrator::rk4;
  throw UsageError("unknown integrator '" + s + "' (expected euler or rk4)");
}

struct ShootingConfig {
  int num_steps = 20;
  Integrator integrator = Integrator::rk4;
  KernelParams kernel;

  void validate() const {
    if (num_steps < 1) throw UsageError("num_steps must be >= 1");
    kernel.validate();
  }
};

template <class Real>
struct GeodesicState {
  double t = 0.0;
  VectorField<Real> m;
  DeformationMap<Real> phi_inv;
};

template <class Real>
struct ShootResult {
  GeodesicState<Real> state;
  /// <m(t), K m(t)> (quadrature-weighted) at t = 0, dt, ..., 1.
  std::vector<double> hamiltonian;
};

namespace detail {

template <class Real>
void check_finite(const VectorField<Real>& f) {
  if (!f.all_finite()) throw NumericalError("integration diverged");
}

template <class Real>
ScalarField<Real> divergence(const MatrixField<Real>& J) {
  ScalarField<Real> div = J(0, 0);
  for (int j = 1; j < J.dim; ++j) {
    const auto& e = J(j, j);
    for (std::size_t x = 0; x < div.size(); ++x) div[x] += e[x];
  }
  return div;
}

}  // namespace detail

/// -ad*_v m for a given velocity v = K m, in conservative form:
///   -[ (Dv)^T m + div(m (x) v) ].
/// Equal to -[ (Dv)^T m + (Dm) v + m div v ] in the continuum; with periodic
/// central differences this form keeps <m, K m> exactly invariant in time.
template <class Real>
VectorField<Real> epdiff_rhs(const VectorField<Real>& m, const VectorField<Real>& v) {
  require_same_grid(m.grid(), v.grid(), "epdiff_rhs");
  const int d = m.dim();
  const std::size_t n = m.voxels();
  const MatrixField<Real> Dv = jacobian(v);
  VectorField<Real> out(m.grid());
  ScalarField<Real> flux(m.grid());
  for (int i = 0; i < d; ++i) {
    for (std::size_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += static_cast<double>(Dv(j, i)[x]) * m[j][x];
      out[i][x] = static_cast<Real>(-acc);
    }
    for (int j = 0; j < d; ++j) {
      for (std::size_t x = 0; x < n; ++x) flux[x] = m[i][x] * v[j][x];
      const ScalarField<Real> df = central_diff(flux, j);
      for (std::size_t x = 0; x < n; ++x) out[i][x] -= df[x];
    }
  }
  detail::check_finite(out);
  return out;
}

/// Advective coordinate form -[ (Dv)^T m + (Dm) v + m div v ]; not used by the
/// integrator, kept as a discretization cross-check.
template <class Real>
VectorField<Real> epdiff_rhs_advective(const VectorField<Real>& m, const VectorField<Real>& v) {
  require_same_grid(m.grid(), v.grid(), "epdiff_rhs_advective");
  const int d = m.dim();
  const std::size_t n = m.voxels();
  const MatrixField<Real> Dv = jacobian(v);
  const MatrixField<Real> Dm = jacobian(m);
  const ScalarField<Real> div = detail::divergence(Dv);
  VectorField<Real> out(m.grid());
  for (int i = 0; i < d; ++i) {
    for (std::size_t x = 0; x < n; ++x) {
      double acc = static_cast<double>(m[i][x]) * div[x];
      for (int j = 0; j < d; ++j) {
        acc += static_cast<double>(Dv(j, i)[x]) * m[j][x];
        acc += static_cast<double>(Dm(i, j)[x]) * v[j][x];
      }
      out[i][x] = static_cast<Real>(-acc);
    }
  }
  detail::check_finite(out);
  return out;
}

template <class Real>
VectorField<Real> epdiff_rhs(const VectorField<Real>& m, const FluidKernel& kern) {
  return epdiff_rhs(m, kern.apply_K(m));
}

/// -(D phi_inv) v, with D phi_inv = I + D(displacement).
template <class Real>
VectorField<Real> advect_map_rhs(const DeformationMap<Real>& phi_inv, const VectorField<Real>& v) {
  require_same_grid(phi_inv.grid(), v.grid(), "advect_map_rhs");
  const int d = v.dim();
  const std::size_t n = v.voxels();
  const MatrixField<Real> Du = jacobian(phi_inv.displacement());
  VectorField<Real> out(v.grid());
  for (int i = 0; i < d; ++i) {
    for (std::size_t x = 0; x < n; ++x) {
      double acc = v[i][x];
      for (int j = 0; j < d; ++j) acc += static_cast<double>(Du(i, j)[x]) * v[j][x];
      out[i][x] = static_cast<Real>(-acc);
    }
  }
  detail::check_finite(out);
  return out;
}

template <class Real>
double hamiltonian(const VectorField<Real>& m, const FluidKernel& kern) {
  return dot(m, kern.apply_K(m)) * m.grid().cell_volume();
}

/// Coupled (m, phi_inv) state advanced by the integrators.
template <class Real>
struct ShootingState {
  VectorField<Real> m;
  VectorField<Real> phi;  // absolute positions
};

template <class Real>
ShootingState<Real> shooting_rhs(const ShootingState<Real>& s, const FluidKernel& kern) {
  const VectorField<Real> v = kern.apply_K(s.m);
  return {epdiff_rhs(s.m, v), advect_map_rhs(DeformationMap<Real>(s.phi), v)};
}

template <class Real>
ShootingState<Real> offset_state(const ShootingState<Real>& s, Real h, const ShootingState<Real>& k) {
  ShootingState<Real> out = s;
  axpy(h, k.m, out.m);
  axpy(h, k.phi, out.phi);
  return out;
}

/// One step of the chosen integrator.
template <class Real>
ShootingState<Real> integrator_step(const ShootingState<Real>& s, Real dt, Integrator method,
                                    const FluidKernel& kern) {
  if (method == Integrator::euler) return offset_state(s, dt, shooting_rhs(s, kern));
  const auto k1 = shooting_rhs(s, kern);
  const auto k2 = shooting_rhs(offset_state(s, dt / 2, k1), kern);
  const auto k3 = shooting_rhs(offset_state(s, dt / 2, k2), kern);
  const auto k4 = shooting_rhs(offset_state(s, dt, k3), kern);
  ShootingState<Real> out = s;
  axpy(dt / 6, k1.m, out.m);
  axpy(dt / 3, k2.m, out.m);
  axpy(dt / 3, k3.m, out.m);
  axpy(dt / 6, k4.m, out.m);
  axpy(dt / 6, k1.phi, out.phi);
  axpy(dt / 3, k2.phi, out.phi);
  axpy(dt / 3, k3.phi, out.phi);
  axpy(dt / 6, k4.phi, out.phi);
  return out;
}

/// Integrates the geodesic from m0 over t in [0, 1]. If `trajectory` is given,
/// the state at the start of every step is appended to it.
template <class Real>
ShootResult<Real> shoot(const VectorField<Real>& m0, const ShootingConfig& cfg, const FluidKernel& kern,
                        std::vector<ShootingState<Real>>* trajectory = nullptr) {
  cfg.validate();
  require_same_grid(m0.grid(), kern.grid(), "shoot");
  detail::check_finite(m0);
  const Real dt = Real(1) / static_cast<Real>(cfg.num_steps);
  ShootingState<Real> s{m0, DeformationMap<Real>::identity(m0.grid()).map};
  ShootResult<Real> res;
  res.hamiltonian.reserve(cfg.num_steps + 1);
  res.hamiltonian.push_back(hamiltonian(s.m, kern));
  if (trajectory) trajectory->reserve(trajectory->size() + cfg.num_steps);
  for (int step = 0; step < cfg.num_steps; ++step) {
    if (trajectory) trajectory->push_back(s);
    s = integrator_step(s, dt, cfg.integrator, kern);
    res.hamiltonian.push_back(hamiltonian(s.m, kern));
  }
  res.state.t = 1.0;
  res.state.m = std::move(s.m);
  res.state.phi_inv = DeformationMap<Real>(std::move(s.phi));
  return res;
}

template <class Real>
ShootResult<Real> shoot(const VectorField<Real>& m0, const ShootingConfig& cfg) {
  return shoot(m0, cfg, FluidKernel(cfg.kernel, m0.grid()));
}

template <class Real>
struct WarpResult {
  ScalarField<Real> warped;
  DeformationMap<Real> phi_inv;
};

template <class Real>
WarpResult<Real> shoot_and_warp(const ScalarField<Real>& S, const VectorField<Real>& m0,
                                const ShootingConfig& cfg, const FluidKernel& kern) {
  require_same_grid(S.grid(), m0.grid(), "shoot_and_warp");
  auto res = shoot(m0, cfg, kern);
  ScalarField<Real> warped = warp_image(S, res.state.phi_inv);
  return {std::move(warped), std::move(res.state.phi_inv)};
}

template <class Real>
WarpResult<Real> shoot_and_warp(const ScalarField<Real>& S, const VectorField<Real>& m0,
                                const ShootingConfig& cfg) {
  return shoot_and_warp(S, m0, cfg, FluidKernel(cfg.kernel, m0.grid()));
}

}  // namespace mforge
