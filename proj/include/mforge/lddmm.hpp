#pragma once

#include <cmath>
#include <vector>

#include "mforge/shooting.hpp"

namespace mforge {

struct EnergyParams {
  double sigma = 0.2;
  ShootingConfig shooting;

  const KernelParams& kernel() const { return shooting.kernel; }

  void validate() const {
    if (!(sigma > 0.0)) throw UsageError("sigma must be > 0");
    shooting.validate();
  }
};

struct EnergyTerms {
  double total = 0.0;
  double reg = 0.0;
  double image = 0.0;
};

template <class Real>
double image_mismatch(const ScalarField<Real>& warped, const ScalarField<Real>& T, double sigma) {
  double acc = 0.0;
  for (std::size_t i = 0; i < warped.size(); ++i) {
    const double r = static_cast<double>(warped[i]) - static_cast<double>(T[i]);
    acc += r * r;
  }
  return acc * T.grid().cell_volume() / (sigma * sigma);
}

/// <m0, K m0> + 1/sigma^2 ||S o phi_inv(1) - T||^2, both with voxel-volume quadrature.
template <class Real>
EnergyTerms energy(const VectorField<Real>& m0, const ScalarField<Real>& S, const ScalarField<Real>& T,
                   const EnergyParams& p, const FluidKernel& kern) {
  p.validate();
  require_same_grid(S.grid(), T.grid(), "energy");
  require_same_grid(S.grid(), m0.grid(), "energy");
  EnergyTerms e;
  e.reg = dot(m0, kern.apply_K(m0)) * m0.grid().cell_volume();
  const auto warped = shoot_and_warp(S, m0, p.shooting, kern).warped;
  e.image = image_mismatch(warped, T, p.sigma);
  e.total = e.reg + e.image;
  return e;
}

template <class Real>
EnergyTerms energy(const VectorField<Real>& m0, const ScalarField<Real>& S, const ScalarField<Real>& T,
                   const EnergyParams& p) {
  return energy(m0, S, T, p, FluidKernel(p.kernel(), m0.grid()));
}

namespace detail {

// Transposed Jacobian of shooting_rhs at state s, applied to the cotangent (lam_m, lam_phi).
// Periodic central differences satisfy D^T = -D and K is symmetric.
template <class Real>
ShootingState<Real> shooting_rhs_adjoint(const ShootingState<Real>& s, const ShootingState<Real>& lam,
                                         const FluidKernel& kern) {
  const GridSpec& g = s.m.grid();
  const int d = g.dim;
  const std::size_t n = g.voxels();
  const VectorField<Real>& m = s.m;
  const VectorField<Real> v = kern.apply_K(m);
  const VectorField<Real>& lm = lam.m;
  const VectorField<Real>& lp = lam.phi;
  const MatrixField<Real> Dv = jacobian(v);
  const MatrixField<Real> Dlm = jacobian(lm);
  const MatrixField<Real> Du = jacobian(DeformationMap<Real>(s.phi).displacement());

  VectorField<Real> gm(g), gv(g), gphi(g);
  ScalarField<Real> tmp(g);

  // EPDiff part: rhs_i = -sum_j [ (d_i v_j) m_j + d_j(m_i v_j) ].
  for (int j = 0; j < d; ++j) {
    for (std::size_t x = 0; x < n; ++x) {
      double accm = 0.0, accv = 0.0;
      for (int i = 0; i < d; ++i) {
        accm += -static_cast<double>(lm[i][x]) * Dv(j, i)[x] + static_cast<double>(v[i][x]) * Dlm(j, i)[x];
        accv += static_cast<double>(m[i][x]) * Dlm(i, j)[x];
      }
      gm[j][x] = static_cast<Real>(accm);
      gv[j][x] = static_cast<Real>(accv);
    }
  }
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      for (std::size_t x = 0; x < n; ++x) tmp[x] = lm[i][x] * m[j][x];
      const auto di = central_diff(tmp, i);
      for (std::size_t x = 0; x < n; ++x) gv[j][x] += di[x];
    }
  }

  // Map advection part.
  for (int j = 0; j < d; ++j) {
    for (std::size_t x = 0; x < n; ++x) {
      double acc = -static_cast<double>(lp[j][x]);
      for (int i = 0; i < d; ++i) acc -= static_cast<double>(lp[i][x]) * Du(i, j)[x];
      gv[j][x] += static_cast<Real>(acc);
    }
  }
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      for (std::size_t x = 0; x < n; ++x) tmp[x] = lp[i][x] * v[j][x];
      const auto dj = central_diff(tmp, j);
      for (std::size_t x = 0; x < n; ++x) gphi[i][x] += dj[x];
    }
  }

  axpy(Real(1), kern.apply_K(gv), gm);
  return {std::move(gm), std::move(gphi)};
}

template <class Real>
ShootingState<Real> scaled_state(const ShootingState<Real>& s, Real h) {
  return {scaled(s.m, h), scaled(s.phi, h)};
}

template <class Real>
void add_to(ShootingState<Real>& acc, Real h, const ShootingState<Real>& x) {
  axpy(h, x.m, acc.m);
  axpy(h, x.phi, acc.phi);
}

// Reverse accumulation through one recorded integrator step; `bar` is the
// cotangent of the step's output on entry and of its input on exit.
template <class Real>
void integrator_step_adjoint(const ShootingState<Real>& s, Real dt, Integrator method,
                             const FluidKernel& kern, ShootingState<Real>& bar) {
  if (method == Integrator::euler) {
    const auto g = shooting_rhs_adjoint(s, scaled_state(bar, dt), kern);
    add_to(bar, Real(1), g);
    return;
  }
  const auto k1 = shooting_rhs(s, kern);
  const auto s2 = offset_state(s, dt / 2, k1);
  const auto k2 = shooting_rhs(s2, kern);
  const auto s3 = offset_state(s, dt / 2, k2);
  const auto k3 = shooting_rhs(s3, kern);
  const auto s4 = offset_state(s, dt, k3);

  ShootingState<Real> k1b = scaled_state(bar, dt / 6);
  ShootingState<Real> k2b = scaled_state(bar, dt / 3);
  ShootingState<Real> k3b = scaled_state(bar, dt / 3);
  const ShootingState<Real> k4b = scaled_state(bar, dt / 6);

  const auto s4b = shooting_rhs_adjoint(s4, k4b, kern);
  add_to(bar, Real(1), s4b);
  add_to(k3b, dt, s4b);
  const auto s3b = shooting_rhs_adjoint(s3, k3b, kern);
  add_to(bar, Real(1), s3b);
  add_to(k2b, dt / 2, s3b);
  const auto s2b = shooting_rhs_adjoint(s2, k2b, kern);
  add_to(bar, Real(1), s2b);
  add_to(k1b, dt / 2, s2b);
  add_to(bar, Real(1), shooting_rhs_adjoint(s, k1b, kern));
}

}  // namespace detail

/// Exact gradient of the discretized energy with respect to m0, obtained by
/// reverse accumulation through the recorded integrator steps.
namespace detail {

/// Recorded forward shot: energy terms plus the per-step states needed by the
/// reverse pass.
template <class Real>
struct ForwardPass {
  EnergyTerms terms;
  std::vector<ShootingState<Real>> trajectory;
  DeformationMap<Real> phi1;
};

template <class Real>
ForwardPass<Real> forward_pass(const VectorField<Real>& m0, const ScalarField<Real>& S, const ScalarField<Real>& T,
                               const EnergyParams& p, const FluidKernel& kern) {
  ForwardPass<Real> fp;
  auto res = shoot(m0, p.shooting, kern, &fp.trajectory);
  fp.phi1 = std::move(res.state.phi_inv);
  fp.terms.reg = dot(m0, kern.apply_K(m0)) * m0.grid().cell_volume();
  fp.terms.image = image_mismatch(warp_image(S, fp.phi1), T, p.sigma);
  fp.terms.total = fp.terms.reg + fp.terms.image;
  return fp;
}

template <class Real>
VectorField<Real> reverse_pass(const ForwardPass<Real>& fp, const VectorField<Real>& m0, const ScalarField<Real>& S,
                               const ScalarField<Real>& T, const EnergyParams& p, const FluidKernel& kern) {
  const GridSpec& g = m0.grid();
  const double w = g.cell_volume();
  const std::size_t n = g.voxels();
  ShootingState<Real> bar{VectorField<Real>(g), VectorField<Real>(g)};
  const double coef = 2.0 * w / (p.sigma * p.sigma);
  for (std::size_t x = 0; x < n; ++x) {
    std::array<double, 3> dpos;
    const double val = interpolate_with_gradient(S, map_position(fp.phi1, x), dpos);
    const double r = val - static_cast<double>(T[x]);
    for (int a = 0; a < g.dim; ++a) bar.phi[a][x] = static_cast<Real>(coef * r * dpos[a]);
  }

  const Real dt = Real(1) / static_cast<Real>(p.shooting.num_steps);
  for (auto it = fp.trajectory.rbegin(); it != fp.trajectory.rend(); ++it)
    integrator_step_adjoint(*it, dt, p.shooting.integrator, kern, bar);

  VectorField<Real> grad = kern.apply_K(m0);
  for (int a = 0; a < g.dim; ++a)
    for (auto& v : grad[a].values()) v *= static_cast<Real>(2.0 * w);
  axpy(Real(1), bar.m, grad);
  return grad;
}

}  // namespace detail

/// Exact gradient of the discretized energy, by reverse accumulation through
/// the recorded integrator steps.
template <class Real>
VectorField<Real> energy_gradient(const VectorField<Real>& m0, const ScalarField<Real>& S,
                                  const ScalarField<Real>& T, const EnergyParams& p, const FluidKernel& kern,
                                  EnergyTerms* terms = nullptr) {
  p.validate();
  require_same_grid(S.grid(), T.grid(), "energy_gradient");
  require_same_grid(S.grid(), m0.grid(), "energy_gradient");
  const auto fp = detail::forward_pass(m0, S, T, p, kern);
  if (terms) *terms = fp.terms;
  return detail::reverse_pass(fp, m0, S, T, p, kern);
}

template <class Real>
VectorField<Real> energy_gradient(const VectorField<Real>& m0, const ScalarField<Real>& S,
                                  const ScalarField<Real>& T, const EnergyParams& p) {
  return energy_gradient(m0, S, T, p, FluidKernel(p.kernel(), m0.grid()));
}

struct EnergyRecord {
  int iteration = 0;
  double total = 0.0;
  double reg = 0.0;
  double image = 0.0;
};

template <class Real>
struct OptimResult {
  VectorField<Real> m0;
  std::vector<EnergyRecord> energy_trace;
  bool converged = false;
};

struct OptimizeOptions {
  int max_iters = 200;
  /// Initial step; 0 selects one so the first trial moves the velocity by about one voxel.
  double step0 = 0.0;
  double rel_tol = 1e-6;
  double min_step = 1e-12;
  /// Step multiplier after an accepted iteration (1 = pure halving backtracking).
  double growth = 2.0;
};

/// Gradient descent with backtracking on the shooting energy.
template <class Real>
OptimResult<Real> optimize(const ScalarField<Real>& S, const ScalarField<Real>& T, const EnergyParams& p,
                           const OptimizeOptions& opt = {}) {
  if (opt.max_iters < 1) throw UsageError("max_iters must be >= 1");
  p.validate();
  require_same_grid(S.grid(), T.grid(), "optimize");
  const FluidKernel kern(p.kernel(), S.grid());
  OptimResult<Real> out;
  out.m0 = VectorField<Real>(S.grid());
  EnergyTerms cur;
  VectorField<Real> grad = energy_gradient(out.m0, S, T, p, kern, &cur);
  out.energy_trace.push_back({0, cur.total, cur.reg, cur.image});
  if (cur.total == 0.0) {
    out.converged = true;
    return out;
  }

  double step = opt.step0;
  if (step <= 0.0) {
    const double vmax = max_abs(kern.apply_K(grad));
    step = vmax > 0.0 ? 1.0 / vmax : 1.0;
  }
  for (int it = 1; it <= opt.max_iters; ++it) {
    if (max_abs(grad) == 0.0) {
      out.converged = true;
      break;
    }
    bool accepted = false;
    detail::ForwardPass<Real> trial_fp;
    VectorField<Real> trial;
    while (step >= opt.min_step) {
      trial = out.m0;
      axpy(static_cast<Real>(-step), grad, trial);
      try {
        trial_fp = detail::forward_pass(trial, S, T, p, kern);
      } catch (const NumericalError&) {
        step *= 0.5;
        continue;
      }
      if (trial_fp.terms.total < cur.total) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (it == 1) throw NumericalError("no descent possible");
      out.converged = true;
      break;
    }
    const double rel = (cur.total - trial_fp.terms.total) / std::max(std::abs(cur.total), 1e-300);
    out.m0 = std::move(trial);
    cur = trial_fp.terms;
    grad = detail::reverse_pass(trial_fp, out.m0, S, T, p, kern);
    out.energy_trace.push_back({it, cur.total, cur.reg, cur.image});
    step *= opt.growth;
    if (rel < opt.rel_tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

}  // namespace mforge
