#pragma once

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "mforge/grid.hpp"

namespace mforge {

/// Coefficients of L = a (-Lap)^2 + b (-Lap) + c, with -Lap the nonnegative discrete operator.
struct KernelParams {
  double a = 0.01;
  double b = 0.01;
  double c = 0.001;

  void validate() const {
    if (!(a >= 0.0) || !(b >= 0.0)) throw DataError("kernel parameters a, b must be >= 0");
    if (!(c > 0.0)) throw DataError("kernel parameter c must be > 0");
  }

  /// Run configurations additionally require actual smoothing. The bare kernel
  /// accepts a = b = 0 so that K = identity/c can be built for checks.
  void validate_smoothing() const {
    validate();
    if (!(a + b > 0.0)) throw DataError("kernel needs a + b > 0");
  }

  friend bool operator==(const KernelParams&, const KernelParams&) = default;
};

namespace detail {

// FFTW's planner is not thread-safe; execution with new-array functions is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwBuffer {
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  FftwBuffer(std::size_t nreal, std::size_t nspec)
      : real(static_cast<double*>(fftw_malloc(sizeof(double) * nreal))),
        spec(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * nspec))) {}
  ~FftwBuffer() {
    fftw_free(real);
    fftw_free(spec);
  }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
};

struct FftwPlans {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
  std::size_t nreal = 0;
  std::size_t nspec = 0;

  explicit FftwPlans(const GridSpec& g) {
    int n[3];
    // FFTW is row-major (last index fastest); our axis 0 is fastest.
    for (int a = 0; a < g.dim; ++a) n[a] = g.size[g.dim - 1 - a];
    nreal = g.voxels();
    nspec = nreal / g.size[0] * (g.size[0] / 2 + 1);
    FftwBuffer tmp(nreal, nspec);
    std::lock_guard lock(fftw_planner_mutex());
    forward = fftw_plan_dft_r2c(g.dim, n, tmp.real, tmp.spec, FFTW_ESTIMATE);
    backward = fftw_plan_dft_c2r(g.dim, n, tmp.spec, tmp.real, FFTW_ESTIMATE);
    if (!forward || !backward) throw Error("FFTW planning failed");
  }
  ~FftwPlans() {
    std::lock_guard lock(fftw_planner_mutex());
    if (forward) fftw_destroy_plan(forward);
    if (backward) fftw_destroy_plan(backward);
  }
  FftwPlans(const FftwPlans&) = delete;
  FftwPlans& operator=(const FftwPlans&) = delete;
};

}  // namespace detail

/// Spectral K / L pair on a periodic grid. Immutable once built.
class FluidKernel {
 public:
  FluidKernel(const KernelParams& params, const GridSpec& grid) : params_(params), grid_(grid) {
    params_.validate();
    grid_.validate();
    plans_ = std::make_shared<detail::FftwPlans>(grid_);
    const int h0 = grid_.size[0] / 2 + 1;
    symbol_.resize(plans_->nspec);
    std::size_t idx = 0;
    for (int k2 = 0; k2 < grid_.size[2]; ++k2)
      for (int k1 = 0; k1 < grid_.size[1]; ++k1)
        for (int k0 = 0; k0 < h0; ++k0) symbol_[idx++] = symbol_at({k0, k1, k2});
  }

  const KernelParams& params() const { return params_; }
  const GridSpec& grid() const { return grid_; }

  /// Symbol of -Lap at integer frequency k (any integer; periodic in k).
  double laplacian_symbol(const std::array<int, 3>& k) const {
    double lam = 0.0;
    for (int a = 0; a < grid_.dim; ++a) {
      const double s = std::sin(std::numbers::pi * k[a] / grid_.size[a]);
      lam += 4.0 / (grid_.spacing[a] * grid_.spacing[a]) * s * s;
    }
    return lam;
  }

  /// Symbol of L at frequency k; always >= c.
  double symbol_at(const std::array<int, 3>& k) const {
    const double lam = laplacian_symbol(k);
    return params_.a * lam * lam + params_.b * lam + params_.c;
  }

  /// Half-spectrum symbol table in FFTW r2c layout (axis 0 halved).
  const std::vector<double>& symbol() const { return symbol_; }

  template <class Real>
  ScalarField<Real> apply_K(const ScalarField<Real>& f) const {
    return filter(f, /*inverse=*/true);
  }
  template <class Real>
  ScalarField<Real> apply_L(const ScalarField<Real>& f) const {
    return filter(f, /*inverse=*/false);
  }

  template <class Real>
  VectorField<Real> apply_K(const VectorField<Real>& m) const {
    require_same_grid(m.grid(), grid_, "apply_K");
    std::vector<ScalarField<Real>> out;
    for (int a = 0; a < m.dim(); ++a) out.push_back(filter(m[a], true));
    return VectorField<Real>(std::move(out));
  }
  template <class Real>
  VectorField<Real> apply_L(const VectorField<Real>& v) const {
    require_same_grid(v.grid(), grid_, "apply_L");
    std::vector<ScalarField<Real>> out;
    for (int a = 0; a < v.dim(); ++a) out.push_back(filter(v[a], false));
    return VectorField<Real>(std::move(out));
  }

 private:
  template <class Real>
  ScalarField<Real> filter(const ScalarField<Real>& f, bool inverse) const {
    require_same_grid(f.grid(), grid_, inverse ? "apply_K" : "apply_L");
    detail::FftwBuffer buf(plans_->nreal, plans_->nspec);
    const std::size_t n = plans_->nreal;
    for (std::size_t i = 0; i < n; ++i) buf.real[i] = static_cast<double>(f[i]);
    fftw_execute_dft_r2c(plans_->forward, buf.real, buf.spec);
    const double norm = 1.0 / static_cast<double>(n);
    for (std::size_t k = 0; k < plans_->nspec; ++k) {
      const double s = inverse ? norm / symbol_[k] : norm * symbol_[k];
      buf.spec[k][0] *= s;
      buf.spec[k][1] *= s;
    }
    fftw_execute_dft_c2r(plans_->backward, buf.spec, buf.real);
    ScalarField<Real> out(grid_);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<Real>(buf.real[i]);
    return out;
  }

  KernelParams params_;
  GridSpec grid_;
  std::shared_ptr<detail::FftwPlans> plans_;
  std::vector<double> symbol_;
};

inline FluidKernel build_kernel(const KernelParams& params, const GridSpec& grid) {
  return FluidKernel(params, grid);
}

}  // namespace mforge
