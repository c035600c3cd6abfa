#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "mforge/field_ops.hpp"
#include "mforge/random.hpp"
#include "mforge/shooting.hpp"

namespace mforge {

struct SynthOptions {
  /// Target max displacement range (voxels) of the shot map.
  double min_displacement = 2.0;
  double max_displacement = 6.0;
  /// When false the momentum is identically zero (lambda = 0).
  bool deform = true;
  double bias_amplitude = 0.2;
  /// Additive noise std as a fraction of the [0, 1] intensity range.
  double noise_std = 0.01;
  int max_retries = 10;
  ShootingConfig shooting;

  void validate() const {
    if (!(min_displacement > 0 && min_displacement < max_displacement))
      throw UsageError("synth displacement range must satisfy 0 < min < max");
    if (bias_amplitude < 0 || bias_amplitude >= 1) throw UsageError("bias amplitude must be in [0, 1)");
    if (noise_std < 0 || noise_std > 0.02) throw UsageError("noise std must be in [0, 0.02]");
    if (max_retries < 0) throw UsageError("max_retries must be >= 0");
    shooting.validate();
  }
};

struct SynthPair {
  Field64 moving_A;
  /// Warped moving image, same appearance as moving_A.
  Field64 target_A;
  /// Warped moving image after the modality B intensity model.
  Field64 target_B;
  VField64 m0_true;
  DeformationMap<double> phi_inv_true;
  std::uint64_t seed = 0;
  std::uint64_t deform_seed = 0;
  std::uint64_t modality_seed = 0;
};

namespace synth_detail {

inline double smoothstep(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

inline int used_min_size(const GridSpec& g) {
  int m = g.size[0];
  for (int a = 1; a < g.dim; ++a) m = std::min(m, g.size[a]);
  return m;
}

/// Sum of a few random periodic cosines, normalized to max |f| = 1.
inline Field64 band_limited(const GridSpec& g, Rng& rng, int terms, int kmax, double offset_range) {
  Field64 f(g, rng.uniform(-offset_range, offset_range));
  for (int t = 0; t < terms; ++t) {
    std::array<int, 3> k{0, 0, 0};
    do {
      for (int a = 0; a < g.dim; ++a) k[a] = rng.uniform_int(-kmax, kmax);
    } while (k[0] == 0 && k[1] == 0 && k[2] == 0);
    const double amp = rng.uniform(0.3, 1.0);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < g.voxels(); ++i) {
      const auto c = g.coords(i);
      double arg = phase;
      for (int a = 0; a < g.dim; ++a) arg += 2.0 * std::numbers::pi * k[a] * c[a] / g.size[a];
      f[i] += amp * std::cos(arg);
    }
  }
  double m = 0.0;
  for (double v : f.values()) m = std::max(m, std::abs(v));
  if (m > 0)
    for (double& v : f.values()) v /= m;
  return f;
}

/// Piecewise-linear increasing lookup on [0, 1] with f(0) = 0, f(1) = 1.
struct Remap {
  std::vector<double> knots;

  double operator()(double x) const {
    const int segs = static_cast<int>(knots.size()) - 1;
    const double p = std::clamp(x, 0.0, 1.0) * segs;
    const int s = std::min(static_cast<int>(p), segs - 1);
    const double t = p - s;
    return (1 - t) * knots[s] + t * knots[s + 1];
  }
};

inline Remap random_remap(Rng& rng, int segments = 5) {
  Remap r;
  r.knots.push_back(0.0);
  for (int s = 0; s < segments; ++s) r.knots.push_back(r.knots.back() + rng.uniform(0.15, 1.0));
  const double top = r.knots.back();
  for (double& k : r.knots) k /= top;
  return r;
}

}  // namespace synth_detail

/// Random blobs with smooth compact edges on a zero background. Values in [0, 1];
/// gradients vanish away from blob boundaries.
inline Field64 synth_base_image(const GridSpec& g, std::uint64_t seed, double margin) {
  g.validate();
  Rng rng(seed);
  const int mmin = synth_detail::used_min_size(g);
  const double edge = 3.0;
  const int count = rng.uniform_int(3, 6);
  std::vector<double> levels;
  for (int i = 0; i < count; ++i) levels.push_back(0.3 + 0.7 * i / (count - 1));
  for (int i = count - 1; i > 0; --i) std::swap(levels[i], levels[rng.uniform_int(0, i)]);

  Field64 img(g);
  for (int b = 0; b < count; ++b) {
    const double r = rng.uniform(0.08, 0.2) * mmin;
    std::array<double, 3> radius{1.0, 1.0, 1.0}, center{0.0, 0.0, 0.0};
    for (int a = 0; a < g.dim; ++a) radius[a] = r * rng.uniform(0.7, 1.3);
    const double rmax = *std::max_element(radius.begin(), radius.begin() + g.dim) + edge / 2;
    for (int a = 0; a < g.dim; ++a) {
      const double lo = margin + rmax, hi = g.size[a] - 1 - margin - rmax;
      center[a] = lo < hi ? rng.uniform(lo, hi) : 0.5 * (g.size[a] - 1);
    }
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double ct = std::cos(theta), st = std::sin(theta);
    const double rmin = *std::min_element(radius.begin(), radius.begin() + g.dim);
    const double level = levels[b];
    for (std::size_t i = 0; i < g.voxels(); ++i) {
      const auto c = g.coords(i);
      const double dx = c[0] - center[0], dy = c[1] - center[1];
      std::array<double, 3> q{ct * dx + st * dy, -st * dx + ct * dy, c[2] - center[2]};
      double rho = 0.0;
      for (int a = 0; a < g.dim; ++a) rho += (q[a] / radius[a]) * (q[a] / radius[a]);
      rho = std::sqrt(rho);
      const double alpha = synth_detail::smoothstep(0.5 + (1.0 - rho) * rmin / edge);
      if (alpha > 0) img[i] = img[i] * (1 - alpha) + level * alpha;
    }
  }
  return img;
}

/// Modality B intensity model: increasing remap, smooth multiplicative bias,
/// additive noise on nonzero voxels, rescaled into [0, 1].
inline Field64 synth_modality_b(const Field64& img, std::uint64_t seed, const SynthOptions& opt) {
  Rng rng(seed);
  const synth_detail::Remap remap = synth_detail::random_remap(rng);
  const Field64 bias = synth_detail::band_limited(img.grid(), rng, 3, 1, 0.0);
  Field64 out(img.grid());
  double top = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    out[i] = remap(img[i]) * (1.0 + opt.bias_amplitude * bias[i]);
    top = std::max(top, out[i]);
  }
  const double scale = top > 1.0 ? 1.0 / top : 1.0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    // noise is drawn for every voxel so the stream does not depend on the image
    const double n = opt.noise_std * rng.normal();
    if (img[i] > 0) out[i] = std::clamp(out[i] * scale + n, 0.0, 1.0);
  }
  return out;
}

/// Synthetic registration pair with known momentum: blobs S, m0 = lambda grad S
/// scaled to the requested displacement, target = S o phi_inv.
inline SynthPair synth_pair(std::uint64_t base_shapes_seed, std::uint64_t deform_seed,
                            std::uint64_t modality_seed, const GridSpec& grid, const SynthOptions& opt = {}) {
  grid.validate();
  opt.validate();
  const int mmin = synth_detail::used_min_size(grid);
  if (mmin < 16) throw DataError("synth_pair needs at least 16 voxels per axis");

  SynthPair p;
  p.seed = base_shapes_seed;
  p.deform_seed = deform_seed;
  p.modality_seed = modality_seed;
  const double margin = std::max(opt.max_displacement + 2.0, 0.12 * mmin);
  p.moving_A = synth_base_image(grid, base_shapes_seed, std::min(margin, 0.25 * mmin));

  const FluidKernel kern(opt.shooting.kernel, grid);
  if (!opt.deform) {
    p.m0_true = VField64(grid);
    p.phi_inv_true = DeformationMap<double>::identity(grid);
    p.target_A = p.moving_A;
  } else {
    Rng rng(deform_seed);
    const VField64 grad = gradient(p.moving_A);
    bool ok = false;
    for (int attempt = 0; attempt <= opt.max_retries && !ok; ++attempt) {
      const Field64 lambda = synth_detail::band_limited(grid, rng, 6, 3, 0.5);
      VField64 unit(grid);
      for (int a = 0; a < grid.dim; ++a)
        for (std::size_t i = 0; i < grid.voxels(); ++i) unit[a][i] = lambda[i] * grad[a][i];
      const double vmax = max_norm(kern.apply_K(unit));
      if (!(vmax > 0)) continue;
      const double goal = rng.uniform(opt.min_displacement + 0.125 * (opt.max_displacement - opt.min_displacement),
                                      opt.max_displacement - 0.125 * (opt.max_displacement - opt.min_displacement));
      double scale = goal / vmax;
      for (int it = 0; it < 8; ++it) {
        VField64 m0 = scaled(unit, scale);
        ShootResult<double> res;
        try {
          res = shoot(m0, opt.shooting, kern);
        } catch (const NumericalError&) {
          break;
        }
        if (!(min_value(jacobian_determinant(res.state.phi_inv)) > 0)) break;
        const double disp = max_norm(res.state.phi_inv.displacement());
        if (std::abs(disp / goal - 1.0) < 0.03 && disp >= opt.min_displacement && disp <= opt.max_displacement) {
          p.m0_true = std::move(m0);
          p.phi_inv_true = std::move(res.state.phi_inv);
          ok = true;
          break;
        }
        scale *= goal / disp;
      }
    }
    if (!ok) throw NumericalError("synth_pair: no admissible deformation after retries");
    p.target_A = warp_image(p.moving_A, p.phi_inv_true);
  }
  p.target_B = synth_modality_b(p.target_A, modality_seed, opt);
  return p;
}

/// Seeds for the i-th pair of a dataset drawn from one master seed.
inline SynthPair synth_indexed_pair(std::uint64_t seed, std::uint64_t index, const GridSpec& grid,
                                    const SynthOptions& opt = {}) {
  return synth_pair(derive_seed(seed, 3 * index), derive_seed(seed, 3 * index + 1),
                    derive_seed(seed, 3 * index + 2), grid, opt);
}

}  // namespace mforge
