#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mforge/field_ops.hpp"
#include "mforge/net/model.hpp"
#include "mforge/parallel.hpp"
#include "mforge/patches.hpp"
#include "mforge/shooting.hpp"

namespace mforge {

enum class PredictMode { deterministic, bayesian };

struct PredictionConfig {
  int patch_size = 15;
  int stride = 14;
  PredictMode mode = PredictMode::deterministic;
  int num_samples = 20;
  std::uint64_t seed = 0;
  int batch_size = 64;
  double background_threshold = 0.01;
  bool prune = true;
  /// Clamp raw per-voxel momentum norms at this multiple of the training maximum; 0 disables.
  double clamp_multiple = 5.0;
  int workers = 1;
  ShootingConfig shooting;

  void validate() const {
    if (patch_size < 1 || stride < 1 || stride > patch_size) throw UsageError("need 1 <= stride <= patch_size");
    if (mode == PredictMode::bayesian && num_samples < 2) throw UsageError("bayesian prediction needs >= 2 samples");
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (clamp_multiple < 0) throw UsageError("clamp multiple must be >= 0");
    shooting.validate();
  }
};

struct StageTimings {
  double plan = 0.0;
  double prune = 0.0;
  double forward = 0.0;
  double stitch = 0.0;
  double shoot = 0.0;

  StageTimings& operator+=(const StageTimings& o) {
    plan += o.plan;
    prune += o.prune;
    forward += o.forward;
    stitch += o.stitch;
    shoot += o.shoot;
    return *this;
  }
};

struct PredictionResult {
  VField64 m0_pred;
  DeformationMap<double> phi_inv;
  Field64 warped;
  std::vector<DeformationMap<double>> samples;
  std::optional<Field64> uncertainty;
  double min_jacobian_det = 0.0;
  PatchStats patches;
  StageTimings timings;
};

namespace predict_detail {

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

inline double meta_or(const std::map<std::string, double>& meta, const std::string& key, double fallback) {
  const auto it = meta.find(key);
  return it == meta.end() ? fallback : it->second;
}

}  // namespace predict_detail

/// Sliding-window momentum prediction: plan, prune, batched forward, stitch, unscale.
/// `mode` is eval for deterministic use or mc_dropout with masks from `mask_seed`.
template <class Real>
VField64 predict_momentum(net::NetModel<Real>& model, const Field64& moving, const Field64& target,
                          const PredictionConfig& cfg, net::Mode mode = net::Mode::eval, std::uint64_t mask_seed = 0,
                          StageTimings* timings = nullptr, PatchStats* stats = nullptr) {
  cfg.validate();
  require_same_grid(moving.grid(), target.grid(), "predict_momentum");
  const GridSpec& g = moving.grid();
  const auto& arch = model.arch();
  if (arch.dim != g.dim) throw DataError("model is " + std::to_string(arch.dim) + "D, images are " + std::to_string(g.dim) + "D");
  if (arch.patch != cfg.patch_size)
    throw DataError("model patch " + std::to_string(arch.patch) + " does not match prediction patch " +
                    std::to_string(cfg.patch_size));
  predict_detail::Stopwatch sw;
  StageTimings t;

  const PatchGrid plan = plan_patches(g, cfg.patch_size, cfg.stride);
  t.plan = sw.lap();
  PatchJobs jobs = make_jobs(moving, target, plan, cfg.prune ? cfg.background_threshold : -INFINITY);
  t.prune = sw.lap();
  if (stats) *stats = jobs.stats;

  std::vector<const PatchJob*> kept;
  for (const auto& j : jobs.jobs)
    if (!j.pruned) kept.push_back(&j);

  const double scale = predict_detail::meta_or(model.meta, "momentum_scale", 1.0);
  const double train_max = predict_detail::meta_or(model.meta, "momentum_max", 0.0);
  const double limit = cfg.clamp_multiple > 0 && train_max > 0 ? cfg.clamp_multiple * train_max : INFINITY;

  StitchAccumulator acc(g, plan.patch_size);
  const std::size_t P = plan.patch_voxels();
  for (std::size_t b0 = 0, batch = 0; b0 < kept.size(); b0 += cfg.batch_size, ++batch) {
    sw.lap();
    const std::size_t nb = std::min<std::size_t>(cfg.batch_size, kept.size() - b0);
    std::vector<int> shape{static_cast<int>(nb), 1};
    for (int d = 0; d < g.dim; ++d) shape.push_back(cfg.patch_size);
    net::Tensor<Real> mv(shape), tg(shape);
    for (std::size_t n = 0; n < nb; ++n) {
      std::copy(kept[b0 + n]->moving_patch.begin(), kept[b0 + n]->moving_patch.end(), mv.sample(static_cast<int>(n)));
      std::copy(kept[b0 + n]->target_patch.begin(), kept[b0 + n]->target_patch.end(), tg.sample(static_cast<int>(n)));
    }
    const auto out = model.forward(mv, tg, mode, derive_seed(mask_seed, batch));
    t.forward += sw.lap();
    for (std::size_t n = 0; n < nb; ++n) {
      MomentumPatch mp{kept[b0 + n]->start, {}};
      for (int d = 0; d < g.dim; ++d) {
        const Real* src = out[d].sample(static_cast<int>(n));
        mp.components.emplace_back(src, src + P);
      }
      if (std::isfinite(limit))
        for (std::size_t i = 0; i < P; ++i) {
          double s = 0;
          for (int d = 0; d < g.dim; ++d) s += double(mp.components[d][i]) * mp.components[d][i];
          const double norm = std::sqrt(s);
          if (norm > limit)
            for (int d = 0; d < g.dim; ++d) mp.components[d][i] = static_cast<float>(mp.components[d][i] * (limit / norm));
        }
      acc.deposit(mp);
    }
    t.stitch += sw.lap();
  }
  model.for_each_layer([](net::Layer<Real>& l) { l.clear_cache(); });
  sw.lap();
  VField64 m0 = acc.finish();
  if (scale != 1.0)
    for (int d = 0; d < g.dim; ++d)
      for (double& v : m0[d].values()) v /= scale;
  t.stitch += sw.lap();
  if (timings) *timings += t;
  return m0;
}

/// sqrt of the summed per-axis unbiased sample variances of the maps.
inline Field64 map_uncertainty(const std::vector<DeformationMap<double>>& maps) {
  if (maps.size() < 2) throw UsageError("uncertainty needs at least 2 samples");
  const GridSpec& g = maps[0].grid();
  const double n = static_cast<double>(maps.size());
  Field64 out(g);
  for (int a = 0; a < g.dim; ++a)
    for (std::size_t x = 0; x < g.voxels(); ++x) {
      // shifted by the first sample so identical samples give exactly 0
      const double ref = maps[0].map[a][x];
      double s = 0, s2 = 0;
      for (const auto& m : maps) {
        const double d = m.map[a][x] - ref;
        s += d;
        s2 += d * d;
      }
      out[x] += std::max(0.0, (s2 - s * s / n) / (n - 1));
    }
  for (double& v : out.values()) v = std::sqrt(v);
  return out;
}

template <class Real>
PredictionResult predict_bayesian(net::NetModel<Real>& model, const Field64& moving, const Field64& target,
                                  const PredictionConfig& cfg) {
  cfg.validate();
  if (cfg.num_samples < 2) throw UsageError("bayesian prediction needs >= 2 samples");
  const GridSpec& g = moving.grid();
  const FluidKernel kern(cfg.shooting.kernel, g);
  PredictionResult res;
  std::vector<VField64> moms(cfg.num_samples);
  std::vector<DeformationMap<double>> maps(cfg.num_samples);
  std::vector<StageTimings> times(cfg.num_samples);
  std::vector<PatchStats> stats(cfg.num_samples);
  parallel_for(static_cast<std::size_t>(cfg.num_samples), cfg.workers, [&](std::size_t s) {
    net::NetModel<Real> local = model;  // forward caches activations, so each worker owns a copy
    moms[s] = predict_momentum(local, moving, target, cfg, net::Mode::mc_dropout, derive_seed(cfg.seed, s),
                               &times[s], &stats[s]);
    predict_detail::Stopwatch sw;
    maps[s] = shoot(moms[s], cfg.shooting, kern).state.phi_inv;
    times[s].shoot += sw.lap();
  });
  res.m0_pred = VField64(g);
  for (int s = 0; s < cfg.num_samples; ++s) {
    axpy(1.0, moms[s], res.m0_pred);
    res.timings += times[s];
  }
  for (int d = 0; d < g.dim; ++d)
    for (double& v : res.m0_pred[d].values()) v /= cfg.num_samples;
  res.uncertainty = map_uncertainty(maps);
  res.samples = std::move(maps);
  res.patches = stats[0];
  predict_detail::Stopwatch sw;
  res.phi_inv = shoot(res.m0_pred, cfg.shooting, kern).state.phi_inv;
  res.timings.shoot += sw.lap();
  res.warped = warp_image(moving, res.phi_inv);
  res.min_jacobian_det = min_value(jacobian_determinant(res.phi_inv));
  return res;
}

/// Full pipeline: momentum (deterministic or MC mean), shoot, warp, det report.
template <class Real>
PredictionResult predict_and_register(net::NetModel<Real>& model, const Field64& moving, const Field64& target,
                                      const PredictionConfig& cfg) {
  if (cfg.mode == PredictMode::bayesian) return predict_bayesian(model, moving, target, cfg);
  PredictionResult res;
  res.m0_pred = predict_momentum(model, moving, target, cfg, net::Mode::eval, 0, &res.timings, &res.patches);
  predict_detail::Stopwatch sw;
  res.phi_inv = shoot(res.m0_pred, cfg.shooting).state.phi_inv;
  res.timings.shoot += sw.lap();
  res.warped = warp_image(moving, res.phi_inv);
  res.min_jacobian_det = min_value(jacobian_determinant(res.phi_inv));
  return res;
}

}  // namespace mforge
