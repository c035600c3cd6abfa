#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mforge/grid.hpp"

namespace mforge {

using Index3 = std::array<int, 3>;

/// Starts {0, s, 2s, ...} plus a final clamped start at n - p when the regular
/// ones stop short of the end.
inline std::vector<int> axis_starts(int n, int p, int s) {
  if (p < 1 || s < 1) throw UsageError("patch size and stride must be >= 1");
  if (s > p) throw UsageError("stride must not exceed patch size");
  if (p > n) throw DataError("patch size " + std::to_string(p) + " exceeds grid size " + std::to_string(n));
  std::vector<int> out;
  for (int x = 0; x + p <= n; x += s) out.push_back(x);
  if (out.back() + p < n) out.push_back(n - p);
  return out;
}

struct PatchGrid {
  GridSpec grid;
  Index3 patch_size{1, 1, 1};
  Index3 stride{1, 1, 1};
  std::vector<Index3> positions;

  std::size_t count() const { return positions.size(); }
  std::size_t patch_voxels() const {
    return static_cast<std::size_t>(patch_size[0]) * patch_size[1] * patch_size[2];
  }
};

/// Positions ordered with axis 0 fastest, like voxels.
inline PatchGrid plan_patches(const GridSpec& g, int patch_size = 15, int stride = 14) {
  g.validate();
  PatchGrid pg;
  pg.grid = g;
  std::array<std::vector<int>, 3> starts{std::vector<int>{0}, std::vector<int>{0}, std::vector<int>{0}};
  for (int a = 0; a < g.dim; ++a) {
    pg.patch_size[a] = patch_size;
    pg.stride[a] = stride;
    starts[a] = axis_starts(g.size[a], patch_size, stride);
  }
  for (int z : starts[2])
    for (int y : starts[1])
      for (int x : starts[0]) pg.positions.push_back({x, y, z});
  return pg;
}

/// Copies the block at `start` into a dense buffer, axis 0 fastest.
template <class Real, class Out = float>
std::vector<Out> extract_patch(const ScalarField<Real>& f, const Index3& start, const Index3& size) {
  const GridSpec& g = f.grid();
  for (int a = 0; a < 3; ++a)
    if (start[a] < 0 || start[a] + size[a] > g.size[a]) throw DataError("patch out of bounds");
  std::vector<Out> out(static_cast<std::size_t>(size[0]) * size[1] * size[2]);
  std::size_t k = 0;
  for (int z = 0; z < size[2]; ++z)
    for (int y = 0; y < size[1]; ++y) {
      const std::size_t row = g.index(start[0], start[1] + y, start[2] + z);
      for (int x = 0; x < size[0]; ++x) out[k++] = static_cast<Out>(f[row + x]);
    }
  return out;
}

struct PatchJob {
  std::size_t index = 0;
  Index3 start{0, 0, 0};
  std::vector<float> moving_patch;
  std::vector<float> target_patch;
  bool pruned = false;
};

inline bool prune(const PatchJob& job, double background_threshold = 0.01) {
  auto below = [&](const std::vector<float>& p) {
    return std::all_of(p.begin(), p.end(), [&](float v) { return v <= background_threshold; });
  };
  return below(job.moving_patch) && below(job.target_patch);
}

struct PatchStats {
  std::size_t total = 0;
  std::size_t pruned = 0;
  std::size_t kept = 0;
};

struct PatchJobs {
  std::vector<PatchJob> jobs;
  PatchStats stats;
};

/// Extracts every planned patch pair and flags background-only ones. Pruned
/// jobs keep their start but drop the patch buffers.
template <class Real>
PatchJobs make_jobs(const ScalarField<Real>& moving, const ScalarField<Real>& target, const PatchGrid& plan,
                    double background_threshold = 0.01) {
  require_same_grid(moving.grid(), target.grid(), "make_jobs");
  require_same_grid(moving.grid(), plan.grid, "make_jobs");
  PatchJobs out;
  out.jobs.reserve(plan.count());
  for (std::size_t i = 0; i < plan.count(); ++i) {
    PatchJob j;
    j.index = i;
    j.start = plan.positions[i];
    j.moving_patch = extract_patch(moving, j.start, plan.patch_size);
    j.target_patch = extract_patch(target, j.start, plan.patch_size);
    j.pruned = prune(j, background_threshold);
    if (j.pruned) {
      j.moving_patch.clear();
      j.target_patch.clear();
      j.moving_patch.shrink_to_fit();
      j.target_patch.shrink_to_fit();
    }
    out.jobs.push_back(std::move(j));
  }
  out.stats.total = plan.count();
  for (const auto& j : out.jobs) out.stats.pruned += j.pruned;
  out.stats.kept = out.stats.total - out.stats.pruned;
  return out;
}

/// Number of window positions when every voxel offset is a start (stride 1).
inline std::uint64_t dense_window_count(const GridSpec& g, int patch_size) {
  std::uint64_t n = 1;
  for (int a = 0; a < g.dim; ++a) n *= static_cast<std::uint64_t>(g.size[a] - patch_size + 1);
  return n;
}

/// One predicted momentum patch: `components` holds d buffers laid out like extract_patch.
struct MomentumPatch {
  Index3 start{0, 0, 0};
  std::vector<std::vector<float>> components;
};

/// Running per-voxel sum and overlap count; deposits are accumulated in double
/// in call order, so results depend only on the patch order.
class StitchAccumulator {
 public:
  StitchAccumulator(const GridSpec& g, const Index3& patch_size)
      : sum_(g), count_(g), patch_size_(patch_size) {
    for (int a = g.dim; a < 3; ++a) patch_size_[a] = 1;
  }

  void deposit(const MomentumPatch& p) {
    const GridSpec& g = count_.grid();
    for (int a = 0; a < 3; ++a)
      if (p.start[a] < 0 || p.start[a] + patch_size_[a] > g.size[a]) throw DataError("stitch: patch out of bounds");
    if (static_cast<int>(p.components.size()) != g.dim) throw DataError("stitch: component count mismatch");
    const std::size_t pv = static_cast<std::size_t>(patch_size_[0]) * patch_size_[1] * patch_size_[2];
    for (const auto& c : p.components)
      if (c.size() != pv) throw DataError("stitch: patch size mismatch");
    std::size_t k = 0;
    for (int z = 0; z < patch_size_[2]; ++z)
      for (int y = 0; y < patch_size_[1]; ++y) {
        const std::size_t row = g.index(p.start[0], p.start[1] + y, p.start[2] + z);
        for (int x = 0; x < patch_size_[0]; ++x, ++k) {
          count_[row + x] += 1.0;
          for (int a = 0; a < g.dim; ++a) sum_[a][row + x] += p.components[a][k];
        }
      }
  }

  const Field64& count() const { return count_; }

  /// sum / count, and 0 where nothing was deposited.
  VField64 finish() const {
    VField64 out(count_.grid());
    for (int a = 0; a < out.dim(); ++a)
      for (std::size_t i = 0; i < out.voxels(); ++i)
        out[a][i] = count_[i] > 0 ? sum_[a][i] / count_[i] : 0.0;
    return out;
  }

 private:
  VField64 sum_;
  Field64 count_;
  Index3 patch_size_;
};

inline VField64 stitch(const std::vector<MomentumPatch>& patches, const GridSpec& g, const Index3& patch_size) {
  StitchAccumulator acc(g, patch_size);
  for (const auto& p : patches) acc.deposit(p);
  return acc.finish();
}

}  // namespace mforge
