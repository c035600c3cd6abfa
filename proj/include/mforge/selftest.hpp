#pragma once

// Quick oracle and invariant checks run by `regctl selftest`. Each check is small
// enough to finish in well under a second.

#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mforge/eval.hpp"
#include "mforge/lddmm.hpp"
#include "mforge/net/checkpoint.hpp"
#include "mforge/net/gradcheck.hpp"
#include "mforge/patches.hpp"
#include "mforge/shooting.hpp"

namespace mforge {

struct SelfCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace selftest_detail {

inline VField64 random_vector(const GridSpec& g, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  VField64 v(g);
  for (int a = 0; a < g.dim; ++a)
    for (double& x : v[a].values()) x = u(rng);
  return v;
}

inline Field64 random_image(const GridSpec& g, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Field64 f(g);
  for (double& x : f.values()) x = u(rng);
  return f;
}

inline SelfCheck kernel_round_trip() {
  std::mt19937_64 rng(1);
  const GridSpec g = GridSpec::make({16, 20});
  const FluidKernel k(KernelParams{}, g);
  const VField64 u = random_vector(g, rng, 1.0);
  VField64 back = k.apply_L(k.apply_K(u));
  axpy(-1.0, u, back);
  const double rel = std::sqrt(dot(back, back) / dot(u, u));
  return {"kernel L(K(u)) = u", rel <= 1e-10, "relative error " + format_number(rel)};
}

inline SelfCheck zero_momentum_identity() {
  const GridSpec g = GridSpec::make({12, 10});
  const auto phi = shoot(VField64(g), ShootingConfig{}).state.phi_inv;
  const auto id = DeformationMap<double>::identity(g);
  double err = 0;
  for (int a = 0; a < 2; ++a)
    for (std::size_t i = 0; i < g.voxels(); ++i) err = std::max(err, std::abs(phi.map[a][i] - id.map[a][i]));
  return {"zero momentum shoots to identity", err == 0.0, "max error " + format_number(err)};
}

inline SelfCheck energy_gradient_fd() {
  std::mt19937_64 rng(2);
  const GridSpec g = GridSpec::make({8, 8});
  EnergyParams p;
  p.shooting.num_steps = 5;
  const Field64 S = random_image(g, rng), T = random_image(g, rng);
  const VField64 m0 = random_vector(g, rng, 0.01);
  const VField64 grad = energy_gradient(m0, S, T, p);
  double worst = 0;
  for (int k = 0; k < 3; ++k) {
    const VField64 dir = random_vector(g, rng, 1.0);
    VField64 plus = m0, minus = m0;
    const double eps = 1e-7;
    axpy(eps, dir, plus);
    axpy(-eps, dir, minus);
    const double fd = (energy(plus, S, T, p).total - energy(minus, S, T, p).total) / (2 * eps);
    worst = std::max(worst, std::abs(dot(grad, dir) - fd) / std::max(std::abs(fd), 1e-300));
  }
  return {"energy gradient matches finite differences", worst <= 1e-5, "relative error " + format_number(worst)};
}

inline SelfCheck layer_gradients() {
  std::mt19937_64 rng(3);
  double worst = 0;
  std::string where;
  for (auto kind : {net::LayerKind::conv, net::LayerKind::conv_stride2, net::LayerKind::deconv_stride2,
                    net::LayerKind::prelu, net::LayerKind::dropout}) {
    const auto r = net::gradcheck_layer(kind, rng);
    if (r.max_rel_err >= worst) {
      worst = r.max_rel_err;
      where = r.where;
    }
  }
  return {"layer gradients match finite differences", worst <= 1e-5, "worst " + format_number(worst) + " at " + where};
}

inline SelfCheck patch_coverage() {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> size(4, 40);
  for (int t = 0; t < 100; ++t) {
    const GridSpec g = GridSpec::make({size(rng), size(rng)});
    const int p = std::uniform_int_distribution<int>(1, std::min(g.size[0], g.size[1]))(rng);
    const int s = std::uniform_int_distribution<int>(1, p)(rng);
    const PatchGrid plan = plan_patches(g, p, s);
    std::vector<int> hit(g.voxels(), 0);
    for (const auto& st : plan.positions)
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x) hit[g.index(st[0] + x, st[1] + y)] = 1;
    for (int h : hit)
      if (!h) return {"patch windows cover the grid", false, "uncovered voxel for patch " + std::to_string(p)};
  }
  return {"patch windows cover the grid", true, "100 grids"};
}

inline SelfCheck percentile_definition() {
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  const double q = percentiles(v, {50})[0];
  return {"median of 1..100 is 50.5", q == 50.5, "got " + format_number(q)};
}

inline SelfCheck checkpoint_round_trip() {
  net::NetArch a;
  a.patch = 7;
  a.enc1 = 3;
  a.enc2 = 4;
  a.dec1 = 4;
  a.dec2 = 3;
  net::NetModel<float> m(a, 5), back(a, 6);
  m.meta["momentum_scale"] = 12.5;
  const auto bytes = net::encode_checkpoint(m);
  net::decode_checkpoint(bytes, back);
  const bool same = net::encode_checkpoint(back) == bytes;
  return {"checkpoint round trip is bit exact", same, same ? "ok" : "bytes differ"};
}

}  // namespace selftest_detail

inline std::vector<SelfCheck> run_selftest() {
  using namespace selftest_detail;
  std::vector<std::function<SelfCheck()>> checks{kernel_round_trip,    zero_momentum_identity, energy_gradient_fd,
                                                 layer_gradients,      patch_coverage,         percentile_definition,
                                                 checkpoint_round_trip};
  std::vector<SelfCheck> out;
  for (const auto& c : checks) {
    try {
      out.push_back(c());
    } catch (const std::exception& e) {
      out.push_back({"(check threw)", false, e.what()});
    }
  }
  return out;
}

}  // namespace mforge
