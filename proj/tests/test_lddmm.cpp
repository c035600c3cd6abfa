#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mforge/lddmm.hpp"
#include "test_util.hpp"

using namespace mforge;
using mforge::testing::random_field;
using mforge::testing::random_vector;
using mforge::testing::smooth_vector;

namespace {

EnergyParams small_params(int steps = 5) {
  EnergyParams p;
  p.shooting.num_steps = steps;
  return p;
}

double fd_directional(const VField64& m0, const VField64& dir, const Field64& S, const Field64& T,
                      const EnergyParams& p, double eps) {
  VField64 plus = m0, minus = m0;
  axpy(eps, dir, plus);
  axpy(-eps, dir, minus);
  return (energy(plus, S, T, p).total - energy(minus, S, T, p).total) / (2 * eps);
}

}  // namespace

TEST(Energy, ZeroMomentum) {
  std::mt19937_64 rng(30);
  const GridSpec g = GridSpec::make({16, 16});
  const Field64 S = random_field(g, rng, 0, 1), T = random_field(g, rng, 0, 1);
  const auto p = small_params();
  const auto e0 = energy(VField64(g), S, S, p);
  EXPECT_EQ(e0.total, 0.0);
  const auto e1 = energy(VField64(g), S, T, p);
  double ssd = 0;
  for (std::size_t i = 0; i < g.voxels(); ++i) ssd += (S[i] - T[i]) * (S[i] - T[i]);
  EXPECT_EQ(e1.reg, 0.0);
  EXPECT_DOUBLE_EQ(e1.image, ssd / 0.04);
}

TEST(Energy, MatchesIndependentEvaluation) {
  std::mt19937_64 rng(31);
  GridSpec g = GridSpec::make({12, 10});
  g.spacing = {1.0, 1.5, 1.0};
  const Field64 S = random_field(g, rng, 0, 1), T = random_field(g, rng, 0, 1);
  const auto m0 = smooth_vector(g, rng, 0.003);
  const auto p = small_params();
  const auto e = energy(m0, S, T, p);

  const FluidKernel k(p.kernel(), g);
  const auto phi = shoot(m0, p.shooting).state.phi_inv;
  const auto v = k.apply_K(m0);
  double reg = 0, img = 0;
  for (std::size_t x = 0; x < g.voxels(); ++x) {
    for (int a = 0; a < 2; ++a) reg += m0[a][x] * v[a][x];
    // bilinear lookup written out by hand
    const double px = phi.map[0][x], py = phi.map[1][x];
    const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
    const double tx = px - x0, ty = py - y0;
    auto at = [&](int i, int j) { return S.at(((i % 12) + 12) % 12, ((j % 10) + 10) % 10); };
    const double val = (1 - tx) * (1 - ty) * at(x0, y0) + tx * (1 - ty) * at(x0 + 1, y0) +
                       (1 - tx) * ty * at(x0, y0 + 1) + tx * ty * at(x0 + 1, y0 + 1);
    img += (val - T[x]) * (val - T[x]);
  }
  reg *= 1.5;
  img *= 1.5 / 0.04;
  EXPECT_NEAR(e.reg, reg, 1e-10 * std::abs(reg));
  EXPECT_NEAR(e.image, img, 1e-10 * img);
  EXPECT_NEAR(e.total, reg + img, 1e-10 * (reg + img));
}

TEST(EnergyGradient, ZeroAtGlobalMinimum) {
  std::mt19937_64 rng(32);
  const GridSpec g = GridSpec::make({8, 8});
  const Field64 S = random_field(g, rng, 0, 1);
  const auto grad = energy_gradient(VField64(g), S, S, small_params());
  EXPECT_EQ(max_abs(grad), 0.0);
}

TEST(EnergyGradient, RegularizerTermIsTwoKm) {
  std::mt19937_64 rng(33);
  const GridSpec g = GridSpec::make({8, 8});
  const auto m0 = smooth_vector(g, rng, 0.002);
  // A constant image makes the image term independent of the map.
  const Field64 S(g, 0.5);
  const auto grad = energy_gradient(m0, S, S, small_params());
  const auto expect = scaled(FluidKernel(KernelParams{}, g).apply_K(m0), 2.0);
  EXPECT_LE(mforge::testing::max_abs_diff(grad, expect), 1e-10 * max_abs(expect));
}

class GradientFd : public ::testing::TestWithParam<Integrator> {};

TEST_P(GradientFd, MatchesCentralDifferences) {
  std::mt19937_64 rng(34);
  const GridSpec g = GridSpec::make({8, 8});
  auto p = small_params(5);
  p.shooting.integrator = GetParam();
  const Field64 S = random_field(g, rng, 0, 1), T = random_field(g, rng, 0, 1);
  const auto m0 = random_vector(g, rng, -0.01, 0.01);
  const auto grad = energy_gradient(m0, S, T, p);
  for (int k = 0; k < 20; ++k) {
    const auto dir = random_vector(g, rng);
    const double analytic = dot(grad, dir);
    const double numeric = fd_directional(m0, dir, S, T, p, 1e-7);
    EXPECT_LE(std::abs(analytic - numeric), 1e-5 * std::abs(numeric)) << "direction " << k;
  }
}

INSTANTIATE_TEST_SUITE_P(Integrators, GradientFd, ::testing::Values(Integrator::rk4, Integrator::euler));

TEST(Optimize, IdenticalImagesStayAtZero) {
  std::mt19937_64 rng(35);
  const GridSpec g = GridSpec::make({16, 16});
  const Field64 S = random_field(g, rng, 0, 1);
  const auto res = optimize(S, S, small_params(), {.max_iters = 5});
  EXPECT_EQ(max_abs(res.m0), 0.0);
  EXPECT_TRUE(res.converged);
  EXPECT_EQ(res.energy_trace.front().image, 0.0);
}

TEST(Optimize, DecreasesEnergyMonotonically) {
  const GridSpec g = GridSpec::make({24, 24});
  Field64 S(g), T(g);
  for (std::size_t i = 0; i < g.voxels(); ++i) {
    auto c = g.coords(i);
    const double dx = c[0] - 11.5, dy = c[1] - 11.5;
    S[i] = std::exp(-(dx * dx + dy * dy) / 18.0);
    T[i] = std::exp(-((dx - 1.5) * (dx - 1.5) + dy * dy) / 18.0);
  }
  const auto res = optimize(S, T, small_params(10), {.max_iters = 40});
  ASSERT_GE(res.energy_trace.size(), 2u);
  for (std::size_t i = 1; i < res.energy_trace.size(); ++i)
    EXPECT_LT(res.energy_trace[i].total, res.energy_trace[i - 1].total);
  EXPECT_LT(res.energy_trace.back().image, 0.25 * res.energy_trace.front().image);
}

TEST(Optimize, RejectsBadArguments) {
  const GridSpec g = GridSpec::make({8, 8});
  EXPECT_THROW(optimize(Field64(g), Field64(g), small_params(), {.max_iters = 0}), UsageError);
  EXPECT_THROW(optimize(Field64(g), Field64(GridSpec::make({8, 4})), small_params()), DataError);
}
