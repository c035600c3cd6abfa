#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mforge/field_io.hpp"
#include "mforge/field_ops.hpp"
#include "mforge/shooting.hpp"
#include "test_util.hpp"

using namespace mforge;
using mforge::testing::max_abs_diff;
using mforge::testing::random_field;

namespace {

// Sum over every node of the periodic tent-function weight; shares no code with interpolate().
double tent_oracle(const Field64& f, const std::array<double, 3>& p) {
  const GridSpec& g = f.grid();
  double acc = 0.0;
  for (std::size_t i = 0; i < g.voxels(); ++i) {
    auto c = g.coords(i);
    double w = 1.0;
    for (int a = 0; a < g.dim; ++a) {
      double d = std::fmod(p[a] - c[a], static_cast<double>(g.size[a]));
      if (d < 0) d += g.size[a];
      d = std::min(d, g.size[a] - d);
      w *= std::max(0.0, 1.0 - d);
    }
    acc += w * f[i];
  }
  return acc;
}

double stencil_oracle(const Field64& f, std::size_t i, int axis) {
  const GridSpec& g = f.grid();
  auto c = g.coords(i);
  auto up = c, dn = c;
  up[axis] = (c[axis] + 1) % g.size[axis];
  dn[axis] = (c[axis] - 1 + g.size[axis]) % g.size[axis];
  return (f.at(up[0], up[1], up[2]) - f.at(dn[0], dn[1], dn[2])) / (2.0 * g.spacing[axis]);
}

}  // namespace

TEST(GridSpec, RejectsTinyAxes) {
  EXPECT_THROW(GridSpec::make({3, 8}), DataError);
  EXPECT_NO_THROW(GridSpec::make({4, 8}));
  EXPECT_THROW(GridSpec::make({8}), DataError);
}

TEST(Interpolate, LinearMidpointAndNodes) {
  Field64 f(GridSpec::make({8, 8}));
  f.at(1, 0) = 2.0;
  EXPECT_DOUBLE_EQ(interpolate(f, {0.5, 0.0, 0.0}), 1.0);
  std::mt19937_64 rng(1);
  const Field64 r = random_field(f.grid(), rng);
  for (int x = 0; x < 8; ++x)
    for (int y = 0; y < 8; ++y)
      EXPECT_EQ(interpolate(r, {double(x), double(y), 0.0}), r.at(x, y));
}

TEST(Interpolate, MatchesTentOracle) {
  std::mt19937_64 rng(2);
  const Field64 f = random_field(GridSpec::make({8, 8}), rng);
  std::uniform_real_distribution<double> u(-12.0, 20.0);
  for (int k = 0; k < 100; ++k) {
    const std::array<double, 3> p{u(rng), u(rng), 0.0};
    EXPECT_NEAR(interpolate(f, p), tent_oracle(f, p), 1e-12);
  }
  const Field64 f3 = random_field(GridSpec::make({5, 6, 4}), rng);
  for (int k = 0; k < 30; ++k) {
    const std::array<double, 3> p{u(rng), u(rng), u(rng)};
    EXPECT_NEAR(interpolate(f3, p), tent_oracle(f3, p), 1e-12);
  }
}

TEST(Interpolate, RejectsNonFinitePosition) {
  Field64 f(GridSpec::make({4, 4}));
  EXPECT_THROW(interpolate(f, {NAN, 0.0, 0.0}), DataError);
  EXPECT_THROW(interpolate(f, {0.0, INFINITY, 0.0}), DataError);
}

TEST(Interpolate, PositionDerivativeMatchesFiniteDifference) {
  std::mt19937_64 rng(3);
  const Field64 f = random_field(GridSpec::make({6, 7}), rng);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int k = 0; k < 20; ++k) {
    const std::array<double, 3> p{2 + u(rng), 3 + u(rng), 0.0};
    std::array<double, 3> dp;
    interpolate_with_gradient(f, p, dp);
    for (int a = 0; a < 2; ++a) {
      auto pp = p, pm = p;
      pp[a] += 1e-6;
      pm[a] -= 1e-6;
      EXPECT_NEAR(dp[a], (interpolate(f, pp) - interpolate(f, pm)) / 2e-6, 1e-7);
    }
  }
}

TEST(WarpImage, IdentityIsBitwiseAndShiftIsCircular) {
  std::mt19937_64 rng(4);
  const GridSpec g = GridSpec::make({8, 6});
  const Field64 S = random_field(g, rng);
  const auto id = DeformationMap<double>::identity(g);
  EXPECT_TRUE(warp_image(S, id) == S);

  auto shifted = id;
  for (auto& v : shifted.map[0].values()) v += 1.0;
  const Field64 w = warp_image(S, shifted);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x) EXPECT_EQ(w.at(x, y), S.at((x + 1) % 8, y));
}

TEST(WarpImage, MatchesPerVoxelOracleOnSmoothMap) {
  std::mt19937_64 rng(5);
  const GridSpec g = GridSpec::make({12, 10});
  const Field64 S = random_field(g, rng);
  const auto u = mforge::testing::smooth_vector(g, rng, 1.5);
  const auto phi = DeformationMap<double>::from_displacement(u);
  const Field64 w = warp_image(S, phi);
  for (std::size_t i = 0; i < g.voxels(); ++i)
    EXPECT_NEAR(w[i], tent_oracle(S, map_position(phi, i)), 1e-12);
  EXPECT_THROW(warp_image(S, DeformationMap<double>::identity(GridSpec::make({10, 12}))), DataError);
}

TEST(Gradient, ConstantLinearityAndStencil) {
  GridSpec g = GridSpec::make({9, 7});
  g.spacing = {0.5, 2.0, 1.0};
  const Field64 c(g, 3.25);
  const auto gc = gradient(c);
  for (int a = 0; a < 2; ++a)
    for (double v : gc[a].values()) EXPECT_EQ(v, 0.0);

  std::mt19937_64 rng(6);
  const Field64 f = random_field(g, rng), h = random_field(g, rng);
  const auto gf = gradient(f);
  for (int a = 0; a < 2; ++a)
    for (std::size_t i = 0; i < g.voxels(); ++i) EXPECT_NEAR(gf[a][i], stencil_oracle(f, i, a), 1e-14);

  Field64 comb(g);
  for (std::size_t i = 0; i < g.voxels(); ++i) comb[i] = 2.5 * f[i] - 0.75 * h[i];
  const auto gcomb = gradient(comb);
  const auto gh = gradient(h);
  for (int a = 0; a < 2; ++a)
    for (std::size_t i = 0; i < g.voxels(); ++i)
      EXPECT_NEAR(gcomb[a][i], 2.5 * gf[a][i] - 0.75 * gh[a][i], 1e-12);
}

TEST(Gradient, RampWrapsPeriodically) {
  const GridSpec g = GridSpec::make({8, 4});
  Field64 f(g);
  for (std::size_t i = 0; i < g.voxels(); ++i) f[i] = g.coords(i)[0];
  const auto gf = gradient(f);
  for (int y = 0; y < 4; ++y) {
    for (int x = 1; x < 7; ++x) EXPECT_DOUBLE_EQ(gf[0].at(x, y), 1.0);
    // (f[1] - f[7]) / 2 and (f[0] - f[6]) / 2
    EXPECT_DOUBLE_EQ(gf[0].at(0, y), -3.0);
    EXPECT_DOUBLE_EQ(gf[0].at(7, y), -3.0);
  }
}

TEST(Jacobian, ConstantLinearAndComponentwise) {
  const GridSpec g = GridSpec::make({16, 16});
  const VField64 c(g, 1.5);
  const auto Jc = jacobian(c);
  for (const auto& e : Jc.entries)
    for (double v : e.values()) EXPECT_EQ(v, 0.0);

  const double A[2][2] = {{0.3, -0.2}, {0.7, 0.1}};
  VField64 lin(g);
  for (std::size_t i = 0; i < g.voxels(); ++i) {
    auto x = g.coords(i);
    for (int r = 0; r < 2; ++r) lin[r][i] = A[r][0] * x[0] + A[r][1] * x[1];
  }
  const auto J = jacobian(lin);
  for (int x = 1; x < 15; ++x)
    for (int y = 1; y < 15; ++y)
      for (int r = 0; r < 2; ++r)
        for (int s = 0; s < 2; ++s) EXPECT_NEAR(J(r, s).at(x, y), A[r][s], 1e-12);

  std::mt19937_64 rng(7);
  const auto v = mforge::testing::random_vector(g, rng);
  const auto Jv = jacobian(v);
  for (int r = 0; r < 2; ++r)
    for (int s = 0; s < 2; ++s)
      for (std::size_t i = 0; i < g.voxels(); ++i) EXPECT_NEAR(Jv(r, s)[i], stencil_oracle(v[r], i, s), 1e-14);
}

TEST(JacobianDeterminant, IdentityTranslationAndShotMap) {
  const GridSpec g = GridSpec::make({32, 32});
  const auto id = DeformationMap<double>::identity(g);
  const Field64 det_id = jacobian_determinant(id);
  for (double v : det_id.values()) EXPECT_EQ(v, 1.0);
  auto tr = id;
  for (auto& v : tr.map[0].values()) v += 2.3;
  for (auto& v : tr.map[1].values()) v -= 0.4;
  const Field64 det_tr = jacobian_determinant(tr);
  for (double v : det_tr.values()) EXPECT_NEAR(v, 1.0, 1e-12);

  std::mt19937_64 rng(8);
  const auto m0 = mforge::testing::smooth_vector(g, rng, 0.004);
  const auto res = shoot(m0, ShootingConfig{});
  EXPECT_GT(max_norm(res.state.phi_inv.displacement()), 0.5);
  EXPECT_GT(min_value(jacobian_determinant(res.state.phi_inv)), 0.0);
}

TEST(FieldIO, RoundTripIsBitExact) {
  std::mt19937_64 rng(9);
  GridSpec g = GridSpec::make({6, 5, 4});
  g.spacing = {0.5, 1.25, 2.0};
  const Field64 f = random_field(g, rng);
  const auto bytes = encode_field(f);
  const auto back = to_scalar<double>(decode_field(bytes));
  EXPECT_TRUE(back == f);
  EXPECT_EQ(encode_field(back), bytes);
  // 4 magic + 2 version + 3 header bytes + 3 sizes + 3 spacings + data
  EXPECT_EQ(bytes.size(), 4u + 2 + 3 + 12 + 12 + 8 * g.voxels());

  const auto vf = mforge::testing::random_vector(GridSpec::make({8, 4}), rng).cast<float>();
  const auto vb = encode_field(vf);
  EXPECT_EQ(vb[8], 0);  // dtype f32
  EXPECT_TRUE(to_vector<float>(decode_field(vb)) == vf);
}

TEST(FieldIO, RejectsCorruptInput) {
  std::vector<unsigned char> bad = {'M', 'M', 'R', 'X', 1, 0};
  EXPECT_THROW(decode_field(bad), DataError);
  auto good = encode_field(Field64(GridSpec::make({4, 4}), 1.0));
  good.pop_back();
  EXPECT_THROW(decode_field(good), DataError);
}
