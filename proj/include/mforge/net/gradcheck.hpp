#pragma once

// Finite-difference checks for single layers, used by the tests, the acceptance
// runner and regctl selftest.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "mforge/net/layers.hpp"

namespace mforge::net {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::string where;
};

inline double rel_err(double a, double n) {
  const double scale = std::max({std::abs(a), std::abs(n), 1e-7});
  return std::abs(a - n) / scale;
}

/// Random layer case: kind fixed, shapes/dims drawn from rng. Checks every input
/// entry and every parameter entry of the loss sum(w * layer(x)).
inline GradCheckResult gradcheck_layer(LayerKind kind, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> ch(1, 3), ext(3, 7), bat(1, 2), dimd(0, 3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int dims = dimd(rng) == 0 ? 3 : 2;
  const int cin = ch(rng), cout = ch(rng);
  LayerSpec spec;
  switch (kind) {
    case LayerKind::conv: spec = conv_spec(cin, cout); break;
    case LayerKind::conv_stride2: spec = conv_s2_spec(cin, cout); break;
    case LayerKind::deconv_stride2: spec = deconv_s2_spec(cin, cout); break;
    case LayerKind::prelu: spec = prelu_spec(cin); break;
    case LayerKind::dropout: spec = dropout_spec(cin, 0.4); break;
    default: break;
  }
  Layer<double> layer(spec, dims, "case");
  mforge::Rng init(rng());
  layer.init(init);
  for (auto& p : layer.params())
    for (auto& v : p.value) v = u(rng);

  std::array<int, 3> big{1, 1, 1};
  for (int a = 3 - dims; a < 3; ++a) big[a] = dims == 3 ? std::min(ext(rng), 5) : ext(rng);
  std::vector<int> shape{bat(rng), spec.in_channels};
  std::array<int, 3> in_ext = big;
  if (kind == LayerKind::deconv_stride2)
    for (int a = 3 - dims; a < 3; ++a) in_ext[a] = (big[a] + 1) / 2;
  for (int a = 3 - dims; a < 3; ++a) shape.push_back(in_ext[a]);
  Tensor<double> x(shape);
  for (auto& v : x.data) {
    v = u(rng);
    // keep prelu inputs off the kink
    if (kind == LayerKind::prelu && std::abs(v) < 1e-2) v = v < 0 ? -0.5 : 0.5;
  }

  const std::uint64_t mask_seed = rng();
  auto run = [&](const Tensor<double>& in) {
    mforge::Rng r(mask_seed);
    return layer.forward(in, Mode::train, &r, &big);
  };
  Tensor<double> y = run(x);
  Tensor<double> w(y.shape);
  for (auto& v : w.data) v = u(rng);
  auto loss = [&](const Tensor<double>& out) {
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += w.data[i] * out.data[i];
    return s;
  };
  layer.zero_grad();
  y = run(x);
  const Tensor<double> gx = layer.backward(w);
  std::vector<std::vector<double>> gp;
  for (auto& p : layer.params()) gp.push_back(p.grad);

  GradCheckResult res;
  const double eps = 1e-6;
  auto note = [&](double a, double n, const std::string& what) {
    const double e = rel_err(a, n);
    ++res.checked;
    if (e > res.max_rel_err) {
      res.max_rel_err = e;
      res.where = std::string(to_string(kind)) + " " + what + " analytic " + std::to_string(a) + " numeric " +
                  std::to_string(n);
    }
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor<double> xp = x, xm = x;
    xp.data[i] += eps;
    xm.data[i] -= eps;
    note(gx.data[i], (loss(run(xp)) - loss(run(xm))) / (2 * eps), "input[" + std::to_string(i) + "]");
  }
  for (std::size_t k = 0; k < layer.params().size(); ++k) {
    auto& p = layer.params()[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double keep = p.value[i];
      p.value[i] = keep + eps;
      const double lp = loss(run(x));
      p.value[i] = keep - eps;
      const double lm = loss(run(x));
      p.value[i] = keep;
      note(gp[k][i], (lp - lm) / (2 * eps), p.name + "[" + std::to_string(i) + "]");
    }
  }
  return res;
}

}  // namespace mforge::net
