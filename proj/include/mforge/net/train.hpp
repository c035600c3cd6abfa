#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "mforge/net/model.hpp"

namespace mforge::net {

struct TrainConfig {
  double learning_rate = 1e-4;
  double ms_decay = 0.9;
  double eps = 1e-8;
  int epochs = 10;
  int batch_size = 32;
  double dropout_rate = 0.3;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0)) throw UsageError("learning_rate must be > 0");
    if (epochs < 1) throw UsageError("epochs must be >= 1");
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (!(ms_decay >= 0 && ms_decay < 1)) throw UsageError("ms_decay must be in [0, 1)");
    if (!(dropout_rate >= 0 && dropout_rate < 1)) throw UsageError("dropout rate must be in [0, 1)");
  }
};

/// Mean-square accumulators, one per parameter, in NetModel::parameters() order.
template <class Real>
struct RmsPropState {
  std::vector<std::vector<Real>> ms;
  std::uint64_t steps = 0;

  void ensure(const std::vector<Param<Real>*>& params) {
    if (ms.size() == params.size()) return;
    ms.clear();
    for (auto* p : params) ms.emplace_back(p->value.size(), Real(0));
  }
};

/// s <- rho s + (1 - rho) g^2;  w <- w - lr g / (sqrt(s) + eps).
template <class Real>
void rmsprop_step(const std::vector<Param<Real>*>& params, RmsPropState<Real>& state, const TrainConfig& cfg) {
  state.ensure(params);
  const Real rho = static_cast<Real>(cfg.ms_decay), lr = static_cast<Real>(cfg.learning_rate),
             eps = static_cast<Real>(cfg.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    if (p.grad.size() != p.value.size()) throw DataError("rmsprop: gradient shape mismatch for " + p.name);
    auto& s = state.ms[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const Real g = p.grad[i];
      s[i] = rho * s[i] + (Real(1) - rho) * g * g;
      p.value[i] -= lr * g / (std::sqrt(s[i]) + eps);
    }
  }
  ++state.steps;
}

/// One training example: single-channel patches and one momentum patch per axis.
struct TrainSample {
  std::vector<float> moving;
  std::vector<float> target;
  std::vector<std::vector<float>> momentum;
};

template <class Real>
struct Batch {
  Tensor<Real> moving, target;
  std::vector<Tensor<Real>> momentum;
};

template <class Real>
Batch<Real> make_batch(const std::vector<TrainSample>& data, const std::vector<std::size_t>& idx, const NetArch& a) {
  std::vector<int> shape{static_cast<int>(idx.size()), 1};
  for (int d = 0; d < a.dim; ++d) shape.push_back(a.patch);
  Batch<Real> b{Tensor<Real>(shape), Tensor<Real>(shape), {}};
  for (int d = 0; d < a.dim; ++d) b.momentum.emplace_back(shape);
  const std::size_t P = b.moving.spatial_size();
  for (std::size_t n = 0; n < idx.size(); ++n) {
    const TrainSample& s = data[idx[n]];
    if (s.moving.size() != P || s.target.size() != P || static_cast<int>(s.momentum.size()) != a.dim)
      throw DataError("training sample " + std::to_string(idx[n]) + " does not match the architecture");
    std::copy(s.moving.begin(), s.moving.end(), b.moving.sample(n));
    std::copy(s.target.begin(), s.target.end(), b.target.sample(n));
    for (int d = 0; d < a.dim; ++d) {
      if (s.momentum[d].size() != P) throw DataError("training sample momentum size mismatch");
      std::copy(s.momentum[d].begin(), s.momentum[d].end(), b.momentum[d].sample(n));
    }
  }
  return b;
}

struct TrainReport {
  std::vector<double> epoch_loss;
  std::uint64_t steps = 0;
};

/// Epochs of seeded shuffled minibatches; the loss curve holds the sample-weighted
/// mean training loss of each epoch. `on_epoch` (optional) sees (epoch, loss).
template <class Real>
TrainReport train(NetModel<Real>& model, RmsPropState<Real>& opt, const std::vector<TrainSample>& data,
                  const TrainConfig& cfg, const std::function<void(int, double)>& on_epoch = {}) {
  cfg.validate();
  if (data.empty()) throw DataError("train: empty dataset");
  model.set_dropout_rate(cfg.dropout_rate);
  TrainReport rep;
  std::vector<std::size_t> order(data.size());
  const auto params = model.parameters();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.next() % i)]);
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
      const Batch<Real> b = make_batch<Real>(data, idx, model.arch());
      model.zero_grad();
      const auto pred = model.forward(b.moving, b.target, Mode::train, derive_seed(cfg.seed ^ 0x5EEDull, opt.steps));
      const auto loss = l1_loss(pred, b.momentum);
      if (!std::isfinite(loss.loss)) throw NumericalError("training loss is not finite");
      model.backward(loss.grad);
      rmsprop_step(params, opt, cfg);
      sum += loss.loss * static_cast<double>(idx.size());
    }
    rep.epoch_loss.push_back(sum / static_cast<double>(data.size()));
    if (on_epoch) on_epoch(epoch, rep.epoch_loss.back());
  }
  model.for_each_layer([](Layer<Real>& l) { l.clear_cache(); });
  rep.steps = opt.steps;
  return rep;
}

}  // namespace mforge::net
