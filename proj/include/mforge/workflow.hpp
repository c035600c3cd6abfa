#pragma once

// End-to-end steps shared by regctl and the acceptance runner.

#include <functional>
#include <vector>

#include "mforge/config.hpp"
#include "mforge/eval.hpp"

namespace mforge {

struct TrainedModel {
  net::NetModel<float> model;
  net::RmsPropState<float> opt;
  std::vector<double> epoch_loss;
  std::size_t samples = 0;
};

/// Cuts patches from the pairs, scales momenta by the inverse of their largest
/// norm, and trains a fresh model whose output convs start at zero. The scale is
/// stored in model.meta.
inline TrainedModel train_model(const std::vector<PairData>& pairs, const RunConfig& cfg,
                                const std::function<void(int, double)>& on_epoch = {}) {
  cfg.validate();
  if (pairs.empty()) throw DataError("no training pairs");
  const int dim = pairs.front().moving_A.grid().dim;
  std::vector<net::TrainSample> data = make_samples(pairs, cfg.sample_options());
  if (data.empty()) throw DataError("every training patch was pruned as background");
  const double mx = max_momentum_norm(data);
  const double scale = mx > 0 ? 1.0 / mx : 1.0;
  scale_momentum(data, scale);

  TrainedModel out{net::NetModel<float>(cfg.arch(dim), derive_seed(cfg.seed, 0)), {}, {}, data.size()};
  out.model.zero_heads();  // start from the zero-momentum (identity) predictor
  out.model.meta["momentum_scale"] = scale;
  out.model.meta["momentum_max"] = mx > 0 ? 1.0 : 0.0;
  net::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, 1);
  out.epoch_loss = net::train(out.model, out.opt, data, tc, on_epoch).epoch_loss;
  return out;
}

struct EvalResult {
  ErrorPool identity;
  ErrorPool prediction;
  ErrorPool bayesian;
  StageTimings timings;
  double min_jacobian_det = INFINITY;

  EvalColumns columns() const {
    EvalColumns c{identity.percentiles(), prediction.percentiles(), {}};
    if (bayesian.size() > 0) c.bayesian = bayesian.percentiles();
    return c;
  }
};

/// Pools voxel errors of identity, deterministic prediction and (optionally) the
/// MC-dropout mean against each pair's true inverse map.
inline EvalResult evaluate(net::NetModel<float>& model, const std::vector<PairData>& pairs, const RunConfig& cfg,
                           TrainModality modality, bool with_bayesian, int workers = 1) {
  EvalResult res;
  std::vector<Field64> e_id(pairs.size()), e_pred(pairs.size()), e_bayes(pairs.size());
  std::vector<StageTimings> t(pairs.size());
  std::vector<double> dets(pairs.size(), INFINITY);
  parallel_for(pairs.size(), workers, [&](std::size_t i) {
    const PairData& p = pairs[i];
    const Field64& target = modality == TrainModality::multimodal ? p.target_B : p.target_A;
    net::NetModel<float> local = model;
    PredictionConfig pc = cfg.prediction();
    pc.mode = PredictMode::deterministic;
    const PredictionResult r = predict_and_register(local, p.moving_A, target, pc);
    e_id[i] = deformation_error(DeformationMap<double>::identity(p.moving_A.grid()), p.phi_inv);
    e_pred[i] = deformation_error(r.phi_inv, p.phi_inv);
    t[i] = r.timings;
    dets[i] = r.min_jacobian_det;
    if (with_bayesian) {
      pc.mode = PredictMode::bayesian;
      pc.seed = derive_seed(cfg.seed, i);
      const PredictionResult b = predict_bayesian(local, p.moving_A, target, pc);
      e_bayes[i] = deformation_error(b.phi_inv, p.phi_inv);
    }
  });
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    res.identity.add(e_id[i]);
    res.prediction.add(e_pred[i]);
    if (with_bayesian) res.bayesian.add(e_bayes[i]);
    res.timings += t[i];
    res.min_jacobian_det = std::min(res.min_jacobian_det, dets[i]);
  }
  return res;
}

}  // namespace mforge
