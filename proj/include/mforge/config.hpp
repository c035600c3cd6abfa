#pragma once

// Run configuration: one "key = value" per line, '#' starts a comment, keys are
// case sensitive and unknown keys are rejected. to_text() emits every key in a
// fixed order with round-trip exact numbers, so a resolved config reproduces a run.

#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mforge/dataset.hpp"
#include "mforge/field_io.hpp"
#include "mforge/lddmm.hpp"
#include "mforge/net/model.hpp"
#include "mforge/net/train.hpp"
#include "mforge/predict.hpp"
#include "mforge/synth.hpp"

namespace mforge {

struct RunConfig {
  std::uint64_t seed = 0;
  KernelParams kernel;
  double sigma = 0.2;
  ShootingConfig shooting;
  OptimizeOptions optimize;
  SynthOptions synth;
  int patch_size = 15;
  int stride = 14;
  double background_threshold = 0.01;
  net::NetArch net;
  /// Dropout 0 trains the deterministic network; MC-dropout prediction needs a model trained with dropout.
  net::TrainConfig train = [] {
    net::TrainConfig t;
    t.dropout_rate = 0.0;
    return t;
  }();
  /// Window stride used to cut training samples (prediction uses `stride`).
  int train_stride = 4;
  TrainModality train_modality = TrainModality::multimodal;
  PredictMode predict_mode = PredictMode::deterministic;
  int predict_samples = 20;
  int predict_batch = 64;
  double clamp_multiple = 5.0;

  ShootingConfig shooting_config() const {
    ShootingConfig s = shooting;
    s.kernel = kernel;
    return s;
  }
  EnergyParams energy_params() const { return {sigma, shooting_config()}; }
  SynthOptions synth_options() const {
    SynthOptions s = synth;
    s.shooting = shooting_config();
    return s;
  }
  net::NetArch arch(int dim) const {
    net::NetArch a = net;
    a.dim = dim;
    a.patch = patch_size;
    a.dropout = train.dropout_rate;
    return a;
  }
  SampleOptions sample_options() const { return {patch_size, train_stride, background_threshold, train_modality}; }
  PredictionConfig prediction() const {
    PredictionConfig p;
    p.patch_size = patch_size;
    p.stride = stride;
    p.mode = predict_mode;
    p.num_samples = predict_samples;
    p.seed = seed;
    p.batch_size = predict_batch;
    p.background_threshold = background_threshold;
    p.clamp_multiple = clamp_multiple;
    p.shooting = shooting_config();
    return p;
  }

  void validate() const {
    kernel.validate_smoothing();
    energy_params().validate();
    synth_options().validate();
    if (optimize.max_iters < 1) throw UsageError("optimize.max_iters must be >= 1");
    if (patch_size < 3) throw UsageError("patch.size must be >= 3");
    if (stride < 1 || stride > patch_size) throw UsageError("patch.stride must be in [1, patch.size]");
    if (train_stride < 1 || train_stride > patch_size) throw UsageError("train.sample_stride must be in [1, patch.size]");
    arch(2).validate();
    train.validate();
    prediction().validate();
  }
};

namespace config_detail {

inline std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw UsageError("config: bad value '" + v + "' for " + key);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw UsageError("config: " + key + " must be true or false");
}

struct Binding {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define MFORGE_NUM(FIELD)                                                               \
  Binding {                                                                             \
    [](const RunConfig& c) { return fmt(static_cast<double>(c.FIELD)); },              \
        [](RunConfig& c, const std::string& v) {                                       \
          c.FIELD = parse_number<std::decay_t<decltype(c.FIELD)>>(#FIELD, v);          \
        }                                                                               \
  }

inline const std::vector<std::pair<std::string, Binding>>& bindings() {
  static const std::vector<std::pair<std::string, Binding>> b = {
      {"seed", {[](const RunConfig& c) { return std::to_string(c.seed); },
                [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); }}},
      {"kernel.a", MFORGE_NUM(kernel.a)},
      {"kernel.b", MFORGE_NUM(kernel.b)},
      {"kernel.c", MFORGE_NUM(kernel.c)},
      {"sigma", MFORGE_NUM(sigma)},
      {"shooting.steps", MFORGE_NUM(shooting.num_steps)},
      {"shooting.integrator",
       {[](const RunConfig& c) { return std::string(to_string(c.shooting.integrator)); },
        [](RunConfig& c, const std::string& v) { c.shooting.integrator = integrator_from_string(v); }}},
      {"optimize.max_iters", MFORGE_NUM(optimize.max_iters)},
      {"optimize.initial_step", MFORGE_NUM(optimize.step0)},
      {"optimize.rel_tol", MFORGE_NUM(optimize.rel_tol)},
      {"optimize.min_step", MFORGE_NUM(optimize.min_step)},
      {"optimize.growth", MFORGE_NUM(optimize.growth)},
      {"synth.min_displacement", MFORGE_NUM(synth.min_displacement)},
      {"synth.max_displacement", MFORGE_NUM(synth.max_displacement)},
      {"synth.deform", {[](const RunConfig& c) { return std::string(c.synth.deform ? "true" : "false"); },
                        [](RunConfig& c, const std::string& v) { c.synth.deform = parse_bool("synth.deform", v); }}},
      {"synth.bias_amplitude", MFORGE_NUM(synth.bias_amplitude)},
      {"synth.noise_std", MFORGE_NUM(synth.noise_std)},
      {"synth.max_retries", MFORGE_NUM(synth.max_retries)},
      {"patch.size", MFORGE_NUM(patch_size)},
      {"patch.stride", MFORGE_NUM(stride)},
      {"patch.background_threshold", MFORGE_NUM(background_threshold)},
      {"net.enc1", MFORGE_NUM(net.enc1)},
      {"net.enc2", MFORGE_NUM(net.enc2)},
      {"net.dec1", MFORGE_NUM(net.dec1)},
      {"net.dec2", MFORGE_NUM(net.dec2)},
      {"train.learning_rate", MFORGE_NUM(train.learning_rate)},
      {"train.ms_decay", MFORGE_NUM(train.ms_decay)},
      {"train.eps", MFORGE_NUM(train.eps)},
      {"train.epochs", MFORGE_NUM(train.epochs)},
      {"train.batch_size", MFORGE_NUM(train.batch_size)},
      {"train.dropout", MFORGE_NUM(train.dropout_rate)},
      {"train.sample_stride", MFORGE_NUM(train_stride)},
      {"train.modality",
       {[](const RunConfig& c) { return std::string(c.train_modality == TrainModality::same ? "same" : "multimodal"); },
        [](RunConfig& c, const std::string& v) {
          if (v == "same") c.train_modality = TrainModality::same;
          else if (v == "multimodal") c.train_modality = TrainModality::multimodal;
          else throw UsageError("config: train.modality must be multimodal or same");
        }}},
      {"predict.mode",
       {[](const RunConfig& c) {
          return std::string(c.predict_mode == PredictMode::bayesian ? "bayesian" : "deterministic");
        },
        [](RunConfig& c, const std::string& v) {
          if (v == "bayesian") c.predict_mode = PredictMode::bayesian;
          else if (v == "deterministic") c.predict_mode = PredictMode::deterministic;
          else throw UsageError("config: predict.mode must be deterministic or bayesian");
        }}},
      {"predict.samples", MFORGE_NUM(predict_samples)},
      {"predict.batch_size", MFORGE_NUM(predict_batch)},
      {"predict.clamp_multiple", MFORGE_NUM(clamp_multiple)},
  };
  return b;
}

#undef MFORGE_NUM

}  // namespace config_detail

inline std::string to_text(const RunConfig& c) {
  std::string out;
  for (const auto& [key, b] : config_detail::bindings()) out += key + " = " + b.get(c) + "\n";
  return out;
}

/// Applies "key = value" lines on top of `base`.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = config_detail::trim(line.substr(0, eq));
    const std::string value = config_detail::trim(line.substr(eq + 1));
    bool found = false;
    for (const auto& [k, b] : config_detail::bindings())
      if (k == key) {
        b.set(base, value);
        found = true;
        break;
      }
    if (!found) throw UsageError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  return base;
}

inline RunConfig load_config(const std::string& path) {
  std::vector<unsigned char> bytes;
  try {
    bytes = io::read_file(path);
  } catch (const DataError&) {
    throw UsageError("cannot read config " + path);
  }
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

}  // namespace mforge
