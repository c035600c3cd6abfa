// regctl: synthesize data, optimize, train, predict and evaluate momentum-based registrations.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure.
// Failures print one JSON line on stderr: {"error":{"code":N,"kind":"...","message":"..."}}

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "mforge/config.hpp"
#include "mforge/pgm.hpp"
#include "mforge/selftest.hpp"
#include "mforge/workflow.hpp"

namespace fs = std::filesystem;
using namespace mforge;

namespace {

struct Globals {
  bool deterministic = false;
  int threads = 0;
  std::string config;

  int workers() const {
    if (deterministic) return 1;
    if (threads > 0) return threads;
    return default_workers();
  }

  RunConfig load() const { return config.empty() ? RunConfig{} : load_config(config); }
};

GridSpec parse_grid(const std::string& s) {
  std::vector<int> sizes;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto x = s.find('x', pos);
    const std::string part = s.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
    int v = 0;
    const auto r = std::from_chars(part.data(), part.data() + part.size(), v);
    if (part.empty() || r.ec != std::errc() || r.ptr != part.data() + part.size() || v < 1)
      throw UsageError("bad grid '" + s + "' (expected e.g. 64x64 or 32x32x32)");
    sizes.push_back(v);
    if (x == std::string::npos) break;
    pos = x + 1;
  }
  if (sizes.size() == 2) return GridSpec::make({sizes[0], sizes[1]});
  if (sizes.size() == 3) return GridSpec::make({sizes[0], sizes[1], sizes[2]});
  throw UsageError("grid must have 2 or 3 sizes");
}

void write_text(const fs::path& p, const std::string& text) {
  io::write_file(p.string(), std::vector<unsigned char>(text.begin(), text.end()));
}

// Resolved config lands next to the outputs so the run can be repeated from it.
void emit_config(const fs::path& p, const RunConfig& c) {
  write_text(p, to_text(c));
  std::cout << "config: " << p.string() << "\n";
}

std::string timings_csv(const StageTimings& t) {
  std::string s = "stage,seconds\n";
  s += "plan," + format_number(t.plan) + "\n";
  s += "prune," + format_number(t.prune) + "\n";
  s += "forward," + format_number(t.forward) + "\n";
  s += "stitch," + format_number(t.stitch) + "\n";
  s += "shoot," + format_number(t.shoot) + "\n";
  return s;
}

std::vector<PairData> load_pairs(const Manifest& m, int workers) {
  std::vector<PairData> pairs(m.records.size());
  parallel_for(pairs.size(), workers, [&](std::size_t i) { pairs[i] = load_pair(m, i); });
  return pairs;
}

int cmd_synth(const Globals& gl, int count, const std::string& grid, const std::uint64_t* seed,
              const std::string& out) {
  RunConfig c = gl.load();
  if (seed) c.seed = *seed;
  c.validate();
  const std::string manifest = synth_dataset(out, count, parse_grid(grid), c.seed, c.synth_options(), gl.workers());
  emit_config(fs::path(out) / "run_config.txt", c);
  std::cout << "manifest: " << manifest << "\n";
  return 0;
}

int cmd_optimize(const Globals& gl, const std::string& moving, const std::string& target, const std::string& out) {
  const RunConfig c = gl.load();
  c.validate();
  const Field64 S = load_scalar<double>(moving), T = load_scalar<double>(target);
  const auto res = optimize(S, T, c.energy_params(), c.optimize);
  const auto shot = shoot_and_warp(S, res.m0, c.shooting_config());
  fs::create_directories(out);
  const fs::path d(out);
  save_field((d / "m0.mmrf").string(), res.m0);
  save_field((d / "phi_inv.mmrf").string(), shot.phi_inv);
  save_field((d / "warped.mmrf").string(), shot.warped);
  write_pgm((d / "warped.pgm").string(), shot.warped, 0, 1);
  std::string csv = "iteration,total,reg,image\n";
  for (const auto& r : res.energy_trace)
    csv += std::to_string(r.iteration) + "," + format_number(r.total) + "," + format_number(r.reg) + "," +
           format_number(r.image) + "\n";
  write_text(d / "energy_trace.csv", csv);
  emit_config(d / "run_config.txt", c);
  const auto& first = res.energy_trace.front();
  const auto& last = res.energy_trace.back();
  std::cout << "iterations: " << last.iteration << " energy: " << format_number(first.total) << " -> "
            << format_number(last.total) << " min det: " << format_number(min_value(jacobian_determinant(shot.phi_inv)))
            << "\n";
  return 0;
}

int cmd_train(const Globals& gl, const std::string& manifest, const std::string& out) {
  const RunConfig c = gl.load();
  c.validate();
  const Manifest m = read_manifest(manifest);
  const auto pairs = load_pairs(m, gl.workers());
  std::string csv = "epoch,loss\n";
  TrainedModel t = train_model(pairs, c, [&](int e, double loss) {
    csv += std::to_string(e + 1) + "," + format_number(loss) + "\n";
    std::cout << "epoch " << e + 1 << " loss " << format_number(loss) << std::endl;
  });
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  net::save_model(out, t.model, &t.opt);
  write_text(out + ".loss.csv", csv);
  emit_config(out + ".config.txt", c);
  std::cout << "samples: " << t.samples << " model: " << out << "\n";
  return 0;
}

int cmd_predict(const Globals& gl, const std::string& model_path, const std::string& moving,
                const std::string& target, bool bayesian, const int* samples, const std::string& out) {
  RunConfig c = gl.load();
  if (bayesian) c.predict_mode = PredictMode::bayesian;
  if (samples) c.predict_samples = *samples;
  c.validate();
  auto model = net::load_model<float>(model_path);
  const Field64 S = load_scalar<double>(moving), T = load_scalar<double>(target);
  PredictionConfig pc = c.prediction();
  pc.workers = gl.workers();
  const PredictionResult r = predict_and_register(model, S, T, pc);
  fs::create_directories(out);
  const fs::path d(out);
  save_field((d / "m0.mmrf").string(), r.m0_pred);
  save_field((d / "phi_inv.mmrf").string(), r.phi_inv);
  save_field((d / "warped.mmrf").string(), r.warped);
  write_pgm((d / "warped.pgm").string(), r.warped, 0, 1);
  if (r.uncertainty) {
    save_field((d / "uncertainty.mmrf").string(), *r.uncertainty);
    write_pgm((d / "uncertainty.pgm").string(), *r.uncertainty);
  }
  write_text(d / "timings.csv", timings_csv(r.timings));
  emit_config(d / "run_config.txt", c);
  std::cout << "patches: " << r.patches.total << " kept: " << r.patches.kept
            << " min det: " << format_number(r.min_jacobian_det) << "\n";
  if (!(r.min_jacobian_det > 0)) std::cerr << "warning: predicted map folds (min det " << r.min_jacobian_det << ")\n";
  return 0;
}

int cmd_eval(const Globals& gl, const std::string& manifest, const std::string& model_path, bool bayesian,
             const std::string& out) {
  const RunConfig c = gl.load();
  c.validate();
  auto model = net::load_model<float>(model_path);
  const Manifest m = read_manifest(manifest);
  const auto pairs = load_pairs(m, gl.workers());
  const EvalResult r = evaluate(model, pairs, c, c.train_modality, bayesian, gl.workers());
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_text(p, eval_report_csv(r.columns()));
  write_text(out + ".timings.csv", timings_csv(r.timings));
  emit_config(out + ".config.txt", c);
  std::cout << "pairs: " << pairs.size() << " median identity: " << format_number(r.identity.median())
            << " prediction: " << format_number(r.prediction.median()) << "\n";
  return 0;
}

int cmd_selftest() {
  int failed = 0;
  for (const auto& c : run_selftest()) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
    failed += !c.passed;
  }
  std::cout << (failed ? "selftest failed\n" : "selftest passed\n");
  if (failed) throw NumericalError(std::to_string(failed) + " selftest check(s) failed");
  return 0;
}

int report(int code, const char* kind, const std::string& msg) {
  nlohmann::json j;
  j["error"] = {{"code", code}, {"kind", kind}, {"message", msg}};
  std::cerr << j.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"regctl: predictive LDDMM registration toolkit"};
  app.require_subcommand(1);
  // global options may also follow the subcommand name
  app.fallthrough();
  Globals gl;
  app.add_flag("--deterministic", gl.deterministic, "Single-threaded, bit-reproducible execution");
  app.add_option("--threads", gl.threads, "Worker threads (default: MOMENTUM_FORGE_THREADS or all cores)")
      ->check(CLI::PositiveNumber);
  app.add_option("--config", gl.config, "Key-value run configuration file");

  std::function<int()> run;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic multimodal dataset");
  int count = 0;
  std::string grid, out;
  std::uint64_t seed = 0;
  synth->add_option("--count", count, "Number of pairs")->required()->check(CLI::PositiveNumber);
  synth->add_option("--grid", grid, "Grid size, e.g. 64x64")->required();
  auto* seed_opt = synth->add_option("--seed", seed, "Dataset seed (overrides config)");
  synth->add_option("--out", out, "Output directory")->required();
  synth->callback([&] { run = [&] { return cmd_synth(gl, count, grid, seed_opt->count() ? &seed : nullptr, out); }; });

  auto* opt = app.add_subcommand("optimize", "LDDMM shooting optimization of one pair");
  std::string moving, target;
  opt->add_option("--moving", moving, "Moving image (MMRF)")->required();
  opt->add_option("--target", target, "Target image (MMRF)")->required();
  opt->add_option("--out", out, "Output directory")->required();
  opt->callback([&] { run = [&] { return cmd_optimize(gl, moving, target, out); }; });

  auto* train = app.add_subcommand("train", "Train a momentum prediction network");
  std::string manifest;
  train->add_option("--manifest", manifest, "Dataset manifest")->required();
  train->add_option("--out", out, "Checkpoint path (.mmnc)")->required();
  train->callback([&] { run = [&] { return cmd_train(gl, manifest, out); }; });

  auto* pred = app.add_subcommand("predict", "Predict momentum and deformation for one pair");
  std::string model;
  bool bayesian = false;
  int samples = 0;
  pred->add_option("--model", model, "Checkpoint (.mmnc)")->required();
  pred->add_option("--moving", moving, "Moving image (MMRF)")->required();
  pred->add_option("--target", target, "Target image (MMRF)")->required();
  pred->add_flag("--bayesian", bayesian, "Monte Carlo dropout sampling with uncertainty");
  auto* samples_opt = pred->add_option("--samples", samples, "Number of MC samples")->check(CLI::PositiveNumber);
  pred->add_option("--out", out, "Output directory")->required();
  pred->callback([&] { run = [&] { return cmd_predict(gl, model, moving, target, bayesian, samples_opt->count() ? &samples : nullptr, out); }; });

  auto* ev = app.add_subcommand("eval", "Deformation-error percentiles over a manifest");
  ev->add_option("--manifest", manifest, "Dataset manifest")->required();
  ev->add_option("--model", model, "Checkpoint (.mmnc)")->required();
  ev->add_flag("--bayesian", bayesian, "Add the MC-dropout mean column");
  ev->add_option("--out", out, "Report CSV path")->required();
  ev->callback([&] { run = [&] { return cmd_eval(gl, manifest, model, bayesian, out); }; });

  auto* st = app.add_subcommand("selftest", "Run quick oracle checks");
  st->callback([&] { run = [] { return cmd_selftest(); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report(1, "usage", e.what());
  }
  try {
    return run();
  } catch (const UsageError& e) {
    return report(1, "usage", e.what());
  } catch (const DataError& e) {
    return report(2, "data", e.what());
  } catch (const NumericalError& e) {
    return report(3, "numerical", e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return report(2, "data", e.what());
  } catch (const std::exception& e) {
    return report(2, "data", e.what());
  }
}
