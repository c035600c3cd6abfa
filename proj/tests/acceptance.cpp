// Acceptance runner. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "mforge/net/checkpoint.hpp"
#include "mforge/net/gradcheck.hpp"
#include "mforge/pgm.hpp"
#include "mforge/workflow.hpp"
#include "test_util.hpp"

using namespace mforge;
using mforge::testing::random_field;
using mforge::testing::random_vector;
using mforge::testing::smooth_vector;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void note(const std::string& s) {
  std::printf("    %s\n", s.c_str());
  std::fflush(stdout);
}

double rel_l2(const VField64& a, const VField64& b) {
  VField64 d = a;
  axpy(-1.0, b, d);
  return std::sqrt(dot(d, d) / dot(b, b));
}

double max_value(const Field64& f) { return *std::max_element(f.values().begin(), f.values().end()); }

double max_map_diff(const DeformationMap<double>& a, const DeformationMap<double>& b) {
  double m = 0;
  for (int d = 0; d < a.map.dim(); ++d)
    for (std::size_t i = 0; i < a.map.voxels(); ++i) m = std::max(m, std::abs(a.map[d][i] - b.map[d][i]));
  return m;
}

// ---------------------------------------------------------------- 1

Outcome kernel_correctness() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> n(16, 32);
  double round = 0, adj = 0, min_quad = INFINITY;
  for (int t = 0; t < 200; ++t) {
    const GridSpec g = GridSpec::make({n(rng), n(rng)});
    const FluidKernel k(KernelParams{}, g);
    const VField64 u = random_vector(g, rng), w = random_vector(g, rng);
    round = std::max({round, rel_l2(k.apply_L(k.apply_K(u)), u), rel_l2(k.apply_K(k.apply_L(u)), u)});
    const double ku = dot(u, k.apply_K(w)), uk = dot(k.apply_K(u), w);
    const double lu = dot(u, k.apply_L(w)), ul = dot(k.apply_L(u), w);
    adj = std::max({adj, std::abs(ku - uk) / std::abs(ku), std::abs(lu - ul) / std::abs(lu)});
    min_quad = std::min({min_quad, dot(u, k.apply_K(u)) / dot(u, u), dot(u, k.apply_L(u)) / dot(u, u)});
  }
  const bool ok = round <= 1e-10 && adj <= 1e-10 && min_quad > 0;
  return {ok, "round trip " + fmt("%.3g", round) + ", adjoint gap " + fmt("%.3g", adj) + ", min <u,Ku>/<u,u> " +
                  fmt("%.3g", min_quad)};
}

// ---------------------------------------------------------------- 2

Outcome shooting_sanity() {
  const ShootingConfig cfg;  // rk4, 20 steps
  const GridSpec g = GridSpec::make({32, 32});
  const auto id = DeformationMap<double>::identity(g);
  const bool zero_exact = max_map_diff(shoot(VField64(g), cfg).state.phi_inv, id) == 0.0;

  const double c[2] = {1.7, -0.6};
  VField64 m0(g);
  for (int a = 0; a < 2; ++a)
    for (double& v : m0[a].values()) v = cfg.kernel.c * c[a];
  auto expected = id;
  for (int a = 0; a < 2; ++a)
    for (double& v : expected.map[a].values()) v -= c[a];
  const double trans = max_map_diff(shoot(m0, cfg).state.phi_inv, expected);

  std::mt19937_64 rng(102);
  const FluidKernel k(cfg.kernel, g);
  double drift = 0, min_det = INFINITY;
  for (int t = 0; t < 20; ++t) {
    VField64 m = smooth_vector(g, rng, 1.0, 3);
    // scale so the initial velocity peaks at 3 voxels
    const VField64 v = k.apply_K(m);
    double vmax = 0;
    for (std::size_t i = 0; i < g.voxels(); ++i) vmax = std::max(vmax, std::hypot(v[0][i], v[1][i]));
    for (int a = 0; a < 2; ++a)
      for (double& x : m[a].values()) x *= 3.0 / vmax;
    const auto res = shoot(m, cfg, k);
    const double h0 = res.hamiltonian.front();
    for (double h : res.hamiltonian) drift = std::max(drift, std::abs(h - h0) / h0);
    min_det = std::min(min_det, min_value(jacobian_determinant(res.state.phi_inv)));
  }
  const bool ok = zero_exact && trans <= 1e-6 && drift <= 0.02 && min_det > 0;
  return {ok, std::string("zero momentum exact: ") + (zero_exact ? "yes" : "no") + ", translation error " +
                  fmt("%.3g", trans) + ", max Hamiltonian drift " + fmt("%.3g", drift) + ", min det " +
                  fmt("%.3g", min_det)};
}

// ---------------------------------------------------------------- 3

Outcome energy_gradient_check() {
  std::mt19937_64 rng(103);
  const GridSpec g = GridSpec::make({8, 8});
  EnergyParams p;
  p.shooting.num_steps = 5;
  const Field64 S = random_field(g, rng, 0, 1), T = random_field(g, rng, 0, 1);
  const VField64 m0 = random_vector(g, rng, -0.01, 0.01);
  const VField64 grad = energy_gradient(m0, S, T, p);
  double worst = 0;
  for (int k = 0; k < 20; ++k) {
    const VField64 dir = random_vector(g, rng);
    VField64 plus = m0, minus = m0;
    axpy(1e-7, dir, plus);
    axpy(-1e-7, dir, minus);
    const double fd = (energy(plus, S, T, p).total - energy(minus, S, T, p).total) / 2e-7;
    worst = std::max(worst, std::abs(dot(grad, dir) - fd) / std::abs(fd));
  }
  return {worst <= 1e-5, "worst relative error over 20 directions " + fmt("%.3g", worst)};
}

// ---------------------------------------------------------------- 4

Outcome optimization() {
  const GridSpec g = GridSpec::make({64, 64});
  const RunConfig cfg;
  const EnergyParams p = cfg.energy_params();
  OptimizeOptions o = cfg.optimize;
  o.max_iters = 200;
  bool monotone = true;
  double worst_ratio = 0;
  ErrorPool identity, recovered;
  for (int i = 0; i < 20; ++i) {
    const SynthPair sp = synth_indexed_pair(401, i, g, cfg.synth_options());
    const auto res = optimize(sp.moving_A, sp.target_A, p, o);
    const auto& tr = res.energy_trace;
    for (std::size_t k = 1; k < tr.size(); ++k) monotone &= tr[k].total < tr[k - 1].total;
    worst_ratio = std::max(worst_ratio, tr.back().image / tr.front().image);
    identity.add(deformation_error(DeformationMap<double>::identity(g), sp.phi_inv_true));
    recovered.add(deformation_error(shoot(res.m0, p.shooting).state.phi_inv, sp.phi_inv_true));
  }
  note("info: median map error vs truth " + fmt("%.4f", recovered.median()) + " (identity " +
       fmt("%.4f", identity.median()) + ")");
  return {monotone && worst_ratio <= 0.25, std::string("monotone: ") + (monotone ? "yes" : "no") +
                                               ", worst final/initial image term " + fmt("%.4f", worst_ratio)};
}

// ---------------------------------------------------------------- 5

Outcome layer_gradients() {
  std::mt19937_64 rng(105);
  std::string detail;
  bool ok = true;
  for (auto kind : {net::LayerKind::conv, net::LayerKind::conv_stride2, net::LayerKind::deconv_stride2,
                    net::LayerKind::prelu, net::LayerKind::dropout}) {
    double worst = 0;
    std::string where;
    for (int c = 0; c < 50; ++c) {
      const auto r = net::gradcheck_layer(kind, rng);
      if (r.max_rel_err >= worst) {
        worst = r.max_rel_err;
        where = r.where;
      }
    }
    ok &= worst <= 1e-5;
    detail += std::string(net::to_string(kind)) + " " + fmt("%.2g", worst) + "; ";
  }

  // concat is linear: its backward is split, so <concat(a,b), w> = <a,wa> + <b,wb>
  double worst = 0;
  std::uniform_real_distribution<double> u(-1, 1);
  for (int c = 0; c < 50; ++c) {
    std::uniform_int_distribution<int> ch(1, 4), ext(2, 6);
    const int n = ch(rng), s0 = ext(rng), s1 = ext(rng);
    net::Tensor<double> a({n, ch(rng), s0, s1}), b({n, ch(rng), s0, s1});
    for (auto& v : a.data) v = u(rng);
    for (auto& v : b.data) v = u(rng);
    const auto cat = net::concat_channels(a, b);
    net::Tensor<double> w(cat.shape), wa, wb;
    for (auto& v : w.data) v = u(rng);
    net::split_channels(w, a.channels(), wa, wb);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < cat.size(); ++i) lhs += cat.data[i] * w.data[i];
    for (std::size_t i = 0; i < a.size(); ++i) rhs += a.data[i] * wa.data[i];
    for (std::size_t i = 0; i < b.size(); ++i) rhs += b.data[i] * wb.data[i];
    worst = std::max(worst, net::rel_err(lhs, rhs));
  }
  ok &= worst <= 1e-5;
  detail += "concat " + fmt("%.2g", worst);
  return {ok, "worst relative error per layer: " + detail};
}

// ---------------------------------------------------------------- 6

Outcome pipeline_oracles() {
  std::mt19937_64 rng(106);
  bool cover = true;
  for (int t = 0; t < 500 && cover; ++t) {
    const int dim = t % 5 == 0 ? 3 : 2;
    std::uniform_int_distribution<int> us(4, dim == 3 ? 20 : 64);
    const GridSpec g = dim == 3 ? GridSpec::make({us(rng), us(rng), us(rng)}) : GridSpec::make({us(rng), us(rng)});
    int mn = g.size[0];
    for (int a = 1; a < dim; ++a) mn = std::min(mn, g.size[a]);
    const int p = std::uniform_int_distribution<int>(1, mn)(rng);
    const int s = std::uniform_int_distribution<int>(1, p)(rng);
    const PatchGrid plan = plan_patches(g, p, s);
    std::vector<char> hit(g.voxels(), 0);
    for (const auto& st : plan.positions)
      for (int z = 0; z < (dim == 3 ? p : 1); ++z)
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x) hit[g.index(st[0] + x, st[1] + y, st[2] + z)] = 1;
    cover = std::all_of(hit.begin(), hit.end(), [](char h) { return h; });
  }

  // prune vs a direct scan of both images over each window
  bool prune_ok = true;
  const GridSpec g = GridSpec::make({64, 64});
  for (int i = 0; i < 10; ++i) {
    const SynthPair sp = synth_indexed_pair(406, i, g);
    const PatchGrid plan = plan_patches(g, 15, 1 + i % 14);
    const PatchJobs jobs = make_jobs(sp.moving_A, sp.target_B, plan);
    for (std::size_t k = 0; k < plan.count(); ++k) {
      bool fg = false;
      const auto& st = plan.positions[k];
      for (int y = 0; y < 15; ++y)
        for (int x = 0; x < 15; ++x)
          fg |= static_cast<float>(sp.moving_A.at(st[0] + x, st[1] + y)) > 0.01f ||
                static_cast<float>(sp.target_B.at(st[0] + x, st[1] + y)) > 0.01f;
      prune_ok &= jobs.jobs[k].pruned == !fg;
    }
  }

  // stitch vs per-voxel average of covering patches
  double stitch_err = 0;
  for (int t = 0; t < 20; ++t) {
    const GridSpec sg = GridSpec::make({20, 17});
    const Index3 size{6, 5, 1};
    std::vector<MomentumPatch> ps;
    std::uniform_real_distribution<float> v(-1, 1);
    for (int k = 0; k < 12; ++k) {
      MomentumPatch mp;
      mp.start = {std::uniform_int_distribution<int>(0, 14)(rng), std::uniform_int_distribution<int>(0, 12)(rng), 0};
      for (int a = 0; a < 2; ++a) {
        std::vector<float> c(30);
        for (auto& x : c) x = v(rng);
        mp.components.push_back(std::move(c));
      }
      ps.push_back(std::move(mp));
    }
    const VField64 out = stitch(ps, sg, size);
    for (std::size_t i = 0; i < sg.voxels(); ++i) {
      const auto c = sg.coords(i);
      for (int a = 0; a < 2; ++a) {
        double s = 0;
        int n = 0;
        for (const auto& p : ps) {
          const int rx = c[0] - p.start[0], ry = c[1] - p.start[1];
          if (rx >= 0 && rx < 6 && ry >= 0 && ry < 5) {
            s += p.components[a][rx + 6 * ry];
            ++n;
          }
        }
        stitch_err = std::max(stitch_err, std::abs(out[a][i] - (n ? s / n : 0.0)));
      }
    }
  }
  const bool ok = cover && prune_ok && stitch_err <= 1e-12;
  return {ok, std::string("coverage: ") + (cover ? "ok" : "FAILED") + ", prune: " + (prune_ok ? "exact" : "MISMATCH") +
                  ", stitch max error " + fmt("%.3g", stitch_err)};
}

// ---------------------------------------------------------------- 7, 8

struct EndToEnd {
  RunConfig cfg;
  GridSpec grid = GridSpec::make({64, 64});
  std::vector<PairData> train, held_out;
  std::optional<double> mm_median;
  double identity_median = 0;

  EndToEnd() { cfg.clamp_multiple = 0; }  // metric runs use raw predictions

  void make_data() {
    if (!train.empty()) return;
    const SynthOptions so = cfg.synth_options();
    for (int i = 0; i < 120; ++i) train.push_back(to_pair_data(synth_indexed_pair(1, i, grid, so), "train"));
    for (int i = 0; i < 30; ++i) held_out.push_back(to_pair_data(synth_indexed_pair(2, i, grid, so), "held"));
  }

  double run(std::size_t n, TrainModality modality, const std::string& label) {
    RunConfig c = cfg;
    c.train_modality = modality;
    const std::vector<PairData> pairs(train.begin(), train.begin() + n);
    const auto t0 = std::chrono::steady_clock::now();
    TrainedModel tm = train_model(pairs, c, [&](int e, double loss) {
      note(label + " epoch " + std::to_string(e) + " loss " + fmt("%.5f", loss) + " (" + fmt("%.0f", seconds_since(t0)) +
           " s)");
    });
    const EvalResult r = evaluate(tm.model, held_out, c, modality, false, default_workers());
    identity_median = r.identity.median();
    note(label + ": " + std::to_string(tm.samples) + " samples, held-out median " + fmt("%.4f", r.prediction.median()) +
         " (identity " + fmt("%.4f", identity_median) + ")");
    return r.prediction.median();
  }
};

EndToEnd& e2e() {
  static EndToEnd s;
  return s;
}

Outcome end_to_end() {
  auto& s = e2e();
  s.make_data();
  const double mm = s.run(120, TrainModality::multimodal, "multimodal");
  s.mm_median = mm;
  const double same = s.run(120, TrainModality::same, "same-modality");
  const double ratio = mm / s.identity_median;
  const bool ok = ratio <= 0.5 && mm <= 2.0 * same;
  return {ok, "multimodal/identity " + fmt("%.3f", ratio) + " (need <= 0.5), multimodal/same " +
                  fmt("%.3f", mm / same) + " (need <= 2)"};
}

Outcome limited_data() {
  auto& s = e2e();
  if (!s.mm_median) {
    note("training the 120-pair reference first (not counted)");
    s.make_data();
    s.mm_median = s.run(120, TrainModality::multimodal, "multimodal");
  }
  const double small = s.run(20, TrainModality::multimodal, "20 pairs");
  const double rel = small / *s.mm_median;
  return {rel <= 1.6, "20-pair median / 120-pair median " + fmt("%.3f", rel) + " (need <= 1.6)"};
}

// ---------------------------------------------------------------- 9

Outcome bayesian() {
  const GridSpec g = GridSpec::make({64, 64});
  RunConfig cfg;
  cfg.train.dropout_rate = 0.3;
  cfg.train.epochs = 2;
  cfg.train_stride = 14;
  std::vector<PairData> pairs;
  for (int i = 0; i < 60; ++i) pairs.push_back(to_pair_data(synth_indexed_pair(9, i, g, cfg.synth_options()), "p"));
  const PairData held = to_pair_data(synth_indexed_pair(10, 0, g, cfg.synth_options()), "h");
  TrainedModel tm = train_model(pairs, cfg);
  PredictionConfig pc = cfg.prediction();
  pc.mode = PredictMode::bayesian;
  pc.num_samples = 8;
  pc.seed = 3;

  // rate 0: every MC sample agrees
  net::NetModel<float> zero = tm.model;
  zero.set_dropout_rate(0.0);
  const auto rz = predict_bayesian(zero, held.moving_A, held.target_B, pc);
  const double zmax = rz.uncertainty ? max_value(*rz.uncertainty) : INFINITY;

  // run-to-run spread of the MC mean momentum at N and 4N samples
  auto spread = [&](int n, std::uint64_t base) {
    std::vector<VField64> means;
    for (int r = 0; r < 10; ++r) {
      VField64 mean(g);
      for (int k = 0; k < n; ++k)
        axpy(1.0 / n,
             predict_momentum(tm.model, held.moving_A, held.target_B, pc, net::Mode::mc_dropout,
                              derive_seed(base, static_cast<std::uint64_t>(r) * 1000 + k)),
             mean);
      means.push_back(std::move(mean));
    }
    double var = 0;
    std::size_t cnt = 0;
    for (int a = 0; a < 2; ++a)
      for (std::size_t i = 0; i < g.voxels(); ++i) {
        double m = 0, q = 0;
        for (const auto& v : means) m += v[a][i];
        m /= means.size();
        for (const auto& v : means) q += (v[a][i] - m) * (v[a][i] - m);
        var += q / (means.size() - 1);
        ++cnt;
      }
    return std::sqrt(var / cnt);
  };
  const double s1 = spread(5, 901), s4 = spread(20, 902);
  const double halving = (s4 / s1) / 0.5;

  const auto rb = predict_bayesian(tm.model, held.moving_A, held.target_B, pc);
  const double umax = rb.uncertainty ? max_value(*rb.uncertainty) : 0.0;
  bool pgm_ok = false;
  if (rb.uncertainty) {
    const auto img = decode_pgm(encode_pgm(*rb.uncertainty));
    pgm_ok = img.width == 64 && img.height == 64 && img.pixels.size() == 64u * 64u;
  }
  const bool ok = zmax == 0.0 && std::abs(halving - 1.0) <= 0.3 && umax > 0 && pgm_ok;
  return {ok, "rate-0 max uncertainty " + fmt("%.3g", zmax) + ", std(4N)/std(N) " + fmt("%.3f", s4 / s1) +
                  " (want 0.5 +/- 30%), max uncertainty " + fmt("%.3g", umax) + ", pgm " + (pgm_ok ? "ok" : "bad")};
}

// ---------------------------------------------------------------- 10

Outcome reproducibility() {
  const fs::path root = fs::temp_directory_path() / ("mforge_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const GridSpec g = GridSpec::make({32, 32});
  RunConfig cfg;
  cfg.seed = 17;
  cfg.train.epochs = 2;
  cfg.train.dropout_rate = 0.3;
  cfg.predict_samples = 4;

  std::string detail;
  bool ok = true;
  auto check = [&](bool same, const std::string& what) {
    ok &= same;
    detail += (detail.empty() ? "" : "; ") + what + (same ? " identical" : " DIFFER");
  };

  // synth: serial and threaded runs write the same bytes
  const std::string m1 = synth_dataset((root / "a").string(), 6, g, 5, cfg.synth_options(), 1);
  synth_dataset((root / "b").string(), 6, g, 5, cfg.synth_options(), 2);
  bool synth_same = true;
  for (const auto& e : fs::directory_iterator(root / "a"))
    synth_same &= io::read_file(e.path().string()) == io::read_file((root / "b" / e.path().filename()).string());
  check(synth_same, "synth");

  const Manifest man = read_manifest(m1);
  std::vector<PairData> pairs;
  for (std::size_t i = 0; i < man.records.size(); ++i) pairs.push_back(load_pair(man, i));
  TrainedModel t1 = train_model(pairs, cfg), t2 = train_model(pairs, cfg);
  const auto ck = net::encode_checkpoint(t1.model, &t1.opt);
  check(ck == net::encode_checkpoint(t2.model, &t2.opt), "train");

  PredictionConfig pc = cfg.prediction();
  pc.seed = 4;
  auto predict_bytes = [&](net::NetModel<float>& m, PredictMode mode, int workers) {
    PredictionConfig c = pc;
    c.mode = mode;
    c.workers = workers;
    const auto r = predict_and_register(m, pairs[0].moving_A, pairs[0].target_B, c);
    auto b = encode_field(r.m0_pred);
    const auto phi = encode_field(r.phi_inv.map);
    b.insert(b.end(), phi.begin(), phi.end());
    if (r.uncertainty) {
      const auto u = encode_field(*r.uncertainty);
      b.insert(b.end(), u.begin(), u.end());
    }
    return b;
  };
  check(predict_bytes(t1.model, PredictMode::deterministic, 1) == predict_bytes(t2.model, PredictMode::deterministic, 1),
        "predict");
  check(predict_bytes(t1.model, PredictMode::bayesian, 1) == predict_bytes(t2.model, PredictMode::bayesian, 2),
        "bayesian predict (1 vs 2 workers)");

  const std::string path = (root / "model.mmnc").string();
  net::save_model(path, t1.model, &t1.opt);
  net::RmsPropState<float> opt;
  net::NetModel<float> loaded = net::load_model<float>(path, &opt);
  check(net::encode_checkpoint(loaded, &opt) == ck, "checkpoint round trip");
  check(predict_bytes(loaded, PredictMode::bayesian, 1) == predict_bytes(t1.model, PredictMode::bayesian, 1),
        "prediction from reloaded model");
  fs::remove_all(root);
  return {ok, detail};
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "kernel correctness", 10, kernel_correctness},
      {2, "shooting sanity", 60, shooting_sanity},
      {3, "energy gradient", 120, energy_gradient_check},
      {4, "optimization", 600, optimization},
      {5, "layer gradients", 120, layer_gradients},
      {6, "pipeline oracles", 60, pipeline_oracles},
      {7, "end-to-end 2D", 45 * 60, end_to_end},
      {8, "limited data", 20 * 60, limited_data},
      {9, "bayesian behaviour", 600, bayesian},
      {10, "reproducibility", 0, reproducibility},
  };
  std::set<int> pick;
  for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!pick.empty() && !pick.count(c.id)) continue;
    std::printf("[%2d] %s ...\n", c.id, c.name);
    std::fflush(stdout);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double dt = seconds_since(t0);
    const bool in_time = c.limit_s <= 0 || dt < c.limit_s;
    const bool pass = o.passed && in_time;
    failed += !pass;
    std::string time = fmt("%.1f s", dt);
    if (c.limit_s > 0) time += " of " + fmt("%.0f s", c.limit_s) + (in_time ? "" : " (OVER LIMIT)");
    std::printf("%s criterion %d (%s): %s [%s]\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                time.c_str());
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
