#pragma once

// Dataset manifests. JSON document:
//   {"format": "mforge-manifest", "version": 1,
//    "pairs": [{"pair_id", "moving_A", "target_B", "target_A", "m0", "phi_inv", "seed"}, ...]}
// Paths are relative to the manifest's directory unless absolute. All files are MMRF.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mforge/field_io.hpp"
#include "mforge/net/train.hpp"
#include "mforge/parallel.hpp"
#include "mforge/patches.hpp"
#include "mforge/synth.hpp"

namespace mforge {

struct ManifestRecord {
  std::string pair_id;
  std::string moving_A;
  std::string target_B;
  std::string target_A;
  std::string m0;
  std::string phi_inv;
  std::uint64_t seed = 0;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestRecord> records;

  std::string resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return (path.is_absolute() ? path : base_dir / path).string();
  }
};

inline std::string encode_manifest(const std::vector<ManifestRecord>& records) {
  nlohmann::ordered_json doc;
  doc["format"] = "mforge-manifest";
  doc["version"] = 1;
  doc["pairs"] = nlohmann::ordered_json::array();
  for (const auto& r : records)
    doc["pairs"].push_back({{"pair_id", r.pair_id},
                            {"moving_A", r.moving_A},
                            {"target_B", r.target_B},
                            {"target_A", r.target_A},
                            {"m0", r.m0},
                            {"phi_inv", r.phi_inv},
                            {"seed", r.seed}});
  return doc.dump(2) + "\n";
}

inline void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  const std::string text = encode_manifest(records);
  io::write_file(path, std::vector<unsigned char>(text.begin(), text.end()));
}

inline Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  Manifest m;
  m.base_dir = base_dir;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest is not valid JSON: ") + e.what());
  }
  try {
    if (doc.value("format", "") != "mforge-manifest") throw DataError("manifest: missing or wrong \"format\"");
    if (doc.value("version", 0) != 1) throw DataError("manifest: unsupported version");
    for (const auto& p : doc.at("pairs")) {
      ManifestRecord r;
      r.pair_id = p.at("pair_id").get<std::string>();
      r.moving_A = p.at("moving_A").get<std::string>();
      r.target_B = p.at("target_B").get<std::string>();
      r.target_A = p.value("target_A", "");
      r.m0 = p.at("m0").get<std::string>();
      r.phi_inv = p.at("phi_inv").get<std::string>();
      r.seed = p.at("seed").get<std::uint64_t>();
      m.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  if (m.records.empty()) throw DataError("manifest has no pairs");
  return m;
}

inline Manifest read_manifest(const std::string& path) {
  const auto bytes = io::read_file(path);
  return parse_manifest(std::string(bytes.begin(), bytes.end()),
                        std::filesystem::absolute(path).parent_path());
}

struct PairData {
  std::string pair_id;
  Field64 moving_A;
  Field64 target_A;
  Field64 target_B;
  VField64 m0;
  DeformationMap<double> phi_inv;
};

inline PairData load_pair(const Manifest& m, std::size_t i) {
  const ManifestRecord& r = m.records.at(i);
  PairData p;
  p.pair_id = r.pair_id;
  p.moving_A = load_scalar<double>(m.resolve(r.moving_A));
  p.target_B = load_scalar<double>(m.resolve(r.target_B));
  if (!r.target_A.empty()) p.target_A = load_scalar<double>(m.resolve(r.target_A));
  p.m0 = load_vector<double>(m.resolve(r.m0));
  p.phi_inv = load_map<double>(m.resolve(r.phi_inv));
  const GridSpec& g = p.moving_A.grid();
  require_same_grid(g, p.target_B.grid(), "manifest pair");
  require_same_grid(g, p.m0.grid(), "manifest pair");
  require_same_grid(g, p.phi_inv.grid(), "manifest pair");
  return p;
}

inline PairData to_pair_data(const SynthPair& s, std::string id) {
  return {std::move(id), s.moving_A, s.target_A, s.target_B, s.m0_true, s.phi_inv_true};
}

/// Generates `count` pairs (pair i from derive_seed streams of `seed`), writes MMRF
/// files and manifest.json into out_dir, and returns the manifest path.
inline std::string synth_dataset(const std::string& out_dir, int count, const GridSpec& grid, std::uint64_t seed,
                                 const SynthOptions& opt, int workers = 1) {
  if (count < 1) throw UsageError("count must be >= 1");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<ManifestRecord> recs(count);
  parallel_for(static_cast<std::size_t>(count), workers, [&](std::size_t i) {
    const SynthPair p = synth_indexed_pair(seed, i, grid, opt);
    char id[32];
    std::snprintf(id, sizeof id, "pair_%04zu", i);
    ManifestRecord& r = recs[i];
    r.pair_id = id;
    r.moving_A = r.pair_id + "_moving_A.mmrf";
    r.target_B = r.pair_id + "_target_B.mmrf";
    r.target_A = r.pair_id + "_target_A.mmrf";
    r.m0 = r.pair_id + "_m0.mmrf";
    r.phi_inv = r.pair_id + "_phi_inv.mmrf";
    r.seed = p.seed;
    const fs::path d(out_dir);
    save_field((d / r.moving_A).string(), p.moving_A);
    save_field((d / r.target_B).string(), p.target_B);
    save_field((d / r.target_A).string(), p.target_A);
    save_field((d / r.m0).string(), p.m0_true);
    save_field((d / r.phi_inv).string(), p.phi_inv_true);
  });
  const std::string path = (fs::path(out_dir) / "manifest.json").string();
  write_manifest(path, recs);
  return path;
}

enum class TrainModality { multimodal, same };

struct SampleOptions {
  int patch_size = 15;
  int stride = 14;
  double background_threshold = 0.01;
  TrainModality modality = TrainModality::multimodal;
};

/// Patch samples (moving_A, target of the chosen modality, unscaled m0 components).
inline std::vector<net::TrainSample> make_samples(const std::vector<PairData>& pairs, const SampleOptions& o) {
  std::vector<net::TrainSample> out;
  for (const auto& p : pairs) {
    const Field64& target = o.modality == TrainModality::multimodal ? p.target_B : p.target_A;
    if (target.size() == 0) throw DataError(p.pair_id + ": no target_A image for same-modality training");
    const PatchGrid plan = plan_patches(p.moving_A.grid(), o.patch_size, o.stride);
    PatchJobs jobs = make_jobs(p.moving_A, target, plan, o.background_threshold);
    for (auto& j : jobs.jobs) {
      if (j.pruned) continue;
      net::TrainSample s;
      s.moving = std::move(j.moving_patch);
      s.target = std::move(j.target_patch);
      for (int d = 0; d < p.m0.dim(); ++d)
        s.momentum.push_back(extract_patch<double, float>(p.m0[d], j.start, plan.patch_size));
      out.push_back(std::move(s));
    }
  }
  return out;
}

/// Largest per-voxel momentum norm over the samples.
inline double max_momentum_norm(const std::vector<net::TrainSample>& data) {
  double mx = 0;
  for (const auto& s : data)
    for (std::size_t i = 0; i < s.moving.size(); ++i) {
      double n2 = 0;
      for (const auto& c : s.momentum) n2 += double(c[i]) * c[i];
      mx = std::max(mx, n2);
    }
  return std::sqrt(mx);
}

/// Multiplies all momentum targets by `scale` so the network sees O(1) values.
inline void scale_momentum(std::vector<net::TrainSample>& data, double scale) {
  for (auto& s : data)
    for (auto& c : s.momentum)
      for (float& v : c) v = static_cast<float>(v * scale);
}

}  // namespace mforge
