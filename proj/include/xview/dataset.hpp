#pragma once

// Triplet manifests (ground panorama, aerial image, segmentation mask per location),
// seeded train/test splitting, preprocessing composition and the per-sample tensor cache.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "xview/config.hpp"
#include "xview/error.hpp"
#include "xview/image_io.hpp"
#include "xview/imageops.hpp"
#include "xview/metric.hpp"
#include "xview/tensor_file.hpp"

namespace xview {

struct TripletSample {
  std::string id;
  std::filesystem::path ground;
  std::filesystem::path aerial;
  std::filesystem::path mask;

  friend bool operator==(const TripletSample&, const TripletSample&) = default;
};

/// Ids double as cache file names, so they are restricted to [A-Za-z0-9._-].
inline bool valid_sample_id(const std::string& id) {
  if (id.empty() || id == "." || id == "..") return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' || c == '_' ||
           c == '-';
  });
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

/// Reads "id,ground,aerial,mask" rows in file order. Relative paths resolve against the
/// manifest's directory. check_files=false skips the existence check (dry runs).
inline std::vector<TripletSample> load_manifest(const std::filesystem::path& path, bool check_files = true) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  const auto base = path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw FormatError("manifest '" + path.string() + "' is empty");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  if (detail::split_csv_line(line) != std::vector<std::string>{"id", "ground", "aerial", "mask"}) {
    throw FormatError("manifest header must be 'id,ground,aerial,mask'");
  }
  std::vector<TripletSample> out;
  std::map<std::string, std::size_t> seen;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 4 || std::any_of(f.begin(), f.end(), [](const std::string& s) { return s.empty(); })) {
      throw FormatError("malformed manifest row at line " + std::to_string(lineno) + ": '" + line + "'");
    }
    if (!valid_sample_id(f[0])) {
      throw FormatError("invalid sample id '" + f[0] + "' at line " + std::to_string(lineno));
    }
    if (auto it = seen.find(f[0]); it != seen.end()) {
      throw FormatError("duplicate id '" + f[0] + "' at line " + std::to_string(lineno) + " (first seen at line " +
                        std::to_string(it->second) + ")");
    }
    seen.emplace(f[0], lineno);
    auto resolve = [&base](const std::string& p) {
      std::filesystem::path fp(p);
      return fp.is_absolute() ? fp : base / fp;
    };
    TripletSample s{f[0], resolve(f[1]), resolve(f[2]), resolve(f[3])};
    if (check_files) {
      for (const auto* p : {&s.ground, &s.aerial, &s.mask}) {
        if (!std::filesystem::exists(*p)) {
          throw IoError("sample '" + s.id + "' (line " + std::to_string(lineno) + "): missing file '" + p->string() +
                        "'");
        }
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<TripletSample>& samples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  out << "id,ground,aerial,mask\n";
  for (const auto& s : samples) {
    out << s.id << ',' << s.ground.string() << ',' << s.aerial.string() << ',' << s.mask.string() << '\n';
  }
}

struct SplitSpec {
  std::size_t train = 6647;
  std::size_t test = 2215;
  std::uint64_t seed = 0;
};

struct DatasetSplit {
  std::vector<TripletSample> train;
  std::vector<TripletSample> test;
};

/// Sorts by id, applies a seeded permutation, then takes the train prefix and the test block after it.
inline DatasetSplit split_dataset(std::vector<TripletSample> samples, const SplitSpec& spec) {
  if (spec.train + spec.test > samples.size()) {
    throw ConfigError("split needs " + std::to_string(spec.train) + " + " + std::to_string(spec.test) +
                      " samples but the manifest has " + std::to_string(samples.size()));
  }
  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::mt19937_64 rng(spec.seed);
  std::shuffle(samples.begin(), samples.end(), rng);
  DatasetSplit out;
  out.train.assign(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(spec.train));
  out.test.assign(samples.begin() + static_cast<std::ptrdiff_t>(spec.train),
                  samples.begin() + static_cast<std::ptrdiff_t>(spec.train + spec.test));
  return out;
}

/// Sidecar "id,split" rows.
inline void write_split_sidecar(const std::filesystem::path& path, const DatasetSplit& split) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write split file '" + path.string() + "'");
  out << "id,split\n";
  for (const auto& s : split.train) out << s.id << ",train\n";
  for (const auto& s : split.test) out << s.id << ",test\n";
}

inline std::map<std::string, std::string> read_split_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open split file '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (detail::split_csv_line(line) != std::vector<std::string>{"id", "split"}) {
    throw FormatError("split file header must be 'id,split'");
  }
  std::map<std::string, std::string> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 2 || (f[1] != "train" && f[1] != "test")) throw FormatError("malformed split row '" + line + "'");
    out[f[0]] = f[1];
  }
  return out;
}

/// Per-branch normalization statistics plus the polar warp geometry.
struct PreprocessConfig {
  PolarConfig polar;
  NormalizationStats ground_stats;
  NormalizationStats aerial_stats;
  NormalizationStats mask_stats;
};

inline void save_preprocess_config(const std::filesystem::path& path, const PreprocessConfig& cfg) {
  KeyValueConfig kv;
  kv.set("polar.ds", std::to_string(cfg.polar.aerial_size));
  kv.set("polar.hv", std::to_string(cfg.polar.target_height));
  kv.set("polar.wv", std::to_string(cfg.polar.target_width));
  auto join = [](const std::vector<double>& v) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
    return os.str();
  };
  for (auto [name, stats] : {std::pair{"ground", &cfg.ground_stats}, std::pair{"aerial", &cfg.aerial_stats},
                             std::pair{"mask", &cfg.mask_stats}}) {
    kv.set(std::string("stats.") + name + ".mean", join(stats->mean));
    kv.set(std::string("stats.") + name + ".std", join(stats->stddev));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write stats file '" + path.string() + "'");
  out << kv.dump();
}

inline PreprocessConfig load_preprocess_config(const std::filesystem::path& path) {
  const auto kv = KeyValueConfig::load(path);
  PreprocessConfig cfg;
  cfg.polar.aerial_size = kv.get_uint("polar.ds", 0);
  cfg.polar.target_height = kv.get_uint("polar.hv", 0);
  cfg.polar.target_width = kv.get_uint("polar.wv", 0);
  cfg.polar.validate();
  for (auto [name, stats] : {std::pair{"ground", &cfg.ground_stats}, std::pair{"aerial", &cfg.aerial_stats},
                             std::pair{"mask", &cfg.mask_stats}}) {
    stats->mean = kv.get_doubles(std::string("stats.") + name + ".mean");
    stats->stddev = kv.get_doubles(std::string("stats.") + name + ".std");
    stats->validate();
  }
  return cfg;
}

struct RawTriplet {
  Image<float> ground;
  Image<float> aerial;
  Image<float> mask;
};

inline RawTriplet read_raw_triplet(const TripletSample& sample) {
  try {
    return {read_image(sample.ground), read_image(sample.aerial), read_image(sample.mask)};
  } catch (const Error& e) {
    throw IoError("sample '" + sample.id + "': " + e.what());
  }
}

/// Ground panorama resized to H_v x W_v and normalized; aerial and mask polar-warped with the
/// same grid, then normalized. The ground panorama stays uncropped.
inline TrainingSample<float> preprocess_triplet(const std::string& id, const RawTriplet& raw,
                                                const PreprocessConfig& cfg, const PolarGrid& grid) {
  if (raw.aerial.height() != raw.aerial.width()) {
    throw ShapeError("sample '" + id + "': aerial image " + raw.aerial.shape() + " is not square");
  }
  if (raw.mask.height() != raw.aerial.height() || raw.mask.width() != raw.aerial.width()) {
    throw ShapeError("sample '" + id + "': mask " + raw.mask.shape() + " does not match aerial " + raw.aerial.shape());
  }
  try {
    TrainingSample<float> out;
    out.id = id;
    out.ground_panorama = normalize_image(
        resize_bilinear(raw.ground, cfg.polar.target_height, cfg.polar.target_width), cfg.ground_stats);
    out.aerial = normalize_image(polar_transform(raw.aerial, grid), cfg.aerial_stats);
    out.mask = normalize_image(polar_transform(raw.mask, grid), cfg.mask_stats);
    return out;
  } catch (const Error& e) {
    throw ShapeError("sample '" + id + "': " + e.what());
  }
}

inline TrainingSample<float> preprocess_sample(const TripletSample& sample, const PreprocessConfig& cfg,
                                               const PolarGrid& grid) {
  return preprocess_triplet(sample.id, read_raw_triplet(sample), cfg, grid);
}

/// Fresh preprocessing of one sample with its ground panorama cropped to fov_deg at offset_col.
inline TripletTensors<float> load_triplet(const TripletSample& sample, const PreprocessConfig& cfg, double fov_deg,
                                          std::size_t offset_col) {
  auto pre = preprocess_sample(sample, cfg, PolarGrid(cfg.polar));
  return {sample.id, fov_crop(pre.ground_panorama, fov_deg, offset_col), std::move(pre.aerial), std::move(pre.mask)};
}

inline std::filesystem::path cache_path(const std::filesystem::path& cache_dir, const std::string& id) {
  return cache_dir / (id + ".sanw");
}

inline TensorBundle cache_bundle(const TrainingSample<float>& s) {
  TensorBundle b;
  b.add("ground", s.ground_panorama);
  b.add("aerial", s.aerial);
  b.add("mask", s.mask);
  return b;
}

inline TrainingSample<float> load_cached_sample(const std::filesystem::path& cache_dir, const std::string& id) {
  const auto b = load_bundle(cache_path(cache_dir, id));
  return {id, b.tensor3<float>("ground"), b.tensor3<float>("aerial"), b.tensor3<float>("mask")};
}

/// Writes the cache entry unless an identical one exists. Returns true when bytes were written.
/// Throws if an existing entry differs (stale or corrupted cache).
inline bool store_cached_sample(const std::filesystem::path& cache_dir, const TrainingSample<float>& s,
                                bool overwrite_mismatch = false) {
  const auto path = cache_path(cache_dir, s.id);
  const auto bytes = encode_bundle(cache_bundle(s));
  if (std::filesystem::exists(path)) {
    if (read_file_bytes(path) == bytes) return false;
    if (!overwrite_mismatch) throw IoError("cache entry for '" + s.id + "' differs from fresh preprocessing");
  }
  write_file_bytes(path, bytes);
  return true;
}

}  // namespace xview
