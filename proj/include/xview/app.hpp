#pragma once

// End-to-end commands behind the xview CLI: preprocess, extract, match, train, eval.
//
// Output directory layout:
//   preprocess.txt                      polar geometry + per-branch normalization stats
//   split.csv                           id,split membership
//   cache/<id>.sanw                     preprocessed ground/aerial/mask tensors (unless cache_dir is set)
//   train_fov<F>/checkpoint.sanw        weights (+ .optim, .moments), loss.csv
//   features_fov<F>.sanw                <id>.aerial, <id>.ground, <id>.offset
//   eval/trained<F>_tested<T>.{csv,json}
//   eval/generalization.csv             trained x tested grid summary

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "xview/config.hpp"
#include "xview/correlate.hpp"
#include "xview/dataset.hpp"
#include "xview/error.hpp"
#include "xview/eval.hpp"
#include "xview/imageops.hpp"
#include "xview/metric.hpp"
#include "xview/network.hpp"
#include "xview/tensor_file.hpp"

namespace xview::app {

namespace fs = std::filesystem;

/// The four first-class field-of-view presets.
inline const std::vector<double>& fov_presets() {
  static const std::vector<double> p = {360.0, 180.0, 90.0, 70.0};
  return p;
}

inline std::string fov_tag(double fov) {
  std::ostringstream os;
  os << fov;
  return os.str();
}

struct RunConfig {
  fs::path manifest;
  fs::path output_dir = "xview_out";
  fs::path cache_dir;          // defaults to output_dir/cache
  std::string weights;         // checkpoint path, "random", or empty (use the trained checkpoint)
  fs::path pretrained;         // optional exported VGG16 prefix applied before training
  double fov_deg = 360.0;
  std::optional<double> tested_fov_deg;
  std::uint64_t seed = 0;
  PolarConfig polar;
  NetworkConfig network = default_network_config();
  TrainConfig train;
  SplitSpec split;
  std::size_t match_k = 5;
  std::string config_hash;

  fs::path cache() const { return cache_dir.empty() ? output_dir / "cache" : cache_dir; }
  fs::path preprocess_file() const { return output_dir / "preprocess.txt"; }
  fs::path split_file() const { return output_dir / "split.csv"; }
  fs::path train_dir(double fov) const { return output_dir / ("train_fov" + fov_tag(fov)); }
  fs::path checkpoint(double fov) const { return train_dir(fov) / "checkpoint.sanw"; }
  fs::path feature_store(double fov) const { return output_dir / ("features_fov" + fov_tag(fov) + ".sanw"); }
  fs::path report_path(double trained, double tested, const std::string& ext) const {
    return output_dir / "eval" / ("trained" + fov_tag(trained) + "_tested" + fov_tag(tested) + "." + ext);
  }
};

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Builds a RunConfig from key = value settings. Relative paths resolve against base_dir.
inline RunConfig run_config_from(const KeyValueConfig& kv, const fs::path& base_dir = {}) {
  auto path_of = [&](const std::string& key) -> fs::path {
    if (!kv.contains(key)) return {};
    fs::path p(kv.require(key));
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };
  RunConfig rc;
  rc.manifest = path_of("manifest");
  if (kv.contains("output_dir")) rc.output_dir = path_of("output_dir");
  rc.cache_dir = path_of("cache_dir");
  if (kv.contains("weights")) {
    const auto w = kv.require("weights");
    rc.weights = w == "random" ? w : path_of("weights").string();
  }
  rc.pretrained = path_of("pretrained");
  rc.fov_deg = kv.get_double("fov", 360.0);
  if (kv.contains("tested_fov")) rc.tested_fov_deg = kv.get_double("tested_fov", 360.0);
  rc.seed = kv.get_uint("seed", 0);

  rc.polar.aerial_size = kv.get_uint("polar.ds", 512);
  rc.polar.target_height = kv.get_uint("polar.hv", 128);
  rc.polar.target_width = kv.get_uint("polar.wv", 512);
  rc.polar.validate();

  const auto preset = kv.get("backbone.preset", "vgg16");
  if (preset == "vgg16") {
    rc.network = default_network_config(kv.get_uint("backbone.channel_divisor", 1), rc.polar.target_height);
    const auto branch = kv.get_uint("backbone.branch_channels", 8);
    std::get<ConvLayer>(*std::find_if(rc.network.aerial.layers.rbegin(), rc.network.aerial.layers.rend(),
                                      [](const LayerSpec& l) { return std::holds_alternative<ConvLayer>(l); }))
        .out_channels = branch;
    std::get<ConvLayer>(*std::find_if(rc.network.mask.layers.rbegin(), rc.network.mask.layers.rend(),
                                      [](const LayerSpec& l) { return std::holds_alternative<ConvLayer>(l); }))
        .out_channels = branch;
    std::get<ConvLayer>(*std::find_if(rc.network.ground.layers.rbegin(), rc.network.ground.layers.rend(),
                                      [](const LayerSpec& l) { return std::holds_alternative<ConvLayer>(l); }))
        .out_channels = 2 * branch;
  } else if (preset == "reduced") {
    rc.network = reduced_network_config(kv.get_uint("backbone.hidden", 8), kv.get_uint("backbone.branch_channels", 4),
                                        rc.polar.target_height);
  } else {
    throw ConfigError("backbone.preset must be 'vgg16' or 'reduced', got '" + preset + "'");
  }
  if (kv.contains("backbone.frozen")) {
    const auto frozen = kv.get_uint("backbone.frozen", 0);
    for (auto* b : {&rc.network.ground, &rc.network.aerial, &rc.network.mask}) b->frozen_convs = frozen;
  }
  rc.network.validate();

  rc.train.epochs = kv.get_uint("train.epochs", 30);
  rc.train.learning_rate = kv.get_double("train.lr", 1e-5);
  rc.train.gamma = kv.get_double("train.gamma", 10.0);
  rc.train.batch_size = kv.get_uint("train.batch_size", 8);
  rc.train.beta1 = kv.get_double("train.beta1", 0.9);
  rc.train.beta2 = kv.get_double("train.beta2", 0.999);
  rc.train.epsilon = kv.get_double("train.epsilon", 1e-8);
  rc.train.seed = rc.seed;
  rc.train.fov_deg = rc.fov_deg;

  rc.split.train = kv.get_uint("split.train", 6647);
  rc.split.test = kv.get_uint("split.test", 2215);
  rc.split.seed = rc.seed;
  rc.match_k = kv.get_uint("match.k", 5);

  fov_width(360, rc.fov_deg);
  if (rc.tested_fov_deg) fov_width(360, *rc.tested_fov_deg);
  rc.config_hash = hex64(xview::detail::fnv1a(kv.dump()));
  return rc;
}

namespace detail {

inline void require_manifest(const RunConfig& rc) {
  if (rc.manifest.empty()) throw ConfigError("config key 'manifest' is required");
}

inline PreprocessConfig require_preprocess(const RunConfig& rc) {
  if (!fs::exists(rc.preprocess_file())) {
    throw IoError("'" + rc.preprocess_file().string() + "' not found; run 'preprocess' first");
  }
  auto cfg = load_preprocess_config(rc.preprocess_file());
  if (!(cfg.polar == rc.polar)) throw ConfigError("polar settings differ from the ones used by 'preprocess'");
  return cfg;
}

inline DatasetSplit current_split(const RunConfig& rc) {
  return split_dataset(load_manifest(rc.manifest, false), rc.split);
}

inline std::vector<TrainingSample<float>> load_cached(const RunConfig& rc, const std::vector<TripletSample>& samples) {
  std::vector<TrainingSample<float>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (!fs::exists(cache_path(rc.cache(), s.id))) {
      throw IoError("no cache entry for '" + s.id + "'; run 'preprocess' first");
    }
    out.push_back(load_cached_sample(rc.cache(), s.id));
  }
  return out;
}

/// Resolves the weights for inference at a trained field of view.
inline MatchingNetwork<float> load_network(const RunConfig& rc, double trained_fov) {
  if (rc.weights == "random") return MatchingNetwork<float>(rc.network, random_network_weights(rc.network, rc.seed));
  const fs::path path = rc.weights.empty() ? rc.checkpoint(trained_fov) : fs::path(rc.weights);
  if (!fs::exists(path)) {
    throw IoError("weight file '" + path.string() +
                  "' not found; expected a SANW weight file (magic 'SANW', version 1) produced by 'train', "
                  "or set 'weights = random'");
  }
  return MatchingNetwork<float>(rc.network, load_bundle(path));
}

/// Deterministic per-sample ground crop offsets for evaluation and extraction.
inline std::vector<std::size_t> crop_offsets(std::size_t count, std::size_t panorama_width, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> dist(0, panorama_width - 1);
  std::vector<std::size_t> out(count);
  for (auto& o : out) o = dist(rng);
  return out;
}

}  // namespace detail

struct PreprocessSummary {
  std::size_t samples = 0;
  std::size_t written = 0;
  std::vector<std::size_t> zero_variance_channels;
};

/// Computes training-split statistics, then preprocesses and caches every manifest sample.
/// Per-sample failures are collected and reported together.
inline PreprocessSummary cmd_preprocess(const RunConfig& rc, std::ostream& log) {
  detail::require_manifest(rc);
  const auto samples = load_manifest(rc.manifest, false);
  const auto split = split_dataset(samples, rc.split);
  write_split_sidecar(rc.split_file(), split);

  std::vector<std::string> failures;
  std::vector<Image<float>> grounds, aerials, masks;
  for (const auto& s : split.train) {
    try {
      auto raw = read_raw_triplet(s);
      grounds.push_back(std::move(raw.ground));
      aerials.push_back(std::move(raw.aerial));
      masks.push_back(std::move(raw.mask));
    } catch (const Error& e) {
      failures.push_back(e.what());
    }
  }
  PreprocessSummary summary;
  PreprocessConfig pc;
  pc.polar = rc.polar;
  if (failures.empty()) {
    if (grounds.empty()) throw ConfigError("training split is empty; statistics cannot be computed");
    auto gs = compute_dataset_stats<float>(grounds);
    auto as = compute_dataset_stats<float>(aerials);
    auto ms = compute_dataset_stats<float>(masks);
    for (auto* st : {&gs, &as, &ms}) {
      for (auto ch : st->zero_variance_channels) {
        log << "warning: zero variance in channel " << ch << "; stddev clamped to 1e-6\n";
        summary.zero_variance_channels.push_back(ch);
      }
    }
    pc.ground_stats = gs.stats;
    pc.aerial_stats = as.stats;
    pc.mask_stats = ms.stats;
    grounds.clear();
    aerials.clear();
    masks.clear();
    save_preprocess_config(rc.preprocess_file(), pc);

    const PolarGrid grid(rc.polar);
    for (const auto& s : samples) {
      try {
        const auto pre = preprocess_sample(s, pc, grid);
        if (store_cached_sample(rc.cache(), pre)) ++summary.written;
        ++summary.samples;
      } catch (const Error& e) {
        failures.push_back(e.what());
      }
    }
  }
  if (!failures.empty()) {
    std::string msg = std::to_string(failures.size()) + " sample(s) failed preprocessing:";
    for (const auto& f : failures) msg += "\n  " + f;
    throw IoError(msg);
  }
  log << "preprocessed " << summary.samples << " samples (" << summary.written << " cache entries written)\n";
  return summary;
}

/// Writes fused aerial features and field-of-view-cropped ground features for every manifest sample.
inline std::size_t cmd_extract(const RunConfig& rc, std::ostream& log) {
  detail::require_manifest(rc);
  detail::require_preprocess(rc);
  const auto samples = load_manifest(rc.manifest, false);
  const auto net = detail::load_network(rc, rc.fov_deg);
  const auto data = detail::load_cached(rc, samples);
  const auto offsets = detail::crop_offsets(data.size(), rc.polar.target_width, rc.seed);
  TensorBundle store;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    store.add(s.id + ".aerial", net.aerial_features(s.aerial, s.mask));
    store.add(s.id + ".ground", net.ground_features(fov_crop(s.ground_panorama, rc.fov_deg, offsets[i])));
    store.add(s.id + ".offset", StoredTensor{{1}, {static_cast<float>(offsets[i])}});
  }
  save_bundle(store, rc.feature_store(rc.fov_deg));
  log << "extracted features for " << data.size() << " samples into " << rc.feature_store(rc.fov_deg).string()
      << "\n";
  return data.size();
}

struct RankedMatch {
  std::string id;
  double distance = 0.0;
  double orientation_deg = 0.0;
  std::size_t best_shift = 0;
};

struct MatchReport {
  std::string query;
  double planted_offset_deg = 0.0;
  std::vector<RankedMatch> top;
};

/// Ranks every aerial entry of a feature store against one ground query.
inline MatchReport match_query(const TensorBundle& store, const std::string& query, std::size_t k,
                               std::size_t panorama_width, std::ostream& log) {
  if (!store.contains(query + ".ground")) throw ConfigError("unknown query id '" + query + "'");
  const auto ground = store.tensor3<float>(query + ".ground");
  std::vector<RankedMatch> all;
  for (const auto& name : store.names()) {
    if (!name.ends_with(".aerial")) continue;
    const auto id = name.substr(0, name.size() - 7);
    const auto m = match_pair(store.tensor3<float>(name), ground);
    all.push_back({id, m.distance, m.orientation_deg, m.best_shift});
  }
  if (all.empty()) throw ConfigError("feature store holds no aerial entries");
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.distance < b.distance; });
  if (k == 0) throw ConfigError("k must be at least 1");
  if (k > all.size()) {
    log << "warning: k=" << k << " exceeds gallery size " << all.size() << "; clamped\n";
    k = all.size();
  }
  MatchReport r;
  r.query = query;
  if (const auto* off = store.find(query + ".offset")) {
    r.planted_offset_deg = static_cast<double>(off->values.at(0)) * 360.0 / static_cast<double>(panorama_width);
  }
  r.top.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
  return r;
}

inline MatchReport cmd_match(const RunConfig& rc, const std::string& query, std::optional<std::size_t> k,
                             std::ostream& out, std::ostream& log) {
  const auto path = rc.feature_store(rc.fov_deg);
  if (!fs::exists(path)) throw IoError("feature store '" + path.string() + "' not found; run 'extract' first");
  const auto report = match_query(load_bundle(path), query, k.value_or(rc.match_k), rc.polar.target_width, log);
  out << "query " << report.query << " (ground crop offset " << report.planted_offset_deg << " deg)\n";
  out << "rank,id,distance,orientation_deg\n";
  for (std::size_t i = 0; i < report.top.size(); ++i) {
    const auto& m = report.top[i];
    out << (i + 1) << ',' << m.id << ',' << std::setprecision(6) << m.distance << ',' << m.orientation_deg << '\n';
  }
  return report;
}

struct TrainSummary {
  std::vector<double> epoch_losses;
  fs::path checkpoint;
};

/// Trains on the training split at rc.fov_deg and writes checkpoint + loss.csv.
inline TrainSummary cmd_train(const RunConfig& rc, std::ostream& log) {
  detail::require_manifest(rc);
  detail::require_preprocess(rc);
  const auto split = detail::current_split(rc);
  const auto data = detail::load_cached(rc, split.train);

  TensorBundle weights;
  if (!rc.weights.empty() && rc.weights != "random") {
    weights = load_bundle(rc.weights);
  } else {
    weights = random_network_weights(rc.network, rc.seed);
  }
  if (!rc.pretrained.empty()) {
    const auto pre = load_bundle(rc.pretrained);
    validate_pretrained_bundle(pre);
    log << "applied " << apply_pretrained(weights, pre) << " pretrained tensors\n";
  }
  MatchingNetwork<float> net(rc.network, weights);
  auto cfg = rc.train;
  cfg.fov_deg = rc.fov_deg;
  const auto result = train<float>(net, data, cfg);
  TrainSummary s{result.epoch_losses, rc.checkpoint(rc.fov_deg)};
  save_checkpoint(net, result.optimizer, s.checkpoint);
  write_loss_history(rc.train_dir(rc.fov_deg) / "loss.csv", result.epoch_losses);
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
    log << "epoch " << (e + 1) << " mean_loss " << result.epoch_losses[e] << "\n";
  }
  return s;
}

/// Distance matrix over the test split: ground queries cropped at tested_fov against fused aerial features.
inline DistanceMatrix evaluation_matrix(const RunConfig& rc, const MatchingNetwork<float>& net,
                                        const std::vector<TrainingSample<float>>& test, double tested_fov) {
  const auto offsets = detail::crop_offsets(test.size(), rc.polar.target_width, rc.seed);
  std::vector<FeatureMap<float>> ground, aerial;
  for (std::size_t i = 0; i < test.size(); ++i) {
    ground.push_back(net.ground_features(fov_crop(test[i].ground_panorama, tested_fov, offsets[i])));
    aerial.push_back(net.aerial_features(test[i].aerial, test[i].mask));
  }
  auto d = pairwise_distance_matrix<float>(ground, aerial);
  for (const auto& s : test) {
    d.row_labels.push_back(s.id);
    d.col_labels.push_back(s.id);
  }
  return d;
}

/// Evaluates weights trained at rc.fov_deg on queries cropped at each tested field of view.
/// Writes one CSV + JSON report per tested field of view.
inline std::vector<RecallReport> cmd_eval(const RunConfig& rc, const std::vector<double>& tested_fovs,
                                          std::ostream& log) {
  detail::require_manifest(rc);
  detail::require_preprocess(rc);
  const auto split = detail::current_split(rc);
  if (split.test.empty()) throw ConfigError("test split is empty");
  const auto test = detail::load_cached(rc, split.test);
  const auto net = detail::load_network(rc, rc.fov_deg);
  std::vector<RecallReport> reports;
  for (double tested : tested_fovs) {
    const auto d = evaluation_matrix(rc, net, test, tested);
    auto report = recall_report(d, tested, rc.fov_deg, rc.config_hash, rc.seed);
    emit_report(report, "csv", rc.report_path(rc.fov_deg, tested, "csv"));
    emit_report(report, "json", rc.report_path(rc.fov_deg, tested, "json"));
    log << "trained " << rc.fov_deg << " tested " << tested;
    for (const auto& e : report.recalls) log << ' ' << e.label << '=' << e.recall;
    log << '\n';
    reports.push_back(std::move(report));
  }
  return reports;
}

/// Trained-FoV rows x tested-FoV column groups of r@1, r@5, r@10, r@1%.
inline std::string generalization_table(const std::vector<RecallReport>& reports) {
  std::vector<double> trained, tested;
  for (const auto& r : reports) {
    if (std::find(trained.begin(), trained.end(), r.trained_fov_deg) == trained.end()) trained.push_back(r.trained_fov_deg);
    if (std::find(tested.begin(), tested.end(), r.fov_deg) == tested.end()) tested.push_back(r.fov_deg);
  }
  std::ostringstream os;
  os << "trained_fov";
  for (double t : tested)
    for (const char* l : {"r@1", "r@5", "r@10", "r@1%"}) os << ",tested" << fov_tag(t) << ' ' << l;
  os << '\n';
  for (double tr : trained) {
    os << fov_tag(tr);
    for (double te : tested) {
      const auto it = std::find_if(reports.begin(), reports.end(),
                                   [&](const auto& r) { return r.trained_fov_deg == tr && r.fov_deg == te; });
      for (const char* l : {"r@1", "r@5", "r@10", "r@1%"}) {
        os << ',';
        if (it != reports.end()) os << it->at(l).recall;
      }
    }
    os << '\n';
  }
  return os.str();
}

/// Every preset trained field of view against every preset tested field of view (16 reports).
inline std::vector<RecallReport> cmd_eval_grid(const RunConfig& rc, std::ostream& log) {
  std::vector<RecallReport> all;
  for (double trained : fov_presets()) {
    RunConfig sub = rc;
    sub.fov_deg = trained;
    auto reports = cmd_eval(sub, fov_presets(), log);
    all.insert(all.end(), reports.begin(), reports.end());
  }
  const auto path = rc.output_dir / "eval" / "generalization.csv";
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << generalization_table(all);
  return all;
}

}  // namespace xview::app
