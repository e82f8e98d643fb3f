#pragma once

// Triplet-loss training at desk scale: in-batch distance matrices, a bidirectional
// soft-margin triplet loss, reverse-mode gradients through alignment and the branches,
// and an Adam loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "xview/backbone.hpp"
#include "xview/correlate.hpp"
#include "xview/error.hpp"
#include "xview/imageops.hpp"
#include "xview/network.hpp"
#include "xview/tensor_file.hpp"

namespace xview {

/// Rows are ground queries, columns are aerial gallery items.
struct DistanceMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  /// Best azimuth shift of each entry, in feature columns.
  std::vector<std::size_t> shifts;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;

  DistanceMatrix() = default;
  DistanceMatrix(std::size_t r, std::size_t c, std::vector<double> v = {})
      : rows(r), cols(c), values(std::move(v)), shifts(r * c, 0) {
    if (values.empty()) values.assign(r * c, 0.0);
    if (values.size() != r * c) throw ShapeError("distance matrix value count mismatch");
  }

  double& operator()(std::size_t q, std::size_t g) { return values[q * cols + g]; }
  double operator()(std::size_t q, std::size_t g) const { return values[q * cols + g]; }
  bool square() const noexcept { return rows == cols; }
};

template <class T>
DistanceMatrix pairwise_distance_matrix(std::span<const FeatureMap<T>> ground, std::span<const FeatureMap<T>> aerial) {
  if (ground.empty() || aerial.empty()) throw ShapeError("distance matrix needs non-empty query and gallery sets");
  DistanceMatrix d(ground.size(), aerial.size());
  for (std::size_t q = 0; q < ground.size(); ++q) {
    for (std::size_t g = 0; g < aerial.size(); ++g) {
      const auto m = match_pair(aerial[g], ground[q]);
      d(q, g) = m.distance;
      d.shifts[q * d.cols + g] = m.best_shift;
    }
  }
  return d;
}

namespace detail {

inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline void check_loss_input(const DistanceMatrix& d, double gamma) {
  if (!d.square()) throw ShapeError("triplet loss needs a square distance matrix");
  if (d.rows < 2) throw ShapeError("triplet loss needs at least two items per batch");
  if (!(gamma > 0.0)) throw ConfigError("loss sharpness gamma must be positive");
}

}  // namespace detail

/// Mean of log(1 + exp(gamma (d_pos - d_neg))) over every in-batch triplet in both directions:
/// ground i against aerial negatives j (row i), and aerial j against ground negatives i (column j).
inline double soft_margin_triplet_loss(const DistanceMatrix& d, double gamma) {
  detail::check_loss_input(d, gamma);
  const std::size_t B = d.rows;
  double sum = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      if (i == j) continue;
      sum += detail::softplus(gamma * (d(i, i) - d(i, j)));
      sum += detail::softplus(gamma * (d(j, j) - d(i, j)));
    }
  }
  return sum / static_cast<double>(2 * B * (B - 1));
}

/// dLoss/dD, row-major like d.values.
inline std::vector<double> soft_margin_triplet_loss_gradient(const DistanceMatrix& d, double gamma) {
  detail::check_loss_input(d, gamma);
  const std::size_t B = d.rows;
  const double scale = gamma / static_cast<double>(2 * B * (B - 1));
  std::vector<double> g(B * B, 0.0);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      if (i == j) continue;
      const double s_row = detail::sigmoid(gamma * (d(i, i) - d(i, j))) * scale;
      g[i * B + i] += s_row;
      g[i * B + j] -= s_row;
      const double s_col = detail::sigmoid(gamma * (d(j, j) - d(i, j))) * scale;
      g[j * B + j] += s_col;
      g[i * B + j] -= s_col;
    }
  }
  return g;
}

/// Backpropagates upstream * d(distance) into the aerial and ground feature gradients.
/// The shift is held fixed; a zero distance contributes a zero subgradient.
template <class T>
void aligned_distance_backward(const FeatureMap<T>& aerial, const FeatureMap<T>& ground, std::size_t shift,
                               double upstream, FeatureMap<T>& grad_aerial, FeatureMap<T>& grad_ground) {
  const std::size_t Ws = aerial.width(), Wv = ground.width(), H = ground.height(), C = ground.channels();
  double aa = 0.0, gg = 0.0;
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < Wv; ++w)
      for (std::size_t c = 0; c < C; ++c) {
        const double x = static_cast<double>(aerial(h, (shift + w) % Ws, c));
        const double y = static_cast<double>(ground(h, w, c));
        aa += x * x;
        gg += y * y;
      }
  if (!(aa > 0.0) || !(gg > 0.0)) throw DegenerateFeatureError("zero-norm feature vector in aligned distance");
  const double na = std::sqrt(aa), ng = std::sqrt(gg);
  double d2 = 0.0, u_dot_diff = 0.0, v_dot_diff = 0.0;
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < Wv; ++w)
      for (std::size_t c = 0; c < C; ++c) {
        const double u = static_cast<double>(aerial(h, (shift + w) % Ws, c)) / na;
        const double v = static_cast<double>(ground(h, w, c)) / ng;
        d2 += (u - v) * (u - v);
        u_dot_diff += u * (u - v);
        v_dot_diff += v * (u - v);
      }
  const double dist = std::sqrt(d2);
  if (dist < 1e-12) return;
  // d dist / du = (u - v) / dist; through u = a / |a|: (du - u (u . du)) / |a|
  const double su = upstream / (dist * na);
  const double sv = upstream / (dist * ng);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < Wv; ++w)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t col = (shift + w) % Ws;
        const double u = static_cast<double>(aerial(h, col, c)) / na;
        const double v = static_cast<double>(ground(h, w, c)) / ng;
        const double diff = u - v;
        grad_aerial(h, col, c) += static_cast<T>(su * (diff - u * u_dot_diff));
        grad_ground(h, w, c) += static_cast<T>(-sv * (diff - v * v_dot_diff));
      }
}

/// One training example with its ground image already cropped to the working field of view.
template <class T>
struct TripletTensors {
  std::string id;
  Image<T> ground;
  Image<T> aerial;
  Image<T> mask;
};

template <class T>
struct BatchGradients {
  double loss = 0.0;
  DistanceMatrix distances;
  GradientBundle<T> gradients;
};

/// Loss and analytic gradients for every trainable tensor of the network on one batch.
template <class T>
BatchGradients<T> loss_gradients(const MatchingNetwork<T>& net, std::span<const TripletTensors<T>> batch, double gamma,
                                 std::mt19937_64* dropout_rng = nullptr) {
  const std::size_t B = batch.size();
  std::vector<ForwardTrace<T>> tg(B), ta(B), tm(B);
  std::vector<FeatureMap<T>> fg(B), fs(B);
  std::vector<std::size_t> aerial_channels(B);
  for (std::size_t b = 0; b < B; ++b) {
    fg[b] = net.ground().forward(batch[b].ground, tg[b], dropout_rng);
    auto fa = net.aerial().forward(batch[b].aerial, ta[b], dropout_rng);
    auto fm = net.mask().forward(batch[b].mask, tm[b], dropout_rng);
    aerial_channels[b] = fa.channels();
    fs[b] = concat_channels(fa, fm);
  }
  BatchGradients<T> out;
  out.distances = pairwise_distance_matrix<T>(fg, fs);
  out.loss = soft_margin_triplet_loss(out.distances, gamma);
  const auto dd = soft_margin_triplet_loss_gradient(out.distances, gamma);

  std::vector<FeatureMap<T>> gfg(B), gfs(B);
  for (std::size_t b = 0; b < B; ++b) {
    gfg[b] = FeatureMap<T>(fg[b].height(), fg[b].width(), fg[b].channels());
    gfs[b] = FeatureMap<T>(fs[b].height(), fs[b].width(), fs[b].channels());
  }
  for (std::size_t q = 0; q < B; ++q) {
    for (std::size_t g = 0; g < B; ++g) {
      const double up = dd[q * B + g];
      if (up == 0.0) continue;
      aligned_distance_backward(fs[g], fg[q], out.distances.shifts[q * B + g], up, gfs[g], gfg[q]);
    }
  }
  for (std::size_t b = 0; b < B; ++b) {
    net.ground().backward(tg[b], std::move(gfg[b]), out.gradients);
    const std::size_t ca = aerial_channels[b];
    net.aerial().backward(ta[b], slice_channels(gfs[b], 0, ca), out.gradients);
    net.mask().backward(tm[b], slice_channels(gfs[b], ca, gfs[b].channels() - ca), out.gradients);
  }
  return out;
}

struct TrainConfig {
  std::size_t epochs = 30;
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double gamma = 10.0;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  double fov_deg = 360.0;

  void validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train.lr must be positive");
    if (!(gamma > 0.0)) throw ConfigError("train.gamma must be positive");
    if (batch_size < 2) throw ConfigError("train.batch_size must be at least 2");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
      throw ConfigError("invalid Adam moment parameters");
    }
    fov_width(360, fov_deg);
  }
};

struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
};

/// Bias-corrected Adam update of every trainable tensor that has a gradient.
template <class T>
void adam_step(MatchingNetwork<T>& net, const GradientBundle<T>& grads, AdamState& state, double learning_rate,
               double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8) {
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  net.for_each_trainable([&](const std::string& name, std::vector<T>& values) {
    auto git = grads.find(name);
    if (git == grads.end()) return;
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.empty()) m.assign(values.size(), 0.0);
    if (v.empty()) v.assign(values.size(), 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = static_cast<double>(git->second[i]);
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      values[i] = static_cast<T>(static_cast<double>(values[i]) - learning_rate * mhat / (std::sqrt(vhat) + epsilon));
    }
  });
}

/// Training example with the full ground panorama; the field-of-view crop is drawn per epoch.
template <class T>
struct TrainingSample {
  std::string id;
  Image<T> ground_panorama;
  Image<T> aerial;
  Image<T> mask;
};

struct TrainResult {
  std::vector<double> epoch_losses;
  AdamState optimizer;
};

/// Seeded Adam loop. Each epoch shuffles the samples, draws one crop offset per sample and
/// records the mean batch loss. A trailing batch of one is folded into the previous batch.
template <class T>
TrainResult train(MatchingNetwork<T>& net, std::span<const TrainingSample<T>> data, const TrainConfig& config,
                  AdamState state = {}) {
  config.validate();
  if (data.empty()) throw ConfigError("training set is empty");
  if (data.size() < 2) throw ConfigError("training needs at least two triplets");
  std::mt19937_64 rng(config.seed);
  TrainResult result;
  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batches.emplace_back(start, std::min(order.size(), start + config.batch_size));
    }
    if (batches.size() > 1 && batches.back().second - batches.back().first == 1) {
      batches[batches.size() - 2].second = batches.back().second;
      batches.pop_back();
    }
    double loss_sum = 0.0;
    for (auto [begin, end] : batches) {
      std::vector<TripletTensors<T>> batch;
      batch.reserve(end - begin);
      for (std::size_t k = begin; k < end; ++k) {
        const auto& s = data[order[k]];
        std::uniform_int_distribution<std::size_t> offset(0, s.ground_panorama.width() - 1);
        batch.push_back({s.id, fov_crop(s.ground_panorama, config.fov_deg, offset(rng)), s.aerial, s.mask});
      }
      auto bg = loss_gradients<T>(net, batch, config.gamma, &rng);
      adam_step(net, bg.gradients, state, config.learning_rate, config.beta1, config.beta2, config.epsilon);
      loss_sum += bg.loss;
    }
    result.epoch_losses.push_back(loss_sum / static_cast<double>(batches.size()));
  }
  result.optimizer = std::move(state);
  return result;
}

inline void write_loss_history(const std::filesystem::path& path, std::span<const double> losses) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "epoch,mean_loss\n";
  out.precision(17);
  for (std::size_t e = 0; e < losses.size(); ++e) out << (e + 1) << ',' << losses[e] << '\n';
}

inline std::vector<double> read_loss_history(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line != "epoch,mean_loss") throw FormatError("loss history header mismatch in '" + path.string() + "'");
  std::vector<double> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("malformed loss history row '" + line + "'");
    out.push_back(std::stod(line.substr(comma + 1)));
  }
  return out;
}

/// Weights go to path; Adam state goes to path + ".optim" (plain text) and path + ".moments" (SANW).
template <class T>
void save_checkpoint(const MatchingNetwork<T>& net, const AdamState& state, const std::filesystem::path& path) {
  save_bundle(net.export_weights(), path);
  TensorBundle moments;
  auto put = [&moments](const std::string& name, const std::vector<double>& v) {
    moments.add(name, StoredTensor{{static_cast<std::uint32_t>(v.size())}, std::vector<float>(v.begin(), v.end())});
  };
  for (const auto& [name, v] : state.first_moment) put("m." + name, v);
  for (const auto& [name, v] : state.second_moment) put("v." + name, v);
  auto moments_path = path;
  moments_path += ".moments";
  save_bundle(moments, moments_path);
  auto optim_path = path;
  optim_path += ".optim";
  std::ofstream out(optim_path);
  if (!out) throw IoError("cannot write '" + optim_path.string() + "'");
  out << "step = " << state.step << "\n";
  out << "moments = " << moments_path.filename().string() << "\n";
}

inline AdamState load_optimizer_state(const std::filesystem::path& checkpoint) {
  auto optim_path = checkpoint;
  optim_path += ".optim";
  std::ifstream in(optim_path);
  if (!in) throw IoError("cannot open '" + optim_path.string() + "'");
  AdamState state;
  std::string line, moments_file;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key == "step") state.step = std::stoull(value);
    if (key == "moments") moments_file = value;
  }
  if (moments_file.empty()) throw FormatError("optimizer state lacks a moments entry");
  const auto moments = load_bundle(checkpoint.parent_path() / moments_file);
  for (const auto& name : moments.names()) {
    const auto& t = moments.at(name);
    std::vector<double> v(t.values.begin(), t.values.end());
    if (name.starts_with("m.")) state.first_moment[name.substr(2)] = std::move(v);
    else if (name.starts_with("v.")) state.second_moment[name.substr(2)] = std::move(v);
  }
  return state;
}

/// Combined checksum of the named tensors; detects any bitwise change.
inline std::uint64_t bundle_checksum(const TensorBundle& bundle, std::span<const std::string> names) {
  std::uint64_t h = 0;
  for (const auto& n : names) h = h * 1099511628211ULL ^ tensor_checksum(bundle.at(n));
  return h;
}

}  // namespace xview
