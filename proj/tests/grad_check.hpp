#pragma once

// Central finite-difference oracle for the triplet loss. Every non-smooth selection (best shift,
// ReLU gate, max-pool winner) is frozen at the value of the unperturbed pass, so a step of h
// stays inside one linear region of the network and measures the derivative the backward pass
// is meant to compute. The forward pass here is a direct loop implementation, independent of
// the im2col path in the library.

#include <cmath>
#include <map>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "test_util.hpp"
#include "xview/correlate.hpp"
#include "xview/metric.hpp"
#include "xview/network.hpp"

namespace xview::testing {

/// Recorded gates for one branch forward: one flag per ReLU input, one source index per pool output.
struct Pattern {
  std::vector<std::vector<char>> relu;
  std::vector<std::vector<std::size_t>> pool;
};

/// Direct-loop forward of a branch. With record set the gates are captured, otherwise replayed.
inline FeatureMap<double> reference_forward(const Backbone<double>& branch, const Image<double>& input, Pattern& pattern,
                                            bool record) {
  const auto& cfg = branch.config();
  const bool circular = cfg.width_padding == WidthPadding::circular;
  FeatureMap<double> x = input;
  std::size_t conv = 0, relu = 0, pool = 0;
  for (const auto& layer : cfg.layers) {
    if (std::holds_alternative<ConvLayer>(layer)) {
      const auto& p = branch.convs()[conv++];
      const auto H = static_cast<std::ptrdiff_t>(x.height()), W = static_cast<std::ptrdiff_t>(x.width());
      FeatureMap<double> y(x.height(), x.width(), p.out_channels);
      for (std::ptrdiff_t r = 0; r < H; ++r)
        for (std::ptrdiff_t c = 0; c < W; ++c)
          for (std::size_t o = 0; o < p.out_channels; ++o) {
            double acc = p.bias[o];
            for (std::ptrdiff_t dr = 0; dr < 3; ++dr)
              for (std::ptrdiff_t dc = 0; dc < 3; ++dc) {
                const auto sr = r + dr - 1;
                auto sc = c + dc - 1;
                if (sr < 0 || sr >= H) continue;
                if (sc < 0 || sc >= W) {
                  if (!circular) continue;
                  sc = (sc + W) % W;
                }
                for (std::size_t i = 0; i < p.in_channels; ++i)
                  acc += x(sr, sc, i) * p.kernel[((dr * 3 + dc) * p.in_channels + i) * p.out_channels + o];
              }
            y(r, c, o) = acc;
          }
      if (p.activation == Activation::relu) {
        if (record) pattern.relu.emplace_back(y.size());
        auto& gate = pattern.relu[relu++];
        for (std::size_t i = 0; i < y.size(); ++i) {
          if (record) gate[i] = y.storage()[i] > 0.0;
          if (!gate[i]) y.storage()[i] = 0.0;
        }
      }
      x = std::move(y);
    } else if (const auto* pl = std::get_if<PoolLayer>(&layer)) {
      const std::size_t oh = (x.height() + pl->rows - 1) / pl->rows, ow = (x.width() + pl->cols - 1) / pl->cols;
      FeatureMap<double> y(oh, ow, x.channels());
      if (record) pattern.pool.emplace_back(y.size());
      auto& src = pattern.pool[pool++];
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c)
          for (std::size_t k = 0; k < x.channels(); ++k) {
            const std::size_t out = (r * ow + c) * x.channels() + k;
            if (record) {
              std::size_t best = ((r * pl->rows) * x.width() + c * pl->cols) * x.channels() + k;
              for (std::size_t i = r * pl->rows; i < std::min(x.height(), (r + 1) * pl->rows); ++i)
                for (std::size_t j = c * pl->cols; j < std::min(x.width(), (c + 1) * pl->cols); ++j) {
                  const std::size_t at = (i * x.width() + j) * x.channels() + k;
                  if (x.storage()[at] > x.storage()[best]) best = at;
                }
              src[out] = best;
            }
            y.storage()[out] = x.storage()[src[out]];
          }
      x = std::move(y);
    }
    // dropout is the identity here
  }
  return x;
}

struct BatchPattern {
  std::vector<Pattern> ground, aerial, mask;
  std::vector<std::size_t> shifts;
};

inline double reference_loss(const MatchingNetwork<double>& net, std::span<const TripletTensors<double>> batch,
                             BatchPattern& pattern, bool record, double gamma) {
  const std::size_t B = batch.size();
  if (record) {
    pattern.ground.assign(B, {});
    pattern.aerial.assign(B, {});
    pattern.mask.assign(B, {});
  }
  std::vector<FeatureMap<double>> fg, fs;
  for (std::size_t i = 0; i < B; ++i) {
    fg.push_back(reference_forward(net.ground(), batch[i].ground, pattern.ground[i], record));
    fs.push_back(concat_channels(reference_forward(net.aerial(), batch[i].aerial, pattern.aerial[i], record),
                                 reference_forward(net.mask(), batch[i].mask, pattern.mask[i], record)));
  }
  if (record) {
    pattern.shifts.resize(B * B);
    for (std::size_t q = 0; q < B; ++q)
      for (std::size_t g = 0; g < B; ++g)
        pattern.shifts[q * B + g] = estimate_orientation(correlate_naive(fs[g], fg[q])).best_shift;
  }
  const auto& shifts = pattern.shifts;
  DistanceMatrix d(B, B);
  for (std::size_t q = 0; q < B; ++q)
    for (std::size_t g = 0; g < B; ++g) d(q, g) = aligned_distance(fs[g], fg[q], shifts[q * B + g]);
  return soft_margin_triplet_loss(d, gamma);
}

struct GradCheckResult {
  std::map<std::string, double> relative_error;  // per tensor: max |analytic - numeric| / max |numeric|
  double worst = 0.0;
  double loss_difference = 0.0;  // reference forward vs library forward
  bool shifts_agree = false;
};

inline GradCheckResult check_gradients(MatchingNetwork<double>& net, std::span<const TripletTensors<double>> batch,
                                       double gamma, double h = 1e-3) {
  const auto analytic = loss_gradients<double>(net, batch, gamma);
  BatchPattern pattern;
  const double base = reference_loss(net, batch, pattern, true, gamma);
  GradCheckResult result;
  result.loss_difference = std::abs(base - analytic.loss);
  result.shifts_agree = pattern.shifts == analytic.distances.shifts;
  net.for_each_trainable([&](const std::string& name, std::vector<double>& values) {
    const auto it = analytic.gradients.find(name);
    std::vector<double> numeric(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = reference_loss(net, batch, pattern, false, gamma);
      values[i] = saved - h;
      const double down = reference_loss(net, batch, pattern, false, gamma);
      values[i] = saved;
      numeric[i] = (up - down) / (2.0 * h);
    }
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double a = it == analytic.gradients.end() ? 0.0 : it->second[i];
      diff = std::max(diff, std::abs(a - numeric[i]));
      scale = std::max(scale, std::abs(numeric[i]));
    }
    const double rel = scale > 0.0 ? diff / scale : diff;
    result.relative_error[name] = rel;
    result.worst = std::max(result.worst, rel);
  });
  return result;
}

/// Batch of 8 x width triplets with random images.
inline std::vector<TripletTensors<double>> random_batch(std::size_t n, std::size_t height, std::size_t width,
                                                        std::size_t ground_width, std::mt19937_64& rng) {
  std::vector<TripletTensors<double>> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"s" + std::to_string(i), random_tensor<double>(height, ground_width, 3, rng),
                   random_tensor<double>(height, width, 3, rng), random_tensor<double>(height, width, 3, rng)});
  }
  return out;
}

}  // namespace xview::testing
