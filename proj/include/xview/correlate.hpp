#pragma once

// Circular cross-correlation along the azimuth (width) axis, orientation estimation and
// aligned distance between a fused aerial feature map F_s and a ground feature map F_g.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <vector>

#include "xview/error.hpp"
#include "xview/tensor.hpp"

namespace xview {

/// scores[i] = sum_{h,w,c} F_s(h, (i + w) mod W_s, c) * F_g(h, w, c), i in [0, W_s).
struct CorrelationProfile {
  std::vector<double> scores;

  std::size_t size() const noexcept { return scores.size(); }
};

struct Orientation {
  std::size_t best_shift = 0;
  double degrees = 0.0;
};

struct MatchResult {
  std::size_t best_shift = 0;
  double orientation_deg = 0.0;
  double distance = 0.0;
  double score = 0.0;
};

namespace detail {

template <class T>
void check_correlation_shapes(const FeatureMap<T>& aerial, const FeatureMap<T>& ground) {
  if (aerial.height() != ground.height() || aerial.channels() != ground.channels()) {
    throw ShapeError("aerial features " + aerial.shape() + " and ground features " + ground.shape() +
                     " differ in height or channels");
  }
  if (ground.width() > aerial.width()) {
    throw ShapeError("ground feature width " + std::to_string(ground.width()) + " exceeds aerial width " +
                     std::to_string(aerial.width()));
  }
  if (aerial.width() == 0) throw ShapeError("aerial feature map has zero width");
}

// FFTW planning is not thread-safe; execution on distinct buffers is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const noexcept { fftw_free(p); }
};

template <class V>
using FftwBuffer = std::unique_ptr<V[], FftwFree>;

template <class V>
FftwBuffer<V> fftw_alloc(std::size_t n) {
  auto* p = static_cast<V*>(fftw_malloc(sizeof(V) * std::max<std::size_t>(n, 1)));
  if (!p) throw std::bad_alloc();
  return FftwBuffer<V>(p);
}

struct PlanDeleter {
  void operator()(fftw_plan_s* p) const noexcept {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(p);
  }
};

using Plan = std::unique_ptr<fftw_plan_s, PlanDeleter>;

}  // namespace detail

/// Reference triple sum.
template <class T>
CorrelationProfile correlate_naive(const FeatureMap<T>& aerial, const FeatureMap<T>& ground) {
  detail::check_correlation_shapes(aerial, ground);
  const std::size_t Ws = aerial.width(), Wv = ground.width(), H = ground.height(), C = ground.channels();
  CorrelationProfile out{std::vector<double>(Ws, 0.0)};
  for (std::size_t i = 0; i < Ws; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < Wv; ++w) {
          s += static_cast<double>(aerial(h, (i + w) % Ws, c)) * static_cast<double>(ground(h, w, c));
        }
      }
    }
    out.scores[i] = s;
  }
  return out;
}

/// FFT route: per (h, c) row, conj(G) * A in the frequency domain, summed over rows, one inverse transform.
template <class T>
CorrelationProfile correlate_fft(const FeatureMap<T>& aerial, const FeatureMap<T>& ground) {
  detail::check_correlation_shapes(aerial, ground);
  const std::size_t Ws = aerial.width(), Wv = ground.width(), H = ground.height(), C = ground.channels();
  const std::size_t rows = H * C;
  const std::size_t bins = Ws / 2 + 1;

  auto a = detail::fftw_alloc<double>(rows * Ws);
  auto g = detail::fftw_alloc<double>(rows * Ws);
  auto fa = detail::fftw_alloc<fftw_complex>(rows * bins);
  auto fg = detail::fftw_alloc<fftw_complex>(rows * bins);
  auto acc = detail::fftw_alloc<fftw_complex>(bins);
  auto result = detail::fftw_alloc<double>(Ws);

  detail::Plan forward_a, forward_g, inverse;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    const int n[] = {static_cast<int>(Ws)};
    forward_a.reset(fftw_plan_many_dft_r2c(1, n, static_cast<int>(rows), a.get(), nullptr, 1, static_cast<int>(Ws),
                                           fa.get(), nullptr, 1, static_cast<int>(bins), FFTW_ESTIMATE));
    forward_g.reset(fftw_plan_many_dft_r2c(1, n, static_cast<int>(rows), g.get(), nullptr, 1, static_cast<int>(Ws),
                                           fg.get(), nullptr, 1, static_cast<int>(bins), FFTW_ESTIMATE));
    inverse.reset(fftw_plan_dft_c2r_1d(static_cast<int>(Ws), acc.get(), result.get(), FFTW_ESTIMATE));
  }
  if (!forward_a || !forward_g || !inverse) throw Error("FFTW could not create a correlation plan");

  // FFTW_ESTIMATE planning leaves the buffers untouched, so they are filled afterwards.
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t c = 0; c < C; ++c) {
      double* arow = a.get() + (h * C + c) * Ws;
      double* grow = g.get() + (h * C + c) * Ws;
      for (std::size_t w = 0; w < Ws; ++w) {
        arow[w] = static_cast<double>(aerial(h, w, c));
        grow[w] = w < Wv ? static_cast<double>(ground(h, w, c)) : 0.0;
      }
    }
  }
  fftw_execute(forward_a.get());
  fftw_execute(forward_g.get());

  for (std::size_t k = 0; k < bins; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double ar = fa[r * bins + k][0], ai = fa[r * bins + k][1];
      const double gr = fg[r * bins + k][0], gi = fg[r * bins + k][1];
      // A * conj(G)
      re += ar * gr + ai * gi;
      im += ai * gr - ar * gi;
    }
    acc[k][0] = re;
    acc[k][1] = im;
  }
  fftw_execute(inverse.get());

  CorrelationProfile out{std::vector<double>(Ws)};
  for (std::size_t i = 0; i < Ws; ++i) out.scores[i] = result[i] / static_cast<double>(Ws);
  return out;
}

/// Argmax with ties broken by the smallest shift.
inline Orientation estimate_orientation(const CorrelationProfile& profile) {
  if (profile.scores.empty()) throw ShapeError("empty correlation profile");
  const auto it = std::max_element(profile.scores.begin(), profile.scores.end());
  const auto shift = static_cast<std::size_t>(it - profile.scores.begin());
  return {shift, static_cast<double>(shift) * 360.0 / static_cast<double>(profile.scores.size())};
}

/// Circular crop of F_s at best_shift, both crops L2-normalized, Euclidean distance in [0, 2].
template <class T>
double aligned_distance(const FeatureMap<T>& aerial, const FeatureMap<T>& ground, std::size_t best_shift) {
  detail::check_correlation_shapes(aerial, ground);
  if (best_shift >= aerial.width()) throw ShapeError("shift outside aerial feature width");
  const std::size_t Ws = aerial.width(), Wv = ground.width(), H = ground.height(), C = ground.channels();
  double aa = 0.0, gg = 0.0, ag = 0.0;
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t w = 0; w < Wv; ++w) {
      for (std::size_t c = 0; c < C; ++c) {
        const double x = static_cast<double>(aerial(h, (best_shift + w) % Ws, c));
        const double y = static_cast<double>(ground(h, w, c));
        aa += x * x;
        gg += y * y;
        ag += x * y;
      }
    }
  }
  if (!(aa > 0.0) || !(gg > 0.0)) throw DegenerateFeatureError("zero-norm feature vector in aligned distance");
  const double na = std::sqrt(aa), ng = std::sqrt(gg);
  double d2 = 0.0;
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t w = 0; w < Wv; ++w) {
      for (std::size_t c = 0; c < C; ++c) {
        const double diff =
            static_cast<double>(aerial(h, (best_shift + w) % Ws, c)) / na - static_cast<double>(ground(h, w, c)) / ng;
        d2 += diff * diff;
      }
    }
  }
  return std::min(2.0, std::sqrt(d2));
}

template <class T>
MatchResult match_pair(const FeatureMap<T>& aerial, const FeatureMap<T>& ground) {
  const auto profile = correlate_fft(aerial, ground);
  const auto orient = estimate_orientation(profile);
  return {orient.best_shift, orient.degrees, aligned_distance(aerial, ground, orient.best_shift),
          profile.scores[orient.best_shift]};
}

}  // namespace xview
