#pragma once

// Truncated VGG16-style feature extractor. Three independent instances (ground, aerial,
// mask) form the matching network; the aerial and mask outputs are fused along channels.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "xview/error.hpp"
#include "xview/tensor.hpp"
#include "xview/tensor_file.hpp"

namespace xview {

enum class Activation { none, relu };

/// 3x3 convolution, stride 1, size-preserving padding.
struct ConvLayer {
  std::string name;
  std::size_t out_channels = 0;
  Activation activation = Activation::relu;
};

/// Max pooling with window == stride; ceil mode, so a partial trailing window is kept.
struct PoolLayer {
  std::size_t rows = 2;
  std::size_t cols = 2;
};

/// Inverted dropout; identity at inference.
struct DropoutLayer {
  double rate = 0.2;
};

using LayerSpec = std::variant<ConvLayer, PoolLayer, DropoutLayer>;

/// Border handling along the width (azimuth) axis. Rows are always zero padded.
enum class WidthPadding { zero, circular };

struct BackboneConfig {
  std::size_t input_height = 128;
  std::size_t input_channels = 3;
  std::vector<LayerSpec> layers;
  /// Number of leading convolutions whose tensors never change during training.
  std::size_t frozen_convs = 7;
  WidthPadding width_padding = WidthPadding::zero;

  std::size_t conv_count() const {
    return static_cast<std::size_t>(
        std::count_if(layers.begin(), layers.end(), [](const LayerSpec& l) { return std::holds_alternative<ConvLayer>(l); }));
  }

  std::size_t output_channels() const {
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
      if (const auto* c = std::get_if<ConvLayer>(&*it)) return c->out_channels;
    }
    return input_channels;
  }

  std::size_t output_height() const { return trace_extent(input_height, true); }
  std::size_t output_width(std::size_t input_width) const { return trace_extent(input_width, false); }

  void validate() const {
    if (input_height == 0 || input_channels == 0) throw ConfigError("backbone input dimensions must be positive");
    if (conv_count() == 0) throw ConfigError("backbone needs at least one convolution");
    if (frozen_convs > conv_count()) throw ConfigError("frozen prefix exceeds the number of convolutions");
    std::vector<std::string> seen;
    for (const auto& l : layers) {
      if (const auto* c = std::get_if<ConvLayer>(&l)) {
        if (c->out_channels == 0) throw ConfigError("convolution '" + c->name + "' has zero output channels");
        if (c->name.empty()) throw ConfigError("convolution layers need names");
        if (std::find(seen.begin(), seen.end(), c->name) != seen.end()) {
          throw ConfigError("duplicate convolution name '" + c->name + "'");
        }
        seen.push_back(c->name);
      } else if (const auto* p = std::get_if<PoolLayer>(&l)) {
        if (p->rows == 0 || p->cols == 0) throw ConfigError("pool window must be positive");
      } else if (const auto* d = std::get_if<DropoutLayer>(&l)) {
        if (!(d->rate >= 0.0 && d->rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
      }
    }
    if (output_height() == 0) throw ConfigError("backbone collapses the input height");
  }

 private:
  std::size_t trace_extent(std::size_t n, bool rows) const {
    for (const auto& l : layers) {
      if (const auto* p = std::get_if<PoolLayer>(&l)) {
        const std::size_t k = rows ? p->rows : p->cols;
        n = (n + k - 1) / k;
      }
    }
    return n;
  }
};

/// VGG16 convolution stack with the final convolution narrowed to output_channels.
///
/// Downsampling: 2x2 pools after conv1_2, conv2_2 and conv3_3, then height-only 2x1 pools after
/// conv4_3 and conv5_3, so 128 x W becomes 4 x ceil(W/8). Dropout follows each of the last three
/// convolutions. channel_divisor scales every hidden width down (1 = real VGG16 widths).
inline BackboneConfig vgg16_branch_config(std::size_t output_channels, std::size_t channel_divisor = 1,
                                          std::size_t input_height = 128) {
  if (channel_divisor == 0) throw ConfigError("channel divisor must be positive");
  auto w = [channel_divisor](std::size_t c) { return std::max<std::size_t>(1, c / channel_divisor); };
  BackboneConfig cfg;
  cfg.input_height = input_height;
  auto conv = [&cfg](std::string name, std::size_t out, Activation act = Activation::relu) {
    cfg.layers.emplace_back(ConvLayer{std::move(name), out, act});
  };
  conv("conv1_1", w(64));
  conv("conv1_2", w(64));
  cfg.layers.emplace_back(PoolLayer{2, 2});
  conv("conv2_1", w(128));
  conv("conv2_2", w(128));
  cfg.layers.emplace_back(PoolLayer{2, 2});
  conv("conv3_1", w(256));
  conv("conv3_2", w(256));
  conv("conv3_3", w(256));
  cfg.layers.emplace_back(PoolLayer{2, 2});
  conv("conv4_1", w(512));
  conv("conv4_2", w(512));
  conv("conv4_3", w(512));
  cfg.layers.emplace_back(PoolLayer{2, 1});
  conv("conv5_1", w(512));
  cfg.layers.emplace_back(DropoutLayer{0.2});
  conv("conv5_2", w(512));
  cfg.layers.emplace_back(DropoutLayer{0.2});
  conv("conv5_3", output_channels, Activation::none);
  cfg.layers.emplace_back(DropoutLayer{0.2});
  cfg.layers.emplace_back(PoolLayer{2, 1});
  cfg.frozen_convs = 7;
  return cfg;
}

/// Two convolutions and one symmetric 2x2 pool; desk-scale training and gradient checks.
inline BackboneConfig reduced_branch_config(std::size_t hidden_channels, std::size_t output_channels,
                                            std::size_t input_height = 8) {
  BackboneConfig cfg;
  cfg.input_height = input_height;
  cfg.layers = {ConvLayer{"conv1", hidden_channels, Activation::relu}, PoolLayer{2, 2},
                ConvLayer{"conv2", output_channels, Activation::none}};
  cfg.frozen_convs = 0;
  return cfg;
}

struct ConvShape {
  std::string name;
  std::size_t in_channels;
  std::size_t out_channels;
};

/// Published VGG16 convolution shapes, in network order.
inline std::vector<ConvShape> vgg16_conv_shapes() {
  return {{"conv1_1", 3, 64},    {"conv1_2", 64, 64},   {"conv2_1", 64, 128},  {"conv2_2", 128, 128},
          {"conv3_1", 128, 256}, {"conv3_2", 256, 256}, {"conv3_3", 256, 256}, {"conv4_1", 256, 512},
          {"conv4_2", 512, 512}, {"conv4_3", 512, 512}, {"conv5_1", 512, 512}, {"conv5_2", 512, 512},
          {"conv5_3", 512, 512}};
}

inline std::string kernel_name(const std::string& prefix, const std::string& layer) { return prefix + layer + ".weight"; }
inline std::string bias_name(const std::string& prefix, const std::string& layer) { return prefix + layer + ".bias"; }

/// Gradients keyed by full tensor name. Frozen tensors never appear.
template <class T>
using GradientBundle = std::map<std::string, std::vector<T>>;

template <class T>
struct ConvParams {
  std::string name;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Activation activation = Activation::relu;
  bool frozen = false;
  std::vector<T> kernel;  // [3][3][in][out] row-major
  std::vector<T> bias;    // [out]
};

/// Per-layer values kept by a training forward pass.
template <class T>
struct LayerTrace {
  Tensor3<T> input;
  Tensor3<T> output;
  std::vector<std::size_t> argmax;  // pooling
  std::vector<T> keep_scale;        // dropout
};

template <class T>
struct ForwardTrace {
  std::vector<LayerTrace<T>> layers;
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::size_t conv_chunk_rows(std::size_t width, std::size_t in_channels) {
  const std::size_t per_row = std::max<std::size_t>(1, width * 9 * in_channels);
  return std::max<std::size_t>(1, (std::size_t{1} << 22) / per_row);
}

/// Fills col (rows = output pixels of rows [r0, r1), cols = 3x3xin patch) from x.
template <class T, class Mat>
void im2col(const Tensor3<T>& x, std::size_t r0, std::size_t r1, bool circular, Mat& col) {
  const std::size_t H = x.height(), W = x.width(), C = x.channels();
  col.setZero((r1 - r0) * W, 9 * C);
  for (std::size_t r = r0; r < r1; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      T* dst = col.data() + ((r - r0) * W + c) * 9 * C;
      for (int kh = 0; kh < 3; ++kh) {
        const auto sr = static_cast<std::ptrdiff_t>(r) + kh - 1;
        if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(H)) continue;
        for (int kw = 0; kw < 3; ++kw) {
          auto sc = static_cast<std::ptrdiff_t>(c) + kw - 1;
          if (sc < 0 || sc >= static_cast<std::ptrdiff_t>(W)) {
            if (!circular) continue;
            sc = (sc + static_cast<std::ptrdiff_t>(W)) % static_cast<std::ptrdiff_t>(W);
          }
          const T* src = &x(static_cast<std::size_t>(sr), static_cast<std::size_t>(sc), 0);
          std::copy(src, src + C, dst + (kh * 3 + kw) * C);
        }
      }
    }
  }
}

/// Scatter-adds patch gradients back onto dx.
template <class T, class Mat>
void col2im_add(const Mat& dcol, std::size_t r0, std::size_t r1, bool circular, Tensor3<T>& dx) {
  const std::size_t H = dx.height(), W = dx.width(), C = dx.channels();
  for (std::size_t r = r0; r < r1; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      const T* src = dcol.data() + ((r - r0) * W + c) * 9 * C;
      for (int kh = 0; kh < 3; ++kh) {
        const auto sr = static_cast<std::ptrdiff_t>(r) + kh - 1;
        if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(H)) continue;
        for (int kw = 0; kw < 3; ++kw) {
          auto sc = static_cast<std::ptrdiff_t>(c) + kw - 1;
          if (sc < 0 || sc >= static_cast<std::ptrdiff_t>(W)) {
            if (!circular) continue;
            sc = (sc + static_cast<std::ptrdiff_t>(W)) % static_cast<std::ptrdiff_t>(W);
          }
          T* dst = &dx(static_cast<std::size_t>(sr), static_cast<std::size_t>(sc), 0);
          const T* s = src + (kh * 3 + kw) * C;
          for (std::size_t ch = 0; ch < C; ++ch) dst[ch] += s[ch];
        }
      }
    }
  }
}

}  // namespace detail

template <class T>
class Backbone {
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const Matrix>;
  using MutMap = Eigen::Map<Matrix>;

 public:
  /// Builds a branch whose convolution tensors are read from weights under prefix + layer name.
  Backbone(BackboneConfig config, const TensorBundle& weights, std::string prefix = "")
      : config_(std::move(config)), prefix_(std::move(prefix)) {
    config_.validate();
    std::size_t in = config_.input_channels;
    std::size_t index = 0;
    for (const auto& l : config_.layers) {
      const auto* c = std::get_if<ConvLayer>(&l);
      if (!c) continue;
      ConvParams<T> p;
      p.name = c->name;
      p.in_channels = in;
      p.out_channels = c->out_channels;
      p.activation = c->activation;
      p.frozen = index < config_.frozen_convs;
      const auto kname = kernel_name(prefix_, c->name);
      const auto bname = bias_name(prefix_, c->name);
      const auto* k = weights.find(kname);
      if (!k) throw FormatError("weight bundle has no kernel for layer '" + kname + "'");
      const auto* b = weights.find(bname);
      if (!b) throw FormatError("weight bundle has no bias for layer '" + bname + "'");
      const std::vector<std::uint32_t> kdims = {3, 3, static_cast<std::uint32_t>(in),
                                                static_cast<std::uint32_t>(c->out_channels)};
      if (k->dims != kdims) throw ShapeError("kernel '" + kname + "' has unexpected shape");
      if (b->dims != std::vector<std::uint32_t>{static_cast<std::uint32_t>(c->out_channels)}) {
        throw ShapeError("bias '" + bname + "' has unexpected shape");
      }
      p.kernel.assign(k->values.begin(), k->values.end());
      p.bias.assign(b->values.begin(), b->values.end());
      convs_.push_back(std::move(p));
      in = c->out_channels;
      ++index;
    }
  }

  const BackboneConfig& config() const noexcept { return config_; }
  const std::string& prefix() const noexcept { return prefix_; }
  std::vector<ConvParams<T>>& convs() noexcept { return convs_; }
  const std::vector<ConvParams<T>>& convs() const noexcept { return convs_; }

  /// Inference forward; dropout is the identity.
  FeatureMap<T> forward(const Image<T>& img) const { return run(img, nullptr, nullptr); }

  /// Training forward. Records what backward() needs; dropout is sampled from dropout_rng when given.
  FeatureMap<T> forward(const Image<T>& img, ForwardTrace<T>& trace, std::mt19937_64* dropout_rng) const {
    return run(img, &trace, dropout_rng);
  }

  /// Accumulates dLoss/dTensor for every trainable tensor into grads.
  void backward(const ForwardTrace<T>& trace, FeatureMap<T> grad, GradientBundle<T>& grads) const {
    const bool circular = config_.width_padding == WidthPadding::circular;
    // Input gradients are only needed while a trainable convolution remains upstream.
    std::size_t first_trainable = convs_.size();
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      if (!convs_[i].frozen) {
        first_trainable = i;
        break;
      }
    }
    std::size_t conv_index = convs_.size();
    for (std::size_t li = config_.layers.size(); li-- > 0;) {
      const auto& layer = config_.layers[li];
      const auto& lt = trace.layers[li];
      if (std::holds_alternative<ConvLayer>(layer)) {
        --conv_index;
        if (conv_index < first_trainable) return;
        const auto& p = convs_[conv_index];
        if (p.activation == Activation::relu) {
          for (std::size_t i = 0; i < grad.size(); ++i) {
            if (!(lt.output.storage()[i] > T(0))) grad.storage()[i] = T(0);
          }
        }
        const bool need_input = conv_index > first_trainable;
        Tensor3<T> dx;
        if (need_input) dx = Tensor3<T>(lt.input.height(), lt.input.width(), lt.input.channels());
        std::vector<T>* dk = nullptr;
        std::vector<T>* db = nullptr;
        if (!p.frozen) {
          auto& k = grads[kernel_name(prefix_, p.name)];
          auto& b = grads[bias_name(prefix_, p.name)];
          if (k.empty()) k.assign(p.kernel.size(), T(0));
          if (b.empty()) b.assign(p.bias.size(), T(0));
          dk = &k;
          db = &b;
        }
        const std::size_t H = lt.input.height(), W = lt.input.width();
        const std::size_t step = detail::conv_chunk_rows(W, p.in_channels);
        ConstMap kmat(p.kernel.data(), 9 * p.in_channels, p.out_channels);
        Matrix col;
        for (std::size_t r0 = 0; r0 < H; r0 += step) {
          const std::size_t r1 = std::min(H, r0 + step);
          ConstMap gout(grad.storage().data() + r0 * W * p.out_channels, (r1 - r0) * W, p.out_channels);
          if (dk) {
            detail::im2col(lt.input, r0, r1, circular, col);
            MutMap(dk->data(), 9 * p.in_channels, p.out_channels).noalias() += col.transpose() * gout;
            Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(db->data(), p.out_channels) += gout.colwise().sum();
          }
          if (need_input) {
            Matrix dcol = gout * kmat.transpose();
            detail::col2im_add(dcol, r0, r1, circular, dx);
          }
        }
        if (!need_input) return;
        grad = std::move(dx);
      } else if (const auto* pool = std::get_if<PoolLayer>(&layer)) {
        (void)pool;
        Tensor3<T> dx(lt.input.height(), lt.input.width(), lt.input.channels());
        for (std::size_t i = 0; i < grad.size(); ++i) dx.storage()[lt.argmax[i]] += grad.storage()[i];
        grad = std::move(dx);
      } else {
        if (!lt.keep_scale.empty()) {
          for (std::size_t i = 0; i < grad.size(); ++i) grad.storage()[i] *= lt.keep_scale[i];
        }
      }
    }
  }

  /// Writes every convolution tensor under prefix + layer name.
  void export_to(TensorBundle& bundle) const {
    for (const auto& p : convs_) {
      StoredTensor k{{3, 3, static_cast<std::uint32_t>(p.in_channels), static_cast<std::uint32_t>(p.out_channels)},
                     std::vector<float>(p.kernel.begin(), p.kernel.end())};
      StoredTensor b{{static_cast<std::uint32_t>(p.out_channels)}, std::vector<float>(p.bias.begin(), p.bias.end())};
      bundle.set(kernel_name(prefix_, p.name), std::move(k));
      bundle.set(bias_name(prefix_, p.name), std::move(b));
    }
  }

 private:
  FeatureMap<T> run(const Image<T>& img, ForwardTrace<T>* trace, std::mt19937_64* rng) const {
    if (img.height() != config_.input_height) {
      throw ShapeError("backbone expects input height " + std::to_string(config_.input_height) + ", got " +
                       img.shape());
    }
    if (img.channels() != config_.input_channels) {
      throw ShapeError("backbone expects " + std::to_string(config_.input_channels) + " channels, got " + img.shape());
    }
    if (img.width() == 0) throw ShapeError("backbone input has zero width");
    if (trace) trace->layers.assign(config_.layers.size(), {});
    const bool circular = config_.width_padding == WidthPadding::circular;
    Tensor3<T> x = img;
    std::size_t conv_index = 0;
    for (std::size_t li = 0; li < config_.layers.size(); ++li) {
      const auto& layer = config_.layers[li];
      LayerTrace<T>* lt = trace ? &trace->layers[li] : nullptr;
      if (std::holds_alternative<ConvLayer>(layer)) {
        const auto& p = convs_[conv_index++];
        Tensor3<T> y = conv(x, p, circular);
        if (lt) {
          lt->input = std::move(x);
          lt->output = y;
        }
        x = std::move(y);
      } else if (const auto* pool = std::get_if<PoolLayer>(&layer)) {
        x = max_pool(x, *pool, lt);
      } else {
        const auto& d = std::get<DropoutLayer>(layer);
        if (rng && d.rate > 0.0) {
          std::bernoulli_distribution keep(1.0 - d.rate);
          const T scale = static_cast<T>(1.0 / (1.0 - d.rate));
          std::vector<T> mask(x.size());
          for (std::size_t i = 0; i < x.size(); ++i) {
            mask[i] = keep(*rng) ? scale : T(0);
            x.storage()[i] *= mask[i];
          }
          if (lt) lt->keep_scale = std::move(mask);
        }
      }
    }
    return x;
  }

  static Tensor3<T> conv(const Tensor3<T>& x, const ConvParams<T>& p, bool circular) {
    const std::size_t H = x.height(), W = x.width();
    Tensor3<T> y(H, W, p.out_channels);
    ConstMap kmat(p.kernel.data(), 9 * p.in_channels, p.out_channels);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(p.bias.data(), p.out_channels);
    const std::size_t step = detail::conv_chunk_rows(W, p.in_channels);
    Matrix col;
    for (std::size_t r0 = 0; r0 < H; r0 += step) {
      const std::size_t r1 = std::min(H, r0 + step);
      detail::im2col(x, r0, r1, circular, col);
      MutMap out(y.storage().data() + r0 * W * p.out_channels, (r1 - r0) * W, p.out_channels);
      out.noalias() = col * kmat;
      out.rowwise() += bias;
    }
    if (p.activation == Activation::relu) {
      for (auto& v : y.storage()) v = v > T(0) ? v : T(0);
    }
    return y;
  }

  static Tensor3<T> max_pool(const Tensor3<T>& x, const PoolLayer& pool, LayerTrace<T>* lt) {
    const std::size_t H = x.height(), W = x.width(), C = x.channels();
    const std::size_t oh = (H + pool.rows - 1) / pool.rows;
    const std::size_t ow = (W + pool.cols - 1) / pool.cols;
    Tensor3<T> y(oh, ow, C);
    std::vector<std::size_t> argmax;
    if (lt) argmax.resize(y.size());
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t c = 0; c < ow; ++c) {
        for (std::size_t ch = 0; ch < C; ++ch) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t dr = 0; dr < pool.rows && r * pool.rows + dr < H; ++dr) {
            for (std::size_t dc = 0; dc < pool.cols && c * pool.cols + dc < W; ++dc) {
              const std::size_t idx = x.index(r * pool.rows + dr, c * pool.cols + dc, ch);
              if (x.storage()[idx] > best) {
                best = x.storage()[idx];
                best_idx = idx;
              }
            }
          }
          y(r, c, ch) = best;
          if (lt) argmax[y.index(r, c, ch)] = best_idx;
        }
      }
    }
    if (lt) {
      lt->input = Tensor3<T>(H, W, C);  // shape only; pooling backward scatters through argmax
      lt->argmax = std::move(argmax);
    }
    return y;
  }

  BackboneConfig config_;
  std::string prefix_;
  std::vector<ConvParams<T>> convs_;
};

/// Seeded He-uniform kernels (bound sqrt(6 / fan_in)) and zero biases for every convolution.
inline TensorBundle random_weights(const BackboneConfig& config, std::uint64_t seed, const std::string& prefix = "") {
  config.validate();
  TensorBundle bundle;
  std::size_t in = config.input_channels;
  for (const auto& l : config.layers) {
    const auto* c = std::get_if<ConvLayer>(&l);
    if (!c) continue;
    const std::uint64_t h = detail::fnv1a(prefix + c->name);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    std::mt19937_64 rng(seq);
    const double bound = std::sqrt(6.0 / static_cast<double>(9 * in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    StoredTensor k{{3, 3, static_cast<std::uint32_t>(in), static_cast<std::uint32_t>(c->out_channels)}, {}};
    k.values.resize(k.element_count());
    for (auto& v : k.values) v = static_cast<float>(dist(rng));
    bundle.add(kernel_name(prefix, c->name), std::move(k));
    bundle.add(bias_name(prefix, c->name),
               StoredTensor{{static_cast<std::uint32_t>(c->out_channels)}, std::vector<float>(c->out_channels, 0.0f)});
    in = c->out_channels;
  }
  bundle.set_provenance({Provenance::Kind::random, seed});
  return bundle;
}

inline Backbone<float> build_backbone(const BackboneConfig& config, const TensorBundle& weights,
                                      const std::string& prefix = "") {
  return Backbone<float>(config, weights, prefix);
}

/// Stacks aerial channels first, then mask channels.
template <class T>
FeatureMap<T> concat_channels(const FeatureMap<T>& sat, const FeatureMap<T>& seg) {
  if (sat.height() != seg.height() || sat.width() != seg.width()) {
    throw ShapeError("cannot concatenate feature maps " + sat.shape() + " and " + seg.shape());
  }
  FeatureMap<T> out(sat.height(), sat.width(), sat.channels() + seg.channels());
  for (std::size_t r = 0; r < sat.height(); ++r) {
    for (std::size_t c = 0; c < sat.width(); ++c) {
      auto a = sat.pixel(r, c);
      auto b = seg.pixel(r, c);
      auto dst = out.pixel(r, c);
      std::copy(a.begin(), a.end(), dst.begin());
      std::copy(b.begin(), b.end(), dst.begin() + static_cast<std::ptrdiff_t>(a.size()));
    }
  }
  return out;
}

/// Channels [first, first + count) of every pixel.
template <class T>
FeatureMap<T> slice_channels(const FeatureMap<T>& f, std::size_t first, std::size_t count) {
  if (first + count > f.channels()) throw ShapeError("channel slice out of range");
  FeatureMap<T> out(f.height(), f.width(), count);
  for (std::size_t r = 0; r < f.height(); ++r) {
    for (std::size_t c = 0; c < f.width(); ++c) {
      auto src = f.pixel(r, c).subspan(first, count);
      std::copy(src.begin(), src.end(), out.pixel(r, c).begin());
    }
  }
  return out;
}

}  // namespace xview
