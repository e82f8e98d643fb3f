#pragma once

// Three independent branches (ground, aerial, mask); no weights are shared between them.

#include <functional>
#include <string>
#include <vector>

#include "xview/backbone.hpp"
#include "xview/error.hpp"
#include "xview/tensor_file.hpp"

namespace xview {

inline constexpr const char* kGroundPrefix = "ground.";
inline constexpr const char* kAerialPrefix = "aerial.";
inline constexpr const char* kMaskPrefix = "mask.";

struct NetworkConfig {
  BackboneConfig ground;
  BackboneConfig aerial;
  BackboneConfig mask;

  void validate() const {
    ground.validate();
    aerial.validate();
    mask.validate();
    if (aerial.input_height != mask.input_height || aerial.output_height() != mask.output_height()) {
      throw ConfigError("aerial and mask branches must agree on input and output height");
    }
    if (ground.output_height() != aerial.output_height()) {
      throw ConfigError("ground and aerial branches must produce the same feature height");
    }
    if (ground.output_channels() != aerial.output_channels() + mask.output_channels()) {
      throw ConfigError("ground channels must equal aerial + mask channels");
    }
  }
};

/// 13-convolution branches: aerial and mask emit 8 channels each, ground emits 16.
inline NetworkConfig default_network_config(std::size_t channel_divisor = 1, std::size_t input_height = 128) {
  return {vgg16_branch_config(16, channel_divisor, input_height), vgg16_branch_config(8, channel_divisor, input_height),
          vgg16_branch_config(8, channel_divisor, input_height)};
}

inline NetworkConfig reduced_network_config(std::size_t hidden_channels = 8, std::size_t branch_channels = 4,
                                            std::size_t input_height = 8) {
  return {reduced_branch_config(hidden_channels, 2 * branch_channels, input_height),
          reduced_branch_config(hidden_channels, branch_channels, input_height),
          reduced_branch_config(hidden_channels, branch_channels, input_height)};
}

/// Random weights for all three branches. Each branch draws from its own seeded stream.
inline TensorBundle random_network_weights(const NetworkConfig& config, std::uint64_t seed) {
  TensorBundle out;
  for (auto [cfg, prefix] : {std::pair{&config.ground, kGroundPrefix}, std::pair{&config.aerial, kAerialPrefix},
                             std::pair{&config.mask, kMaskPrefix}}) {
    const auto part = random_weights(*cfg, seed, prefix);
    for (const auto& n : part.names()) out.add(n, part.at(n));
  }
  out.set_provenance({Provenance::Kind::random, seed});
  return out;
}

/// Copies unprefixed pretrained tensors (conv1_1.weight, ...) into every branch where the shape matches.
/// Returns the number of tensors replaced.
inline std::size_t apply_pretrained(TensorBundle& network_weights, const TensorBundle& pretrained) {
  std::size_t replaced = 0;
  for (const auto& name : pretrained.names()) {
    for (const char* prefix : {kGroundPrefix, kAerialPrefix, kMaskPrefix}) {
      const std::string full = std::string(prefix) + name;
      const auto* existing = network_weights.find(full);
      if (existing && existing->dims == pretrained.at(name).dims) {
        network_weights.set(full, pretrained.at(name));
        ++replaced;
      }
    }
  }
  return replaced;
}

/// Shape check of an exported pretrained bundle against the published VGG16 stack.
/// Returns the number of leading convolutions covered.
inline std::size_t validate_pretrained_bundle(const TensorBundle& bundle) {
  std::size_t covered = 0;
  for (const auto& s : vgg16_conv_shapes()) {
    const auto* k = bundle.find(s.name + ".weight");
    const auto* b = bundle.find(s.name + ".bias");
    if (!k && !b) break;
    if (!k || !b) throw FormatError("pretrained bundle has only one of kernel/bias for " + s.name);
    const std::vector<std::uint32_t> kd = {3, 3, static_cast<std::uint32_t>(s.in_channels),
                                           static_cast<std::uint32_t>(s.out_channels)};
    if (k->dims != kd || b->dims != std::vector<std::uint32_t>{static_cast<std::uint32_t>(s.out_channels)}) {
      throw ShapeError("pretrained tensor " + s.name + " does not match the VGG16 shape table");
    }
    ++covered;
  }
  if (covered * 2 != bundle.size()) throw FormatError("pretrained bundle holds tensors outside the VGG16 prefix");
  return covered;
}

template <class T>
class MatchingNetwork {
 public:
  MatchingNetwork(const NetworkConfig& config, const TensorBundle& weights)
      : config_((config.validate(), config)),
        ground_(config.ground, weights, kGroundPrefix),
        aerial_(config.aerial, weights, kAerialPrefix),
        mask_(config.mask, weights, kMaskPrefix),
        provenance_(weights.provenance()) {}

  const NetworkConfig& config() const noexcept { return config_; }
  Backbone<T>& ground() noexcept { return ground_; }
  Backbone<T>& aerial() noexcept { return aerial_; }
  Backbone<T>& mask() noexcept { return mask_; }
  const Backbone<T>& ground() const noexcept { return ground_; }
  const Backbone<T>& aerial() const noexcept { return aerial_; }
  const Backbone<T>& mask() const noexcept { return mask_; }

  FeatureMap<T> ground_features(const Image<T>& ground) const { return ground_.forward(ground); }

  /// Fused aerial + mask features.
  FeatureMap<T> aerial_features(const Image<T>& aerial, const Image<T>& mask) const {
    return concat_channels(aerial_.forward(aerial), mask_.forward(mask));
  }

  TensorBundle export_weights() const {
    TensorBundle out;
    ground_.export_to(out);
    aerial_.export_to(out);
    mask_.export_to(out);
    if (provenance_) out.set_provenance(*provenance_);
    return out;
  }

  /// Visits every trainable tensor as (full name, values).
  void for_each_trainable(const std::function<void(const std::string&, std::vector<T>&)>& fn) {
    for (Backbone<T>* b : {&ground_, &aerial_, &mask_}) {
      for (auto& p : b->convs()) {
        if (p.frozen) continue;
        fn(kernel_name(b->prefix(), p.name), p.kernel);
        fn(bias_name(b->prefix(), p.name), p.bias);
      }
    }
  }

  /// Names of tensors in frozen convolutions.
  std::vector<std::string> frozen_tensor_names() const {
    std::vector<std::string> out;
    for (const Backbone<T>* b : {&ground_, &aerial_, &mask_}) {
      for (const auto& p : b->convs()) {
        if (!p.frozen) continue;
        out.push_back(kernel_name(b->prefix(), p.name));
        out.push_back(bias_name(b->prefix(), p.name));
      }
    }
    return out;
  }

 private:
  NetworkConfig config_;
  Backbone<T> ground_;
  Backbone<T> aerial_;
  Backbone<T> mask_;
  std::optional<Provenance> provenance_;
};

}  // namespace xview
