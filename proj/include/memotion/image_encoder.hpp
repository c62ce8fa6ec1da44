// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "memotion/errors.hpp"
#include "memotion/ops.hpp"
#include "memotion/params.hpp"
#include "memotion/rng.hpp"
#include "memotion/sample.hpp"
#include "memotion/tape.hpp"
#include "memotion/tensor.hpp"

namespace memotion {

inline constexpr std::size_t kNumConvStacks = 5;

struct ImageEncoderConfig {
  std::size_t input_resolution = 64;
  std::size_t input_channels = 3;
  std::array<std::size_t, kNumConvStacks> stack_channels{8, 16, 32, 64, 64};
  std::array<std::size_t, kNumConvStacks> convs_per_stack{1, 1, 1, 1, 1};

  void validate() const {
    if (input_resolution == 0 || input_resolution % 32 != 0) {
      throw ConfigError("image encoder: input_resolution " + std::to_string(input_resolution) +
                        " must be a positive multiple of 32 (five 2x2 pools)");
    }
    if (input_channels == 0) throw ConfigError("image encoder: input_channels must be positive");
    for (std::size_t s = 0; s < kNumConvStacks; ++s) {
      if (stack_channels[s] == 0 || convs_per_stack[s] == 0)
        throw ConfigError("image encoder: stack " + std::to_string(s) + " has zero channels or convs");
    }
  }

  std::size_t output_dim() const { return stack_channels.back(); }

  /// VGG-16 convolutional trunk (13 convs) at a 512-pixel input.
  static ImageEncoderConfig full_scale() {
    ImageEncoderConfig c;
    c.input_resolution = 512;
    c.stack_channels = {64, 128, 256, 512, 512};
    c.convs_per_stack = {2, 2, 3, 3, 3};
    return c;
  }

  /// sum over convs of 3*3*C_in*C_out + C_out.
  std::size_t parameter_count() const {
    std::size_t n = 0, cin = input_channels;
    for (std::size_t s = 0; s < kNumConvStacks; ++s)
      for (std::size_t c = 0; c < convs_per_stack[s]; ++c) {
        n += 9 * cin * stack_channels[s] + stack_channels[s];
        cin = stack_channels[s];
      }
    return n;
  }
};

/// VGG-style trunk: five stacks of (3x3 conv + ReLU) each closed by a 2x2 max
/// pool, then global average pooling. No fully connected layers.
template <class Real>
class ImageEncoder {
 public:
  ImageEncoder(const ImageEncoderConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    std::size_t cin = config_.input_channels;
    for (std::size_t s = 0; s < kNumConvStacks; ++s) {
      for (std::size_t c = 0; c < config_.convs_per_stack[s]; ++c) {
        const std::size_t cout = config_.stack_channels[s];
        const std::string p = "stack" + std::to_string(s + 1) + ".conv" + std::to_string(c + 1);
        Conv conv;
        conv.kernel = params_.add(p + ".kernel", {cout, cin, 3, 3}, ParamGroup::ImageEncoder, true);
        init::he_uniform(conv.kernel, cin * 9, rng);
        conv.bias = params_.add(p + ".bias", {cout}, ParamGroup::ImageEncoder, false);
        conv.stack = s;
        convs_.push_back(conv);
        cin = cout;
      }
    }
  }

  ImageEncoder(const ImageEncoder&) = delete;
  ImageEncoder& operator=(const ImageEncoder&) = delete;
  ImageEncoder(ImageEncoder&&) noexcept = default;
  ImageEncoder& operator=(ImageEncoder&&) noexcept = default;

  const ImageEncoderConfig& config() const { return config_; }
  const ParameterSet<Real>& parameters() const { return params_; }
  std::size_t output_dim() const { return config_.output_dim(); }
  std::size_t pool_stages() const { return kNumConvStacks; }

  /// Pooled feature vector [C_last] from a [C, R, R] image.
  Tensor<Real> forward(Tape<Real>& tape, const Tensor<Real>& image, bool /*train*/) const {
    if (image.rank() != 3 || image.dim(0) != config_.input_channels ||
        image.dim(1) != config_.input_resolution || image.dim(2) != config_.input_resolution) {
      throw ShapeError("image encoder: expected [" + std::to_string(config_.input_channels) + "x" +
                       std::to_string(config_.input_resolution) + "x" +
                       std::to_string(config_.input_resolution) + "], got " + to_string(image.shape()));
    }
    Tensor<Real> x = image;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      x = ops::relu(tape, ops::conv2d(tape, x, convs_[i].kernel, convs_[i].bias));
      const bool stack_ends = i + 1 == convs_.size() || convs_[i + 1].stack != convs_[i].stack;
      if (stack_ends) x = ops::maxpool2d(tape, x);
    }
    return ops::global_avg_pool(tape, x);
  }

  Tensor<Real> forward(Tape<Real>& tape, const ImageData& image, bool train) const {
    return forward(tape, to_tensor(image), train);
  }

  static Tensor<Real> to_tensor(const ImageData& image) {
    if (image.empty()) throw InputError("image encoder: sample has no image");
    return Tensor<Real>::from({image.channels, image.height, image.width},
                              std::vector<Real>(image.pixels.begin(), image.pixels.end()));
  }

 private:
  struct Conv {
    Tensor<Real> kernel, bias;
    std::size_t stack = 0;
  };

  ImageEncoderConfig config_;
  ParameterSet<Real> params_;
  std::vector<Conv> convs_;
};

template <class Real>
ImageEncoder<Real> build_image_encoder(const ImageEncoderConfig& config, std::uint64_t seed) {
  return ImageEncoder<Real>(config, seed);
}

}  // namespace memotion
