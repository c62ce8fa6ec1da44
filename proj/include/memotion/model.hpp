// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "memotion/errors.hpp"
#include "memotion/heads.hpp"
#include "memotion/image_encoder.hpp"
#include "memotion/kv.hpp"
#include "memotion/ops.hpp"
#include "memotion/params.hpp"
#include "memotion/rng.hpp"
#include "memotion/sample.hpp"
#include "memotion/tape.hpp"
#include "memotion/tensor.hpp"
#include "memotion/text_encoder.hpp"

namespace memotion {

/// Which encoders feed the head bank.
enum class Variant { Text, Image, Multimodal };

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Text: return "text";
    case Variant::Image: return "image";
    case Variant::Multimodal: return "multimodal";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "text") return Variant::Text;
  if (s == "image") return Variant::Image;
  if (s == "multimodal") return Variant::Multimodal;
  throw ConfigError("unknown model variant '" + std::string(s) + "' (expected text, image or multimodal)");
}

inline bool uses_text(Variant v) { return v != Variant::Image; }
inline bool uses_image(Variant v) { return v != Variant::Text; }

struct ModelConfig {
  Variant variant = Variant::Multimodal;
  TextEncoderConfig text;
  ImageEncoderConfig image;
  HeadBankConfig heads;
  std::uint64_t seed = 42;

  void validate() const {
    if (uses_text(variant)) text.validate();
    if (uses_image(variant)) image.validate();
    heads.validate();
  }

  /// Width of the head-bank input: C_last, H, or C_last + H.
  std::size_t feature_dim() const {
    std::size_t d = 0;
    if (uses_image(variant)) d += image.output_dim();
    if (uses_text(variant)) d += text.hidden_dim;
    return d;
  }

  static ModelConfig full_scale() {
    ModelConfig c;
    c.text = TextEncoderConfig::full_scale();
    c.image = ImageEncoderConfig::full_scale();
    return c;
  }

  kv::Map to_kv() const {
    kv::Map m;
    m["variant"] = std::string(variant_name(variant));
    m["seed"] = kv::format(seed);
    m["text.vocab_size"] = kv::format(text.vocab_size);
    m["text.embed_dim"] = kv::format(text.embed_dim);
    m["text.hidden_dim"] = kv::format(text.hidden_dim);
    m["text.num_layers"] = kv::format(text.num_layers);
    m["text.num_heads"] = kv::format(text.num_heads);
    m["text.ff_dim"] = kv::format(text.ff_dim);
    m["text.max_seq_len"] = kv::format(text.max_seq_len);
    m["text.type_vocab_size"] = kv::format(text.type_vocab_size);
    m["text.share_layers"] = kv::format(text.share_layers);
    m["text.factorized_embedding"] = kv::format(text.factorized_embedding);
    m["text.skip_padding"] = kv::format(text.skip_padding);
    m["image.input_resolution"] = kv::format(image.input_resolution);
    m["image.input_channels"] = kv::format(image.input_channels);
    m["image.stack_channels"] = kv::format_list(image.stack_channels);
    m["image.convs_per_stack"] = kv::format_list(image.convs_per_stack);
    m["heads.hidden1"] = kv::format(heads.hidden1);
    m["heads.hidden2"] = kv::format(heads.hidden2);
    m["heads.head_dropout"] = kv::format(heads.head_dropout);
    m["heads.feature_dropout"] = kv::format(heads.feature_dropout);
    return m;
  }

  /// Applies the keys present in `reader` on top of the current values.
  void read(kv::Reader& r) {
    std::string v = std::string(variant_name(variant));
    r.get("variant", v);
    variant = parse_variant(v);
    r.get("seed", seed);
    r.get("text.vocab_size", text.vocab_size);
    r.get("text.embed_dim", text.embed_dim);
    r.get("text.hidden_dim", text.hidden_dim);
    r.get("text.num_layers", text.num_layers);
    r.get("text.num_heads", text.num_heads);
    r.get("text.ff_dim", text.ff_dim);
    r.get("text.max_seq_len", text.max_seq_len);
    r.get("text.type_vocab_size", text.type_vocab_size);
    r.get("text.share_layers", text.share_layers);
    r.get("text.factorized_embedding", text.factorized_embedding);
    r.get("text.skip_padding", text.skip_padding);
    r.get("image.input_resolution", image.input_resolution);
    r.get("image.input_channels", image.input_channels);
    r.get_list("image.stack_channels", image.stack_channels);
    r.get_list("image.convs_per_stack", image.convs_per_stack);
    r.get("heads.hidden1", heads.hidden1);
    r.get("heads.hidden2", heads.hidden2);
    r.get("heads.head_dropout", heads.head_dropout);
    r.get("heads.feature_dropout", heads.feature_dropout);
  }

  static ModelConfig from_kv(const kv::Map& m) {
    ModelConfig c;
    kv::Reader r(m);
    c.read(r);
    r.reject_unknown("model config");
    return c;
  }
};

/// Late fusion: image embedding first, then text embedding.
template <class Real>
Tensor<Real> fuse(Tape<Real>& tape, const Tensor<Real>& image_embedding, const Tensor<Real>& text_embedding) {
  return ops::concat(tape, image_embedding, text_embedding);
}

/// Training phase. Frozen: encoder parameters are not trainable.
enum class Phase { Frozen, Unfrozen };

/// Encoders selected by the variant, plus the shared five-head classifier bank.
template <class Real>
class MemeModel {
 public:
  explicit MemeModel(const ModelConfig& config) : config_(config) {
    config_.validate();
    if (uses_text(config_.variant)) {
      text_.emplace(config_.text, derive_seed(config_.seed, 1));
      params_.extend(text_->parameters(), "text.");
    }
    if (uses_image(config_.variant)) {
      image_.emplace(config_.image, derive_seed(config_.seed, 2));
      params_.extend(image_->parameters(), "image.");
    }
    heads_.emplace(config_.feature_dim(), config_.heads, derive_seed(config_.seed, 3));
    params_.extend(heads_->parameters(), "heads.");
  }

  MemeModel(const MemeModel&) = delete;
  MemeModel& operator=(const MemeModel&) = delete;
  MemeModel(MemeModel&&) noexcept = default;
  MemeModel& operator=(MemeModel&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  Variant variant() const { return config_.variant; }
  const ParameterSet<Real>& parameters() const { return params_; }
  const TextEncoder<Real>* text_encoder() const { return text_ ? &*text_ : nullptr; }
  const ImageEncoder<Real>* image_encoder() const { return image_ ? &*image_ : nullptr; }
  const HeadBank<Real>& heads() const { return *heads_; }
  std::size_t feature_dim() const { return heads_->input_dim(); }

  /// Same architecture and values at another precision.
  template <class Other>
  MemeModel<Other> cast() const {
    MemeModel<Other> out(config_);
    out.parameters().copy_values_from(params_);
    for (std::size_t i = 0; i < params_.size(); ++i)
      Tensor<Other>(out.parameters()[i].tensor).set_trainable(params_[i].tensor.trainable());
    return out;
  }

  void set_phase(Phase phase) const {
    const bool encoders = phase == Phase::Unfrozen;
    params_.set_trainable(ParamGroup::TextEncoder, encoders);
    params_.set_trainable(ParamGroup::ImageEncoder, encoders);
    params_.set_trainable(ParamGroup::Heads, true);
  }

  /// Encoder features of one sample: [C_last], [H] or [C_last + H].
  Tensor<Real> encode(Tape<Real>& tape, const MemeSample& sample, bool train) const {
    std::optional<Tensor<Real>> img, txt;
    if (image_) {
      if (sample.image.empty())
        throw InputError("sample '" + sample.id + "' has no image but the " +
                         std::string(variant_name(config_.variant)) + " model needs one");
      img = image_->forward(tape, sample.image, train);
    }
    if (text_) {
      if (sample.text.length() == 0)
        throw InputError("sample '" + sample.id + "' has no text but the " +
                         std::string(variant_name(config_.variant)) + " model needs it");
      txt = text_->forward(tape, sample.text, train);
    }
    if (img && txt) return fuse(tape, *img, *txt);
    return img ? *img : *txt;
  }

  HeadOutputs<Real> forward_features(Tape<Real>& tape, const Tensor<Real>& features, bool train,
                                     Rng& rng) const {
    return heads_->forward(tape, features, train, rng);
  }

  HeadOutputs<Real> forward(Tape<Real>& tape, std::span<const MemeSample* const> batch, bool train,
                            Rng& rng) const {
    if (batch.empty()) throw InputError("forward: empty batch");
    std::vector<Tensor<Real>> features;
    features.reserve(batch.size());
    for (const MemeSample* s : batch) features.push_back(encode(tape, *s, train));
    return forward_features(tape, ops::stack(tape, features), train, rng);
  }

  HeadOutputs<Real> forward(Tape<Real>& tape, const MemeSample& sample, bool train, Rng& rng) const {
    const MemeSample* one[] = {&sample};
    return forward(tape, std::span<const MemeSample* const>(one), train, rng);
  }

 private:
  ModelConfig config_;
  ParameterSet<Real> params_;
  std::optional<TextEncoder<Real>> text_;
  std::optional<ImageEncoder<Real>> image_;
  std::optional<HeadBank<Real>> heads_;
};

}  // namespace memotion
