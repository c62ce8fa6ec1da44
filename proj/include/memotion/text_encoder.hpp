// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
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

struct TextEncoderConfig {
  std::size_t vocab_size = 1000;
  std::size_t embed_dim = 32;    // E: factorized token-embedding width
  std::size_t hidden_dim = 64;   // H
  std::size_t num_layers = 4;    // L
  std::size_t num_heads = 4;
  std::size_t ff_dim = 256;
  std::size_t max_seq_len = 64;
  std::size_t type_vocab_size = 2;
  bool share_layers = true;
  bool factorized_embedding = true;
  // Run the encoder only over the unmasked prefix. Outputs are bitwise equal
  // to the full masked computation because masked keys get zero attention.
  bool skip_padding = true;

  void validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("text encoder: " + what); };
    if (vocab_size < 4) fail("vocab_size must cover the 4 reserved tokens");
    if (embed_dim == 0 || hidden_dim == 0 || num_layers == 0 || num_heads == 0 || ff_dim == 0)
      fail("dimensions must be positive");
    if (hidden_dim % num_heads != 0)
      fail("hidden_dim " + std::to_string(hidden_dim) + " not divisible by num_heads " +
           std::to_string(num_heads));
    if (factorized_embedding && embed_dim > hidden_dim) fail("embed_dim must not exceed hidden_dim");
    if (max_seq_len < 1) fail("max_seq_len must be at least 1");
    if (type_vocab_size < 1) fail("type_vocab_size must be at least 1");
  }

  /// The xlarge-sized encoder: 24 shared layers, 16 heads, width 2048.
  static TextEncoderConfig full_scale() {
    TextEncoderConfig c;
    c.vocab_size = 30000;
    c.embed_dim = 128;
    c.hidden_dim = 2048;
    c.num_layers = 24;
    c.num_heads = 16;
    c.ff_dim = 8192;
    c.max_seq_len = 512;
    return c;
  }

  /// Token embedding table plus the E->H projection (or the unfactorized table).
  std::size_t embedding_parameter_count() const {
    return factorized_embedding ? vocab_size * embed_dim + embed_dim * hidden_dim
                                : vocab_size * hidden_dim;
  }
};

/// ALBERT-style encoder: factorized embeddings, cross-layer shared pre-norm
/// transformer blocks, and a tanh pooler over the first position.
template <class Real>
class TextEncoder {
 public:
  TextEncoder(const TextEncoderConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const std::size_t h = config_.hidden_dim;
    const std::size_t token_width = config_.factorized_embedding ? config_.embed_dim : h;

    word_ = params_.add("embed.word", {config_.vocab_size, token_width}, ParamGroup::TextEncoder, true);
    init::normal(word_, 0.02, rng);
    if (config_.factorized_embedding) {
      proj_ = params_.add("embed.proj", {config_.embed_dim, h}, ParamGroup::TextEncoder, true);
      init::glorot_uniform(proj_, config_.embed_dim, h, rng);
    }
    position_ = params_.add("embed.position", {config_.max_seq_len, h}, ParamGroup::TextEncoder, true);
    init::normal(position_, 0.02, rng);
    segment_ = params_.add("embed.segment", {config_.type_vocab_size, h}, ParamGroup::TextEncoder, true);
    init::normal(segment_, 0.02, rng);
    embed_norm_ = add_norm("embed.norm");

    const std::size_t stored = config_.share_layers ? 1 : config_.num_layers;
    for (std::size_t i = 0; i < stored; ++i) {
      const std::string p = config_.share_layers ? "block." : "block" + std::to_string(i) + ".";
      Block b;
      b.norm1 = add_norm(p + "norm1");
      b.q = add_dense(p + "attn.query", h, h, rng);
      b.k = add_dense(p + "attn.key", h, h, rng);
      b.v = add_dense(p + "attn.value", h, h, rng);
      b.o = add_dense(p + "attn.output", h, h, rng);
      b.norm2 = add_norm(p + "norm2");
      b.ff1 = add_dense(p + "ffn.in", h, config_.ff_dim, rng);
      b.ff2 = add_dense(p + "ffn.out", config_.ff_dim, h, rng);
      blocks_.push_back(b);
    }
    final_norm_ = add_norm("final_norm");
    pooler_ = add_dense("pooler", h, h, rng);
  }

  TextEncoder(const TextEncoder&) = delete;
  TextEncoder& operator=(const TextEncoder&) = delete;
  TextEncoder(TextEncoder&&) noexcept = default;
  TextEncoder& operator=(TextEncoder&&) noexcept = default;

  const TextEncoderConfig& config() const { return config_; }
  const ParameterSet<Real>& parameters() const { return params_; }
  std::size_t output_dim() const { return config_.hidden_dim; }

  /// Pooled output tanh(W h_0 + b) over the final first-position state: [H].
  Tensor<Real> forward(Tape<Real>& tape, const EncodedText& input, bool /*train*/) const {
    validate_input(input);
    const std::size_t len = config_.skip_padding ? input.active_length() : input.length();
    std::vector<std::int32_t> ids(input.input_ids.begin(), input.input_ids.begin() + len);
    std::vector<std::int32_t> segs(input.segment_ids.begin(), input.segment_ids.begin() + len);

    Tensor<Real> x = ops::embedding_lookup(tape, word_, ids);
    if (config_.factorized_embedding) x = ops::matmul(tape, x, proj_);
    x = ops::add(tape, x, ops::slice_rows(tape, position_, 0, len));
    x = ops::add(tape, x, ops::embedding_lookup(tape, segment_, segs));
    x = norm(tape, x, embed_norm_);

    auto mask = Tensor<Real>::zeros({len});
    for (std::size_t i = 0; i < len; ++i)
      if (input.input_mask[i] == 0) mask.mutable_data()[i] = Real(-1e9);

    for (std::size_t layer = 0; layer < config_.num_layers; ++layer) {
      const Block& b = blocks_[config_.share_layers ? 0 : layer];
      x = ops::add(tape, x, attention(tape, norm(tape, x, b.norm1), mask, b));
      Tensor<Real> f = dense(tape, norm(tape, x, b.norm2), b.ff1);
      f = dense(tape, ops::gelu(tape, f), b.ff2);
      x = ops::add(tape, x, f);
    }
    x = norm(tape, x, final_norm_);
    Tensor<Real> first = ops::slice_rows(tape, x, 0, 1);
    Tensor<Real> pooled = ops::tanh(tape, dense(tape, first, pooler_));
    return ops::reshape(tape, pooled, {config_.hidden_dim});
  }

  void validate_input(const EncodedText& input) const {
    const std::size_t n = input.length();
    if (n == 0) throw InputError("text encoder: empty input");
    if (n > config_.max_seq_len) {
      throw InputError("text encoder: sequence length " + std::to_string(n) + " exceeds max_seq_len " +
                       std::to_string(config_.max_seq_len));
    }
    if (input.input_mask.size() != n || input.segment_ids.size() != n)
      throw InputError("text encoder: ids, mask and segment ids differ in length");
    if (input.input_mask[0] != 1) throw InputError("text encoder: first position must be unmasked");
    for (std::size_t i = 0; i < n; ++i) {
      if (input.input_mask[i] > 1 || (i > 0 && input.input_mask[i] > input.input_mask[i - 1]))
        throw InputError("text encoder: mask must be 1s followed by 0s");
      if (input.input_ids[i] < 0 || static_cast<std::size_t>(input.input_ids[i]) >= config_.vocab_size)
        throw InputError("text encoder: token id " + std::to_string(input.input_ids[i]) +
                         " outside vocabulary of " + std::to_string(config_.vocab_size));
      if (input.segment_ids[i] >= config_.type_vocab_size)
        throw InputError("text encoder: segment id out of range");
    }
  }

 private:
  struct Dense {
    Tensor<Real> weight, bias;
  };
  struct Norm {
    Tensor<Real> gamma, beta;
  };
  struct Block {
    Norm norm1, norm2;
    Dense q, k, v, o, ff1, ff2;
  };

  Dense add_dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    Dense d;
    d.weight = params_.add(name + ".weight", {in, out}, ParamGroup::TextEncoder, true);
    init::glorot_uniform(d.weight, in, out, rng);
    d.bias = params_.add(name + ".bias", {out}, ParamGroup::TextEncoder, false);
    return d;
  }

  Norm add_norm(const std::string& name) {
    Norm n;
    n.gamma = params_.add(name + ".gamma", {config_.hidden_dim}, ParamGroup::TextEncoder, false);
    init::constant(n.gamma, Real(1));
    n.beta = params_.add(name + ".beta", {config_.hidden_dim}, ParamGroup::TextEncoder, false);
    return n;
  }

  static Tensor<Real> dense(Tape<Real>& tape, const Tensor<Real>& x, const Dense& d) {
    return ops::add_bias(tape, ops::matmul(tape, x, d.weight), d.bias);
  }

  static Tensor<Real> norm(Tape<Real>& tape, const Tensor<Real>& x, const Norm& n) {
    return ops::layer_norm(tape, x, n.gamma, n.beta);
  }

  // Multi-head self-attention with an additive key mask (0 or -1e9 per key).
  Tensor<Real> attention(Tape<Real>& tape, const Tensor<Real>& x, const Tensor<Real>& mask,
                         const Block& b) const {
    const std::size_t heads = config_.num_heads;
    const std::size_t width = config_.hidden_dim / heads;
    const Real inv_sqrt = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(width)));
    Tensor<Real> q = dense(tape, x, b.q);
    Tensor<Real> k = dense(tape, x, b.k);
    Tensor<Real> v = dense(tape, x, b.v);
    std::vector<Tensor<Real>> contexts;
    contexts.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      Tensor<Real> qh = ops::narrow(tape, q, hd * width, width);
      Tensor<Real> kh = ops::narrow(tape, k, hd * width, width);
      Tensor<Real> vh = ops::narrow(tape, v, hd * width, width);
      Tensor<Real> scores = ops::scale(tape, ops::matmul(tape, qh, ops::transpose(tape, kh)), inv_sqrt);
      scores = ops::add_bias(tape, scores, mask);
      contexts.push_back(ops::matmul(tape, ops::softmax(tape, scores), vh));
    }
    return dense(tape, ops::concat(tape, contexts), b.o);
  }

  TextEncoderConfig config_;
  ParameterSet<Real> params_;
  Tensor<Real> word_, proj_, position_, segment_;
  Norm embed_norm_, final_norm_;
  std::vector<Block> blocks_;
  Dense pooler_;
};

template <class Real>
TextEncoder<Real> build_text_encoder(const TextEncoderConfig& config, std::uint64_t seed) {
  return TextEncoder<Real>(config, seed);
}

}  // namespace memotion
