// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "memotion/errors.hpp"
#include "memotion/image_io.hpp"
#include "memotion/rng.hpp"
#include "memotion/sample.hpp"
#include "memotion/tokenizer.hpp"

// Synthetic memes with learnable structure. Each sample draws an image
// pattern p (horizontal stripes, vertical stripes, checkerboard, disk) and a
// text template t (four disjoint keyword topics). Labels:
//
//   humor      = p               (image only)
//   sarcasm    = t               (text only)
//   motivation = t mod 2         (text only)
//   offense    = 2 [p >= 2] + [t >= 2]   (both)
//   sentiment  = [p >= 2] + [t >= 2]     (both)

namespace memotion {

inline constexpr std::size_t kNumPatterns = 4;
inline constexpr std::size_t kNumTemplates = 4;

struct SyntheticConfig {
  std::size_t resolution = 64;
  std::size_t max_seq_len = 32;
  std::size_t vocab_size = 200;
  std::array<double, kNumPatterns> pattern_weights{1, 1, 1, 1};
  std::array<double, kNumTemplates> template_weights{1, 1, 1, 1};
  double pixel_noise = 0.05;

  void validate() const {
    if (resolution < 8) throw InputError("synthetic: resolution must be at least 8");
    if (max_seq_len < 4) throw InputError("synthetic: max_seq_len must be at least 4");
    if (vocab_size < kNumReserved + 1) throw InputError("synthetic: vocab_size must be at least 5");
    auto check = [](const auto& w) {
      double sum = 0;
      for (double v : w) {
        if (!(v >= 0.0)) throw InputError("synthetic: weights must be non-negative");
        sum += v;
      }
      if (!(sum > 0.0)) throw InputError("synthetic: weights must not all be zero");
    };
    check(pattern_weights);
    check(template_weights);
    if (pixel_noise < 0.0) throw InputError("synthetic: pixel_noise must be non-negative");
  }
};

struct SyntheticDataset {
  std::vector<MemeSample> samples;
  std::vector<std::string> texts;  // raw text per sample
  std::vector<int> patterns;
  std::vector<int> templates;
  Vocabulary vocab;
};

inline LabelSet synthetic_labels(int pattern, int templ) {
  LabelSet l;
  l[Task::Humor] = pattern;
  l[Task::Sarcasm] = templ;
  l[Task::Motivation] = templ % 2;
  const int a = pattern >= 2 ? 1 : 0, b = templ >= 2 ? 1 : 0;
  l[Task::Offense] = 2 * a + b;
  l[Task::Sentiment] = a + b;
  return l;
}

/// Splits n into integer counts proportional to the weights (largest
/// remainder, ties to the lower index).
template <std::size_t K>
std::array<std::size_t, K> exact_counts(std::size_t n, const std::array<double, K>& weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::array<std::size_t, K> counts{};
  std::array<double, K> rem{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const double share = static_cast<double>(n) * weights[k] / total;
    counts[k] = static_cast<std::size_t>(std::floor(share));
    rem[k] = share - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  std::array<std::size_t, K> order{};
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % K]];
  return counts;
}

/// Grayscale pattern in [0, 1] with per-pixel noise, as a three-channel raster.
inline Raster synthetic_pattern(int pattern, std::size_t r, double noise, Rng& rng) {
  Raster img;
  img.height = img.width = r;
  img.channels = 3;
  img.values.resize(r * r * 3);
  const std::size_t band = std::max<std::size_t>(1, r / 16);
  const std::size_t phase = rng.below(2 * band);
  const double cx = static_cast<double>(r) / 2 + rng.uniform(-0.1, 0.1) * static_cast<double>(r);
  const double cy = static_cast<double>(r) / 2 + rng.uniform(-0.1, 0.1) * static_cast<double>(r);
  const double radius = static_cast<double>(r) / 4;
  for (std::size_t y = 0; y < r; ++y)
    for (std::size_t x = 0; x < r; ++x) {
      bool on = false;
      switch (pattern) {
        case 0: on = ((y + phase) / band) % 2 == 0; break;
        case 1: on = ((x + phase) / band) % 2 == 0; break;
        case 2: on = ((x / (2 * band)) + (y / (2 * band))) % 2 == 0; break;
        default: {
          const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
          on = dx * dx + dy * dy <= radius * radius;
        }
      }
      const double base = on ? 0.8 : 0.2;
      for (std::size_t c = 0; c < 3; ++c)
        img.values[(y * r + x) * 3 + c] = std::clamp(base + noise * rng.normal(), 0.0, 1.0);
    }
  return img;
}

inline std::string synthetic_text(int templ, Rng& rng) {
  static const std::array<std::vector<std::string>, kNumTemplates> keywords{{
      {"cat", "kitten", "purr", "meow", "whisker", "paw"},
      {"boss", "office", "monday", "deadline", "meeting", "email"},
      {"pizza", "burger", "taco", "snack", "cheese", "fries"},
      {"rocket", "planet", "star", "moon", "galaxy", "comet"},
  }};
  static const std::vector<std::string> fillers{"the", "a", "when", "you", "my", "is", "so", "very", "that", "this",
                                                "just", "me"};
  const auto& kw = keywords[static_cast<std::size_t>(templ)];
  // Fixed skeleton "k0 k1 _ k2" with the slot drawn from the rest of the
  // topic, then an optional filler.
  std::vector<std::string> words{kw[0], kw[1], kw[3 + rng.below(kw.size() - 3)], kw[2]};
  if (rng.below(2) == 0) words.push_back(fillers[rng.below(fillers.size())]);
  std::string text;
  for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
  // Occasional capitalization exercises normalization.
  if (rng.below(4) == 0) text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
  return text;
}

/// n samples, deterministic in (n, seed, config). Pattern and template
/// frequencies follow the weights exactly (largest remainder), in shuffled
/// order. The vocabulary is built from the generated texts.
inline SyntheticDataset generate_synthetic_dataset(std::size_t n, std::uint64_t seed,
                                                   const SyntheticConfig& config = {}) {
  if (n < 10) throw InputError("synthetic dataset needs at least 10 samples");
  config.validate();
  Rng rng(seed);
  auto expand = [&](const auto& counts) {
    std::vector<int> v;
    for (std::size_t k = 0; k < counts.size(); ++k) v.insert(v.end(), counts[k], static_cast<int>(k));
    shuffle(v, rng);
    return v;
  };
  SyntheticDataset ds;
  ds.patterns = expand(exact_counts(n, config.pattern_weights));
  ds.templates = expand(exact_counts(n, config.template_weights));
  std::vector<Raster> images;
  for (std::size_t i = 0; i < n; ++i) {
    images.push_back(synthetic_pattern(ds.patterns[i], config.resolution, config.pixel_noise, rng));
    ds.texts.push_back(synthetic_text(ds.templates[i], rng));
  }
  ds.vocab = build_vocab(ds.texts, config.vocab_size);
  for (std::size_t i = 0; i < n; ++i) {
    MemeSample s;
    char id[32];
    std::snprintf(id, sizeof id, "synth_%05zu", i);
    s.id = id;
    s.image = to_image_data(images[i]);
    s.text = tokenize(ds.texts[i], ds.vocab, config.max_seq_len).encoded;
    s.labels = synthetic_labels(ds.patterns[i], ds.templates[i]);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace memotion
