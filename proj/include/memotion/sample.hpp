// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "memotion/errors.hpp"

namespace memotion {

/// The five classification categories, in head order.
enum class Task : std::size_t { Sentiment = 0, Humor, Sarcasm, Offense, Motivation };

inline constexpr std::size_t kNumTasks = 5;
inline constexpr std::array<Task, kNumTasks> kAllTasks{Task::Sentiment, Task::Humor, Task::Sarcasm,
                                                       Task::Offense, Task::Motivation};
inline constexpr std::array<std::size_t, kNumTasks> kClassCounts{3, 4, 4, 4, 2};

inline constexpr std::size_t task_index(Task t) { return static_cast<std::size_t>(t); }
inline constexpr std::size_t class_count(Task t) { return kClassCounts[task_index(t)]; }

inline std::string_view task_name(Task t) {
  static constexpr std::array<std::string_view, kNumTasks> names{"sentiment", "humor", "sarcasm",
                                                                 "offense", "motivation"};
  return names[task_index(t)];
}

/// Fine-grained labels. sentiment: 0 negative, 1 neutral, 2 positive.
/// humor/sarcasm/offense: 0 absent, 1..3 increasing intensity. motivation: 0/1.
struct LabelSet {
  std::array<int, kNumTasks> values{};

  int operator[](Task t) const { return values[task_index(t)]; }
  int& operator[](Task t) { return values[task_index(t)]; }

  bool valid() const {
    for (Task t : kAllTasks) {
      const int v = (*this)[t];
      if (v < 0 || static_cast<std::size_t>(v) >= class_count(t)) return false;
    }
    return true;
  }

  friend bool operator==(const LabelSet&, const LabelSet&) = default;
};

/// Binary (coarse) label of a category: intensity scales collapse to
/// present/absent, motivation is already binary, sentiment is untouched.
inline int coarsen(Task t, int fine) {
  switch (t) {
    case Task::Humor:
    case Task::Sarcasm:
    case Task::Offense: return fine > 0 ? 1 : 0;
    default: return fine;
  }
}

inline LabelSet coarsen(const LabelSet& fine) {
  LabelSet out;
  for (Task t : kAllTasks) out[t] = coarsen(t, fine[t]);
  return out;
}

/// Token ids, attention mask and segment ids, all the same length.
struct EncodedText {
  std::vector<std::int32_t> input_ids;
  std::vector<std::uint8_t> input_mask;
  std::vector<std::uint8_t> segment_ids;

  std::size_t length() const { return input_ids.size(); }

  /// Number of leading positions with mask 1.
  std::size_t active_length() const {
    std::size_t n = 0;
    while (n < input_mask.size() && input_mask[n] == 1) ++n;
    return n;
  }

  friend bool operator==(const EncodedText&, const EncodedText&) = default;
};

/// Planar (channel-major) image of already normalized pixel values.
/// An image with zero channels means "no image".
struct ImageData {
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint8_t channels = 0;
  std::vector<float> pixels;  // channels * height * width

  bool empty() const { return channels == 0; }
  friend bool operator==(const ImageData&, const ImageData&) = default;
};

struct MemeSample {
  std::string id;
  ImageData image;
  EncodedText text;
  LabelSet labels;

  friend bool operator==(const MemeSample&, const MemeSample&) = default;
};

}  // namespace memotion
