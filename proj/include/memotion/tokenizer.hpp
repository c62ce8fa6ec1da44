// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "memotion/errors.hpp"
#include "memotion/sample.hpp"

// Subword tokenization: byte-pair-merge vocabulary construction and greedy
// longest-match segmentation. A space is an ordinary symbol: every word after
// the first carries its separating space as a prefix, so pieces concatenate
// back to the normalized text.

namespace memotion {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr std::int32_t kClsId = 2;
inline constexpr std::int32_t kSepId = 3;
inline constexpr std::size_t kNumReserved = 4;

inline const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> tokens{"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  return tokens;
}

/// NFC-normalized, lowercased UTF-8. Invalid byte sequences become U+FFFD.
inline std::string normalize_text(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error(std::string("ICU NFC normalizer unavailable: ") + u_errorName(status));
  icu::UnicodeString s = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  s = nfc->normalize(s, status);
  s.toLower(icu::Locale::getRoot());
  s = nfc->normalize(s, status);
  if (U_FAILURE(status)) throw Error(std::string("ICU normalization failed: ") + u_errorName(status));
  std::string out;
  s.toUTF8String(out);
  return out;
}

/// Splits UTF-8 into one string per code point.
inline std::vector<std::string> code_points(std::string_view utf8) {
  std::vector<std::string> out;
  const auto* s = reinterpret_cast<const std::uint8_t*>(utf8.data());
  const auto n = static_cast<int32_t>(utf8.size());
  int32_t i = 0;
  while (i < n) {
    const int32_t start = i;
    UChar32 c;
    U8_NEXT(s, i, n, c);
    (void)c;
    out.emplace_back(utf8.substr(static_cast<std::size_t>(start), static_cast<std::size_t>(i - start)));
  }
  return out;
}

/// Normalizes and splits into words; words after the first keep one leading
/// space. Runs of Unicode whitespace collapse to that single space.
inline std::vector<std::string> pretokenize(std::string_view text) {
  const std::string norm = normalize_text(text);
  std::vector<std::string> words;
  std::string current;
  const auto* s = reinterpret_cast<const std::uint8_t*>(norm.data());
  const auto n = static_cast<int32_t>(norm.size());
  int32_t i = 0;
  auto flush = [&] {
    if (current.empty()) return;
    words.push_back(words.empty() ? current : " " + current);
    current.clear();
  };
  while (i < n) {
    const int32_t start = i;
    UChar32 c;
    U8_NEXT(s, i, n, c);
    if (c >= 0 && u_isUWhiteSpace(c)) {
      flush();
    } else {
      current.append(norm, static_cast<std::size_t>(start), static_cast<std::size_t>(i - start));
    }
  }
  flush();
  return words;
}

/// Ordered subword list; a token's id is its position.
class Vocabulary {
 public:
  Vocabulary() : Vocabulary(reserved_tokens()) {}

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    const auto& reserved = reserved_tokens();
    if (tokens_.size() < kNumReserved) throw InputError("vocabulary: missing reserved tokens");
    for (std::size_t i = 0; i < kNumReserved; ++i)
      if (tokens_[i] != reserved[i])
        throw InputError("vocabulary: id " + std::to_string(i) + " must be " + reserved[i] + ", found '" +
                         tokens_[i] + "'");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i].empty()) throw InputError("vocabulary: empty token at id " + std::to_string(i));
      if (!index_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second)
        throw InputError("vocabulary: duplicate token '" + tokens_[i] + "'");
      if (i >= kNumReserved) max_len_ = std::max(max_len_, code_points(tokens_[i]).size());
    }
  }

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t max_token_length() const { return max_len_; }

  /// Id of a subword, or -1. Reserved tokens are never matched from text.
  std::int32_t find(const std::string& piece) const {
    auto it = index_.find(piece);
    if (it == index_.end() || it->second < static_cast<std::int32_t>(kNumReserved)) return -1;
    return it->second;
  }

  /// One token per line, in id order.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write vocabulary " + path);
    for (const auto& t : tokens_) out << t << '\n';
    if (!out) throw InputError("failed writing vocabulary " + path);
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open vocabulary " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      tokens.push_back(line);
    }
    return Vocabulary(std::move(tokens));
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
  std::size_t max_len_ = 0;
};

/// Byte-pair-merge vocabulary of at most `size` entries. Single code points
/// enter first, by descending frequency then lexicographic order; merges then
/// join the most frequent adjacent pair (ties: lexicographically smallest
/// pair), one new subword per merge, until the size is reached or no pair is
/// left.
inline Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t size) {
  if (size < kNumReserved + 1) throw InputError("build_vocab: size must be at least 5");
  std::map<std::string, std::size_t> word_counts;
  for (const auto& text : corpus)
    for (auto& w : pretokenize(text)) ++word_counts[w];
  if (word_counts.empty()) throw InputError("build_vocab: empty corpus");

  struct Word {
    std::vector<std::string> symbols;
    std::size_t count;
  };
  std::vector<Word> words;
  std::map<std::string, std::size_t> char_counts;
  for (const auto& [w, c] : word_counts) {
    Word word{code_points(w), c};
    for (const auto& s : word.symbols) char_counts[s] += c;
    words.push_back(std::move(word));
  }

  std::vector<std::pair<std::string, std::size_t>> chars(char_counts.begin(), char_counts.end());
  std::stable_sort(chars.begin(), chars.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::string> tokens = reserved_tokens();
  std::unordered_map<std::string, bool> known;
  for (const auto& [ch, c] : chars) {
    if (tokens.size() >= size) break;
    tokens.push_back(ch);
    known[ch] = true;
  }

  while (tokens.size() < size) {
    std::map<std::pair<std::string, std::string>, std::size_t> pairs;
    for (const auto& w : words)
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i)
        if (known.count(w.symbols[i]) && known.count(w.symbols[i + 1]))
          pairs[{w.symbols[i], w.symbols[i + 1]}] += w.count;
    if (pairs.empty()) break;
    auto best = pairs.begin();
    for (auto it = pairs.begin(); it != pairs.end(); ++it)
      if (it->second > best->second) best = it;
    const auto [left, right] = best->first;
    const std::string merged = left + right;
    for (auto& w : words) {
      std::vector<std::string> next;
      next.reserve(w.symbols.size());
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == left && w.symbols[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(std::move(w.symbols[i]));
        }
      }
      w.symbols = std::move(next);
    }
    if (!known.count(merged)) {
      tokens.push_back(merged);
      known[merged] = true;
    }
  }
  return Vocabulary(std::move(tokens));
}

/// Greedy longest-match segmentation of one pretokenized word. Consecutive
/// code points that no subword covers become a single unknown id.
inline std::vector<std::int32_t> segment_word(const std::string& word, const Vocabulary& vocab) {
  const auto cps = code_points(word);
  std::vector<std::int32_t> ids;
  std::size_t i = 0;
  while (i < cps.size()) {
    std::int32_t id = -1;
    std::size_t len = std::min(vocab.max_token_length(), cps.size() - i);
    for (; len > 0; --len) {
      std::string piece;
      for (std::size_t k = 0; k < len; ++k) piece += cps[i + k];
      id = vocab.find(piece);
      if (id >= 0) break;
    }
    if (id >= 0) {
      ids.push_back(id);
      i += len;
    } else {
      if (ids.empty() || ids.back() != kUnkId) ids.push_back(kUnkId);
      ++i;
    }
  }
  return ids;
}

/// Subword ids of a text without framing.
inline std::vector<std::int32_t> encode_pieces(std::string_view text, const Vocabulary& vocab) {
  std::vector<std::int32_t> ids;
  for (const auto& w : pretokenize(text)) {
    auto part = segment_word(w, vocab);
    if (!ids.empty() && ids.back() == kUnkId && !part.empty() && part.front() == kUnkId) part.erase(part.begin());
    ids.insert(ids.end(), part.begin(), part.end());
  }
  return ids;
}

struct TokenizedText {
  EncodedText encoded;
  bool truncated = false;
};

/// [CLS] subwords [SEP] then padding to max_seq_len. Keeps the first
/// max_seq_len - 2 subwords. Segment ids are all zero.
inline TokenizedText tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_seq_len) {
  if (max_seq_len < 2) throw InputError("tokenize: max_seq_len must be at least 2");
  auto pieces = encode_pieces(text, vocab);
  TokenizedText out;
  if (pieces.size() > max_seq_len - 2) {
    pieces.resize(max_seq_len - 2);
    out.truncated = true;
  }
  auto& e = out.encoded;
  e.input_ids.assign(max_seq_len, kPadId);
  e.input_mask.assign(max_seq_len, 0);
  e.segment_ids.assign(max_seq_len, 0);
  e.input_ids[0] = kClsId;
  std::copy(pieces.begin(), pieces.end(), e.input_ids.begin() + 1);
  e.input_ids[pieces.size() + 1] = kSepId;
  std::fill(e.input_mask.begin(), e.input_mask.begin() + static_cast<std::ptrdiff_t>(pieces.size() + 2), 1);
  return out;
}

/// Concatenates the subwords of non-reserved ids; unknown ids render as [UNK].
inline std::string detokenize(std::span<const std::int32_t> ids, const Vocabulary& vocab) {
  std::string out;
  for (auto id : ids) {
    if (id == kUnkId) {
      out += reserved_tokens()[kUnkId];
    } else if (id >= static_cast<std::int32_t>(kNumReserved) && static_cast<std::size_t>(id) < vocab.size()) {
      out += vocab.token(id);
    }
  }
  return out;
}

}  // namespace memotion
