// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <utility>
#include <vector>

#include "memotion/errors.hpp"

// Typed access to flat `key -> value` string maps. Config files, checkpoint
// manifests and CLI overrides all go through these.
namespace memotion::kv {

using Map = std::map<std::string, std::string>;

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

/// Shortest representation that parses back to the identical value.
template <class T>
std::string format(T value) {
  if constexpr (std::is_same_v<T, bool>) {
    return value ? "true" : "false";
  } else {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    return std::string(buf.data(), ptr);
  }
}

template <class T>
T parse(std::string_view key, std::string_view text) {
  const std::string s = trim(text);
  if constexpr (std::is_same_v<T, bool>) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("key '" + std::string(key) + "': expected a boolean, got '" + s + "'");
  } else if constexpr (std::is_same_v<T, std::string>) {
    return s;
  } else {
    T value{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
      throw ConfigError("key '" + std::string(key) + "': cannot parse '" + s + "'");
    }
    return value;
  }
}

template <class T, std::size_t N>
std::string format_list(const std::array<T, N>& values) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) {
    if (i) out += ',';
    out += format(values[i]);
  }
  return out;
}

template <class T, std::size_t N>
std::array<T, N> parse_list(std::string_view key, std::string_view text) {
  std::array<T, N> out{};
  std::size_t count = 0;
  std::size_t start = 0;
  const std::string s(text);
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto piece = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (count == N) throw ConfigError("key '" + std::string(key) + "': more than " + std::to_string(N) + " values");
    out[count++] = parse<T>(key, piece);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (count != N) throw ConfigError("key '" + std::string(key) + "': expected " + std::to_string(N) + " values");
  return out;
}

/// Reads keys out of a map, remembering which were consumed so leftovers can
/// be rejected as unknown.
class Reader {
 public:
  explicit Reader(const Map& map) : map_(map) {}

  template <class T>
  void get(const std::string& key, T& target) {
    auto it = map_.find(key);
    if (it == map_.end()) return;
    used_.insert(key);
    target = parse<T>(key, it->second);
  }

  template <class T, std::size_t N>
  void get_list(const std::string& key, std::array<T, N>& target) {
    auto it = map_.find(key);
    if (it == map_.end()) return;
    used_.insert(key);
    target = parse_list<T, N>(key, it->second);
  }

  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : map_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

  void reject_unknown(std::string_view where) const {
    auto left = unused();
    if (!left.empty()) throw ConfigError(std::string(where) + ": unknown key '" + left.front() + "'");
  }

 private:
  const Map& map_;
  std::set<std::string> used_;
};

}  // namespace memotion::kv
