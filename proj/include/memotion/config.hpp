// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "memotion/errors.hpp"
#include "memotion/kv.hpp"
#include "memotion/model.hpp"
#include "memotion/train.hpp"

// Run configuration file:
//
//   # comment
//   [model]
//   variant = multimodal
//   text.hidden_dim = 64
//   [optimizer]
//   kind = lamb
//   [training]
//   patience = 30
//   [data]
//   records = train.mem
//
// Every key is optional; missing keys keep their defaults. Unknown sections
// and keys are errors. Overrides of the form `section.key=value` apply on top
// of the file.

namespace memotion {

struct DataConfig {
  std::string records;
  std::string labels;
  std::string images;
  std::string vocab;
  std::size_t vocab_size = 1000;  // used when a vocabulary has to be built

  void read(kv::Reader& r) {
    r.get("records", records);
    r.get("labels", labels);
    r.get("images", images);
    r.get("vocab", vocab);
    r.get("vocab_size", vocab_size);
  }

  kv::Map to_kv() const {
    return {{"records", records}, {"labels", labels}, {"images", images}, {"vocab", vocab},
            {"vocab_size", kv::format(vocab_size)}};
  }
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  void validate() const {
    model.validate();
    train.validate();
    if (data.vocab_size < 5) throw ConfigError("data: vocab_size must be at least 5");
  }

  /// Sections: model, optimizer, training, data.
  using Sections = std::map<std::string, kv::Map>;

  static Sections parse_sections(std::string_view text, const std::string& source) {
    Sections sections;
    std::string current;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string where = source + ":" + std::to_string(lineno);
      const auto hash = line.find('#');
      const std::string t = kv::trim(hash == std::string::npos ? line : line.substr(0, hash));
      if (t.empty()) continue;
      if (t.front() == '[') {
        if (t.back() != ']') throw ConfigError(where + ": malformed section header");
        current = kv::trim(t.substr(1, t.size() - 2));
        if (!known_section(current)) throw ConfigError(where + ": unknown section [" + current + "]");
        sections[current];
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
      if (current.empty()) throw ConfigError(where + ": key outside of a section");
      const std::string key = kv::trim(t.substr(0, eq));
      if (key.empty()) throw ConfigError(where + ": empty key");
      if (!sections[current].emplace(key, kv::trim(t.substr(eq + 1))).second)
        throw ConfigError(where + ": duplicate key '" + key + "'");
    }
    return sections;
  }

  /// `section.key=value`; the key itself may contain dots.
  static void apply_override(Sections& sections, const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw ConfigError("override '" + assignment + "': expected section.key=value");
    const std::string section = kv::trim(assignment.substr(0, dot));
    if (!known_section(section)) throw ConfigError("override '" + assignment + "': unknown section");
    sections[section][kv::trim(assignment.substr(dot + 1, eq - dot - 1))] = kv::trim(assignment.substr(eq + 1));
  }

  static RunConfig from_sections(const Sections& sections) {
    RunConfig c;
    auto section = [&](const std::string& name) -> const kv::Map& {
      static const kv::Map empty;
      auto it = sections.find(name);
      return it == sections.end() ? empty : it->second;
    };
    kv::Reader m(section("model"));
    c.model.read(m);
    m.reject_unknown("[model]");
    kv::Reader o(section("optimizer"));
    c.train.optimizer.read(o);
    o.reject_unknown("[optimizer]");
    kv::Reader t(section("training"));
    c.train.read(t);
    t.reject_unknown("[training]");
    kv::Reader d(section("data"));
    c.data.read(d);
    d.reject_unknown("[data]");
    c.validate();
    return c;
  }

  static RunConfig parse(std::string_view text, const std::string& source,
                         const std::vector<std::string>& overrides = {}) {
    auto sections = parse_sections(text, source);
    for (const auto& o : overrides) apply_override(sections, o);
    return from_sections(sections);
  }

  static RunConfig load(const std::string& path, const std::vector<std::string>& overrides = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path, overrides);
  }

  /// Full configuration in file form; parse(to_text()) reproduces it.
  std::string to_text() const {
    std::string out;
    auto emit = [&](const char* name, const kv::Map& m) {
      out += std::string("[") + name + "]\n";
      for (const auto& [k, v] : m) out += k + " = " + v + "\n";
      out += "\n";
    };
    emit("model", model.to_kv());
    emit("optimizer", train.optimizer.to_kv());
    emit("training", train.to_kv());
    emit("data", data.to_kv());
    return out;
  }

 private:
  static bool known_section(const std::string& s) {
    return s == "model" || s == "optimizer" || s == "training" || s == "data";
  }
};

}  // namespace memotion
