// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "memotion/errors.hpp"
#include "memotion/kv.hpp"
#include "memotion/model.hpp"
#include "memotion/params.hpp"
#include "memotion/records.hpp"
#include "memotion/tensor.hpp"

// Checkpoint file layout. A text manifest, then the binary blob:
//
//   MEMOTION-CHECKPOINT 1
//   meta <key> <value>                          (any number, value runs to end of line)
//   tensor <name> <d0,d1,...> <offset> <bytes>  (offset relative to blob start)
//   end
//   <blob: little-endian float32 values of every tensor, in manifest order>
//
// The meta key `blob_crc32` holds the CRC-32 of the blob; it is checked and
// dropped on load. Model checkpoints store the architecture under `model.*`
// keys and one tensor per parameter under `param/<name>`.

namespace memotion {

inline constexpr const char* kCheckpointMagic = "MEMOTION-CHECKPOINT 1";

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;

  friend bool operator==(const StoredTensor&, const StoredTensor&) = default;
};

struct Checkpoint {
  kv::Map meta;
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  const StoredTensor& at(const std::string& name) const {
    if (const auto* t = find(name)) return *t;
    throw CheckpointError("checkpoint has no tensor '" + name + "'");
  }

  const std::string& meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw CheckpointError("checkpoint has no meta key '" + key + "'");
    return it->second;
  }

  template <class Real>
  void add(const std::string& name, const Shape& shape, std::span<const Real> values) {
    StoredTensor t{name, shape, {}};
    t.values.reserve(values.size());
    for (Real v : values) t.values.push_back(static_cast<float>(v));
    tensors.push_back(std::move(t));
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

inline std::string format_shape(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out;
}

inline Shape parse_shape(const std::string& text, const std::string& where) {
  Shape s;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      s.push_back(kv::parse<std::size_t>("shape", part));
    } catch (const ConfigError&) {
      throw CheckpointError(where + ": bad shape '" + text + "'");
    }
  }
  if (s.empty()) throw CheckpointError(where + ": empty shape");
  return s;
}

}  // namespace detail

inline std::vector<std::uint8_t> checkpoint_blob(const Checkpoint& ck) {
  std::vector<std::uint8_t> blob;
  for (const auto& t : ck.tensors)
    for (float v : t.values) {
      const auto u = std::bit_cast<std::uint32_t>(v);
      for (int i = 0; i < 4; ++i) blob.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
  return blob;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  for (const auto& [k, v] : ck.meta)
    if (k.empty() || k.find_first_of(" \t\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw CheckpointError("meta entry '" + k + "' cannot be stored");
  const auto blob = checkpoint_blob(ck);
  std::string manifest = std::string(kCheckpointMagic) + "\n";
  for (const auto& [k, v] : ck.meta)
    if (k != "blob_crc32") manifest += "meta " + k + " " + v + "\n";
  manifest += "meta blob_crc32 " + std::to_string(crc32_of(blob.data(), blob.size())) + "\n";
  std::size_t offset = 0;
  for (const auto& t : ck.tensors) {
    if (t.name.empty() || t.name.find_first_of(" \t\n") != std::string::npos)
      throw CheckpointError("tensor name '" + t.name + "' cannot be stored");
    if (numel(t.shape) != t.values.size())
      throw CheckpointError("tensor '" + t.name + "' has " + std::to_string(t.values.size()) +
                            " values for shape " + to_string(t.shape));
    const std::size_t bytes = t.values.size() * 4;
    manifest += "tensor " + t.name + " " + detail::format_shape(t.shape) + " " + std::to_string(offset) + " " +
                std::to_string(bytes) + "\n";
    offset += bytes;
  }
  manifest += "end\n";
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path);
    out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot move checkpoint into " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) throw CheckpointError(path + ": not a checkpoint file");
  Checkpoint ck;
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset, bytes;
  };
  std::vector<Entry> entries;
  bool ended = false;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = path + ":" + std::to_string(lineno);
    if (line == "end") {
      ended = true;
      break;
    }
    if (line.rfind("meta ", 0) == 0) {
      const auto sp = line.find(' ', 5);
      if (sp == std::string::npos) throw CheckpointError(where + ": malformed meta line");
      ck.meta[line.substr(5, sp - 5)] = line.substr(sp + 1);
    } else if (line.rfind("tensor ", 0) == 0) {
      std::istringstream ls(line.substr(7));
      Entry e;
      std::string shape;
      if (!(ls >> e.name >> shape >> e.offset >> e.bytes)) throw CheckpointError(where + ": malformed tensor line");
      e.shape = detail::parse_shape(shape, where);
      if (e.bytes != numel(e.shape) * 4) throw CheckpointError(where + ": byte count does not match shape");
      entries.push_back(std::move(e));
    } else {
      throw CheckpointError(where + ": unexpected manifest line");
    }
  }
  if (!ended) throw CheckpointError(path + ": manifest has no end marker");
  std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto crc_it = ck.meta.find("blob_crc32");
  if (crc_it == ck.meta.end()) throw CheckpointError(path + ": missing blob checksum");
  if (crc_it->second != std::to_string(crc32_of(blob.data(), blob.size())))
    throw CheckpointError(path + ": checksum mismatch (corrupt checkpoint)");
  ck.meta.erase(crc_it);
  for (auto& e : entries) {
    if (e.offset > blob.size() || blob.size() - e.offset < e.bytes)
      throw CheckpointError(path + ": tensor '" + e.name + "' extends past end of file");
    StoredTensor t{e.name, e.shape, std::vector<float>(e.bytes / 4)};
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(blob[e.offset + i * 4 + static_cast<std::size_t>(b)]) << (8 * b);
      t.values[i] = std::bit_cast<float>(u);
    }
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

/// Architecture and parameter values of a model.
template <class Real>
Checkpoint model_checkpoint(const MemeModel<Real>& model) {
  Checkpoint ck;
  for (const auto& [k, v] : model.config().to_kv()) ck.meta["model." + k] = v;
  for (const auto& p : model.parameters()) ck.add<Real>("param/" + p.name, p.tensor.shape(), p.tensor.values());
  return ck;
}

inline ModelConfig checkpoint_model_config(const Checkpoint& ck) {
  kv::Map m;
  for (const auto& [k, v] : ck.meta)
    if (k.rfind("model.", 0) == 0) m[k.substr(6)] = v;
  if (m.empty()) throw CheckpointError("checkpoint has no model configuration");
  try {
    auto c = ModelConfig::from_kv(m);
    c.validate();
    return c;
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint model configuration: ") + e.what());
  }
}

/// Copies `param/<name>` tensors into an existing model. Every parameter
/// must be present with the same shape; extra parameter tensors are an error.
template <class Real>
void load_parameters(const MemeModel<Real>& model, const Checkpoint& ck) {
  std::size_t stored = 0;
  for (const auto& t : ck.tensors)
    if (t.name.rfind("param/", 0) == 0) ++stored;
  for (const auto& p : model.parameters()) {
    const auto* t = ck.find("param/" + p.name);
    if (!t) throw CheckpointError("checkpoint is missing parameter " + p.name);
    if (t->shape != p.tensor.shape())
      throw CheckpointError("parameter " + p.name + ": checkpoint shape " + to_string(t->shape) + ", model shape " +
                            to_string(p.tensor.shape()));
    auto dst = Tensor<Real>(p.tensor).mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(t->values[i]);
  }
  if (stored != model.parameters().size())
    throw CheckpointError("checkpoint holds " + std::to_string(stored) + " parameters, model has " +
                          std::to_string(model.parameters().size()));
}

/// Rebuilds the model recorded in a checkpoint.
template <class Real>
MemeModel<Real> load_model(const Checkpoint& ck) {
  MemeModel<Real> model(checkpoint_model_config(ck));
  load_parameters(model, ck);
  return model;
}

}  // namespace memotion
