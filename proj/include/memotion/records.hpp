// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <zlib.h>

#include "memotion/errors.hpp"
#include "memotion/sample.hpp"

// Record file layout (all integers little-endian):
//
//   "MEM1"  u16 version (= 1)
//   per record:  u32 payload length | payload | u32 CRC-32 of payload
//
// payload:
//   u16 id length, id bytes (UTF-8)
//   u16 H, u16 W, u8 channels, H*W*channels float32 pixels (planar, channel-major)
//   u16 token count T, T x u32 token ids, T x u8 mask, T x u8 segment ids
//   5 x u8 labels: sentiment, humor, sarcasm, offense, motivation

namespace memotion {

inline constexpr std::array<char, 4> kRecordMagic{'M', 'E', 'M', '1'};
inline constexpr std::uint16_t kRecordVersion = 1;

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& b, std::string context) : b_(b), ctx_(std::move(context)) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError(ctx_ + ": payload shorter than its fields");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
  std::string ctx_;
};

inline void put_u16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_record(const MemeSample& s) {
  if (s.id.size() > 0xffff) throw InputError("record id too long: " + std::to_string(s.id.size()) + " bytes");
  if (s.text.length() > 0xffff) throw InputError("record '" + s.id + "': too many tokens");
  if (s.text.input_mask.size() != s.text.length() || s.text.segment_ids.size() != s.text.length())
    throw InputError("record '" + s.id + "': token, mask and segment lengths differ");
  if (s.image.pixels.size() != std::size_t{s.image.height} * s.image.width * s.image.channels)
    throw InputError("record '" + s.id + "': pixel count does not match H*W*C");
  if (!s.labels.valid()) throw InputError("record '" + s.id + "': label out of range");
  detail::ByteWriter w;
  w.u16(static_cast<std::uint16_t>(s.id.size()));
  w.raw(s.id.data(), s.id.size());
  w.u16(s.image.height);
  w.u16(s.image.width);
  w.u8(s.image.channels);
  for (float p : s.image.pixels) w.f32(p);
  w.u16(static_cast<std::uint16_t>(s.text.length()));
  for (auto id : s.text.input_ids) w.u32(static_cast<std::uint32_t>(id));
  w.raw(s.text.input_mask.data(), s.text.input_mask.size());
  w.raw(s.text.segment_ids.data(), s.text.segment_ids.size());
  for (Task t : kAllTasks) w.u8(static_cast<std::uint8_t>(s.labels[t]));
  return std::move(w.bytes());
}

inline MemeSample decode_record(const std::vector<std::uint8_t>& payload, const std::string& context) {
  detail::ByteReader r(payload, context);
  MemeSample s;
  s.id = r.str(r.u16());
  s.image.height = r.u16();
  s.image.width = r.u16();
  s.image.channels = r.u8();
  s.image.pixels.resize(std::size_t{s.image.height} * s.image.width * s.image.channels);
  for (auto& p : s.image.pixels) p = r.f32();
  const std::size_t t = r.u16();
  s.text.input_ids.resize(t);
  for (auto& id : s.text.input_ids) id = static_cast<std::int32_t>(r.u32());
  s.text.input_mask.resize(t);
  for (auto& m : s.text.input_mask) m = r.u8();
  s.text.segment_ids.resize(t);
  for (auto& g : s.text.segment_ids) g = r.u8();
  for (Task task : kAllTasks) s.labels[task] = r.u8();
  if (!r.done()) throw FormatError(context + ": trailing bytes in payload");
  if (!s.labels.valid()) throw FormatError(context + ": label out of range");
  return s;
}

/// Single writer; the header goes out on construction.
class RecordWriter {
 public:
  explicit RecordWriter(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw InputError("cannot create record file " + path);
    out_.write(kRecordMagic.data(), kRecordMagic.size());
    detail::put_u16(out_, kRecordVersion);
  }

  void write(const MemeSample& s) {
    const auto payload = encode_record(s);
    if (payload.size() > 0xffffffffu) throw InputError("record '" + s.id + "' exceeds 4 GiB");
    detail::put_u32(out_, static_cast<std::uint32_t>(payload.size()));
    out_.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    detail::put_u32(out_, crc32_of(payload.data(), payload.size()));
    ++count_;
  }

  void close() {
    out_.flush();
    if (!out_) throw InputError("failed writing record file " + path_);
    out_.close();
  }

  std::size_t count() const { return count_; }

 private:
  std::string path_;
  std::ofstream out_;
  std::size_t count_ = 0;
};

/// Streaming reader: one record in memory at a time. Each reader owns its own
/// file cursor.
class RecordReader {
 public:
  explicit RecordReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw FormatError("cannot open record file " + path);
    std::array<char, 4> magic{};
    in_.read(magic.data(), 4);
    if (in_.gcount() != 4 || magic != kRecordMagic) throw FormatError(path + ": bad magic (not a record file)");
    unsigned char v[2];
    in_.read(reinterpret_cast<char*>(v), 2);
    if (in_.gcount() != 2) throw FormatError(path + ": truncated header");
    const std::uint16_t version = static_cast<std::uint16_t>(v[0] | (v[1] << 8));
    if (version != kRecordVersion)
      throw FormatError(path + ": unsupported record version " + std::to_string(version));
  }

  /// Next sample, or nullopt at a clean end of file.
  std::optional<MemeSample> next() {
    unsigned char len_bytes[4];
    in_.read(reinterpret_cast<char*>(len_bytes), 4);
    if (in_.gcount() == 0) return std::nullopt;
    const std::string where = path_ + ": record " + std::to_string(index_);
    if (in_.gcount() != 4) throw CorruptionError(where + ": truncated length field");
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(len_bytes[i]) << (8 * i);
    std::vector<std::uint8_t> payload;
    constexpr std::size_t kChunk = 1 << 20;
    while (payload.size() < len) {
      const std::size_t n = std::min<std::size_t>(kChunk, len - payload.size());
      const std::size_t old = payload.size();
      payload.resize(old + n);
      in_.read(reinterpret_cast<char*>(payload.data() + old), static_cast<std::streamsize>(n));
      if (static_cast<std::size_t>(in_.gcount()) != n) throw CorruptionError(where + ": truncated payload");
    }
    unsigned char crc_bytes[4];
    in_.read(reinterpret_cast<char*>(crc_bytes), 4);
    if (in_.gcount() != 4) throw CorruptionError(where + ": truncated checksum");
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(crc_bytes[i]) << (8 * i);
    if (stored != crc32_of(payload.data(), payload.size())) throw CorruptionError(where + ": CRC mismatch");
    ++index_;
    return decode_record(payload, where);
  }

  std::size_t records_read() const { return index_; }

 private:
  std::string path_;
  std::ifstream in_;
  std::size_t index_ = 0;
};

inline void write_records(const std::string& path, const std::vector<MemeSample>& samples) {
  RecordWriter w(path);
  for (const auto& s : samples) w.write(s);
  w.close();
}

inline std::vector<MemeSample> read_records(const std::string& path) {
  RecordReader r(path);
  std::vector<MemeSample> out;
  while (auto s = r.next()) out.push_back(std::move(*s));
  return out;
}

}  // namespace memotion
