// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "memotion/errors.hpp"
#include "memotion/sample.hpp"

namespace memotion {

/// Decoded raster, interleaved (HWC) values scaled to [0, 1].
struct Raster {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<double> values;

  double at(std::size_t y, std::size_t x, std::size_t c) const { return values[(y * width + x) * channels + c]; }
};

/// Constant subtracted from [0, 1] pixels before they reach the image encoder.
inline constexpr double kPixelMean = 0.5;

namespace detail {

struct PpmCursor {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;
  const std::string& path;

  void skip_space_and_comments() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  }

  std::size_t number() {
    skip_space_and_comments();
    if (pos >= bytes.size()) throw DecodeError(path + ": truncated PPM header");
    if (!std::isdigit(bytes[pos])) throw FormatError(path + ": malformed PPM header");
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > 1u << 24) throw FormatError(path + ": PPM header value too large");
      ++pos;
    }
    return v;
  }
};

}  // namespace detail

/// Binary PPM (P6, RGB) or PGM (P5, grayscale), maxval up to 65535.
inline Raster decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5'))
    throw FormatError(path + ": not a binary PPM/PGM image");
  Raster r;
  r.channels = bytes[1] == '6' ? 3 : 1;
  detail::PpmCursor cur{bytes, 2, path};
  r.width = cur.number();
  r.height = cur.number();
  const std::size_t maxval = cur.number();
  if (r.width == 0 || r.height == 0) throw FormatError(path + ": zero image dimension");
  if (maxval == 0 || maxval > 65535) throw FormatError(path + ": maxval out of range");
  if (cur.pos >= bytes.size() || !std::isspace(bytes[cur.pos])) throw DecodeError(path + ": truncated PPM header");
  ++cur.pos;
  const std::size_t bps = maxval > 255 ? 2 : 1;
  const std::size_t count = r.width * r.height * r.channels;
  if (bytes.size() - cur.pos < count * bps)
    throw DecodeError(path + ": truncated pixel data (" + std::to_string(bytes.size() - cur.pos) + " of " +
                      std::to_string(count * bps) + " bytes)");
  r.values.resize(count);
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t v = bytes[cur.pos + i * bps];
    if (bps == 2) v = (v << 8) | bytes[cur.pos + i * bps + 1];
    r.values[i] = static_cast<double>(std::min(v, maxval)) * scale;
  }
  return r;
}

inline Raster read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError(path + ": cannot open image");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pnm(bytes, path);
}

/// Writes 8-bit P6 (three channels) or P5 (one channel); values are clamped
/// to [0, 1] and rounded.
inline void write_pnm(const std::string& path, const Raster& r) {
  if (r.channels != 1 && r.channels != 3) throw FormatError(path + ": PNM needs 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DecodeError(path + ": cannot write image");
  out << (r.channels == 3 ? "P6" : "P5") << '\n' << r.width << ' ' << r.height << "\n255\n";
  for (double v : r.values) out.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  if (!out) throw DecodeError(path + ": failed writing image");
}

/// Bilinear resize with half-pixel centers: the source coordinate of output
/// pixel i is (i + 0.5) * in / out - 0.5, clamped to the image.
inline Raster resize_bilinear(const Raster& src, std::size_t out_h, std::size_t out_w) {
  Raster dst;
  dst.height = out_h;
  dst.width = out_w;
  dst.channels = src.channels;
  dst.values.resize(out_h * out_w * src.channels);
  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double s = (static_cast<double>(i) + 0.5) * ratio - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(s));
      t[i] = {lo, std::min(lo + 1, in - 1), s - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(src.height, out_h);
  const auto tx = taps(src.width, out_w);
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x)
      for (std::size_t c = 0; c < src.channels; ++c) {
        const double top = src.at(ty[y].lo, tx[x].lo, c) * (1 - tx[x].frac) + src.at(ty[y].lo, tx[x].hi, c) * tx[x].frac;
        const double bot = src.at(ty[y].hi, tx[x].lo, c) * (1 - tx[x].frac) + src.at(ty[y].hi, tx[x].hi, c) * tx[x].frac;
        dst.values[(y * out_w + x) * src.channels + c] = top * (1 - ty[y].frac) + bot * ty[y].frac;
      }
  return dst;
}

/// Planar three-channel encoder input: grayscale is replicated, the pixel
/// mean is subtracted.
inline ImageData to_image_data(const Raster& r) {
  if (r.channels != 1 && r.channels != 3) throw FormatError("image must have 1 or 3 channels");
  if (r.height > 65535 || r.width > 65535) throw FormatError("image too large");
  ImageData img;
  img.height = static_cast<std::uint16_t>(r.height);
  img.width = static_cast<std::uint16_t>(r.width);
  img.channels = 3;
  img.pixels.resize(3 * r.height * r.width);
  const std::size_t plane = r.height * r.width;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      img.pixels[c * plane + i] = static_cast<float>(r.values[i * r.channels + (r.channels == 3 ? c : 0)] - kPixelMean);
  return img;
}

/// Decode, resize to resolution x resolution, normalize.
inline ImageData load_image(const std::string& path, std::size_t resolution) {
  if (resolution == 0) throw InputError("load_image: resolution must be positive");
  return to_image_data(resize_bilinear(read_pnm(path), resolution, resolution));
}

}  // namespace memotion
