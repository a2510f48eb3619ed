#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cpga/common.hpp"

namespace cpga::optics {

struct Image2D {
  int width = 0, height = 0;
  std::vector<float> v;  // row-major, [0,1] for exposure images

  Image2D() = default;
  Image2D(int w, int h, float fill = 0.0f)
      : width(w), height(h), v(static_cast<std::size_t>(w) * h, fill) {}

  float at(int y, int x) const { return v[static_cast<std::size_t>(y) * width + x]; }
  float& at(int y, int x) { return v[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return v.size(); }
};

/// Ordered per-layer exposure images, bottom layer first.
struct ProjectionStack {
  std::vector<Image2D> layers;
  double layer_height = 0.1;  // mm
  double pixel_pitch = 0.035; // mm

  int depth() const { return static_cast<int>(layers.size()); }
  int width() const { return layers.empty() ? 0 : layers.front().width; }
  int height() const { return layers.empty() ? 0 : layers.front().height; }

  void clamp01() {
    for (auto& l : layers)
      for (auto& x : l.v) x = std::min(1.0f, std::max(0.0f, x));
  }
};

// ------------------------------------------------------------- resampling

/// Area-weighted box resample; exact averages when downsampling by an
/// integer factor, coverage-weighted otherwise.
inline Image2D resample_box(const Image2D& src, int out_w, int out_h) {
  if (out_w == src.width && out_h == src.height) return src;
  Image2D dst(out_w, out_h);
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  for (int oy = 0; oy < out_h; ++oy) {
    const double y0 = oy * sy, y1 = (oy + 1) * sy;
    const int iy0 = static_cast<int>(y0), iy1 = std::min(src.height - 1, static_cast<int>(std::ceil(y1)) - 1);
    for (int ox = 0; ox < out_w; ++ox) {
      const double x0 = ox * sx, x1 = (ox + 1) * sx;
      const int ix0 = static_cast<int>(x0), ix1 = std::min(src.width - 1, static_cast<int>(std::ceil(x1)) - 1);
      double acc = 0.0, wsum = 0.0;
      for (int iy = iy0; iy <= iy1; ++iy) {
        const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
        for (int ix = ix0; ix <= ix1; ++ix) {
          const double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
          acc += wy * wx * src.at(iy, ix);
          wsum += wy * wx;
        }
      }
      dst.at(oy, ox) = static_cast<float>(wsum > 0 ? acc / wsum : 0.0);
    }
  }
  return dst;
}

/// Nearest-layer depth resample.
inline ProjectionStack resample_depth(const ProjectionStack& src, int out_layers) {
  if (src.depth() == out_layers) return src;
  ProjectionStack dst;
  dst.layer_height = src.layer_height * src.depth() / std::max(1, out_layers);
  dst.pixel_pitch = src.pixel_pitch;
  dst.layers.reserve(static_cast<std::size_t>(out_layers));
  for (int i = 0; i < out_layers; ++i) {
    const double zc = (i + 0.5) / out_layers;  // normalized depth
    int src_idx = static_cast<int>(zc * src.depth());
    src_idx = std::min(src.depth() - 1, std::max(0, src_idx));
    dst.layers.push_back(src.layers[static_cast<std::size_t>(src_idx)]);
  }
  return dst;
}

// ---------------------------------------------------------------- raw i/o

/// One raw little-endian float32 volume per stack plus a text sidecar.
inline void write_stack_raw(const ProjectionStack& stack, const std::string& path_base) {
  std::ofstream raw(path_base + ".f32", std::ios::binary);
  if (!raw) throw DataError("cannot write " + path_base + ".f32");
  for (const auto& layer : stack.layers) {
    raw.write(reinterpret_cast<const char*>(layer.v.data()),
              static_cast<std::streamsize>(layer.v.size() * sizeof(float)));
  }
  std::string header;
  header += "format: raw_f32_le\n";
  header += "depth: " + std::to_string(stack.depth()) + "\n";
  header += "height: " + std::to_string(stack.height()) + "\n";
  header += "width: " + std::to_string(stack.width()) + "\n";
  header += "layer_height_mm: " + format_double(stack.layer_height) + "\n";
  header += "pixel_pitch_mm: " + format_double(stack.pixel_pitch) + "\n";
  write_text_file(path_base + ".txt", header);
}

inline ProjectionStack read_stack_raw(const std::string& path_base) {
  const std::string header = read_text_file(path_base + ".txt");
  int depth = 0, height = 0, width = 0;
  double layer_height = 0, pitch = 0;
  for (const auto& line : split(header, '\n')) {
    const auto kv = split(line, ':');
    if (kv.size() != 2) continue;
    const std::string key = trim(kv[0]), val = trim(kv[1]);
    if (key == "depth") depth = std::stoi(val);
    else if (key == "height") height = std::stoi(val);
    else if (key == "width") width = std::stoi(val);
    else if (key == "layer_height_mm") layer_height = std::stod(val);
    else if (key == "pixel_pitch_mm") pitch = std::stod(val);
  }
  if (depth <= 0 || height <= 0 || width <= 0)
    throw DataError("bad stack sidecar: " + path_base + ".txt");

  std::ifstream raw(path_base + ".f32", std::ios::binary);
  if (!raw) throw DataError("cannot open " + path_base + ".f32");
  ProjectionStack stack;
  stack.layer_height = layer_height;
  stack.pixel_pitch = pitch;
  stack.layers.assign(static_cast<std::size_t>(depth), Image2D(width, height));
  for (auto& layer : stack.layers) {
    raw.read(reinterpret_cast<char*>(layer.v.data()),
             static_cast<std::streamsize>(layer.v.size() * sizeof(float)));
    if (!raw) throw DataError("short read on " + path_base + ".f32");
  }
  return stack;
}

// ------------------------------------------------------------------- png

namespace png_detail {

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t n, std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xffffffffu;
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

inline std::uint32_t adler32(const std::uint8_t* data, std::size_t n) {
  std::uint32_t a = 1, b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    a = (a + data[i]) % 65521u;
    b = (b + a) % 65521u;
  }
  return (b << 16) | a;
}

inline void put_u32be(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(static_cast<std::uint8_t>(x >> 24));
  v.push_back(static_cast<std::uint8_t>(x >> 16));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
  v.push_back(static_cast<std::uint8_t>(x));
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                         const std::vector<std::uint8_t>& data) {
  put_u32be(out, static_cast<std::uint32_t>(data.size()));
  std::vector<std::uint8_t> td;
  td.insert(td.end(), type, type + 4);
  td.insert(td.end(), data.begin(), data.end());
  out.insert(out.end(), td.begin(), td.end());
  put_u32be(out, crc32(td.data(), td.size()));
}

}  // namespace png_detail

/// 8-bit grayscale PNG using stored (uncompressed) deflate blocks.
inline void write_png_gray(const Image2D& img, const std::string& path) {
  using namespace png_detail;
  std::vector<std::uint8_t> scan;
  scan.reserve(static_cast<std::size_t>(img.height) * (img.width + 1));
  for (int y = 0; y < img.height; ++y) {
    scan.push_back(0);  // filter: none
    for (int x = 0; x < img.width; ++x) {
      const float v = std::min(1.0f, std::max(0.0f, img.at(y, x)));
      scan.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
    }
  }

  std::vector<std::uint8_t> zlib;
  zlib.push_back(0x78);
  zlib.push_back(0x01);
  std::size_t off = 0;
  while (off < scan.size() || scan.empty()) {
    const std::size_t len = std::min<std::size_t>(65535, scan.size() - off);
    const bool final = off + len == scan.size();
    zlib.push_back(final ? 1 : 0);
    zlib.push_back(static_cast<std::uint8_t>(len & 0xff));
    zlib.push_back(static_cast<std::uint8_t>(len >> 8));
    zlib.push_back(static_cast<std::uint8_t>(~len & 0xff));
    zlib.push_back(static_cast<std::uint8_t>((~len >> 8) & 0xff));
    zlib.insert(zlib.end(), scan.begin() + static_cast<std::ptrdiff_t>(off),
                scan.begin() + static_cast<std::ptrdiff_t>(off + len));
    off += len;
    if (scan.empty()) break;
  }
  put_u32be(zlib, adler32(scan.data(), scan.size()));

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<std::uint8_t> ihdr;
  put_u32be(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", zlib);
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

}  // namespace cpga::optics
