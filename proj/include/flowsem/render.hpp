#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "flowsem/descriptor.hpp"
#include "flowsem/error.hpp"

namespace flowsem {

/// 8-bit grayscale raster, row-major, 255 = white.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

struct RenderedView {
  double azimuth_deg = 0.0;
  GrayImage image;
};

namespace detail {

class CoverageCanvas {
 public:
  CoverageCanvas(int w, int h) : w_(w), h_(h), cov_(static_cast<std::size_t>(w) * h, 0.0) {}

  void plot(int x, int y, double c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    auto& v = cov_[static_cast<std::size_t>(y) * w_ + x];
    v = std::max(v, std::clamp(c, 0.0, 1.0));
  }

  // Xiaolin Wu's anti-aliased line.
  void line(double x0, double y0, double x1, double y1) {
    const bool steep = std::abs(y1 - y0) > std::abs(x1 - x0);
    if (steep) std::swap(x0, y0), std::swap(x1, y1);
    if (x0 > x1) std::swap(x0, x1), std::swap(y0, y1);
    const double dx = x1 - x0, dy = y1 - y0;
    const double grad = dx == 0.0 ? 1.0 : dy / dx;
    auto put = [&](int a, int b, double c) { steep ? plot(b, a, c) : plot(a, b, c); };
    auto fpart = [](double v) { return v - std::floor(v); };

    double xend = std::round(x0);
    double yend = y0 + grad * (xend - x0);
    double xgap = 1.0 - fpart(x0 + 0.5);
    const int xa = static_cast<int>(xend);
    put(xa, static_cast<int>(std::floor(yend)), (1.0 - fpart(yend)) * xgap);
    put(xa, static_cast<int>(std::floor(yend)) + 1, fpart(yend) * xgap);
    double inter = yend + grad;

    xend = std::round(x1);
    yend = y1 + grad * (xend - x1);
    xgap = fpart(x1 + 0.5);
    const int xb = static_cast<int>(xend);
    put(xb, static_cast<int>(std::floor(yend)), (1.0 - fpart(yend)) * xgap);
    put(xb, static_cast<int>(std::floor(yend)) + 1, fpart(yend) * xgap);

    for (int x = xa + 1; x < xb; ++x, inter += grad) {
      put(x, static_cast<int>(std::floor(inter)), 1.0 - fpart(inter));
      put(x, static_cast<int>(std::floor(inter)) + 1, fpart(inter));
    }
  }

  GrayImage to_image() const {
    GrayImage img{w_, h_, std::vector<std::uint8_t>(cov_.size())};
    for (std::size_t i = 0; i < cov_.size(); ++i)
      img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - cov_[i])));
    return img;
  }

 private:
  int w_, h_;
  std::vector<double> cov_;
};

}  // namespace detail

/// Orthographic line renders of a segment from `n_views` azimuths 0, 360/n, ... about the z axis.
///
/// View a looks along d = (-sin a, cos a, 0); screen x runs along (cos a, sin a, 0) and screen y along +z
/// (up). The projected bounding box is centred and scaled uniformly to fit with a 4 px margin, so the
/// output does not depend on where the segment sits in space.
inline std::vector<RenderedView> render_views(const Segment& seg, int n_views, int size) {
  require(n_views >= 1, ErrorCode::BadParam, "n_views must be >= 1");
  require(size >= 16, ErrorCode::BadParam, "image size must be >= 16");
  require(seg.points.size() >= 2, ErrorCode::DegenerateSegment, "segment needs >= 2 points to render");
  const double margin = 4.0;
  std::vector<RenderedView> out;
  for (int v = 0; v < n_views; ++v) {
    const double deg = 360.0 * v / n_views;
    const double a = deg * std::numbers::pi / 180.0;
    const double cx = std::cos(a), sx = std::sin(a);
    std::vector<std::array<double, 2>> p2;
    p2.reserve(seg.points.size());
    for (const auto& p : seg.points) p2.push_back({cx * p.x() + sx * p.y(), p.z()});
    double lo[2] = {p2[0][0], p2[0][1]}, hi[2] = {p2[0][0], p2[0][1]};
    for (const auto& q : p2)
      for (int k = 0; k < 2; ++k) lo[k] = std::min(lo[k], q[k]), hi[k] = std::max(hi[k], q[k]);
    const double extent = std::max(hi[0] - lo[0], hi[1] - lo[1]);
    const double scale = extent > 0 ? (size - 1 - 2 * margin) / extent : 0.0;
    const double mid[2] = {0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])};
    const double c = 0.5 * (size - 1);

    detail::CoverageCanvas canvas(size, size);
    auto px = [&](const std::array<double, 2>& q) { return c + (q[0] - mid[0]) * scale; };
    auto py = [&](const std::array<double, 2>& q) { return c - (q[1] - mid[1]) * scale; };
    for (std::size_t i = 1; i < p2.size(); ++i) canvas.line(px(p2[i - 1]), py(p2[i - 1]), px(p2[i]), py(p2[i]));
    out.push_back({deg, canvas.to_image()});
  }
  return out;
}

// ---------------------------------------------------------------------------
// PNG (8-bit grayscale, filter 0, zlib level 9)

namespace detail {

inline void png_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data) {
  auto be32 = [&](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
  };
  be32(static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  be32(static_cast<std::uint32_t>(::crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start))));
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_png(const GrayImage& img) {
  require(img.width > 0 && img.height > 0 &&
              img.pixels.size() == static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height),
          ErrorCode::ShapeMismatch, "image buffer does not match its size");
  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  for (std::uint32_t v : {static_cast<std::uint32_t>(img.width), static_cast<std::uint32_t>(img.height)})
    for (int s = 24; s >= 0; s -= 8) ihdr.push_back(static_cast<std::uint8_t>(v >> s));
  ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});  // bit depth 8, grayscale, deflate, filter 0, no interlace
  detail::png_chunk(out, "IHDR", ihdr);

  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(img.height) * (img.width + 1));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const auto* row = img.pixels.data() + static_cast<std::size_t>(y) * img.width;
    raw.insert(raw.end(), row, row + img.width);
  }
  uLongf len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(len);
  if (compress2(z.data(), &len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
    fail(ErrorCode::IoError, "zlib compression failed");
  z.resize(len);
  detail::png_chunk(out, "IDAT", z);
  detail::png_chunk(out, "IEND", {});
  return out;
}

inline void write_png(const GrayImage& img, const std::string& path) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "write failed: " + path);
}

/// Inverse of encode_png for the exact subset it writes (used to verify files on disk).
inline GrayImage decode_png(const std::vector<std::uint8_t>& bytes) {
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  require(bytes.size() > 8 && std::equal(sig, sig + 8, bytes.begin()), ErrorCode::FormatError, "not a PNG");
  auto be32 = [&](std::size_t at) {
    require(at + 4 <= bytes.size(), ErrorCode::FormatError, "truncated PNG");
    return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
           (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
  };
  GrayImage img;
  std::vector<std::uint8_t> z;
  std::size_t pos = 8;
  while (pos + 12 <= bytes.size()) {
    const std::uint32_t n = be32(pos);
    require(pos + 12 + n <= bytes.size(), ErrorCode::FormatError, "truncated PNG chunk");
    const std::string type(bytes.begin() + static_cast<long>(pos + 4), bytes.begin() + static_cast<long>(pos + 8));
    const auto* data = bytes.data() + pos + 8;
    require(be32(pos + 8 + n) == ::crc32(0L, bytes.data() + pos + 4, n + 4), ErrorCode::FormatError, "PNG CRC mismatch");
    if (type == "IHDR") {
      require(n == 13 && data[8] == 8 && data[9] == 0 && data[12] == 0, ErrorCode::FormatError,
              "only 8-bit grayscale PNG is supported");
      img.width = static_cast<int>(be32(pos + 8));
      img.height = static_cast<int>(be32(pos + 12));
    } else if (type == "IDAT") {
      z.insert(z.end(), data, data + n);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + n;
  }
  require(img.width > 0 && img.height > 0, ErrorCode::FormatError, "PNG lacks IHDR");
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(img.height) * (img.width + 1));
  uLongf len = static_cast<uLongf>(raw.size());
  require(uncompress(raw.data(), &len, z.data(), static_cast<uLong>(z.size())) == Z_OK && len == raw.size(),
          ErrorCode::FormatError, "PNG data does not inflate to the image size");
  img.pixels.reserve(static_cast<std::size_t>(img.width) * img.height);
  for (int y = 0; y < img.height; ++y) {
    const auto* row = raw.data() + static_cast<std::size_t>(y) * (img.width + 1);
    require(row[0] == 0, ErrorCode::FormatError, "unsupported PNG row filter");
    img.pixels.insert(img.pixels.end(), row + 1, row + 1 + img.width);
  }
  return img;
}

}  // namespace flowsem
