#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowsem/binary_io.hpp"
#include "flowsem/error.hpp"
#include "flowsem/field.hpp"
#include "flowsem/tracer.hpp"

namespace flowsem {

inline constexpr int kControlPoints = 32;

/// Contiguous arc-length window of a streamline.
struct Segment {
  std::int64_t id = -1;
  std::int64_t streamline_id = 0;
  int level = 0;
  double arc_start = 0.0;
  double arc_end = 0.0;
  std::vector<Vec3> points;

  double span() const noexcept { return arc_end - arc_start; }

  double arc_length() const noexcept {
    double len = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) len += (points[i] - points[i - 1]).norm();
    return len;
  }
};

struct SamplingConfig {
  int levels = 3;
  double max_len = 4.0;
  double overlap = 0.5;
  int min_points = 4;

  void validate() const {
    require(levels >= 1, ErrorCode::BadParam, "levels must be >= 1");
    require(max_len > 0, ErrorCode::BadParam, "max_len must be positive");
    require(overlap >= 0 && overlap < 1, ErrorCode::BadParam, "overlap must lie in [0, 1)");
    require(min_points >= 4, ErrorCode::BadParam, "min_points must be >= 4");
  }
};

namespace detail {

// Point on the streamline at arc parameter s (clamped to the line).
inline Vec3 point_at_arc(const Streamline& s, double arc) {
  const auto& c = s.cumulative_arc;
  if (arc <= 0) return s.points.front();
  if (arc >= c.back()) return s.points.back();
  const auto it = std::upper_bound(c.begin(), c.end(), arc);
  const std::size_t hi = static_cast<std::size_t>(it - c.begin());
  const std::size_t lo = hi - 1;
  const double len = c[hi] - c[lo];
  const double f = len > 0 ? (arc - c[lo]) / len : 0.0;
  return s.points[lo] + f * (s.points[hi] - s.points[lo]);
}

}  // namespace detail

/// Hierarchical windows: level k has length max_len / 2^k and stride (1 - overlap) times that length.
/// Windows start at 0 and continue while they fit inside the streamline; windows covering fewer than
/// `min_points` raw points are dropped.
inline std::vector<Segment> sample_segments(const Streamline& s, const SamplingConfig& cfg) {
  cfg.validate();
  std::vector<Segment> out;
  const double total = s.arc_length();
  if (s.points.size() < 2 || total <= 0) return out;
  const auto& c = s.cumulative_arc;
  for (int k = 0; k < cfg.levels; ++k) {
    const double len = cfg.max_len / std::ldexp(1.0, k);
    if (len > total * (1 + 1e-12)) continue;
    const double stride = (1.0 - cfg.overlap) * len;
    const double eps = 1e-9 * len;
    const auto count = static_cast<std::int64_t>(std::floor((total - len) / stride + eps / stride)) + 1;
    for (std::int64_t m = 0; m < count; ++m) {
      const double start = static_cast<double>(m) * stride;
      const double end = std::min(start + len, total);
      const auto first = std::lower_bound(c.begin(), c.end(), start - eps);
      const auto last = std::upper_bound(c.begin(), c.end(), end + eps);
      if (last - first < cfg.min_points) continue;

      Segment seg;
      seg.streamline_id = s.seed_id;
      seg.level = k;
      seg.arc_start = start;
      seg.arc_end = end;
      seg.points.push_back(detail::point_at_arc(s, start));
      for (auto it = first; it != last; ++it) {
        if (*it <= start + eps || *it >= end - eps) continue;
        seg.points.push_back(s.points[static_cast<std::size_t>(it - c.begin())]);
      }
      seg.points.push_back(detail::point_at_arc(s, end));
      out.push_back(std::move(seg));
    }
  }
  return out;
}

/// n points at uniform arc-length parameters along the polyline; endpoints are copied exactly.
inline std::vector<Vec3> resample(std::span<const Vec3> polyline, int n = kControlPoints) {
  require(n >= 2, ErrorCode::BadParam, "resample needs n >= 2");
  require(polyline.size() >= 2, ErrorCode::DegenerateSegment, "segment has fewer than two points");
  std::vector<double> cum(polyline.size(), 0.0);
  for (std::size_t i = 1; i < polyline.size(); ++i) cum[i] = cum[i - 1] + (polyline[i] - polyline[i - 1]).norm();
  const double total = cum.back();
  if (!(total > 0)) fail(ErrorCode::DegenerateSegment, "segment arc length is zero");

  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(n));
  out.push_back(polyline.front());
  std::size_t j = 1;
  for (int i = 1; i < n - 1; ++i) {
    const double t = total * i / (n - 1);
    while (j < cum.size() - 1 && cum[j] < t) ++j;
    const double len = cum[j] - cum[j - 1];
    const double f = len > 0 ? (t - cum[j - 1]) / len : 0.0;
    out.push_back(polyline[j - 1] + f * (polyline[j] - polyline[j - 1]));
  }
  out.push_back(polyline.back());
  return out;
}

inline std::vector<Vec3> resample(const Segment& seg, int n = kControlPoints) {
  return resample(std::span<const Vec3>(seg.points), n);
}

/// Symmetric n x n matrix of pairwise control-point distances divided by segment arc length.
struct DistanceMatrix {
  int n = 0;
  std::vector<double> values;

  double operator()(int i, int j) const { return values[static_cast<std::size_t>(i) * n + j]; }
  double& operator()(int i, int j) { return values[static_cast<std::size_t>(i) * n + j]; }
};

inline DistanceMatrix distance_matrix(std::span<const Vec3> points, double arc_len) {
  if (!(arc_len > 0)) fail(ErrorCode::DegenerateSegment, "arc length must be positive");
  require(points.size() >= 2, ErrorCode::BadParam, "distance matrix needs >= 2 points");
  DistanceMatrix m;
  m.n = static_cast<int>(points.size());
  m.values.assign(points.size() * points.size(), 0.0);
  for (int i = 0; i < m.n; ++i)
    for (int j = i + 1; j < m.n; ++j) {
      const double d = (points[static_cast<std::size_t>(i)] - points[static_cast<std::size_t>(j)]).norm() / arc_len;
      m(i, j) = d;
      m(j, i) = d;
    }
  return m;
}

/// Resample then build the normalized matrix, dividing by the segment's own polyline length.
inline DistanceMatrix describe(const Segment& seg, int n = kControlPoints) {
  const auto pts = resample(seg, n);
  return distance_matrix(pts, seg.arc_length());
}

inline std::vector<DistanceMatrix> describe_all(std::span<const Segment> segments, int n = kControlPoints) {
  std::vector<DistanceMatrix> out;
  out.reserve(segments.size());
  for (const auto& s : segments) out.push_back(describe(s, n));
  return out;
}

// ---------------------------------------------------------------------------
// `.dm` batch file: u64 count, u32 n, u32 scalar bytes (4), then count * n * n little-endian f32,
// row-major per matrix.

inline void save_descriptors(const std::string& path, std::span<const DistanceMatrix> mats) {
  const std::uint32_t n = mats.empty() ? kControlPoints : static_cast<std::uint32_t>(mats.front().n);
  io::Writer w;
  w.put<std::uint64_t>(mats.size());
  w.put<std::uint32_t>(n);
  w.put<std::uint32_t>(4);
  for (const auto& m : mats) {
    require(static_cast<std::uint32_t>(m.n) == n, ErrorCode::ShapeMismatch, "mixed matrix sizes in batch");
    for (double v : m.values) w.put(static_cast<float>(v));
  }
  w.save(path);
}

inline std::vector<DistanceMatrix> load_descriptors(const std::string& path) {
  auto r = io::Reader::from_file(path);
  const auto count = r.get<std::uint64_t>();
  const auto n = r.get<std::uint32_t>();
  const auto width = r.get<std::uint32_t>();
  if (width != 4 || n < 2 || n > 4096) fail(ErrorCode::FormatError, "unsupported descriptor header in " + path);
  const std::size_t per = static_cast<std::size_t>(n) * n;
  if (r.remaining() != count * per * 4) fail(ErrorCode::FormatError, "descriptor payload size mismatch in " + path);
  std::vector<DistanceMatrix> mats(count);
  for (auto& m : mats) {
    m.n = static_cast<int>(n);
    m.values.resize(per);
    for (auto& v : m.values) v = r.get<float>();
  }
  return mats;
}

// ---------------------------------------------------------------------------
// Segment store `.seg`: one JSON object per line with id, streamline, level, arc span and flat raw points.

inline nlohmann::json segment_to_json(const Segment& s) {
  std::vector<double> flat;
  flat.reserve(s.points.size() * 3);
  for (const auto& p : s.points) flat.insert(flat.end(), {p.x(), p.y(), p.z()});
  return {{"id", s.id},           {"streamline_id", s.streamline_id}, {"level", s.level},
          {"arc_start", s.arc_start}, {"arc_end", s.arc_end},         {"points", flat}};
}

inline Segment segment_from_json(const nlohmann::json& j) {
  try {
    Segment s;
    s.id = j.at("id").get<std::int64_t>();
    s.streamline_id = j.at("streamline_id").get<std::int64_t>();
    s.level = j.at("level").get<int>();
    s.arc_start = j.at("arc_start").get<double>();
    s.arc_end = j.at("arc_end").get<double>();
    const auto flat = j.at("points").get<std::vector<double>>();
    if (flat.size() % 3 != 0) fail(ErrorCode::FormatError, "segment points not a multiple of 3");
    for (std::size_t i = 0; i < flat.size(); i += 3) s.points.emplace_back(flat[i], flat[i + 1], flat[i + 2]);
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::FormatError, std::string("bad segment record: ") + e.what());
  }
}

inline void save_segments(const std::string& path, std::span<const Segment> segs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  for (const auto& s : segs) out << segment_to_json(s).dump() << '\n';
}

inline std::vector<Segment> load_segments(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path);
  std::vector<Segment> segs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::FormatError, std::string("bad segment line: ") + e.what());
    }
    segs.push_back(segment_from_json(j));
  }
  return segs;
}

/// Order-sensitive hash of segment ids and geometry; ties an index to the store it was built from.
inline std::uint64_t segments_fingerprint(std::span<const Segment> segs) {
  io::Fnv1a h;
  h.update_value<std::uint64_t>(segs.size());
  for (const auto& s : segs) {
    h.update_value(s.id);
    h.update_value<std::uint64_t>(s.points.size());
    for (const auto& p : s.points)
      for (int a = 0; a < 3; ++a) h.update_value(static_cast<float>(p[a]));
  }
  return h.digest();
}

}  // namespace flowsem
