#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "flowsem/error.hpp"
#include "flowsem/field.hpp"

namespace flowsem {

enum class Termination { domain_exit, max_steps, stagnation };

inline std::string to_string(Termination t) {
  switch (t) {
    case Termination::domain_exit: return "domain_exit";
    case Termination::max_steps: return "max_steps";
    case Termination::stagnation: return "stagnation";
  }
  return "unknown";
}

struct Streamline {
  std::vector<Vec3> points;
  std::vector<double> cumulative_arc;
  std::int64_t seed_id = 0;
  Termination termination = Termination::max_steps;

  double arc_length() const noexcept { return cumulative_arc.empty() ? 0.0 : cumulative_arc.back(); }

  static Streamline from_points(std::vector<Vec3> pts, std::int64_t id,
                                Termination term = Termination::max_steps) {
    require(!pts.empty(), ErrorCode::BadParam, "streamline needs at least one point");
    Streamline s;
    s.cumulative_arc.reserve(pts.size());
    s.cumulative_arc.push_back(0.0);
    for (std::size_t i = 1; i < pts.size(); ++i)
      s.cumulative_arc.push_back(s.cumulative_arc.back() + (pts[i] - pts[i - 1]).norm());
    s.points = std::move(pts);
    s.seed_id = id;
    s.termination = term;
    return s;
  }
};

enum class TraceDirection { forward, backward, both };

struct TraceConfig {
  double step = 0.01;
  int max_steps = 1000;
  double min_speed = 1e-8;
  TraceDirection direction = TraceDirection::forward;

  void validate() const {
    require(step > 0 && std::isfinite(step), ErrorCode::BadParam, "trace step must be positive");
    require(max_steps >= 1, ErrorCode::BadParam, "max_steps must be >= 1");
    require(min_speed >= 0, ErrorCode::BadParam, "min_speed must be >= 0");
  }
};

namespace detail {

inline std::optional<Vec3> sample(const VectorField& field, const Vec3& p) {
  if (!field.bounds().contains(p)) return std::nullopt;
  return field.interpolate(p);
}

// Classical RK4 on raw velocity with signed step h.
inline std::pair<std::vector<Vec3>, Termination> integrate(const VectorField& field, const Vec3& seed, double h,
                                                           const TraceConfig& cfg) {
  std::vector<Vec3> pts{seed};
  Vec3 p = seed;
  for (int n = 0; n < cfg.max_steps; ++n) {
    const Vec3 k1 = field.interpolate(p);
    if (k1.norm() < cfg.min_speed) return {std::move(pts), Termination::stagnation};
    const auto k2 = sample(field, p + 0.5 * h * k1);
    if (!k2) return {std::move(pts), Termination::domain_exit};
    const auto k3 = sample(field, p + 0.5 * h * *k2);
    if (!k3) return {std::move(pts), Termination::domain_exit};
    const auto k4 = sample(field, p + h * *k3);
    if (!k4) return {std::move(pts), Termination::domain_exit};
    const Vec3 next = p + (h / 6.0) * (k1 + 2.0 * *k2 + 2.0 * *k3 + *k4);
    if (!field.bounds().contains(next)) return {std::move(pts), Termination::domain_exit};
    p = next;
    pts.push_back(p);
  }
  return {std::move(pts), Termination::max_steps};
}

}  // namespace detail

/// Fixed-step RK4 streamline through `seed`.
///
/// Integrates the raw velocity (not the unit direction). A step whose stages or result leave the
/// domain ends the line at the last in-domain point. For `both`, the reversed backward leg is joined to
/// the forward leg with the seed kept once; the forward leg's termination is reported.
inline Streamline trace(const VectorField& field, const Vec3& seed, const TraceConfig& cfg,
                        std::int64_t seed_id = 0) {
  cfg.validate();
  if (!field.bounds().contains(seed)) fail(ErrorCode::OutOfDomain, "seed outside field bounds");
  switch (cfg.direction) {
    case TraceDirection::forward: {
      auto [pts, term] = detail::integrate(field, seed, cfg.step, cfg);
      return Streamline::from_points(std::move(pts), seed_id, term);
    }
    case TraceDirection::backward: {
      auto [pts, term] = detail::integrate(field, seed, -cfg.step, cfg);
      return Streamline::from_points(std::move(pts), seed_id, term);
    }
    case TraceDirection::both: {
      auto [back, back_term] = detail::integrate(field, seed, -cfg.step, cfg);
      auto [fwd, fwd_term] = detail::integrate(field, seed, cfg.step, cfg);
      std::vector<Vec3> pts(back.rbegin(), back.rend());
      pts.insert(pts.end(), fwd.begin() + 1, fwd.end());
      return Streamline::from_points(std::move(pts), seed_id, fwd_term);
    }
  }
  fail(ErrorCode::BadParam, "unknown trace direction");
}

/// n i.i.d. uniform points in `bounds`; deterministic per rng seed.
inline std::vector<Vec3> seed_uniform(const Bounds& bounds, int n, std::uint64_t rng_seed) {
  require(n >= 1, ErrorCode::BadParam, "seed count must be >= 1");
  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Vec3 p;
    for (int a = 0; a < 3; ++a) p[a] = bounds.lo[a] + unit(rng) * bounds.extent()[a];
    pts.push_back(p);
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Line-delimited export: `id n x0 y0 z0 ... x{n-1} y{n-1} z{n-1}`, 9 significant digits.

inline void write_streamlines(std::ostream& out, const std::vector<Streamline>& lines) {
  out << std::setprecision(9);
  for (const auto& s : lines) {
    out << s.seed_id << ' ' << s.points.size();
    for (const auto& p : s.points) out << ' ' << p.x() << ' ' << p.y() << ' ' << p.z();
    out << '\n';
  }
}

inline std::vector<Streamline> read_streamlines(std::istream& in) {
  std::vector<Streamline> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::int64_t id = 0;
    std::size_t n = 0;
    if (!(ls >> id >> n) || n == 0) fail(ErrorCode::FormatError, "bad streamline record header");
    std::vector<Vec3> pts(n);
    for (auto& p : pts)
      if (!(ls >> p[0] >> p[1] >> p[2])) fail(ErrorCode::FormatError, "truncated streamline record");
    lines.push_back(Streamline::from_points(std::move(pts), id));
  }
  return lines;
}

inline void save_streamlines(const std::string& path, const std::vector<Streamline>& lines) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  write_streamlines(out, lines);
}

inline std::vector<Streamline> load_streamlines(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path);
  return read_streamlines(in);
}

}  // namespace flowsem
