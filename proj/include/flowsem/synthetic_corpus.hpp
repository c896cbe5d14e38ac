#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "flowsem/descriptor.hpp"
#include "flowsem/field.hpp"
#include "flowsem/tracer.hpp"

namespace flowsem {

/// Pattern classes drawn from the analytic generators; `rotor_helix` mixes rotor and helix fields.
enum class FlowClass { uniform, rotor, helix, rotor_helix, critical_points, two_swirls };

inline std::string to_string(FlowClass c) {
  switch (c) {
    case FlowClass::uniform: return "uniform";
    case FlowClass::rotor: return "rotor";
    case FlowClass::helix: return "helix";
    case FlowClass::rotor_helix: return "rotor_helix";
    case FlowClass::critical_points: return "critical_points";
    case FlowClass::two_swirls: return "two_swirls";
  }
  return "unknown";
}

struct CorpusOptions {
  Bounds bounds{Vec3(-1, -1, -1), Vec3(1, 1, 1)};
  GridDims dims{24, 24, 24};
  TraceConfig trace{.step = 0.02, .max_steps = 600, .min_speed = 1e-3, .direction = TraceDirection::both};
  SamplingConfig sampling{.levels = 1, .max_len = 1.6, .overlap = 0.5, .min_points = 4};
  int seeds_per_field = 8;
  /// Seeds where |v| falls below this fraction of the field's peak node speed are redrawn.
  double min_seed_speed = 0.3;
  /// Axial speed ranges drawn for helix (also the helix half of rotor_helix) and two_swirls fields.
  std::array<double, 2> helix_pitch{0.15, 0.6};
  std::array<double, 2> swirl_pitch{0.2, 0.6};
};

namespace detail {

inline VectorField random_class_field(FlowClass cls, const CorpusOptions& opt, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto draw = [&](const std::array<double, 2>& r) { return r[0] + (r[1] - r[0]) * u(rng); };
  SyntheticParams p;
  switch (cls) {
    case FlowClass::uniform: return gen_synthetic(SyntheticKind::uniform, opt.dims, opt.bounds);
    case FlowClass::rotor: return gen_synthetic(SyntheticKind::rotor, opt.dims, opt.bounds);
    case FlowClass::helix:
      p.pitch = draw(opt.helix_pitch);
      return gen_synthetic(SyntheticKind::helix, opt.dims, opt.bounds, p);
    case FlowClass::rotor_helix:
      if (u(rng) < 0.5) return gen_synthetic(SyntheticKind::rotor, opt.dims, opt.bounds);
      p.pitch = draw(opt.helix_pitch);
      return gen_synthetic(SyntheticKind::helix, opt.dims, opt.bounds, p);
    case FlowClass::critical_points: {
      // saddles, sources and sinks: symmetric Jacobians have real eigenvalues, so no spiralling
      std::normal_distribution<double> n(0.0, 1.0);
      for (int c = 0; c < 5; ++c) {
        CriticalPointSpec s;
        for (int a = 0; a < 3; ++a) s.position[a] = opt.bounds.lo[a] + (0.1 + 0.8 * u(rng)) * opt.bounds.extent()[a];
        Mat3 j;
        for (int r = 0; r < 3; ++r)
          for (int k = 0; k < 3; ++k) j(r, k) = n(rng);
        s.jacobian = 0.5 * (j + j.transpose());
        s.radius = 0.25 * opt.bounds.extent().minCoeff();
        p.critical_points.push_back(s);
      }
      return gen_synthetic(SyntheticKind::critical_points, opt.dims, opt.bounds, p);
    }
    case FlowClass::two_swirls:
      p.pitch = draw(opt.swirl_pitch);
      p.swirl_radius = 0.45 + 0.3 * u(rng);
      p.swirl_separation = 0.3 + 0.4 * u(rng);
      return gen_synthetic(SyntheticKind::two_swirls, opt.dims, opt.bounds, p);
  }
  fail(ErrorCode::BadParam, "unknown flow class");
}

/// Uniform seeds, redrawn (up to a fixed budget) where the flow is slower than the configured threshold.
inline std::vector<Vec3> fast_seeds(const VectorField& field, const CorpusOptions& opt, std::mt19937_64& rng) {
  if (opt.min_seed_speed <= 0) return seed_uniform(opt.bounds, opt.seeds_per_field, rng());
  double peak = 0.0;
  const auto& d = field.dims();
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) peak = std::max(peak, field.node(i, j, k).norm());
  std::vector<Vec3> out;
  const auto candidates = seed_uniform(opt.bounds, 20 * opt.seeds_per_field, rng());
  for (const auto& p : candidates) {
    if (field.interpolate(p).norm() >= opt.min_seed_speed * peak) out.push_back(p);
    if (static_cast<int>(out.size()) == opt.seeds_per_field) break;
  }
  return out;
}

}  // namespace detail

/// `count` segments of one class, gathered from freshly drawn fields until enough are collected.
/// Deterministic per seed. Segment ids are left at -1.
inline std::vector<Segment> generate_class_segments(FlowClass cls, std::size_t count, std::uint64_t seed,
                                                    const CorpusOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  std::vector<Segment> pool;
  std::int64_t line_id = 0;
  for (int attempt = 0; pool.size() < 3 * count && attempt < 4000; ++attempt) {
    const auto field = detail::random_class_field(cls, opt, rng);
    for (const auto& s : detail::fast_seeds(field, opt, rng)) {
      const auto line = trace(field, s, opt.trace, line_id++);
      for (auto& seg : sample_segments(line, opt.sampling)) pool.push_back(std::move(seg));
    }
  }
  require(pool.size() >= count, ErrorCode::BadParam, "could not collect enough segments for " + to_string(cls));
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(count);
  return pool;
}

struct LabeledSegments {
  std::vector<Segment> segments;
  std::vector<int> labels;
  std::vector<std::string> class_names;
};

inline LabeledSegments generate_labeled_corpus(const std::vector<FlowClass>& classes, std::size_t per_class,
                                               std::uint64_t seed, const CorpusOptions& opt = {}) {
  LabeledSegments out;
  std::int64_t next_id = 0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    out.class_names.push_back(to_string(classes[c]));
    for (auto& s : generate_class_segments(classes[c], per_class, seed * 1000003 + c, opt)) {
      s.id = next_id++;
      out.segments.push_back(std::move(s));
      out.labels.push_back(static_cast<int>(c));
    }
  }
  return out;
}

}  // namespace flowsem
