#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "flowsem/binary_io.hpp"
#include "flowsem/error.hpp"

namespace flowsem {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Bounds {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Ones();

  bool contains(const Vec3& p) const noexcept {
    for (int a = 0; a < 3; ++a)
      if (!(p[a] >= lo[a] && p[a] <= hi[a])) return false;
    return true;
  }
  Vec3 extent() const { return hi - lo; }
  Vec3 center() const { return 0.5 * (lo + hi); }
};

using GridDims = std::array<int, 3>;

/// Regular 3D grid of velocity vectors, x-fastest, stored as f32 triples.
///
/// Immutable after construction. Node (i, j, k) sits at lo + (i, j, k) * spacing.
class VectorField {
 public:
  VectorField(GridDims dims, Bounds bounds, std::vector<float> data)
      : dims_(dims), bounds_(bounds), data_(std::move(data)) {
    for (int a = 0; a < 3; ++a) {
      require(dims_[a] >= 2, ErrorCode::BadParam, "grid dims must be >= 2 per axis");
      require(bounds_.lo[a] < bounds_.hi[a], ErrorCode::BadParam, "bounds min must be < max per axis");
    }
    require(data_.size() == node_count() * 3, ErrorCode::BadParam, "data length does not match dims");
    for (float v : data_) require(std::isfinite(v), ErrorCode::BadParam, "non-finite velocity component");
  }

  const GridDims& dims() const noexcept { return dims_; }
  const Bounds& bounds() const noexcept { return bounds_; }
  const std::vector<float>& data() const noexcept { return data_; }

  std::size_t node_count() const noexcept {
    return static_cast<std::size_t>(dims_[0]) * static_cast<std::size_t>(dims_[1]) *
           static_cast<std::size_t>(dims_[2]);
  }

  Vec3 spacing() const {
    return {bounds_.extent()[0] / (dims_[0] - 1), bounds_.extent()[1] / (dims_[1] - 1),
            bounds_.extent()[2] / (dims_[2] - 1)};
  }

  Vec3 node_position(int i, int j, int k) const {
    const Vec3 h = spacing();
    return bounds_.lo + Vec3(i * h[0], j * h[1], k * h[2]);
  }

  std::size_t node_index(int i, int j, int k) const noexcept {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims_[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_[1]) * static_cast<std::size_t>(k));
  }

  Vec3 node(int i, int j, int k) const {
    const std::size_t n = 3 * node_index(i, j, k);
    return {data_[n], data_[n + 1], data_[n + 2]};
  }

  /// Trilinear interpolation; throws OutOfDomain outside the (inclusive) bounds.
  Vec3 interpolate(const Vec3& p) const {
    if (!bounds_.contains(p)) fail(ErrorCode::OutOfDomain, "sample point outside field bounds");
    std::array<int, 3> cell{};
    std::array<double, 3> frac{};
    for (int a = 0; a < 3; ++a) {
      const double u = (p[a] - bounds_.lo[a]) / bounds_.extent()[a] * (dims_[a] - 1);
      int i = static_cast<int>(std::floor(u));
      i = std::clamp(i, 0, dims_[a] - 2);
      cell[a] = i;
      frac[a] = u - i;
    }
    const auto [i, j, k] = cell;
    const auto [fx, fy, fz] = frac;
    const Vec3 c00 = (1 - fx) * node(i, j, k) + fx * node(i + 1, j, k);
    const Vec3 c10 = (1 - fx) * node(i, j + 1, k) + fx * node(i + 1, j + 1, k);
    const Vec3 c01 = (1 - fx) * node(i, j, k + 1) + fx * node(i + 1, j, k + 1);
    const Vec3 c11 = (1 - fx) * node(i, j + 1, k + 1) + fx * node(i + 1, j + 1, k + 1);
    const Vec3 c0 = (1 - fy) * c00 + fy * c10;
    const Vec3 c1 = (1 - fy) * c01 + fy * c11;
    return (1 - fz) * c0 + fz * c1;
  }

 private:
  GridDims dims_;
  Bounds bounds_;
  std::vector<float> data_;
};

struct CriticalPointSpec {
  Vec3 position = Vec3::Zero();
  Mat3 jacobian = Mat3::Identity();
  double radius = 1.0;
};

enum class SyntheticKind { uniform, rotor, helix, critical_points, two_swirls };

inline SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "uniform") return SyntheticKind::uniform;
  if (name == "rotor") return SyntheticKind::rotor;
  if (name == "helix") return SyntheticKind::helix;
  if (name == "critical_points") return SyntheticKind::critical_points;
  if (name == "two_swirls") return SyntheticKind::two_swirls;
  fail(ErrorCode::BadParam, "unknown synthetic field kind '" + name + "'");
}

inline std::string to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::uniform: return "uniform";
    case SyntheticKind::rotor: return "rotor";
    case SyntheticKind::helix: return "helix";
    case SyntheticKind::critical_points: return "critical_points";
    case SyntheticKind::two_swirls: return "two_swirls";
  }
  return "unknown";
}

struct SyntheticParams {
  /// Axial speed c of helix and two_swirls.
  double pitch = 0.5;
  /// Explicit critical points; when empty, `random_critical_points` are drawn from the seed.
  std::vector<CriticalPointSpec> critical_points;
  int random_critical_points = 5;
  /// Gaussian core radius of each swirl in two_swirls.
  double swirl_radius = 0.5;
  /// Distance between the two swirl axes (both parallel to z, offset along x about the domain center).
  double swirl_separation = 1.0;
  /// Background speed along y that carries flow between the two swirls.
  double swirl_drift = 0.0;
};

namespace detail {

inline std::vector<CriticalPointSpec> random_critical_points(const Bounds& b, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double r = 0.25 * b.extent().minCoeff();
  std::vector<CriticalPointSpec> specs;
  specs.reserve(static_cast<std::size_t>(count));
  for (int c = 0; c < count; ++c) {
    CriticalPointSpec s;
    for (int a = 0; a < 3; ++a) s.position[a] = b.lo[a] + (0.1 + 0.8 * unit(rng)) * b.extent()[a];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) s.jacobian(i, j) = normal(rng);
    s.radius = r;
    specs.push_back(s);
  }
  return specs;
}

}  // namespace detail

/// Deterministic analytic fields sampled on a regular grid.
///
///   uniform          v = (1, 0, 0)
///   rotor            v = (-y, x, 0)
///   helix            v = (-y, x, c)
///   critical_points  v = sum_k exp(-|p - p_k|^2 / r_k^2) J_k (p - p_k)
///   two_swirls       Gaussian-weighted helices about two offset z-parallel axes, opposite in rotation and
///                    in axial direction, plus a uniform drift (0, d, 0)
inline VectorField gen_synthetic(SyntheticKind kind, GridDims dims, const Bounds& bounds,
                                 const SyntheticParams& params = {}, std::uint64_t seed = 0) {
  for (int a = 0; a < 3; ++a) require(dims[a] >= 2, ErrorCode::BadParam, "grid dims must be >= 2 per axis");
  if (kind == SyntheticKind::helix || kind == SyntheticKind::two_swirls)
    require(params.pitch > 0, ErrorCode::BadParam, "pitch must be positive");
  if (kind == SyntheticKind::two_swirls)
    require(params.swirl_radius > 0, ErrorCode::BadParam, "swirl radius must be positive");

  std::vector<CriticalPointSpec> specs;
  if (kind == SyntheticKind::critical_points) {
    specs = params.critical_points.empty()
                ? detail::random_critical_points(bounds, params.random_critical_points, seed)
                : params.critical_points;
    require(!specs.empty(), ErrorCode::BadParam, "critical_points needs at least one spec");
    for (const auto& s : specs) {
      require(s.radius > 0, ErrorCode::BadParam, "critical point radius must be positive");
      require(s.jacobian.allFinite() && s.position.allFinite(), ErrorCode::BadParam,
              "critical point spec must be finite");
    }
  }

  const Vec3 center = bounds.center();
  const Vec3 axis1 = center - Vec3(0.5 * params.swirl_separation, 0, 0);
  const Vec3 axis2 = center + Vec3(0.5 * params.swirl_separation, 0, 0);
  const double inv_r2 = 1.0 / (params.swirl_radius * params.swirl_radius);

  auto velocity = [&](const Vec3& p) -> Vec3 {
    switch (kind) {
      case SyntheticKind::uniform: return {1.0, 0.0, 0.0};
      case SyntheticKind::rotor: return {-p.y(), p.x(), 0.0};
      case SyntheticKind::helix: return {-p.y(), p.x(), params.pitch};
      case SyntheticKind::critical_points: {
        Vec3 v = Vec3::Zero();
        for (const auto& s : specs) {
          const Vec3 d = p - s.position;
          v += std::exp(-d.squaredNorm() / (s.radius * s.radius)) * (s.jacobian * d);
        }
        return v;
      }
      case SyntheticKind::two_swirls: {
        const double dx1 = p.x() - axis1.x(), dy1 = p.y() - axis1.y();
        const double dx2 = p.x() - axis2.x(), dy2 = p.y() - axis2.y();
        const double w1 = std::exp(-(dx1 * dx1 + dy1 * dy1) * inv_r2);
        const double w2 = std::exp(-(dx2 * dx2 + dy2 * dy2) * inv_r2);
        return w1 * Vec3(-dy1, dx1, params.pitch) + w2 * Vec3(dy2, -dx2, -params.pitch) +
               Vec3(0.0, params.swirl_drift, 0.0);
      }
    }
    return Vec3::Zero();
  };

  for (int a = 0; a < 3; ++a) require(bounds.lo[a] < bounds.hi[a], ErrorCode::BadParam, "bounds min must be < max");
  std::vector<float> data(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2] * 3);
  const Vec3 h(bounds.extent()[0] / (dims[0] - 1), bounds.extent()[1] / (dims[1] - 1),
               bounds.extent()[2] / (dims[2] - 1));
  std::size_t n = 0;
  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i) {
        const Vec3 v = velocity(bounds.lo + Vec3(i * h[0], j * h[1], k * h[2]));
        data[n++] = static_cast<float>(v[0]);
        data[n++] = static_cast<float>(v[1]);
        data[n++] = static_cast<float>(v[2]);
      }
  return VectorField(dims, bounds, std::move(data));
}

// ---------------------------------------------------------------------------
// Raw persistence: `<name>.meta` (text) + `<name>.vec` (little-endian f32, x-fastest, vx vy vz interleaved).

namespace detail {

inline std::string raw_base(const std::string& path) {
  std::filesystem::path p(path);
  if (p.extension() == ".meta" || p.extension() == ".vec") p.replace_extension();
  return p.string();
}

}  // namespace detail

inline void save_raw(const VectorField& field, const std::string& path) {
  const std::string base = detail::raw_base(path);
  {
    std::ofstream meta(base + ".meta", std::ios::trunc);
    if (!meta) fail(ErrorCode::IoError, "cannot write " + base + ".meta");
    meta << std::setprecision(std::numeric_limits<double>::max_digits10);
    const auto& d = field.dims();
    const auto& b = field.bounds();
    meta << "format flowsem-raw 1\n";
    meta << "dims " << d[0] << ' ' << d[1] << ' ' << d[2] << '\n';
    meta << "bounds_min " << b.lo[0] << ' ' << b.lo[1] << ' ' << b.lo[2] << '\n';
    meta << "bounds_max " << b.hi[0] << ' ' << b.hi[1] << ' ' << b.hi[2] << '\n';
    meta << "components 3\n";
    meta << "scalar_bits 32\n";
    meta << "endian little\n";
    if (!meta) fail(ErrorCode::IoError, "write failed: " + base + ".meta");
  }
  io::Writer w;
  w.put_span(std::span<const float>(field.data()));
  w.save(base + ".vec");
}

inline VectorField load_raw(const std::string& path) {
  const std::string base = detail::raw_base(path);
  std::ifstream meta(base + ".meta");
  if (!meta) fail(ErrorCode::IoError, "cannot read " + base + ".meta");

  GridDims dims{0, 0, 0};
  Bounds bounds;
  int components = 0, bits = 0;
  std::string endian, line;
  bool have_dims = false, have_lo = false, have_hi = false;
  while (std::getline(meta, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    bool ok = true;
    if (key == "format") {
      std::string name;
      int version = 0;
      ok = static_cast<bool>(ls >> name >> version) && name == "flowsem-raw" && version == 1;
    } else if (key == "dims") {
      ok = have_dims = static_cast<bool>(ls >> dims[0] >> dims[1] >> dims[2]);
    } else if (key == "bounds_min") {
      ok = have_lo = static_cast<bool>(ls >> bounds.lo[0] >> bounds.lo[1] >> bounds.lo[2]);
    } else if (key == "bounds_max") {
      ok = have_hi = static_cast<bool>(ls >> bounds.hi[0] >> bounds.hi[1] >> bounds.hi[2]);
    } else if (key == "components") {
      ok = static_cast<bool>(ls >> components);
    } else if (key == "scalar_bits") {
      ok = static_cast<bool>(ls >> bits);
    } else if (key == "endian") {
      ok = static_cast<bool>(ls >> endian);
    } else {
      ok = false;
    }
    if (!ok) fail(ErrorCode::FormatError, "bad meta line: " + line);
  }
  if (!have_dims || !have_lo || !have_hi || components != 3 || bits != 32 || endian != "little")
    fail(ErrorCode::FormatError, "incomplete or unsupported meta in " + base + ".meta");
  for (int a = 0; a < 3; ++a)
    if (dims[a] < 2 || !(bounds.lo[a] < bounds.hi[a])) fail(ErrorCode::FormatError, "invalid dims/bounds in meta");

  auto reader = io::Reader::from_file(base + ".vec");
  const std::size_t count = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2] * 3;
  if (reader.remaining() != count * sizeof(float))
    fail(ErrorCode::FormatError, "payload size " + std::to_string(reader.remaining()) + " bytes, dims imply " +
                                     std::to_string(count * sizeof(float)));
  std::vector<float> data(count);
  for (auto& v : data) {
    v = reader.get<float>();
    if (!std::isfinite(v)) fail(ErrorCode::FormatError, "non-finite value in payload");
  }
  return VectorField(dims, bounds, std::move(data));
}

}  // namespace flowsem
