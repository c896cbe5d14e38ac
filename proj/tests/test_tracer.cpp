#include <gtest/gtest.h>

#include <numbers>
#include <sstream>

#include "flowsem/tracer.hpp"

using namespace flowsem;

TEST(Trace, UniformFieldIsExact) {
  const auto f = gen_synthetic(SyntheticKind::uniform, {5, 3, 3}, {Vec3(0, 0, 0), Vec3(2, 1, 1)});
  const auto s = trace(f, Vec3(0, 0.5, 0.5), {.step = 0.1, .max_steps = 10});
  ASSERT_EQ(s.points.size(), 11u);
  EXPECT_NEAR((s.points.back() - Vec3(1.0, 0.5, 0.5)).norm(), 0.0, 1e-12);
  EXPECT_NEAR(s.arc_length(), 1.0, 1e-12);
  EXPECT_EQ(s.termination, Termination::max_steps);
}

TEST(Trace, RotorOrbitStaysOnUnitCircle) {
  const auto f = gen_synthetic(SyntheticKind::rotor, {201, 201, 2}, {Vec3(-2, -2, -0.5), Vec3(2, 2, 0.5)});
  const auto s = trace(f, Vec3(1, 0, 0), {.step = 0.01, .max_steps = 629});
  ASSERT_EQ(s.points.size(), 630u);
  for (const auto& p : s.points) EXPECT_NEAR(std::hypot(p.x(), p.y()), 1.0, 1e-5);
  // Roughly one full revolution.
  EXPECT_NEAR(s.arc_length(), 2 * std::numbers::pi, 0.02);
}

TEST(Trace, ZeroFieldStagnates) {
  const VectorField f({2, 2, 2}, {}, std::vector<float>(24, 0.0f));
  const auto s = trace(f, Vec3(0.5, 0.5, 0.5), {.step = 0.1, .max_steps = 100, .min_speed = 1e-6});
  EXPECT_EQ(s.points.size(), 1u);
  EXPECT_EQ(s.termination, Termination::stagnation);
}

TEST(Trace, DomainExitKeepsLastInsidePoint) {
  const auto f = gen_synthetic(SyntheticKind::uniform, {3, 3, 3}, {});
  const auto s = trace(f, Vec3(0.05, 0.5, 0.5), {.step = 0.1, .max_steps = 100});
  EXPECT_EQ(s.termination, Termination::domain_exit);
  for (const auto& p : s.points) EXPECT_TRUE(f.bounds().contains(p));
  EXPECT_GT(s.points.back().x(), 0.85);
}

TEST(Trace, SeedOutsideIsError) {
  const auto f = gen_synthetic(SyntheticKind::uniform, {3, 3, 3}, {});
  try {
    trace(f, Vec3(2, 0, 0), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfDomain);
  }
  EXPECT_THROW(trace(f, Vec3(0.5, 0.5, 0.5), {.step = 0.0}), Error);
}

TEST(Trace, ReversedFieldEqualsBackwardTrace) {
  const Bounds b{Vec3(-1, -1, -1), Vec3(1, 1, 1)};
  const auto f = gen_synthetic(SyntheticKind::critical_points, {12, 12, 12}, b, {}, 9);
  std::vector<float> neg = f.data();
  for (auto& v : neg) v = -v;
  const VectorField g(f.dims(), b, neg);
  for (const auto& seed : seed_uniform(b, 20, 4)) {
    const auto back = trace(f, seed, {.step = 0.02, .max_steps = 300, .direction = TraceDirection::backward});
    const auto fwd = trace(g, seed, {.step = 0.02, .max_steps = 300});
    ASSERT_EQ(back.points.size(), fwd.points.size());
    for (std::size_t i = 0; i < back.points.size(); ++i) EXPECT_LT((back.points[i] - fwd.points[i]).norm(), 1e-9);
  }
}

TEST(Trace, BothDirectionsJoinAtSeed) {
  const auto f = gen_synthetic(SyntheticKind::rotor, {41, 41, 2}, {Vec3(-2, -2, -0.5), Vec3(2, 2, 0.5)});
  const auto fwd = trace(f, Vec3(1, 0, 0), {.step = 0.01, .max_steps = 50});
  const auto back = trace(f, Vec3(1, 0, 0), {.step = 0.01, .max_steps = 30, .direction = TraceDirection::backward});
  const auto both = trace(f, Vec3(1, 0, 0), {.step = 0.01, .max_steps = 50, .direction = TraceDirection::both});
  const auto both_short =
      trace(f, Vec3(1, 0, 0), {.step = 0.01, .max_steps = 30, .direction = TraceDirection::both});
  EXPECT_EQ(both.points.size(), 101u);
  EXPECT_EQ(both_short.points.size(), 61u);
  EXPECT_EQ(both_short.points[30], Vec3(1, 0, 0));
  EXPECT_EQ(both_short.points.front(), back.points.back());
  EXPECT_EQ(both.points.back(), fwd.points.back());
}

TEST(Trace, ArcLengthInvariants) {
  const Bounds b{Vec3(-1, -1, -1), Vec3(1, 1, 1)};
  const auto f = gen_synthetic(SyntheticKind::two_swirls, {24, 24, 24}, b, {.pitch = 0.2, .swirl_radius = 0.5});
  for (const auto& seed : seed_uniform(b, 10, 8)) {
    const auto s = trace(f, seed, {.step = 0.02, .max_steps = 400});
    ASSERT_EQ(s.cumulative_arc.front(), 0.0);
    for (std::size_t i = 1; i < s.points.size(); ++i) {
      EXPECT_GE(s.cumulative_arc[i], s.cumulative_arc[i - 1]);
      EXPECT_NEAR(s.cumulative_arc[i] - s.cumulative_arc[i - 1], (s.points[i] - s.points[i - 1]).norm(), 1e-9);
      EXPECT_TRUE(b.contains(s.points[i]));
    }
  }
}

TEST(Trace, ArcLengthInvariantUnderRigidMotion) {
  // Rotor about z, rotated by 90 degrees about z and shifted along z: the analytic field is unchanged,
  // so the moved seed must give the same arc length.
  const auto f = gen_synthetic(SyntheticKind::helix, {41, 41, 41}, {Vec3(-2, -2, -2), Vec3(2, 2, 2)}, {.pitch = 0.4});
  const auto g = gen_synthetic(SyntheticKind::helix, {41, 41, 41}, {Vec3(-2, -2, -1), Vec3(2, 2, 3)}, {.pitch = 0.4});
  const auto a = trace(f, Vec3(1, 0, -1.5), {.step = 0.01, .max_steps = 400});
  const auto c = trace(g, Vec3(0, 1, -0.5), {.step = 0.01, .max_steps = 400});
  EXPECT_NEAR(a.arc_length(), c.arc_length(), 1e-3);
}

TEST(SeedUniform, DeterministicAndUnbiased) {
  const Bounds unit{};
  EXPECT_THROW(seed_uniform(unit, 0, 1), Error);
  const auto a = seed_uniform(unit, 10000, 17);
  EXPECT_EQ(a, seed_uniform(unit, 10000, 17));
  Vec3 mean = Vec3::Zero();
  for (const auto& p : a) {
    EXPECT_TRUE(unit.contains(p));
    mean += p;
  }
  mean /= 10000.0;
  for (int ax = 0; ax < 3; ++ax) EXPECT_NEAR(mean[ax], 0.5, 0.02);
}

TEST(StreamlineExport, TextFormat) {
  const auto s = Streamline::from_points({Vec3(0, 0.5, 1), Vec3(1.0 / 3, 2, 3)}, 7);
  std::ostringstream out;
  write_streamlines(out, {s});
  EXPECT_EQ(out.str(), "7 2 0 0.5 1 0.333333333 2 3\n");
  std::istringstream in(out.str());
  const auto back = read_streamlines(in);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].seed_id, 7);
  EXPECT_NEAR(back[0].points[1].x(), 1.0 / 3, 1e-9);
  std::istringstream bad("3 4 0 0 0 1 1 1\n");
  EXPECT_THROW(read_streamlines(bad), Error);
}
