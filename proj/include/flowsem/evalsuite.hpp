#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "flowsem/adam.hpp"
#include "flowsem/dae.hpp"
#include "flowsem/descriptor.hpp"
#include "flowsem/error.hpp"

namespace flowsem {

/// Frozen features (one column per sample) with integer class labels.
struct LabeledFeatureSet {
  Eigen::MatrixXd features;
  std::vector<int> labels;
  std::vector<std::string> class_names;

  int num_classes() const noexcept { return static_cast<int>(class_names.size()); }

  void validate() const {
    require(features.cols() == static_cast<Eigen::Index>(labels.size()), ErrorCode::ShapeMismatch,
            "features and labels differ in length");
    for (int l : labels) require(l >= 0 && l < num_classes(), ErrorCode::BadParam, "label out of range");
  }
};

struct ProbeConfig {
  int epochs = 200;
  double lr = 1e-2;
  int batch = 64;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double test_accuracy = 0.0;
  double train_accuracy = 0.0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  /// confusion[true][predicted] over the held-out split.
  std::vector<std::vector<std::size_t>> confusion;
};

/// Softmax-regression probe on frozen features.
///
/// Split is stratified: one seeded permutation of all samples, then the first floor(split * n_c) members of
/// each class (in permutation order) train the probe. Features are standardized with training statistics.
/// Weights start at zero, so relabeling classes permutes the solution without changing accuracy.
inline ProbeResult linear_probe_detailed(const LabeledFeatureSet& set, double split, const ProbeConfig& cfg = {}) {
  set.validate();
  const int classes = set.num_classes();
  require(classes >= 2, ErrorCode::BadParam, "linear probe needs >= 2 classes");
  require(split > 0 && split < 1, ErrorCode::BadParam, "split must lie in (0, 1)");
  require(cfg.epochs >= 1 && cfg.lr > 0 && cfg.batch >= 1, ErrorCode::BadParam, "bad probe config");
  std::vector<std::size_t> per_class(static_cast<std::size_t>(classes), 0);
  for (int l : set.labels) ++per_class[static_cast<std::size_t>(l)];
  for (auto c : per_class) require(c >= 10, ErrorCode::BadParam, "linear probe needs >= 10 samples per class");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> perm(set.labels.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> taken(static_cast<std::size_t>(classes), 0);
  std::vector<std::size_t> train, test;
  for (std::size_t i : perm) {
    const auto c = static_cast<std::size_t>(set.labels[i]);
    const auto quota = static_cast<std::size_t>(std::floor(split * static_cast<double>(per_class[c])));
    (taken[c]++ < quota ? train : test).push_back(i);
  }
  require(!train.empty() && !test.empty(), ErrorCode::BadParam, "split leaves an empty partition");

  const Eigen::Index dim = set.features.rows();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim), scale = Eigen::VectorXd::Zero(dim);
  for (std::size_t i : train) mean += set.features.col(static_cast<Eigen::Index>(i));
  mean /= static_cast<double>(train.size());
  for (std::size_t i : train) scale += (set.features.col(static_cast<Eigen::Index>(i)) - mean).cwiseAbs2();
  scale = (scale / static_cast<double>(train.size())).cwiseSqrt().cwiseMax(1e-8).cwiseInverse();
  auto standardized = [&](std::size_t i) -> Eigen::VectorXd {
    return (set.features.col(static_cast<Eigen::Index>(i)) - mean).cwiseProduct(scale);
  };

  // params: W (classes x dim, column-major) then b (classes).
  std::vector<double> params(static_cast<std::size_t>(classes * (dim + 1)), 0.0);
  std::vector<double> grads(params.size());
  Eigen::Map<Eigen::MatrixXd> w(params.data(), classes, dim);
  Eigen::Map<Eigen::VectorXd> b(params.data() + classes * dim, classes);
  Eigen::Map<Eigen::MatrixXd> gw(grads.data(), classes, dim);
  Eigen::Map<Eigen::VectorXd> gb(grads.data() + classes * dim, classes);
  Adam<double> opt(params.size(), {.lr = cfg.lr});

  auto predict = [&](std::size_t i) {
    const Eigen::VectorXd logits = w * standardized(i) + b;
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    return static_cast<int>(best);
  };

  std::vector<std::size_t> order = train;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      gw.setZero();
      gb.setZero();
      for (std::size_t s = start; s < end; ++s) {
        const Eigen::VectorXd x = standardized(order[s]);
        Eigen::VectorXd p = w * x + b;
        p = (p.array() - p.maxCoeff()).exp();
        p /= p.sum();
        p[set.labels[order[s]]] -= 1.0;
        gw.noalias() += p * x.transpose();
        gb += p;
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      gw *= inv;
      gb *= inv;
      opt.step(params, grads);
    }
  }

  ProbeResult r;
  r.train_size = train.size();
  r.test_size = test.size();
  r.confusion.assign(static_cast<std::size_t>(classes), std::vector<std::size_t>(static_cast<std::size_t>(classes), 0));
  std::size_t hits = 0;
  for (std::size_t i : test) {
    const int p = predict(i);
    ++r.confusion[static_cast<std::size_t>(set.labels[i])][static_cast<std::size_t>(p)];
    hits += p == set.labels[i];
  }
  r.test_accuracy = static_cast<double>(hits) / static_cast<double>(test.size());
  hits = 0;
  for (std::size_t i : train) hits += predict(i) == set.labels[i];
  r.train_accuracy = static_cast<double>(hits) / static_cast<double>(train.size());
  return r;
}

/// Held-out accuracy of the probe.
inline double linear_probe(const LabeledFeatureSet& set, double split = 0.8, const ProbeConfig& cfg = {}) {
  return linear_probe_detailed(set, split, cfg).test_accuracy;
}

struct UniformityResult {
  double value = 0.0;
  /// Standard error of `value`; zero when computed exactly.
  double std_error = 0.0;
  bool exact = true;
  std::size_t pairs = 0;
};

struct UniformityOptions {
  std::size_t exact_limit = 5000;
  std::size_t sampled_pairs = 2'000'000;
  std::uint64_t seed = 0;
};

/// -log E[exp(-2 |f(x) - f(y)|^2)] over ordered pairs (x = y included) of L2-normalized features.
///
/// Exact for n <= exact_limit; above that, pairs are drawn uniformly and a delta-method standard error is
/// reported.
inline UniformityResult uniformity(const Eigen::MatrixXd& features, const UniformityOptions& opt = {}) {
  const Eigen::Index n = features.cols();
  require(n >= 2, ErrorCode::BadParam, "uniformity needs >= 2 features");
  Eigen::MatrixXd f = features;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = f.col(i).norm();
    require(norm > 0 && std::isfinite(norm), ErrorCode::BadParam, "cannot normalize a zero or non-finite feature");
    f.col(i) /= norm;
  }

  UniformityResult r;
  if (static_cast<std::size_t>(n) <= opt.exact_limit) {
    double off = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) off += std::exp(-2.0 * (f.col(i) - f.col(j)).squaredNorm());
    const double nn = static_cast<double>(n);
    r.value = -std::log((nn + 2.0 * off) / (nn * nn));
    r.pairs = static_cast<std::size_t>(n) * static_cast<std::size_t>(n);
    return r;
  }

  std::mt19937_64 rng(opt.seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t s = 0; s < opt.sampled_pairs; ++s) {
    const double k = std::exp(-2.0 * (f.col(pick(rng)) - f.col(pick(rng))).squaredNorm());
    sum += k;
    sum2 += k * k;
  }
  const double m = static_cast<double>(opt.sampled_pairs);
  const double mean = sum / m;
  const double var = std::max(0.0, (sum2 - m * mean * mean) / (m - 1));
  r.value = -std::log(mean);
  r.std_error = std::sqrt(var / m) / mean;
  r.exact = false;
  r.pairs = opt.sampled_pairs;
  return r;
}

// ---------------------------------------------------------------------------
// Scaling harness

enum class TimedOp { distance_matrices, dae_training };

inline TimedOp parse_timed_op(const std::string& s) {
  if (s == "distance_matrices") return TimedOp::distance_matrices;
  if (s == "dae_training") return TimedOp::dae_training;
  fail(ErrorCode::BadParam, "unknown timed op '" + s + "'");
}

inline std::string to_string(TimedOp op) {
  return op == TimedOp::distance_matrices ? "distance_matrices" : "dae_training";
}

struct TimingRow {
  std::size_t count = 0;
  double seconds = 0.0;
};

struct TimingConfig {
  int repeats = 3;
  /// Epochs per dae_training measurement.
  int epochs = 1;
  std::uint64_t seed = 0;
};

/// Random smooth polylines (64 points) standing in for traced segments.
inline std::vector<Segment> random_segments(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Segment> out(count);
  for (std::size_t s = 0; s < count; ++s) {
    Vec3 p = Vec3::Zero(), dir(1, 0, 0);
    out[s].id = static_cast<std::int64_t>(s);
    out[s].points.reserve(64);
    for (int i = 0; i < 64; ++i) {
      out[s].points.push_back(p);
      dir = (dir + 0.3 * Vec3(n(rng), n(rng), n(rng))).normalized();
      p += 0.05 * dir;
    }
  }
  return out;
}

/// Median-of-repeats wall time of `op` for each dataset size, after one untimed warm-up.
inline std::vector<TimingRow> timing_scaling(const std::vector<std::size_t>& counts, TimedOp op,
                                             const TimingConfig& cfg = {}) {
  require(!counts.empty(), ErrorCode::BadParam, "counts must be non-empty");
  require(std::is_sorted(counts.begin(), counts.end()), ErrorCode::BadParam, "counts must be ascending");
  require(cfg.repeats >= 1, ErrorCode::BadParam, "repeats must be >= 1");

  auto run_once = [&](std::size_t count, const std::vector<Segment>& segs,
                      const std::vector<DistanceMatrix>& mats) -> double {
    const auto start = std::chrono::steady_clock::now();
    if (op == TimedOp::distance_matrices) {
      const auto out = describe_all(std::span(segs.data(), count));
      if (out.size() != count) fail(ErrorCode::BadParam, "descriptor count mismatch");
    } else {
      DaeTrainConfig tc;
      tc.epochs = cfg.epochs;
      tc.seed = cfg.seed;
      (void)train_dae(std::span(mats.data(), count), tc);
    }
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  const std::size_t largest = counts.back();
  const auto segs = random_segments(std::max<std::size_t>(largest, 64), cfg.seed);
  std::vector<DistanceMatrix> mats;
  if (op == TimedOp::dae_training) mats = describe_all(segs);

  (void)run_once(std::min<std::size_t>(64, segs.size()), segs, mats);
  std::vector<TimingRow> rows;
  for (std::size_t count : counts) {
    std::vector<double> t;
    for (int r = 0; r < cfg.repeats; ++r) t.push_back(run_once(count, segs, mats));
    std::nth_element(t.begin(), t.begin() + static_cast<long>(t.size() / 2), t.end());
    rows.push_back({count, t[t.size() / 2]});
  }
  return rows;
}

inline nlohmann::json environment_metadata() {
  return {{"hardware_threads", std::thread::hardware_concurrency()},
#if defined(__clang__)
          {"compiler", "clang " __clang_version__},
#elif defined(__GNUC__)
          {"compiler", "gcc " __VERSION__},
#else
          {"compiler", "unknown"},
#endif
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)}};
}

}  // namespace flowsem
