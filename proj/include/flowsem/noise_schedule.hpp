#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "flowsem/error.hpp"

namespace flowsem {

/// Variance-preserving DDPM schedule with a linear beta ramp.
///
/// Index t runs 0..T; t = 0 is the clean input (alpha = 1, sigma = 0).
class NoiseSchedule {
 public:
  NoiseSchedule() : NoiseSchedule(1000, 1e-4, 0.02) {}

  NoiseSchedule(int steps, double beta_start, double beta_end) : steps_(steps) {
    require(steps >= 1, ErrorCode::BadParam, "schedule needs T >= 1");
    require(beta_start > 0 && beta_start <= beta_end && beta_end < 1, ErrorCode::BadParam,
            "need 0 < beta_start <= beta_end < 1");
    beta_.assign(static_cast<std::size_t>(steps) + 1, 0.0);
    alpha_.assign(beta_.size(), 1.0);
    sigma_.assign(beta_.size(), 0.0);
    double alpha_bar = 1.0;
    for (int t = 1; t <= steps; ++t) {
      const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
      beta_[t] = beta_start + (beta_end - beta_start) * frac;
      alpha_bar *= 1.0 - beta_[t];
      alpha_[t] = std::sqrt(alpha_bar);
      sigma_[t] = std::sqrt(1.0 - alpha_bar);
    }
  }

  int steps() const noexcept { return steps_; }
  double beta(int t) const { return beta_.at(static_cast<std::size_t>(t)); }
  double alpha(int t) const { return alpha_.at(check(t)); }
  double sigma(int t) const { return sigma_.at(check(t)); }

 private:
  std::size_t check(int t) const {
    require(t >= 0 && t <= steps_, ErrorCode::BadParam, "timestep out of range");
    return static_cast<std::size_t>(t);
  }

  int steps_;
  std::vector<double> beta_, alpha_, sigma_;
};

inline NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
  return NoiseSchedule(steps, beta_start, beta_end);
}

/// x_t = alpha_t x0 + sigma_t eps, elementwise. t = 0 returns x0 unchanged.
template <typename T>
std::vector<T> corrupt(std::span<const T> x0, int t, std::span<const T> eps, const NoiseSchedule& sched) {
  const double a = sched.alpha(t);
  const double s = sched.sigma(t);
  require(x0.size() == eps.size(), ErrorCode::ShapeMismatch, "noise draw size differs from input");
  std::vector<T> out(x0.begin(), x0.end());
  if (t == 0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(a * x0[i] + s * eps[i]);
  return out;
}

}  // namespace flowsem
