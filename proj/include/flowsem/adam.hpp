#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace flowsem {

/// Adam with decoupled weight decay over a flat parameter vector.
template <typename Scalar>
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  Adam(std::size_t size, Options opt) : opt_(opt), m_(size, Scalar(0)), v_(size, Scalar(0)) {}

  void step(std::span<Scalar> params, std::span<const Scalar> grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, t_);
    const double c2 = 1.0 - std::pow(opt_.beta2, t_);
    const auto b1 = static_cast<Scalar>(opt_.beta1);
    const auto b2 = static_cast<Scalar>(opt_.beta2);
    const auto step_size = static_cast<Scalar>(opt_.lr / c1);
    const auto inv_sqrt_c2 = static_cast<Scalar>(1.0 / std::sqrt(c2));
    const auto eps = static_cast<Scalar>(opt_.eps);
    const auto decay = static_cast<Scalar>(1.0 - opt_.lr * opt_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Scalar g = grads[i];
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g * g;
      if (opt_.weight_decay != 0.0) params[i] *= decay;
      params[i] -= step_size * m_[i] / (std::sqrt(v_[i]) * inv_sqrt_c2 + eps);
    }
  }

  long steps_taken() const noexcept { return t_; }
  void set_lr(double lr) noexcept { opt_.lr = lr; }

 private:
  Options opt_;
  std::vector<Scalar> m_, v_;
  long t_ = 0;
};

}  // namespace flowsem
