#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "flowsem/descriptor.hpp"
#include "flowsem/error.hpp"

namespace flowsem {

struct ReconstructionMetrics {
  double rmse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

inline constexpr double kPsnrCap = 99.0;

inline double rmse(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && !a.empty(), ErrorCode::ShapeMismatch, "rmse: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

/// Peak signal-to-noise ratio with MAX = 1, capped at 99 dB once rmse < 1e-5.
inline double psnr_from_rmse(double r, double max_value = 1.0) {
  if (r < 1e-5) return kPsnrCap;
  return 20.0 * std::log10(max_value / r);
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1,
/// evaluated over valid window positions.
inline double ssim(const DistanceMatrix& a, const DistanceMatrix& b, double dynamic_range = 1.0) {
  require(a.n == b.n && a.values.size() == b.values.size(), ErrorCode::ShapeMismatch, "ssim: shape mismatch");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  require(a.n >= kWin, ErrorCode::ShapeMismatch, "ssim: image smaller than window");

  std::array<double, kWin * kWin> w{};
  double wsum = 0.0;
  for (int y = 0; y < kWin; ++y)
    for (int x = 0; x < kWin; ++x) {
      const double dy = y - kWin / 2, dx = x - kWin / 2;
      w[static_cast<std::size_t>(y * kWin + x)] = std::exp(-(dx * dx + dy * dy) / (2 * kSigma * kSigma));
      wsum += w[static_cast<std::size_t>(y * kWin + x)];
    }
  for (auto& v : w) v /= wsum;

  const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
  const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
  const int n = a.n;
  double total = 0.0;
  int windows = 0;
  for (int oy = 0; oy + kWin <= n; ++oy)
    for (int ox = 0; ox + kWin <= n; ++ox) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int y = 0; y < kWin; ++y)
        for (int x = 0; x < kWin; ++x) {
          const double wt = w[static_cast<std::size_t>(y * kWin + x)];
          const double va = a(oy + y, ox + x), vb = b(oy + y, ox + x);
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * va * vb;
        }
      const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
      ++windows;
    }
  return total / windows;
}

inline ReconstructionMetrics metrics(const DistanceMatrix& x0, const DistanceMatrix& recon) {
  require(x0.n == recon.n && x0.values.size() == recon.values.size(), ErrorCode::ShapeMismatch,
          "metrics: shape mismatch");
  ReconstructionMetrics m;
  m.rmse = rmse(x0.values, recon.values);
  m.psnr = psnr_from_rmse(m.rmse);
  m.ssim = ssim(x0, recon);
  return m;
}

/// Per-sample metrics averaged over the batch.
inline ReconstructionMetrics batch_metrics(std::span<const DistanceMatrix> x0, std::span<const DistanceMatrix> recon) {
  require(x0.size() == recon.size() && !x0.empty(), ErrorCode::ShapeMismatch, "metrics: batch size mismatch");
  ReconstructionMetrics avg;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const auto m = metrics(x0[i], recon[i]);
    avg.rmse += m.rmse;
    avg.psnr += m.psnr;
    avg.ssim += m.ssim;
  }
  const auto n = static_cast<double>(x0.size());
  avg.rmse /= n;
  avg.psnr /= n;
  avg.ssim /= n;
  return avg;
}

}  // namespace flowsem
