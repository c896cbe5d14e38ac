#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "flowsem/adam.hpp"
#include "flowsem/binary_io.hpp"
#include "flowsem/descriptor.hpp"
#include "flowsem/error.hpp"
#include "flowsem/noise_schedule.hpp"

namespace flowsem {

struct DaeShape {
  int input_dim = kControlPoints * kControlPoints;
  std::vector<int> hidden{256};
  int latent_dim = 128;
  int temb_dim = 64;

  void validate() const {
    require(input_dim >= 1 && latent_dim >= 1, ErrorCode::BadParam, "dims must be positive");
    require(!hidden.empty(), ErrorCode::BadParam, "need at least one hidden layer");
    for (int h : hidden) require(h >= 1, ErrorCode::BadParam, "hidden widths must be positive");
    require(temb_dim >= 2 && temb_dim % 2 == 0, ErrorCode::BadParam, "temb_dim must be even and >= 2");
  }
  bool operator==(const DaeShape&) const = default;
};

/// Sinusoidal timestep embedding: [sin(t f_0) .. sin(t f_{h-1}), cos(t f_0) .. cos(t f_{h-1})],
/// f_i = 10000^(-i/h), h = dim / 2.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> timestep_embedding(std::span<const int> t, int dim) {
  const int half = dim / 2;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> e(dim, static_cast<Eigen::Index>(t.size()));
  for (std::size_t c = 0; c < t.size(); ++c)
    for (int i = 0; i < half; ++i) {
      const double f = std::exp(-std::log(10000.0) * i / half);
      e(i, static_cast<Eigen::Index>(c)) = static_cast<Scalar>(std::sin(t[c] * f));
      e(half + i, static_cast<Eigen::Index>(c)) = static_cast<Scalar>(std::cos(t[c] * f));
    }
  return e;
}

/// Denoising autoencoder D(x_t, t) over flattened distance matrices.
///
/// Encoder: input -> hidden[0] (+ projected timestep embedding) -> ... -> hidden.back() -> latent.
/// Decoder mirrors the hidden widths back to input. SiLU between layers; latent and output are linear.
/// All parameters live in one flat vector so the optimizer and checkpoints see a single blob.
template <typename Scalar>
class BasicDae {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  BasicDae() : BasicDae(DaeShape{}, 0) {}

  BasicDae(DaeShape shape, std::uint64_t init_seed) : shape_(std::move(shape)) {
    shape_.validate();
    layout();
    std::mt19937_64 rng(init_seed);
    for (const auto& d : all_layers()) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(d.in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (std::size_t i = 0; i < d.weight_count(); ++i) params_[d.w_off + i] = static_cast<Scalar>(u(rng));
      for (int i = 0; i < d.out; ++i) params_[d.b_off + static_cast<std::size_t>(i)] = static_cast<Scalar>(u(rng));
    }
  }

  BasicDae(DaeShape shape, std::vector<Scalar> params) : shape_(std::move(shape)) {
    shape_.validate();
    layout();
    require(params.size() == params_.size(), ErrorCode::FormatError, "parameter blob size does not match shape");
    std::copy(params.begin(), params.end(), params_.begin());
  }

  const DaeShape& shape() const noexcept { return shape_; }
  int latent_dim() const noexcept { return shape_.latent_dim; }
  std::size_t parameter_count() const noexcept { return params_.size(); }
  std::span<Scalar> parameters() noexcept { return params_; }
  std::span<const Scalar> parameters() const noexcept { return params_; }
  std::span<const Scalar> gradients() const noexcept { return grads_; }

  /// Latent codes for a batch of inputs (columns) at timestep t.
  Matrix encode(const Matrix& x, std::span<const int> t) const {
    Cache c;
    return encode_impl(x, t, c);
  }

  Matrix encode(const Matrix& x) const {
    std::vector<int> t(static_cast<std::size_t>(x.cols()), 0);
    return encode(x, t);
  }

  Matrix decode(const Matrix& z) const {
    Cache c;
    return decode_impl(z, c);
  }

  /// D(x_t, t): full reconstruction.
  Matrix forward(const Matrix& x, std::span<const int> t) const {
    Cache c;
    return decode_impl(encode_impl(x, t, c), c);
  }

  /// Mean squared error over all elements of the batch; fills gradients().
  double loss_and_gradient(const Matrix& xt, std::span<const int> t, const Matrix& x0) {
    require(xt.rows() == shape_.input_dim && x0.rows() == shape_.input_dim && xt.cols() == x0.cols(),
            ErrorCode::ShapeMismatch, "batch shape mismatch");
    Cache c;
    const Matrix out = decode_impl(encode_impl(xt, t, c), c);
    const Matrix diff = out - x0;
    const double count = static_cast<double>(diff.size());
    const double loss = static_cast<double>(diff.squaredNorm()) / count;

    std::fill(grads_.begin(), grads_.end(), Scalar(0));
    Matrix g = diff * static_cast<Scalar>(2.0 / count);

    // Decoder, last layer first.
    for (std::size_t i = dec_.size(); i-- > 0;) {
      if (i + 1 < dec_.size()) g = g.cwiseProduct(silu_grad(c.dec_pre[i]));
      g = backward_dense(dec_[i], c.dec_in[i], g);
    }
    g = backward_dense(latent_, c.enc_act.back(), g);
    for (std::size_t i = enc_.size(); i-- > 0;) {
      g = g.cwiseProduct(silu_grad(c.enc_pre[i]));
      if (i == 0) backward_dense(temb_, c.temb, g, false);
      g = backward_dense(enc_[i], i == 0 ? xt : c.enc_act[i - 1], g, i != 0);
    }
    return loss;
  }

 private:
  struct Dense {
    std::size_t w_off = 0, b_off = 0;
    int in = 0, out = 0;
    std::size_t weight_count() const noexcept { return static_cast<std::size_t>(in) * static_cast<std::size_t>(out); }
  };

  struct Cache {
    Matrix temb;
    std::vector<Matrix> enc_pre, enc_act;
    std::vector<Matrix> dec_in, dec_pre;
  };

  void layout() {
    std::size_t off = 0;
    auto add = [&](int in, int out) {
      Dense d;
      d.in = in;
      d.out = out;
      d.w_off = off;
      off += d.weight_count();
      d.b_off = off;
      off += static_cast<std::size_t>(out);
      return d;
    };
    const auto& h = shape_.hidden;
    enc_.clear();
    dec_.clear();
    enc_.push_back(add(shape_.input_dim, h[0]));
    temb_ = add(shape_.temb_dim, h[0]);
    for (std::size_t i = 1; i < h.size(); ++i) enc_.push_back(add(h[i - 1], h[i]));
    latent_ = add(h.back(), shape_.latent_dim);
    int prev = shape_.latent_dim;
    for (std::size_t i = h.size(); i-- > 0;) {
      dec_.push_back(add(prev, h[i]));
      prev = h[i];
    }
    dec_.push_back(add(prev, shape_.input_dim));
    params_.assign(off, Scalar(0));
    grads_.assign(off, Scalar(0));
  }

  std::vector<Dense> all_layers() const {
    std::vector<Dense> all{enc_.front(), temb_};
    all.insert(all.end(), enc_.begin() + 1, enc_.end());
    all.push_back(latent_);
    all.insert(all.end(), dec_.begin(), dec_.end());
    return all;
  }

  Eigen::Map<const Matrix> weight(const Dense& d) const { return {params_.data() + d.w_off, d.out, d.in}; }
  Eigen::Map<const Vector> bias(const Dense& d) const { return {params_.data() + d.b_off, d.out}; }

  Matrix apply(const Dense& d, const Matrix& x) const {
    Matrix y = weight(d) * x;
    y.colwise() += bias(d);
    return y;
  }

  // Accumulates dW, db; returns dx when requested.
  Matrix backward_dense(const Dense& d, const Matrix& x, const Matrix& dy, bool need_dx = true) {
    Eigen::Map<Matrix> dw(grads_.data() + d.w_off, d.out, d.in);
    Eigen::Map<Vector> db(grads_.data() + d.b_off, d.out);
    dw.noalias() += dy * x.transpose();
    db += dy.rowwise().sum();
    if (!need_dx) return {};
    return weight(d).transpose() * dy;
  }

  static Matrix silu(const Matrix& a) {
    return a.unaryExpr([](Scalar v) { return v / (Scalar(1) + std::exp(-v)); });
  }
  static Matrix silu_grad(const Matrix& a) {
    return a.unaryExpr([](Scalar v) {
      const Scalar s = Scalar(1) / (Scalar(1) + std::exp(-v));
      return s * (Scalar(1) + v * (Scalar(1) - s));
    });
  }

  Matrix encode_impl(const Matrix& x, std::span<const int> t, Cache& c) const {
    require(x.rows() == shape_.input_dim, ErrorCode::ShapeMismatch, "input dimension mismatch");
    require(static_cast<Eigen::Index>(t.size()) == x.cols(), ErrorCode::ShapeMismatch, "one timestep per column");
    c.temb = timestep_embedding<Scalar>(t, shape_.temb_dim);
    Matrix a = apply(enc_[0], x) + apply(temb_, c.temb);
    for (std::size_t i = 0;; ++i) {
      c.enc_pre.push_back(a);
      c.enc_act.push_back(silu(a));
      if (i + 1 == enc_.size()) break;
      a = apply(enc_[i + 1], c.enc_act.back());
    }
    return apply(latent_, c.enc_act.back());
  }

  Matrix decode_impl(const Matrix& z, Cache& c) const {
    require(z.rows() == shape_.latent_dim, ErrorCode::ShapeMismatch, "latent dimension mismatch");
    Matrix h = z;
    for (std::size_t i = 0; i < dec_.size(); ++i) {
      c.dec_in.push_back(h);
      Matrix a = apply(dec_[i], h);
      if (i + 1 == dec_.size()) return a;
      c.dec_pre.push_back(a);
      h = silu(a);
    }
    return h;
  }

  // Aligned storage keeps Eigen's vectorized kernels on the same code path from run to run.
  using Storage = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

  DaeShape shape_;
  std::vector<Dense> enc_, dec_;
  Dense temb_, latent_;
  Storage params_, grads_;
};

using DaeModel = BasicDae<float>;

/// Encoder output for one segment descriptor.
struct FlowLatent {
  Eigen::VectorXd vector;
  std::int64_t segment_id = -1;
};

namespace detail {

template <typename Scalar>
typename BasicDae<Scalar>::Matrix pack_columns(std::span<const DistanceMatrix> mats, std::span<const std::size_t> idx,
                                               int input_dim) {
  typename BasicDae<Scalar>::Matrix x(input_dim, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) {
    const auto& m = mats[idx[c]];
    require(static_cast<int>(m.values.size()) == input_dim, ErrorCode::ShapeMismatch,
            "descriptor size does not match model input");
    for (int r = 0; r < input_dim; ++r)
      x(r, static_cast<Eigen::Index>(c)) = static_cast<Scalar>(m.values[static_cast<std::size_t>(r)]);
  }
  return x;
}

}  // namespace detail

struct DaeTrainConfig {
  int epochs = 100;
  int batch = 128;
  double lr = 1e-3;
  double weight_decay = 0.0;
  /// Cosine-anneal the learning rate to zero over the run instead of holding it constant.
  bool cosine_decay = false;
  /// Timesteps drawn uniformly per sample; {0} trains a plain autoencoder.
  std::vector<int> t_range{10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  std::vector<int> hidden{256};
  int latent_dim = 128;
  int temb_dim = 64;
  std::uint64_t seed = 0;
  NoiseSchedule schedule{};
  /// Optional cap on optimizer steps (0 = no cap); training stops mid-epoch when reached.
  long max_steps = 0;
  /// Called after each epoch with the 1-based epoch number and its mean loss.
  std::function<void(int epoch, double loss)> on_epoch;
};

struct DaeTrainResult {
  DaeModel model;
  std::vector<double> epoch_loss;
  long steps = 0;
};

/// Minimizes the denoising objective |D(alpha_t x0 + sigma_t eps, t) - x0|^2 with Adam.
/// Single-threaded and deterministic for a given seed.
inline DaeTrainResult train_dae(std::span<const DistanceMatrix> dataset, const DaeTrainConfig& cfg) {
  require(!dataset.empty(), ErrorCode::BadParam, "training set is empty");
  require(cfg.lr > 0, ErrorCode::BadParam, "learning rate must be positive");
  require(cfg.epochs >= 1 && cfg.batch >= 1, ErrorCode::BadParam, "epochs and batch must be >= 1");
  require(!cfg.t_range.empty(), ErrorCode::BadParam, "t_range is empty");
  for (int t : cfg.t_range)
    require(t >= 0 && t <= cfg.schedule.steps(), ErrorCode::BadParam, "t_range outside schedule");

  DaeShape shape;
  shape.input_dim = static_cast<int>(dataset.front().values.size());
  shape.hidden = cfg.hidden;
  shape.latent_dim = cfg.latent_dim;
  shape.temb_dim = cfg.temb_dim;

  std::mt19937_64 rng(cfg.seed);
  DaeTrainResult result{DaeModel(shape, rng()), {}, 0};
  auto& model = result.model;
  Adam<float> opt(model.parameter_count(), {.lr = cfg.lr, .weight_decay = cfg.weight_decay});

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::uniform_int_distribution<std::size_t> pick_t(0, cfg.t_range.size() - 1);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  const std::size_t per_epoch = (dataset.size() + static_cast<std::size_t>(cfg.batch) - 1) / static_cast<std::size_t>(cfg.batch);
  const double total_steps = static_cast<double>(
      cfg.max_steps > 0 ? std::min<long>(cfg.max_steps, static_cast<long>(per_epoch) * cfg.epochs)
                        : static_cast<long>(per_epoch) * cfg.epochs);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const DaeModel::Matrix x0 = detail::pack_columns<float>(dataset, idx, shape.input_dim);
      DaeModel::Matrix xt = x0;
      std::vector<int> ts(idx.size());
      for (std::size_t c = 0; c < idx.size(); ++c) {
        ts[c] = cfg.t_range[pick_t(rng)];
        if (ts[c] == 0) continue;
        const auto a = static_cast<float>(cfg.schedule.alpha(ts[c]));
        const auto s = static_cast<float>(cfg.schedule.sigma(ts[c]));
        for (Eigen::Index r = 0; r < xt.rows(); ++r)
          xt(r, static_cast<Eigen::Index>(c)) = a * x0(r, static_cast<Eigen::Index>(c)) + s * normal(rng);
      }
      sum += model.loss_and_gradient(xt, ts, x0);
      ++batches;
      if (cfg.cosine_decay)
        opt.set_lr(0.5 * cfg.lr * (1.0 + std::cos(3.141592653589793 * static_cast<double>(result.steps) / total_steps)));
      opt.step(model.parameters(), model.gradients());
      ++result.steps;
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) break;
    }
    result.epoch_loss.push_back(sum / static_cast<double>(batches));
    if (cfg.on_epoch) cfg.on_epoch(epoch + 1, result.epoch_loss.back());
    if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) break;
  }
  return result;
}

/// Latent of a clean descriptor (t = 0).
inline FlowLatent encode(const DaeModel& model, const DistanceMatrix& x0, std::int64_t segment_id = -1) {
  const std::size_t idx = 0;
  const auto x = detail::pack_columns<float>(std::span(&x0, 1), std::span(&idx, 1), model.shape().input_dim);
  return {model.encode(x).col(0).cast<double>(), segment_id};
}

/// Latents for many descriptors as columns of a latent_dim x N matrix.
inline Eigen::MatrixXd encode_batch(const DaeModel& model, std::span<const DistanceMatrix> mats,
                                    std::size_t chunk = 256) {
  Eigen::MatrixXd out(model.latent_dim(), static_cast<Eigen::Index>(mats.size()));
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < mats.size(); start += chunk) {
    const std::size_t end = std::min(mats.size(), start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto x = detail::pack_columns<float>(mats, idx, model.shape().input_dim);
    out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(idx.size())) =
        model.encode(x).template cast<double>();
  }
  return out;
}

/// D(x0, 0): reconstruction of a clean descriptor.
inline DistanceMatrix reconstruct(const DaeModel& model, const DistanceMatrix& x0) {
  const std::size_t idx = 0;
  const auto x = detail::pack_columns<float>(std::span(&x0, 1), std::span(&idx, 1), model.shape().input_dim);
  const int t0 = 0;
  const auto y = model.forward(x, std::span(&t0, 1));
  DistanceMatrix out{x0.n, std::vector<double>(x0.values.size())};
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = y(static_cast<Eigen::Index>(i), 0);
  return out;
}

inline std::vector<DistanceMatrix> reconstruct_batch(const DaeModel& model, std::span<const DistanceMatrix> mats,
                                                     std::size_t chunk = 256) {
  std::vector<DistanceMatrix> out;
  out.reserve(mats.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < mats.size(); start += chunk) {
    const std::size_t end = std::min(mats.size(), start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto x = detail::pack_columns<float>(mats, idx, model.shape().input_dim);
    const std::vector<int> t(idx.size(), 0);
    const auto y = model.forward(x, t);
    for (std::size_t c = 0; c < idx.size(); ++c) {
      DistanceMatrix m{mats[idx[c]].n, std::vector<double>(mats[idx[c]].values.size())};
      for (std::size_t r = 0; r < m.values.size(); ++r)
        m.values[r] = y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      out.push_back(std::move(m));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: "FSDAECK\0", u32 version, u32 input_dim, u32 latent_dim, u32 temb_dim, u32 hidden count,
// u32 hidden widths..., u64 parameter count, little-endian f32 blob.

inline constexpr std::string_view kDaeMagic{"FSDAECK\0", 8};

inline void save_checkpoint(const DaeModel& model, const std::string& path) {
  io::Writer w;
  w.put_bytes(kDaeMagic);
  w.put<std::uint32_t>(1);
  const auto& s = model.shape();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.input_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.latent_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.temb_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.hidden.size()));
  for (int h : s.hidden) w.put<std::uint32_t>(static_cast<std::uint32_t>(h));
  w.put<std::uint64_t>(model.parameter_count());
  w.put_span(model.parameters());
  w.save(path);
}

inline DaeModel load_checkpoint(const std::string& path) {
  auto r = io::Reader::from_file(path);
  if (r.get_bytes(kDaeMagic.size()) != kDaeMagic) fail(ErrorCode::FormatError, "not an encoder checkpoint: " + path);
  if (r.get<std::uint32_t>() != 1) fail(ErrorCode::FormatError, "unsupported checkpoint version");
  DaeShape s;
  s.input_dim = static_cast<int>(r.get<std::uint32_t>());
  s.latent_dim = static_cast<int>(r.get<std::uint32_t>());
  s.temb_dim = static_cast<int>(r.get<std::uint32_t>());
  const auto nh = r.get<std::uint32_t>();
  if (nh == 0 || nh > 64) fail(ErrorCode::FormatError, "bad hidden layer count");
  s.hidden.resize(nh);
  for (auto& h : s.hidden) h = static_cast<int>(r.get<std::uint32_t>());
  const auto count = r.get<std::uint64_t>();
  if (r.remaining() != count * sizeof(float)) fail(ErrorCode::FormatError, "checkpoint blob size mismatch");
  std::vector<float> params(count);
  for (auto& p : params) p = r.get<float>();
  return DaeModel(s, std::move(params));
}

}  // namespace flowsem
