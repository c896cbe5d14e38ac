#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "flowsem/adam.hpp"
#include "flowsem/binary_io.hpp"
#include "flowsem/dae.hpp"
#include "flowsem/descriptor.hpp"
#include "flowsem/error.hpp"
#include "flowsem/text_embedding.hpp"

namespace flowsem {

struct AttentionOutput {
  Eigen::VectorXd output;
  Eigen::VectorXd weights;
};

/// softmax(q . k_i / sqrt(d)) weighted sum of the value columns.
inline AttentionOutput cross_attention_weights(const Eigen::VectorXd& q, const Eigen::MatrixXd& keys,
                                               const Eigen::MatrixXd& values) {
  require(keys.cols() >= 1, ErrorCode::BadParam, "cross attention needs at least one key");
  require(keys.cols() == values.cols(), ErrorCode::ShapeMismatch, "keys and values differ in count");
  require(keys.rows() == q.size(), ErrorCode::ShapeMismatch, "key width differs from query width");
  Eigen::VectorXd logits = keys.transpose() * q / std::sqrt(static_cast<double>(q.size()));
  Eigen::VectorXd w = (logits.array() - logits.maxCoeff()).exp();
  w /= w.sum();
  return {values * w, w};
}

inline Eigen::VectorXd cross_attention(const Eigen::VectorXd& q, const Eigen::MatrixXd& keys,
                                       const Eigen::MatrixXd& values) {
  return cross_attention_weights(q, keys, values).output;
}

struct InfoNceResult {
  double loss = 0.0;
  /// d loss / d similarity, same shape as the similarity matrix.
  Eigen::MatrixXd d_similarity;
};

/// Symmetric InfoNCE over a B x B similarity matrix whose diagonal holds the matched pairs.
inline InfoNceResult infonce_from_similarity(const Eigen::MatrixXd& sim, double tau) {
  require(sim.rows() == sim.cols(), ErrorCode::BadParam, "similarity matrix must be square");
  require(sim.rows() >= 2, ErrorCode::BadParam, "InfoNCE needs a batch of at least 2");
  require(tau > 0, ErrorCode::BadParam, "temperature must be positive");
  const Eigen::Index b = sim.rows();
  const Eigen::MatrixXd logits = sim / tau;
  Eigen::MatrixXd p_row(b, b), p_col(b, b);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double mr = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd er = (logits.row(i).array() - mr).exp();
    const double sr = er.sum();
    p_row.row(i) = er / sr;
    loss += mr + std::log(sr) - logits(i, i);

    const double mc = logits.col(i).maxCoeff();
    const Eigen::VectorXd ec = (logits.col(i).array() - mc).exp();
    const double sc = ec.sum();
    p_col.col(i) = ec / sc;
    loss += mc + std::log(sc) - logits(i, i);
  }
  InfoNceResult r;
  r.loss = loss / (2.0 * static_cast<double>(b));
  r.d_similarity = (p_row + p_col - 2.0 * Eigen::MatrixXd::Identity(b, b)) / (2.0 * static_cast<double>(b) * tau);
  return r;
}

struct InfoNceGradient {
  double loss = 0.0;
  Eigen::MatrixXd d_text;
  Eigen::MatrixXd d_flow;
};

/// Symmetric InfoNCE on cosine similarities between text column i and flow column j.
inline InfoNceGradient infonce_loss(const Eigen::MatrixXd& text, const Eigen::MatrixXd& flow, double tau) {
  require(text.cols() == flow.cols(), ErrorCode::BadParam, "text and flow batches differ in size");
  require(text.rows() == flow.rows(), ErrorCode::ShapeMismatch, "text and flow widths differ");
  const Eigen::VectorXd tn = text.colwise().norm().transpose();
  const Eigen::VectorXd fn = flow.colwise().norm().transpose();
  require(tn.minCoeff() > 0 && fn.minCoeff() > 0, ErrorCode::BadParam, "zero-norm embedding in batch");
  const Eigen::MatrixXd u = text * tn.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd v = flow * fn.cwiseInverse().asDiagonal();
  const auto nce = infonce_from_similarity(u.transpose() * v, tau);

  const Eigen::MatrixXd du = v * nce.d_similarity.transpose();
  const Eigen::MatrixXd dv = u * nce.d_similarity;
  InfoNceGradient g;
  g.loss = nce.loss;
  // back through x / |x|: (d - x_hat (x_hat . d)) / |x|
  g.d_text = (du - u * (u.cwiseProduct(du).colwise().sum()).asDiagonal()) * tn.cwiseInverse().asDiagonal();
  g.d_flow = (dv - v * (v.cwiseProduct(dv).colwise().sum()).asDiagonal()) * fn.cwiseInverse().asDiagonal();
  return g;
}

inline double infonce_value(const Eigen::MatrixXd& text, const Eigen::MatrixXd& flow, double tau) {
  return infonce_loss(text, flow, tau).loss;
}

// ---------------------------------------------------------------------------

struct MatcherShape {
  int text_dim = kHashedTextDim;
  int latent_dim = 128;
  int common_dim = 128;

  void validate() const {
    require(text_dim >= 1 && latent_dim >= 1 && common_dim >= 1, ErrorCode::BadParam, "matcher dims must be >= 1");
  }
  bool operator==(const MatcherShape&) const = default;
};

/// One training example: a caption's text embedding and the latents of its segment set (columns).
struct MatchExample {
  Eigen::VectorXd text;
  Eigen::MatrixXd latents;
};

/// Text and flow projections into a shared space, plus query/key maps for training-time aggregation.
/// Values are the projected flow embeddings themselves, so the aggregate lives where inference scores.
class MatcherModel {
 public:
  using Map = Eigen::Map<Eigen::MatrixXd>;
  using ConstMap = Eigen::Map<const Eigen::MatrixXd>;
  using ConstVec = Eigen::Map<const Eigen::VectorXd>;

  MatcherModel(const MatcherShape& shape, std::uint64_t seed, double temperature = 0.07)
      : shape_(shape), tau_(temperature) {
    init_layout();
    std::mt19937_64 rng(seed);
    auto fill = [&](std::size_t off, std::size_t count, int fan_in) {
      std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
      for (std::size_t i = 0; i < count; ++i) params_[off + i] = u(rng);
    };
    const auto c = static_cast<std::size_t>(shape_.common_dim);
    fill(text_w_, c * static_cast<std::size_t>(shape_.text_dim), shape_.text_dim);
    fill(flow_w_, c * static_cast<std::size_t>(shape_.latent_dim), shape_.latent_dim);
    fill(query_w_, c * c, shape_.common_dim);
    fill(key_w_, c * c, shape_.common_dim);
  }

  MatcherModel(const MatcherShape& shape, std::vector<double> params, double temperature)
      : shape_(shape), tau_(temperature) {
    init_layout();
    require(params.size() == params_.size(), ErrorCode::ShapeMismatch, "matcher parameter count mismatch");
    params_ = std::move(params);
  }

  /// Fixed affine standardization (z - mean) * scale applied to latents before the flow projection.
  void set_latent_normalization(const Eigen::VectorXd& mean, const Eigen::VectorXd& scale) {
    require(mean.size() == shape_.latent_dim && scale.size() == shape_.latent_dim, ErrorCode::ShapeMismatch,
            "latent normalization width mismatch");
    require(mean.allFinite() && scale.allFinite(), ErrorCode::BadParam, "latent normalization must be finite");
    latent_mean_ = mean;
    latent_scale_ = scale;
  }
  const Eigen::VectorXd& latent_mean() const noexcept { return latent_mean_; }
  const Eigen::VectorXd& latent_scale() const noexcept { return latent_scale_; }

  Eigen::MatrixXd normalize_latents(const Eigen::MatrixXd& latents) const {
    require(latents.rows() == shape_.latent_dim, ErrorCode::ShapeMismatch, "latent width mismatch");
    return (latents.colwise() - latent_mean_).array().colwise() * latent_scale_.array();
  }

  const MatcherShape& shape() const noexcept { return shape_; }
  double temperature() const noexcept { return tau_; }
  const std::vector<double>& parameters() const noexcept { return params_; }
  std::vector<double>& mutable_parameters() noexcept { return params_; }

  ConstMap text_weight() const { return {params_.data() + text_w_, shape_.common_dim, shape_.text_dim}; }
  ConstVec text_bias() const { return {params_.data() + text_b_, shape_.common_dim}; }
  ConstMap flow_weight() const { return {params_.data() + flow_w_, shape_.common_dim, shape_.latent_dim}; }
  ConstVec flow_bias() const { return {params_.data() + flow_b_, shape_.common_dim}; }
  ConstMap query_weight() const { return {params_.data() + query_w_, shape_.common_dim, shape_.common_dim}; }
  ConstMap key_weight() const { return {params_.data() + key_w_, shape_.common_dim, shape_.common_dim}; }

  Eigen::VectorXd project_text(const Eigen::VectorXd& text) const {
    require(text.size() == shape_.text_dim, ErrorCode::ShapeMismatch, "text embedding width mismatch");
    return text_weight() * text + text_bias();
  }

  Eigen::MatrixXd project_flow(const Eigen::MatrixXd& latents) const {
    return project_normalized_flow(normalize_latents(latents));
  }

  /// Caption-queried attention over the projected segment set.
  Eigen::VectorXd aggregate(const Eigen::VectorXd& text, const Eigen::MatrixXd& latents) const {
    const Eigen::VectorXd c = project_text(text);
    const Eigen::MatrixXd f = project_flow(latents);
    return cross_attention(query_weight() * c, key_weight() * f, f);
  }

  /// Batch InfoNCE loss; writes d loss / d parameters into `grad` (resized to the parameter count).
  double loss_and_gradient(const std::vector<const MatchExample*>& batch, std::vector<double>& grad) const {
    const auto b = static_cast<Eigen::Index>(batch.size());
    const int dc = shape_.common_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dc));
    grad.assign(params_.size(), 0.0);

    struct Cache {
      Eigen::VectorXd c, q, a;
      Eigen::MatrixXd z, f, k;
    };
    std::vector<Cache> cache(batch.size());
    Eigen::MatrixXd texts(dc, b), aggs(dc, b);
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto& ex = *batch[static_cast<std::size_t>(i)];
      require(ex.latents.cols() >= 1, ErrorCode::BadParam, "empty segment set");
      auto& s = cache[static_cast<std::size_t>(i)];
      s.c = project_text(ex.text);
      s.z = normalize_latents(ex.latents);
      s.f = project_normalized_flow(s.z);
      s.q = query_weight() * s.c;
      s.k = key_weight() * s.f;
      auto att = cross_attention_weights(s.q, s.k, s.f);
      s.a = std::move(att.weights);
      texts.col(i) = s.c;
      aggs.col(i) = att.output;
    }
    const auto nce = infonce_loss(texts, aggs, tau_);

    Map gtw(grad.data() + text_w_, dc, shape_.text_dim);
    Eigen::Map<Eigen::VectorXd> gtb(grad.data() + text_b_, dc);
    Map gfw(grad.data() + flow_w_, dc, shape_.latent_dim);
    Eigen::Map<Eigen::VectorXd> gfb(grad.data() + flow_b_, dc);
    Map gqw(grad.data() + query_w_, dc, dc);
    Map gkw(grad.data() + key_w_, dc, dc);
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto& ex = *batch[static_cast<std::size_t>(i)];
      const auto& s = cache[static_cast<std::size_t>(i)];
      const Eigen::VectorXd dg = nce.d_flow.col(i);
      Eigen::MatrixXd df = dg * s.a.transpose();
      const Eigen::VectorXd da = s.f.transpose() * dg;
      const Eigen::VectorXd dl = s.a.cwiseProduct((da.array() - s.a.dot(da)).matrix());
      const Eigen::VectorXd dq = scale * (s.k * dl);
      const Eigen::MatrixXd dk = scale * (s.q * dl.transpose());
      df.noalias() += key_weight().transpose() * dk;
      gkw.noalias() += dk * s.f.transpose();
      gqw.noalias() += dq * s.c.transpose();
      const Eigen::VectorXd dcv = nce.d_text.col(i) + query_weight().transpose() * dq;
      gfw.noalias() += df * s.z.transpose();
      gfb += df.rowwise().sum();
      gtw.noalias() += dcv * ex.text.transpose();
      gtb += dcv;
    }
    return nce.loss;
  }

  double loss(const std::vector<const MatchExample*>& batch) const {
    std::vector<double> g;
    return loss_and_gradient(batch, g);
  }

 private:
  Eigen::MatrixXd project_normalized_flow(const Eigen::MatrixXd& z) const {
    return (flow_weight() * z).colwise() + Eigen::VectorXd(flow_bias());
  }

  void init_layout() {
    shape_.validate();
    require(tau_ > 0, ErrorCode::BadParam, "temperature must be positive");
    const auto c = static_cast<std::size_t>(shape_.common_dim);
    std::size_t off = 0;
    text_w_ = off, off += c * static_cast<std::size_t>(shape_.text_dim);
    text_b_ = off, off += c;
    flow_w_ = off, off += c * static_cast<std::size_t>(shape_.latent_dim);
    flow_b_ = off, off += c;
    query_w_ = off, off += c * c;
    key_w_ = off, off += c * c;
    params_.assign(off, 0.0);
    latent_mean_ = Eigen::VectorXd::Zero(shape_.latent_dim);
    latent_scale_ = Eigen::VectorXd::Ones(shape_.latent_dim);
  }

  MatcherShape shape_;
  double tau_;
  std::vector<double> params_;
  Eigen::VectorXd latent_mean_, latent_scale_;
  std::size_t text_w_ = 0, text_b_ = 0, flow_w_ = 0, flow_b_ = 0, query_w_ = 0, key_w_ = 0;
};

// ---------------------------------------------------------------------------

struct MatcherTrainConfig {
  int epochs = 100;
  int batch = 16;
  double lr = 1e-3;
  double temperature = 0.07;
  double weight_decay = 0.0;
  int common_dim = 128;
  std::uint64_t seed = 0;
  /// Called after each epoch with the 1-based epoch number and its mean loss.
  std::function<void(int epoch, double loss)> on_epoch;
};

struct MatcherTrainResult {
  MatcherModel model;
  /// Mean batch loss of the untrained model over the evaluation batching.
  double initial_loss = 0.0;
  /// Same measure after each epoch.
  std::vector<double> epoch_loss;
};

namespace detail {

inline std::vector<std::vector<const MatchExample*>> fixed_batches(const std::vector<MatchExample>& data,
                                                                   const std::vector<std::size_t>& order, int batch) {
  std::vector<std::vector<const MatchExample*>> out;
  for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(batch)) {
    std::vector<const MatchExample*> b;
    for (std::size_t i = s; i < std::min(order.size(), s + static_cast<std::size_t>(batch)); ++i)
      b.push_back(&data[order[i]]);
    if (b.size() >= 2) out.push_back(std::move(b));
  }
  return out;
}

inline double mean_loss(const MatcherModel& m, const std::vector<std::vector<const MatchExample*>>& batches) {
  double total = 0.0;
  for (const auto& b : batches) total += m.loss(b);
  return total / static_cast<double>(batches.size());
}

}  // namespace detail

/// Contrastive training on precomputed caption embeddings and segment latents.
/// `captions` holds one string per example and is only used to require two distinct captions.
inline MatcherTrainResult train_matcher_on_latents(const std::vector<MatchExample>& data,
                                                   const std::vector<std::string>& captions,
                                                   const MatcherTrainConfig& cfg) {
  require(data.size() == captions.size(), ErrorCode::ShapeMismatch, "one caption per example required");
  require(std::set<std::string>(captions.begin(), captions.end()).size() >= 2, ErrorCode::BadParam,
          "matcher training needs at least two distinct captions");
  require(cfg.epochs >= 1 && cfg.batch >= 2 && cfg.lr > 0, ErrorCode::BadParam, "bad matcher training config");
  MatcherShape shape{static_cast<int>(data.front().text.size()), static_cast<int>(data.front().latents.rows()),
                     cfg.common_dim};
  for (const auto& ex : data)
    require(ex.text.size() == shape.text_dim && ex.latents.rows() == shape.latent_dim && ex.latents.cols() >= 1,
            ErrorCode::ShapeMismatch, "inconsistent training example");

  std::mt19937_64 rng(cfg.seed);
  MatcherTrainResult r{MatcherModel(shape, rng(), cfg.temperature), 0.0, {}};
  {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(shape.latent_dim), sq = sum;
    double n = 0;
    for (const auto& ex : data) {
      sum += ex.latents.rowwise().sum();
      sq += ex.latents.cwiseAbs2().rowwise().sum();
      n += static_cast<double>(ex.latents.cols());
    }
    const Eigen::VectorXd mean = sum / n;
    const Eigen::VectorXd var = (sq / n - mean.cwiseAbs2()).cwiseMax(0.0);
    r.model.set_latent_normalization(mean, var.cwiseSqrt().cwiseMax(1e-8).cwiseInverse());
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const auto eval_batches = detail::fixed_batches(data, order, cfg.batch);
  require(!eval_batches.empty(), ErrorCode::BadParam, "not enough examples for one batch");
  r.initial_loss = detail::mean_loss(r.model, eval_batches);

  Adam<double> opt(r.model.parameters().size(), {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  std::vector<double> grad;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (const auto& b : detail::fixed_batches(data, order, cfg.batch)) {
      r.model.loss_and_gradient(b, grad);
      opt.step(r.model.mutable_parameters(), grad);
    }
    r.epoch_loss.push_back(detail::mean_loss(r.model, eval_batches));
    if (cfg.on_epoch) cfg.on_epoch(epoch + 1, r.epoch_loss.back());
  }
  return r;
}

/// A caption and the segments it describes.
struct CaptionedSegments {
  std::string caption;
  std::vector<Segment> segments;
};

inline std::vector<MatchExample> prepare_examples(const std::vector<CaptionedSegments>& corpus,
                                                  const DaeModel& encoder, const TextEmbedder& embedder) {
  std::vector<std::string> texts;
  for (const auto& c : corpus) texts.push_back(c.caption);
  const auto emb = embedder.embed(texts);
  std::vector<MatchExample> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    require(!corpus[i].segments.empty(), ErrorCode::BadParam, "caption '" + corpus[i].caption + "' has no segments");
    const auto mats = describe_all(corpus[i].segments);
    out.push_back({emb[i].vector, encode_batch(encoder, mats)});
  }
  return out;
}

inline MatcherTrainResult train_matcher(const std::vector<CaptionedSegments>& corpus, const DaeModel& encoder,
                                        const TextEmbedder& embedder, const MatcherTrainConfig& cfg) {
  require(!corpus.empty(), ErrorCode::BadParam, "empty matcher corpus");
  std::vector<std::string> captions;
  for (const auto& c : corpus) captions.push_back(c.caption);
  return train_matcher_on_latents(prepare_examples(corpus, encoder, embedder), captions, cfg);
}

// ---------------------------------------------------------------------------
// Checkpoint: "FSMATCH\0", u32 version, u32 text_dim, u32 latent_dim, u32 common_dim, f64 temperature,
// f64 latent mean[latent_dim], f64 latent scale[latent_dim], u64 parameter count, f64 blob.

inline constexpr std::string_view kMatcherMagic{"FSMATCH\0", 8};

inline void save_matcher(const MatcherModel& m, const std::string& path) {
  io::Writer w;
  w.put_bytes(kMatcherMagic);
  w.put<std::uint32_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.shape().text_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.shape().latent_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.shape().common_dim));
  w.put<double>(m.temperature());
  w.put_span(std::span<const double>(m.latent_mean().data(), static_cast<std::size_t>(m.latent_mean().size())));
  w.put_span(std::span<const double>(m.latent_scale().data(), static_cast<std::size_t>(m.latent_scale().size())));
  w.put<std::uint64_t>(m.parameters().size());
  w.put_span(std::span<const double>(m.parameters()));
  w.save(path);
}

inline MatcherModel load_matcher(const std::string& path) {
  auto r = io::Reader::from_file(path);
  if (r.get_bytes(kMatcherMagic.size()) != kMatcherMagic) fail(ErrorCode::FormatError, "not a matcher file: " + path);
  if (r.get<std::uint32_t>() != 1) fail(ErrorCode::FormatError, "unsupported matcher version");
  MatcherShape s;
  s.text_dim = static_cast<int>(r.get<std::uint32_t>());
  s.latent_dim = static_cast<int>(r.get<std::uint32_t>());
  s.common_dim = static_cast<int>(r.get<std::uint32_t>());
  const double tau = r.get<double>();
  require(s.latent_dim >= 1 && s.latent_dim <= (1 << 20), ErrorCode::FormatError, "bad latent width");
  Eigen::VectorXd mean(s.latent_dim), scale(s.latent_dim);
  for (auto& v : mean) v = r.get<double>();
  for (auto& v : scale) v = r.get<double>();
  const auto count = r.get<std::uint64_t>();
  if (r.remaining() != count * sizeof(double)) fail(ErrorCode::FormatError, "matcher blob size mismatch");
  std::vector<double> p(count);
  for (auto& v : p) v = r.get<double>();
  MatcherModel m(s, std::move(p), tau);
  m.set_latent_normalization(mean, scale);
  return m;
}

}  // namespace flowsem
