#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "flowsem/binary_io.hpp"
#include "flowsem/dae.hpp"
#include "flowsem/descriptor.hpp"
#include "flowsem/error.hpp"
#include "flowsem/matcher.hpp"
#include "flowsem/text_embedding.hpp"

namespace flowsem {

struct MatchResult {
  std::int64_t segment_id = -1;
  double score = 0.0;
  int rank = 0;

  bool operator==(const MatchResult&) const = default;
};

/// Pre-encoded, immutable store of unit-length shared-space segment embeddings.
///
/// The text projection of the matcher travels with the index (f32, like the embeddings), so a query needs
/// nothing but the index and an embedder of the recorded source and width.
class MatchIndex {
 public:
  MatchIndex() = default;

  MatchIndex(std::vector<std::int64_t> ids, std::vector<float> embeddings, int common_dim, Eigen::MatrixXf text_w,
             Eigen::VectorXf text_b, EmbeddingSource source, std::uint64_t built_from)
      : ids_(std::move(ids)),
        emb_(std::move(embeddings)),
        dim_(common_dim),
        text_w_(std::move(text_w)),
        text_b_(std::move(text_b)),
        source_(source),
        built_from_(built_from) {
    require(dim_ >= 1, ErrorCode::BadParam, "index width must be >= 1");
    require(emb_.size() == ids_.size() * static_cast<std::size_t>(dim_), ErrorCode::ShapeMismatch,
            "embedding blob does not match id count");
    require(text_w_.rows() == dim_ && text_b_.size() == dim_, ErrorCode::ShapeMismatch,
            "text projection does not match index width");
    std::unordered_set<std::int64_t> seen;
    for (auto id : ids_) require(seen.insert(id).second, ErrorCode::BadParam, "duplicate segment id in index");
  }

  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  int common_dim() const noexcept { return dim_; }
  int text_dim() const noexcept { return static_cast<int>(text_w_.cols()); }
  EmbeddingSource embedder_source() const noexcept { return source_; }
  std::uint64_t built_from() const noexcept { return built_from_; }
  const std::vector<std::int64_t>& ids() const noexcept { return ids_; }
  const std::vector<float>& embeddings() const noexcept { return emb_; }
  const Eigen::MatrixXf& text_weight() const noexcept { return text_w_; }
  const Eigen::VectorXf& text_bias() const noexcept { return text_b_; }

  std::span<const float> embedding(std::size_t row) const {
    return {emb_.data() + row * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
  }

  /// Unit query vector in the shared space.
  Eigen::VectorXd query_vector(const TextEmbedding& text) const {
    require(text.vector.size() == text_dim(), ErrorCode::ShapeMismatch, "text embedding width does not match index");
    require(text.source == source_, ErrorCode::BadParam,
            "index was built for " + to_string(source_) + " text embeddings, got " + to_string(text.source));
    Eigen::VectorXd q = text_w_.cast<double>() * text.vector + text_b_.cast<double>();
    const double norm = q.norm();
    require(norm > 0 && std::isfinite(norm), ErrorCode::BadParam, "query projects to a zero vector");
    return q / norm;
  }

  /// Cosine of `q` with every entry: a sequential double-precision dot product per row.
  std::vector<double> scores(const Eigen::VectorXd& q) const {
    require(q.size() == dim_, ErrorCode::ShapeMismatch, "query width does not match index");
    std::vector<double> out(size());
    for (std::size_t r = 0; r < size(); ++r) {
      const float* e = emb_.data() + r * static_cast<std::size_t>(dim_);
      double s = 0.0;
      for (int k = 0; k < dim_; ++k) s += q[k] * static_cast<double>(e[k]);
      out[r] = s;
    }
    return out;
  }

  /// Exact top-k, ties by ascending segment id. Partial sort over the full score list.
  std::vector<MatchResult> top_k(const Eigen::VectorXd& q, int k) const {
    require(k >= 1, ErrorCode::BadParam, "k must be >= 1");
    require(!empty(), ErrorCode::EmptyIndex, "index is empty");
    const auto s = scores(q);
    std::vector<std::size_t> order(size());
    std::iota(order.begin(), order.end(), 0);
    const auto take = std::min(order.size(), static_cast<std::size_t>(k));
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(take), order.end(),
                      [&](std::size_t a, std::size_t b) { return better(s, a, b); });
    return package(s, order, take);
  }

  /// Reference path: stable full sort of every entry.
  std::vector<MatchResult> top_k_exhaustive(const Eigen::VectorXd& q, int k) const {
    require(k >= 1, ErrorCode::BadParam, "k must be >= 1");
    require(!empty(), ErrorCode::EmptyIndex, "index is empty");
    const auto s = scores(q);
    std::vector<std::size_t> order(size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return better(s, a, b); });
    return package(s, order, std::min(order.size(), static_cast<std::size_t>(k)));
  }

 private:
  bool better(const std::vector<double>& s, std::size_t a, std::size_t b) const {
    if (s[a] != s[b]) return s[a] > s[b];
    return ids_[a] < ids_[b];
  }

  std::vector<MatchResult> package(const std::vector<double>& s, const std::vector<std::size_t>& order,
                                   std::size_t take) const {
    std::vector<MatchResult> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back({ids_[order[i]], s[order[i]], static_cast<int>(i) + 1});
    return out;
  }

  std::vector<std::int64_t> ids_;
  std::vector<float> emb_;
  int dim_ = 0;
  Eigen::MatrixXf text_w_;
  Eigen::VectorXf text_b_;
  EmbeddingSource source_ = EmbeddingSource::hashed_fallback;
  std::uint64_t built_from_ = 0;
};

/// Encode every segment (descriptor, latent, flow projection, normalize) into an index.
inline MatchIndex build_index(std::span<const Segment> segments, const DaeModel& encoder, const MatcherModel& matcher,
                              EmbeddingSource source = EmbeddingSource::hashed_fallback) {
  require(encoder.latent_dim() == matcher.shape().latent_dim, ErrorCode::ShapeMismatch,
          "encoder latent width does not match the matcher");
  const int dc = matcher.shape().common_dim;
  std::vector<std::int64_t> ids;
  ids.reserve(segments.size());
  for (const auto& s : segments) ids.push_back(s.id);
  std::vector<float> emb(segments.size() * static_cast<std::size_t>(dc));
  constexpr std::size_t chunk = 1024;
  for (std::size_t start = 0; start < segments.size(); start += chunk) {
    const std::size_t end = std::min(segments.size(), start + chunk);
    const auto mats = describe_all(segments.subspan(start, end - start));
    const Eigen::MatrixXd f = matcher.project_flow(encode_batch(encoder, mats));
    for (Eigen::Index c = 0; c < f.cols(); ++c) {
      const double norm = f.col(c).norm();
      require(norm > 0 && std::isfinite(norm), ErrorCode::BadParam, "segment projects to a zero vector");
      for (int k = 0; k < dc; ++k)
        emb[(start + static_cast<std::size_t>(c)) * static_cast<std::size_t>(dc) + static_cast<std::size_t>(k)] =
            static_cast<float>(f(k, c) / norm);
    }
  }
  return MatchIndex(std::move(ids), std::move(emb), dc, Eigen::MatrixXf(matcher.text_weight().cast<float>()),
                    Eigen::VectorXf(matcher.text_bias().cast<float>()), source, segments_fingerprint(segments));
}

inline std::vector<MatchResult> query(const MatchIndex& index, const TextEmbedder& embedder, const std::string& text,
                                      int k) {
  require(k >= 1, ErrorCode::BadParam, "k must be >= 1");
  (void)normalize_text(text);
  require(!index.empty(), ErrorCode::EmptyIndex, "index is empty");
  return index.top_k(index.query_vector(embedder.embed_one(text)), k);
}

// ---------------------------------------------------------------------------
// File: "FSINDEX\0", u32 version, u32 embedder source, u32 text_dim, u32 common_dim, u64 built_from, u64 count,
// i64 ids[count], f32 embeddings[count * common_dim], f32 text weight[common_dim * text_dim] (row-major),
// f32 text bias[common_dim]. All little-endian.

inline constexpr std::string_view kIndexMagic{"FSINDEX\0", 8};

inline void save_index(const MatchIndex& index, const std::string& path) {
  io::Writer w;
  w.put_bytes(kIndexMagic);
  w.put<std::uint32_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.embedder_source()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.text_dim()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.common_dim()));
  w.put<std::uint64_t>(index.built_from());
  w.put<std::uint64_t>(index.size());
  w.put_span(std::span<const std::int64_t>(index.ids()));
  w.put_span(std::span<const float>(index.embeddings()));
  for (int r = 0; r < index.common_dim(); ++r)
    for (int c = 0; c < index.text_dim(); ++c) w.put<float>(index.text_weight()(r, c));
  for (int r = 0; r < index.common_dim(); ++r) w.put<float>(index.text_bias()[r]);
  w.save(path);
}

inline MatchIndex load_index(const std::string& path) {
  auto r = io::Reader::from_file(path);
  if (r.get_bytes(kIndexMagic.size()) != kIndexMagic) fail(ErrorCode::FormatError, "not an index file: " + path);
  if (r.get<std::uint32_t>() != 1) fail(ErrorCode::FormatError, "unsupported index version");
  const auto source = r.get<std::uint32_t>();
  if (source > 1) fail(ErrorCode::FormatError, "unknown embedder source");
  const auto dt = r.get<std::uint32_t>();
  const auto dc = r.get<std::uint32_t>();
  const auto built_from = r.get<std::uint64_t>();
  const auto n = r.get<std::uint64_t>();
  if (dt == 0 || dc == 0 || dt > (1u << 20) || dc > (1u << 20)) fail(ErrorCode::FormatError, "bad index widths");
  const std::uint64_t expect = n * 8 + n * dc * 4 + std::uint64_t{dc} * dt * 4 + std::uint64_t{dc} * 4;
  if (r.remaining() != expect) fail(ErrorCode::FormatError, "index payload size mismatch");
  std::vector<std::int64_t> ids(n);
  for (auto& id : ids) id = r.get<std::int64_t>();
  std::vector<float> emb(n * dc);
  for (auto& v : emb) v = r.get<float>();
  Eigen::MatrixXf tw(dc, dt);
  for (std::uint32_t i = 0; i < dc; ++i)
    for (std::uint32_t j = 0; j < dt; ++j) tw(i, j) = r.get<float>();
  Eigen::VectorXf tb(dc);
  for (auto& v : tb) v = r.get<float>();
  return MatchIndex(std::move(ids), std::move(emb), static_cast<int>(dc), std::move(tw), std::move(tb),
                    static_cast<EmbeddingSource>(source), built_from);
}

}  // namespace flowsem
