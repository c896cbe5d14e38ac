#pragma once

#include <Eigen/Core>

#include <cctype>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "flowsem/binary_io.hpp"
#include "flowsem/error.hpp"
#include "flowsem/http_client.hpp"

namespace flowsem {

enum class EmbeddingSource : std::uint32_t { hashed_fallback = 0, external_service = 1 };

inline std::string to_string(EmbeddingSource s) {
  return s == EmbeddingSource::hashed_fallback ? "hashed_fallback" : "external_service";
}

/// Unit-length text vector.
struct TextEmbedding {
  Eigen::VectorXd vector;
  EmbeddingSource source = EmbeddingSource::hashed_fallback;
};

inline constexpr int kHashedTextDim = 256;

/// Lowercased, whitespace-collapsed, trimmed text. Throws EmptyQuery when nothing is left.
inline std::string normalize_text(std::string_view text) {
  std::string out;
  bool space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  require(!out.empty(), ErrorCode::EmptyQuery, "text is empty");
  return out;
}

/// Signed feature hashing of character trigrams of " text " into `dim` buckets, L2-normalized.
inline TextEmbedding embed_text_fallback(std::string_view text, int dim = kHashedTextDim) {
  require(dim >= 1, ErrorCode::BadParam, "embedding dim must be >= 1");
  const std::string padded = " " + normalize_text(text) + " ";
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    const std::uint64_t h = io::fnv1a(std::string_view(padded).substr(i, 3));
    v[static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim))] += (h >> 63) ? -1.0 : 1.0;
  }
  double norm = v.norm();
  if (norm == 0.0) {
    // every trigram cancelled; fall back to the whole-string bucket
    v[static_cast<Eigen::Index>(io::fnv1a(padded) % static_cast<std::uint64_t>(dim))] = 1.0;
    norm = 1.0;
  }
  return {v / norm, EmbeddingSource::hashed_fallback};
}

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual std::vector<TextEmbedding> embed(const std::vector<std::string>& texts) const = 0;
  virtual int dim() const = 0;
  virtual EmbeddingSource source() const = 0;

  TextEmbedding embed_one(const std::string& text) const { return embed({text}).front(); }
};

class HashedTrigramEmbedder final : public TextEmbedder {
 public:
  explicit HashedTrigramEmbedder(int dim = kHashedTextDim) : dim_(dim) {
    require(dim >= 1, ErrorCode::BadParam, "embedding dim must be >= 1");
  }

  std::vector<TextEmbedding> embed(const std::vector<std::string>& texts) const override {
    std::vector<TextEmbedding> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_text_fallback(t, dim_));
    return out;
  }
  int dim() const override { return dim_; }
  EmbeddingSource source() const override { return EmbeddingSource::hashed_fallback; }

 private:
  int dim_;
};

struct EmbeddingServiceConfig {
  std::string url;
  int dim = kHashedTextDim;
  double timeout_s = 30.0;
  /// Name of the environment variable holding a bearer token; empty for none.
  std::string api_key_env;
};

/// Client for an embedding service: POST {"input": [texts]} -> {"embeddings": [[...], ...]}.
/// Failures are raised, never replaced by the hashed fallback.
class EmbeddingServiceClient final : public TextEmbedder {
 public:
  explicit EmbeddingServiceClient(EmbeddingServiceConfig cfg) : cfg_(std::move(cfg)) {
    require(!cfg_.url.empty(), ErrorCode::ServiceUnavailable,
            "embedding service URL is not configured; set it or choose the hashed fallback explicitly");
    require(cfg_.dim >= 1, ErrorCode::BadParam, "embedding dim must be >= 1");
  }

  std::vector<TextEmbedding> embed(const std::vector<std::string>& texts) const override {
    for (const auto& t : texts) (void)normalize_text(t);
    http::ClientOptions opt{.timeout_s = cfg_.timeout_s, .headers = {}};
    if (!cfg_.api_key_env.empty())
      if (const char* key = std::getenv(cfg_.api_key_env.c_str()))
        opt.headers.emplace("Authorization", std::string("Bearer ") + key);
    const auto reply = http::post_json(cfg_.url, {{"input", texts}}, opt);

    require(reply.contains("embeddings") && reply["embeddings"].is_array(), ErrorCode::BadResponse,
            "embedding reply lacks an 'embeddings' array");
    const auto& rows = reply["embeddings"];
    require(rows.size() == texts.size(), ErrorCode::BadResponse, "embedding reply has the wrong row count");
    std::vector<TextEmbedding> out;
    for (const auto& row : rows) {
      require(row.is_array() && static_cast<int>(row.size()) == cfg_.dim, ErrorCode::BadResponse,
              "embedding row has the wrong width");
      Eigen::VectorXd v(cfg_.dim);
      for (int i = 0; i < cfg_.dim; ++i) {
        require(row[static_cast<std::size_t>(i)].is_number(), ErrorCode::BadResponse, "non-numeric embedding value");
        v[i] = row[static_cast<std::size_t>(i)].get<double>();
      }
      const double norm = v.norm();
      require(norm > 0 && std::isfinite(norm), ErrorCode::BadResponse, "embedding row has zero norm");
      out.push_back({v / norm, EmbeddingSource::external_service});
    }
    return out;
  }
  int dim() const override { return cfg_.dim; }
  EmbeddingSource source() const override { return EmbeddingSource::external_service; }

 private:
  EmbeddingServiceConfig cfg_;
};

inline std::unique_ptr<TextEmbedder> make_embedder(EmbeddingSource source, const EmbeddingServiceConfig& cfg = {}) {
  if (source == EmbeddingSource::hashed_fallback) return std::make_unique<HashedTrigramEmbedder>(cfg.dim);
  return std::make_unique<EmbeddingServiceClient>(cfg);
}

}  // namespace flowsem
