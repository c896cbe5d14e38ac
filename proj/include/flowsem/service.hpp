#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "flowsem/chat.hpp"
#include "flowsem/http_client.hpp"
#include "flowsem/log.hpp"
#include "flowsem/match_index.hpp"
#include "flowsem/tracer.hpp"
#include "flowsem/version.hpp"

namespace flowsem {

// ---------------------------------------------------------------------------
// configuration

/// Files the service reads. Defaults sit inside the data directory: `field.meta`/`field.vec`,
/// `streamlines.txt`, `segments.seg`, `index.fsi`; any of them may be absent.
struct DataPaths {
  std::string field, streamlines, segments, index;

  static DataPaths in_dir(const std::string& dir) {
    const std::filesystem::path d(dir);
    return {(d / "field").string(), (d / "streamlines.txt").string(), (d / "segments.seg").string(),
            (d / "index.fsi").string()};
  }
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir = ".";
  ChatConfig chat;
  EmbeddingServiceConfig embedding;
  TagMode tag_mode = TagMode::lexicon;
  std::size_t max_body_bytes = 1 << 20;
  int default_page_size = 100;
  int max_page_size = 1000;
  int max_k = 1000;
};

/// Build a config from an optional JSON file, then apply environment overrides:
/// FLOWSEM_HOST, FLOWSEM_PORT, FLOWSEM_DATA_DIR, FLOWSEM_CHAT_URL, FLOWSEM_CHAT_MODEL, FLOWSEM_EMBEDDING_URL,
/// FLOWSEM_TAG_MODE, FLOWSEM_MAX_BODY_BYTES. API keys are read from the environment at call time only.
inline ServiceConfig load_service_config(const std::string& path = "") {
  ServiceConfig cfg;
  auto bad = [](const std::string& what) { fail(ErrorCode::ConfigError, what); };
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) bad("cannot read config file " + path);
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (!j.is_object()) bad("config file " + path + " is not a JSON object");
    try {
      for (const auto& [key, v] : j.items()) {
        if (key == "host") cfg.host = v.get<std::string>();
        else if (key == "port") cfg.port = v.get<int>();
        else if (key == "data_dir") cfg.data_dir = v.get<std::string>();
        else if (key == "chat_url") cfg.chat.url = v.get<std::string>();
        else if (key == "chat_model") cfg.chat.model = v.get<std::string>();
        else if (key == "chat_timeout_s") cfg.chat.timeout_s = v.get<double>();
        else if (key == "chat_api_key_env") cfg.chat.api_key_env = v.get<std::string>();
        else if (key == "chat_context_chars") cfg.chat.context_chars = v.get<std::size_t>();
        else if (key == "embedding_url") cfg.embedding.url = v.get<std::string>();
        else if (key == "embedding_dim") cfg.embedding.dim = v.get<int>();
        else if (key == "embedding_api_key_env") cfg.embedding.api_key_env = v.get<std::string>();
        else if (key == "tag_mode") cfg.tag_mode = parse_tag_mode(v.get<std::string>());
        else if (key == "max_body_bytes") cfg.max_body_bytes = v.get<std::size_t>();
        else if (key == "default_page_size") cfg.default_page_size = v.get<int>();
        else if (key == "max_page_size") cfg.max_page_size = v.get<int>();
        else if (key == "max_k") cfg.max_k = v.get<int>();
        else bad("unknown config key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      bad(std::string("bad config value: ") + e.what());
    } catch (const Error& e) {
      bad(e.what());
    }
  }
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (!v) return std::nullopt;
    return std::string(v);
  };
  auto to_int = [&](const std::string& name, const std::string& s) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      fail(ErrorCode::ConfigError, name + " is not an integer: '" + s + "'");
    }
  };
  if (auto v = env("FLOWSEM_HOST")) cfg.host = *v;
  if (auto v = env("FLOWSEM_PORT")) cfg.port = static_cast<int>(to_int("FLOWSEM_PORT", *v));
  if (auto v = env("FLOWSEM_DATA_DIR")) cfg.data_dir = *v;
  if (auto v = env("FLOWSEM_CHAT_URL")) cfg.chat.url = *v;
  if (auto v = env("FLOWSEM_CHAT_MODEL")) cfg.chat.model = *v;
  if (auto v = env("FLOWSEM_EMBEDDING_URL")) cfg.embedding.url = *v;
  if (auto v = env("FLOWSEM_TAG_MODE")) {
    try {
      cfg.tag_mode = parse_tag_mode(*v);
    } catch (const Error& e) {
      bad(e.what());
    }
  }
  if (auto v = env("FLOWSEM_MAX_BODY_BYTES"))
    cfg.max_body_bytes = static_cast<std::size_t>(to_int("FLOWSEM_MAX_BODY_BYTES", *v));

  if (cfg.port < 0 || cfg.port > 65535) bad("port out of range: " + std::to_string(cfg.port));
  if (cfg.max_body_bytes < 64) bad("max_body_bytes must be >= 64");
  if (cfg.default_page_size < 1 || cfg.max_page_size < cfg.default_page_size) bad("bad page size limits");
  if (cfg.max_k < 1) bad("max_k must be >= 1");
  return cfg;
}

// ---------------------------------------------------------------------------
// dataset snapshot

/// Everything the read paths need, loaded once and never mutated.
struct Dataset {
  std::optional<VectorField> field;
  std::vector<Streamline> streamlines;
  std::vector<Segment> segments;
  std::unordered_map<std::int64_t, std::size_t> segment_row;
  std::optional<MatchIndex> index;
  std::uint64_t fingerprint = 0;

  static Dataset assemble(std::optional<VectorField> field, std::vector<Streamline> streamlines,
                          std::vector<Segment> segments, std::optional<MatchIndex> index) {
    Dataset d;
    d.field = std::move(field);
    d.streamlines = std::move(streamlines);
    d.segments = std::move(segments);
    d.fingerprint = segments_fingerprint(d.segments);
    for (std::size_t i = 0; i < d.segments.size(); ++i)
      if (!d.segment_row.emplace(d.segments[i].id, i).second)
        fail(ErrorCode::ConfigError, "duplicate segment id " + std::to_string(d.segments[i].id));
    if (index) {
      if (index->built_from() != d.fingerprint)
        fail(ErrorCode::ConfigError, "index was built from a different segment store (index " +
                                         io::hex64(index->built_from()) + ", store " + io::hex64(d.fingerprint) +
                                         "); rebuild it with build-index");
      d.index = std::move(index);
    }
    return d;
  }

  static Dataset load(const DataPaths& p) {
    namespace fs = std::filesystem;
    std::optional<VectorField> field;
    if (fs::exists(p.field + ".meta")) field = load_raw(p.field);
    std::vector<Streamline> lines;
    if (fs::exists(p.streamlines)) lines = load_streamlines(p.streamlines);
    std::vector<Segment> segs;
    if (fs::exists(p.segments)) segs = load_segments(p.segments);
    std::optional<MatchIndex> index;
    if (fs::exists(p.index)) index = load_index(p.index);
    if (index && segs.empty())
      fail(ErrorCode::ConfigError, "index " + p.index + " present but segment store " + p.segments + " missing");
    return assemble(std::move(field), std::move(lines), std::move(segs), std::move(index));
  }
};

inline std::vector<double> flat_points(const std::vector<Vec3>& pts) {
  std::vector<double> out;
  out.reserve(pts.size() * 3);
  for (const auto& p : pts) out.insert(out.end(), {p.x(), p.y(), p.z()});
  return out;
}

// ---------------------------------------------------------------------------
// service

/// HTTP status for a library error.
inline int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::BadParam:
    case ErrorCode::EmptyQuery:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::DegenerateSegment:
    case ErrorCode::OutOfDomain: return 400;
    case ErrorCode::EmptyIndex:
    case ErrorCode::ServiceUnavailable: return 503;
    case ErrorCode::Timeout: return 504;
    case ErrorCode::BadResponse: return 502;
    default: return 500;
  }
}

/// A reply before it hits the wire; the same object backs the HTTP handlers and in-process tests.
struct Reply {
  int status = 200;
  std::string body;
};

inline Reply json_reply(int status, const nlohmann::json& j) { return {status, j.dump()}; }

inline Reply error_reply(int status, const std::string& code, const std::string& message) {
  return json_reply(status, {{"error", code}, {"message", message}});
}

inline Reply error_reply(const Error& e) { return error_reply(http_status(e.code()), std::string(to_string(e.code())), e.what()); }

class QueryService {
 public:
  QueryService(std::shared_ptr<const Dataset> data, ServiceConfig cfg)
      : data_(std::move(data)), cfg_(std::move(cfg)) {
    require(data_ != nullptr, ErrorCode::ConfigError, "no dataset");
    if (data_->index) {
      if (data_->index->embedder_source() == EmbeddingSource::external_service) {
        if (cfg_.embedding.url.empty())
          fail(ErrorCode::ConfigError,
               "index needs the external embedding service; set embedding_url or FLOWSEM_EMBEDDING_URL");
        auto ecfg = cfg_.embedding;
        ecfg.dim = data_->index->text_dim();
        embedder_ = std::make_unique<EmbeddingServiceClient>(ecfg);
      } else {
        embedder_ = std::make_unique<HashedTrigramEmbedder>(data_->index->text_dim());
      }
    }
  }

  const ServiceConfig& config() const noexcept { return cfg_; }
  const Dataset& data() const noexcept { return *data_; }

  Reply health() const {
    return json_reply(200, {{"status", "ok"},
                            {"version", std::string(kVersion)},
                            {"dataset_fingerprint", io::hex64(data_->fingerprint)},
                            {"segments", data_->segments.size()},
                            {"streamlines", data_->streamlines.size()},
                            {"index_size", data_->index ? data_->index->size() : 0},
                            {"has_field", data_->field.has_value()},
                            {"embedder", data_->index ? to_string(data_->index->embedder_source()) : "none"}});
  }

  Reply field() const {
    if (!data_->field) return error_reply(404, "NotFound", "no field loaded");
    const auto& f = *data_->field;
    const auto& b = f.bounds();
    return json_reply(200, {{"dims", f.dims()},
                            {"bounds", {{"min", {b.lo.x(), b.lo.y(), b.lo.z()}}, {"max", {b.hi.x(), b.hi.y(), b.hi.z()}}}},
                            {"nodes", f.node_count()},
                            {"components", 3}});
  }

  Reply streamlines(const std::string& page_s, const std::string& size_s) const {
    long long page = 0, size = cfg_.default_page_size;
    if (!parse_int(page_s, page, 0) || !parse_int(size_s, size, cfg_.default_page_size))
      return error_reply(400, "BadParam", "page and page_size must be integers");
    if (page < 0 || size < 1 || size > cfg_.max_page_size)
      return error_reply(400, "BadParam",
                         "need page >= 0 and 1 <= page_size <= " + std::to_string(cfg_.max_page_size));
    const auto total = static_cast<long long>(data_->streamlines.size());
    nlohmann::json lines = nlohmann::json::array();
    for (long long i = page * size; i < std::min(total, (page + 1) * size); ++i) {
      const auto& s = data_->streamlines[static_cast<std::size_t>(i)];
      lines.push_back({{"id", s.seed_id}, {"points", flat_points(s.points)}});
    }
    return json_reply(200, {{"page", page},
                            {"page_size", size},
                            {"total", total},
                            {"pages", (total + size - 1) / size},
                            {"streamlines", lines}});
  }

  Reply segment(std::int64_t id) const {
    const auto it = data_->segment_row.find(id);
    if (it == data_->segment_row.end()) return error_reply(404, "NotFound", "no segment " + std::to_string(id));
    return json_reply(200, segment_to_json(data_->segments[it->second]));
  }

  /// Pure function of (dataset, text, k): same request, same bytes.
  Reply query(const std::string& body) const {
    const auto j = nlohmann::json::parse(body, nullptr, false);
    if (!j.is_object()) return error_reply(400, "BadParam", "body must be a JSON object");
    if (!j.contains("text") || !j["text"].is_string()) return error_reply(400, "BadParam", "'text' must be a string");
    long long k = 10;
    if (j.contains("k")) {
      if (!j["k"].is_number_integer()) return error_reply(400, "BadParam", "'k' must be an integer");
      k = j["k"].get<long long>();
    }
    if (k < 1 || k > cfg_.max_k)
      return error_reply(400, "BadParam", "k must be in [1, " + std::to_string(cfg_.max_k) + "]");
    const auto text = j["text"].get<std::string>();
    try {
      (void)normalize_text(text);
      if (!data_->index) fail(ErrorCode::EmptyIndex, "no match index loaded; run build-index");
      const auto hits = flowsem::query(*data_->index, *embedder_, text, static_cast<int>(k));
      nlohmann::json results = nlohmann::json::array();
      for (const auto& h : hits) {
        const auto& seg = data_->segments[data_->segment_row.at(h.segment_id)];
        results.push_back({{"rank", h.rank},
                           {"score", h.score},
                           {"segment_id", h.segment_id},
                           {"streamline_id", seg.streamline_id},
                           {"level", seg.level},
                           {"points", flat_points(seg.points)}});
      }
      return json_reply(200, {{"text", text},
                              {"k", k},
                              {"dataset_fingerprint", io::hex64(data_->fingerprint)},
                              {"results", results}});
    } catch (const Error& e) {
      return error_reply(e);
    }
  }

  /// Append a user message, relay the session history, append the reply. A failed relay leaves history as it was.
  Reply chat_turn(const std::string& body) {
    const auto j = nlohmann::json::parse(body, nullptr, false);
    if (!j.is_object() || !j.contains("message") || !j["message"].is_string())
      return error_reply(400, "BadParam", "body must be {\"message\": string}");
    ChatTurn user{ChatRole::user, j["message"].get<std::string>(), {}};
    if (user.text.find_first_not_of(" \t\r\n") == std::string::npos)
      return error_reply(400, "EmptyQuery", "message is empty");
    if (j.contains("tags") && j["tags"].is_array())
      for (const auto& t : j["tags"])
        if (t.is_string()) user.attached_tags.push_back(t.get<std::string>());

    std::vector<ChatTurn> history;
    {
      std::lock_guard lock(session_mu_);
      history = history_;
    }
    history.push_back(user);
    try {
      // relay outside the lock: queries and tag reads never wait on the endpoint
      const auto reply = flowsem::chat(history, cfg_.chat);
      std::lock_guard lock(session_mu_);
      history_.push_back(user);
      history_.push_back(reply);
      return json_reply(200, {{"turn", to_json(reply)},
                              {"turn_index", history_.size() - 1},
                              {"history_length", history_.size()}});
    } catch (const Error& e) {
      return error_reply(e);
    }
  }

  Reply tags() const {
    std::lock_guard lock(session_mu_);
    return json_reply(200, {{"tags", tags_json(tag_set_.tags())}});
  }

  /// Extract tags from `text` (or the latest assistant turn) and merge them into the session set.
  Reply extract_and_merge(const std::string& body) {
    const auto j = body.empty() ? nlohmann::json::object() : nlohmann::json::parse(body, nullptr, false);
    if (!j.is_object()) return error_reply(400, "BadParam", "body must be a JSON object");
    TagMode mode = cfg_.tag_mode;
    try {
      if (j.contains("mode")) mode = parse_tag_mode(j.at("mode").get<std::string>());
    } catch (const std::exception& e) {
      return error_reply(400, "BadParam", e.what());
    }
    ChatTurn turn{ChatRole::assistant, "", {}};
    int turn_index = -1;
    if (j.contains("text")) {
      if (!j["text"].is_string()) return error_reply(400, "BadParam", "'text' must be a string");
      turn.text = j["text"].get<std::string>();
      if (j.contains("turn_index") && j["turn_index"].is_number_integer()) turn_index = j["turn_index"].get<int>();
    } else {
      std::lock_guard lock(session_mu_);
      for (int i = static_cast<int>(history_.size()) - 1; i >= 0; --i)
        if (history_[static_cast<std::size_t>(i)].role == ChatRole::assistant) {
          turn = history_[static_cast<std::size_t>(i)];
          turn_index = i;
          break;
        }
      if (turn_index < 0) return error_reply(400, "BadParam", "no 'text' given and no assistant turn yet");
    }
    try {
      const auto found = extract_tags(turn, turn_index, mode, cfg_.chat);
      std::lock_guard lock(session_mu_);
      const auto added = tag_set_.merge(found);
      return json_reply(200, {{"added", tags_json(added)}, {"tags", tags_json(tag_set_.tags())}});
    } catch (const Error& e) {
      return error_reply(e);
    }
  }

  std::vector<ChatTurn> history() const {
    std::lock_guard lock(session_mu_);
    return history_;
  }

 private:
  static bool parse_int(const std::string& s, long long& out, long long fallback) {
    if (s.empty()) {
      out = fallback;
      return true;
    }
    try {
      std::size_t used = 0;
      out = std::stoll(s, &used);
      return used == s.size();
    } catch (const std::exception&) {
      return false;
    }
  }

  static nlohmann::json tags_json(const std::vector<TagConcept>& tags) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& t : tags) a.push_back(to_json(t));
    return a;
  }

  std::shared_ptr<const Dataset> data_;
  ServiceConfig cfg_;
  std::unique_ptr<TextEmbedder> embedder_;
  mutable std::mutex session_mu_;
  std::vector<ChatTurn> history_;
  TagSet tag_set_;
};

/// Wire the service's routes, body limit and request log into an httplib server.
inline void install_routes(httplib::Server& srv, QueryService& svc) {
  auto send = [](httplib::Response& res, const Reply& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  srv.set_payload_max_length(svc.config().max_body_bytes);
  srv.Get("/health", [&, send](const httplib::Request&, httplib::Response& res) { send(res, svc.health()); });
  srv.Get("/field", [&, send](const httplib::Request&, httplib::Response& res) { send(res, svc.field()); });
  srv.Get("/streamlines", [&, send](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.streamlines(req.get_param_value("page"), req.get_param_value("page_size")));
  });
  srv.Get(R"(/segments/(-?\d+))", [&, send](const httplib::Request& req, httplib::Response& res) {
    try {
      send(res, svc.segment(std::stoll(req.matches[1].str())));
    } catch (const std::out_of_range&) {
      send(res, error_reply(404, "NotFound", "segment id out of range"));
    }
  });
  srv.Post("/query", [&, send](const httplib::Request& req, httplib::Response& res) { send(res, svc.query(req.body)); });
  srv.Post("/chat", [&, send](const httplib::Request& req, httplib::Response& res) { send(res, svc.chat_turn(req.body)); });
  srv.Get("/tags", [&, send](const httplib::Request&, httplib::Response& res) { send(res, svc.tags()); });
  srv.Post("/tags", [&, send](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.extract_and_merge(req.body));
  });
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const std::string code = res.status == 413 ? "PayloadTooLarge" : res.status == 404 ? "NotFound" : "HttpError";
    res.set_content(nlohmann::json{{"error", code}, {"message", "HTTP " + std::to_string(res.status)}}.dump(),
                    "application/json");
  });
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(nlohmann::json{{"error", "Internal"}, {"message", what}}.dump(), "application/json");
  });
  srv.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    log::info("http.request", {{"method", req.method},
                               {"path", req.path},
                               {"status", res.status},
                               {"request_bytes", req.body.size()},
                               {"response_bytes", res.body.size()},
                               {"remote", req.remote_addr}});
  });
}

/// Owns the HTTP server for one service. `bind()` then `run()` (blocking) until `stop()` from any thread.
class ServiceHost {
 public:
  explicit ServiceHost(QueryService& svc) : svc_(svc) {
    install_routes(srv_, svc_);
    // httplib's default also sets SO_REUSEPORT, which lets a second process share a busy port silently
    srv_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
  }

  /// Bind the configured host/port (port 0 picks a free one) and return the bound port.
  int bind() {
    const auto& c = svc_.config();
    if (c.port == 0) {
      port_ = srv_.bind_to_any_port(c.host);
      if (port_ < 0) fail(ErrorCode::BindError, "cannot bind " + c.host + " on any port");
    } else {
      if (!srv_.bind_to_port(c.host, c.port))
        fail(ErrorCode::BindError, "cannot bind " + c.host + ":" + std::to_string(c.port));
      port_ = c.port;
    }
    return port_;
  }

  void run() {
    log::info("service.start", {{"host", svc_.config().host}, {"port", port_}});
    srv_.listen_after_bind();
    log::info("service.stop", {{"port", port_}});
  }

  void stop() { srv_.stop(); }
  void wait_until_ready() { srv_.wait_until_ready(); }
  int port() const noexcept { return port_; }

 private:
  QueryService& svc_;
  httplib::Server srv_;
  int port_ = -1;
};

}  // namespace flowsem
