#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "flowsem/error.hpp"
#include "flowsem/http_client.hpp"
#include "flowsem/log.hpp"

namespace flowsem {

enum class ChatRole { system, user, assistant };

inline std::string to_string(ChatRole r) {
  switch (r) {
    case ChatRole::system: return "system";
    case ChatRole::user: return "user";
    case ChatRole::assistant: return "assistant";
  }
  return "user";
}

inline ChatRole parse_chat_role(const std::string& s) {
  if (s == "system") return ChatRole::system;
  if (s == "user") return ChatRole::user;
  if (s == "assistant") return ChatRole::assistant;
  fail(ErrorCode::BadParam, "unknown chat role '" + s + "'");
}

struct ChatTurn {
  ChatRole role = ChatRole::user;
  std::string text;
  std::vector<std::string> attached_tags;

  void validate() const {
    if (role != ChatRole::system)
      require(text.find_first_not_of(" \t\r\n") != std::string::npos, ErrorCode::BadParam,
              to_string(role) + " turn has empty text");
  }

  bool operator==(const ChatTurn&) const = default;
};

inline nlohmann::json to_json(const ChatTurn& t) {
  return {{"role", to_string(t.role)}, {"text", t.text}, {"attached_tags", t.attached_tags}};
}

struct ChatConfig {
  /// Chat-completions URL, e.g. http://localhost:8000/v1/chat/completions. Empty means not configured.
  std::string url;
  std::string model = "gpt-4o";
  double timeout_s = 60.0;
  /// Environment variable holding the bearer token; unset or empty sends no Authorization header.
  std::string api_key_env = "FLOWSEM_CHAT_API_KEY";
  /// Character budget for the relayed history (system turns always kept).
  std::size_t context_chars = 24000;
  double temperature = 0.2;
};

/// Drop the oldest non-system turns until the total text length fits `budget` characters.
///
/// System turns are never dropped and neither is the newest turn, so the result can still exceed the
/// budget when those alone do.
inline std::vector<ChatTurn> trim_history(const std::vector<ChatTurn>& history, std::size_t budget) {
  std::size_t total = 0;
  for (const auto& t : history) total += t.text.size();
  std::vector<bool> keep(history.size(), true);
  for (std::size_t i = 0; i + 1 < history.size() && total > budget; ++i) {
    if (history[i].role == ChatRole::system) continue;
    keep[i] = false;
    total -= history[i].text.size();
  }
  std::vector<ChatTurn> out;
  for (std::size_t i = 0; i < history.size(); ++i)
    if (keep[i]) out.push_back(history[i]);
  return out;
}

namespace detail {

inline http::ClientOptions chat_client_options(const ChatConfig& cfg) {
  http::ClientOptions opt;
  opt.timeout_s = cfg.timeout_s;
  if (!cfg.api_key_env.empty())
    if (const char* key = std::getenv(cfg.api_key_env.c_str()); key && *key)
      opt.headers["Authorization"] = std::string("Bearer ") + key;
  return opt;
}

inline std::string completion_text(const nlohmann::json& reply) {
  try {
    const auto& content = reply.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) fail(ErrorCode::BadResponse, "chat reply content is not a string");
    return content.get<std::string>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::BadResponse, "chat reply lacks choices[0].message.content");
  }
}

}  // namespace detail

/// Relay `history` to a chat-completions endpoint and return the assistant's reply as a new turn.
inline ChatTurn chat(const std::vector<ChatTurn>& history, const ChatConfig& cfg) {
  require(!cfg.url.empty(), ErrorCode::ServiceUnavailable,
          "no chat endpoint configured; set chat_url in the config file or FLOWSEM_CHAT_URL");
  require(!history.empty(), ErrorCode::BadParam, "chat history is empty");
  for (const auto& t : history) t.validate();

  const auto trimmed = trim_history(history, cfg.context_chars);
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& t : trimmed) messages.push_back({{"role", to_string(t.role)}, {"content", t.text}});
  const nlohmann::json body{
      {"model", cfg.model}, {"messages", messages}, {"temperature", cfg.temperature}, {"stream", false}};

  log::info("chat.request", {{"url", cfg.url}, {"turns", trimmed.size()}, {"dropped", history.size() - trimmed.size()},
                             {"last", trimmed.back().text.substr(0, 200)}});
  try {
    const auto reply = http::post_json(cfg.url, body, detail::chat_client_options(cfg));
    ChatTurn out{ChatRole::assistant, detail::completion_text(reply), {}};
    log::info("chat.response", {{"chars", out.text.size()}, {"text", out.text.substr(0, 200)}});
    return out;
  } catch (const Error& e) {
    log::warn("chat.error", {{"code", std::string(to_string(e.code()))}, {"message", e.what()}});
    throw;
  }
}

// ---------------------------------------------------------------------------
// key-concept tags

struct TagConcept {
  std::string name;
  int source_turn = -1;
  std::string query_text;

  bool operator==(const TagConcept&) const = default;
};

inline nlohmann::json to_json(const TagConcept& t) {
  return {{"name", t.name}, {"source_turn", t.source_turn}, {"query_text", t.query_text}};
}

enum class TagMode { lexicon, llm };

inline TagMode parse_tag_mode(const std::string& s) {
  if (s == "lexicon") return TagMode::lexicon;
  if (s == "llm") return TagMode::llm;
  fail(ErrorCode::BadParam, "unknown tag mode '" + s + "' (lexicon|llm)");
}

inline const std::vector<std::string>& flow_lexicon() {
  static const std::vector<std::string> phrases{"vortex", "laminar flow", "turbulence", "jet stream", "circulation",
                                                "eddy",   "advection",    "saddle",     "spiral",     "shear"};
  return phrases;
}

inline std::string lowercase(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

/// Lexicon phrases found in `text`, scanning left to right and preferring the longest phrase at each
/// position. Matches must sit on word boundaries. Each phrase is reported once, in order of first hit.
inline std::vector<std::string> match_lexicon(const std::string& text,
                                              const std::vector<std::string>& lexicon = flow_lexicon()) {
  std::vector<std::string> phrases;
  for (const auto& p : lexicon) phrases.push_back(lowercase(p));
  std::stable_sort(phrases.begin(), phrases.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });
  const std::string low = lowercase(text);
  auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };

  std::vector<std::string> found;
  std::size_t i = 0;
  while (i < low.size()) {
    if (i > 0 && is_word(low[i - 1])) {
      ++i;
      continue;
    }
    std::size_t advance = 1;
    for (const auto& p : phrases) {
      if (p.empty() || low.compare(i, p.size(), p) != 0) continue;
      const std::size_t end = i + p.size();
      if (end < low.size() && is_word(low[end])) continue;
      if (std::find(found.begin(), found.end(), p) == found.end()) found.push_back(p);
      advance = p.size();
      break;
    }
    i += advance;
  }
  return found;
}

inline const std::string& tag_extraction_instruction() {
  static const std::string text =
      "Extract the flow-related key concepts (for example vortex, laminar flow, jet stream) from the user "
      "message. Reply with only a JSON array of short lowercase phrases, at most 8, and [] if there are none.";
  return text;
}

/// Parse the model's reply to the extraction instruction: a JSON array of strings, possibly fenced.
inline std::vector<std::string> parse_tag_reply(const std::string& reply) {
  const auto lo = reply.find('['), hi = reply.rfind(']');
  require(lo != std::string::npos && hi != std::string::npos && hi > lo, ErrorCode::BadResponse,
          "tag reply holds no JSON array");
  const auto arr = nlohmann::json::parse(reply.substr(lo, hi - lo + 1), nullptr, false);
  require(arr.is_array(), ErrorCode::BadResponse, "tag reply array does not parse");
  std::vector<std::string> out;
  for (const auto& v : arr) {
    require(v.is_string(), ErrorCode::BadResponse, "tag reply holds a non-string entry");
    auto s = v.get<std::string>();
    const auto b = s.find_first_not_of(" \t\r\n"), e = s.find_last_not_of(" \t\r\n");
    if (b != std::string::npos) out.push_back(s.substr(b, e - b + 1));
  }
  return out;
}

inline std::vector<TagConcept> extract_tags(const ChatTurn& turn, int turn_index, TagMode mode,
                                            const ChatConfig& cfg = {}) {
  std::vector<std::string> names;
  if (mode == TagMode::lexicon) {
    names = match_lexicon(turn.text);
  } else {
    require(!cfg.url.empty(), ErrorCode::ServiceUnavailable,
            "tag mode 'llm' needs a chat endpoint; use lexicon mode or configure chat_url");
    const std::vector<ChatTurn> prompt{{ChatRole::system, tag_extraction_instruction(), {}},
                                       {ChatRole::user, turn.text, {}}};
    names = parse_tag_reply(chat(prompt, cfg).text);
  }
  std::vector<TagConcept> out;
  std::unordered_set<std::string> seen;
  for (const auto& n : names)
    if (seen.insert(lowercase(n)).second) out.push_back({n, turn_index, n});
  return out;
}

/// Session tag set with case-insensitive set semantics; the first spelling of a name wins.
class TagSet {
 public:
  /// Returns the tags that were new.
  std::vector<TagConcept> merge(const std::vector<TagConcept>& incoming) {
    std::vector<TagConcept> added;
    for (const auto& t : incoming) {
      if (t.name.empty()) continue;
      if (keys_.insert(lowercase(t.name)).second) {
        tags_.push_back(t);
        added.push_back(t);
      }
    }
    return added;
  }

  bool contains(const std::string& name) const { return keys_.count(lowercase(name)) != 0; }
  const std::vector<TagConcept>& tags() const noexcept { return tags_; }
  std::size_t size() const noexcept { return tags_.size(); }

  /// Lowercased names, sorted: equal for any two merge orders of the same tags.
  std::vector<std::string> keys() const {
    std::vector<std::string> k(keys_.begin(), keys_.end());
    std::sort(k.begin(), k.end());
    return k;
  }

 private:
  std::vector<TagConcept> tags_;
  std::unordered_set<std::string> keys_;
};

}  // namespace flowsem
