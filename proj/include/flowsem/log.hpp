#pragma once

#include <chrono>
#include <functional>
#include <iostream>
#include <mutex>
#include <string>

#include <json.hpp>

namespace flowsem::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline std::string to_string(Level l) {
  switch (l) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
    case Level::off: return "off";
  }
  return "info";
}

using Sink = std::function<void(const nlohmann::json&)>;

struct State {
  std::mutex mu;
  Level level = Level::info;
  Sink sink;
};

inline State& state() {
  static State s;
  return s;
}

inline void set_level(Level l) {
  std::lock_guard lock(state().mu);
  state().level = l;
}

/// Replace the stderr writer (tests capture records this way). An empty sink restores stderr.
inline void set_sink(Sink sink) {
  std::lock_guard lock(state().mu);
  state().sink = std::move(sink);
}

/// One JSON object per line: {"ts", "level", "event", ...fields}.
inline void write(Level l, const std::string& event, nlohmann::json fields = nlohmann::json::object()) {
  auto& s = state();
  std::lock_guard lock(s.mu);
  if (l < s.level) return;
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::system_clock::now().time_since_epoch())
                      .count();
  nlohmann::json rec{{"ts_ms", ms}, {"level", to_string(l)}, {"event", event}};
  if (fields.is_object()) rec.update(fields);
  if (s.sink)
    s.sink(rec);
  else
    std::cerr << rec.dump() << '\n';
}

inline void info(const std::string& event, nlohmann::json fields = nlohmann::json::object()) {
  write(Level::info, event, std::move(fields));
}
inline void warn(const std::string& event, nlohmann::json fields = nlohmann::json::object()) {
  write(Level::warn, event, std::move(fields));
}
inline void debug(const std::string& event, nlohmann::json fields = nlohmann::json::object()) {
  write(Level::debug, event, std::move(fields));
}

}  // namespace flowsem::log
