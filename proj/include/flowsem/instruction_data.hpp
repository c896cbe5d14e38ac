#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowsem/chat.hpp"
#include "flowsem/descriptor.hpp"
#include "flowsem/render.hpp"

namespace flowsem {

enum class TemplateKind { description, reasoning };

inline std::string to_string(TemplateKind k) { return k == TemplateKind::description ? "description" : "reasoning"; }

/// Prompt template. Placeholders: {n_views} {azimuths} {length} {level} {points}.
struct InstructionTemplate {
  std::string id;
  TemplateKind kind = TemplateKind::description;
  std::string text;
};

/// Representative prompt collection: two description and two reasoning prompts.
inline const std::vector<InstructionTemplate>& default_templates() {
  static const std::vector<InstructionTemplate> t{
      {"describe-shape", TemplateKind::description,
       "You are shown {n_views} orthographic views (azimuths {azimuths} degrees) of one streamline segment of "
       "arc length {length} from a steady 3D flow. Describe the shape of the trajectory and the flow pattern it "
       "follows."},
      {"describe-motion", TemplateKind::description,
       "The {n_views} images show a streamline segment from azimuths {azimuths} degrees; it spans {length} units "
       "of arc length. Explain how a particle released at its start would move."},
      {"reason-mechanism", TemplateKind::reasoning,
       "Looking at these {n_views} views of a streamline segment (azimuths {azimuths} degrees, length {length}), "
       "reason step by step about which physical mechanism could produce this trajectory."},
      {"reason-neighbourhood", TemplateKind::reasoning,
       "Given {n_views} views of this streamline segment (azimuths {azimuths} degrees), what would you expect the "
       "surrounding flow to look like, and why?"},
  };
  return t;
}

struct InstructionSample {
  std::string template_id;
  std::vector<std::string> views;
  std::string instruction;
  std::string response;
  std::vector<std::int64_t> segment_ids;
  std::string error;

  bool ok() const noexcept { return error.empty(); }
};

inline nlohmann::json to_json(const InstructionSample& s) {
  nlohmann::json j{{"template_id", s.template_id}, {"views", s.views},       {"instruction", s.instruction},
                   {"response", s.response},       {"segment_ids", s.segment_ids}};
  if (!s.error.empty()) j["error"] = s.error;
  return j;
}

struct InstructionOptions {
  std::uint64_t seed = 0;
  int n_views = 3;
  int image_size = 224;
  /// Where view PNGs go; empty renders in memory only and records the would-be file names.
  std::string image_dir;
  /// Emit prompts without calling the chat endpoint.
  bool dry_run = false;
  /// Concurrent chat calls.
  int parallelism = 1;
  std::string system_prompt = "You are an expert in fluid dynamics describing streamline visualizations.";
};

struct InstructionReport {
  std::vector<InstructionSample> samples;
  std::size_t failures = 0;
};

using ChatFn = std::function<ChatTurn(const std::vector<ChatTurn>&)>;

inline ChatFn chat_fn(const ChatConfig& cfg) {
  return [cfg](const std::vector<ChatTurn>& h) { return chat(h, cfg); };
}

inline std::string fill_template(const InstructionTemplate& t, const Segment& seg, int n_views) {
  std::ostringstream az, len;
  for (int v = 0; v < n_views; ++v) az << (v ? ", " : "") << std::lround(360.0 * v / n_views);
  len.precision(3);
  len << seg.arc_length();
  const std::pair<std::string, std::string> subs[] = {{"{n_views}", std::to_string(n_views)},
                                                      {"{azimuths}", az.str()},
                                                      {"{length}", len.str()},
                                                      {"{level}", std::to_string(seg.level)},
                                                      {"{points}", std::to_string(seg.points.size())}};
  std::string out = t.text;
  for (const auto& [key, value] : subs)
    for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + value.size()))
      out.replace(pos, key.size(), value);
  return out;
}

/// Render views, draw a template (seeded, uniform), ask the chat endpoint, package one sample per segment.
///
/// Chat failures are recorded on the sample and counted; the batch continues.
inline InstructionReport gen_instruction_data(const std::vector<Segment>& segments,
                                              const std::vector<InstructionTemplate>& templates, const ChatFn& ask,
                                              const InstructionOptions& opt) {
  require(!templates.empty(), ErrorCode::BadParam, "need at least one template");
  require(opt.n_views >= 1, ErrorCode::BadParam, "n_views must be >= 1");
  require(opt.parallelism >= 1, ErrorCode::BadParam, "parallelism must be >= 1");
  require(opt.dry_run || static_cast<bool>(ask), ErrorCode::ServiceUnavailable, "no chat client for a live run");
  if (!opt.image_dir.empty()) std::filesystem::create_directories(opt.image_dir);

  // template choice depends only on the seed and the segment order
  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> choice(segments.size());
  for (auto& c : choice) c = std::uniform_int_distribution<std::size_t>(0, templates.size() - 1)(rng);

  InstructionReport report;
  report.samples.resize(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& seg = segments[i];
    auto& s = report.samples[i];
    const auto& t = templates[choice[i]];
    s.template_id = t.id;
    s.segment_ids = {seg.id};
    s.instruction = fill_template(t, seg, opt.n_views);
    const auto views = render_views(seg, opt.n_views, opt.image_size);
    for (std::size_t v = 0; v < views.size(); ++v) {
      const std::string name = "seg" + std::to_string(seg.id) + "_v" + std::to_string(v) + ".png";
      if (opt.image_dir.empty()) {
        s.views.push_back(name);
      } else {
        const auto path = (std::filesystem::path(opt.image_dir) / name).string();
        write_png(views[v].image, path);
        s.views.push_back(path);
      }
    }
  }
  if (opt.dry_run) return report;

  auto run_one = [&](std::size_t i) {
    auto& s = report.samples[i];
    std::string prompt = s.instruction + "\nViews:";
    for (const auto& v : s.views) prompt += " " + v;
    try {
      s.response = ask({{ChatRole::system, opt.system_prompt, {}}, {ChatRole::user, prompt, {}}}).text;
    } catch (const Error& e) {
      s.error = e.what();
    }
  };
  for (std::size_t start = 0; start < segments.size(); start += static_cast<std::size_t>(opt.parallelism)) {
    const std::size_t end = std::min(segments.size(), start + static_cast<std::size_t>(opt.parallelism));
    if (opt.parallelism == 1) {
      run_one(start);
      continue;
    }
    std::vector<std::future<void>> wave;
    for (std::size_t i = start; i < end; ++i) wave.push_back(std::async(std::launch::async, run_one, i));
    for (auto& f : wave) f.get();
  }
  for (const auto& s : report.samples) report.failures += !s.ok();
  return report;
}

inline void write_jsonl(const std::string& path, const std::vector<InstructionSample>& samples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  for (const auto& s : samples) out << to_json(s).dump() << '\n';
  if (!out) fail(ErrorCode::IoError, "write failed: " + path);
}

/// Seeded subset of ceil(fraction * n) sample indices, ascending, for manual inspection.
inline std::vector<std::size_t> sample_review(std::size_t n, double fraction, std::uint64_t seed) {
  require(fraction >= 0.0 && fraction <= 1.0, ErrorCode::BadParam, "review fraction must be in [0, 1]");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9))));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace flowsem
