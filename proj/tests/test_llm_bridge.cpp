#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "flowsem/instruction_data.hpp"
#include "mock_chat.hpp"

using namespace flowsem;
using flowsem::testing::MockChatServer;

namespace {

std::string echo_last(const nlohmann::json& body) { return body["messages"].back()["content"].get<std::string>(); }

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::BadParam;
}

Segment polyline_segment(std::vector<Vec3> pts, std::int64_t id = 0) {
  Segment s;
  s.id = id;
  s.points = std::move(pts);
  s.arc_end = s.arc_length();
  return s;
}

Segment straight(const Vec3& a, const Vec3& b, int n = 64) {
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) pts.push_back(a + (b - a) * (static_cast<double>(i) / (n - 1)));
  return polyline_segment(pts);
}

Segment helix_segment(std::int64_t id) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 64; ++i) {
    const double t = 0.1 * i + 0.05 * static_cast<double>(id);
    pts.emplace_back(std::cos(t), std::sin(t), 0.05 * t);
  }
  return polyline_segment(pts, id);
}

std::vector<Segment> helix_segments(int n) {
  std::vector<Segment> out;
  for (int i = 0; i < n; ++i) out.push_back(helix_segment(i));
  return out;
}

struct CapturedLog {
  std::vector<nlohmann::json> records;
  CapturedLog() {
    log::set_sink([this](const nlohmann::json& r) { records.push_back(r); });
  }
  ~CapturedLog() { log::set_sink({}); }
  bool has(const std::string& event) const {
    return std::any_of(records.begin(), records.end(), [&](const auto& r) { return r["event"] == event; });
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// chat relay

TEST(Chat, NoEndpointIsServiceUnavailable) {
  try {
    chat({{ChatRole::user, "hello", {}}}, ChatConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ServiceUnavailable);
    EXPECT_NE(std::string(e.what()).find("chat_url"), std::string::npos);
  }
}

TEST(Chat, EchoEndpointReturnsVerbatimWithoutTouchingHistory) {
  MockChatServer srv(echo_last);
  CapturedLog logs;
  ChatConfig cfg;
  cfg.url = srv.url();
  const std::vector<ChatTurn> history{{ChatRole::system, "be brief", {}},
                                      {ChatRole::user, "What is a saddle point?  ", {"saddle"}}};
  const auto before = history;
  const auto reply = chat(history, cfg);
  EXPECT_EQ(reply.role, ChatRole::assistant);
  EXPECT_EQ(reply.text, "What is a saddle point?  ");
  EXPECT_EQ(history, before);
  const auto req = srv.last_request();
  EXPECT_EQ(req["messages"].size(), 2u);
  EXPECT_EQ(req["messages"][0]["role"], "system");
  EXPECT_EQ(req["model"], "gpt-4o");
  EXPECT_TRUE(logs.has("chat.request"));
  EXPECT_TRUE(logs.has("chat.response"));
}

TEST(Chat, ApiKeyFromEnvironment) {
  MockChatServer srv(echo_last);
  ChatConfig cfg;
  cfg.url = srv.url();
  cfg.api_key_env = "FLOWSEM_TEST_CHAT_KEY";
  ::setenv("FLOWSEM_TEST_CHAT_KEY", "sekrit", 1);
  chat({{ChatRole::user, "hi", {}}}, cfg);
  EXPECT_EQ(srv.last_auth(), "Bearer sekrit");
  ::unsetenv("FLOWSEM_TEST_CHAT_KEY");
  chat({{ChatRole::user, "hi", {}}}, cfg);
  EXPECT_EQ(srv.last_auth(), "");
}

TEST(Chat, ErrorMapping) {
  MockChatServer srv(echo_last);
  CapturedLog logs;
  ChatConfig cfg;
  const std::vector<ChatTurn> h{{ChatRole::user, "hi", {}}};
  cfg.url = srv.url("/bad");
  EXPECT_EQ(code_of([&] { chat(h, cfg); }), ErrorCode::BadResponse);
  cfg.url = srv.url("/fail");
  EXPECT_EQ(code_of([&] { chat(h, cfg); }), ErrorCode::ServiceUnavailable);
  cfg.url = srv.url("/slow");
  cfg.timeout_s = 0.5;
  EXPECT_EQ(code_of([&] { chat(h, cfg); }), ErrorCode::Timeout);
  EXPECT_TRUE(logs.has("chat.error"));
  cfg.url = srv.url();
  EXPECT_EQ(code_of([&] { chat({{ChatRole::user, "   ", {}}}, cfg); }), ErrorCode::BadParam);
  EXPECT_EQ(code_of([&] { chat({}, cfg); }), ErrorCode::BadParam);
}

TEST(Chat, TrimmingDropsOldestNonSystemTurns) {
  // system turn + 9 alternating turns of 10 characters each
  std::vector<ChatTurn> h{{ChatRole::system, "sys-prompt", {}}};
  for (int i = 1; i <= 9; ++i)
    h.push_back({i % 2 ? ChatRole::user : ChatRole::assistant, "turn-" + std::string(1, char('0' + i)) + "-xxx", {}});
  ASSERT_EQ(h.size(), 10u);

  for (std::size_t budget : {100u, 99u, 50u, 25u, 0u}) {
    // oracle: the system turn plus the longest suffix whose total (with the system turn) fits, at least one turn
    std::vector<ChatTurn> expect{h[0]};
    std::size_t keep = 9;
    while (keep > 1 && 10 + 10 * keep > budget) --keep;
    for (std::size_t i = 10 - keep; i < 10; ++i) expect.push_back(h[i]);
    EXPECT_EQ(trim_history(h, budget), expect) << budget;
  }
  EXPECT_EQ(trim_history(h, 1000), h);

  // a system turn in the middle survives as well
  std::vector<ChatTurn> mid{{ChatRole::user, "aaaaaaaaaa", {}},
                            {ChatRole::system, "ssssssssss", {}},
                            {ChatRole::user, "bbbbbbbbbb", {}}};
  const auto t = trim_history(mid, 20);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].role, ChatRole::system);
  EXPECT_EQ(t[1].text, "bbbbbbbbbb");
}

TEST(Chat, RelayedHistoryIsTrimmed) {
  MockChatServer srv([](const nlohmann::json& b) { return std::to_string(b["messages"].size()); });
  ChatConfig cfg;
  cfg.url = srv.url();
  cfg.context_chars = 30;
  std::vector<ChatTurn> h{{ChatRole::system, "0123456789", {}}};
  for (int i = 0; i < 6; ++i) h.push_back({ChatRole::user, "0123456789", {}});
  EXPECT_EQ(chat(h, cfg).text, "3");
}

// ---------------------------------------------------------------------------
// tags

TEST(Tags, LexiconExtractsQuotedFragment) {
  const ChatTurn t{ChatRole::assistant,
                   "small disturbances in laminar flow can grow and eventually trigger vortex formation", {}};
  const auto tags = extract_tags(t, 3, TagMode::lexicon);
  ASSERT_EQ(tags.size(), 2u);
  EXPECT_EQ(tags[0].name, "laminar flow");
  EXPECT_EQ(tags[1].name, "vortex");
  EXPECT_EQ(tags[0].source_turn, 3);
  EXPECT_EQ(tags[1].query_text, "vortex");
}

TEST(Tags, LexiconEdgeCases) {
  EXPECT_TRUE(extract_tags({ChatRole::assistant, "the weather is calm today", {}}, 0, TagMode::lexicon).empty());
  EXPECT_TRUE(match_lexicon("eddying vortexes").empty());
  EXPECT_EQ(match_lexicon("A SADDLE, a Saddle and a saddle."), std::vector<std::string>{"saddle"});
  EXPECT_EQ(match_lexicon("spiral vortex"), (std::vector<std::string>{"spiral", "vortex"}));
  // longest phrase wins at a position
  EXPECT_EQ(match_lexicon("laminar flow and flow", {"flow", "laminar flow"}),
            (std::vector<std::string>{"laminar flow", "flow"}));
  EXPECT_EQ(match_lexicon("the jet stream carries shear"), (std::vector<std::string>{"jet stream", "shear"}));
  EXPECT_EQ(flow_lexicon().size(), 10u);
}

TEST(Tags, MergeIsIdempotentAndOrderFree) {
  const ChatTurn t{ChatRole::assistant, "vortex near a saddle with shear", {}};
  TagSet a;
  const auto first = a.merge(extract_tags(t, 1, TagMode::lexicon));
  EXPECT_EQ(first.size(), 3u);
  const auto snapshot = a.tags();
  EXPECT_TRUE(a.merge(extract_tags(t, 1, TagMode::lexicon)).empty());
  EXPECT_EQ(a.tags(), snapshot);
  EXPECT_TRUE(a.merge({{"VORTEX", 5, "VORTEX"}}).empty());
  EXPECT_TRUE(a.contains("Shear"));

  const std::vector<TagConcept> x{{"Eddy", 0, "Eddy"}, {"jet stream", 0, "jet stream"}};
  const std::vector<TagConcept> y{{"eddy", 1, "eddy"}, {"Spiral", 1, "Spiral"}};
  TagSet p, q;
  p.merge(x), p.merge(y);
  q.merge(y), q.merge(x);
  EXPECT_EQ(p.keys(), q.keys());
  EXPECT_EQ(p.size(), 3u);
}

TEST(Tags, LlmMode) {
  MockChatServer srv([](const nlohmann::json&) { return "```json\n[\"Vortex\", \" jet stream \", \"vortex\"]\n```"; });
  ChatConfig cfg;
  cfg.url = srv.url();
  const auto tags = extract_tags({ChatRole::assistant, "anything", {}}, 2, TagMode::llm, cfg);
  ASSERT_EQ(tags.size(), 2u);
  EXPECT_EQ(tags[0].name, "Vortex");
  EXPECT_EQ(tags[1].name, "jet stream");
  EXPECT_EQ(srv.last_request()["messages"][0]["content"], tag_extraction_instruction());

  EXPECT_EQ(code_of([&] { extract_tags({ChatRole::assistant, "x", {}}, 0, TagMode::llm, ChatConfig{}); }),
            ErrorCode::ServiceUnavailable);
  MockChatServer prose([](const nlohmann::json&) { return "I found a vortex."; });
  cfg.url = prose.url();
  EXPECT_EQ(code_of([&] { extract_tags({ChatRole::assistant, "x", {}}, 0, TagMode::llm, cfg); }),
            ErrorCode::BadResponse);
}

// ---------------------------------------------------------------------------
// rendering

TEST(Render, ThreeViewsAtEvenAzimuths) {
  const auto views = render_views(helix_segment(0), 3, 64);
  ASSERT_EQ(views.size(), 3u);
  EXPECT_DOUBLE_EQ(views[0].azimuth_deg, 0.0);
  EXPECT_DOUBLE_EQ(views[1].azimuth_deg, 120.0);
  EXPECT_DOUBLE_EQ(views[2].azimuth_deg, 240.0);
  for (const auto& v : views) {
    EXPECT_EQ(v.image.width, 64);
    EXPECT_EQ(v.image.pixels.size(), 64u * 64u);
  }
}

TEST(Render, StraightSegmentIsOneStraightLine) {
  for (const auto& seg : {straight({0, 0, 0}, {1, 0, 0.37}), straight({0, 0, 0}, {0.2, 0, 1})}) {
    const auto img = render_views(seg, 1, 128)[0].image;
    // fit along the dominant axis: per-column (or row) darkness centroid, then least squares
    int x0 = img.width, x1 = -1, y0 = img.height, y1 = -1;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        if (img.at(x, y) < 255) x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
    const bool by_column = x1 - x0 >= y1 - y0;
    std::vector<std::pair<double, double>> pts;
    for (int a = 0; a < img.width; ++a) {
      double w = 0, m = 0;
      for (int b = 0; b < img.height; ++b) {
        const double d = 255.0 - (by_column ? img.at(a, b) : img.at(b, a));
        w += d, m += d * b;
      }
      if (w > 0) pts.emplace_back(a, m / w);
    }
    ASSERT_GT(pts.size(), 10u);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (auto [x, y] : pts) sx += x, sy += y, sxx += x * x, sxy += x * y;
    const double n = static_cast<double>(pts.size());
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx), icpt = (sy - slope * sx) / n;
    double worst = 0;
    // end columns carry partial coverage from the caps; skip them
    for (std::size_t i = 1; i + 1 < pts.size(); ++i)
      worst = std::max(worst, std::abs(pts[i].second - (slope * pts[i].first + icpt)));
    EXPECT_LT(worst, 1.0);
  }
}

TEST(Render, DeterministicAndTranslationInvariant) {
  const auto seg = helix_segment(3);
  const auto a = render_views(seg, 4, 96), b = render_views(seg, 4, 96);
  auto moved = seg;
  for (auto& p : moved.points) p += Vec3(3.25, -7.5, 12.0);
  const auto c = render_views(moved, 4, 96);
  for (int v = 0; v < 4; ++v) {
    EXPECT_EQ(encode_png(a[v].image), encode_png(b[v].image));
    int worst = 0;
    for (std::size_t i = 0; i < a[v].image.pixels.size(); ++i)
      worst = std::max(worst, std::abs(int(a[v].image.pixels[i]) - int(c[v].image.pixels[i])));
    EXPECT_LE(worst, 1);
  }
}

TEST(Render, PngRoundTripAndLayout) {
  const auto img = render_views(helix_segment(1), 1, 40)[0].image;
  const auto bytes = encode_png(img);
  EXPECT_EQ(bytes[1], 'P');
  EXPECT_EQ(decode_png(bytes), img);
  auto broken = bytes;
  broken[40] ^= 0xff;
  EXPECT_THROW(decode_png(broken), Error);
  EXPECT_THROW(render_views(polyline_segment({Vec3::Zero()}), 1, 32), Error);
  EXPECT_THROW(render_views(helix_segment(0), 0, 32), Error);
}

// ---------------------------------------------------------------------------
// instruction data

TEST(InstructionData, DryRunIsReproducible) {
  const auto segs = helix_segments(10);
  const std::vector<InstructionTemplate> templates(default_templates().begin(), default_templates().begin() + 2);
  InstructionOptions opt;
  opt.seed = 42;
  opt.dry_run = true;
  opt.image_size = 32;
  const auto a = gen_instruction_data(segs, templates, {}, opt);
  const auto b = gen_instruction_data(segs, templates, {}, opt);
  ASSERT_EQ(a.samples.size(), 10u);
  EXPECT_EQ(a.failures, 0u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(a.samples[i].template_id, b.samples[i].template_id);
    EXPECT_EQ(a.samples[i].instruction, b.samples[i].instruction);
    EXPECT_TRUE(a.samples[i].response.empty());
    EXPECT_EQ(a.samples[i].views.size(), 3u);
    EXPECT_EQ(a.samples[i].segment_ids, std::vector<std::int64_t>{static_cast<std::int64_t>(i)});
    EXPECT_EQ(a.samples[i].instruction.find('{'), std::string::npos);
  }
  std::set<std::string> used;
  for (const auto& s : a.samples) used.insert(s.template_id);
  EXPECT_EQ(used.size(), 2u);
}

TEST(InstructionData, MockEndpointCompletesEverySample) {
  MockChatServer srv([](const nlohmann::json&) { return "A tight helical vortex."; });
  ChatConfig cfg;
  cfg.url = srv.url();
  InstructionOptions opt;
  opt.image_size = 32;
  for (int par : {1, 3}) {
    opt.parallelism = par;
    const auto r = gen_instruction_data(helix_segments(10), default_templates(), chat_fn(cfg), opt);
    EXPECT_EQ(r.failures, 0u);
    ASSERT_EQ(r.samples.size(), 10u);
    for (const auto& s : r.samples) {
      EXPECT_TRUE(s.ok());
      EXPECT_EQ(s.response, "A tight helical vortex.");
    }
  }
  EXPECT_EQ(srv.calls(), 20);
}

TEST(InstructionData, FailuresAreCountedAndBatchContinues) {
  int calls = 0;
  const ChatFn flaky = [&](const std::vector<ChatTurn>& h) {
    if (++calls % 2 == 0) fail(ErrorCode::Timeout, "simulated");
    return ChatTurn{ChatRole::assistant, "ok " + h.back().text.substr(0, 3), {}};
  };
  InstructionOptions opt;
  opt.image_size = 32;
  const auto r = gen_instruction_data(helix_segments(10), default_templates(), flaky, opt);
  EXPECT_EQ(calls, 10);
  EXPECT_EQ(r.failures, 5u);
  EXPECT_FALSE(r.samples[1].ok());
  EXPECT_TRUE(r.samples[2].ok());
  EXPECT_THROW(gen_instruction_data(helix_segments(2), default_templates(), {}, InstructionOptions{}), Error);
}

TEST(InstructionData, WritesImagesAndJsonl) {
  const auto dir = std::filesystem::temp_directory_path() / "flowsem_gen_data_test";
  std::filesystem::remove_all(dir);
  InstructionOptions opt;
  opt.dry_run = true;
  opt.image_size = 48;
  opt.image_dir = (dir / "views").string();
  const auto segs = helix_segments(2);
  const auto r = gen_instruction_data(segs, default_templates(), {}, opt);
  std::ifstream f(r.samples[1].views[2], std::ios::binary);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), {});
  EXPECT_EQ(decode_png(bytes), render_views(segs[1], 3, 48)[2].image);

  const auto path = (dir / "data.jsonl").string();
  write_jsonl(path, r.samples);
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["views"].size(), 3u);
    ++lines;
  }
  EXPECT_EQ(lines, 2);
  std::filesystem::remove_all(dir);
}

TEST(InstructionData, ReviewSubset) {
  const auto a = sample_review(10, 0.2, 7);
  EXPECT_EQ(a.size(), 2u);
  EXPECT_EQ(a, sample_review(10, 0.2, 7));
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(sample_review(500, 0.2, 1).size(), 100u);
  EXPECT_EQ(sample_review(7, 0.2, 1).size(), 2u);
  EXPECT_TRUE(sample_review(10, 0.0, 1).empty());
  EXPECT_EQ(sample_review(4, 1.0, 1), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_THROW(sample_review(4, 1.5, 1), Error);
}
