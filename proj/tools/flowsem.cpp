// flowsem command-line front end.
//
// Exit codes: 0 success, 2 usage error, 1 runtime error.

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <thread>

#include "flowsem/evalsuite.hpp"
#include "flowsem/image_metrics.hpp"
#include "flowsem/instruction_data.hpp"
#include "flowsem/match_index.hpp"
#include "flowsem/service.hpp"
#include "flowsem/toy_corpus.hpp"

using namespace flowsem;
namespace fs = std::filesystem;

namespace {

std::vector<Segment> load_segment_files(const std::vector<std::string>& paths) {
  std::vector<Segment> all;
  for (const auto& p : paths) {
    auto segs = load_segments(p);
    all.insert(all.end(), std::make_move_iterator(segs.begin()), std::make_move_iterator(segs.end()));
  }
  return all;
}

FlowClass parse_flow_class(const std::string& s) {
  for (auto c : {FlowClass::uniform, FlowClass::rotor, FlowClass::helix, FlowClass::rotor_helix,
                 FlowClass::critical_points, FlowClass::two_swirls})
    if (to_string(c) == s) return c;
  fail(ErrorCode::BadParam, "unknown flow class '" + s + "'");
}

const std::vector<std::string> kKinds{"uniform", "rotor", "helix", "critical_points", "two_swirls"};
const std::vector<std::string> kClasses{"uniform", "rotor", "helix", "rotor_helix", "critical_points", "two_swirls"};

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::unique_ptr<TextEmbedder> embedder_for(const MatchIndex& index, const std::string& url) {
  if (index.embedder_source() == EmbeddingSource::external_service) {
    EmbeddingServiceConfig cfg;
    cfg.url = url.empty() ? (std::getenv("FLOWSEM_EMBEDDING_URL") ? std::getenv("FLOWSEM_EMBEDDING_URL") : "") : url;
    cfg.dim = index.text_dim();
    return std::make_unique<EmbeddingServiceClient>(cfg);
  }
  return std::make_unique<HashedTrigramEmbedder>(index.text_dim());
}

// ---------------------------------------------------------------------------

struct GenFieldArgs {
  std::string kind = "helix";
  std::vector<int> dims{32, 32, 32};
  std::vector<double> lo{-1, -1, -1}, hi{1, 1, 1};
  SyntheticParams params;
  std::uint64_t seed = 0;
  std::string out;
};

int gen_field(const GenFieldArgs& a) {
  const Bounds b{Vec3(a.lo[0], a.lo[1], a.lo[2]), Vec3(a.hi[0], a.hi[1], a.hi[2])};
  const auto field = gen_synthetic(parse_synthetic_kind(a.kind), {a.dims[0], a.dims[1], a.dims[2]}, b, a.params, a.seed);
  ensure_parent(a.out);
  save_raw(field, a.out);
  std::cout << "wrote " << detail::raw_base(a.out) << ".meta/.vec (" << field.node_count() << " nodes)\n";
  return 0;
}

struct TraceArgs {
  std::string field, out;
  int seeds = 200;
  TraceConfig cfg{.step = 0.02, .max_steps = 600, .min_speed = 1e-6, .direction = TraceDirection::both};
  std::string direction = "both";
  int min_points = 2;
  std::uint64_t seed = 0;
};

int trace_cmd(TraceArgs a) {
  const auto field = load_raw(a.field);
  a.cfg.direction = a.direction == "forward"    ? TraceDirection::forward
                    : a.direction == "backward" ? TraceDirection::backward
                                                : TraceDirection::both;
  std::vector<Streamline> lines;
  std::int64_t id = 0;
  for (const auto& p : seed_uniform(field.bounds(), a.seeds, a.seed)) {
    auto s = trace(field, p, a.cfg, id);
    if (static_cast<int>(s.points.size()) >= a.min_points) lines.push_back(std::move(s)), ++id;
  }
  ensure_parent(a.out);
  save_streamlines(a.out, lines);
  std::size_t pts = 0;
  for (const auto& s : lines) pts += s.points.size();
  std::cout << "traced " << lines.size() << " streamlines (" << pts << " points) -> " << a.out << '\n';
  return 0;
}

struct SampleArgs {
  std::string streamlines, out, descriptors;
  SamplingConfig cfg{.levels = 3, .max_len = 1.6, .overlap = 0.5, .min_points = 4};
};

int sample_cmd(const SampleArgs& a) {
  std::vector<Segment> segs;
  for (const auto& s : load_streamlines(a.streamlines))
    for (auto& seg : sample_segments(s, a.cfg)) {
      seg.id = static_cast<std::int64_t>(segs.size());
      segs.push_back(std::move(seg));
    }
  require(!segs.empty(), ErrorCode::DegenerateSegment, "no segments: streamlines shorter than the smallest window");
  ensure_parent(a.out);
  save_segments(a.out, segs);
  if (!a.descriptors.empty()) save_descriptors(a.descriptors, describe_all(segs));
  std::cout << "sampled " << segs.size() << " segments -> " << a.out << '\n';
  return 0;
}

struct TrainEncoderArgs {
  std::vector<std::string> segments;
  std::size_t toy_pool = 0;
  DaeTrainConfig cfg;
  bool plain_ae = false;
  std::string out;
};

int train_encoder(TrainEncoderArgs a) {
  auto segs = load_segment_files(a.segments);
  if (a.toy_pool > 0) {
    const ToyCorpusOptions toy;
    auto pool = generate_labeled_corpus(toy.classes, a.toy_pool, a.cfg.seed + 777, toy.fields).segments;
    segs.insert(segs.end(), pool.begin(), pool.end());
  }
  require(!segs.empty(), ErrorCode::BadParam, "no training segments: pass --segments and/or --toy-pool");
  if (a.plain_ae) a.cfg.t_range = {0};
  const auto mats = describe_all(segs);
  a.cfg.on_epoch = [&](int epoch, double loss) {
    if (epoch == 1 || epoch % 10 == 0 || epoch == a.cfg.epochs)
      std::cerr << "epoch " << epoch << "/" << a.cfg.epochs << " loss " << loss << '\n';
  };
  const auto res = train_dae(mats, a.cfg);
  const auto m = batch_metrics(mats, reconstruct_batch(res.model, mats));
  ensure_parent(a.out);
  save_checkpoint(res.model, a.out);
  std::cout << "trained on " << mats.size() << " descriptors, " << res.steps << " steps; train RMSE " << m.rmse
            << " PSNR " << m.psnr << " SSIM " << m.ssim << " -> " << a.out << '\n';
  return 0;
}

int encode_cmd(const std::string& encoder, const std::vector<std::string>& segments, const std::string& out) {
  const auto model = load_checkpoint(encoder);
  const auto segs = load_segment_files(segments);
  const auto lat = encode_batch(model, describe_all(segs));
  ensure_parent(out);
  std::ofstream f(out, std::ios::trunc);
  if (!f) fail(ErrorCode::IoError, "cannot write " + out);
  f.precision(9);
  for (std::size_t i = 0; i < segs.size(); ++i) {
    f << segs[i].id;
    for (Eigen::Index r = 0; r < lat.rows(); ++r) f << ',' << lat(r, static_cast<Eigen::Index>(i));
    f << '\n';
  }
  std::cout << "encoded " << segs.size() << " segments to " << lat.rows() << "-d latents -> " << out << '\n';
  return 0;
}

struct ProbeArgs {
  std::string encoder;
  std::vector<std::string> classes{"uniform", "rotor_helix", "critical_points", "two_swirls"};
  std::size_t per_class = 600;
  double split = 0.8;
  ProbeConfig cfg;
  bool json = false;
};

int eval_probe(const ProbeArgs& a) {
  const auto model = load_checkpoint(a.encoder);
  std::vector<FlowClass> classes;
  for (const auto& c : a.classes) classes.push_back(parse_flow_class(c));
  const auto corpus = generate_labeled_corpus(classes, a.per_class, a.cfg.seed);
  LabeledFeatureSet set{encode_batch(model, describe_all(corpus.segments)), corpus.labels, corpus.class_names};
  const auto r = linear_probe_detailed(set, a.split, a.cfg);
  if (a.json) {
    std::cout << nlohmann::json{{"test_accuracy", r.test_accuracy}, {"train_accuracy", r.train_accuracy},
                                {"train_size", r.train_size},       {"test_size", r.test_size},
                                {"confusion", r.confusion},         {"classes", corpus.class_names}}
                     .dump(2)
              << '\n';
  } else {
    std::printf("test_accuracy %.4f\ntrain_accuracy %.4f\ntrain %zu test %zu\n", r.test_accuracy, r.train_accuracy,
                r.train_size, r.test_size);
  }
  return 0;
}

int eval_uniformity(const std::string& encoder, const std::vector<std::string>& segments, UniformityOptions opt) {
  const auto model = load_checkpoint(encoder);
  const auto r = uniformity(encode_batch(model, describe_all(load_segment_files(segments))), opt);
  std::printf("uniformity %.6f\n", r.value);
  if (!r.exact) std::printf("std_error %.6f (%zu sampled pairs)\n", r.std_error, static_cast<std::size_t>(r.pairs));
  return 0;
}

int bench_scaling(const std::string& op, const std::vector<std::size_t>& counts, const TimingConfig& cfg,
                  const std::string& json_out) {
  const auto rows = timing_scaling(counts, parse_timed_op(op), cfg);
  std::printf("%10s %12s %10s\n", "count", "seconds", "ratio");
  nlohmann::json j{{"op", op}, {"repeats", cfg.repeats}, {"environment", environment_metadata()}};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double ratio = i ? rows[i].seconds / rows[i - 1].seconds : 0.0;
    if (i)
      std::printf("%10zu %12.4f %10.3f\n", rows[i].count, rows[i].seconds, ratio);
    else
      std::printf("%10zu %12.4f %10s\n", rows[i].count, rows[i].seconds, "-");
    j["rows"].push_back({{"count", rows[i].count}, {"seconds", rows[i].seconds}});
  }
  if (!json_out.empty()) {
    ensure_parent(json_out);
    std::ofstream(json_out) << j.dump(2) << '\n';
  }
  return 0;
}

struct TrainMatcherArgs {
  std::string encoder, out, captions;
  std::vector<std::string> segments;
  ToyCorpusOptions toy;
  MatcherTrainConfig cfg = [] {
    MatcherTrainConfig c;
    c.weight_decay = 0.1;
    return c;
  }();
  std::string embedding_url;
};

/// `--captions` lines: {"caption": "...", "segment_ids": [...]} referring to the `--segments` store.
std::vector<CaptionedSegments> load_captions(const std::string& path, const std::vector<Segment>& segs) {
  std::unordered_map<std::int64_t, const Segment*> by_id;
  for (const auto& s : segs) by_id[s.id] = &s;
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path);
  std::vector<CaptionedSegments> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (!j.is_object() || !j.contains("caption") || !j.contains("segment_ids"))
      fail(ErrorCode::FormatError, "caption line needs caption and segment_ids: " + line.substr(0, 80));
    CaptionedSegments cs;
    cs.caption = j["caption"].get<std::string>();
    for (const auto& id : j["segment_ids"]) {
      const auto it = by_id.find(id.get<std::int64_t>());
      if (it == by_id.end()) fail(ErrorCode::FormatError, "caption refers to unknown segment " + id.dump());
      cs.segments.push_back(*it->second);
    }
    out.push_back(std::move(cs));
  }
  return out;
}

int train_matcher_cmd(TrainMatcherArgs a) {
  const auto encoder = load_checkpoint(a.encoder);
  std::unique_ptr<TextEmbedder> embedder;
  if (a.embedding_url.empty()) {
    embedder = std::make_unique<HashedTrigramEmbedder>();
  } else {
    EmbeddingServiceConfig ec;
    ec.url = a.embedding_url;
    embedder = std::make_unique<EmbeddingServiceClient>(ec);
  }
  std::vector<CaptionedSegments> corpus;
  ToyMatchCorpus toy;
  if (!a.captions.empty()) {
    corpus = load_captions(a.captions, load_segment_files(a.segments));
  } else {
    toy = make_toy_match_corpus(a.cfg.seed, a.toy);
    corpus = toy.training;
  }
  a.cfg.on_epoch = [&](int epoch, double loss) {
    if (epoch == 1 || epoch % 10 == 0 || epoch == a.cfg.epochs)
      std::cerr << "epoch " << epoch << "/" << a.cfg.epochs << " loss " << loss << '\n';
  };
  const auto res = train_matcher(corpus, encoder, *embedder, a.cfg);
  ensure_parent(a.out);
  save_matcher(res.model, a.out);
  std::cout << "trained on " << corpus.size() << " caption sets; loss " << res.initial_loss << " -> "
            << res.epoch_loss.back();
  if (a.captions.empty()) {
    std::vector<int> labels;
    const auto held = prepare_examples(held_out_sets(toy, a.toy.set_size, &labels), encoder, *embedder);
    if (held.size() < 2)
      std::cout << "; held-out top-1 n/a (fewer than 2 held-out sets)";
    else
      std::cout << "; held-out top-1 " << in_batch_retrieval_top1(res.model, held, labels);
  }
  std::cout << " -> " << a.out << '\n';
  return 0;
}

int build_index_cmd(const std::string& encoder, const std::string& matcher, const std::vector<std::string>& segments,
                    const std::string& source, const std::string& out) {
  const auto segs = load_segment_files(segments);
  const auto index = build_index(segs, load_checkpoint(encoder), load_matcher(matcher),
                                 source == "external_service" ? EmbeddingSource::external_service
                                                              : EmbeddingSource::hashed_fallback);
  ensure_parent(out);
  save_index(index, out);
  std::cout << "indexed " << index.size() << " segments (fingerprint " << io::hex64(index.built_from()) << ") -> "
            << out << '\n';
  return 0;
}

int query_cmd(const std::string& index_path, const std::string& text, int k, const std::string& url) {
  const auto index = load_index(index_path);
  const auto embedder = embedder_for(index, url);
  for (const auto& r : query(index, *embedder, text, k)) std::printf("%d %.6f %lld\n", r.rank, r.score, static_cast<long long>(r.segment_id));
  return 0;
}

struct GenDataArgs {
  std::vector<std::string> segments;
  std::string templates, out, chat_url;
  std::size_t limit = 0;
  InstructionOptions opt;
  double review = -1.0;
};

int gen_data(GenDataArgs a) {
  auto segs = load_segment_files(a.segments);
  if (a.limit > 0 && segs.size() > a.limit) segs.resize(a.limit);
  std::vector<InstructionTemplate> templates = default_templates();
  if (!a.templates.empty()) {
    std::ifstream in(a.templates);
    if (!in) fail(ErrorCode::IoError, "cannot read " + a.templates);
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (!j.is_array()) fail(ErrorCode::FormatError, "templates file must hold a JSON array");
    templates.clear();
    for (const auto& t : j) {
      const auto kind = t.value("kind", "description");
      templates.push_back({t.at("id").get<std::string>(),
                           kind == "reasoning" ? TemplateKind::reasoning : TemplateKind::description,
                           t.at("text").get<std::string>()});
    }
  }
  ChatConfig chat;
  chat.url = !a.chat_url.empty() ? a.chat_url : (std::getenv("FLOWSEM_CHAT_URL") ? std::getenv("FLOWSEM_CHAT_URL") : "");
  if (!a.opt.dry_run && chat.url.empty())
    fail(ErrorCode::ServiceUnavailable, "no chat endpoint: pass --chat-url, set FLOWSEM_CHAT_URL, or use --dry-run");
  const auto report = gen_instruction_data(segs, templates, a.opt.dry_run ? ChatFn{} : chat_fn(chat), a.opt);
  ensure_parent(a.out);
  write_jsonl(a.out, report.samples);
  std::cout << report.samples.size() << " samples, " << report.failures << " failures -> " << a.out << '\n';
  if (a.review >= 0) {
    const auto pick = sample_review(report.samples.size(), a.review, a.opt.seed);
    std::cout << "review " << pick.size() << " samples (line numbers):";
    for (auto i : pick) std::cout << ' ' << i + 1;
    std::cout << '\n';
  }
  return report.failures == 0 ? 0 : 1;
}

struct ServeArgs {
  std::string config, data_dir, host;
  int port = -1;
};

int serve_cmd(const ServeArgs& a) {
  auto cfg = load_service_config(a.config);
  if (!a.data_dir.empty()) cfg.data_dir = a.data_dir;
  if (!a.host.empty()) cfg.host = a.host;
  if (a.port >= 0) cfg.port = a.port;
  auto data = std::make_shared<const Dataset>(Dataset::load(DataPaths::in_dir(cfg.data_dir)));
  QueryService svc(data, cfg);
  ServiceHost host(svc);

  // signals go to a dedicated waiter thread, which stops the server cleanly
  sigset_t sigs;
  sigemptyset(&sigs);
  sigaddset(&sigs, SIGINT);
  sigaddset(&sigs, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &sigs, nullptr);
  const int port = host.bind();
  std::cout << "listening on http://" << cfg.host << ':' << port << " (" << data->segments.size() << " segments, "
            << (data->index ? data->index->size() : 0) << " indexed)" << std::endl;
  std::atomic<bool> signalled{false};
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&sigs, &sig);
    if (signalled.exchange(true)) return;
    log::info("service.signal", {{"signal", sig}});
    host.stop();
  });
  host.run();
  // the server may also have stopped on its own; wake the waiter
  if (!signalled.exchange(true)) pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowsem: streamline pattern encoding and text-to-flow retrieval"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  std::function<int()> action;

  {
    static GenFieldArgs a;
    auto* c = app.add_subcommand("gen-field", "Generate an analytic vector field (.meta/.vec)");
    c->add_option("--kind", a.kind, "Field kind")->check(CLI::IsMember(kKinds))->capture_default_str();
    c->add_option("--dims", a.dims, "Grid nodes nx,ny,nz")->expected(3)->delimiter(',')->capture_default_str();
    c->add_option("--min", a.lo, "Domain min corner")->expected(3)->delimiter(',');
    c->add_option("--max", a.hi, "Domain max corner")->expected(3)->delimiter(',');
    c->add_option("--pitch", a.params.pitch, "Axial speed for helix/two_swirls")->capture_default_str();
    c->add_option("--critical-points", a.params.random_critical_points, "Random critical points")->capture_default_str();
    c->add_option("--swirl-radius", a.params.swirl_radius)->capture_default_str();
    c->add_option("--swirl-separation", a.params.swirl_separation)->capture_default_str();
    c->add_option("--seed", a.seed)->capture_default_str();
    c->add_option("--out", a.out, "Output base path")->required();
    c->callback([&] { action = [] { return gen_field(a); }; });
  }
  {
    static TraceArgs a;
    auto* c = app.add_subcommand("trace", "Trace RK4 streamlines from uniform random seeds");
    c->add_option("--field", a.field, "Field base path")->required();
    c->add_option("--seeds", a.seeds)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--step", a.cfg.step)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--max-steps", a.cfg.max_steps)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--min-speed", a.cfg.min_speed)->capture_default_str();
    c->add_option("--direction", a.direction)->check(CLI::IsMember({"forward", "backward", "both"}))->capture_default_str();
    c->add_option("--min-points", a.min_points, "Drop streamlines with fewer points")->capture_default_str();
    c->add_option("--seed", a.seed)->capture_default_str();
    c->add_option("--out", a.out)->required();
    c->callback([&] { action = [] { return trace_cmd(a); }; });
  }
  {
    static SampleArgs a;
    auto* c = app.add_subcommand("sample", "Cut streamlines into hierarchical overlapping segments");
    c->add_option("--streamlines", a.streamlines)->required();
    c->add_option("--levels", a.cfg.levels)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--max-len", a.cfg.max_len)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--overlap", a.cfg.overlap)->check(CLI::Range(0.0, 0.999))->capture_default_str();
    c->add_option("--min-points", a.cfg.min_points)->check(CLI::Range(4, 1 << 20))->capture_default_str();
    c->add_option("--descriptors", a.descriptors, "Also write distance matrices here");
    c->add_option("--out", a.out)->required();
    c->callback([&] { action = [] { return sample_cmd(a); }; });
  }
  {
    static TrainEncoderArgs a;
    static std::vector<int> hidden{256};
    auto* c = app.add_subcommand("train-encoder", "Train the denoising autoencoder on segment descriptors");
    c->add_option("--segments", a.segments, "Segment stores (.seg)");
    c->add_option("--toy-pool", a.toy_pool, "Add this many synthetic segments per toy class")->capture_default_str();
    c->add_option("--epochs", a.cfg.epochs)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--batch", a.cfg.batch)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--lr", a.cfg.lr)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--latent", a.cfg.latent_dim)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--hidden", hidden, "Hidden widths")->delimiter(',');
    c->add_flag("--plain-ae", a.plain_ae, "Train without noise (t = 0)");
    c->add_option("--seed", a.cfg.seed)->capture_default_str();
    c->add_option("--out", a.out)->required();
    c->callback([&] {
      a.cfg.hidden = hidden;
      action = [] { return train_encoder(a); };
    });
  }
  {
    static std::string encoder, out;
    static std::vector<std::string> segments;
    auto* c = app.add_subcommand("encode", "Write latents (id,v0,v1,...) for segments");
    c->add_option("--encoder", encoder)->required();
    c->add_option("--segments", segments)->required();
    c->add_option("--out", out)->required();
    c->callback([&] { action = [] { return encode_cmd(encoder, segments, out); }; });
  }
  {
    static ProbeArgs a;
    auto* c = app.add_subcommand("eval-probe", "Linear-probe accuracy of encoder latents on a synthetic labeled corpus");
    c->add_option("--encoder", a.encoder)->required();
    c->add_option("--classes", a.classes)->delimiter(',')->check(CLI::IsMember(kClasses));
    c->add_option("--per-class", a.per_class)->check(CLI::Range(10, 1 << 20))->capture_default_str();
    c->add_option("--split", a.split)->check(CLI::Range(0.01, 0.99))->capture_default_str();
    c->add_option("--epochs", a.cfg.epochs)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--seed", a.cfg.seed)->capture_default_str();
    c->add_flag("--json", a.json);
    c->callback([&] { action = [] { return eval_probe(a); }; });
  }
  {
    static std::string encoder;
    static std::vector<std::string> segments;
    static UniformityOptions opt;
    auto* c = app.add_subcommand("eval-uniformity", "Uniformity of normalized latents");
    c->add_option("--encoder", encoder)->required();
    c->add_option("--segments", segments)->required();
    c->add_option("--exact-limit", opt.exact_limit)->capture_default_str();
    c->add_option("--pairs", opt.sampled_pairs)->capture_default_str();
    c->add_option("--seed", opt.seed)->capture_default_str();
    c->callback([&] { action = [] { return eval_uniformity(encoder, segments, opt); }; });
  }
  {
    static std::string op = "distance_matrices", json_out;
    static std::vector<std::size_t> counts{10000, 20000, 40000};
    static TimingConfig cfg;
    auto* c = app.add_subcommand("bench-scaling", "Time an operation across dataset sizes");
    c->add_option("--op", op)->check(CLI::IsMember({"distance_matrices", "dae_training"}))->capture_default_str();
    c->add_option("--counts", counts)->delimiter(',');
    c->add_option("--repeats", cfg.repeats)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--epochs", cfg.epochs)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--seed", cfg.seed)->capture_default_str();
    c->add_option("--json", json_out, "Write rows and environment metadata here");
    c->callback([&] { action = [] { return bench_scaling(op, counts, cfg, json_out); }; });
  }
  {
    static TrainMatcherArgs a;
    auto* c = app.add_subcommand("train-matcher", "Train the text/flow matcher (toy caption corpus by default)");
    c->add_option("--encoder", a.encoder)->required();
    c->add_option("--captions", a.captions, "JSON lines {caption, segment_ids}; needs --segments");
    c->add_option("--segments", a.segments);
    c->add_option("--per-class", a.toy.per_class, "Toy corpus segments per class")->capture_default_str();
    c->add_option("--sets-per-class", a.toy.sets_per_class)->capture_default_str();
    c->add_option("--epochs", a.cfg.epochs)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--batch", a.cfg.batch)->check(CLI::Range(2, 1 << 20))->capture_default_str();
    c->add_option("--lr", a.cfg.lr)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--weight-decay", a.cfg.weight_decay)->capture_default_str();
    c->add_option("--common-dim", a.cfg.common_dim)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--embedding-url", a.embedding_url, "External text embedding service");
    c->add_option("--seed", a.cfg.seed)->capture_default_str();
    c->add_option("--out", a.out)->required();
    c->callback([&] {
      if (!a.captions.empty() && a.segments.empty()) throw CLI::ValidationError("--captions", "needs --segments");
      action = [] { return train_matcher_cmd(a); };
    });
  }
  {
    static std::string encoder, matcher, out, source = "hashed_fallback";
    static std::vector<std::string> segments;
    auto* c = app.add_subcommand("build-index", "Pre-encode segments into a match index");
    c->add_option("--encoder", encoder)->required();
    c->add_option("--matcher", matcher)->required();
    c->add_option("--segments", segments)->required();
    c->add_option("--text-source", source)->check(CLI::IsMember({"hashed_fallback", "external_service"}))->capture_default_str();
    c->add_option("--out", out)->required();
    c->callback([&] { action = [] { return build_index_cmd(encoder, matcher, segments, source, out); }; });
  }
  {
    static std::string index, text, url;
    static int k = 10;
    auto* c = app.add_subcommand("query", "Top-k segments for a text query: lines `rank score segment_id`");
    c->add_option("--index", index)->required();
    c->add_option("--text", text)->required();
    c->add_option("--k", k)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--embedding-url", url);
    c->callback([&] { action = [] { return query_cmd(index, text, k, url); }; });
  }
  {
    static GenDataArgs a;
    auto* c = app.add_subcommand("gen-data", "Render views and collect instruction-following samples");
    c->add_option("--segments", a.segments)->required();
    c->add_option("--templates", a.templates, "JSON array of {id, kind, text}");
    c->add_option("--limit", a.limit, "Use at most this many segments");
    c->add_option("--views", a.opt.n_views)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--size", a.opt.image_size)->check(CLI::Range(16, 4096))->capture_default_str();
    c->add_option("--image-dir", a.opt.image_dir);
    c->add_option("--chat-url", a.chat_url);
    c->add_option("--parallel", a.opt.parallelism)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_flag("--dry-run", a.opt.dry_run, "Prompts only, no chat calls");
    c->add_option("--sample-review", a.review, "List this fraction of samples for manual review")
        ->check(CLI::Range(0.0, 1.0));
    c->add_option("--seed", a.opt.seed)->capture_default_str();
    c->add_option("--out", a.out)->required();
    c->callback([&] { action = [] { return gen_data(a); }; });
  }
  {
    static ServeArgs a;
    auto* c = app.add_subcommand("serve", "Run the HTTP query service");
    c->add_option("--config", a.config, "JSON config file");
    c->add_option("--data-dir", a.data_dir);
    c->add_option("--host", a.host);
    c->add_option("--port", a.port)->check(CLI::Range(0, 65535));
    c->callback([&] { action = [] { return serve_cmd(a); }; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  try {
    return action ? action() : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
