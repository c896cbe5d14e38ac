// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
// Usage: acceptance [--only 1,4,7] [--workdir DIR]

#include "flowsem/evalsuite.hpp"
#include "flowsem/image_metrics.hpp"
#include "flowsem/match_index.hpp"
#include "flowsem/service.hpp"
#include "flowsem/toy_corpus.hpp"

#include <CLI11.hpp>
#include <Eigen/Geometry>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sys/wait.h>
#include <thread>

#ifndef FLOWSEM_CLI
#error "FLOWSEM_CLI must point at the built flowsem binary"
#endif
#ifndef FLOWSEM_PIPELINE_SCRIPT
#error "FLOWSEM_PIPELINE_SCRIPT must point at tools/toy_pipeline.sh"
#endif

using namespace flowsem;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [miss]");
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

Eigen::MatrixXd gaussian(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

const std::vector<FlowClass> kProbeClasses{FlowClass::uniform, FlowClass::rotor_helix, FlowClass::critical_points,
                                           FlowClass::two_swirls};

// ---------------------------------------------------------------------------

Verdict rigid_invariance() {
  const auto t0 = Clock::now();
  const auto segs = random_segments(500, 101);
  std::mt19937_64 rng(102);
  std::normal_distribution<double> n(0, 1);
  double worst = 0;
  for (const auto& seg : segs) {
    const auto ref = describe(seg);
    for (int t = 0; t < 100; ++t) {
      const auto r = random_rotation(rng);
      const Vec3 shift(10 * n(rng), 10 * n(rng), 10 * n(rng));
      Segment moved = seg;
      for (auto& p : moved.points) p = r * p + shift;
      const auto m = describe(moved);
      for (std::size_t i = 0; i < m.values.size(); ++i) worst = std::max(worst, std::abs(m.values[i] - ref.values[i]));
    }
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.check(worst < 1e-9, fmt("max deviation %.3g (< 1e-9) over 500 x 100 transforms", worst));
  v.check(secs < 30, fmt("%.1f s (< 30 s)", secs));
  return v;
}

Verdict descriptor_closed_forms() {
  Verdict v;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0, 1);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Vec3 a(n(rng), n(rng), n(rng)), dir = Vec3(n(rng), n(rng), n(rng)).normalized();
    const double len = 0.1 + std::abs(n(rng));
    Segment seg;
    const int pts = 2 + trial * 5;
    for (int i = 0; i < pts; ++i) seg.points.push_back(a + dir * (len * i / (pts - 1)));
    const auto m = describe(seg);
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j) worst = std::max(worst, std::abs(m(i, j) - std::abs(i - j) / 31.0));
  }
  v.check(worst < 1e-12, fmt("straight |i-j|/31 max error %.3g (< 1e-12)", worst));

  const double r = 1.7;
  Segment arc;
  for (int i = 0; i < 64; ++i) {
    const double t = std::numbers::pi * i / 63;
    arc.points.emplace_back(r * std::cos(t), r * std::sin(t), 0.3);
  }
  const double corner = distance_matrix(resample(arc), std::numbers::pi * r)(0, 31);
  v.check(std::abs(corner - 2 / std::numbers::pi) < 1e-6,
          fmt("semicircle (0,31) = %.9f vs 2/pi error %.3g (< 1e-6)", corner, std::abs(corner - 2 / std::numbers::pi)));
  return v;
}

Verdict dae_correctness() {
  const auto t0 = Clock::now();
  Verdict v;
  const DaeShape shape{.input_dim = 16, .hidden = {4}, .latent_dim = 3, .temb_dim = 4};
  BasicDae<double> model(shape, 12);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  BasicDae<double>::Matrix x0(16, 4), xt(16, 4);
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    x0(i) = std::abs(n(rng)) * 0.5;
    xt(i) = x0(i) + 0.3 * n(rng);
  }
  const std::vector<int> t{0, 10, 250, 999};
  model.loss_and_gradient(xt, t, x0);
  const std::vector<double> analytic(model.gradients().begin(), model.gradients().end());
  auto params = model.parameters();
  double worst = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i], h = 1e-5;
    params[i] = orig + h;
    const double up = model.loss_and_gradient(xt, t, x0);
    params[i] = orig - h;
    const double down = model.loss_and_gradient(xt, t, x0);
    params[i] = orig;
    worst = std::max(worst, rel_err((up - down) / (2 * h), analytic[i]));
  }
  v.check(model.parameter_count() <= 200 && worst < 1e-4,
          fmt("gradient max rel err %.3g (< 1e-4) on %zu params", worst, model.parameter_count()));

  // one descriptor, batch 1: each epoch is one optimizer step
  Segment seg;
  for (int i = 0; i < 120; ++i) {
    const double a = 5.0 * i / 119;
    seg.points.emplace_back(std::cos(a), std::sin(a), 0.1 * a);
  }
  const std::vector<DistanceMatrix> one{describe(seg)};
  DaeTrainConfig cfg;
  cfg.epochs = 2000;
  cfg.batch = 1;
  cfg.seed = 4;
  int reached = -1;
  double last = 0;
  cfg.on_epoch = [&](int epoch, double loss) {
    last = loss;
    if (reached < 0 && loss < 1e-4) reached = epoch;
  };
  const auto res = train_dae(one, cfg);
  v.check(reached > 0 && res.steps <= 2000,
          reached > 0 ? fmt("overfit loss < 1e-4 at step %d (<= 2000)", reached)
                      : fmt("overfit loss %.3g after %ld steps", last, res.steps));
  const double secs = seconds_since(t0);
  v.check(secs < 120, fmt("%.1f s (< 120 s)", secs));
  return v;
}

Verdict dae_vs_ae() {
  const auto t0 = Clock::now();
  const auto corpus = generate_labeled_corpus(kProbeClasses, 1250, 1);
  const auto mats = describe_all(corpus.segments);
  std::vector<std::size_t> order(mats.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(5);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<DistanceMatrix> train, test;
  for (std::size_t i = 0; i < order.size(); ++i) (i < 4000 ? train : test).push_back(mats[order[i]]);

  auto fit = [&](bool denoise) {
    DaeTrainConfig cfg;
    cfg.epochs = 100;
    cfg.seed = 3;
    if (!denoise) cfg.t_range = {0};
    const auto model = train_dae(train, cfg).model;
    return batch_metrics(test, reconstruct_batch(model, test));
  };
  const auto dae = fit(true), ae = fit(false);
  const double secs = seconds_since(t0);
  Verdict v;
  v.check(dae.rmse <= ae.rmse, fmt("test RMSE DAE %.5f <= AE %.5f", dae.rmse, ae.rmse));
  v.check(dae.ssim >= 0.95 && ae.ssim >= 0.95, fmt("SSIM DAE %.4f, AE %.4f (>= 0.95)", dae.ssim, ae.ssim));
  v.detail += fmt("; PSNR DAE %.2f, AE %.2f; %zu train / %zu test", dae.psnr, ae.psnr, train.size(), test.size());
  v.check(secs < 1200, fmt("%.0f s (< 1200 s)", secs));
  return v;
}

Verdict linear_probe_check() {
  const auto t0 = Clock::now();
  const auto corpus = generate_labeled_corpus(kProbeClasses, 1000, 1);
  const auto mats = describe_all(corpus.segments);
  auto probe = [&](int latent) {
    DaeTrainConfig cfg;
    cfg.epochs = 100;
    cfg.seed = 1;
    cfg.latent_dim = latent;
    const auto model = train_dae(mats, cfg).model;
    return linear_probe(LabeledFeatureSet{encode_batch(model, mats), corpus.labels, corpus.class_names}, 0.8);
  };
  const double acc16 = probe(16), acc128 = probe(128);
  const double secs = seconds_since(t0);
  Verdict v;
  v.check(acc128 >= 0.85, fmt("held-out accuracy at latent 128 = %.4f (>= 0.85)", acc128));
  v.check(acc128 >= acc16, fmt("latent 128 %.4f >= latent 16 %.4f", acc128, acc16));
  v.check(secs < 1800, fmt("%.0f s (< 1800 s), 4 classes x 1000", secs));
  return v;
}

Verdict uniformity_check() {
  Verdict v;
  const auto f = gaussian(16, 1000, 11);
  long double total = 0;
  for (Eigen::Index i = 0; i < f.cols(); ++i)
    for (Eigen::Index j = 0; j < f.cols(); ++j) {
      const Eigen::VectorXd a = f.col(i).normalized(), b = f.col(j).normalized();
      total += std::exp(-2.0L * static_cast<long double>((a - b).squaredNorm()));
    }
  const double oracle = static_cast<double>(-std::log(total / 1e6L));
  const double got = uniformity(f).value;
  v.check(std::abs(got - oracle) < 1e-9, fmt("n=1000 vs pairwise oracle error %.3g (< 1e-9)", std::abs(got - oracle)));

  Eigen::MatrixXd pair(3, 2);
  pair.col(0) << 0, 0, 1;
  pair.col(1) << 0, 0, -1;
  const double anti = uniformity(pair).value;
  v.check(std::abs(anti - 0.69298) <= 1e-4, fmt("antipodal pair %.6f vs 0.69298 +- 1e-4", anti));

  const double same = 0.0 + uniformity(Eigen::VectorXd::LinSpaced(8, 1, 8).replicate(1, 40)).value;
  v.check(same == 0.0, fmt("all-identical %.3g (== 0)", same));
  return v;
}

Verdict matcher_check() {
  const auto t0 = Clock::now();
  Verdict v;
  const Eigen::MatrixXd text = gaussian(5, 1, 1).replicate(1, 4), flow = gaussian(5, 1, 2).replicate(1, 4);
  const double uniform = infonce_value(text, flow, 0.07);
  v.check(std::abs(uniform - std::log(4.0)) < 1e-9,
          fmt("uniform batch B=4 loss error vs log 4 %.3g (< 1e-9)", std::abs(uniform - std::log(4.0))));

  double worst = 0;
  {
    const Eigen::MatrixXd a = gaussian(3, 3, 7), b = gaussian(3, 3, 8);
    const auto g = infonce_loss(a, b, 0.07);
    const double h = 1e-6;
    for (int which = 0; which < 2; ++which)
      for (Eigen::Index i = 0; i < a.size(); ++i) {
        Eigen::MatrixXd ap = a, am = a, bp = b, bm = b;
        (which ? bp : ap)(i) += h;
        (which ? bm : am)(i) -= h;
        const double fd = (infonce_value(ap, bp, 0.07) - infonce_value(am, bm, 0.07)) / (2 * h);
        worst = std::max(worst, rel_err(fd, which ? g.d_flow(i) : g.d_text(i)));
      }
  }
  {
    const MatcherShape shape{.text_dim = 6, .latent_dim = 5, .common_dim = 4};
    MatcherModel m(shape, 3, 0.5);
    m.set_latent_normalization(gaussian(5, 1, 9).col(0), gaussian(5, 1, 10).col(0).cwiseAbs());
    std::vector<MatchExample> data;
    for (int i = 0; i < 3; ++i)
      data.push_back({gaussian(6, 1, 20 + i).col(0), gaussian(5, 2 + i, 30 + i)});
    std::vector<const MatchExample*> batch;
    for (const auto& e : data) batch.push_back(&e);
    std::vector<double> grad;
    m.loss_and_gradient(batch, grad);
    for (std::size_t p = 0; p < m.parameters().size(); ++p) {
      MatcherModel plus = m, minus = m;
      plus.mutable_parameters()[p] += 1e-6;
      minus.mutable_parameters()[p] -= 1e-6;
      worst = std::max(worst, rel_err((plus.loss(batch) - minus.loss(batch)) / 2e-6, grad[p]));
    }
  }
  v.check(worst < 1e-4, fmt("gradient max rel err %.3g (< 1e-4)", worst));

  const ToyCorpusOptions topt;
  const auto pool = generate_labeled_corpus(topt.classes, 300, 777, topt.fields);
  DaeTrainConfig dc;
  dc.epochs = 30;
  dc.seed = 1;
  const auto encoder = train_dae(describe_all(pool.segments), dc).model;
  const HashedTrigramEmbedder emb;
  double total = 0, lowest = 1;
  std::optional<MatcherModel> first;
  ToyMatchCorpus first_corpus;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto corpus = make_toy_match_corpus(seed, topt);
    MatcherTrainConfig mc;
    mc.epochs = 100;
    mc.batch = 16;
    mc.lr = 1e-3;
    mc.weight_decay = 0.1;
    mc.seed = seed;
    const auto res = train_matcher(corpus.training, encoder, emb, mc);
    std::vector<int> labels;
    const auto held = prepare_examples(held_out_sets(corpus, topt.set_size, &labels), encoder, emb);
    const double acc = in_batch_retrieval_top1(res.model, held, labels);
    total += acc;
    lowest = std::min(lowest, acc);
    if (!first) {
      first = res.model;
      first_corpus = corpus;
    }
  }
  v.check(total / 10 >= 0.9, fmt("held-out top-1 mean over 10 seeds %.3f (>= 0.9), worst seed %.3f", total / 10, lowest));

  // query against an exhaustive scan computed here from the stored f32 embeddings
  auto segs = first_corpus.test_segments;
  for (std::size_t i = 0; i < segs.size(); ++i) segs[i].id = static_cast<std::int64_t>(segs.size() - i);
  const auto index = build_index(segs, encoder, *first);
  bool same = true;
  for (const auto& cls : first_corpus.classes)
    for (const auto& caption : class_captions(cls)) {
      const int k = static_cast<int>(index.size());
      const auto got = query(index, emb, caption, k);
      Eigen::VectorXd q = first->text_weight().cast<float>().cast<double>() * embed_text_fallback(caption).vector +
                          first->text_bias().cast<float>().cast<double>();
      q.normalize();
      std::vector<std::pair<double, std::int64_t>> all;
      for (std::size_t r = 0; r < index.size(); ++r) {
        double s = 0;
        for (int d = 0; d < index.common_dim(); ++d) s += q[d] * static_cast<double>(index.embedding(r)[d]);
        all.emplace_back(s, index.ids()[r]);
      }
      std::sort(all.begin(), all.end(),
                [](auto& x, auto& y) { return x.first != y.first ? x.first > y.first : x.second < y.second; });
      same = same && got.size() == all.size();
      for (std::size_t i = 0; same && i < got.size(); ++i)
        same = got[i].segment_id == all[i].second && got[i].score == all[i].first;
    }
  v.check(same, "query equals brute-force scan for every caption");
  const double secs = seconds_since(t0);
  v.check(secs < 600, fmt("%.0f s (< 600 s)", secs));
  return v;
}

Verdict scaling_check() {
  TimingConfig cfg;
  cfg.repeats = 3;
  cfg.seed = 8;
  const auto rows = timing_scaling({10000, 20000, 40000}, TimedOp::distance_matrices, cfg);
  Verdict v;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double ratio = rows[i].seconds / rows[i - 1].seconds;
    v.check(ratio <= 2.5, fmt("t(%zu)/t(%zu) = %.3f (<= 2.5)", rows[i].count, rows[i - 1].count, ratio));
  }
  v.detail += fmt("; times %.3f / %.3f / %.3f s", rows[0].seconds, rows[1].seconds, rows[2].seconds);
  return v;
}

int exit_code_of(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Verdict service_contract(const fs::path& workdir) {
  Verdict v;
  const auto dir = workdir / "pipeline";
  fs::remove_all(dir);
  const auto t0 = Clock::now();
  const int rc = exit_code_of(std::string(FLOWSEM_PIPELINE_SCRIPT) + " " + FLOWSEM_CLI + " " + dir.string() +
                              " > " + (workdir / "pipeline.log").string() + " 2>&1");
  const double secs = seconds_since(t0);
  v.check(rc == 0 && secs < 900, fmt("pipeline script exit %d in %.1f s (< 900 s)", rc, secs));
  if (rc != 0) return v;

  log::set_level(log::Level::off);
  auto data = std::make_shared<const Dataset>(Dataset::load(DataPaths::in_dir(dir.string())));
  ServiceConfig cfg;
  cfg.port = 0;
  cfg.max_body_bytes = 4096;
  QueryService svc(data, cfg);
  ServiceHost host(svc);
  httplib::Client c("127.0.0.1", host.bind());
  std::thread th([&] { host.run(); });
  host.wait_until_ready();

  const std::string body = R"({"text":"spiral vortex","k":20})";
  const auto a = c.Post("/query", body, "application/json");
  const auto b = c.Post("/query", body, "application/json");
  bool det = a && b && a->status == 200 && a->body == b->body;
  if (det) {
    const auto j = nlohmann::json::parse(a->body)["results"];
    det = j.size() == 20;
    for (std::size_t i = 1; det && i < j.size(); ++i) det = j[i - 1]["score"] >= j[i]["score"];
  }
  v.check(det, "identical /query requests give byte-identical 20-result bodies");

  std::vector<std::string> wrong;
  auto expect = [&](const char* what, const httplib::Result& r, int status, const char* error = nullptr) {
    bool ok = r && r->status == status;
    if (ok && error) ok = nlohmann::json::parse(r->body).value("error", "") == error;
    if (!ok) wrong.push_back(std::string(what) + "=" + (r ? std::to_string(r->status) : "none"));
  };
  expect("health", c.Get("/health"), 200);
  expect("empty text", c.Post("/query", R"({"text":""})", "application/json"), 400, "EmptyQuery");
  expect("k=0", c.Post("/query", R"({"text":"vortex","k":0})", "application/json"), 400, "BadParam");
  expect("bad json", c.Post("/query", "{nope", "application/json"), 400);
  const std::string big(8192, ' ');
  for (const char* path : {"/query", "/chat", "/tags"}) expect(path, c.Post(path, big, "application/json"), 413);
  expect("unknown segment", c.Get("/segments/987654321"), 404);
  expect("chat without endpoint", c.Post("/chat", R"({"message":"hello"})", "application/json"), 503,
         "ServiceUnavailable");
  host.stop();
  th.join();

  QueryService no_index(std::make_shared<const Dataset>(
                            Dataset::assemble(data->field, data->streamlines, data->segments, std::nullopt)),
                        cfg);
  const auto r = no_index.query(R"({"text":"vortex"})");
  if (r.status != 503 || nlohmann::json::parse(r.body).value("error", "") != "EmptyIndex")
    wrong.push_back("empty index=" + std::to_string(r.status));

  const std::string quiet = " > /dev/null 2>&1";
  if (exit_code_of(std::string(FLOWSEM_CLI) + " frobnicate" + quiet) != 2) wrong.push_back("cli unknown subcommand");
  if (exit_code_of(std::string(FLOWSEM_CLI) + " query --text vortex" + quiet) != 2) wrong.push_back("cli missing option");
  if (exit_code_of(std::string(FLOWSEM_CLI) + " query --index /nonexistent.fsi --text vortex" + quiet) != 1)
    wrong.push_back("cli runtime error");

  std::string list;
  for (const auto& w : wrong) list += (list.empty() ? "" : ", ") + w;
  v.check(wrong.empty(), wrong.empty() ? "error codes 400/404/413/503 and CLI exits 1/2 as documented"
                                       : "unexpected: " + list);
  log::set_level(log::Level::info);
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowsem acceptance run"};
  std::vector<int> only;
  std::string workdir = (fs::temp_directory_path() / "flowsem_acceptance").string();
  app.add_option("--only", only, "Run only these criteria")->delimiter(',')->check(CLI::Range(1, 9));
  app.add_option("--workdir", workdir);
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);

  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"rigid invariance", rigid_invariance},
      {"descriptor closed forms", descriptor_closed_forms},
      {"DAE correctness", dae_correctness},
      {"DAE vs AE reconstruction ordering", dae_vs_ae},
      {"linear probe", linear_probe_check},
      {"uniformity", uniformity_check},
      {"matcher", matcher_check},
      {"distance-matrix scaling", scaling_check},
      {"service contract", [&] { return service_contract(workdir); }},
  };
  const std::set<int> chosen(only.begin(), only.end());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!chosen.empty() && !chosen.contains(n)) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("threw: ") + e.what();
    }
    failed += !v.pass;
    std::printf("AC%d %s  %s: %s  (%.1f s)\n", n, v.pass ? "PASS" : "FAIL", criteria[i].first, v.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
