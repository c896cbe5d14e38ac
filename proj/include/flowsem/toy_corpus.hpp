#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "flowsem/matcher.hpp"
#include "flowsem/synthetic_corpus.hpp"

namespace flowsem {

/// Short descriptions per pattern class; the first one is the class's canonical caption.
inline const std::vector<std::string>& class_captions(FlowClass c) {
  static const std::vector<std::string> uniform{"straight laminar flow", "uniform parallel streamlines",
                                                "steady straight current"};
  static const std::vector<std::string> rotor{"circular vortex rotation", "closed circulation loop",
                                              "flat swirling ring"};
  static const std::vector<std::string> helix{"helical spiral vortex", "corkscrew spiral climbing upward",
                                              "twisting helix advection"};
  static const std::vector<std::string> rotor_helix{"rotating vortex with spiral motion", "swirling circulation",
                                                    "spinning vortex tube"};
  static const std::vector<std::string> critical{"saddle near a critical point", "flow diverging from a source",
                                                 "streamlines bending around a saddle"};
  static const std::vector<std::string> swirls{"two counter rotating eddies", "pair of opposite swirls",
                                               "twin eddies with shear between them"};
  switch (c) {
    case FlowClass::uniform: return uniform;
    case FlowClass::rotor: return rotor;
    case FlowClass::helix: return helix;
    case FlowClass::rotor_helix: return rotor_helix;
    case FlowClass::critical_points: return critical;
    case FlowClass::two_swirls: return swirls;
  }
  fail(ErrorCode::BadParam, "unknown flow class");
}

/// Caption/segment corpus over a few pattern classes with a held-out slice of segments per class.
struct ToyMatchCorpus {
  std::vector<FlowClass> classes;
  std::vector<Segment> train_segments, test_segments;
  std::vector<int> train_labels, test_labels;
  std::vector<CaptionedSegments> training;
};

struct ToyCorpusOptions {
  std::vector<FlowClass> classes{FlowClass::uniform, FlowClass::rotor, FlowClass::helix, FlowClass::critical_points,
                                 FlowClass::two_swirls};
  std::size_t per_class = 40;
  double holdout = 0.2;
  std::size_t set_size = 4;
  std::size_t sets_per_class = 64;
  /// Steep helices and shallow swirls keep the two classes' core segments apart.
  CorpusOptions fields{.helix_pitch = {1.0, 1.5}, .swirl_pitch = {0.1, 0.25}};
};

inline ToyMatchCorpus make_toy_match_corpus(std::uint64_t seed, const ToyCorpusOptions& opt = {}) {
  require(opt.classes.size() >= 2, ErrorCode::BadParam, "toy corpus needs >= 2 classes");
  require(opt.holdout > 0 && opt.holdout < 1 && opt.set_size >= 1, ErrorCode::BadParam, "bad toy corpus options");
  const auto test_n = static_cast<std::size_t>(std::llround(opt.holdout * static_cast<double>(opt.per_class)));
  require(test_n >= 1 && test_n < opt.per_class, ErrorCode::BadParam, "holdout leaves an empty partition");
  const auto labeled = generate_labeled_corpus(opt.classes, opt.per_class, seed, opt.fields);

  ToyMatchCorpus out;
  out.classes = opt.classes;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t c = 0; c < opt.classes.size(); ++c) {
    std::vector<Segment> train;
    for (std::size_t i = 0; i < opt.per_class; ++i) {
      const auto& seg = labeled.segments[c * opt.per_class + i];
      if (i < test_n) {
        out.test_segments.push_back(seg);
        out.test_labels.push_back(static_cast<int>(c));
      } else {
        train.push_back(seg);
        out.train_segments.push_back(seg);
        out.train_labels.push_back(static_cast<int>(c));
      }
    }
    const auto& captions = class_captions(opt.classes[c]);
    for (std::size_t k = 0; k < opt.sets_per_class; ++k) {
      std::shuffle(train.begin(), train.end(), rng);
      CaptionedSegments cs;
      cs.caption = captions[rng() % captions.size()];
      cs.segments.assign(train.begin(), train.begin() + static_cast<long>(std::min(opt.set_size, train.size())));
      out.training.push_back(std::move(cs));
    }
  }
  return out;
}

/// Fraction of segments whose best-scoring canonical class caption (cosine in the shared space) is their own.
inline double caption_retrieval_top1(const MatcherModel& model, const TextEmbedder& embedder,
                                     const Eigen::MatrixXd& latents, const std::vector<int>& labels,
                                     const std::vector<FlowClass>& classes) {
  require(latents.cols() == static_cast<Eigen::Index>(labels.size()), ErrorCode::ShapeMismatch,
          "latents and labels differ in count");
  Eigen::MatrixXd text(model.shape().common_dim, static_cast<Eigen::Index>(classes.size()));
  for (std::size_t c = 0; c < classes.size(); ++c)
    text.col(static_cast<Eigen::Index>(c)) =
        model.project_text(embedder.embed_one(class_captions(classes[c]).front()).vector).normalized();
  Eigen::MatrixXd flow = model.project_flow(latents);
  flow.colwise().normalize();
  const Eigen::MatrixXd scores = text.transpose() * flow;
  std::size_t hits = 0;
  for (Eigen::Index j = 0; j < scores.cols(); ++j) {
    Eigen::Index best = 0;
    scores.col(j).maxCoeff(&best);
    hits += static_cast<int>(best) == labels[static_cast<std::size_t>(j)];
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Held-out (caption, segment set) pairs: the test segments of each class split into sets of `set_size`,
/// each paired with the class's canonical caption.
inline std::vector<CaptionedSegments> held_out_sets(const ToyMatchCorpus& corpus, std::size_t set_size,
                                                    std::vector<int>* labels = nullptr) {
  require(set_size >= 1, ErrorCode::BadParam, "set size must be >= 1");
  std::vector<CaptionedSegments> out;
  for (std::size_t c = 0; c < corpus.classes.size(); ++c) {
    std::vector<Segment> members;
    for (std::size_t i = 0; i < corpus.test_segments.size(); ++i)
      if (corpus.test_labels[i] == static_cast<int>(c)) members.push_back(corpus.test_segments[i]);
    for (std::size_t s = 0; s + set_size <= members.size(); s += set_size) {
      out.push_back({class_captions(corpus.classes[c]).front(),
                     std::vector<Segment>(members.begin() + static_cast<long>(s),
                                          members.begin() + static_cast<long>(s + set_size))});
      if (labels) labels->push_back(static_cast<int>(c));
    }
  }
  return out;
}

/// In-batch text-to-flow retrieval: caption i scores every set j by the cosine between its projection and
/// the set's aggregate under its own query; a hit is a best set of the caption's class.
inline double in_batch_retrieval_top1(const MatcherModel& model, const std::vector<MatchExample>& batch,
                                      const std::vector<int>& labels) {
  require(batch.size() == labels.size() && batch.size() >= 2, ErrorCode::BadParam, "bad retrieval batch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Eigen::VectorXd c = model.project_text(batch[i].text).normalized();
    double best = -2.0;
    std::size_t arg = 0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const double s = c.dot(model.aggregate(batch[i].text, batch[j].latents).normalized());
      if (s > best) best = s, arg = j;
    }
    hits += labels[arg] == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(batch.size());
}

}  // namespace flowsem
