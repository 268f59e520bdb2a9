#pragma once

// Concept grounding: per-concept attention over video regions, concept
// classifiers, indicator generation, and subject/predicate spatial agreement.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "weakcap/binary_io.hpp"
#include "weakcap/corpusio.hpp"
#include "weakcap/errors.hpp"
#include "weakcap/rng.hpp"

namespace weakcap {

enum class Stream : std::uint8_t { Object = 'o', Action = 'a' };

inline Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const double mx = z.maxCoeff();
  Eigen::VectorXd e = (z.array() - mx).exp().matrix();
  return e / e.sum();
}

struct FeatureMap {
  Stream stream = Stream::Object;
  Eigen::MatrixXd regions;  // q x d

  Eigen::Index q() const { return regions.rows(); }
  Eigen::Index d() const { return regions.cols(); }
};

/// Attention transform T (d x h) and the softmax classifier for one stream.
struct StreamParams {
  Eigen::MatrixXd transform;
  Eigen::MatrixXd classifier;  // N x d
  Eigen::VectorXd bias;        // N

  static StreamParams zeros(Eigen::Index d, Eigen::Index h, Eigen::Index n) {
    return StreamParams{Eigen::MatrixXd::Zero(d, h), Eigen::MatrixXd::Zero(n, d), Eigen::VectorXd::Zero(n)};
  }
};

struct AttentionParams {
  StreamParams object;
  StreamParams action;

  StreamParams& operator[](Stream k) { return k == Stream::Object ? object : action; }
  const StreamParams& operator[](Stream k) const { return k == Stream::Object ? object : action; }

  static AttentionParams zeros(Eigen::Index d, Eigen::Index h, Eigen::Index n_obj, Eigen::Index n_act) {
    return AttentionParams{StreamParams::zeros(d, h, n_obj), StreamParams::zeros(d, h, n_act)};
  }

  /// Small seeded gaussian initialisation of every tensor.
  static AttentionParams random(Eigen::Index d, Eigen::Index h, Eigen::Index n_obj, Eigen::Index n_act,
                                std::uint64_t seed, double scale = 0.1) {
    AttentionParams p = zeros(d, h, n_obj, n_act);
    Rng rng(derive_seed(seed, 0x4D31ULL));
    for (auto* s : {&p.object, &p.action}) {
      for (Eigen::Index i = 0; i < s->transform.size(); ++i) s->transform.data()[i] = scale * rng.normal();
      for (Eigen::Index i = 0; i < s->classifier.size(); ++i) s->classifier.data()[i] = scale * rng.normal();
    }
    return p;
  }
};

struct Attended {
  Eigen::VectorXd feature;  // d
  Eigen::VectorXd alpha;    // q, on the simplex
};

/// alpha = softmax(F T e); feature = F^T alpha.
inline Attended attend(const Eigen::MatrixXd& fmap, const Eigen::VectorXd& embedding,
                       const Eigen::MatrixXd& transform) {
  require_shape(fmap.rows() >= 1, "attend: feature map has no regions");
  require_shape(transform.rows() == fmap.cols() && transform.cols() == embedding.size(),
                "attend: transform is " + std::to_string(transform.rows()) + "x" +
                    std::to_string(transform.cols()) + ", feature map d=" + std::to_string(fmap.cols()) +
                    ", embedding h=" + std::to_string(embedding.size()));
  Attended out;
  out.alpha = softmax(fmap * (transform * embedding));
  out.feature = fmap.transpose() * out.alpha;
  return out;
}

inline Attended attend(const FeatureMap& fmap, const Eigen::VectorXd& embedding, const StreamParams& params) {
  return attend(fmap.regions, embedding, params.transform);
}

inline Eigen::VectorXd concept_probabilities(const Eigen::VectorXd& attended, const StreamParams& params) {
  require_shape(params.classifier.cols() == attended.size(), "concept_probabilities: dimension mismatch");
  return softmax(params.classifier * attended + params.bias);
}

/// Half the L1 distance between two attention distributions, in [0, 1].
inline double spatial_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  require_shape(a.size() == b.size(), "spatial_distance: length mismatch");
  return 0.5 * (a - b).cwiseAbs().sum();
}

struct ConceptThresholds {
  double probability = 0.99;  // theta_c
  double spatial = 0.1;       // delta

  void validate() const {
    if (!(probability > 0.0 && probability <= 1.0)) throw ArgumentError("concept threshold must lie in (0, 1]");
    if (!(spatial >= 0.0 && spatial <= 1.0)) throw ArgumentError("spatial threshold must lie in [0, 1]");
  }
};

using Indicator = std::vector<std::uint8_t>;

struct VideoRecord {
  std::string video_id;
  Eigen::MatrixXd object_map;  // f^o(v)
  Eigen::MatrixXd action_map;  // f^a(v)
  Eigen::VectorXd global;      // x
  std::optional<Phrase> annotation;
  Indicator object_indicator;  // g-hat^o
  Indicator action_indicator;  // g-hat^a
  std::map<std::size_t, Eigen::VectorXd> object_alpha;
  std::map<std::size_t, Eigen::VectorXd> action_alpha;

  const Eigen::MatrixXd& map(Stream k) const { return k == Stream::Object ? object_map : action_map; }
  Indicator& indicator(Stream k) { return k == Stream::Object ? object_indicator : action_indicator; }
  const Indicator& indicator(Stream k) const { return k == Stream::Object ? object_indicator : action_indicator; }
  std::map<std::size_t, Eigen::VectorXd>& alpha(Stream k) { return k == Stream::Object ? object_alpha : action_alpha; }
  const std::map<std::size_t, Eigen::VectorXd>& alpha(Stream k) const {
    return k == Stream::Object ? object_alpha : action_alpha;
  }
};

struct ConceptIndicators {
  Indicator object;
  Indicator action;
};

inline const std::vector<std::string>& concepts_of(const ConceptVocabulary& vocab, Stream k) {
  return k == Stream::Object ? vocab.objects : vocab.actions;
}

/// Probability that concept i is present, read off the classifier output at
/// position i after attending with the concept's own embedding.
inline double self_probability(const Eigen::MatrixXd& fmap, const Eigen::VectorXd& embedding,
                               const StreamParams& params, std::size_t i, Eigen::VectorXd* alpha = nullptr) {
  const Attended att = attend(fmap, embedding, params.transform);
  if (alpha) *alpha = att.alpha;
  return concept_probabilities(att.feature, params)[static_cast<Eigen::Index>(i)];
}

/// g[i] = 1 iff p[i] >= theta_c.
inline Indicator threshold_concepts(const std::vector<double>& self_probs, double theta) {
  Indicator g(self_probs.size(), 0);
  for (std::size_t i = 0; i < self_probs.size(); ++i) g[i] = self_probs[i] >= theta ? 1 : 0;
  return g;
}

/// Indicators from each concept's self-probability. Attention weights of
/// every selected concept are cached on the video, replacing any earlier cache.
inline ConceptIndicators generate_concepts(VideoRecord& video, const ConceptVocabulary& vocab,
                                           const AttentionParams& params, const ConceptThresholds& thresholds) {
  ConceptIndicators out;
  video.object_alpha.clear();
  video.action_alpha.clear();
  for (Stream k : {Stream::Object, Stream::Action}) {
    const auto& names = concepts_of(vocab, k);
    std::vector<double> probs(names.size());
    std::vector<Eigen::VectorXd> alphas(names.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
      probs[i] = self_probability(video.map(k), vocab.embedding(names[i]), params[k], i, &alphas[i]);
    }
    Indicator g = threshold_concepts(probs, thresholds.probability);
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (g[i]) video.alpha(k)[i] = std::move(alphas[i]);
    }
    (k == Stream::Object ? out.object : out.action) = std::move(g);
  }
  return out;
}

/// Fill the attention cache for every active indicator that lacks one.
inline void cache_active_alphas(VideoRecord& video, const ConceptVocabulary& vocab, const AttentionParams& params) {
  for (Stream k : {Stream::Object, Stream::Action}) {
    const auto& names = concepts_of(vocab, k);
    const auto& ind = video.indicator(k);
    for (std::size_t i = 0; i < ind.size() && i < names.size(); ++i) {
      if (!ind[i] || video.alpha(k).contains(i)) continue;
      video.alpha(k)[i] = attend(video.map(k), vocab.embedding(names[i]), params[k].transform).alpha;
    }
  }
}

// ---------------------------------------------------------------------------
// Concept loss
// ---------------------------------------------------------------------------

inline constexpr double kProbabilityFloor = 1e-12;

struct ConceptLoss {
  double loss = 0.0;
  AttentionParams gradients;
  std::size_t clamped = 0;  // terms whose probability hit the floor
};

/// L_m = -1/(N_v (N^o + N^a)) sum_v sum_k sum_i g-hat^k[i] log p_i^k[i].
inline ConceptLoss concept_loss(const std::vector<const VideoRecord*>& batch, const ConceptVocabulary& vocab,
                                const AttentionParams& params) {
  ConceptLoss out;
  out.gradients = AttentionParams::zeros(params.object.transform.rows(), params.object.transform.cols(),
                                         params.object.classifier.rows(), params.action.classifier.rows());
  const std::size_t n_concepts = vocab.num_objects() + vocab.num_actions();
  if (batch.empty() || n_concepts == 0) return out;
  const double w = 1.0 / (static_cast<double>(batch.size()) * static_cast<double>(n_concepts));

  for (const VideoRecord* video : batch) {
    for (Stream k : {Stream::Object, Stream::Action}) {
      const auto& names = concepts_of(vocab, k);
      const auto& ind = video->indicator(k);
      require_shape(ind.size() == names.size(), "concept_loss: indicator length does not match vocabulary");
      const StreamParams& sp = params[k];
      StreamParams& gp = out.gradients[k];
      const Eigen::MatrixXd& fmap = video->map(k);
      for (std::size_t i = 0; i < names.size(); ++i) {
        if (!ind[i]) continue;
        const Eigen::VectorXd& e = vocab.embedding(names[i]);
        const Eigen::VectorXd te = sp.transform * e;
        const Eigen::VectorXd alpha = softmax(fmap * te);
        const Eigen::VectorXd s = fmap.transpose() * alpha;
        const Eigen::VectorXd p = softmax(sp.classifier * s + sp.bias);
        const auto ii = static_cast<Eigen::Index>(i);
        double pi = p[ii];
        if (pi < kProbabilityFloor) {
          pi = kProbabilityFloor;
          ++out.clamped;
        }
        out.loss -= w * std::log(pi);

        Eigen::VectorXd dz = w * p;
        dz[ii] -= w;
        gp.classifier.noalias() += dz * s.transpose();
        gp.bias += dz;
        const Eigen::VectorXd ds = sp.classifier.transpose() * dz;
        const Eigen::VectorXd dalpha = fmap * ds;
        const Eigen::VectorXd dl = (alpha.array() * (dalpha.array() - alpha.dot(dalpha))).matrix();
        gp.transform.noalias() += (fmap.transpose() * dl) * e.transpose();
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files: feature maps ("WCFM"), global features ("WCGF"), weak annotations
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kFeatureMapVersion = 1;

inline void write_feature_map(std::ostream& out, const FeatureMap& fm) {
  using namespace binio;
  write_magic(out, "WCFM");
  write_u32(out, kFeatureMapVersion);
  write_u8(out, static_cast<std::uint8_t>(fm.stream));
  write_u32(out, static_cast<std::uint32_t>(fm.q()));
  write_u32(out, static_cast<std::uint32_t>(fm.d()));
  for (Eigen::Index r = 0; r < fm.q(); ++r) {
    for (Eigen::Index c = 0; c < fm.d(); ++c) write_f32(out, static_cast<float>(fm.regions(r, c)));
  }
}

inline FeatureMap read_feature_map(std::istream& in) {
  using namespace binio;
  expect_magic(in, "WCFM");
  const auto version = read_u32(in, "WCFM version");
  if (version != kFeatureMapVersion) throw IngestError("unsupported WCFM version " + std::to_string(version));
  FeatureMap fm;
  const auto tag = read_u8(in, "WCFM stream");
  if (tag != 'o' && tag != 'a') throw IngestError("WCFM stream tag must be 'o' or 'a'");
  fm.stream = static_cast<Stream>(tag);
  const auto q = read_u32(in, "WCFM q");
  const auto d = read_u32(in, "WCFM d");
  if (q == 0 || d == 0) throw IngestError("WCFM feature map must have q >= 1 and d >= 1");
  fm.regions.resize(q, d);
  for (std::uint32_t r = 0; r < q; ++r) {
    for (std::uint32_t c = 0; c < d; ++c) {
      const float v = read_f32(in, "WCFM data");
      if (!std::isfinite(v)) throw IngestError("WCFM feature map contains a non-finite value");
      fm.regions(r, c) = v;
    }
  }
  return fm;
}

inline void write_global_feature(std::ostream& out, const Eigen::VectorXd& x) {
  using namespace binio;
  write_magic(out, "WCGF");
  write_u32(out, static_cast<std::uint32_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) write_f32(out, static_cast<float>(x[i]));
}

inline Eigen::VectorXd read_global_feature(std::istream& in) {
  using namespace binio;
  expect_magic(in, "WCGF");
  const auto n = read_u32(in, "WCGF dim");
  Eigen::VectorXd x(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const float v = read_f32(in, "WCGF data");
    if (!std::isfinite(v)) throw IngestError("WCGF global feature contains a non-finite value");
    x[i] = v;
  }
  return x;
}

inline FeatureMap read_feature_map_file(const std::string& path) {
  auto in = binio::open_in(path);
  return read_feature_map(in);
}

inline Eigen::VectorXd read_global_feature_file(const std::string& path) {
  auto in = binio::open_in(path);
  return read_global_feature(in);
}

/// "video_id<TAB>lemma<TAB>o|a" lines, in file order.
inline std::vector<std::pair<std::string, Phrase>> parse_annotations(std::string_view content) {
  std::vector<std::pair<std::string, Phrase>> out;
  std::size_t lineno = 0;
  for (const auto& raw : text::split(content, '\n')) {
    ++lineno;
    const auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto cols = text::split(line, '\t');
    if (cols.size() != 3 || cols[0].empty() || cols[1].empty() || (cols[2] != "o" && cols[2] != "a")) {
      throw IngestError("annotation line " + std::to_string(lineno) + ": expected video_id<TAB>lemma<TAB>o|a");
    }
    const auto lemma = text::lower(cols[1]);
    out.emplace_back(cols[0], cols[2] == "o" ? Phrase::make_noun(lemma) : Phrase::make_verb(lemma));
  }
  return out;
}

/// Indicator with the annotated concept set, sized to the vocabulary.
inline void seed_indicators(VideoRecord& video, const ConceptVocabulary& vocab) {
  video.object_indicator.assign(vocab.num_objects(), 0);
  video.action_indicator.assign(vocab.num_actions(), 0);
  if (!video.annotation) return;
  const Phrase& a = *video.annotation;
  if (a.has_noun()) {
    const auto i = vocab.object_index(*a.noun);
    if (!i) throw ArgumentError("annotation '" + *a.noun + "' of " + video.video_id + " is not in the vocabulary");
    video.object_indicator[*i] = 1;
  }
  if (a.has_verb()) {
    const auto i = vocab.action_index(*a.verb);
    if (!i) throw ArgumentError("annotation '" + *a.verb + "' of " + video.video_id + " is not in the vocabulary");
    video.action_indicator[*i] = 1;
  }
}

}  // namespace weakcap
