#pragma once

// Helpers shared by the unit suites and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "weakcap/captioner.hpp"
#include "weakcap/corpusio.hpp"
#include "weakcap/grounding.hpp"
#include "weakcap/kglink.hpp"
#include "weakcap/rng.hpp"
#include "weakcap/tensors.hpp"

namespace weakcap::testing {

struct Tok {
  std::string lemma;
  std::string upos;
  int head;
  std::string deprel;
};

/// Sentence from (lemma, upos, head, deprel) rows; surface = lemma.
inline ParsedSentence sentence(const std::vector<Tok>& rows, const std::string& id = "s") {
  ParsedSentence s;
  s.source_id = id;
  int i = 0;
  for (const auto& r : rows) s.tokens.push_back(TokenRow{++i, r.lemma, r.lemma, r.upos, r.head, r.deprel});
  return s;
}

/// "man ride bike [on street]"
inline ParsedSentence man_ride_bike(bool with_street) {
  std::vector<Tok> rows{{"man", "NOUN", 2, "nsubj"}, {"ride", "VERB", 0, "root"}, {"bike", "NOUN", 2, "obj"}};
  if (with_street) {
    rows.push_back({"on", "ADP", 5, "case"});
    rows.push_back({"street", "NOUN", 2, "obl"});
  }
  return sentence(rows);
}

inline Eigen::VectorXd random_vector(Rng& rng, Eigen::Index n, double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

inline Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

/// Vocabulary with seeded gaussian embeddings for every lemma.
inline ConceptVocabulary make_vocab(std::vector<std::string> objects, std::vector<std::string> actions,
                                    std::vector<std::string> relations, int dim, std::uint64_t seed) {
  std::sort(objects.begin(), objects.end());
  std::sort(actions.begin(), actions.end());
  std::sort(relations.begin(), relations.end());
  ConceptVocabulary v;
  v.objects = objects;
  v.actions = actions;
  v.relations = relations;
  v.embedding_dim = dim;
  Rng rng(seed);
  for (const auto* list : {&v.objects, &v.actions, &v.relations}) {
    for (const auto& l : *list) v.embeddings[l] = random_vector(rng, dim);
  }
  return v;
}

inline std::vector<std::string> numbered(const std::string& prefix, int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

struct FdReport {
  double max_rel = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdFloor = 1e-5;  // step 1e-5 cannot resolve smaller entries: roundoff is about eps*|L|/h

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kFdFloor});
}

/// Central differences of loss() against every entry of the given tensors.
inline FdReport fd_check(const std::vector<TensorView>& params, const std::vector<TensorView>& grads,
                         const std::function<double()>& loss, double step = kFdStep) {
  FdReport rep;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (Eigen::Index i = 0; i < params[t].size(); ++i) {
      double& x = params[t].data[i];
      const double saved = x;
      x = saved + step;
      const double up = loss();
      x = saved - step;
      const double down = loss();
      x = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(grads[t].data[i], numeric);
      ++rep.checked;
      if (err > rep.max_rel) {
        rep.max_rel = err;
        rep.worst = params[t].name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return rep;
}

/// View over a complex vector as interleaved (re, im) doubles.
inline TensorView complex_view(const std::string& name, ComplexVec& v) {
  return TensorView{name, reinterpret_cast<double*>(v.data()), 2 * v.size(), 1};
}

inline std::vector<TensorView> kg_views(KgModel& m) {
  std::vector<TensorView> out;
  for (std::size_t i = 0; i < m.entities.size(); ++i) out.push_back(complex_view("ent" + std::to_string(i), m.entities[i]));
  for (std::size_t r = 0; r < m.relations.size(); ++r) out.push_back(view_of("rel" + std::to_string(r), m.relations[r].theta));
  out.push_back(view_of("gate.w", m.gate.weight));
  out.push_back(view_of("gate.b", m.gate.bias));
  return out;
}

inline std::vector<TensorView> kg_views(KgGradients& g) {
  std::vector<TensorView> out;
  for (std::size_t i = 0; i < g.entities.size(); ++i) out.push_back(complex_view("ent" + std::to_string(i), g.entities[i]));
  for (std::size_t r = 0; r < g.phases.size(); ++r) out.push_back(view_of("rel" + std::to_string(r), g.phases[r]));
  out.push_back(view_of("gate.w", g.gate_weight));
  out.push_back(view_of("gate.b", g.gate_bias));
  return out;
}

// ---------------------------------------------------------------------------
// Tiny random instances
// ---------------------------------------------------------------------------

/// Random KG over a few objects/actions with composite and simple heads.
struct KgInstance {
  KgModel model;
  std::vector<KgSample> batch;
};

inline KgInstance random_kg_instance(std::uint64_t seed, int dim = 3) {
  Rng rng(seed);
  std::vector<Triplet> triplets{
      {Phrase::make_noun_verb("man", "ride"), "obj", Phrase::make_noun("bike")},
      {Phrase::make_noun_verb("dog", "chase"), "obj", Phrase::make_noun("cat")},
      {Phrase::make_noun_verb("man", "ride"), "on", Phrase::make_noun("street")},
      {Phrase::make_verb("run"), "in", Phrase::make_noun("park")},
      {Phrase::make_noun("cat"), "on", Phrase::make_noun("street")},
  };
  KgTrainConfig cfg;
  cfg.dim = dim;
  cfg.gamma = 2.0 + rng.uniform();
  cfg.seed = seed;
  KgInstance inst;
  inst.model = init_kg(triplets, nullptr, cfg);
  inst.model.gate.weight = random_matrix(rng, dim, 6 * dim, 0.5);
  inst.model.gate.bias = random_vector(rng, dim, 0.5);
  std::vector<EncodedTriplet> pos;
  for (const auto& t : triplets) pos.push_back(*inst.model.encode(t));
  for (const auto& p : pos) {
    KgSample s;
    s.positive = p;
    for (int n = 0; n < 3; ++n) s.negatives.push_back(corrupt(p, inst.model.entities.size(), rng));
    // one composite negative keeps the gate busy on both sides
    EncodedTriplet neg = p;
    neg.tail = static_cast<int>(rng.below(inst.model.entities.size()));
    s.negatives.push_back(neg);
    inst.batch.push_back(std::move(s));
  }
  return inst;
}

/// Random decoder + GCN with a few caption samples.
struct CaptionInstance {
  GcnParams gcn;
  DecoderParams dec;
  std::vector<CaptionSample> samples;
};

inline CaptionInstance random_caption_instance(std::uint64_t seed, int hidden = 8, int vocab = 11, int embed = 4,
                                               int global = 3, int edges = 2, int length = 4, int relations = 3) {
  Rng rng(seed);
  CaptionInstance inst;
  inst.gcn = GcnParams::zeros(embed, relations);
  inst.gcn.visit([&](const char*, auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = 0.5 * rng.normal();
  });
  CaptionerDims d;
  d.embed = embed;
  d.global = global;
  d.word = 5;
  d.hidden = hidden;
  d.attention = 6;
  d.relations = relations;
  d.vocab = vocab;
  inst.dec = DecoderParams::zeros(d);
  inst.dec.visit([&](const char*, auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = 0.4 * rng.normal();
  });
  for (int s = 0; s < 2; ++s) {
    CaptionSample smp;
    smp.global = random_vector(rng, global);
    smp.node_inputs = random_matrix(rng, edges + 1, embed);
    for (int e = 0; e < edges; ++e) {
      smp.edges.push_back(TreeEdge{static_cast<int>(rng.below(static_cast<std::size_t>(e + 1))), "r", e + 1});
      smp.relation_ids.push_back(e == 0 ? -1 : static_cast<int>(rng.below(static_cast<std::size_t>(relations))));
    }
    for (int t = 0; t + 1 < length; ++t) smp.targets.push_back(3 + static_cast<int>(rng.below(static_cast<std::size_t>(vocab - 3))));
    smp.targets.push_back(Dictionary::kEnd);
    inst.samples.push_back(std::move(smp));
  }
  return inst;
}

struct GroundingInstance {
  ConceptVocabulary vocab;
  AttentionParams params;
  std::vector<VideoRecord> videos;
};

// q regions of dimension d, word vectors of size h, n_obj objects and 4 actions
inline GroundingInstance random_grounding(std::uint64_t seed, int q = 4, int d = 6, int h = 5, int n_obj = 7) {
  Rng rng(seed);
  GroundingInstance g;
  g.vocab = make_vocab(numbered("obj", n_obj), numbered("act", 4), {"obj"}, h, seed);
  g.params = AttentionParams::random(d, h, n_obj, 4, seed, 0.5);
  for (auto* s : {&g.params.object, &g.params.action}) s->bias = random_vector(rng, s->bias.size(), 0.3);
  for (int v = 0; v < 3; ++v) {
    VideoRecord r;
    r.video_id = "v" + std::to_string(v);
    r.object_map = random_matrix(rng, q, d);
    r.action_map = random_matrix(rng, q, d);
    r.object_indicator.resize(static_cast<std::size_t>(n_obj));
    r.action_indicator.resize(4);
    for (auto& x : r.object_indicator) x = rng.bernoulli(0.5);
    for (auto& x : r.action_indicator) x = rng.bernoulli(0.5);
    g.videos.push_back(std::move(r));
  }
  return g;
}

inline std::vector<TensorView> attention_views(AttentionParams& p) {
  return {view_of("o.T", p.object.transform), view_of("o.W", p.object.classifier), view_of("o.b", p.object.bias),
          view_of("a.T", p.action.transform), view_of("a.W", p.action.classifier), view_of("a.b", p.action.bias)};
}

inline std::vector<const VideoRecord*> pointers(const std::vector<VideoRecord>& v) {
  std::vector<const VideoRecord*> out;
  for (const auto& r : v) out.push_back(&r);
  return out;
}

Eigen::VectorXd random_simplex(Rng& rng, int n) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = -std::log(std::max(rng.uniform(), 1e-300));
  return v / v.sum();
}

struct DecodeInstance {
  DecoderParams dec;
  Eigen::VectorXd x;
  Eigen::MatrixXd features;
};

inline DecodeInstance random_decoder(std::uint64_t seed, int vocab = 9) {
  Rng rng(seed);
  CaptionerDims d;
  d.embed = 3;
  d.global = 4;
  d.word = 5;
  d.hidden = 6;
  d.attention = 5;
  d.vocab = vocab;
  DecodeInstance inst{DecoderParams::zeros(d), random_vector(rng, d.global), random_matrix(rng, 3, d.feature())};
  inst.dec.visit([&](const char*, auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = 1.2 * rng.normal();
  });
  return inst;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("weakcap_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace weakcap::testing
