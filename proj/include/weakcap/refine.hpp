#pragma once

// Iterative refinement: alternate pseudo-sentence generation with fine-tuning
// of the grounding, graph and decoder parameters until validation CIDEr stops
// improving or no new pseudo sentences appear.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "weakcap/captioner.hpp"
#include "weakcap/corpusio.hpp"
#include "weakcap/errors.hpp"
#include "weakcap/grounding.hpp"
#include "weakcap/kglink.hpp"
#include "weakcap/metrics.hpp"
#include "weakcap/parallel.hpp"
#include "weakcap/rng.hpp"
#include "weakcap/tensors.hpp"
#include "weakcap/treespan.hpp"

namespace weakcap {

struct RefineConfig {
  ConceptThresholds thresholds;
  double lambda = 0.1;
  double reg_weight = 1.0;
  double learning_rate = 1e-4;
  double rmsprop_rho = 0.99;
  int epochs = 3;
  int batch_size = 16;
  int max_iterations = 20;
  int min_iterations = 1;  // stopping rules are ignored before this
  int patience = 1;
  SpanConfig span;
  DecodeConfig decode;
  int hidden = 32;
  int attention = 32;
  int word_dim = 32;
  double grounding_init_scale = 0.1;
  std::uint64_t seed = 1;

  void validate() const {
    thresholds.validate();
    decode.validate();
    if (!(lambda >= 0.0)) throw ConfigError("lambda", "must be non-negative");
    if (!(reg_weight >= 0.0)) throw ConfigError("reg_weight", "must be non-negative");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate", "must be positive");
    if (!(rmsprop_rho > 0.0 && rmsprop_rho < 1.0)) throw ConfigError("rmsprop_rho", "must lie in (0, 1)");
    if (epochs < 0) throw ConfigError("epochs", "must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size", "must be at least 1");
    if (max_iterations < 1) throw ConfigError("max_iterations", "must be at least 1");
    if (min_iterations < 1) throw ConfigError("min_iterations", "must be at least 1");
    if (patience < 0) throw ConfigError("patience", "must be non-negative");
    if (span.max_nodes < 1) throw ConfigError("max_nodes", "must be at least 1");
    if (hidden < 1 || attention < 1 || word_dim < 1) throw ConfigError("hidden", "layer sizes must be positive");
  }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct ModelParams {
  AttentionParams attention;  // grounding
  GcnParams gcn;              // relation-aware encoder
  DecoderParams decoder;

  template <class F>
  void visit(F&& f) {
    f("m1.object.transform", attention.object.transform);
    f("m1.object.classifier", attention.object.classifier);
    f("m1.object.bias", attention.object.bias);
    f("m1.action.transform", attention.action.transform);
    f("m1.action.classifier", attention.action.classifier);
    f("m1.action.bias", attention.action.bias);
    gcn.visit(f);
    decoder.visit(f);
  }

  ModelParams zeros_like() const {
    ModelParams z = *this;
    z.visit([](const char*, auto& t) { t.setZero(); });
    return z;
  }
};

inline ModelParams init_model(const ConceptVocabulary& vocab, const std::vector<std::string>& relation_names,
                              const Dictionary& dict, Eigen::Index feature_dim, Eigen::Index global_dim,
                              const RefineConfig& cfg) {
  ModelParams p;
  const auto h = static_cast<Eigen::Index>(vocab.embedding_dim);
  p.attention = AttentionParams::random(feature_dim, h, static_cast<Eigen::Index>(vocab.num_objects()),
                                        static_cast<Eigen::Index>(vocab.num_actions()), derive_seed(cfg.seed, 0x4D31ULL),
                                        cfg.grounding_init_scale);
  p.gcn = GcnParams::zeros(static_cast<int>(h), static_cast<int>(relation_names.size()));
  randomize(p.gcn, cfg.seed);
  seed_relation_table(p.gcn, relation_names, vocab);
  CaptionerDims dims;
  dims.embed = static_cast<int>(h);
  dims.global = static_cast<int>(global_dim);
  dims.word = cfg.word_dim;
  dims.hidden = cfg.hidden;
  dims.attention = cfg.attention;
  dims.relations = static_cast<int>(relation_names.size());
  dims.vocab = dict.size();
  p.decoder = DecoderParams::zeros(dims);
  randomize(p.decoder, cfg.seed);
  return p;
}

// ---------------------------------------------------------------------------
// Indicators and losses
// ---------------------------------------------------------------------------

/// g-hat[i] = 1 for i in I, else g[i].
inline Indicator update_indicators(const Indicator& g, const std::set<std::size_t>& index_set) {
  Indicator out = g;
  for (std::size_t i : index_set) {
    if (i >= g.size()) {
      throw ArgumentError("update_indicators: index " + std::to_string(i) + " out of range " +
                          std::to_string(g.size()));
    }
    out[i] = 1;
  }
  return out;
}

inline double combine_losses(double concept_term, double caption, double regularizer, double lambda) {
  return lambda * concept_term + caption + regularizer;
}

struct TotalLoss {
  double total = 0.0;
  double concept_loss = 0.0;
  double caption = 0.0;
  double regularizer = 0.0;  // already scaled by the weight
  ModelParams gradients;
};

/// L = lambda * L_m + L_c + w * sum_W ||W||_2 over every trainable tensor.
inline TotalLoss total_loss(const std::vector<const VideoRecord*>& videos, const std::vector<CaptionSample>& samples,
                            const ConceptVocabulary& vocab, const ModelParams& params, double lambda,
                            double reg_weight = 1.0, bool with_gradients = true) {
  if (!(lambda >= 0.0)) throw ArgumentError("total_loss: lambda must be non-negative");
  TotalLoss out;
  if (with_gradients) out.gradients = params.zeros_like();
  if (!videos.empty()) {
    auto cl = concept_loss(videos, vocab, params.attention);
    out.concept_loss = cl.loss;
    if (with_gradients) {
      out.gradients.attention = std::move(cl.gradients);
      out.gradients.visit([&](const char* name, auto& t) {
        if (std::string(name).starts_with("m1.")) t *= lambda;
      });
    }
  }
  if (!samples.empty()) {
    auto cap = caption_loss(samples, params.gcn, params.decoder, with_gradients);
    out.caption = cap.loss;
    if (with_gradients) {
      out.gradients.gcn = std::move(cap.gcn_grad);
      out.gradients.decoder = std::move(cap.decoder_grad);
    }
  }
  ModelParams& mutable_params = const_cast<ModelParams&>(params);  // views only read here
  const auto pviews = tensor_views(mutable_params);
  if (with_gradients) {
    const auto gviews = tensor_views(out.gradients);
    out.regularizer = reg_weight * l2_norm_sum(pviews, &gviews, reg_weight);
  } else {
    out.regularizer = reg_weight * l2_norm_sum(pviews, nullptr, reg_weight);
  }
  out.total = combine_losses(out.concept_loss, out.caption, out.regularizer, lambda);
  return out;
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

enum class PairOrigin { Annotation, Pseudo, Caption };

inline const char* origin_name(PairOrigin o) {
  switch (o) {
    case PairOrigin::Annotation: return "annotation";
    case PairOrigin::Pseudo: return "pseudo";
    case PairOrigin::Caption: return "caption";
  }
  return "?";
}

struct TrainingPair {
  std::string video_id;
  Indicator indicators;  // [g-hat^o; g-hat^a] when the pair was added
  TokenSeq sentence;
  PairOrigin origin = PairOrigin::Pseudo;
  DependencyTree tree;
};

struct GeneratedCaption {
  TokenSeq tokens;
  double logprob = 0.0;
  DependencyTree tree;
};

struct RefineState {
  ModelParams params;
  Dictionary dict;
  std::vector<std::string> relations;  // relation table order (the KG's)
  RmsProp optimizer{1e-4};
  std::vector<TrainingPair> pool;
  std::set<std::pair<std::string, TokenSeq>> pool_keys;
  std::set<std::pair<std::string, TokenSeq>> pseudo_seen;
  int iteration = 0;
  bool flag = true;
  double best_cider = -std::numeric_limits<double>::infinity();
  std::map<std::string, GeneratedCaption> captions;  // C, per training video
  std::map<std::string, std::pair<std::set<std::size_t>, std::set<std::size_t>>> initial;  // K
  std::map<std::string, std::pair<std::set<std::size_t>, std::set<std::size_t>>> index_sets;  // I
};

struct RefineData {
  const ConceptVocabulary* vocab = nullptr;
  std::vector<VideoRecord> train;
  std::vector<VideoRecord> val;
  std::map<std::string, std::vector<Tokens>> val_references;  // empty: pseudo references
};

/// Seed indicators from the annotations and set up a fresh state.
inline RefineState init_refine(RefineData& data, const KgModel& kg, const RefineConfig& cfg) {
  cfg.validate();
  if (!data.vocab) throw ArgumentError("refine: no vocabulary");
  const ConceptVocabulary& vocab = *data.vocab;
  RefineState st;
  st.dict = build_dictionary(vocab);
  st.relations = kg.relation_names;
  st.optimizer = RmsProp(cfg.learning_rate, cfg.rmsprop_rho);
  Eigen::Index d = 1, g = 1;
  const VideoRecord* probe = !data.train.empty() ? &data.train.front() : (!data.val.empty() ? &data.val.front() : nullptr);
  if (probe) {
    d = probe->object_map.cols();
    g = probe->global.size();
  }
  for (const auto* list : {&data.train, &data.val}) {
    for (const auto& v : *list) {
      require_shape(v.object_map.cols() == d && v.action_map.cols() == d, "video " + v.video_id + ": feature size differs");
      require_shape(v.global.size() == g, "video " + v.video_id + ": global feature size differs");
    }
  }
  st.params = init_model(vocab, st.relations, st.dict, d, g, cfg);
  for (auto& v : data.train) {
    seed_indicators(v, vocab);
    auto& k = st.initial[v.video_id];
    for (std::size_t i = 0; i < v.object_indicator.size(); ++i) {
      if (v.object_indicator[i]) k.first.insert(i);
    }
    for (std::size_t i = 0; i < v.action_indicator.size(); ++i) {
      if (v.action_indicator[i]) k.second.insert(i);
    }
    st.index_sets[v.video_id] = k;
  }
  return st;
}

// ---------------------------------------------------------------------------
// Inference helpers
// ---------------------------------------------------------------------------

/// Highest self-probability concept over both streams (objects win ties).
inline Phrase most_probable_concept(const VideoRecord& video, const ConceptVocabulary& vocab,
                                    const AttentionParams& params) {
  double best = -1.0;
  Phrase out;
  for (Stream k : {Stream::Object, Stream::Action}) {
    const auto& names = concepts_of(vocab, k);
    for (std::size_t i = 0; i < names.size(); ++i) {
      const double p = self_probability(video.map(k), vocab.embedding(names[i]), params[k], i);
      if (p > best) {
        best = p;
        out = k == Stream::Object ? Phrase::make_noun(names[i]) : Phrase::make_verb(names[i]);
      }
    }
  }
  if (best < 0.0) throw VocabError("most_probable_concept: empty vocabulary");
  return out;
}

inline RelationFeatures tree_features(const DependencyTree& tree, const ConceptVocabulary& vocab,
                                      const RefineState& st) {
  Eigen::MatrixXd inputs(static_cast<Eigen::Index>(tree.nodes.size()), vocab.embedding_dim);
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    inputs.row(static_cast<Eigen::Index>(i)) = vocab.phrase_embedding(tree.nodes[i]).transpose();
  }
  return relation_features(inputs, tree.edges, relation_ids_for(tree, st.relations), st.params.gcn);
}

inline GeneratedCaption caption_tree(const VideoRecord& video, const DependencyTree& tree,
                                     const ConceptVocabulary& vocab, const RefineState& st, const DecodeConfig& dc) {
  const auto rf = tree_features(tree, vocab, st);
  const auto r = beam_decode(st.params.decoder, video.global, rf.features, dc);
  return GeneratedCaption{st.dict.decode(r.tokens), r.logprob, tree};
}

/// Trees for a held-out video: concepts from the current grounding model,
/// roots by spatial consistency, the most probable concept as fallback.
inline std::vector<DependencyTree> inference_trees(VideoRecord& video, const ConceptVocabulary& vocab,
                                                   const KgModel& kg, const RefineState& st,
                                                   const RefineConfig& cfg, int iteration) {
  const auto g = generate_concepts(video, vocab, st.params.attention, cfg.thresholds);
  video.object_indicator = g.object;
  video.action_indicator = g.action;
  const auto roots = generate_roots(video, vocab, cfg.thresholds.spatial, {},
                                    most_probable_concept(video, vocab, st.params.attention));
  std::vector<DependencyTree> trees;
  for (const auto& root : roots) {
    auto t = span_tree(root, video, vocab, kg, cfg.span);
    t.iteration = iteration;
    trees.push_back(std::move(t));
  }
  return trees;
}

// ---------------------------------------------------------------------------
// One iteration
// ---------------------------------------------------------------------------

struct PseudoRecord {
  DependencyTree tree;
  TokenSeq tokens;
};

struct CaptionRecord {
  std::string video_id;
  TokenSeq tokens;
  double logprob = 0.0;
};

struct IterationRecord {
  int iteration = 0;
  double cider = 0.0;
  std::size_t new_pseudo = 0;        // pseudo pairs that entered the pool
  std::size_t pseudo_generated = 0;  // unique pseudo sentences produced this iteration
  std::size_t pseudo_total = 0;      // unique pseudo sentences produced so far
  std::size_t pool_size = 0;
  double loss = 0.0;                 // mean total loss over fine-tuning steps
  std::vector<PseudoRecord> pseudo;
  std::vector<CaptionRecord> val_captions;

  nlohmann::json history_json() const {
    return {{"iter", iteration},           {"cider", cider},
            {"new_pseudo", new_pseudo},    {"pool_size", pool_size},
            {"loss", loss},                {"pseudo_generated", pseudo_generated},
            {"pseudo_total", pseudo_total}};
  }
};

namespace detail {

inline Indicator joint_indicator(const VideoRecord& v) {
  Indicator out = v.object_indicator;
  out.insert(out.end(), v.action_indicator.begin(), v.action_indicator.end());
  return out;
}

inline bool add_pair(RefineState& st, const VideoRecord& v, const TokenSeq& sentence, PairOrigin origin,
                     const DependencyTree& tree) {
  if (sentence.empty()) return false;
  if (!st.pool_keys.emplace(v.video_id, sentence).second) return false;
  st.pool.push_back(TrainingPair{v.video_id, joint_indicator(v), sentence, origin, tree});
  return true;
}

inline DependencyTree root_only(const Phrase& root, const std::string& video_id, int iteration) {
  DependencyTree t;
  t.nodes.push_back(root);
  t.video_id = video_id;
  t.iteration = iteration;
  return t;
}

/// Fine-tune on the pool with RMS propagation; returns the mean total loss.
inline double fine_tune(RefineState& st, const RefineData& data, const RefineConfig& cfg) {
  const ConceptVocabulary& vocab = *data.vocab;
  std::vector<CaptionSample> samples;
  samples.reserve(st.pool.size());
  std::map<std::string, const VideoRecord*> by_id;
  for (const auto& v : data.train) by_id[v.video_id] = &v;
  for (const auto& pair : st.pool) {
    samples.push_back(make_caption_sample(*by_id.at(pair.video_id), pair.tree, pair.sentence, vocab, st.relations,
                                          st.dict));
  }
  const std::size_t nv = data.train.size(), np = samples.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps = (std::max(nv, np) + batch - 1) / batch;
  auto pviews = tensor_views(st.params);
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 0x46494E45ULL + static_cast<std::uint64_t>(st.iteration),
                        static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> vorder(nv), porder(np);
    std::iota(vorder.begin(), vorder.end(), std::size_t{0});
    std::iota(porder.begin(), porder.end(), std::size_t{0});
    rng.shuffle(vorder);
    rng.shuffle(porder);
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<const VideoRecord*> vb;
      for (std::size_t j = 0; j < std::min(batch, nv); ++j) vb.push_back(&data.train[vorder[(s * batch + j) % nv]]);
      std::vector<CaptionSample> pb;
      for (std::size_t j = 0; j < std::min(batch, np); ++j) pb.push_back(samples[porder[(s * batch + j) % np]]);
      auto tl = total_loss(vb, pb, vocab, st.params, cfg.lambda, cfg.reg_weight);
      const auto gviews = tensor_views(tl.gradients);
      if (!std::isfinite(tl.total) || !all_finite(gviews)) {
        throw DivergenceError("non-finite refinement loss", static_cast<std::size_t>(st.iteration),
                              static_cast<std::size_t>(epoch), s);
      }
      st.optimizer.step(pviews, gviews);
      loss_sum += tl.total;
      ++loss_count;
    }
  }
  return loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
}

inline void add_caption_concepts(const TokenSeq& tokens, const ConceptVocabulary& vocab,
                                 std::pair<std::set<std::size_t>, std::set<std::size_t>>& index_set) {
  for (const auto& tok : tokens) {
    if (auto i = vocab.object_index(tok)) index_set.first.insert(*i);
    if (auto j = vocab.action_index(tok)) index_set.second.insert(*j);
  }
}

}  // namespace detail

/// Generate (unless this is the first call), fine-tune, caption, refresh the
/// indicators. Videos in data.train carry the evolving indicators.
inline IterationRecord run_iteration(RefineState& st, RefineData& data, const KgModel& kg, const RefineConfig& cfg) {
  const ConceptVocabulary& vocab = *data.vocab;
  IterationRecord rec;
  rec.iteration = ++st.iteration;
  if (data.train.empty()) {
    st.flag = false;
    rec.pool_size = st.pool.size();
    rec.pseudo_total = st.pseudo_seen.size();
    return rec;
  }

  // trees per training video
  std::vector<std::vector<DependencyTree>> trees(data.train.size());
  if (st.flag) {
    for (std::size_t v = 0; v < data.train.size(); ++v) {
      const auto& video = data.train[v];
      if (video.annotation) {
        detail::add_pair(st, video, linearize(detail::root_only(*video.annotation, video.video_id, rec.iteration)),
                         PairOrigin::Annotation, detail::root_only(*video.annotation, video.video_id, rec.iteration));
      }
    }
  } else {
    parallel_for(data.train.size(), [&](std::size_t v) {
      const auto& video = data.train[v];
      std::vector<TokenSeq> prior;
      if (auto it = st.captions.find(video.video_id); it != st.captions.end() && !it->second.tokens.empty()) {
        prior.push_back(it->second.tokens);
      }
      for (const auto& root : generate_roots(video, vocab, cfg.thresholds.spatial, prior)) {
        auto t = span_tree(root, video, vocab, kg, cfg.span);
        t.iteration = rec.iteration;
        trees[v].push_back(std::move(t));
      }
    });
    std::set<std::pair<std::string, TokenSeq>> this_round;
    for (std::size_t v = 0; v < data.train.size(); ++v) {
      const auto& video = data.train[v];
      for (const auto& t : trees[v]) {
        auto tokens = linearize(t);
        if (tokens.empty() || !this_round.emplace(video.video_id, tokens).second) continue;
        st.pseudo_seen.emplace(video.video_id, tokens);
        if (detail::add_pair(st, video, tokens, PairOrigin::Pseudo, t)) ++rec.new_pseudo;
        rec.pseudo.push_back(PseudoRecord{t, std::move(tokens)});
      }
      if (auto it = st.captions.find(video.video_id); it != st.captions.end()) {
        detail::add_pair(st, video, it->second.tokens, PairOrigin::Caption, it->second.tree);
      }
    }
    rec.pseudo_generated = this_round.size();
  }
  rec.pseudo_total = st.pseudo_seen.size();
  rec.pool_size = st.pool.size();

  rec.loss = detail::fine_tune(st, data, cfg);

  if (!st.flag) {
    std::vector<std::optional<GeneratedCaption>> caps(data.train.size());
    parallel_for(data.train.size(), [&](std::size_t v) {
      if (!trees[v].empty()) caps[v] = caption_tree(data.train[v], trees[v].front(), vocab, st, cfg.decode);
    });
    for (std::size_t v = 0; v < data.train.size(); ++v) {
      if (caps[v]) st.captions[data.train[v].video_id] = std::move(*caps[v]);
    }
  }

  parallel_for(data.train.size(), [&](std::size_t v) {
    auto& video = data.train[v];
    auto& iset = st.index_sets.at(video.video_id);
    if (auto it = st.captions.find(video.video_id); it != st.captions.end()) {
      detail::add_caption_concepts(it->second.tokens, vocab, iset);
    }
    const auto g = generate_concepts(video, vocab, st.params.attention, cfg.thresholds);
    video.object_indicator = update_indicators(g.object, iset.first);
    video.action_indicator = update_indicators(g.action, iset.second);
    cache_active_alphas(video, vocab, st.params.attention);
  });
  st.flag = false;
  return rec;
}

// ---------------------------------------------------------------------------
// Validation and the outer loop
// ---------------------------------------------------------------------------

struct Validation {
  double cider = 0.0;
  std::vector<CaptionRecord> captions;
};

inline Validation validate(const RefineState& st, const RefineData& data, const KgModel& kg, const RefineConfig& cfg) {
  Validation out;
  if (data.val.empty()) return out;
  const ConceptVocabulary& vocab = *data.vocab;
  std::vector<CaptionRecord> caps(data.val.size());
  std::vector<std::vector<Tokens>> pseudo_refs(data.val.size());
  parallel_for(data.val.size(), [&](std::size_t i) {
    VideoRecord video = data.val[i];
    const auto trees = inference_trees(video, vocab, kg, st, cfg, st.iteration);
    const auto c = caption_tree(video, trees.front(), vocab, st, cfg.decode);
    caps[i] = CaptionRecord{video.video_id, c.tokens, c.logprob};
    for (const auto& t : trees) pseudo_refs[i].push_back(linearize(t));
  });
  EvalSet es;
  for (std::size_t i = 0; i < data.val.size(); ++i) {
    es.candidates[caps[i].video_id] = caps[i].tokens;
    if (data.val_references.empty()) {
      es.references[caps[i].video_id] = pseudo_refs[i];
    } else {
      auto it = data.val_references.find(caps[i].video_id);
      if (it == data.val_references.end()) throw EvalError("no references for validation video " + caps[i].video_id);
      es.references[caps[i].video_id] = it->second;
    }
  }
  out.cider = cider(es);
  out.captions = std::move(caps);
  return out;
}

struct RefineResult {
  ModelParams best;
  int best_iteration = 0;
  double best_cider = 0.0;
  std::vector<IterationRecord> history;
  std::string stop_reason;
};

using IterationObserver = std::function<void(const IterationRecord&, const RefineState&)>;

inline RefineResult run(RefineState& st, RefineData& data, const KgModel& kg, const RefineConfig& cfg,
                        const IterationObserver& observer = {}) {
  RefineResult res;
  res.best = st.params;
  int stale = 0;
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    auto rec = run_iteration(st, data, kg, cfg);
    auto val = validate(st, data, kg, cfg);
    rec.cider = val.cider;
    rec.val_captions = std::move(val.captions);
    if (rec.cider > st.best_cider) {
      st.best_cider = rec.cider;
      res.best = st.params;
      res.best_iteration = rec.iteration;
      stale = 0;
    } else {
      ++stale;
    }
    res.history.push_back(rec);
    if (observer) observer(res.history.back(), st);
    if (it < cfg.min_iterations) continue;
    if (it >= 2 && rec.new_pseudo == 0) {
      res.stop_reason = "no new pseudo sentences";
      break;
    }
    if (stale > cfg.patience) {
      res.stop_reason = "validation CIDEr stopped improving";
      break;
    }
  }
  if (res.stop_reason.empty()) res.stop_reason = "iteration limit";
  res.best_cider = st.best_cider;
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct SavedModel {
  ModelParams params;
  Dictionary dict;
  std::vector<std::string> relations;
  int iteration = 0;
};

/// The string table holds "i:<iteration>", "t:<token>" per dictionary entry
/// and "r:<relation>" per relation-table row, in order.
inline void save_model(std::ostream& out, const ModelParams& params, const Dictionary& dict,
                       const std::vector<std::string>& relations, int iteration) {
  std::vector<std::string> strings{"i:" + std::to_string(iteration)};
  for (const auto& t : dict.tokens()) strings.push_back("t:" + t);
  for (const auto& r : relations) strings.push_back("r:" + r);
  ModelParams copy = params;
  save_tensors(out, strings, tensor_views(copy));
}

inline void save_model(const std::string& path, const ModelParams& params, const Dictionary& dict,
                       const std::vector<std::string>& relations, int iteration) {
  auto out = binio::open_out(path);
  save_model(out, params, dict, relations, iteration);
  if (!out) throw IngestError("failed writing " + path);
}

inline SavedModel load_model(std::istream& in) {
  const TensorFile f = load_tensors(in);
  SavedModel m;
  std::vector<std::string> tokens;
  for (const auto& s : f.strings) {
    if (s.starts_with("i:")) {
      m.iteration = static_cast<int>(text::parse_int(s.substr(2)).value_or(0));
    } else if (s.starts_with("t:")) {
      tokens.push_back(s.substr(2));
    } else if (s.starts_with("r:")) {
      m.relations.push_back(s.substr(2));
    } else {
      throw IngestError("unexpected WCLM string entry '" + s + "'");
    }
  }
  m.dict = Dictionary::from_tokens(tokens);
  m.params.visit([&](const char* name, auto& t) {
    auto it = f.tensors.find(name);
    if (it == f.tensors.end()) throw IngestError(std::string("checkpoint lacks tensor ") + name);
    if constexpr (std::remove_reference_t<decltype(t)>::ColsAtCompileTime == 1) {
      if (it->second.cols() != 1) throw IngestError(std::string("checkpoint tensor ") + name + " is not a vector");
      t = it->second.col(0);
    } else {
      t = it->second;
    }
  });
  if (m.params.decoder.vocab() != m.dict.size()) throw IngestError("checkpoint dictionary and output layer disagree");
  if (m.params.gcn.relation_table.rows() != static_cast<Eigen::Index>(m.relations.size())) {
    throw IngestError("checkpoint relation table and relation list disagree");
  }
  return m;
}

inline SavedModel load_model(const std::string& path) {
  auto in = binio::open_in(path);
  return load_model(in);
}

}  // namespace weakcap
