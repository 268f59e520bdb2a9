#pragma once

// Tree-conditioned caption decoder. A one-round graph convolution turns a
// spanned dependency tree into relation-aware features; a two-layer LSTM
// (top-down attention layer + language layer) attends over them and emits
// words. Gradients are hand-derived and checked against finite differences
// in the test suite.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "weakcap/corpusio.hpp"
#include "weakcap/errors.hpp"
#include "weakcap/grounding.hpp"
#include "weakcap/kglink.hpp"
#include "weakcap/rng.hpp"
#include "weakcap/tensors.hpp"
#include "weakcap/treespan.hpp"

namespace weakcap {

// ---------------------------------------------------------------------------
// Dictionary
// ---------------------------------------------------------------------------

class Dictionary {
 public:
  static constexpr int kBegin = 0;
  static constexpr int kEnd = 1;
  static constexpr int kUnknown = 2;

  Dictionary() : Dictionary(std::vector<std::string>{}) {}

  /// Special tokens first, then the sorted unique words.
  explicit Dictionary(const std::vector<std::string>& words) {
    tokens_ = {"<bos>", "<eos>", "<unk>"};
    std::set<std::string> uniq(words.begin(), words.end());
    for (const auto& t : tokens_) uniq.erase(t);
    tokens_.insert(tokens_.end(), uniq.begin(), uniq.end());
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<int>(i);
  }

  /// Rebuild from a stored token list (specials included, order preserved).
  static Dictionary from_tokens(const std::vector<std::string>& tokens) {
    if (tokens.size() < 3 || tokens[0] != "<bos>" || tokens[1] != "<eos>" || tokens[2] != "<unk>") {
      throw IngestError("dictionary must start with <bos>, <eos>, <unk>");
    }
    Dictionary d;
    d.tokens_ = tokens;
    d.index_.clear();
    for (std::size_t i = 0; i < tokens.size(); ++i) d.index_[tokens[i]] = static_cast<int>(i);
    return d;
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  int id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnknown : it->second;
  }

  std::vector<int> encode(const TokenSeq& words, std::size_t* unknown = nullptr) const {
    std::vector<int> out;
    for (const auto& w : words) {
      const int i = id(w);
      if (i == kUnknown && unknown) ++*unknown;
      out.push_back(i);
    }
    return out;
  }

  TokenSeq decode(const std::vector<int>& ids) const {
    TokenSeq out;
    for (int i : ids) {
      if (i == kBegin || i == kEnd) continue;
      out.push_back(token(i));
    }
    return out;
  }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

/// Every word a pseudo sentence can contain: concept lemmas and relation labels.
inline Dictionary build_dictionary(const ConceptVocabulary& vocab) {
  std::vector<std::string> words;
  for (const auto* list : {&vocab.objects, &vocab.actions}) {
    for (const auto& l : *list) {
      for (auto& w : text::split_ws(l)) words.push_back(std::move(w));
    }
  }
  for (const auto& r : vocab.relations) {
    if (r == kObjectRelation) continue;
    for (auto& w : text::split_ws(r)) words.push_back(std::move(w));
  }
  return Dictionary(words);
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct CaptionerDims {
  int embed = 16;      // concept embedding size h
  int global = 16;     // global video feature size
  int word = 16;       // word embedding size
  int hidden = 32;     // LSTM hidden size
  int attention = 16;  // additive attention size
  int relations = 0;   // rows of the relation table
  int vocab = 3;       // dictionary size

  int feature() const { return 3 * embed; }
};

/// One round of message passing over the tree.
struct GcnParams {
  Eigen::MatrixXd self_weight;    // h x h
  Eigen::MatrixXd down_weight;    // parent -> child, h x h
  Eigen::MatrixXd up_weight;      // child -> parent, h x h
  Eigen::MatrixXd rel_weight;     // relation -> both endpoints, h x h
  Eigen::VectorXd bias;           // h
  Eigen::MatrixXd relation_table; // relations x h

  static GcnParams zeros(int h, int relations) {
    return GcnParams{Eigen::MatrixXd::Zero(h, h), Eigen::MatrixXd::Zero(h, h), Eigen::MatrixXd::Zero(h, h),
                     Eigen::MatrixXd::Zero(h, h), Eigen::VectorXd::Zero(h),
                     Eigen::MatrixXd::Zero(relations, h)};
  }

  template <class F>
  void visit(F&& f) {
    f("gcn.self", self_weight);
    f("gcn.down", down_weight);
    f("gcn.up", up_weight);
    f("gcn.rel", rel_weight);
    f("gcn.bias", bias);
    f("gcn.relation_table", relation_table);
  }
};

struct DecoderParams {
  Eigen::MatrixXd word_embedding;  // V x De
  Eigen::MatrixXd att_weight;      // 4H x (G + De + H + H): [x; u; m2_prev; m1_prev]
  Eigen::VectorXd att_bias;        // 4H
  Eigen::MatrixXd att_feature;     // A x F
  Eigen::MatrixXd att_hidden;      // A x H
  Eigen::VectorXd att_score;       // A
  Eigen::MatrixXd lang_weight;     // 4H x (F + H + H): [a_bar; m1; m2_prev]
  Eigen::VectorXd lang_bias;       // 4H
  Eigen::MatrixXd out_weight;      // V x H
  Eigen::VectorXd out_bias;        // V

  static DecoderParams zeros(const CaptionerDims& d) {
    const int h4 = 4 * d.hidden;
    return DecoderParams{Eigen::MatrixXd::Zero(d.vocab, d.word),
                         Eigen::MatrixXd::Zero(h4, d.global + d.word + 2 * d.hidden),
                         Eigen::VectorXd::Zero(h4),
                         Eigen::MatrixXd::Zero(d.attention, d.feature()),
                         Eigen::MatrixXd::Zero(d.attention, d.hidden),
                         Eigen::VectorXd::Zero(d.attention),
                         Eigen::MatrixXd::Zero(h4, d.feature() + 2 * d.hidden),
                         Eigen::VectorXd::Zero(h4),
                         Eigen::MatrixXd::Zero(d.vocab, d.hidden),
                         Eigen::VectorXd::Zero(d.vocab)};
  }

  int hidden() const { return static_cast<int>(att_bias.size() / 4); }
  int vocab() const { return static_cast<int>(out_bias.size()); }

  template <class F>
  void visit(F&& f) {
    f("dec.word_embedding", word_embedding);
    f("dec.att_weight", att_weight);
    f("dec.att_bias", att_bias);
    f("dec.att_feature", att_feature);
    f("dec.att_hidden", att_hidden);
    f("dec.att_score", att_score);
    f("dec.lang_weight", lang_weight);
    f("dec.lang_bias", lang_bias);
    f("dec.out_weight", out_weight);
    f("dec.out_bias", out_bias);
  }
};

template <class P>
std::vector<TensorView> tensor_views(P& p) {
  std::vector<TensorView> out;
  p.visit([&](const char* name, auto& t) { out.push_back(view_of(name, t)); });
  return out;
}

/// Gaussian init scaled by 1/sqrt(fan_in); biases zero except the LSTM
/// forget gates, which start at 1.
inline void randomize(GcnParams& p, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x4D32ULL));
  p.visit([&](const char* name, auto& t) {
    if (std::string(name) == "gcn.bias") return;
    const double scale = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(t.cols(), 1)));
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = scale * rng.normal();
  });
}

inline void randomize(DecoderParams& p, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x4D33ULL));
  p.visit([&](const char* name, auto& t) {
    const std::string n(name);
    if (n.ends_with("bias")) return;
    const double scale = n == "dec.word_embedding"
                             ? 0.1
                             : 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(t.cols(), 1)));
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = scale * rng.normal();
  });
  const int h = p.hidden();
  p.att_bias.segment(h, h).setOnes();
  p.lang_bias.segment(h, h).setOnes();
}

/// Copy available word vectors for the relation labels into the table.
inline void seed_relation_table(GcnParams& p, const std::vector<std::string>& relation_names,
                                const ConceptVocabulary& vocab) {
  for (std::size_t r = 0; r < relation_names.size(); ++r) {
    auto it = vocab.embeddings.find(relation_names[r]);
    if (it != vocab.embeddings.end() && it->second.size() == p.relation_table.cols() && it->second.norm() > 0) {
      p.relation_table.row(static_cast<Eigen::Index>(r)) = it->second.transpose();
    }
  }
}

// ---------------------------------------------------------------------------
// Relation-aware features
// ---------------------------------------------------------------------------

/// Features for one tree plus what the backward pass needs.
struct RelationFeatures {
  Eigen::MatrixXd features;    // S x 3h; row 0 is the root self-feature
  Eigen::MatrixXd inputs;      // n x h node embeddings
  Eigen::MatrixXd pre;         // n x h pre-activations
  Eigen::MatrixXd nodes;       // n x h rectified node states
  std::vector<TreeEdge> edges;
  std::vector<int> relation_ids;  // per edge, -1 when unknown

  Eigen::Index count() const { return features.rows(); }
};

inline RelationFeatures relation_features(const Eigen::MatrixXd& node_inputs, const std::vector<TreeEdge>& edges,
                                          const std::vector<int>& relation_ids, const GcnParams& p) {
  const Eigen::Index n = node_inputs.rows();
  const Eigen::Index h = p.self_weight.rows();
  require_shape(n >= 1 && node_inputs.cols() == h && relation_ids.size() == edges.size(),
                "relation_features: shape mismatch");
  RelationFeatures rf;
  rf.inputs = node_inputs;
  rf.edges = edges;
  rf.relation_ids = relation_ids;
  auto rel_vec = [&](std::size_t e) -> Eigen::VectorXd {
    const int r = relation_ids[e];
    if (r < 0) return Eigen::VectorXd::Zero(h);
    return p.relation_table.row(r).transpose();
  };
  rf.pre = (node_inputs * p.self_weight.transpose()).rowwise() + p.bias.transpose();
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto par = edges[e].parent, ch = edges[e].child;
    require_shape(par >= 0 && par < n && ch >= 0 && ch < n, "relation_features: edge index out of range");
    const Eigen::VectorXd rm = p.rel_weight * rel_vec(e);
    rf.pre.row(ch) += (p.down_weight * node_inputs.row(par).transpose() + rm).transpose();
    rf.pre.row(par) += (p.up_weight * node_inputs.row(ch).transpose() + rm).transpose();
  }
  rf.nodes = rf.pre.cwiseMax(0.0);
  rf.features.resize(static_cast<Eigen::Index>(edges.size()) + 1, 3 * h);
  rf.features.row(0) << rf.nodes.row(0), Eigen::RowVectorXd::Zero(h), rf.nodes.row(0);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    rf.features.row(static_cast<Eigen::Index>(e) + 1) << rf.nodes.row(edges[e].parent), rel_vec(e).transpose(),
        rf.nodes.row(edges[e].child);
  }
  return rf;
}

inline std::vector<int> relation_ids_for(const DependencyTree& tree, const std::vector<std::string>& relation_names) {
  std::vector<int> ids;
  for (const auto& e : tree.edges) {
    auto it = std::lower_bound(relation_names.begin(), relation_names.end(), e.relation);
    ids.push_back(it != relation_names.end() && *it == e.relation ? static_cast<int>(it - relation_names.begin())
                                                                  : -1);
  }
  return ids;
}

inline RelationFeatures relation_features(const DependencyTree& tree, const ConceptVocabulary& vocab,
                                          const std::vector<std::string>& relation_names, const GcnParams& p) {
  const Eigen::Index h = p.self_weight.rows();
  require_shape(vocab.embedding_dim == h, "relation_features: embedding size differs from GCN size");
  Eigen::MatrixXd inputs(static_cast<Eigen::Index>(tree.nodes.size()), h);
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    inputs.row(static_cast<Eigen::Index>(i)) = vocab.phrase_embedding(tree.nodes[i]).transpose();
  }
  return relation_features(inputs, tree.edges, relation_ids_for(tree, relation_names), p);
}

/// Accumulate parameter gradients given d(loss)/d(features).
inline void relation_features_backward(const RelationFeatures& rf, const Eigen::MatrixXd& dfeatures,
                                       const GcnParams& p, GcnParams& g) {
  const Eigen::Index h = p.self_weight.rows();
  Eigen::MatrixXd dnodes = Eigen::MatrixXd::Zero(rf.nodes.rows(), h);
  std::vector<Eigen::VectorXd> drel(rf.edges.size(), Eigen::VectorXd::Zero(h));
  dnodes.row(0) += dfeatures.row(0).segment(0, h) + dfeatures.row(0).segment(2 * h, h);
  for (std::size_t e = 0; e < rf.edges.size(); ++e) {
    const auto row = dfeatures.row(static_cast<Eigen::Index>(e) + 1);
    dnodes.row(rf.edges[e].parent) += row.segment(0, h);
    drel[e] += row.segment(h, h).transpose();
    dnodes.row(rf.edges[e].child) += row.segment(2 * h, h);
  }
  const Eigen::MatrixXd dpre = dnodes.cwiseProduct((rf.pre.array() > 0.0).cast<double>().matrix());
  g.self_weight.noalias() += dpre.transpose() * rf.inputs;
  g.bias += dpre.colwise().sum().transpose();
  for (std::size_t e = 0; e < rf.edges.size(); ++e) {
    const auto par = rf.edges[e].parent, ch = rf.edges[e].child;
    const Eigen::VectorXd dp_child = dpre.row(ch).transpose();
    const Eigen::VectorXd dp_parent = dpre.row(par).transpose();
    g.down_weight.noalias() += dp_child * rf.inputs.row(par);
    g.up_weight.noalias() += dp_parent * rf.inputs.row(ch);
    const int r = rf.relation_ids[e];
    if (r < 0) continue;
    const Eigen::VectorXd rv = p.relation_table.row(r).transpose();
    const Eigen::VectorXd dsum = dp_child + dp_parent;
    g.rel_weight.noalias() += dsum * rv.transpose();
    drel[e] += p.rel_weight.transpose() * dsum;
    g.relation_table.row(r) += drel[e].transpose();
  }
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

struct DecoderState {
  Eigen::VectorXd m1, c1, m2, c2;

  static DecoderState zeros(int hidden) {
    return DecoderState{Eigen::VectorXd::Zero(hidden), Eigen::VectorXd::Zero(hidden), Eigen::VectorXd::Zero(hidden),
                        Eigen::VectorXd::Zero(hidden)};
  }
};

namespace detail {

struct LstmStep {
  Eigen::VectorXd i, f, o, g, c, h;
};

inline LstmStep lstm_forward(const Eigen::MatrixXd& w, const Eigen::VectorXd& b, const Eigen::VectorXd& z,
                             const Eigen::VectorXd& c_prev) {
  const Eigen::Index n = b.size() / 4;
  const Eigen::VectorXd pre = w * z + b;
  auto sig = [](double v) { return sigmoid(v); };
  LstmStep s;
  s.i = pre.segment(0, n).unaryExpr(sig);
  s.f = pre.segment(n, n).unaryExpr(sig);
  s.o = pre.segment(2 * n, n).unaryExpr(sig);
  s.g = pre.segment(3 * n, n).array().tanh().matrix();
  s.c = s.f.cwiseProduct(c_prev) + s.i.cwiseProduct(s.g);
  s.h = s.o.cwiseProduct(s.c.array().tanh().matrix());
  return s;
}

/// Returns d(loss)/d(z); writes d(loss)/d(c_prev).
inline Eigen::VectorXd lstm_backward(const Eigen::MatrixXd& w, const Eigen::VectorXd& z, const Eigen::VectorXd& c_prev,
                                     const LstmStep& s, const Eigen::VectorXd& dh, const Eigen::VectorXd& dc_in,
                                     Eigen::MatrixXd& dw, Eigen::VectorXd& db, Eigen::VectorXd& dc_prev) {
  const Eigen::Index n = s.c.size();
  const Eigen::ArrayXd tc = s.c.array().tanh();
  const Eigen::ArrayXd dc = dc_in.array() + dh.array() * s.o.array() * (1.0 - tc * tc);
  Eigen::VectorXd dpre(4 * n);
  dpre.segment(0, n) = (dc * s.g.array() * s.i.array() * (1.0 - s.i.array())).matrix();
  dpre.segment(n, n) = (dc * c_prev.array() * s.f.array() * (1.0 - s.f.array())).matrix();
  dpre.segment(2 * n, n) = (dh.array() * tc * s.o.array() * (1.0 - s.o.array())).matrix();
  dpre.segment(3 * n, n) = (dc * s.i.array() * (1.0 - s.g.array() * s.g.array())).matrix();
  dc_prev = (dc * s.f.array()).matrix();
  dw.noalias() += dpre * z.transpose();
  db += dpre;
  return w.transpose() * dpre;
}

struct StepCache {
  int prev_word = 0;
  Eigen::VectorXd z1;
  Eigen::VectorXd c1_prev;
  LstmStep l1;
  Eigen::MatrixXd tanh_u;  // S x A
  Eigen::VectorXd beta;
  Eigen::VectorXd abar;
  Eigen::VectorXd z2;
  Eigen::VectorXd c2_prev;
  LstmStep l2;
  Eigen::VectorXd probs;
};

/// Precomputed attention projection of the features (S x A).
inline Eigen::MatrixXd project_features(const DecoderParams& p, const Eigen::MatrixXd& features) {
  return features * p.att_feature.transpose();
}

inline StepCache step_forward(const DecoderParams& p, const DecoderState& s, int prev_word, const Eigen::VectorXd& x,
                              const Eigen::MatrixXd& features, const Eigen::MatrixXd& projected) {
  StepCache c;
  c.prev_word = prev_word;
  const Eigen::Index g = x.size(), de = p.word_embedding.cols(), h = p.hidden();
  c.z1.resize(g + de + 2 * h);
  c.z1 << x, p.word_embedding.row(prev_word).transpose(), s.m2, s.m1;
  c.c1_prev = s.c1;
  c.l1 = lstm_forward(p.att_weight, p.att_bias, c.z1, s.c1);

  const Eigen::VectorXd hid = p.att_hidden * c.l1.h;
  c.tanh_u = (projected.rowwise() + hid.transpose()).array().tanh().matrix();
  c.beta = softmax(c.tanh_u * p.att_score);
  c.abar = features.transpose() * c.beta;

  c.z2.resize(c.abar.size() + 2 * h);
  c.z2 << c.abar, c.l1.h, s.m2;
  c.c2_prev = s.c2;
  c.l2 = lstm_forward(p.lang_weight, p.lang_bias, c.z2, s.c2);
  c.probs = softmax(p.out_weight * c.l2.h + p.out_bias);
  return c;
}

}  // namespace detail

struct StepOutput {
  DecoderState state;
  Eigen::VectorXd probs;  // over the dictionary
  Eigen::VectorXd beta;   // over the S features
};

/// One decoding step: the attention layer reads [x; u_{t-1}; m2_{t-1}], the
/// attended feature and m1_t drive the language layer, which yields word
/// probabilities.
inline StepOutput step(const DecoderParams& p, const DecoderState& state, int prev_word, const Eigen::VectorXd& x,
                       const Eigen::MatrixXd& features) {
  require_shape(features.rows() >= 1 && features.cols() == p.att_feature.cols(), "step: feature shape mismatch");
  require_shape(x.size() + p.word_embedding.cols() + 2 * p.hidden() == p.att_weight.cols(),
                "step: global feature size mismatch");
  const auto c = detail::step_forward(p, state, prev_word, x, features, detail::project_features(p, features));
  return StepOutput{DecoderState{c.l1.h, c.l1.c, c.l2.h, c.l2.c}, c.probs, c.beta};
}

struct DecodeConfig {
  int beam = 5;
  int max_length = 20;

  void validate() const {
    if (beam < 1) throw ArgumentError("beam width must be at least 1");
    if (max_length < 1) throw ArgumentError("maximum caption length must be at least 1");
  }
};

struct DecodeResult {
  std::vector<int> tokens;  // without begin/end markers
  double logprob = 0.0;
  bool finished = false;    // ended with the end token
};

/// Beam search ranked by total log-probability; equal scores prefer the
/// lexicographically smaller token sequence. The begin token is never emitted.
inline DecodeResult beam_decode(const DecoderParams& p, const Eigen::VectorXd& x, const Eigen::MatrixXd& features,
                                const DecodeConfig& cfg) {
  cfg.validate();
  require_shape(features.rows() >= 1 && features.cols() == p.att_feature.cols(), "beam_decode: feature shape mismatch");
  const Eigen::MatrixXd projected = detail::project_features(p, features);
  struct Hyp {
    std::vector<int> tokens;
    double logprob;
    DecoderState state;
    bool finished;
  };
  auto better = [](const Hyp& a, const Hyp& b) {
    if (a.logprob != b.logprob) return a.logprob > b.logprob;
    return a.tokens < b.tokens;
  };
  std::vector<Hyp> beam{Hyp{{}, 0.0, DecoderState::zeros(p.hidden()), false}};
  const int vocab = p.vocab();
  for (int t = 0; t < cfg.max_length; ++t) {
    std::vector<Hyp> cands;
    for (const auto& hyp : beam) {
      if (hyp.finished) {
        cands.push_back(hyp);
        continue;
      }
      const int prev = hyp.tokens.empty() ? Dictionary::kBegin : hyp.tokens.back();
      const auto c = detail::step_forward(p, hyp.state, prev, x, features, projected);
      const DecoderState next{c.l1.h, c.l1.c, c.l2.h, c.l2.c};
      for (int w = 0; w < vocab; ++w) {
        if (w == Dictionary::kBegin) continue;
        Hyp h{hyp.tokens, hyp.logprob + std::log(c.probs[w]), next, w == Dictionary::kEnd};
        h.tokens.push_back(w);
        cands.push_back(std::move(h));
      }
    }
    const auto keep = std::min<std::size_t>(static_cast<std::size_t>(cfg.beam), cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), better);
    cands.resize(keep);
    beam = std::move(cands);
    if (std::all_of(beam.begin(), beam.end(), [](const Hyp& h) { return h.finished; })) break;
  }
  const Hyp& best = beam.front();
  DecodeResult r;
  r.logprob = best.logprob;
  r.finished = best.finished;
  for (int w : best.tokens) {
    if (w != Dictionary::kEnd) r.tokens.push_back(w);
  }
  return r;
}

/// Argmax decoding with the same tie-break as the beam (smallest id wins).
inline DecodeResult greedy_decode(const DecoderParams& p, const Eigen::VectorXd& x, const Eigen::MatrixXd& features,
                                  int max_length) {
  const Eigen::MatrixXd projected = detail::project_features(p, features);
  DecoderState state = DecoderState::zeros(p.hidden());
  DecodeResult r;
  int prev = Dictionary::kBegin;
  for (int t = 0; t < max_length; ++t) {
    const auto c = detail::step_forward(p, state, prev, x, features, projected);
    state = DecoderState{c.l1.h, c.l1.c, c.l2.h, c.l2.c};
    int best = -1;
    double best_lp = 0.0;
    for (int w = 0; w < p.vocab(); ++w) {
      if (w == Dictionary::kBegin) continue;
      const double lp = r.logprob + std::log(c.probs[w]);
      if (best < 0 || lp > best_lp) {
        best = w;
        best_lp = lp;
      }
    }
    r.logprob = best_lp;
    if (best == Dictionary::kEnd) {
      r.finished = true;
      break;
    }
    r.tokens.push_back(best);
    prev = best;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Caption loss
// ---------------------------------------------------------------------------

/// One teacher-forced training sequence. Targets are the word ids followed by
/// the end token.
struct CaptionSample {
  Eigen::VectorXd global;
  Eigen::MatrixXd node_inputs;
  std::vector<TreeEdge> edges;
  std::vector<int> relation_ids;
  std::vector<int> targets;
};

inline CaptionSample make_caption_sample(const VideoRecord& video, const DependencyTree& tree, const TokenSeq& sentence,
                                         const ConceptVocabulary& vocab, const std::vector<std::string>& relation_names,
                                         const Dictionary& dict, std::size_t* unknown = nullptr) {
  CaptionSample s;
  s.global = video.global;
  s.node_inputs.resize(static_cast<Eigen::Index>(tree.nodes.size()), vocab.embedding_dim);
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    s.node_inputs.row(static_cast<Eigen::Index>(i)) = vocab.phrase_embedding(tree.nodes[i]).transpose();
  }
  s.edges = tree.edges;
  s.relation_ids = relation_ids_for(tree, relation_names);
  s.targets = dict.encode(sentence, unknown);
  s.targets.push_back(Dictionary::kEnd);
  return s;
}

struct CaptionLoss {
  double loss = 0.0;
  GcnParams gcn_grad;
  DecoderParams decoder_grad;
};

/// Log-likelihood of one sequence; accumulates scaled gradients when asked.
inline double sequence_nll(const CaptionSample& smp, const GcnParams& gcn, const DecoderParams& dec, double scale,
                           CaptionLoss* grads) {
  const RelationFeatures rf = relation_features(smp.node_inputs, smp.edges, smp.relation_ids, gcn);
  const Eigen::MatrixXd projected = detail::project_features(dec, rf.features);
  const int h = dec.hidden();
  DecoderState state = DecoderState::zeros(h);
  std::vector<detail::StepCache> caches;
  caches.reserve(smp.targets.size());
  double nll = 0.0;
  int prev = Dictionary::kBegin;
  for (int target : smp.targets) {
    caches.push_back(detail::step_forward(dec, state, prev, smp.global, rf.features, projected));
    const auto& c = caches.back();
    nll -= std::log(std::max(c.probs[target], 1e-300));
    state = DecoderState{c.l1.h, c.l1.c, c.l2.h, c.l2.c};
    prev = target;
  }
  if (!grads) return nll;

  DecoderParams& g = grads->decoder_grad;
  const Eigen::Index gdim = smp.global.size(), de = dec.word_embedding.cols(), fdim = rf.features.cols();
  Eigen::MatrixXd dfeatures = Eigen::MatrixXd::Zero(rf.features.rows(), fdim);
  Eigen::VectorXd dm1_next = Eigen::VectorXd::Zero(h), dc1_next = Eigen::VectorXd::Zero(h);
  Eigen::VectorXd dm2_next = Eigen::VectorXd::Zero(h), dc2_next = Eigen::VectorXd::Zero(h);
  for (std::size_t t = caches.size(); t-- > 0;) {
    const auto& c = caches[t];
    Eigen::VectorXd dlogits = scale * c.probs;
    dlogits[smp.targets[t]] -= scale;
    g.out_weight.noalias() += dlogits * c.l2.h.transpose();
    g.out_bias += dlogits;
    const Eigen::VectorXd dm2 = dec.out_weight.transpose() * dlogits + dm2_next;

    Eigen::VectorXd dc2_prev;
    const Eigen::VectorXd dz2 =
        detail::lstm_backward(dec.lang_weight, c.z2, c.c2_prev, c.l2, dm2, dc2_next, g.lang_weight, g.lang_bias, dc2_prev);
    const Eigen::VectorXd dabar = dz2.segment(0, fdim);
    Eigen::VectorXd dm1 = dz2.segment(fdim, h) + dm1_next;
    Eigen::VectorXd dm2_prev = dz2.segment(fdim + h, h);

    // attention
    const Eigen::VectorXd dbeta = rf.features * dabar;
    dfeatures.noalias() += c.beta * dabar.transpose();
    const Eigen::VectorXd de_scores = (c.beta.array() * (dbeta.array() - c.beta.dot(dbeta))).matrix();
    g.att_score.noalias() += c.tanh_u.transpose() * de_scores;
    const Eigen::MatrixXd du =
        (de_scores * dec.att_score.transpose()).cwiseProduct((1.0 - c.tanh_u.array().square()).matrix());
    g.att_feature.noalias() += du.transpose() * rf.features;
    dfeatures.noalias() += du * dec.att_feature;
    const Eigen::VectorXd du_sum = du.colwise().sum().transpose();
    g.att_hidden.noalias() += du_sum * c.l1.h.transpose();
    dm1 += dec.att_hidden.transpose() * du_sum;

    Eigen::VectorXd dc1_prev;
    const Eigen::VectorXd dz1 =
        detail::lstm_backward(dec.att_weight, c.z1, c.c1_prev, c.l1, dm1, dc1_next, g.att_weight, g.att_bias, dc1_prev);
    g.word_embedding.row(c.prev_word) += dz1.segment(gdim, de).transpose();
    dm2_prev += dz1.segment(gdim + de, h);
    dm1_next = dz1.segment(gdim + de + h, h);
    dc1_next = dc1_prev;
    dm2_next = dm2_prev;
    dc2_next = dc2_prev;
  }
  relation_features_backward(rf, dfeatures, gcn, grads->gcn_grad);
  return nll;
}

/// L_c = -(1/N_p) sum over pairs of the teacher-forced log-likelihood.
inline CaptionLoss caption_loss(const std::vector<CaptionSample>& samples, const GcnParams& gcn,
                                const DecoderParams& dec, bool with_gradients = true) {
  if (samples.empty()) throw ArgumentError("caption_loss: no training pairs");
  CaptionLoss out;
  if (with_gradients) {
    out.gcn_grad = GcnParams::zeros(static_cast<int>(gcn.self_weight.rows()), static_cast<int>(gcn.relation_table.rows()));
    out.decoder_grad = dec;
    out.decoder_grad.visit([](const char*, auto& t) { t.setZero(); });
  }
  const double scale = 1.0 / static_cast<double>(samples.size());
  for (const auto& s : samples) {
    out.loss += scale * sequence_nll(s, gcn, dec, scale, with_gradients ? &out : nullptr);
  }
  return out;
}

}  // namespace weakcap
