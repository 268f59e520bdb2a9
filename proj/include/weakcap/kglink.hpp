#pragma once

// Rotation-based knowledge-graph embeddings over extracted dependency
// triplets. Entities live in C^E, relations are stored as phase angles so
// every rotation factor has unit modulus, and noun-verb heads are blended
// from their object and action embeddings through a learned sigmoid gate.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "weakcap/binary_io.hpp"
#include "weakcap/corpusio.hpp"
#include "weakcap/errors.hpp"
#include "weakcap/rng.hpp"

namespace weakcap {

using ComplexVec = Eigen::VectorXcd;

struct RelationPhases {
  Eigen::VectorXd theta;

  Eigen::Index dim() const { return theta.size(); }

  ComplexVec rotation() const {
    ComplexVec r(theta.size());
    for (Eigen::Index k = 0; k < theta.size(); ++k) r[k] = std::polar(1.0, theta[k]);
    return r;
  }
};

/// Gate k_h = sigmoid(W [h_o; h_a; t] + b). The input interleaves the real and
/// imaginary part of every coordinate, so W is E x 6E.
struct GateParams {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;

  static GateParams zeros(Eigen::Index dim) {
    return GateParams{Eigen::MatrixXd::Zero(dim, 6 * dim), Eigen::VectorXd::Zero(dim)};
  }
  Eigen::Index dim() const { return bias.size(); }
};

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(sigmoid(x)) without overflow.
inline double log_sigmoid(double x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

/// Sum over coordinates of |h(k) e^{i theta(k)} - t(k)|. Lower is more plausible.
inline double score_triplet(const ComplexVec& head, const RelationPhases& rel, const ComplexVec& tail) {
  require_shape(head.size() == tail.size() && head.size() == rel.dim(),
                "score_triplet: dimension mismatch");
  double s = 0.0;
  for (Eigen::Index k = 0; k < head.size(); ++k) {
    s += std::abs(head[k] * std::polar(1.0, rel.theta[k]) - tail[k]);
  }
  return s;
}

inline Eigen::VectorXd gate_input(const ComplexVec& h_o, const ComplexVec& h_a, const ComplexVec& t) {
  const Eigen::Index e = t.size();
  Eigen::VectorXd x(6 * e);
  for (Eigen::Index k = 0; k < e; ++k) {
    x[2 * k] = h_o[k].real();
    x[2 * k + 1] = h_o[k].imag();
    x[2 * e + 2 * k] = h_a[k].real();
    x[2 * e + 2 * k + 1] = h_a[k].imag();
    x[4 * e + 2 * k] = t[k].real();
    x[4 * e + 2 * k + 1] = t[k].imag();
  }
  return x;
}

inline Eigen::VectorXd gate_values(const ComplexVec& h_o, const ComplexVec& h_a, const ComplexVec& t,
                                   const GateParams& gate) {
  require_shape(h_o.size() == t.size() && h_a.size() == t.size() && gate.dim() == t.size() &&
                    gate.weight.cols() == 6 * t.size(),
                "compose_head: dimension mismatch");
  Eigen::VectorXd pre = gate.weight * gate_input(h_o, h_a, t) + gate.bias;
  return pre.unaryExpr([](double v) { return sigmoid(v); });
}

/// Head embedding for a phrase with an object part, an action part, or both.
inline ComplexVec compose_head(const std::optional<ComplexVec>& h_o, const std::optional<ComplexVec>& h_a,
                               const ComplexVec& t, const GateParams& gate) {
  if (!h_o && !h_a) throw ArgumentError("compose_head: both object and action parts are absent");
  if (!h_a) return *h_o;
  if (!h_o) return *h_a;
  const Eigen::VectorXd k = gate_values(*h_o, *h_a, t, gate);
  ComplexVec out(t.size());
  for (Eigen::Index j = 0; j < t.size(); ++j) out[j] = k[j] * (*h_o)[j] + (1.0 - k[j]) * (*h_a)[j];
  return out;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct KgTrainConfig {
  int dim = 64;
  double gamma = 6.0;
  int negatives = 4;
  int steps = 2000;
  int batch_size = 32;
  double learning_rate = 0.05;
  double init_range = 0.5;
  std::uint64_t seed = 1;
};

/// Triplet resolved to table indices. head_action < 0 for simple heads;
/// head_object < 0 for verb-only heads.
struct EncodedTriplet {
  int head_object = -1;
  int head_action = -1;
  int relation = 0;
  int tail = 0;

  friend auto operator<=>(const EncodedTriplet&, const EncodedTriplet&) = default;
};

struct KgModel {
  int dim = 0;
  double gamma = 6.0;
  std::vector<std::string> entity_names;  // phrase keys, sorted
  std::vector<ComplexVec> entities;
  std::vector<std::string> relation_names;  // sorted
  std::vector<RelationPhases> relations;
  GateParams gate;
  std::vector<Triplet> triplets;

  std::optional<int> entity_index(const std::string& key) const {
    auto it = std::lower_bound(entity_names.begin(), entity_names.end(), key);
    if (it == entity_names.end() || *it != key) return std::nullopt;
    return static_cast<int>(it - entity_names.begin());
  }
  std::optional<int> relation_index(const std::string& label) const {
    auto it = std::lower_bound(relation_names.begin(), relation_names.end(), label);
    if (it == relation_names.end() || *it != label) return std::nullopt;
    return static_cast<int>(it - relation_names.begin());
  }

  /// Embedding of a simple phrase; zero (and a bumped counter) when unknown.
  ComplexVec lookup(const std::string& key, std::size_t* unknown = nullptr) const {
    if (auto i = entity_index(key)) return entities[static_cast<std::size_t>(*i)];
    if (unknown) ++*unknown;
    return ComplexVec::Zero(dim);
  }

  ComplexVec tail_embedding(const Phrase& tail, std::size_t* unknown = nullptr) const {
    return lookup(tail.key(), unknown);
  }

  ComplexVec head_embedding(const Phrase& head, const ComplexVec& tail, std::size_t* unknown = nullptr) const {
    std::optional<ComplexVec> h_o, h_a;
    if (head.has_noun()) h_o = lookup("o:" + *head.noun, unknown);
    if (head.has_verb()) h_a = lookup("a:" + *head.verb, unknown);
    return compose_head(h_o, h_a, tail, gate);
  }

  double score(const Phrase& head, const std::string& relation, const Phrase& tail,
               std::size_t* unknown = nullptr) const {
    const ComplexVec t = tail_embedding(tail, unknown);
    const auto r = relation_index(relation);
    if (!r) {
      if (unknown) ++*unknown;
      return score_triplet(head_embedding(head, t, unknown), RelationPhases{Eigen::VectorXd::Zero(dim)}, t);
    }
    return score_triplet(head_embedding(head, t, unknown), relations[static_cast<std::size_t>(*r)], t);
  }

  double score(const Triplet& t) const { return score(t.head, t.relation, t.tail); }

  std::optional<EncodedTriplet> encode(const Triplet& t) const {
    EncodedTriplet e;
    if (t.head.kind == PhraseKind::NounVerb) {
      auto o = entity_index("o:" + *t.head.noun);
      auto a = entity_index("a:" + *t.head.verb);
      if (!o || !a) return std::nullopt;
      e.head_object = *o;
      e.head_action = *a;
    } else {
      auto h = entity_index(t.head.key());
      if (!h) return std::nullopt;
      e.head_object = *h;
    }
    auto r = relation_index(t.relation);
    auto tl = entity_index(t.tail.key());
    if (!r || !tl) return std::nullopt;
    e.relation = *r;
    e.tail = *tl;
    return e;
  }
};

/// Sorted entity and relation tables from a triplet list plus vocabulary concepts.
inline void build_kg_tables(KgModel& model, const std::vector<Triplet>& triplets,
                            const ConceptVocabulary* vocab) {
  std::set<std::string> ents, rels;
  auto add_phrase = [&](const Phrase& p) {
    if (p.kind == PhraseKind::NounVerb) {
      ents.insert("o:" + *p.noun);
      ents.insert("a:" + *p.verb);
    } else {
      ents.insert(p.key());
    }
  };
  for (const auto& t : triplets) {
    add_phrase(t.head);
    if (t.tail.kind == PhraseKind::NounVerb) ents.insert(t.tail.key());
    else add_phrase(t.tail);
    rels.insert(t.relation);
  }
  if (vocab) {
    for (const auto& o : vocab->objects) ents.insert("o:" + o);
    for (const auto& a : vocab->actions) ents.insert("a:" + a);
    for (const auto& r : vocab->relations) rels.insert(r);
  }
  model.entity_names.assign(ents.begin(), ents.end());
  model.relation_names.assign(rels.begin(), rels.end());
}

/// Seeded initialisation: entity parts uniform in [-range, range], phases
/// uniform in [0, 2pi), zero gate.
inline KgModel init_kg(const std::vector<Triplet>& triplets, const ConceptVocabulary* vocab,
                       const KgTrainConfig& cfg) {
  if (cfg.dim < 1) throw ArgumentError("KG dimension must be positive");
  KgModel model;
  model.dim = cfg.dim;
  model.gamma = cfg.gamma;
  model.triplets = triplets;
  build_kg_tables(model, triplets, vocab);
  Rng rng(derive_seed(cfg.seed, 0x4B47494E4954ULL));
  for (std::size_t i = 0; i < model.entity_names.size(); ++i) {
    ComplexVec v(cfg.dim);
    for (int k = 0; k < cfg.dim; ++k) {
      const double re = rng.uniform(-cfg.init_range, cfg.init_range);
      const double im = rng.uniform(-cfg.init_range, cfg.init_range);
      v[k] = {re, im};
    }
    model.entities.push_back(std::move(v));
  }
  for (std::size_t r = 0; r < model.relation_names.size(); ++r) {
    Eigen::VectorXd th(cfg.dim);
    for (int k = 0; k < cfg.dim; ++k) th[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    model.relations.push_back(RelationPhases{std::move(th)});
  }
  model.gate = GateParams::zeros(cfg.dim);
  return model;
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

struct KgGradients {
  std::vector<ComplexVec> entities;  // real part = d/d(re), imaginary part = d/d(im)
  std::vector<Eigen::VectorXd> phases;
  Eigen::MatrixXd gate_weight;
  Eigen::VectorXd gate_bias;

  static KgGradients zeros_like(const KgModel& m) {
    KgGradients g;
    g.entities.assign(m.entities.size(), ComplexVec::Zero(m.dim));
    g.phases.assign(m.relations.size(), Eigen::VectorXd::Zero(m.dim));
    g.gate_weight = Eigen::MatrixXd::Zero(m.gate.weight.rows(), m.gate.weight.cols());
    g.gate_bias = Eigen::VectorXd::Zero(m.gate.bias.size());
    return g;
  }
};

namespace detail {

/// Score of an encoded triplet; accumulates upstream * d(score) into grads
/// when grads is non-null.
inline double kg_score(const KgModel& m, const EncodedTriplet& e, KgGradients* grads, double upstream) {
  const ComplexVec& t = m.entities[static_cast<std::size_t>(e.tail)];
  const RelationPhases& rel = m.relations[static_cast<std::size_t>(e.relation)];
  const bool composite = e.head_object >= 0 && e.head_action >= 0;
  const int single = e.head_object >= 0 ? e.head_object : e.head_action;

  Eigen::VectorXd k;
  Eigen::VectorXd x;
  ComplexVec h;
  if (composite) {
    const ComplexVec& ho = m.entities[static_cast<std::size_t>(e.head_object)];
    const ComplexVec& ha = m.entities[static_cast<std::size_t>(e.head_action)];
    x = gate_input(ho, ha, t);
    Eigen::VectorXd pre = m.gate.weight * x + m.gate.bias;
    k = pre.unaryExpr([](double v) { return sigmoid(v); });
    h.resize(m.dim);
    for (int j = 0; j < m.dim; ++j) h[j] = k[j] * ho[j] + (1.0 - k[j]) * ha[j];
  } else {
    h = m.entities[static_cast<std::size_t>(single)];
  }

  double s = 0.0;
  ComplexVec dh(m.dim);
  for (int j = 0; j < m.dim; ++j) {
    const std::complex<double> r = std::polar(1.0, rel.theta[j]);
    const std::complex<double> rot = h[j] * r;
    const std::complex<double> z = rot - t[j];
    const double mod = std::abs(z);
    s += mod;
    if (!grads) continue;
    const std::complex<double> gz = mod > 1e-300 ? upstream * z / mod : std::complex<double>(0.0, 0.0);
    grads->entities[static_cast<std::size_t>(e.tail)][j] -= gz;
    dh[j] = gz * std::conj(r);
    grads->phases[static_cast<std::size_t>(e.relation)][j] += (std::conj(rot) * gz).imag();
  }
  if (!grads) return s;

  if (!composite) {
    grads->entities[static_cast<std::size_t>(single)] += dh;
    return s;
  }
  const ComplexVec& ho = m.entities[static_cast<std::size_t>(e.head_object)];
  const ComplexVec& ha = m.entities[static_cast<std::size_t>(e.head_action)];
  Eigen::VectorXd dpre(m.dim);
  for (int j = 0; j < m.dim; ++j) {
    const std::complex<double> diff = ho[j] - ha[j];
    const double dk = diff.real() * dh[j].real() + diff.imag() * dh[j].imag();
    dpre[j] = dk * k[j] * (1.0 - k[j]);
    grads->entities[static_cast<std::size_t>(e.head_object)][j] += k[j] * dh[j];
    grads->entities[static_cast<std::size_t>(e.head_action)][j] += (1.0 - k[j]) * dh[j];
  }
  grads->gate_weight.noalias() += dpre * x.transpose();
  grads->gate_bias += dpre;
  const Eigen::VectorXd dx = m.gate.weight.transpose() * dpre;
  auto& go = grads->entities[static_cast<std::size_t>(e.head_object)];
  auto& ga = grads->entities[static_cast<std::size_t>(e.head_action)];
  auto& gt = grads->entities[static_cast<std::size_t>(e.tail)];
  const int d = m.dim;
  for (int j = 0; j < d; ++j) {
    go[j] += std::complex<double>(dx[2 * j], dx[2 * j + 1]);
    ga[j] += std::complex<double>(dx[2 * d + 2 * j], dx[2 * d + 2 * j + 1]);
    gt[j] += std::complex<double>(dx[4 * d + 2 * j], dx[4 * d + 2 * j + 1]);
  }
  return s;
}

}  // namespace detail

inline double kg_score(const KgModel& m, const EncodedTriplet& e) {
  return detail::kg_score(m, e, nullptr, 0.0);
}

/// A positive triplet with its corruptions.
struct KgSample {
  EncodedTriplet positive;
  std::vector<EncodedTriplet> negatives;
};

/// Mean over samples of -log sigmoid(gamma - s+) - (1/n) sum log sigmoid(s- - gamma).
inline double kg_loss(const KgModel& m, const std::vector<KgSample>& batch, KgGradients* grads) {
  if (batch.empty()) return 0.0;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& smp : batch) {
    const double sp = kg_score(m, smp.positive);
    loss -= log_sigmoid(m.gamma - sp) * inv_b;
    if (grads) detail::kg_score(m, smp.positive, grads, inv_b * (1.0 - sigmoid(m.gamma - sp)));
    if (smp.negatives.empty()) continue;
    const double inv_n = 1.0 / static_cast<double>(smp.negatives.size());
    for (const auto& neg : smp.negatives) {
      const double sn = kg_score(m, neg);
      loss -= inv_n * log_sigmoid(sn - m.gamma) * inv_b;
      if (grads) detail::kg_score(m, neg, grads, -inv_b * inv_n * (1.0 - sigmoid(sn - m.gamma)));
    }
  }
  return loss;
}

/// Corrupt head or tail (probability 1/2 each) with a uniformly drawn entity.
inline EncodedTriplet corrupt(const EncodedTriplet& pos, std::size_t num_entities, Rng& rng) {
  EncodedTriplet neg = pos;
  if (rng.bernoulli(0.5)) {
    neg.head_object = static_cast<int>(rng.below(num_entities));
    neg.head_action = -1;
  } else {
    neg.tail = static_cast<int>(rng.below(num_entities));
  }
  return neg;
}

inline std::vector<KgSample> sample_kg_batch(const std::vector<EncodedTriplet>& positives,
                                             std::size_t num_entities, const KgTrainConfig& cfg,
                                             std::size_t step) {
  Rng rng(derive_seed(cfg.seed, 0x4B4753544550ULL, step));
  const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(std::max(cfg.batch_size, 1)),
                                              positives.size());
  std::vector<KgSample> batch;
  batch.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    KgSample smp;
    smp.positive = positives[rng.below(positives.size())];
    for (int n = 0; n < cfg.negatives; ++n) smp.negatives.push_back(corrupt(smp.positive, num_entities, rng));
    batch.push_back(std::move(smp));
  }
  return batch;
}

inline void apply_kg_step(KgModel& m, const KgGradients& g, double lr) {
  for (std::size_t i = 0; i < m.entities.size(); ++i) m.entities[i] -= lr * g.entities[i];
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t r = 0; r < m.relations.size(); ++r) {
    auto& th = m.relations[r].theta;
    th -= lr * g.phases[r];
    for (Eigen::Index k = 0; k < th.size(); ++k) {
      th[k] = std::fmod(th[k], two_pi);
      if (th[k] < 0) th[k] += two_pi;
    }
  }
  m.gate.weight -= lr * g.gate_weight;
  m.gate.bias -= lr * g.gate_bias;
}

struct KgTrainReport {
  std::vector<double> losses;  // one per step
};

/// Stochastic gradient descent on the negative-sampling objective.
inline KgModel train_kg(const std::vector<Triplet>& triplets, const ConceptVocabulary* vocab,
                        const KgTrainConfig& cfg, KgTrainReport* report = nullptr) {
  if (triplets.empty()) throw TrainError("train_kg: empty triplet list");
  KgModel model = init_kg(triplets, vocab, cfg);
  std::vector<EncodedTriplet> positives;
  for (const auto& t : triplets) positives.push_back(*model.encode(t));

  for (int step = 0; step < cfg.steps; ++step) {
    const auto batch = sample_kg_batch(positives, model.entities.size(), cfg, static_cast<std::size_t>(step));
    KgGradients grads = KgGradients::zeros_like(model);
    const double loss = kg_loss(model, batch, &grads);
    if (!std::isfinite(loss)) {
      throw DivergenceError("non-finite KG loss", 0, 0, static_cast<std::size_t>(step));
    }
    if (report) report->losses.push_back(loss);
    apply_kg_step(model, grads, cfg.learning_rate);
  }
  return model;
}

inline KgModel train_kg(const std::vector<Triplet>& triplets, const ConceptVocabulary& vocab,
                        const KgTrainConfig& cfg, KgTrainReport* report = nullptr) {
  return train_kg(triplets, &vocab, cfg, report);
}

// ---------------------------------------------------------------------------
// Link prediction and evaluation
// ---------------------------------------------------------------------------

struct LinkPrediction {
  std::size_t head_index = 0;  // position in the in-tree list
  Phrase head;
  std::string relation;
  std::size_t tail_index = 0;  // position in the candidate list
  Phrase tail;
  double score = 0.0;
};

/// Every (tree node, relation, candidate) link scoring at most s_max, best
/// first. Ties fall back to relation label, tail text, then list positions.
inline std::vector<LinkPrediction> predict_links(const KgModel& model, const std::vector<Phrase>& in_tree,
                                                 const std::vector<Phrase>& candidates, double s_max,
                                                 std::size_t* unknown = nullptr) {
  std::vector<LinkPrediction> out;
  if (candidates.empty() || in_tree.empty()) return out;
  for (std::size_t v = 0; v < candidates.size(); ++v) {
    const ComplexVec t = model.tail_embedding(candidates[v], unknown);
    for (std::size_t u = 0; u < in_tree.size(); ++u) {
      const ComplexVec h = model.head_embedding(in_tree[u], t, unknown);
      for (std::size_t r = 0; r < model.relations.size(); ++r) {
        const double s = score_triplet(h, model.relations[r], t);
        if (!(s <= s_max)) continue;
        out.push_back(LinkPrediction{u, in_tree[u], model.relation_names[r], v, candidates[v], s});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const LinkPrediction& a, const LinkPrediction& b) {
    if (a.score != b.score) return a.score < b.score;
    if (a.relation != b.relation) return a.relation < b.relation;
    const auto ta = a.tail.text(), tb = b.tail.text();
    if (ta != tb) return ta < tb;
    if (a.head_index != b.head_index) return a.head_index < b.head_index;
    return a.tail_index < b.tail_index;
  });
  return out;
}

/// Linear-interpolated percentile (p in [0,100]) of the stored triplet scores.
inline double score_percentile(const KgModel& model, double p) {
  std::vector<double> scores;
  for (const auto& t : model.triplets) scores.push_back(model.score(t));
  if (scores.empty()) throw ArgumentError("score_percentile: model has no triplets");
  std::sort(scores.begin(), scores.end());
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(scores.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, scores.size() - 1);
  return scores[lo] + (pos - static_cast<double>(lo)) * (scores[hi] - scores[lo]);
}

struct RankingMetrics {
  double mrr = 0.0;
  double hits_at_1 = 0.0;
  double hits_at_3 = 0.0;
  double hits_at_10 = 0.0;
  std::size_t rankings = 0;
};

/// Filtered ranking of held-out triplets: tails are ranked against every
/// entity, simple heads against every entity, skipping corruptions that are
/// themselves known true triplets.
inline RankingMetrics evaluate_ranking(const KgModel& model, const std::vector<Triplet>& test,
                                       const std::vector<Triplet>& all_true) {
  std::set<EncodedTriplet> known;
  for (const auto& t : all_true) {
    if (auto e = model.encode(t)) known.insert(*e);
  }
  RankingMetrics m;
  const int n = static_cast<int>(model.entities.size());
  auto record = [&](std::size_t rank) {
    m.mrr += 1.0 / static_cast<double>(rank);
    m.hits_at_1 += rank <= 1 ? 1.0 : 0.0;
    m.hits_at_3 += rank <= 3 ? 1.0 : 0.0;
    m.hits_at_10 += rank <= 10 ? 1.0 : 0.0;
    ++m.rankings;
  };
  for (const auto& t : test) {
    const auto enc = model.encode(t);
    if (!enc) throw ArgumentError("evaluate_ranking: triplet not resolvable in the model");
    const double truth = kg_score(model, *enc);
    std::size_t rank = 1;
    for (int e = 0; e < n; ++e) {
      EncodedTriplet c = *enc;
      c.tail = e;
      if (c == *enc || known.contains(c)) continue;
      if (kg_score(model, c) < truth) ++rank;
    }
    record(rank);
    if (enc->head_action < 0) {
      rank = 1;
      for (int e = 0; e < n; ++e) {
        EncodedTriplet c = *enc;
        c.head_object = e;
        if (c == *enc || known.contains(c)) continue;
        if (kg_score(model, c) < truth) ++rank;
      }
      record(rank);
    }
  }
  if (m.rankings) {
    const double inv = 1.0 / static_cast<double>(m.rankings);
    m.mrr *= inv;
    m.hits_at_1 *= inv;
    m.hits_at_3 *= inv;
    m.hits_at_10 *= inv;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoint: "WCKG", u32 version, u32 E, f64 gamma, entity names + values,
// relation names + phases, gate W (row-major) and b, then the triplet store.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kKgCheckpointVersion = 1;

inline void save_kg(const KgModel& m, std::ostream& out) {
  using namespace binio;
  write_magic(out, "WCKG");
  write_u32(out, kKgCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(m.dim));
  write_f64(out, m.gamma);
  write_u32(out, static_cast<std::uint32_t>(m.entity_names.size()));
  for (const auto& n : m.entity_names) write_string(out, n);
  for (const auto& v : m.entities) {
    for (int k = 0; k < m.dim; ++k) {
      write_f64(out, v[k].real());
      write_f64(out, v[k].imag());
    }
  }
  write_u32(out, static_cast<std::uint32_t>(m.relation_names.size()));
  for (const auto& n : m.relation_names) write_string(out, n);
  for (const auto& r : m.relations) {
    for (int k = 0; k < m.dim; ++k) write_f64(out, r.theta[k]);
  }
  for (Eigen::Index i = 0; i < m.gate.weight.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.gate.weight.cols(); ++j) write_f64(out, m.gate.weight(i, j));
  }
  for (Eigen::Index i = 0; i < m.gate.bias.size(); ++i) write_f64(out, m.gate.bias[i]);
  write_u32(out, static_cast<std::uint32_t>(m.triplets.size()));
  for (const auto& t : m.triplets) {
    write_string(out, t.head.key());
    write_string(out, t.relation);
    write_string(out, t.tail.key());
  }
}

inline KgModel load_kg(std::istream& in) {
  using namespace binio;
  expect_magic(in, "WCKG");
  const auto version = read_u32(in, "version");
  if (version != kKgCheckpointVersion) throw IngestError("unsupported WCKG version " + std::to_string(version));
  KgModel m;
  m.dim = static_cast<int>(read_u32(in, "dim"));
  m.gamma = read_f64(in, "gamma");
  const auto ne = read_u32(in, "entity count");
  for (std::uint32_t i = 0; i < ne; ++i) m.entity_names.push_back(read_string(in, "entity name"));
  for (std::uint32_t i = 0; i < ne; ++i) {
    ComplexVec v(m.dim);
    for (int k = 0; k < m.dim; ++k) {
      const double re = read_f64(in, "entity");
      const double im = read_f64(in, "entity");
      v[k] = {re, im};
    }
    m.entities.push_back(std::move(v));
  }
  const auto nr = read_u32(in, "relation count");
  for (std::uint32_t i = 0; i < nr; ++i) m.relation_names.push_back(read_string(in, "relation name"));
  for (std::uint32_t i = 0; i < nr; ++i) {
    Eigen::VectorXd th(m.dim);
    for (int k = 0; k < m.dim; ++k) th[k] = read_f64(in, "phase");
    m.relations.push_back(RelationPhases{std::move(th)});
  }
  m.gate = GateParams::zeros(m.dim);
  for (Eigen::Index i = 0; i < m.gate.weight.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.gate.weight.cols(); ++j) m.gate.weight(i, j) = read_f64(in, "gate");
  }
  for (Eigen::Index i = 0; i < m.gate.bias.size(); ++i) m.gate.bias[i] = read_f64(in, "gate");
  const auto nt = read_u32(in, "triplet count");
  for (std::uint32_t i = 0; i < nt; ++i) {
    auto h = Phrase::from_key(read_string(in, "triplet"));
    auto r = read_string(in, "triplet");
    auto t = Phrase::from_key(read_string(in, "triplet"));
    m.triplets.push_back(Triplet{std::move(h), std::move(r), std::move(t)});
  }
  if (!std::is_sorted(m.entity_names.begin(), m.entity_names.end()) ||
      !std::is_sorted(m.relation_names.begin(), m.relation_names.end())) {
    throw IngestError("WCKG name tables must be sorted");
  }
  return m;
}

inline void save_kg(const KgModel& m, const std::string& path) {
  auto out = binio::open_out(path);
  save_kg(m, out);
}

inline KgModel load_kg(const std::string& path) {
  auto in = binio::open_in(path);
  return load_kg(in);
}

}  // namespace weakcap
