#pragma once

// Root generation, greedy tree spanning by link prediction, and surface
// realisation of spanned trees into pseudo sentences.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "weakcap/corpusio.hpp"
#include "weakcap/grounding.hpp"
#include "weakcap/kglink.hpp"

namespace weakcap {

struct TreeEdge {
  int parent = 0;
  std::string relation;
  int child = 0;

  friend bool operator==(const TreeEdge&, const TreeEdge&) = default;
};

/// Node 0 is the root. Edges are stored in attachment order.
struct DependencyTree {
  std::vector<Phrase> nodes;
  std::vector<TreeEdge> edges;
  std::string video_id;
  int iteration = 0;

  const Phrase& root() const { return nodes.front(); }

  bool valid() const {
    if (nodes.empty() || edges.size() + 1 != nodes.size()) return false;
    std::vector<int> parent_count(nodes.size(), 0);
    for (const auto& e : edges) {
      if (e.parent < 0 || e.child <= 0 || e.parent >= static_cast<int>(nodes.size()) ||
          e.child >= static_cast<int>(nodes.size()) || e.relation.empty()) {
        return false;
      }
      if (++parent_count[static_cast<std::size_t>(e.child)] > 1) return false;
    }
    // every node reaches the root
    for (std::size_t n = 1; n < nodes.size(); ++n) {
      int cur = static_cast<int>(n);
      std::size_t steps = 0;
      while (cur != 0) {
        auto it = std::find_if(edges.begin(), edges.end(), [&](const TreeEdge& e) { return e.child == cur; });
        if (it == edges.end() || ++steps > nodes.size()) return false;
        cur = it->parent;
      }
    }
    std::set<Phrase> seen(nodes.begin(), nodes.end());
    return seen.size() == nodes.size() && std::all_of(nodes.begin(), nodes.end(), [](const Phrase& p) { return p.valid(); });
  }
};

struct SpanConfig {
  double s_max = std::numeric_limits<double>::infinity();
  std::size_t max_nodes = 6;
  double delta = 0.1;
};

using TokenSeq = std::vector<std::string>;

/// Subject-predicate roots for a video: spatially consistent (object, action)
/// pairs among active concepts, pairs read off prior captions, and the weak
/// annotation as a last resort. Sorted by (object, action) lemma.
inline std::vector<Phrase> generate_roots(const VideoRecord& video, const ConceptVocabulary& vocab, double delta,
                                          const std::vector<TokenSeq>& prior_captions,
                                          const std::optional<Phrase>& fallback) {
  std::set<std::pair<std::string, std::string>> pairs;
  for (std::size_t j = 0; j < video.action_indicator.size(); ++j) {
    if (!video.action_indicator[j]) continue;
    auto aj = video.action_alpha.find(j);
    if (aj == video.action_alpha.end()) continue;
    for (std::size_t i = 0; i < video.object_indicator.size(); ++i) {
      if (!video.object_indicator[i]) continue;
      auto oi = video.object_alpha.find(i);
      if (oi == video.object_alpha.end()) continue;
      if (spatial_distance(oi->second, aj->second) <= delta) pairs.emplace(vocab.objects[i], vocab.actions[j]);
    }
  }
  for (const auto& caption : prior_captions) {
    std::optional<std::string> noun, verb;
    for (const auto& tok : caption) {
      if (!noun && vocab.object_index(tok)) noun = tok;
      if (!verb && vocab.action_index(tok)) verb = tok;
    }
    if (noun && verb) pairs.emplace(*noun, *verb);
  }
  std::vector<Phrase> roots;
  for (const auto& [n, v] : pairs) roots.push_back(Phrase::make_noun_verb(n, v));
  if (roots.empty() && fallback) roots.push_back(*fallback);
  return roots;
}

inline std::vector<Phrase> generate_roots(const VideoRecord& video, const ConceptVocabulary& vocab, double delta,
                                          const std::vector<TokenSeq>& prior_captions) {
  return generate_roots(video, vocab, delta, prior_captions, video.annotation);
}

/// Active concepts not already named by the root.
inline std::vector<Phrase> span_candidates(const Phrase& root, const VideoRecord& video,
                                           const ConceptVocabulary& vocab) {
  std::vector<Phrase> out;
  for (std::size_t i = 0; i < video.object_indicator.size(); ++i) {
    if (video.object_indicator[i] && (!root.noun || *root.noun != vocab.objects[i])) {
      out.push_back(Phrase::make_noun(vocab.objects[i]));
    }
  }
  for (std::size_t j = 0; j < video.action_indicator.size(); ++j) {
    if (video.action_indicator[j] && (!root.verb || *root.verb != vocab.actions[j])) {
      out.push_back(Phrase::make_verb(vocab.actions[j]));
    }
  }
  return out;
}

/// Greedy best-first attachment: repeatedly attach the single best link from
/// any tree node to any unattached candidate, while its score stays within
/// s_max and the node budget allows.
inline DependencyTree span_tree(const Phrase& root, const std::vector<Phrase>& candidates, const KgModel& kg,
                                const SpanConfig& cfg, std::size_t* unknown = nullptr) {
  if (cfg.max_nodes < 1) throw ArgumentError("span_tree: max_nodes must be at least 1");
  DependencyTree tree;
  tree.nodes.push_back(root);
  std::vector<Phrase> pending = candidates;
  while (tree.nodes.size() < cfg.max_nodes && !pending.empty()) {
    const auto links = predict_links(kg, tree.nodes, pending, cfg.s_max, unknown);
    if (links.empty()) break;
    const auto& best = links.front();
    tree.edges.push_back(TreeEdge{static_cast<int>(best.head_index), best.relation,
                                  static_cast<int>(tree.nodes.size())});
    tree.nodes.push_back(best.tail);
    pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(best.tail_index));
  }
  return tree;
}

inline DependencyTree span_tree(const Phrase& root, const VideoRecord& video, const ConceptVocabulary& vocab,
                                const KgModel& kg, const SpanConfig& cfg, std::size_t* unknown = nullptr) {
  DependencyTree tree = span_tree(root, span_candidates(root, video, vocab), kg, cfg, unknown);
  tree.video_id = video.video_id;
  return tree;
}

inline constexpr const char* kObjectRelation = "obj";

/// Depth-first realisation: node lemmas (noun before verb), then "obj"
/// children, then prepositional children in relation order, each preceded by
/// its relation label.
inline TokenSeq linearize(const DependencyTree& tree) {
  TokenSeq out;
  if (tree.nodes.empty()) return out;
  std::vector<std::vector<std::size_t>> kids(tree.nodes.size());
  for (std::size_t e = 0; e < tree.edges.size(); ++e) {
    kids[static_cast<std::size_t>(tree.edges[e].parent)].push_back(e);
  }
  std::function<void(std::size_t)> realize = [&](std::size_t node) {
    const Phrase& p = tree.nodes[node];
    if (p.noun) {
      for (auto& w : text::split_ws(*p.noun)) out.push_back(std::move(w));
    }
    if (p.verb) {
      for (auto& w : text::split_ws(*p.verb)) out.push_back(std::move(w));
    }
    auto order = kids[node];
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto& ea = tree.edges[a];
      const auto& eb = tree.edges[b];
      const bool oa = ea.relation == kObjectRelation, ob = eb.relation == kObjectRelation;
      if (oa != ob) return oa;
      if (ea.relation != eb.relation) return ea.relation < eb.relation;
      const auto ta = tree.nodes[static_cast<std::size_t>(ea.child)].text();
      const auto tb = tree.nodes[static_cast<std::size_t>(eb.child)].text();
      if (ta != tb) return ta < tb;
      return ea.child < eb.child;
    });
    for (std::size_t e : order) {
      const auto& edge = tree.edges[e];
      if (edge.relation != kObjectRelation) {
        for (auto& w : text::split_ws(edge.relation)) out.push_back(std::move(w));
      }
      realize(static_cast<std::size_t>(edge.child));
    }
  };
  realize(0);
  return out;
}

inline nlohmann::json pseudo_sentence_json(const DependencyTree& tree, const TokenSeq& tokens) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : tree.edges) {
    edges.push_back({tree.nodes[static_cast<std::size_t>(e.parent)].text(), e.relation,
                     tree.nodes[static_cast<std::size_t>(e.child)].text()});
  }
  nlohmann::json j;
  j["video_id"] = tree.video_id;
  j["iteration"] = tree.iteration;
  j["root"] = tree.root().text();
  j["tokens"] = tokens;
  j["tree"] = std::move(edges);
  return j;
}

}  // namespace weakcap
