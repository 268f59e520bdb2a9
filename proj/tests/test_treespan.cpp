#include <gtest/gtest.h>

#include "support.hpp"
#include "weakcap/synth.hpp"
#include "weakcap/treespan.hpp"

using namespace weakcap;
using namespace weakcap::testing;

namespace {

DependencyTree tree_of(std::vector<Phrase> nodes, std::vector<TreeEdge> edges) {
  DependencyTree t;
  t.nodes = std::move(nodes);
  t.edges = std::move(edges);
  return t;
}

Eigen::VectorXd one_hot(int q, int at) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(q);
  v[at] = 1.0;
  return v;
}

}  // namespace

TEST(Linearize, RootOnly) {
  const auto t = tree_of({Phrase::make_noun_verb("man", "ride")}, {});
  EXPECT_EQ(linearize(t), (TokenSeq{"man", "ride"}));
  EXPECT_TRUE(linearize(DependencyTree{}).empty());
}

TEST(Linearize, ObjectThenPreposition) {
  const auto t = tree_of({Phrase::make_noun_verb("man", "ride"), Phrase::make_noun("street"), Phrase::make_noun("bike")},
                         {{0, "on", 1}, {0, "obj", 2}});
  EXPECT_EQ(linearize(t), (TokenSeq{"man", "ride", "bike", "on", "street"}));
}

TEST(Linearize, PrepositionsInLabelOrder) {
  const auto t = tree_of({Phrase::make_noun_verb("dog", "run"), Phrase::make_noun("street"), Phrase::make_noun("park")},
                         {{0, "on", 1}, {0, "in", 2}});
  EXPECT_EQ(linearize(t), (TokenSeq{"dog", "run", "in", "park", "on", "street"}));
}

TEST(Linearize, NestedSubtreesFollowTheirParent) {
  const auto t = tree_of({Phrase::make_noun_verb("girl", "tie"), Phrase::make_noun("hair"), Phrase::make_noun("ribbon"),
                          Phrase::make_noun("room")},
                         {{0, "obj", 1}, {1, "with", 2}, {0, "in", 3}});
  EXPECT_EQ(linearize(t), (TokenSeq{"girl", "tie", "hair", "with", "ribbon", "in", "room"}));
}

TEST(Linearize, FlatTreesRoundTripThroughToyGrammarProperty) {
  const auto vocab = make_vocab({"man", "bike", "street", "park", "ball", "dog"}, {"ride", "kick"}, {"in", "obj", "on"}, 2, 1);
  const std::vector<std::string> objects{"bike", "street", "park", "ball", "dog"};
  const std::vector<std::string> rels{"obj", "in", "on"};
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    DependencyTree t;
    t.nodes.push_back(Phrase::make_noun_verb("man", rng.bernoulli(0.5) ? "ride" : "kick"));
    auto pool = objects;
    rng.shuffle(pool);
    const std::size_t k = rng.below(4);
    for (std::size_t c = 0; c < k; ++c) {
      t.edges.push_back({0, rels[rng.below(3)], static_cast<int>(t.nodes.size())});
      t.nodes.push_back(Phrase::make_noun(pool[c]));
    }
    ASSERT_TRUE(t.valid());
    const auto parsed = toy_parse(linearize(t), vocab);
    ASSERT_TRUE(is_valid_tree(parsed));
    const auto triplets = extract_triplets(parsed);
    std::set<Triplet> got(triplets.begin(), triplets.end());
    std::set<Triplet> want;
    for (const auto& e : t.edges) want.insert({t.nodes[0], e.relation, t.nodes[static_cast<std::size_t>(e.child)]});
    EXPECT_EQ(got, want) << text::join(linearize(t));
  }
}

TEST(DependencyTree, Validity) {
  EXPECT_FALSE(DependencyTree{}.valid());
  EXPECT_TRUE(tree_of({Phrase::make_noun("cat")}, {}).valid());
  EXPECT_FALSE(tree_of({Phrase::make_noun("cat"), Phrase::make_noun("cat")}, {{0, "on", 1}}).valid());
  EXPECT_FALSE(tree_of({Phrase::make_noun("cat"), Phrase::make_noun("mat")}, {{1, "on", 1}}).valid());
  EXPECT_FALSE(tree_of({Phrase::make_noun("cat"), Phrase::make_noun("mat")}, {{0, "", 1}}).valid());
}

TEST(GenerateRoots, SpatialConsistencyDecidesPairs) {
  const auto vocab = make_vocab({"ball", "dog", "man"}, {"kick", "run"}, {}, 2, 1);
  VideoRecord v;
  v.object_indicator = {1, 1, 1};
  v.action_indicator = {1, 0};
  v.object_alpha[0] = one_hot(4, 0);                             // ball, far from kick
  v.object_alpha[1] = 0.5 * (one_hot(4, 2) + one_hot(4, 3));      // dog, half overlapping
  v.object_alpha[2] = one_hot(4, 3);                             // man, same place as kick
  v.action_alpha[0] = one_hot(4, 3);
  v.action_alpha[1] = one_hot(4, 0);                             // inactive action is ignored
  EXPECT_EQ(generate_roots(v, vocab, 0.1, {}), (std::vector<Phrase>{Phrase::make_noun_verb("man", "kick")}));
  EXPECT_EQ(generate_roots(v, vocab, 0.5, {}),
            (std::vector<Phrase>{Phrase::make_noun_verb("dog", "kick"), Phrase::make_noun_verb("man", "kick")}));
  EXPECT_EQ(generate_roots(v, vocab, 1.0, {}).size(), 3u);
}

TEST(GenerateRoots, PriorCaptionsAndFallback) {
  const auto vocab = make_vocab({"dog", "man"}, {"run"}, {}, 2, 1);
  VideoRecord v;
  v.object_indicator = {0, 0};
  v.action_indicator = {0};
  v.annotation = Phrase::make_noun("dog");
  EXPECT_EQ(generate_roots(v, vocab, 0.1, {}), (std::vector<Phrase>{Phrase::make_noun("dog")}));
  EXPECT_TRUE(generate_roots(v, vocab, 0.1, {}, std::nullopt).empty());
  EXPECT_EQ(generate_roots(v, vocab, 0.1, {{"a", "man", "is", "run", "with", "dog"}}),
            (std::vector<Phrase>{Phrase::make_noun_verb("man", "run")}));
  EXPECT_EQ(generate_roots(v, vocab, 0.1, {{"dog", "dog"}}), (std::vector<Phrase>{Phrase::make_noun("dog")}));
}

TEST(GenerateRoots, MissingAlphaSkipsConcept) {
  const auto vocab = make_vocab({"man"}, {"run"}, {}, 2, 1);
  VideoRecord v;
  v.object_indicator = {1};
  v.action_indicator = {1};
  v.action_alpha[0] = one_hot(2, 0);
  EXPECT_TRUE(generate_roots(v, vocab, 1.0, {}, std::nullopt).empty());
}

TEST(SpanCandidates, ExcludeRootParts) {
  const auto vocab = make_vocab({"bike", "man"}, {"ride", "run"}, {}, 2, 1);
  VideoRecord v;
  v.object_indicator = {1, 1};
  v.action_indicator = {1, 1};
  EXPECT_EQ(span_candidates(Phrase::make_noun_verb("man", "ride"), v, vocab),
            (std::vector<Phrase>{Phrase::make_noun("bike"), Phrase::make_verb("run")}));
}

TEST(SpanTree, BudgetsAndThresholds) {
  auto inst = random_kg_instance(21, 4);
  const Phrase root = Phrase::make_noun_verb("man", "ride");
  const std::vector<Phrase> cands{Phrase::make_noun("bike"), Phrase::make_noun("street"), Phrase::make_noun("cat")};
  SpanConfig cfg;
  cfg.max_nodes = 1;
  EXPECT_EQ(span_tree(root, cands, inst.model, cfg).nodes.size(), 1u);
  cfg.max_nodes = 10;
  EXPECT_EQ(span_tree(root, cands, inst.model, cfg).nodes.size(), 4u);
  cfg.s_max = -1.0;
  EXPECT_EQ(span_tree(root, cands, inst.model, cfg).nodes.size(), 1u);
  cfg.max_nodes = 0;
  EXPECT_THROW(span_tree(root, cands, inst.model, cfg), ArgumentError);
}

TEST(SpanTree, FirstEdgeIsTheBestLink) {
  auto inst = random_kg_instance(22, 4);
  const Phrase root = Phrase::make_noun_verb("dog", "chase");
  const std::vector<Phrase> cands{Phrase::make_noun("cat"), Phrase::make_noun("park")};
  const auto tree = span_tree(root, cands, inst.model, SpanConfig{});
  const auto best = predict_links(inst.model, {root}, cands, std::numeric_limits<double>::infinity()).front();
  ASSERT_FALSE(tree.edges.empty());
  EXPECT_EQ(tree.edges[0].relation, best.relation);
  EXPECT_EQ(tree.nodes[1], best.tail);
}

TEST(SpanTree, TighterSmaxGivesPrefixTreesProperty) {
  const std::vector<Phrase> cands{Phrase::make_noun("bike"), Phrase::make_noun("street"), Phrase::make_noun("cat"),
                                  Phrase::make_noun("park"), Phrase::make_verb("run")};
  Rng rng(5);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto inst = random_kg_instance(seed, 4);
    const Phrase root = Phrase::make_noun_verb("man", "ride");
    SpanConfig loose;
    loose.s_max = rng.uniform(2.0, 10.0);
    loose.max_nodes = 6;
    SpanConfig tight = loose;
    tight.s_max = loose.s_max * rng.uniform();
    const auto big = span_tree(root, cands, inst.model, loose);
    const auto small = span_tree(root, cands, inst.model, tight);
    EXPECT_TRUE(big.valid());
    EXPECT_TRUE(small.valid());
    ASSERT_LE(small.nodes.size(), big.nodes.size());
    for (std::size_t i = 0; i < small.edges.size(); ++i) EXPECT_EQ(small.edges[i], big.edges[i]);
    for (std::size_t i = 0; i < small.nodes.size(); ++i) EXPECT_EQ(small.nodes[i], big.nodes[i]);
  }
}

TEST(PseudoSentence, JsonFields) {
  auto t = tree_of({Phrase::make_noun_verb("man", "ride"), Phrase::make_noun("bike")}, {{0, "obj", 1}});
  t.video_id = "v7";
  t.iteration = 3;
  const auto j = pseudo_sentence_json(t, linearize(t));
  EXPECT_EQ(j["video_id"], "v7");
  EXPECT_EQ(j["iteration"], 3);
  EXPECT_EQ(j["root"], "man ride");
  EXPECT_EQ(j["tokens"], nlohmann::json({"man", "ride", "bike"}));
  EXPECT_EQ(j["tree"], nlohmann::json::parse(R"([["man ride","obj","bike"]])"));
}
