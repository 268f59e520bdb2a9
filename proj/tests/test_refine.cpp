#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"
#include "weakcap/refine.hpp"
#include "weakcap/synth.hpp"

using namespace weakcap;
using namespace weakcap::testing;

namespace {

// A small toy world kept in memory: vocabulary, trained KG and video records.
struct Toy {
  SynthDataset ds;
  ConceptVocabulary vocab;
  KgModel kg;
  RefineConfig cfg;

  RefineData data() const {
    RefineData d;
    d.vocab = &vocab;
    for (const auto* src : {&ds.train, &ds.val}) {
      for (const auto& sv : *src) {
        VideoRecord v;
        v.video_id = sv.id;
        v.object_map = sv.object_map.regions;
        v.action_map = sv.action_map.regions;
        v.global = sv.global;
        v.annotation = sv.annotation;
        (src == &ds.train ? d.train : d.val).push_back(std::move(v));
      }
    }
    return d;
  }
};

const Toy& toy() {
  static const Toy t = [] {
    Toy t;
    SynthSpec spec;
    spec.videos = 14;
    spec.val_videos = 4;
    spec.sentences = 24;
    spec.feature_dim = 8;
    spec.embed_dim = 8;
    t.ds = make_synth(spec);
    t.vocab = build_vocabulary(t.ds.corpus, t.ds.hypernyms);
    t.vocab.embedding_dim = spec.embed_dim;
    for (const auto* list : {&t.vocab.objects, &t.vocab.actions, &t.vocab.relations}) {
      for (const auto& l : *list) {
        for (const auto& w : text::split_ws(l)) {
          if (auto it = t.ds.embeddings.find(w); it != t.ds.embeddings.end()) t.vocab.embeddings[w] = it->second;
        }
      }
    }
    KgTrainConfig kc;
    kc.dim = 8;
    kc.gamma = 3.0;
    kc.steps = 400;
    t.kg = train_kg(extract_all_triplets(t.ds.corpus), t.vocab, kc);
    t.cfg.thresholds.probability = 0.9;
    t.cfg.lambda = 1.0;
    t.cfg.reg_weight = 1e-4;
    t.cfg.learning_rate = 0.01;
    t.cfg.epochs = 6;
    t.cfg.batch_size = 8;
    t.cfg.max_iterations = 4;
    t.cfg.min_iterations = 3;
    t.cfg.span.s_max = score_percentile(t.kg, 90);
    t.cfg.span.max_nodes = 4;
    t.cfg.hidden = 12;
    t.cfg.attention = 8;
    t.cfg.word_dim = 8;
    t.cfg.decode = DecodeConfig{2, 6};
    return t;
  }();
  return t;
}

std::vector<double> flat_params(ModelParams& p) {
  std::vector<double> out;
  for (const auto& v : tensor_views(p)) out.insert(out.end(), v.data, v.data + v.size());
  return out;
}

}  // namespace

TEST(UpdateIndicators, Examples) {
  const Indicator g{0, 1, 0, 0, 1};
  EXPECT_EQ(update_indicators(g, {}), g);
  EXPECT_EQ(update_indicators(Indicator(5, 0), {3}), (Indicator{0, 0, 0, 1, 0}));
  EXPECT_EQ(update_indicators(g, {1, 2}), (Indicator{0, 1, 1, 0, 1}));
  EXPECT_THROW(update_indicators(g, {5}), ArgumentError);
}

TEST(CombineLosses, WeightsOnlyTheConceptTerm) {
  EXPECT_DOUBLE_EQ(combine_losses(2.0, 3.0, 1.0, 0.1), 4.2);
  EXPECT_DOUBLE_EQ(combine_losses(2.0, 3.0, 1.0, 0.0), 4.0);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const auto vocab = make_vocab(numbered("o", 3), numbered("a", 2), {"in"}, 4, seed);
    auto cap = random_caption_instance(seed, 6, 9, 4, 3, 2, 3, 2);
    ModelParams p;
    p.attention = AttentionParams::random(5, 4, 3, 2, seed, 0.5);
    p.gcn = cap.gcn;
    p.decoder = cap.dec;
    p.visit([&](const char*, auto& t) {
      for (Eigen::Index i = 0; i < t.size(); ++i) {
        if (t.data()[i] == 0.0) t.data()[i] = 0.3 * rng.normal();  // keep every norm away from zero
      }
    });
    std::vector<VideoRecord> videos(2);
    for (auto& v : videos) {
      v.object_map = random_matrix(rng, 3, 5);
      v.action_map = random_matrix(rng, 3, 5);
      v.object_indicator = {1, 0, 1};
      v.action_indicator = {0, 1};
    }
    const std::vector<const VideoRecord*> batch{&videos[0], &videos[1]};
    const double lambda = 0.7, reg = 0.01;
    auto res = total_loss(batch, cap.samples, vocab, p, lambda, reg, true);
    const auto rep = fd_check(tensor_views(p), tensor_views(res.gradients),
                              [&] { return total_loss(batch, cap.samples, vocab, p, lambda, reg, false).total; });
    EXPECT_LT(rep.max_rel, 1e-4) << "seed " << seed << " worst " << rep.worst;
    EXPECT_DOUBLE_EQ(res.total, combine_losses(res.concept_loss, res.caption, res.regularizer, lambda));
  }
}

TEST(TotalLoss, RegularizerIsSumOfNorms) {
  const auto vocab = make_vocab({"o"}, {"a"}, {}, 2, 1);
  ModelParams p;
  p.attention = AttentionParams::zeros(2, 2, 1, 1);
  p.attention.object.bias[0] = 3.0;
  p.attention.action.bias[0] = -4.0;
  p.gcn = GcnParams::zeros(2, 0);
  CaptionerDims d;
  d.embed = 2;
  d.global = 1;
  d.word = 1;
  d.hidden = 1;
  d.attention = 1;
  p.decoder = DecoderParams::zeros(d);
  const auto res = total_loss({}, {}, vocab, p, 0.1, 2.0, true);
  EXPECT_DOUBLE_EQ(res.regularizer, 2.0 * 7.0);
  EXPECT_DOUBLE_EQ(res.total, 14.0);
  EXPECT_DOUBLE_EQ(res.gradients.attention.object.bias[0], 2.0);
  EXPECT_DOUBLE_EQ(res.gradients.attention.action.bias[0], -2.0);
  EXPECT_THROW(total_loss({}, {}, vocab, p, -1.0), ArgumentError);
}

TEST(RefineConfig, Validation) {
  RefineConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lambda = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RefineConfig{};
  c.batch_size = 0;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "batch_size");
  }
}

TEST(RunIteration, FirstCallUsesAnnotationsOnly) {
  const auto& t = toy();
  auto data = t.data();
  auto st = init_refine(data, t.kg, t.cfg);
  const auto rec = run_iteration(st, data, t.kg, t.cfg);
  EXPECT_EQ(rec.iteration, 1);
  EXPECT_EQ(rec.new_pseudo, 0u);
  EXPECT_EQ(rec.pseudo_generated, 0u);
  EXPECT_TRUE(rec.pseudo.empty());
  EXPECT_EQ(st.pool.size(), data.train.size());
  for (const auto& pair : st.pool) {
    EXPECT_EQ(pair.origin, PairOrigin::Annotation);
    EXPECT_EQ(pair.sentence.size(), 1u);
  }
  EXPECT_FALSE(st.flag);
  EXPECT_TRUE(st.captions.empty());
}

TEST(RunIteration, SecondCallGeneratesPseudoSentences) {
  const auto& t = toy();
  auto data = t.data();
  auto st = init_refine(data, t.kg, t.cfg);
  run_iteration(st, data, t.kg, t.cfg);
  const auto rec = run_iteration(st, data, t.kg, t.cfg);
  EXPECT_GT(rec.pseudo_generated, 0u);
  for (const auto& p : rec.pseudo) {
    EXPECT_TRUE(p.tree.valid());
    EXPECT_EQ(p.tokens, linearize(p.tree));
    EXPECT_EQ(p.tree.iteration, 2);
  }
}

TEST(RunIteration, EmptyVideoSetOnlyClearsFlag) {
  const auto& t = toy();
  auto data = t.data();
  auto st = init_refine(data, t.kg, t.cfg);
  data.train.clear();
  auto before = flat_params(st.params);
  const auto rec = run_iteration(st, data, t.kg, t.cfg);
  EXPECT_FALSE(st.flag);
  EXPECT_TRUE(st.pool.empty());
  EXPECT_EQ(rec.new_pseudo, 0u);
  EXPECT_EQ(flat_params(st.params), before);
}

TEST(Run, SingleIteration) {
  const auto& t = toy();
  auto data = t.data();
  auto cfg = t.cfg;
  cfg.max_iterations = 1;
  auto st = init_refine(data, t.kg, cfg);
  const auto res = run(st, data, t.kg, cfg);
  EXPECT_EQ(res.history.size(), 1u);
  EXPECT_EQ(res.stop_reason, "iteration limit");
  EXPECT_EQ(res.best_iteration, 1);
}

TEST(Run, ZeroPatienceWithFlatCiderStopsAfterTwo) {
  const auto& t = toy();
  auto data = t.data();
  data.val.clear();  // CIDEr stays at 0
  auto cfg = t.cfg;
  cfg.patience = 0;
  cfg.min_iterations = 1;
  auto st = init_refine(data, t.kg, cfg);
  const auto res = run(st, data, t.kg, cfg);
  ASSERT_EQ(res.history.size(), 2u);
  if (res.history[1].new_pseudo > 0) EXPECT_EQ(res.stop_reason, "validation CIDEr stopped improving");
  EXPECT_EQ(res.best_iteration, 1);
}

TEST(Run, EmptyTrainingSetStopsWithoutPseudoSentences) {
  const auto& t = toy();
  auto data = t.data();
  data.train.clear();
  auto cfg = t.cfg;
  cfg.min_iterations = 1;
  auto st = init_refine(data, t.kg, cfg);
  const auto res = run(st, data, t.kg, cfg);
  EXPECT_EQ(res.history.size(), 2u);
  EXPECT_EQ(res.stop_reason, "no new pseudo sentences");
}

TEST(Run, InvariantsHoldAcrossIterations) {
  const auto& t = toy();
  auto data = t.data();
  auto st = init_refine(data, t.kg, t.cfg);
  std::map<std::string, std::pair<std::set<std::size_t>, std::set<std::size_t>>> prev_sets = st.index_sets;
  std::vector<std::vector<double>> snapshots;
  bool monotone = true, covered = true;
  const auto res = run(st, data, t.kg, t.cfg, [&](const IterationRecord&, const RefineState& s) {
    snapshots.push_back(flat_params(const_cast<ModelParams&>(s.params)));
    for (const auto& [id, sets] : s.index_sets) {
      const auto& old = prev_sets.at(id);
      monotone &= std::includes(sets.first.begin(), sets.first.end(), old.first.begin(), old.first.end());
      monotone &= std::includes(sets.second.begin(), sets.second.end(), old.second.begin(), old.second.end());
    }
    for (const auto& v : data.train) {
      const auto& sets = s.index_sets.at(v.video_id);
      for (auto i : sets.first) covered &= v.object_indicator[i] == 1;
      for (auto i : sets.second) covered &= v.action_indicator[i] == 1;
    }
    prev_sets = s.index_sets;
  });
  EXPECT_TRUE(monotone);
  EXPECT_TRUE(covered);
  ASSERT_GE(res.history.size(), 3u);

  std::set<std::pair<std::string, TokenSeq>> keys;
  for (const auto& p : st.pool) EXPECT_TRUE(keys.emplace(p.video_id, p.sentence).second);
  for (std::size_t i = 0; i < res.history.size(); ++i) {
    EXPECT_EQ(res.history[i].iteration, static_cast<int>(i) + 1);
    if (i == 0) continue;
    EXPECT_GE(res.history[i].pool_size, res.history[i - 1].pool_size);
    EXPECT_GE(res.history[i].pseudo_total, res.history[i - 1].pseudo_total);
  }

  // returned snapshot is the first argmax of the CIDEr history
  std::size_t arg = 0;
  for (std::size_t i = 1; i < res.history.size(); ++i) {
    if (res.history[i].cider > res.history[arg].cider) arg = i;
  }
  EXPECT_EQ(res.best_iteration, static_cast<int>(arg) + 1);
  EXPECT_EQ(res.best_cider, res.history[arg].cider);
  auto best = res.best;
  EXPECT_EQ(flat_params(best), snapshots[arg]);
}

TEST(Run, SeededRunsAreIdentical) {
  const auto& t = toy();
  auto go = [&] {
    auto data = t.data();
    auto cfg = t.cfg;
    cfg.max_iterations = 3;
    auto st = init_refine(data, t.kg, cfg);
    auto res = run(st, data, t.kg, cfg);
    std::string dump;
    for (const auto& r : res.history) dump += r.history_json().dump() + "\n";
    std::ostringstream ckpt;
    save_model(ckpt, res.best, st.dict, st.relations, res.best_iteration);
    return dump + ckpt.str();
  };
  EXPECT_EQ(go(), go());
}

TEST(Checkpoint, ModelRoundTrip) {
  const auto& t = toy();
  auto data = t.data();
  auto st = init_refine(data, t.kg, t.cfg);
  std::stringstream buf;
  save_model(buf, st.params, st.dict, st.relations, 7);
  auto back = load_model(buf);
  EXPECT_EQ(back.iteration, 7);
  EXPECT_EQ(back.dict.tokens(), st.dict.tokens());
  EXPECT_EQ(back.relations, st.relations);
  EXPECT_EQ(flat_params(back.params), flat_params(st.params));

  std::stringstream bad(buf.str().substr(0, 40));
  EXPECT_THROW(load_model(bad), IngestError);
}

TEST(Inference, MostProbableConceptFallsBackToArgmax) {
  const auto& t = toy();
  auto data = t.data();
  auto st = init_refine(data, t.kg, t.cfg);
  auto& v = data.val.front();
  const Phrase best = most_probable_concept(v, t.vocab, st.params.attention);
  double top = -1.0;
  for (Stream k : {Stream::Object, Stream::Action}) {
    const auto& names = concepts_of(t.vocab, k);
    for (std::size_t i = 0; i < names.size(); ++i) {
      top = std::max(top, self_probability(v.map(k), t.vocab.embedding(names[i]), st.params.attention[k], i));
    }
  }
  const auto& names = best.has_noun() ? t.vocab.objects : t.vocab.actions;
  const Stream k = best.has_noun() ? Stream::Object : Stream::Action;
  const auto idx = static_cast<std::size_t>(std::find(names.begin(), names.end(), best.text()) - names.begin());
  EXPECT_EQ(self_probability(v.map(k), t.vocab.embedding(best.text()), st.params.attention[k], idx), top);
  const auto trees = inference_trees(v, t.vocab, t.kg, st, t.cfg, 1);
  EXPECT_FALSE(trees.empty());
}
