// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failing criteria.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>

#include "support.hpp"
#include "weakcap/metrics.hpp"
#include "weakcap/planted_kg.hpp"
#include "weakcap/refine.hpp"
#include "weakcap/treespan.hpp"

using namespace weakcap;
using namespace weakcap::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (!pass) detail << "; ";
      detail << what;
      pass = false;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + WEAKCAP_CLI + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<nlohmann::json> read_jsonl(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::istringstream in(text::read_file(p.string()));
  for (std::string line; std::getline(in, line);) {
    if (!text::trim(line).empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  Outcome o;
  const auto t0 = Clock::now();
  constexpr double kTol = 1e-4;
  constexpr int kInstances = 20;
  double worst[4] = {0, 0, 0, 0};
  for (std::uint64_t seed = 1; seed <= kInstances; ++seed) {
    auto g = random_grounding(seed);
    const auto batch = pointers(g.videos);
    auto cl = concept_loss(batch, g.vocab, g.params);
    worst[0] = std::max(worst[0], fd_check(attention_views(g.params), attention_views(cl.gradients), [&] {
                                    return concept_loss(batch, g.vocab, g.params).loss;
                                  }).max_rel);

    auto kg = random_kg_instance(seed);
    auto kgrad = KgGradients::zeros_like(kg.model);
    kg_loss(kg.model, kg.batch, &kgrad);
    worst[1] = std::max(worst[1], fd_check(kg_views(kg.model), kg_views(kgrad), [&] {
                                    return kg_loss(kg.model, kg.batch, nullptr);
                                  }).max_rel);

    auto cap = random_caption_instance(seed, 8, 11, 4, 3, 3);
    const auto& smp = cap.samples[0];
    const auto rf = relation_features(smp.node_inputs, smp.edges, smp.relation_ids, cap.gcn);
    Rng rng(seed + 100);
    const Eigen::MatrixXd weights = random_matrix(rng, rf.features.rows(), rf.features.cols());
    auto ggrad = GcnParams::zeros(4, 3);
    relation_features_backward(rf, weights, cap.gcn, ggrad);
    worst[2] = std::max(worst[2], fd_check(tensor_views(cap.gcn), tensor_views(ggrad), [&] {
                                    return relation_features(smp.node_inputs, smp.edges, smp.relation_ids, cap.gcn)
                                        .features.cwiseProduct(weights)
                                        .sum();
                                  }).max_rel);

    auto dec = random_caption_instance(seed);
    auto res = caption_loss(dec.samples, dec.gcn, dec.dec, true);
    worst[3] = std::max(worst[3], fd_check(tensor_views(dec.dec), tensor_views(res.decoder_grad), [&] {
                                    return caption_loss(dec.samples, dec.gcn, dec.dec, false).loss;
                                  }).max_rel);
  }
  const char* names[4] = {"attention/classifier", "gate+rotation", "gcn", "decoder"};
  const double secs = seconds_since(t0);
  for (int i = 0; i < 4; ++i) {
    o.require(worst[i] < kTol, std::string(names[i]) + " max rel error " + fmt(worst[i]));
  }
  o.require(secs < 60.0, "took " + fmt(secs) + " s");
  if (o.pass) {
    o.detail << kInstances << " instances per component, worst rel errors " << fmt(worst[0], 2) << " / "
             << fmt(worst[1], 2) << " / " << fmt(worst[2], 2) << " / " << fmt(worst[3], 2) << ", " << fmt(secs, 3)
             << " s";
  }
  return o;
}

Outcome planted_kg_recovery() {
  Outcome o;
  const auto t0 = Clock::now();
  const PlantedKgSpec spec;
  const auto planted = make_planted_kg(spec);
  KgTrainConfig cfg;
  cfg.dim = 32;
  cfg.gamma = 6.0;
  cfg.steps = 3000;
  cfg.seed = 11;
  const auto model = train_kg(planted.train, nullptr, cfg);
  const auto m = evaluate_ranking(model, planted.test, planted.all);
  const double secs = seconds_since(t0);
  o.require(planted.all.size() == 200 && planted.train.size() == 160 && planted.test.size() == 40,
            "unexpected split sizes");
  o.require(m.mrr >= 0.5, "MRR " + fmt(m.mrr));
  o.require(m.hits_at_3 >= 0.6, "Hits@3 " + fmt(m.hits_at_3));
  o.require(secs < 120.0, "took " + fmt(secs) + " s");
  if (o.pass) {
    o.detail << "filtered MRR " << fmt(m.mrr) << ", Hits@3 " << fmt(m.hits_at_3) << " over " << m.rankings
             << " rankings, " << fmt(secs, 3) << " s";
  }
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  struct Row {
    const char* id;
    const char* cand;
    std::vector<const char*> refs;
    double bleu, rouge, cider;
  };
  // frozen from tests/oracles/metrics_oracle.py
  const std::vector<Row> rows = {
      {"v1", "the cat sat on mat", {"the cat sat on the mat"}, 0.57893006746740983, 0.89442815249266849,
       6.6824945694175852},
      {"v2", "a b c d", {"a c d e"}, 0, 0.75, 2.5270738774890726},
      {"v3",
       "a man is riding a bike",
       {"a man rides a bike", "a person is riding a bicycle on the street"},
       0,
       0.73939393939393938,
       2.5803384793828998},
      {"v4", "girl chase dog", {"girl chase dog on street", "a girl is chasing a dog"}, 0, 0.71764705882352942,
       3.3764700884524386},
      {"v5", "dog walk in park", {"dog walk in park"}, 1, 1, 10},
  };
  EvalSet all;
  for (const auto& r : rows) {
    EvalSet one;
    one.candidates[r.id] = tokenize_caption(r.cand);
    for (const char* ref : r.refs) one.references[r.id].push_back(tokenize_caption(ref));
    o.require(std::abs(bleu4(one) - r.bleu) < 1e-6, std::string(r.id) + " BLEU-4 " + fmt(bleu4(one), 12));
    o.require(std::abs(rouge_l(one) - r.rouge) < 1e-6, std::string(r.id) + " ROUGE-L " + fmt(rouge_l(one), 12));
    all.candidates.merge(one.candidates);
    all.references.merge(one.references);
  }
  const auto c = cider_detail(all);
  for (const auto& r : rows) {
    o.require(std::abs(c.per_video.at(r.id) - r.cider) < 1e-6, std::string(r.id) + " CIDEr " + fmt(c.per_video.at(r.id), 12));
  }
  o.require(std::abs(bleu4(all) - 0.51888000399164891) < 1e-6, "corpus BLEU-4");
  o.require(std::abs(rouge_l(all) - 0.8202938301420275) < 1e-6, "corpus ROUGE-L");
  o.require(std::abs(c.score - 5.0332754029483997) < 1e-6, "corpus CIDEr");

  EvalSet same, disjoint;
  same.candidates = {{"a", {"man", "ride", "a", "bike"}}, {"b", {"dog", "run", "in", "park", "now"}}};
  same.references = {{"a", {{"man", "ride", "a", "bike"}}}, {"b", {{"dog", "run", "in", "park", "now"}}}};
  disjoint.candidates = {{"a", {"cat", "sleep"}}, {"b", {"bird", "fly"}}};
  disjoint.references = same.references;
  o.require(bleu4(same) == 1.0 && rouge_l(same) == 1.0 && std::abs(cider(same) - 10.0) < 1e-12,
            "identical captions do not score the maximum");
  o.require(bleu4(disjoint) == 0.0 && rouge_l(disjoint) == 0.0 && cider(disjoint) == 0.0,
            "disjoint captions do not score zero");
  if (o.pass) o.detail << "5 fixtures and corpus scores within 1e-6, bounds hold";
  return o;
}

Outcome toy_refinement() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto dir = scratch_dir("acceptance_toy");
  if (run_cli("synth --out " + dir.string() + " --force") != 0) {
    o.require(false, "synth failed");
    return o;
  }
  const int rc = run_cli("train --config " + (dir / "toy.cfg").string());
  const double secs = seconds_since(t0);
  if (rc != 0) {
    o.require(false, "train exited with " + std::to_string(rc));
    return o;
  }
  const auto ingest = nlohmann::json::parse(text::read_file((dir / "run" / "ingest.json").string()));
  auto count_lines = [](const fs::path& p) {
    std::istringstream in(text::read_file(p.string()));
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) n += !text::trim(line).empty();
    return n;
  };
  const std::size_t train_videos = count_lines(dir / "annotations.tsv");
  const std::size_t val_videos = count_lines(dir / "val_videos.txt");
  o.require(train_videos + val_videos == 40, "toy has " + std::to_string(train_videos + val_videos) + " videos");
  o.require(ingest["objects"] == 12, "toy has " + ingest["objects"].dump() + " objects");
  o.require(ingest["actions"] == 8, "toy has " + ingest["actions"].dump() + " actions");
  o.require(ingest["sentences"] == 60, "toy has " + ingest["sentences"].dump() + " sentences");

  const auto history = read_jsonl(dir / "run" / "history.jsonl");
  o.require(history.size() >= 4, "only " + std::to_string(history.size()) + " iterations");
  if (history.size() >= 3) {
    const auto p = [&](int i) { return history[static_cast<std::size_t>(i)]["pseudo_total"].get<std::size_t>(); };
    o.require(p(0) <= p(1) && p(1) <= p(2), "unique pseudo-sentence counts decrease over the first 3 iterations");
  }
  double best = -1.0;
  for (const auto& h : history) best = std::max(best, h["cider"].get<double>());
  const double first = history.empty() ? 0.0 : history[0]["cider"].get<double>();
  o.require(best > first, "best CIDEr " + fmt(best) + " does not exceed iteration-1 CIDEr " + fmt(first));
  o.require(secs < 600.0, "took " + fmt(secs) + " s");
  if (o.pass) {
    o.detail << history.size() << " iterations, unique pseudo sentences";
    for (std::size_t i = 0; i < 3; ++i) o.detail << (i ? "/" : " ") << history[i]["pseudo_total"].get<std::size_t>();
    o.detail << ", CIDEr " << fmt(first) << " -> best " << fmt(best) << ", " << fmt(secs, 3) << " s";
  }
  return o;
}

Outcome formula_conformance() {
  Outcome o;
  std::size_t cases = 0;

  // gated head: single-part branches are the part itself, otherwise the gated mix
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    Rng rng(seed);
    const int dim = 1 + static_cast<int>(rng.below(5));
    auto cvec = [&] {
      ComplexVec v(dim);
      for (int k = 0; k < dim; ++k) v[k] = {rng.normal(), rng.normal()};
      return v;
    };
    const auto ho = cvec(), ha = cvec(), t = cvec();
    const GateParams gate{random_matrix(rng, dim, 6 * dim), random_vector(rng, dim)};
    o.require(compose_head(ho, std::nullopt, t, gate) == ho, "object-only head differs");
    o.require(compose_head(std::nullopt, ha, t, gate) == ha, "action-only head differs");
    const Eigen::VectorXd x = gate_input(ho, ha, t);
    const Eigen::VectorXd z = gate.weight * x + gate.bias;
    const auto mixed = compose_head(ho, ha, t, gate);
    for (int k = 0; k < dim; ++k) {
      const double kk = 1.0 / (1.0 + std::exp(-z[k]));
      o.require(std::abs(mixed[k] - (kk * ho[k] + (1.0 - kk) * ha[k])) < 1e-12, "gated head mix differs");
    }
    ++cases;
  }

  // concept threshold at 0.99 on every binary pattern up to length 6
  const double theta = 0.99;
  for (int n = 0; n <= 6; ++n) {
    for (int mask = 0; mask < (1 << n); ++mask) {
      for (int variant = 0; variant < 2; ++variant) {
        std::vector<double> probs(static_cast<std::size_t>(n));
        Indicator want(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
          const bool on = (mask >> i) & 1;
          want[static_cast<std::size_t>(i)] = on;
          probs[static_cast<std::size_t>(i)] =
              on ? (variant ? 1.0 : theta) : (variant ? 0.0 : std::nextafter(theta, 0.0));
        }
        o.require(threshold_concepts(probs, theta) == want, "threshold mismatch on pattern " + std::to_string(mask));
        ++cases;
      }
    }
  }

  // root pairs at delta 0.1: three objects and three actions, every activation pattern
  {
    const auto vocab = make_vocab({"o0", "o1", "o2"}, {"a0", "a1", "a2"}, {}, 2, 1);
    auto mix = [](double w) {
      Eigen::VectorXd v = Eigen::VectorXd::Zero(3);
      v[0] = 1.0 - w;
      v[1] = w;
      return v;
    };
    // distances from action alpha mix(0): 0, 0.05, 0.25 and from mix(0.09): 0.09, 0.04, 0.16
    const std::vector<Eigen::VectorXd> obj_alpha{mix(0.0), mix(0.05), mix(0.25)};
    const std::vector<Eigen::VectorXd> act_alpha{mix(0.0), mix(0.09), mix(0.75)};
    for (int mask = 0; mask < 64; ++mask) {
      VideoRecord v;
      v.object_indicator.resize(3);
      v.action_indicator.resize(3);
      for (std::size_t i = 0; i < 3; ++i) {
        v.object_indicator[i] = (mask >> i) & 1;
        v.action_indicator[i] = (mask >> (3 + i)) & 1;
        if (v.object_indicator[i]) v.object_alpha[i] = obj_alpha[i];
        if (v.action_indicator[i]) v.action_alpha[i] = act_alpha[i];
      }
      std::vector<Phrase> want;
      for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
          if (!v.object_indicator[i] || !v.action_indicator[j]) continue;
          const double d = 0.5 * (obj_alpha[i] - act_alpha[j]).cwiseAbs().sum();
          if (d <= 0.1) want.push_back(Phrase::make_noun_verb(vocab.objects[i], vocab.actions[j]));
        }
      }
      std::sort(want.begin(), want.end());
      auto got = generate_roots(v, vocab, 0.1, {}, std::nullopt);
      std::sort(got.begin(), got.end());
      o.require(got == want, "root pairs differ on pattern " + std::to_string(mask));
      ++cases;
    }
  }

  // indicator override: every g up to length 6 and every index set
  for (int n = 0; n <= 6; ++n) {
    for (int gm = 0; gm < (1 << n); ++gm) {
      Indicator g(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = (gm >> i) & 1;
      for (int im = 0; im < (1 << n); ++im) {
        std::set<std::size_t> idx;
        Indicator want = g;
        for (int i = 0; i < n; ++i) {
          if ((im >> i) & 1) {
            idx.insert(static_cast<std::size_t>(i));
            want[static_cast<std::size_t>(i)] = 1;
          }
        }
        o.require(update_indicators(g, idx) == want, "override mismatch");
        ++cases;
      }
    }
  }
  if (o.pass) o.detail << cases << " enumerated cases";
  return o;
}

Outcome decoding_properties() {
  Outcome o;
  int equal = 0, dominated = 0, stable = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto inst = random_decoder(seed);
    const auto greedy = greedy_decode(inst.dec, inst.x, inst.features, 8);
    const auto b1 = beam_decode(inst.dec, inst.x, inst.features, DecodeConfig{1, 8});
    const auto b5 = beam_decode(inst.dec, inst.x, inst.features, DecodeConfig{5, 8});
    const auto b5again = beam_decode(inst.dec, inst.x, inst.features, DecodeConfig{5, 8});
    equal += b1.tokens == greedy.tokens && b1.logprob == greedy.logprob;
    dominated += b5.logprob >= greedy.logprob - 1e-12;
    stable += b5.tokens == b5again.tokens && b5.logprob == b5again.logprob;
  }
  o.require(equal == 100, "beam 1 equals greedy on " + std::to_string(equal) + "/100");
  o.require(dominated == 100, "beam 5 at least greedy on " + std::to_string(dominated) + "/100");
  o.require(stable == 100, "repeated decoding agrees on " + std::to_string(stable) + "/100");
  if (o.pass) o.detail << "100/100 models for each property";
  return o;
}

Outcome determinism() {
  Outcome o;
  const auto dir = scratch_dir("acceptance_determinism");
  o.require(run_cli("synth --out " + dir.string() + " --force") == 0, "synth failed");
  const auto cfg = (dir / "toy.cfg").string();
  o.require(run_cli("train --config " + cfg + " --out " + (dir / "run_a").string()) == 0, "first run failed");
  o.require(run_cli("train --config " + cfg + " --out " + (dir / "run_b").string(), "WEAKCAP_THREADS=3") == 0,
            "second run failed");
  if (!o.pass) return o;
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "run_a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "run_a");
    const auto name = rel.filename().string();
    if (name == "config.cfg") continue;  // records the output path
    const auto other = dir / "run_b" / rel;
    o.require(fs::exists(other), rel.string() + " missing from second run");
    if (fs::exists(other)) {
      o.require(text::read_file(e.path().string()) == text::read_file(other.string()), rel.string() + " differs");
      ++compared;
    }
  }
  o.require(compared > 0, "no files compared");
  if (o.pass) o.detail << compared << " files byte-identical across runs (second run with 3 worker threads)";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient oracle", gradient_oracle},       {"planted KG recovery", planted_kg_recovery},
      {"metric oracles", metric_oracles},         {"toy refinement", toy_refinement},
      {"formula conformance", formula_conformance}, {"decoding properties", decoding_properties},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    failed += !o.pass;
    std::printf("%s criterion %zu (%s): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.str().c_str());
    std::fflush(stdout);
  }
  return failed;
}
