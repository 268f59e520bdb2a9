#pragma once

// Deterministic toy world: a template sentence corpus, word vectors, videos
// with spatially aligned object/action region signatures, weak annotations
// and lemma-level references. Also a toy-grammar parser for lemma sequences.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "weakcap/binary_io.hpp"
#include "weakcap/corpusio.hpp"
#include "weakcap/errors.hpp"
#include "weakcap/grounding.hpp"
#include "weakcap/rng.hpp"

namespace weakcap {

struct SynthSpec {
  std::uint64_t seed = 7;
  int videos = 40;
  int val_videos = 10;
  int sentences = 60;
  int regions = 6;
  int feature_dim = 16;
  int embed_dim = 16;
  double signal = 3.0;
  double noise = 0.1;
};

struct Scene {
  std::string subject;
  std::string verb;
  std::optional<std::string> object;
  std::optional<std::pair<std::string, std::string>> place;  // (preposition, noun)

  /// Lemma realisation: subject verb [object] [prep place].
  std::vector<std::string> lemmas() const {
    std::vector<std::string> out{subject, verb};
    if (object) out.push_back(*object);
    if (place) {
      out.push_back(place->first);
      out.push_back(place->second);
    }
    return out;
  }

  friend auto operator<=>(const Scene&, const Scene&) = default;
};

namespace synth {

struct VerbFrame {
  std::string verb;
  std::vector<std::string> subjects;
  std::vector<std::string> objects;
  std::vector<std::pair<std::string, std::string>> places;
};

inline const std::vector<VerbFrame>& frames() {
  static const std::vector<VerbFrame> f{
      {"ride", {"man", "woman", "boy", "girl"}, {"bike", "horse"}, {{"on", "street"}, {"in", "park"}}},
      {"chase", {"dog", "cat", "boy", "girl"}, {"ball", "cat", "dog"}, {{"in", "park"}, {"on", "street"}}},
      {"throw", {"man", "woman", "boy", "girl"}, {"ball"}, {{"in", "park"}}},
      {"drive", {"man", "woman"}, {"car"}, {{"on", "street"}}},
      {"play", {"boy", "girl", "dog"}, {}, {{"with", "ball"}, {"in", "park"}}},
      {"walk", {"man", "woman", "dog", "horse", "animal"}, {}, {{"on", "street"}, {"in", "park"}}},
      {"run", {"dog", "horse", "boy", "girl", "animal"}, {}, {{"in", "park"}, {"on", "street"}}},
      {"jump", {"cat", "dog", "horse", "boy", "animal"}, {}, {{"in", "park"}, {"over", "car"}}},
  };
  return f;
}

inline const std::vector<std::pair<std::string, std::string>>& hypernyms() {
  static const std::vector<std::pair<std::string, std::string>> h{
      {"animal", "dog"}, {"animal", "cat"}, {"animal", "horse"}};
  return h;
}

inline std::vector<Scene> all_scenes() {
  std::vector<Scene> out;
  for (const auto& f : frames()) {
    for (const auto& s : f.subjects) {
      std::vector<std::optional<std::string>> objs;
      if (f.objects.empty()) objs.push_back(std::nullopt);
      for (const auto& o : f.objects) {
        if (o != s) objs.emplace_back(o);
      }
      for (const auto& o : objs) {
        if (o) out.push_back(Scene{s, f.verb, o, std::nullopt});
        for (const auto& p : f.places) {
          if (p.second == s || (o && p.second == *o)) continue;
          out.push_back(Scene{s, f.verb, o, p});
        }
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline ParsedSentence scene_sentence(const Scene& sc, const std::string& id) {
  ParsedSentence s;
  s.source_id = id;
  auto add = [&](const std::string& surface, const std::string& lemma, const std::string& upos, int head,
                 const std::string& rel) {
    s.tokens.push_back(TokenRow{static_cast<int>(s.tokens.size()) + 1, surface, lemma, upos, head, rel});
    return static_cast<int>(s.tokens.size());
  };
  // the SUBJ VERBs [a OBJ] [PREP the PLACE]
  const int verb_index = 3;
  add("the", "the", "DET", 2, "det");
  add(sc.subject, sc.subject, "NOUN", verb_index, "nsubj");
  add(sc.verb + "s", sc.verb, "VERB", 0, "root");
  if (sc.object) {
    const int det = static_cast<int>(s.tokens.size()) + 1;
    add("a", "a", "DET", det + 1, "det");
    add(*sc.object, *sc.object, "NOUN", verb_index, "obj");
  }
  if (sc.place) {
    const int prep = static_cast<int>(s.tokens.size()) + 1;
    add(sc.place->first, sc.place->first, "ADP", prep + 2, "case");
    add("the", "the", "DET", prep + 2, "det");
    add(sc.place->second, sc.place->second, "NOUN", verb_index, "obl");
  }
  return s;
}

inline Eigen::VectorXd unit_gaussian(Rng& rng, int dim) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal();
  return v / v.norm();
}

inline std::string format_float(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace synth

/// Parse a lemma sequence with the toy grammar: the first action lemma is the
/// root, nouns before it are its subject, a bare noun after it is an object
/// and a noun preceded by a function word is an oblique with that case marker.
inline ParsedSentence toy_parse(const std::vector<std::string>& lemmas, const ConceptVocabulary& vocab,
                                const std::string& id = "toy") {
  ParsedSentence s;
  s.source_id = id;
  const int n = static_cast<int>(lemmas.size());
  int root = -1;
  for (int i = 0; i < n && root < 0; ++i) {
    if (vocab.action_index(lemmas[static_cast<std::size_t>(i)])) root = i;
  }
  if (root < 0) {
    for (int i = 0; i < n && root < 0; ++i) {
      if (vocab.object_index(lemmas[static_cast<std::size_t>(i)])) root = i;
    }
  }
  if (root < 0) root = 0;
  bool subject_taken = false;
  for (int i = 0; i < n; ++i) {
    const auto& l = lemmas[static_cast<std::size_t>(i)];
    TokenRow t{i + 1, l, l, "X", root + 1, "dep"};
    const bool noun = vocab.object_index(l).has_value();
    const bool verb = vocab.action_index(l).has_value();
    if (i == root) {
      t.head = 0;
      t.deprel = "root";
      t.upos = verb ? "VERB" : (noun ? "NOUN" : "X");
    } else if (noun) {
      t.upos = "NOUN";
      const bool after_marker = i > 0 && !vocab.object_index(lemmas[static_cast<std::size_t>(i - 1)]) &&
                                !vocab.action_index(lemmas[static_cast<std::size_t>(i - 1)]);
      if (i < root && !subject_taken) {
        t.deprel = "nsubj";
        subject_taken = true;
      } else if (after_marker && i > root) {
        t.deprel = "obl";
      } else if (i > root) {
        t.deprel = "obj";
      }
    } else if (verb) {
      t.upos = "VERB";
      t.deprel = "conj";
    } else {
      // function word: case marker of the next noun
      t.upos = "ADP";
      if (i + 1 < n && vocab.object_index(lemmas[static_cast<std::size_t>(i + 1)])) {
        t.head = i + 2;
        t.deprel = "case";
      }
    }
    s.tokens.push_back(std::move(t));
  }
  return s;
}

struct SynthVideo {
  std::string id;
  Scene scene;
  FeatureMap object_map;
  FeatureMap action_map;
  Eigen::VectorXd global;
  std::optional<Phrase> annotation;  // training videos only
};

struct SynthDataset {
  std::vector<ParsedSentence> corpus;
  std::map<std::string, Eigen::VectorXd> embeddings;
  std::vector<std::pair<std::string, std::string>> hypernyms;
  std::vector<SynthVideo> train;
  std::vector<SynthVideo> val;
};

inline SynthDataset make_synth(const SynthSpec& spec) {
  if (spec.videos <= spec.val_videos || spec.val_videos < 1) throw ArgumentError("synth: need training and validation videos");
  if (spec.regions < 3) throw ArgumentError("synth: need at least three regions");
  Rng rng(derive_seed(spec.seed, 0x53594E5448ULL));
  SynthDataset ds;
  ds.hypernyms = synth::hypernyms();

  auto scenes = synth::all_scenes();
  std::vector<Scene> generic, specific;
  for (const auto& s : scenes) (s.subject == "animal" ? generic : specific).push_back(s);
  rng.shuffle(generic);
  rng.shuffle(specific);
  const std::size_t n_generic = std::min<std::size_t>(3, generic.size());
  if (static_cast<std::size_t>(spec.sentences) < n_generic + static_cast<std::size_t>(spec.videos) ||
      specific.size() < static_cast<std::size_t>(spec.sentences) - n_generic) {
    throw ArgumentError("synth: sentence count incompatible with video count");
  }
  std::vector<Scene> corpus_scenes(generic.begin(), generic.begin() + static_cast<std::ptrdiff_t>(n_generic));
  corpus_scenes.insert(corpus_scenes.end(), specific.begin(),
                       specific.begin() + static_cast<std::ptrdiff_t>(spec.sentences - static_cast<int>(n_generic)));
  for (std::size_t i = 0; i < corpus_scenes.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "s%03zu", i);
    ds.corpus.push_back(synth::scene_sentence(corpus_scenes[i], id));
  }

  std::set<std::string> lemmas;
  for (const auto& s : ds.corpus) {
    for (const auto& t : s.tokens) {
      if (t.upos != "DET") lemmas.insert(t.lemma);
    }
  }
  for (const auto& l : lemmas) ds.embeddings[l] = 0.5 * synth::unit_gaussian(rng, spec.embed_dim) * std::sqrt(spec.embed_dim);

  std::map<std::string, Eigen::VectorXd> object_sig, action_sig;
  for (const auto& l : lemmas) {
    object_sig[l] = synth::unit_gaussian(rng, spec.feature_dim);
    action_sig[l] = synth::unit_gaussian(rng, spec.feature_dim);
  }

  // videos re-use the specific corpus scenes
  std::vector<Scene> video_scenes(corpus_scenes.begin() + static_cast<std::ptrdiff_t>(n_generic), corpus_scenes.end());
  rng.shuffle(video_scenes);
  video_scenes.resize(static_cast<std::size_t>(spec.videos));
  for (int v = 0; v < spec.videos; ++v) {
    const Scene& sc = video_scenes[static_cast<std::size_t>(v)];
    SynthVideo vid;
    char id[16];
    std::snprintf(id, sizeof id, "vid%02d", v);
    vid.id = id;
    vid.scene = sc;
    std::vector<int> slots(static_cast<std::size_t>(spec.regions));
    for (int r = 0; r < spec.regions; ++r) slots[static_cast<std::size_t>(r)] = r;
    rng.shuffle(slots);
    auto noise = [&](int q) {
      Eigen::MatrixXd m(q, spec.feature_dim);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = spec.noise * rng.normal();
      return m;
    };
    Eigen::MatrixXd om = noise(spec.regions), am = noise(spec.regions);
    om.row(slots[0]) += spec.signal * object_sig.at(sc.subject).transpose();
    am.row(slots[0]) += spec.signal * action_sig.at(sc.verb).transpose();
    if (sc.object) om.row(slots[1]) += spec.signal * object_sig.at(*sc.object).transpose();
    if (sc.place) om.row(slots[2]) += spec.signal * object_sig.at(sc.place->second).transpose();
    vid.object_map = FeatureMap{Stream::Object, om};
    vid.action_map = FeatureMap{Stream::Action, am};
    vid.global = (om.colwise().mean() + am.colwise().mean()).transpose();
    const bool train = v < spec.videos - spec.val_videos;
    if (train) {
      vid.annotation = rng.bernoulli(0.5) ? Phrase::make_noun(sc.subject) : Phrase::make_verb(sc.verb);
      ds.train.push_back(std::move(vid));
    } else {
      ds.val.push_back(std::move(vid));
    }
  }
  return ds;
}

/// Hyperparameters that suit the toy world.
inline std::string synth_config_text(const SynthSpec& spec) {
  std::string s;
  s += "# toy dataset written by `weakcap synth`\n";
  s += "corpus = corpus.conllu\n";
  s += "embeddings = embeddings.txt\n";
  s += "hypernyms = hypernyms.tsv\n";
  s += "annotations = annotations.tsv\n";
  s += "features_dir = features\n";
  s += "val_videos = val_videos.txt\n";
  s += "val_references = val_refs.jsonl\n";
  s += "output_dir = run\n";
  s += "seed = " + std::to_string(spec.seed) + "\n";
  s += "theta_c = 0.99\n";
  s += "delta = 0.1\n";
  s += "lambda = 1.0\n";
  s += "reg_weight = 0.0001\n";
  s += "kg_dim = 16\n";
  s += "kg_gamma = 3.0\n";
  s += "kg_steps = 1500\n";
  s += "s_max = auto\n";
  s += "s_max_percentile = 90\n";
  s += "max_nodes = 4\n";
  s += "hidden = 32\n";
  s += "attention_size = 16\n";
  s += "word_dim = 16\n";
  s += "learning_rate = 0.01\n";
  s += "epochs = 40\n";
  s += "batch_size = 8\n";
  s += "max_iterations = 6\n";
  s += "min_iterations = 4\n";
  s += "patience = 1\n";
  s += "beam = 3\n";
  s += "max_length = 8\n";
  return s;
}

inline void write_text_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IngestError("cannot write " + p.string());
  out << content;
  if (!out) throw IngestError("failed writing " + p.string());
}

inline std::filesystem::path feature_path(const std::filesystem::path& dir, const std::string& id, char tag) {
  const char* ext = tag == 'x' ? ".wcgf" : ".wcfm";
  return dir / (id + "." + std::string(1, tag) + ext);
}

inline void write_synth(const SynthDataset& ds, const SynthSpec& spec, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "features");
  write_text_file(dir / "corpus.conllu", serialize_conllu(ds.corpus));
  std::string emb;
  for (const auto& [w, v] : ds.embeddings) {
    emb += w;
    for (Eigen::Index i = 0; i < v.size(); ++i) emb += " " + synth::format_float(v[i]);
    emb += "\n";
  }
  write_text_file(dir / "embeddings.txt", emb);
  std::string hyp = "# hypernym\thyponym\n";
  for (const auto& [a, b] : ds.hypernyms) hyp += a + "\t" + b + "\n";
  write_text_file(dir / "hypernyms.tsv", hyp);
  std::string ann, val_ids, refs;
  for (const auto& v : ds.train) {
    ann += v.id + "\t" + v.annotation->text() + "\t" + (v.annotation->has_noun() ? "o" : "a") + "\n";
  }
  for (const auto& v : ds.val) {
    val_ids += v.id + "\n";
    nlohmann::json j;
    j["video_id"] = v.id;
    j["refs"] = {text::join(v.scene.lemmas())};
    refs += j.dump() + "\n";
  }
  write_text_file(dir / "annotations.tsv", ann);
  write_text_file(dir / "val_videos.txt", val_ids);
  write_text_file(dir / "val_refs.jsonl", refs);
  for (const auto* list : {&ds.train, &ds.val}) {
    for (const auto& v : *list) {
      {
        auto out = binio::open_out(feature_path(dir / "features", v.id, 'o').string());
        write_feature_map(out, v.object_map);
      }
      {
        auto out = binio::open_out(feature_path(dir / "features", v.id, 'a').string());
        write_feature_map(out, v.action_map);
      }
      {
        auto out = binio::open_out(feature_path(dir / "features", v.id, 'x').string());
        write_global_feature(out, v.global);
      }
    }
  }
  write_text_file(dir / "toy.cfg", synth_config_text(spec));
}

}  // namespace weakcap
