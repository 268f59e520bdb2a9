#pragma once

// File-level pipeline stages shared by the command-line tool and the
// acceptance harness: ingest, KG training, video loading and full training
// runs written to a run directory.

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "weakcap/config.hpp"
#include "weakcap/corpusio.hpp"
#include "weakcap/errors.hpp"
#include "weakcap/grounding.hpp"
#include "weakcap/kglink.hpp"
#include "weakcap/metrics.hpp"
#include "weakcap/refine.hpp"
#include "weakcap/synth.hpp"

namespace weakcap {

namespace fs = std::filesystem;

struct IngestResult {
  ConceptVocabulary vocab;
  std::vector<Triplet> triplets;
  std::size_t sentences = 0;
  std::size_t skipped = 0;
  std::size_t missing_embeddings = 0;
};

inline void require_path(const std::string& value, const char* key) {
  if (value.empty()) throw ConfigError(key, "path not configured");
  if (!fs::exists(value)) throw ConfigError(key, "path does not exist: " + value);
}

inline IngestResult ingest(const RunConfig& cfg) {
  require_path(cfg.corpus, "corpus");
  require_path(cfg.embeddings, "embeddings");
  IngestResult r;
  const auto doc = read_conllu_file(cfg.corpus);
  r.sentences = doc.sentences.size();
  r.skipped = doc.skipped;
  std::vector<HypernymPair> hyp;
  if (!cfg.hypernyms.empty()) {
    require_path(cfg.hypernyms, "hypernyms");
    hyp = read_hypernyms_file(cfg.hypernyms);
  }
  r.vocab = build_vocabulary(doc.sentences, hyp);
  r.triplets = extract_all_triplets(doc.sentences);
  r.missing_embeddings = load_embeddings(cfg.embeddings, r.vocab).warning_count();
  return r;
}

inline nlohmann::json ingest_report(const IngestResult& r) {
  return {{"sentences", r.sentences},
          {"skipped", r.skipped},
          {"objects", r.vocab.num_objects()},
          {"actions", r.vocab.num_actions()},
          {"relations", r.vocab.relations.size()},
          {"pruned_objects", r.vocab.pruned_objects},
          {"pruned_actions", r.vocab.pruned_actions},
          {"triplets", r.triplets.size()},
          {"missing_embeddings", r.missing_embeddings}};
}

inline double resolve_s_max(const RunConfig& cfg, const KgModel& kg) {
  return cfg.s_max ? *cfg.s_max : score_percentile(kg, cfg.s_max_percentile);
}

inline std::vector<std::string> read_id_list(const std::string& path) {
  std::vector<std::string> ids;
  for (const auto& line : text::split(text::read_file(path), '\n')) {
    const auto t = text::trim(line);
    if (!t.empty() && t.front() != '#') ids.emplace_back(t);
  }
  return ids;
}

/// Feature files for one video: <id>.o.wcfm, <id>.a.wcfm, <id>.x.wcgf.
inline VideoRecord load_video(const RunConfig& cfg, const std::string& id) {
  require_path(cfg.features_dir, "features_dir");
  const fs::path dir(cfg.features_dir);
  VideoRecord v;
  v.video_id = id;
  v.object_map = read_feature_map_file(feature_path(dir, id, 'o').string()).regions;
  if (cfg.share_features) {
    v.action_map = v.object_map;
  } else {
    v.action_map = read_feature_map_file(feature_path(dir, id, 'a').string()).regions;
  }
  v.global = read_global_feature_file(feature_path(dir, id, 'x').string());
  return v;
}

inline RefineData load_refine_data(const RunConfig& cfg, const ConceptVocabulary& vocab) {
  require_path(cfg.annotations, "annotations");
  RefineData data;
  data.vocab = &vocab;
  std::set<std::string> seen;
  for (const auto& [id, phrase] : parse_annotations(text::read_file(cfg.annotations))) {
    if (!seen.insert(id).second) throw IngestError("video " + id + " is annotated more than once");
    auto v = load_video(cfg, id);
    v.annotation = phrase;
    data.train.push_back(std::move(v));
  }
  if (!cfg.val_videos.empty()) {
    require_path(cfg.val_videos, "val_videos");
    for (const auto& id : read_id_list(cfg.val_videos)) data.val.push_back(load_video(cfg, id));
  }
  if (!cfg.val_references.empty()) {
    require_path(cfg.val_references, "val_references");
    data.val_references = read_references_jsonl(cfg.val_references);
  }
  return data;
}

// ---------------------------------------------------------------------------
// Run directory
// ---------------------------------------------------------------------------

/// Exclusive lock file; removed on destruction.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / "run.lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw IngestError("run directory is locked by another writer: " + path_.string());
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

/// Refuse to overwrite earlier outputs unless forced; forcing clears them.
inline void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw IngestError(dir.string() + " exists and is not a directory");
  if (fs::exists(dir / "run.lock")) throw IngestError("run directory is locked by another writer: " + dir.string());
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw IngestError("output directory " + dir.string() + " is not empty (use --force)");
    for (const auto& e : fs::directory_iterator(dir)) fs::remove_all(e.path());
  }
  fs::create_directories(dir);
}

inline void write_jsonl(const fs::path& p, const std::vector<nlohmann::json>& rows) {
  std::string s;
  for (const auto& r : rows) s += r.dump() + "\n";
  write_text_file(p, s);
}

inline std::vector<nlohmann::json> caption_rows(const std::vector<CaptionRecord>& caps, int iteration) {
  std::vector<nlohmann::json> rows;
  for (const auto& c : caps) {
    rows.push_back({{"video_id", c.video_id}, {"iteration", iteration}, {"caption", text::join(c.tokens)},
                    {"logprob", c.logprob}});
  }
  return rows;
}

inline std::string iteration_dir_name(int it) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "iter_%02d", it);
  return buf;
}

struct TrainOutcome {
  RefineResult result;
  double s_max = 0.0;
  IngestResult ingest;
};

/// Ingest, train the KG, run refinement and write every artifact under dir.
inline TrainOutcome run_training(const RunConfig& cfg, const fs::path& dir) {
  RunLock lock(dir);
  TrainOutcome out;
  write_text_file(dir / "config.cfg", config_to_text(cfg));
  out.ingest = ingest(cfg);
  const auto& vocab = out.ingest.vocab;
  write_text_file(dir / "vocab.json", vocabulary_to_json(vocab).dump(1) + "\n");
  write_text_file(dir / "triplets.tsv", triplets_to_tsv(out.ingest.triplets));
  write_text_file(dir / "ingest.json", ingest_report(out.ingest).dump(1) + "\n");

  const KgModel kg = train_kg(out.ingest.triplets, vocab, cfg.kg);
  save_kg(kg, (dir / "kg.wckg").string());
  out.s_max = resolve_s_max(cfg, kg);

  RefineConfig rc = cfg.refine;
  rc.span.s_max = out.s_max;
  rc.span.delta = rc.thresholds.spatial;
  RefineData data = load_refine_data(cfg, vocab);
  RefineState st = init_refine(data, kg, rc);

  std::string history;
  std::vector<nlohmann::json> checkpoints;
  out.result = run(st, data, kg, rc, [&](const IterationRecord& rec, const RefineState& s) {
    const fs::path idir = dir / iteration_dir_name(rec.iteration);
    fs::create_directories(idir);
    save_model((idir / "model.wclm").string(), s.params, s.dict, s.relations, rec.iteration);
    write_jsonl(idir / "captions.jsonl", caption_rows(rec.val_captions, rec.iteration));
    std::vector<nlohmann::json> pseudo;
    for (const auto& p : rec.pseudo) pseudo.push_back(pseudo_sentence_json(p.tree, p.tokens));
    write_jsonl(idir / "pseudo.jsonl", pseudo);
    history += rec.history_json().dump() + "\n";
    write_text_file(dir / "history.jsonl", history);
    checkpoints.push_back((fs::path(iteration_dir_name(rec.iteration)) / "model.wclm").generic_string());
  });

  const auto& best = out.result;
  std::vector<CaptionRecord> best_caps;
  for (const auto& rec : best.history) {
    if (rec.iteration == best.best_iteration) best_caps = rec.val_captions;
  }
  save_model((dir / "model.wclm").string(), best.best, st.dict, st.relations, best.best_iteration);
  write_jsonl(dir / "captions.jsonl", caption_rows(best_caps, best.best_iteration));
  nlohmann::json manifest;
  manifest["best_iteration"] = best.best_iteration;
  manifest["best_cider"] = best.best_cider;
  manifest["iterations"] = best.history.size();
  manifest["stop_reason"] = best.stop_reason;
  manifest["s_max"] = out.s_max;
  manifest["checkpoints"] = checkpoints;
  manifest["best_checkpoint"] = (fs::path(iteration_dir_name(best.best_iteration)) / "model.wclm").generic_string();
  write_text_file(dir / "manifest.json", manifest.dump(1) + "\n");
  return out;
}

/// Caption a list of videos with a trained model.
inline std::vector<CaptionRecord> caption_videos(const RunConfig& cfg, const ConceptVocabulary& vocab,
                                                 const KgModel& kg, const SavedModel& model,
                                                 const std::vector<std::string>& ids) {
  RefineState st;
  st.params = model.params;
  st.dict = model.dict;
  st.relations = model.relations;
  RefineConfig rc = cfg.refine;
  rc.span.s_max = resolve_s_max(cfg, kg);
  rc.span.delta = rc.thresholds.spatial;
  std::vector<CaptionRecord> out(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    VideoRecord v = load_video(cfg, ids[i]);
    const auto trees = inference_trees(v, vocab, kg, st, rc, model.iteration);
    const auto c = caption_tree(v, trees.front(), vocab, st, rc.decode);
    out[i] = CaptionRecord{ids[i], c.tokens, c.logprob};
  });
  return out;
}

}  // namespace weakcap
