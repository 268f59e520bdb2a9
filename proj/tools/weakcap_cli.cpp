// weakcap command-line tool.
//
// Exit status: 0 success, 1 usage error, 2 data or configuration error,
// 3 numerical divergence.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "weakcap/config.hpp"
#include "weakcap/metrics.hpp"
#include "weakcap/pipeline.hpp"
#include "weakcap/synth.hpp"

namespace fs = std::filesystem;
using namespace weakcap;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kDivergence = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool force = false;
  std::string out;
};

RunConfig load(const Common& c) {
  RunConfig cfg = load_config(c.config);
  if (c.seed) override_seed(cfg, *c.seed);
  if (!c.out.empty()) cfg.output_dir = fs::absolute(c.out).lexically_normal().string();
  if (cfg.output_dir.empty()) throw ConfigError("output_dir", "no output directory configured (set output_dir or --out)");
  return cfg;
}

void log(const std::string& msg) { std::cerr << "weakcap: " << msg << "\n"; }

int cmd_ingest(const Common& c) {
  const RunConfig cfg = load(c);
  const fs::path dir(cfg.output_dir);
  prepare_output_dir(dir, c.force);
  RunLock lock(dir);
  const auto r = ingest(cfg);
  write_text_file(dir / "vocab.json", vocabulary_to_json(r.vocab).dump(1) + "\n");
  write_text_file(dir / "triplets.tsv", triplets_to_tsv(r.triplets));
  write_text_file(dir / "ingest.json", ingest_report(r).dump(1) + "\n");
  log(std::to_string(r.vocab.num_objects()) + " objects, " + std::to_string(r.vocab.num_actions()) + " actions, " +
      std::to_string(r.triplets.size()) + " triplets");
  if (r.missing_embeddings) log(std::to_string(r.missing_embeddings) + " lemmas lack word vectors (zero used)");
  return 0;
}

int cmd_kg(const Common& c, bool train) {
  RunConfig cfg = load(c);
  if (!train) cfg.kg.steps = 0;
  const fs::path dir(cfg.output_dir);
  prepare_output_dir(dir, c.force);
  RunLock lock(dir);
  const auto r = ingest(cfg);
  KgTrainReport report;
  const KgModel kg = train_kg(r.triplets, r.vocab, cfg.kg, &report);
  save_kg(kg, (dir / "kg.wckg").string());
  nlohmann::json j{{"entities", kg.entity_names.size()},
                   {"relations", kg.relation_names.size()},
                   {"triplets", kg.triplets.size()},
                   {"steps", cfg.kg.steps}};
  if (!report.losses.empty()) j["final_loss"] = report.losses.back();
  j["s_max"] = resolve_s_max(cfg, kg);
  write_text_file(dir / "kg.json", j.dump(1) + "\n");
  log("wrote " + (dir / "kg.wckg").string());
  return 0;
}

int cmd_train(const Common& c) {
  const RunConfig cfg = load(c);
  const fs::path dir(cfg.output_dir);
  prepare_output_dir(dir, c.force);
  const auto out = run_training(cfg, dir);
  for (const auto& rec : out.result.history) {
    log("iteration " + std::to_string(rec.iteration) + ": cider " + detail::format_number(rec.cider) + ", pseudo " +
        std::to_string(rec.pseudo_generated) + " (" + std::to_string(rec.new_pseudo) + " new), pool " +
        std::to_string(rec.pool_size));
  }
  log("best iteration " + std::to_string(out.result.best_iteration) + " (" + out.result.stop_reason + ")");
  return 0;
}

int cmd_caption(const Common& c, const std::string& run_dir, const std::string& videos, const std::string& out_path) {
  RunConfig cfg = load_config(c.config);
  if (c.seed) override_seed(cfg, *c.seed);
  const fs::path rd(run_dir);
  const auto vocab = vocabulary_from_json(nlohmann::json::parse(text::read_file((rd / "vocab.json").string())));
  const KgModel kg = load_kg((rd / "kg.wckg").string());
  const SavedModel model = load_model((rd / "model.wclm").string());
  const auto caps = caption_videos(cfg, vocab, kg, model, read_id_list(videos));
  write_jsonl(out_path, caption_rows(caps, model.iteration));
  return 0;
}

int cmd_evaluate(const std::string& cand, const std::string& refs, const std::string& out_path) {
  const auto report = evaluate_files(cand, refs);
  if (out_path.empty()) {
    std::cout << report.dump(1) << "\n";
  } else {
    write_text_file(out_path, report.dump(1) + "\n");
  }
  return 0;
}

int cmd_synth(std::uint64_t seed, const std::string& out, bool force) {
  SynthSpec spec;
  spec.seed = seed;
  const fs::path dir(out);
  prepare_output_dir(dir, force);
  write_synth(make_synth(spec), spec, dir);
  log("toy dataset written to " + dir.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised video captioning by iterative pseudo-sentence refinement"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", common.config, "run configuration file");
    if (config_required) opt->required();
    sub->add_option("--seed", common.seed, "override the configured seed");
    sub->add_flag("--force", common.force, "overwrite an existing output directory");
    sub->add_option("--out", common.out, "output directory (overrides output_dir)");
  };

  auto* ingest_cmd = app.add_subcommand("ingest", "build the concept vocabulary and triplet store");
  add_common(ingest_cmd, true);
  auto* build_cmd = app.add_subcommand("build-kg", "write an initialised (untrained) KG checkpoint");
  add_common(build_cmd, true);
  auto* train_kg_cmd = app.add_subcommand("train-kg", "train the KG embeddings");
  add_common(train_kg_cmd, true);
  auto* train_cmd = app.add_subcommand("train", "run the full iterative refinement");
  add_common(train_cmd, true);

  auto* caption_cmd = app.add_subcommand("caption", "caption videos with a trained run");
  std::string run_dir, videos, caption_out;
  caption_cmd->add_option("--config", common.config, "run configuration file")->required();
  caption_cmd->add_option("--seed", common.seed, "override the configured seed");
  caption_cmd->add_option("--run", run_dir, "run directory written by train")->required();
  caption_cmd->add_option("--videos", videos, "file with one video id per line")->required();
  caption_cmd->add_option("--out", caption_out, "captions JSON-lines output")->required();

  auto* eval_cmd = app.add_subcommand("evaluate", "score candidate captions");
  std::string cand, refs, report_out;
  eval_cmd->add_option("--cand", cand, "candidates JSON-lines")->required();
  eval_cmd->add_option("--refs", refs, "references JSON-lines")->required();
  eval_cmd->add_option("--out", report_out, "report path (default: stdout)");

  auto* synth_cmd = app.add_subcommand("synth", "write the deterministic toy dataset");
  std::uint64_t synth_seed = 7;
  std::string synth_out;
  bool synth_force = false;
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_flag("--force", synth_force, "overwrite an existing directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*ingest_cmd) return cmd_ingest(common);
    if (*build_cmd) return cmd_kg(common, false);
    if (*train_kg_cmd) return cmd_kg(common, true);
    if (*train_cmd) return cmd_train(common);
    if (*caption_cmd) return cmd_caption(common, run_dir, videos, caption_out);
    if (*eval_cmd) return cmd_evaluate(cand, refs, report_out);
    if (*synth_cmd) return cmd_synth(synth_seed, synth_out, synth_force);
  } catch (const DivergenceError& e) {
    log(std::string("diverged: ") + e.what());
    return kDivergence;
  } catch (const ConfigError& e) {
    log(std::string("config error: ") + e.what());
    return kData;
  } catch (const Error& e) {
    log(std::string("error: ") + e.what());
    return kData;
  } catch (const nlohmann::json::exception& e) {
    log(std::string("malformed JSON: ") + e.what());
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    log(std::string("filesystem error: ") + e.what());
    return kData;
  }
  std::cerr << app.help();
  return kUsage;
}
