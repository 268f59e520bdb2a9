#pragma once

// "key = value" run configuration. Unknown keys are errors; relative paths
// resolve against the directory holding the config file.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "weakcap/corpusio.hpp"
#include "weakcap/errors.hpp"
#include "weakcap/kglink.hpp"
#include "weakcap/refine.hpp"

namespace weakcap {

struct RunConfig {
  // paths
  std::string corpus;
  std::string embeddings;
  std::string hypernyms;
  std::string annotations;
  std::string features_dir;
  std::string val_videos;
  std::string val_references;
  std::string output_dir;
  bool share_features = false;  // one feature file serves both streams

  KgTrainConfig kg;
  RefineConfig refine;
  std::optional<double> s_max;  // unset: percentile of training-triplet scores
  double s_max_percentile = 25.0;
  std::uint64_t seed = 1;
};

namespace detail {

inline std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct ConfigKey {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline double to_double(const std::string& key, const std::string& v) {
  if (v == "inf" || v == "+inf") return std::numeric_limits<double>::infinity();
  if (v == "-inf") return -std::numeric_limits<double>::infinity();
  auto d = text::parse_double(v);
  if (!d || std::isnan(*d)) throw ConfigError(key, "expected a number, got '" + v + "'");
  return *d;
}

inline long long to_int(const std::string& key, const std::string& v) {
  auto i = text::parse_int(v);
  if (!i) throw ConfigError(key, "expected an integer, got '" + v + "'");
  return *i;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  const auto l = text::lower(v);
  if (l == "true" || l == "1" || l == "yes") return true;
  if (l == "false" || l == "0" || l == "no") return false;
  throw ConfigError(key, "expected a boolean, got '" + v + "'");
}

inline const std::map<std::string, ConfigKey>& config_keys() {
  using R = RunConfig;
  auto path = [](std::string R::*m) {
    return ConfigKey{[m](R& c, const std::string& v) { c.*m = v; }, [m](const R& c) { return c.*m; }};
  };
  auto real = [](auto getter) {
    return ConfigKey{[getter](R& c, const std::string& v) { getter(c) = to_double("", v); },
                     [getter](const R& c) { return format_number(getter(const_cast<R&>(c))); }};
  };
  auto integer = [](auto getter) {
    return ConfigKey{[getter](R& c, const std::string& v) { getter(c) = static_cast<int>(to_int("", v)); },
                     [getter](const R& c) { return std::to_string(getter(const_cast<R&>(c))); }};
  };
  static const std::map<std::string, ConfigKey> keys{
      {"corpus", path(&R::corpus)},
      {"embeddings", path(&R::embeddings)},
      {"hypernyms", path(&R::hypernyms)},
      {"annotations", path(&R::annotations)},
      {"features_dir", path(&R::features_dir)},
      {"val_videos", path(&R::val_videos)},
      {"val_references", path(&R::val_references)},
      {"output_dir", path(&R::output_dir)},
      {"share_features",
       {[](R& c, const std::string& v) { c.share_features = to_bool("share_features", v); },
        [](const R& c) { return std::string(c.share_features ? "true" : "false"); }}},
      {"seed",
       {[](R& c, const std::string& v) {
          const auto s = to_int("seed", v);
          if (s < 0) throw ConfigError("seed", "must be non-negative");
          c.seed = static_cast<std::uint64_t>(s);
        },
        [](const R& c) { return std::to_string(c.seed); }}},
      {"theta_c", real([](R& c) -> double& { return c.refine.thresholds.probability; })},
      {"delta", real([](R& c) -> double& { return c.refine.thresholds.spatial; })},
      {"lambda", real([](R& c) -> double& { return c.refine.lambda; })},
      {"reg_weight", real([](R& c) -> double& { return c.refine.reg_weight; })},
      {"grounding_init_scale", real([](R& c) -> double& { return c.refine.grounding_init_scale; })},
      {"learning_rate", real([](R& c) -> double& { return c.refine.learning_rate; })},
      {"rmsprop_rho", real([](R& c) -> double& { return c.refine.rmsprop_rho; })},
      {"epochs", integer([](R& c) -> int& { return c.refine.epochs; })},
      {"batch_size", integer([](R& c) -> int& { return c.refine.batch_size; })},
      {"max_iterations", integer([](R& c) -> int& { return c.refine.max_iterations; })},
      {"min_iterations", integer([](R& c) -> int& { return c.refine.min_iterations; })},
      {"patience", integer([](R& c) -> int& { return c.refine.patience; })},
      {"hidden", integer([](R& c) -> int& { return c.refine.hidden; })},
      {"attention_size", integer([](R& c) -> int& { return c.refine.attention; })},
      {"word_dim", integer([](R& c) -> int& { return c.refine.word_dim; })},
      {"beam", integer([](R& c) -> int& { return c.refine.decode.beam; })},
      {"max_length", integer([](R& c) -> int& { return c.refine.decode.max_length; })},
      {"max_nodes",
       {[](R& c, const std::string& v) {
          const auto n = to_int("max_nodes", v);
          if (n < 1) throw ConfigError("max_nodes", "must be at least 1");
          c.refine.span.max_nodes = static_cast<std::size_t>(n);
        },
        [](const R& c) { return std::to_string(c.refine.span.max_nodes); }}},
      {"s_max",
       {[](R& c, const std::string& v) {
          if (text::lower(v) == "auto") c.s_max.reset();
          else c.s_max = to_double("s_max", v);
        },
        [](const R& c) { return c.s_max ? format_number(*c.s_max) : std::string("auto"); }}},
      {"s_max_percentile", real([](R& c) -> double& { return c.s_max_percentile; })},
      {"kg_dim", integer([](R& c) -> int& { return c.kg.dim; })},
      {"kg_gamma", real([](R& c) -> double& { return c.kg.gamma; })},
      {"kg_negatives", integer([](R& c) -> int& { return c.kg.negatives; })},
      {"kg_steps", integer([](R& c) -> int& { return c.kg.steps; })},
      {"kg_batch_size", integer([](R& c) -> int& { return c.kg.batch_size; })},
      {"kg_learning_rate", real([](R& c) -> double& { return c.kg.learning_rate; })},
      {"kg_init_range", real([](R& c) -> double& { return c.kg.init_range; })},
  };
  return keys;
}

}  // namespace detail

/// Documented ranges; throws ConfigError naming the key.
inline void validate_config(const RunConfig& c) {
  const auto& r = c.refine;
  if (!(r.thresholds.probability > 0.0 && r.thresholds.probability <= 1.0)) throw ConfigError("theta_c", "must lie in (0, 1]");
  if (!(r.thresholds.spatial >= 0.0 && r.thresholds.spatial <= 1.0)) throw ConfigError("delta", "must lie in [0, 1]");
  if (r.decode.beam < 1) throw ConfigError("beam", "must be at least 1");
  if (r.decode.max_length < 1) throw ConfigError("max_length", "must be at least 1");
  if (c.kg.dim < 1) throw ConfigError("kg_dim", "must be at least 1");
  if (!(c.kg.gamma > 0.0)) throw ConfigError("kg_gamma", "must be positive");
  if (c.kg.negatives < 1) throw ConfigError("kg_negatives", "must be at least 1");
  if (c.kg.steps < 0) throw ConfigError("kg_steps", "must be non-negative");
  if (c.kg.batch_size < 1) throw ConfigError("kg_batch_size", "must be at least 1");
  if (!(c.kg.learning_rate > 0.0)) throw ConfigError("kg_learning_rate", "must be positive");
  if (!(c.kg.init_range > 0.0)) throw ConfigError("kg_init_range", "must be positive");
  if (!(c.s_max_percentile >= 0.0 && c.s_max_percentile <= 100.0)) {
    throw ConfigError("s_max_percentile", "must lie in [0, 100]");
  }
  r.validate();
}

/// Parse config text. Paths are resolved against base_dir when relative.
inline RunConfig parse_config(std::string_view content, const std::filesystem::path& base_dir = {}) {
  RunConfig c;
  const auto& keys = detail::config_keys();
  std::set<std::string> seen;
  std::size_t lineno = 0;
  for (const auto& raw : text::split(content, '\n')) {
    ++lineno;
    std::string line(raw);
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto trimmed = std::string(text::trim(line));
    if (trimmed.empty()) continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("", "line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key(text::trim(std::string_view(trimmed).substr(0, eq)));
    const std::string value(text::trim(std::string_view(trimmed).substr(eq + 1)));
    auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError(key, "unknown configuration key");
    if (!seen.insert(key).second) throw ConfigError(key, "given more than once");
    try {
      it->second.set(c, value);
    } catch (const ConfigError& e) {
      if (!e.key().empty()) throw;
      throw ConfigError(key, e.what());
    }
  }
  for (auto* p : {&c.corpus, &c.embeddings, &c.hypernyms, &c.annotations, &c.features_dir, &c.val_videos,
                  &c.val_references, &c.output_dir}) {
    if (!p->empty() && std::filesystem::path(*p).is_relative() && !base_dir.empty()) {
      *p = (base_dir / *p).lexically_normal().string();
    }
  }
  c.kg.seed = c.seed;
  c.refine.seed = c.seed;
  validate_config(c);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("config", "cannot read config file " + path);
  return parse_config(text::read_file(path), std::filesystem::absolute(path).parent_path());
}

/// Every key with its effective value, in key order.
inline std::string config_to_text(const RunConfig& c) {
  std::string out;
  for (const auto& [key, k] : detail::config_keys()) {
    const auto v = k.get(c);
    if (v.empty()) continue;
    out += key + " = " + v + "\n";
  }
  return out;
}

/// Apply a seed override to every component.
inline void override_seed(RunConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.kg.seed = seed;
  c.refine.seed = seed;
}

}  // namespace weakcap
