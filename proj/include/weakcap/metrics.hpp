#pragma once

// Caption metrics: corpus BLEU-4, ROUGE-L and CIDEr (base formulation).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "weakcap/corpusio.hpp"
#include "weakcap/errors.hpp"

namespace weakcap {

using Tokens = std::vector<std::string>;

/// Lowercase, split on whitespace, strip trailing punctuation from each token;
/// tokens that become empty are dropped.
inline Tokens tokenize_caption(std::string_view s) {
  Tokens out;
  for (auto& w : text::split_ws(text::lower(std::string(s)))) {
    while (!w.empty() && std::ispunct(static_cast<unsigned char>(w.back()))) w.pop_back();
    if (!w.empty()) out.push_back(std::move(w));
  }
  return out;
}

struct EvalSet {
  std::map<std::string, Tokens> candidates;
  std::map<std::string, std::vector<Tokens>> references;

  /// Every candidate needs references; ids are compared in both directions.
  void validate() const {
    if (candidates.empty()) throw EvalError("no candidates to evaluate");
    std::vector<std::string> missing;
    for (const auto& [id, _] : candidates) {
      auto it = references.find(id);
      if (it == references.end() || it->second.empty()) missing.push_back(id);
    }
    for (const auto& [id, _] : references) {
      if (!candidates.count(id)) missing.push_back(id);
    }
    if (!missing.empty()) {
      std::sort(missing.begin(), missing.end());
      throw EvalError("candidate/reference id mismatch: " + text::join(missing, ", "));
    }
  }
};

namespace detail {

using NgramCounts = std::map<Tokens, double>;

inline NgramCounts ngrams(const Tokens& t, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) out[Tokens(t.begin() + i, t.begin() + i + n)] += 1.0;
  return out;
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

struct BleuDetail {
  double score = 0.0;
  double precisions[4] = {0, 0, 0, 0};
  double brevity_penalty = 0.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
};

/// Corpus BLEU: clipped n-gram counts summed over videos, uniform weights,
/// closest reference length (shorter wins ties), no smoothing.
inline BleuDetail bleu4_detail(const EvalSet& es) {
  es.validate();
  double match[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
  BleuDetail d;
  for (const auto& [id, cand] : es.candidates) {
    const auto& refs = es.references.at(id);
    d.candidate_length += cand.size();
    std::size_t best = refs.front().size();
    for (const auto& r : refs) {
      const auto dr = static_cast<long>(r.size()) - static_cast<long>(cand.size());
      const auto db = static_cast<long>(best) - static_cast<long>(cand.size());
      if (std::labs(dr) < std::labs(db) || (std::labs(dr) == std::labs(db) && r.size() < best)) best = r.size();
    }
    d.reference_length += best;
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto cc = detail::ngrams(cand, n);
      detail::NgramCounts maxref;
      for (const auto& r : refs) {
        for (const auto& [g, c] : detail::ngrams(r, n)) maxref[g] = std::max(maxref[g], c);
      }
      for (const auto& [g, c] : cc) {
        auto it = maxref.find(g);
        if (it != maxref.end()) match[n - 1] += std::min(c, it->second);
        total[n - 1] += c;
      }
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 0; n < 4; ++n) {
    d.precisions[n] = total[n] > 0 ? match[n] / total[n] : 0.0;
    if (d.precisions[n] <= 0.0) zero = true;
    else log_sum += 0.25 * std::log(d.precisions[n]);
  }
  if (d.candidate_length == 0) {
    d.brevity_penalty = 0.0;
  } else if (d.candidate_length > d.reference_length) {
    d.brevity_penalty = 1.0;
  } else {
    d.brevity_penalty = std::exp(1.0 - static_cast<double>(d.reference_length) / static_cast<double>(d.candidate_length));
  }
  d.score = zero ? 0.0 : d.brevity_penalty * std::exp(log_sum);
  return d;
}

inline double bleu4(const EvalSet& es) { return bleu4_detail(es).score; }

/// F-measure on the longest common subsequence, P = lcs/|cand|, R = lcs/|ref|.
inline double rouge_l_pair(const Tokens& cand, const Tokens& ref, double beta = 1.2) {
  const auto lcs = static_cast<double>(detail::lcs_length(cand, ref));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(cand.size());
  const double r = lcs / static_cast<double>(ref.size());
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

inline std::map<std::string, double> rouge_l_per_video(const EvalSet& es) {
  es.validate();
  std::map<std::string, double> out;
  for (const auto& [id, cand] : es.candidates) {
    double best = 0.0;
    for (const auto& r : es.references.at(id)) best = std::max(best, rouge_l_pair(cand, r));
    out[id] = best;
  }
  return out;
}

inline double rouge_l(const EvalSet& es) {
  const auto per = rouge_l_per_video(es);
  double s = 0.0;
  for (const auto& [_, v] : per) s += v;
  return s / static_cast<double>(per.size());
}

struct CiderResult {
  double score = 0.0;
  std::map<std::string, double> per_video;
  bool degenerate = false;  // fewer than two reference sets: idf is meaningless
};

/// tf = raw n-gram counts, idf = log(N / df) with df counted over the
/// per-video reference sets. Per reference, cosine similarity is averaged over
/// n = 1..min(4, longer of the two lengths); then averaged over references,
/// times 10.
inline CiderResult cider_detail(const EvalSet& es) {
  es.validate();
  CiderResult res;
  const double n_docs = static_cast<double>(es.references.size());
  res.degenerate = es.references.size() < 2;
  std::map<Tokens, double> df;
  for (const auto& [id, refs] : es.references) {
    std::set<Tokens> seen;
    for (const auto& r : refs) {
      for (std::size_t n = 1; n <= 4; ++n) {
        for (const auto& [g, _] : detail::ngrams(r, n)) seen.insert(g);
      }
    }
    for (const auto& g : seen) df[g] += 1.0;
  }
  auto tfidf = [&](const Tokens& t, std::size_t n) {
    auto v = detail::ngrams(t, n);
    for (auto& [g, c] : v) {
      auto it = df.find(g);
      const double idf = std::log(n_docs / std::max(1.0, it == df.end() ? 0.0 : it->second));
      c *= idf;
    }
    return v;
  };
  auto norm = [](const detail::NgramCounts& v) {
    double s = 0.0;
    for (const auto& [_, c] : v) s += c * c;
    return std::sqrt(s);
  };
  double total = 0.0;
  for (const auto& [id, cand] : es.candidates) {
    const auto& refs = es.references.at(id);
    double score = 0.0;
    for (const auto& r : refs) {
      const std::size_t orders = std::min<std::size_t>(4, std::max(cand.size(), r.size()));
      double sim = 0.0;
      for (std::size_t n = 1; n <= orders; ++n) {
        const auto vc = tfidf(cand, n);
        const auto vr = tfidf(r, n);
        const double nc = norm(vc), nr = norm(vr);
        if (nc == 0.0 || nr == 0.0) continue;
        double dot = 0.0;
        for (const auto& [g, c] : vc) {
          auto it = vr.find(g);
          if (it != vr.end()) dot += c * it->second;
        }
        sim += dot / (nc * nr);
      }
      if (orders) score += sim / static_cast<double>(orders);
    }
    score = 10.0 * score / static_cast<double>(refs.size());
    res.per_video[id] = score;
    total += score;
  }
  res.score = total / static_cast<double>(es.candidates.size());
  return res;
}

inline double cider(const EvalSet& es) { return cider_detail(es).score; }

// ---------------------------------------------------------------------------
// Files and reports
// ---------------------------------------------------------------------------

inline std::map<std::string, Tokens> read_candidates_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open candidates file " + path);
  std::map<std::string, Tokens> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out[j.at("video_id").get<std::string>()] = tokenize_caption(j.at("caption").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw IngestError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::map<std::string, std::vector<Tokens>> read_references_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open references file " + path);
  std::map<std::string, std::vector<Tokens>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      auto& refs = out[j.at("video_id").get<std::string>()];
      if (j.contains("refs")) {
        for (const auto& r : j.at("refs")) refs.push_back(tokenize_caption(r.get<std::string>()));
      } else {
        refs.push_back(tokenize_caption(j.at("caption").get<std::string>()));
      }
    } catch (const nlohmann::json::exception& e) {
      throw IngestError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline nlohmann::json evaluation_report(const EvalSet& es) {
  es.validate();
  const auto b = bleu4_detail(es);
  const auto r = rouge_l_per_video(es);
  const auto c = cider_detail(es);
  double rsum = 0.0;
  for (const auto& [_, v] : r) rsum += v;
  nlohmann::json j;
  j["bleu4"] = b.score;
  j["rouge_l"] = rsum / static_cast<double>(r.size());
  j["cider"] = c.score;
  j["bleu_precisions"] = std::vector<double>(b.precisions, b.precisions + 4);
  j["brevity_penalty"] = b.brevity_penalty;
  if (c.degenerate) j["warnings"] = {"cider: fewer than two reference sets, idf is degenerate"};
  nlohmann::json per = nlohmann::json::array();
  for (const auto& [id, cand] : es.candidates) {
    EvalSet one;
    one.candidates[id] = cand;
    one.references[id] = es.references.at(id);
    per.push_back({{"video_id", id}, {"bleu4", bleu4(one)}, {"rouge_l", r.at(id)}, {"cider", c.per_video.at(id)}});
  }
  j["per_video"] = std::move(per);
  return j;
}

inline nlohmann::json evaluate_files(const std::string& candidates, const std::string& references) {
  EvalSet es;
  es.candidates = read_candidates_jsonl(candidates);
  if (es.candidates.empty()) throw EvalError("candidates file is empty: " + candidates);
  es.references = read_references_jsonl(references);
  return evaluation_report(es);
}

}  // namespace weakcap
