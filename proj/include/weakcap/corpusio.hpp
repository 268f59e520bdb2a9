#pragma once

// Sentence corpus ingestion: CoNLL-U reading, phrase and dependency-triplet
// extraction, concept vocabulary construction with hypernym pruning, and
// word-vector lookup.

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "weakcap/errors.hpp"

namespace weakcap {

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

namespace text {

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r' || s[i] == '\n')) ++i;
    const std::size_t start = i;
    while (i < s.size() && !(s[i] == ' ' || s[i] == '\t' || s[i] == '\r' || s[i] == '\n')) ++i;
    if (i > start) out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

inline bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) ||
        (extra == 3 && (cp < 0x10000 || cp > 0x10FFFF)) || (cp >= 0xD800 && cp <= 0xDFFF)) {
      return false;
    }
    i += extra + 1;
  }
  return true;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return v;
}

inline std::optional<long long> parse_int(std::string_view s) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace text

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct TokenRow {
  int index = 0;  // 1-based
  std::string surface;
  std::string lemma;
  std::string upos;
  int head = 0;  // 0 = attached to the artificial root
  std::string deprel;

  friend bool operator==(const TokenRow&, const TokenRow&) = default;
};

struct ParsedSentence {
  std::vector<TokenRow> tokens;
  std::string source_id;

  friend bool operator==(const ParsedSentence&, const ParsedSentence&) = default;

  const TokenRow& at(int index) const { return tokens.at(static_cast<std::size_t>(index - 1)); }
  int size() const { return static_cast<int>(tokens.size()); }
};

enum class PhraseKind : std::uint8_t { Noun, Verb, NounVerb };

/// A concept node: a noun phrase, a verb phrase, or a subject-predicate pair.
struct Phrase {
  PhraseKind kind = PhraseKind::Noun;
  std::optional<std::string> noun;
  std::optional<std::string> verb;

  static Phrase make_noun(std::string lemma) {
    return Phrase{PhraseKind::Noun, std::move(lemma), std::nullopt};
  }
  static Phrase make_verb(std::string lemma) {
    return Phrase{PhraseKind::Verb, std::nullopt, std::move(lemma)};
  }
  static Phrase make_noun_verb(std::string noun_lemma, std::string verb_lemma) {
    return Phrase{PhraseKind::NounVerb, std::move(noun_lemma), std::move(verb_lemma)};
  }

  bool has_noun() const { return noun.has_value(); }
  bool has_verb() const { return verb.has_value(); }

  /// Kind-tagged identity, e.g. "o:cat", "a:jump", "oa:cat|jump".
  std::string key() const {
    switch (kind) {
      case PhraseKind::Noun:
        return "o:" + *noun;
      case PhraseKind::Verb:
        return "a:" + *verb;
      case PhraseKind::NounVerb:
        return "oa:" + *noun + "|" + *verb;
    }
    return {};
  }

  /// Surface form, e.g. "cat jump".
  std::string text() const {
    if (kind == PhraseKind::NounVerb) return *noun + " " + *verb;
    return has_noun() ? *noun : *verb;
  }

  static Phrase from_key(std::string_view key) {
    if (key.starts_with("o:")) return make_noun(std::string(key.substr(2)));
    if (key.starts_with("a:")) return make_verb(std::string(key.substr(2)));
    if (key.starts_with("oa:")) {
      const auto body = key.substr(3);
      const auto bar = body.find('|');
      if (bar == std::string_view::npos) throw IngestError("bad phrase key " + std::string(key));
      return make_noun_verb(std::string(body.substr(0, bar)), std::string(body.substr(bar + 1)));
    }
    throw IngestError("bad phrase key " + std::string(key));
  }

  bool valid() const {
    auto ok = [](const std::optional<std::string>& s) {
      return s && !s->empty() && text::lower(*s) == *s;
    };
    switch (kind) {
      case PhraseKind::Noun:
        return ok(noun) && !verb;
      case PhraseKind::Verb:
        return ok(verb) && !noun;
      case PhraseKind::NounVerb:
        return ok(noun) && ok(verb);
    }
    return false;
  }

  friend bool operator==(const Phrase&, const Phrase&) = default;
  friend auto operator<=>(const Phrase&, const Phrase&) = default;
};

struct Triplet {
  Phrase head;
  std::string relation;
  Phrase tail;

  friend bool operator==(const Triplet&, const Triplet&) = default;
  friend auto operator<=>(const Triplet&, const Triplet&) = default;
};

/// Result of reading a CoNLL-U document. Malformed sentences are dropped and
/// reported rather than raised.
struct ConlluDocument {
  std::vector<ParsedSentence> sentences;
  std::size_t skipped = 0;
  std::vector<std::string> skip_reasons;
};

// ---------------------------------------------------------------------------
// CoNLL-U
// ---------------------------------------------------------------------------

namespace detail {

inline std::optional<std::string> check_tree(const ParsedSentence& s) {
  const int n = s.size();
  if (n == 0) return "empty sentence";
  int roots = 0;
  for (const auto& t : s.tokens) {
    if (t.head < 0 || t.head > n) return "head out of range at token " + std::to_string(t.index);
    if (t.head == t.index) return "self-loop at token " + std::to_string(t.index);
    if (t.head == 0) ++roots;
  }
  if (roots != 1) return "expected exactly one root, found " + std::to_string(roots);
  for (const auto& t : s.tokens) {
    int cur = t.index;
    int steps = 0;
    while (cur != 0) {
      cur = s.at(cur).head;
      if (++steps > n) return "head cycle through token " + std::to_string(t.index);
    }
  }
  return std::nullopt;
}

}  // namespace detail

inline bool is_valid_tree(const ParsedSentence& s) { return !detail::check_tree(s).has_value(); }

inline ConlluDocument parse_conllu(std::string_view document) {
  if (!text::valid_utf8(document)) throw IngestError("CoNLL-U document is not valid UTF-8");

  ConlluDocument doc;
  ParsedSentence current;
  std::optional<std::string> error;
  bool in_sentence = false;
  std::size_t ordinal = 0;

  auto flush = [&]() {
    if (!in_sentence) return;
    ++ordinal;
    if (current.source_id.empty()) current.source_id = "s" + std::to_string(ordinal);
    if (!error) error = detail::check_tree(current);
    if (error) {
      ++doc.skipped;
      doc.skip_reasons.push_back(current.source_id + ": " + *error);
    } else {
      doc.sentences.push_back(std::move(current));
    }
    current = ParsedSentence{};
    error.reset();
    in_sentence = false;
  };

  std::size_t pos = 0;
  while (pos <= document.size()) {
    std::size_t end = document.find('\n', pos);
    if (end == std::string_view::npos) end = document.size();
    std::string_view line = document.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;

    if (text::trim(line).empty()) {
      flush();
      if (end == document.size()) break;
      continue;
    }
    in_sentence = true;
    if (line.front() == '#') {
      const auto body = text::trim(line.substr(1));
      if (body.starts_with("sent_id")) {
        const auto eq = body.find('=');
        if (eq != std::string_view::npos) {
          current.source_id = std::string(text::trim(body.substr(eq + 1)));
        }
      }
      if (end == document.size()) break;
      continue;
    }
    if (error) {
      if (end == document.size()) break;
      continue;
    }
    const auto cols = text::split(line, '\t');
    if (cols.size() != 10) {
      error = "expected 10 columns, found " + std::to_string(cols.size());
    } else if (cols[0].find('-') != std::string::npos || cols[0].find('.') != std::string::npos) {
      // multiword token range or empty node: not part of the basic tree
    } else {
      const auto id = text::parse_int(cols[0]);
      const auto head = text::parse_int(cols[6]);
      if (!id || *id != current.size() + 1) {
        error = "non-sequential token id '" + cols[0] + "'";
      } else if (!head) {
        error = "non-numeric head '" + cols[6] + "' at token " + cols[0];
      } else {
        TokenRow row;
        row.index = static_cast<int>(*id);
        row.surface = cols[1];
        row.lemma = cols[2] == "_" ? cols[1] : cols[2];
        row.upos = cols[3];
        row.head = static_cast<int>(*head);
        row.deprel = cols[7];
        current.tokens.push_back(std::move(row));
      }
    }
    if (end == document.size()) break;
  }
  flush();
  return doc;
}

inline ConlluDocument read_conllu_file(const std::string& path) {
  return parse_conllu(text::read_file(path));
}

inline std::string serialize_conllu(const std::vector<ParsedSentence>& sentences) {
  std::string out;
  for (const auto& s : sentences) {
    out += "# sent_id = " + s.source_id + "\n";
    for (const auto& t : s.tokens) {
      out += std::to_string(t.index) + "\t" + t.surface + "\t" + t.lemma + "\t" + t.upos +
             "\t_\t_\t" + std::to_string(t.head) + "\t" + t.deprel + "\t_\t_\n";
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Phrase and triplet extraction
// ---------------------------------------------------------------------------

/// Dependency labels that open a new sub-sentence.
inline const std::set<std::string>& clause_relations() {
  static const std::set<std::string> rels{"ccomp", "advcl", "conj", "parataxis"};
  return rels;
}

namespace detail {

inline std::string base_rel(std::string_view deprel) {
  const auto colon = deprel.find(':');
  return text::lower(deprel.substr(0, colon));
}

inline bool is_nominal(const TokenRow& t) { return t.upos == "NOUN" || t.upos == "PROPN"; }
inline bool is_verbal(const TokenRow& t) { return t.upos == "VERB"; }

}  // namespace detail

/// Partition token indices into sub-sentences. The main clause comes first,
/// then one group per clause-opening token in index order.
inline std::vector<std::vector<int>> split_clauses(const ParsedSentence& s) {
  const auto& clauses = clause_relations();
  std::map<int, std::vector<int>> groups;  // clause head index (0 = main) -> members
  for (const auto& t : s.tokens) {
    int cur = t.index;
    int owner = 0;
    while (cur != 0) {
      const auto& row = s.at(cur);
      if (clauses.contains(detail::base_rel(row.deprel))) {
        owner = cur;
        break;
      }
      cur = row.head;
    }
    groups[owner].push_back(t.index);
  }
  std::vector<std::vector<int>> out;
  for (auto& [_, members] : groups) out.push_back(std::move(members));
  return out;
}

inline std::vector<Phrase> extract_phrases(const ParsedSentence& s, const std::vector<int>& members) {
  std::vector<Phrase> out;
  std::set<Phrase> seen;
  for (int idx : members) {
    const auto& t = s.at(idx);
    std::optional<Phrase> p;
    if (detail::is_nominal(t)) p = Phrase::make_noun(text::lower(t.lemma));
    else if (detail::is_verbal(t)) p = Phrase::make_verb(text::lower(t.lemma));
    if (p && seen.insert(*p).second) out.push_back(std::move(*p));
  }
  return out;
}

inline std::vector<Phrase> extract_phrases(const ParsedSentence& s) {
  std::vector<int> all;
  for (const auto& t : s.tokens) all.push_back(t.index);
  return extract_phrases(s, all);
}

/// Triplets from one sub-sentence. Subject links form the head phrase, direct
/// objects give relation "obj", prepositional nominals give their case marker.
inline std::vector<Triplet> extract_triplets(const ParsedSentence& s, const std::vector<int>& members) {
  const std::set<int> in_clause(members.begin(), members.end());
  std::vector<std::vector<int>> children(static_cast<std::size_t>(s.size()) + 1);
  for (int idx : members) {
    const int h = s.at(idx).head;
    if (h != 0 && in_clause.contains(h)) children[static_cast<std::size_t>(h)].push_back(idx);
  }

  auto case_marker = [&](int noun_idx) -> std::optional<std::string> {
    for (int c : children[static_cast<std::size_t>(noun_idx)]) {
      if (detail::base_rel(s.at(c).deprel) == "case") return text::lower(s.at(c).lemma);
    }
    return std::nullopt;
  };

  std::vector<Triplet> out;
  std::set<Triplet> seen;
  auto emit = [&](Phrase head, std::string rel, Phrase tail) {
    if (rel.empty() || head == tail) return;
    Triplet t{std::move(head), std::move(rel), std::move(tail)};
    if (seen.insert(t).second) out.push_back(std::move(t));
  };

  for (int idx : members) {
    const auto& tok = s.at(idx);
    const auto& kids = children[static_cast<std::size_t>(idx)];
    if (detail::is_verbal(tok)) {
      const std::string verb = text::lower(tok.lemma);
      std::optional<std::string> subject;
      for (int c : kids) {
        if (detail::base_rel(s.at(c).deprel) == "nsubj" && detail::is_nominal(s.at(c))) {
          subject = text::lower(s.at(c).lemma);
          break;
        }
      }
      const Phrase head =
          subject ? Phrase::make_noun_verb(*subject, verb) : Phrase::make_verb(verb);
      for (int c : kids) {
        const auto& dep = s.at(c);
        if (!detail::is_nominal(dep)) continue;
        const auto rel = detail::base_rel(dep.deprel);
        if (rel == "obj" || rel == "dobj") {
          emit(head, "obj", Phrase::make_noun(text::lower(dep.lemma)));
        } else if (rel == "obl" || rel == "nmod") {
          if (auto prep = case_marker(c)) emit(head, *prep, Phrase::make_noun(text::lower(dep.lemma)));
        }
      }
    } else if (detail::is_nominal(tok)) {
      for (int c : kids) {
        const auto& dep = s.at(c);
        if (!detail::is_nominal(dep) || detail::base_rel(dep.deprel) != "nmod") continue;
        if (auto prep = case_marker(c)) {
          emit(Phrase::make_noun(text::lower(tok.lemma)), *prep,
               Phrase::make_noun(text::lower(dep.lemma)));
        }
      }
    }
  }
  return out;
}

inline std::vector<Triplet> extract_triplets(const ParsedSentence& s) {
  std::vector<Triplet> out;
  std::set<Triplet> seen;
  for (const auto& clause : split_clauses(s)) {
    for (auto& t : extract_triplets(s, clause)) {
      if (seen.insert(t).second) out.push_back(std::move(t));
    }
  }
  return out;
}

/// Deduplicated triplets over a corpus, in first-seen order.
inline std::vector<Triplet> extract_all_triplets(const std::vector<ParsedSentence>& sentences) {
  std::vector<Triplet> out;
  std::set<Triplet> seen;
  for (const auto& s : sentences) {
    for (auto& t : extract_triplets(s)) {
      if (seen.insert(t).second) out.push_back(std::move(t));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

using HypernymPair = std::pair<std::string, std::string>;  // (hypernym, hyponym)

struct ConceptVocabulary {
  std::vector<std::string> objects;
  std::vector<std::string> actions;
  std::vector<std::string> relations;
  std::map<std::string, Eigen::VectorXd> embeddings;  // by lemma
  int embedding_dim = 0;

  // counts reported by build_vocabulary
  std::size_t pruned_objects = 0;
  std::size_t pruned_actions = 0;

  std::size_t num_objects() const { return objects.size(); }
  std::size_t num_actions() const { return actions.size(); }

  std::optional<std::size_t> object_index(std::string_view lemma) const {
    auto it = std::lower_bound(objects.begin(), objects.end(), lemma);
    if (it == objects.end() || *it != lemma) return std::nullopt;
    return static_cast<std::size_t>(it - objects.begin());
  }
  std::optional<std::size_t> action_index(std::string_view lemma) const {
    auto it = std::lower_bound(actions.begin(), actions.end(), lemma);
    if (it == actions.end() || *it != lemma) return std::nullopt;
    return static_cast<std::size_t>(it - actions.begin());
  }

  const Eigen::VectorXd& embedding(const std::string& lemma) const {
    auto it = embeddings.find(lemma);
    if (it == embeddings.end()) throw ArgumentError("no embedding for '" + lemma + "'");
    return it->second;
  }

  const Eigen::VectorXd& object_embedding(std::size_t i) const { return embedding(objects.at(i)); }
  const Eigen::VectorXd& action_embedding(std::size_t i) const { return embedding(actions.at(i)); }

  /// Phrase embedding: the lemma vector, or the mean of both for a pair.
  Eigen::VectorXd phrase_embedding(const Phrase& p) const {
    const auto get = [&](const std::string& lemma) -> Eigen::VectorXd {
      auto it = embeddings.find(lemma);
      return it == embeddings.end() ? Eigen::VectorXd::Zero(embedding_dim) : it->second;
    };
    if (p.kind == PhraseKind::NounVerb) return 0.5 * (get(*p.noun) + get(*p.verb));
    return get(p.has_noun() ? *p.noun : *p.verb);
  }
};

inline std::vector<HypernymPair> parse_hypernyms(std::string_view content) {
  std::vector<HypernymPair> out;
  std::size_t lineno = 0;
  for (const auto& raw : text::split(content, '\n')) {
    ++lineno;
    const auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto cols = text::split(line, '\t');
    if (cols.size() != 2 || cols[0].empty() || cols[1].empty()) {
      throw IngestError("hypernym list line " + std::to_string(lineno) +
                        ": expected hypernym<TAB>hyponym");
    }
    out.emplace_back(text::lower(cols[0]), text::lower(cols[1]));
  }
  return out;
}

inline std::vector<HypernymPair> read_hypernyms_file(const std::string& path) {
  return parse_hypernyms(text::read_file(path));
}

namespace detail {

inline std::vector<std::string> prune_hypernyms(const std::set<std::string>& lemmas,
                                                const std::vector<HypernymPair>& hypernyms,
                                                std::size_t& pruned) {
  std::set<std::string> drop;
  for (const auto& [hyper, hypo] : hypernyms) {
    if (hyper != hypo && lemmas.contains(hyper) && lemmas.contains(hypo)) drop.insert(hyper);
  }
  pruned = drop.size();
  std::vector<std::string> out;
  for (const auto& l : lemmas) {
    if (!drop.contains(l)) out.push_back(l);
  }
  return out;
}

}  // namespace detail

/// Collect object and action lemmas, drop every lemma listed as a hypernym of
/// another lemma present in the corpus, and gather relation labels.
inline ConceptVocabulary build_vocabulary(const std::vector<ParsedSentence>& sentences,
                                          const std::vector<HypernymPair>& hypernyms = {}) {
  std::set<std::string> nouns, verbs, relations;
  for (const auto& s : sentences) {
    for (const auto& p : extract_phrases(s)) {
      if (p.kind == PhraseKind::Noun) nouns.insert(*p.noun);
      else if (p.kind == PhraseKind::Verb) verbs.insert(*p.verb);
    }
    for (const auto& t : extract_triplets(s)) relations.insert(t.relation);
  }
  if (nouns.empty() && verbs.empty()) throw VocabError("corpus contains no object or action lemma");

  ConceptVocabulary vocab;
  vocab.objects = detail::prune_hypernyms(nouns, hypernyms, vocab.pruned_objects);
  vocab.actions = detail::prune_hypernyms(verbs, hypernyms, vocab.pruned_actions);
  vocab.relations.assign(relations.begin(), relations.end());
  return vocab;
}

// ---------------------------------------------------------------------------
// Word vectors
// ---------------------------------------------------------------------------

struct EmbeddingTable {
  int dim = 0;
  std::map<std::string, Eigen::VectorXd> vectors;  // lemma -> vector
  std::vector<std::string> missing;                // lemmas with at least one unknown word

  std::size_t warning_count() const { return missing.size(); }
};

/// Resolve a vector for each lemma. Multiword lemmas use the mean of their
/// words; unknown words contribute the zero vector and flag the lemma.
inline EmbeddingTable load_embeddings(std::istream& in, const std::vector<std::string>& lemmas) {
  std::set<std::string> wanted;
  for (const auto& l : lemmas) {
    for (const auto& w : text::split_ws(l)) wanted.insert(w);
  }

  EmbeddingTable table;
  std::map<std::string, Eigen::VectorXd> words;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto cols = text::split_ws(line);
    if (cols.empty()) continue;
    if (lineno == 1 && cols.size() == 2 && text::parse_int(cols[0]) && text::parse_int(cols[1])) {
      continue;  // word2vec-style "count dim" header
    }
    const int dim = static_cast<int>(cols.size()) - 1;
    if (dim < 1) throw IngestError("embedding line " + std::to_string(lineno) + " has no values");
    if (table.dim == 0) table.dim = dim;
    if (dim != table.dim) {
      throw IngestError("embedding line " + std::to_string(lineno) + " has dimension " +
                        std::to_string(dim) + ", expected " + std::to_string(table.dim));
    }
    if (!wanted.contains(cols[0]) || words.contains(cols[0])) continue;
    Eigen::VectorXd v(dim);
    for (int k = 0; k < dim; ++k) {
      const auto x = text::parse_double(cols[static_cast<std::size_t>(k) + 1]);
      if (!x) throw IngestError("embedding line " + std::to_string(lineno) + ": bad number");
      v[k] = *x;
    }
    words.emplace(cols[0], std::move(v));
  }
  if (table.dim == 0) throw IngestError("embedding file is empty");

  for (const auto& lemma : lemmas) {
    const auto parts = text::split_ws(lemma);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(table.dim);
    bool any_missing = parts.empty();
    for (const auto& w : parts) {
      auto it = words.find(w);
      if (it == words.end()) any_missing = true;
      else acc += it->second;
    }
    if (!parts.empty()) acc /= static_cast<double>(parts.size());
    if (any_missing) table.missing.push_back(lemma);
    table.vectors[lemma] = std::move(acc);
  }
  return table;
}

/// Attach vectors for every object, action and relation of the vocabulary.
inline EmbeddingTable load_embeddings(const std::string& path, ConceptVocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path);
  std::vector<std::string> lemmas = vocab.objects;
  lemmas.insert(lemmas.end(), vocab.actions.begin(), vocab.actions.end());
  lemmas.insert(lemmas.end(), vocab.relations.begin(), vocab.relations.end());
  auto table = load_embeddings(in, lemmas);
  vocab.embedding_dim = table.dim;
  vocab.embeddings = table.vectors;
  return table;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline nlohmann::json vocabulary_to_json(const ConceptVocabulary& vocab) {
  nlohmann::json j;
  j["objects"] = vocab.objects;
  j["actions"] = vocab.actions;
  j["relations"] = vocab.relations;
  j["embedding_dim"] = vocab.embedding_dim;
  nlohmann::json emb = nlohmann::json::object();
  for (const auto& [lemma, v] : vocab.embeddings) {
    emb[lemma] = std::vector<double>(v.data(), v.data() + v.size());
  }
  j["embeddings"] = std::move(emb);
  return j;
}

inline ConceptVocabulary vocabulary_from_json(const nlohmann::json& j) {
  ConceptVocabulary vocab;
  try {
    vocab.objects = j.at("objects").get<std::vector<std::string>>();
    vocab.actions = j.at("actions").get<std::vector<std::string>>();
    vocab.relations = j.at("relations").get<std::vector<std::string>>();
    vocab.embedding_dim = j.at("embedding_dim").get<int>();
    for (const auto& [lemma, arr] : j.at("embeddings").items()) {
      const auto values = arr.get<std::vector<double>>();
      if (static_cast<int>(values.size()) != vocab.embedding_dim) {
        throw IngestError("embedding for '" + lemma + "' has wrong dimension");
      }
      vocab.embeddings[lemma] = Eigen::Map<const Eigen::VectorXd>(
          values.data(), static_cast<Eigen::Index>(values.size()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IngestError(std::string("malformed vocabulary file: ") + e.what());
  }
  if (!std::is_sorted(vocab.objects.begin(), vocab.objects.end()) ||
      !std::is_sorted(vocab.actions.begin(), vocab.actions.end())) {
    throw IngestError("vocabulary lists must be sorted");
  }
  return vocab;
}

inline std::string triplets_to_tsv(const std::vector<Triplet>& triplets) {
  std::string out;
  for (const auto& t : triplets) {
    out += t.head.key() + "\t" + t.relation + "\t" + t.tail.key() + "\n";
  }
  return out;
}

inline std::vector<Triplet> triplets_from_tsv(std::string_view content) {
  std::vector<Triplet> out;
  std::size_t lineno = 0;
  for (const auto& raw : text::split(content, '\n')) {
    ++lineno;
    const auto line = text::trim(raw);
    if (line.empty()) continue;
    const auto cols = text::split(line, '\t');
    if (cols.size() != 3) throw IngestError("triplet line " + std::to_string(lineno) + " malformed");
    out.push_back(Triplet{Phrase::from_key(cols[0]), cols[1], Phrase::from_key(cols[2])});
  }
  return out;
}

}  // namespace weakcap
