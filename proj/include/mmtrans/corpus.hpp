#ifndef MMTRANS_CORPUS_HPP_
#define MMTRANS_CORPUS_HPP_

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mmtrans/errors.hpp"
#include "mmtrans/modalities.hpp"
#include "mmtrans/solidity.hpp"

namespace mmtrans {

inline constexpr int kCommentMin = 4;
inline constexpr int kCommentMax = 20;

// ---------------------------------------------------------------------------
// Comment selection
// ---------------------------------------------------------------------------

struct CommentDoc {
  std::map<std::string, std::string> tagged;
  std::string plain;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

/// Strip `///`, `//`, `/**`, `/*`, leading `*`, and trailing `*/` from one
/// comment line.
inline std::string strip_comment_markers(std::string line) {
  line = trim(line);
  if (line.size() >= 2 && line.compare(line.size() - 2, 2, "*/") == 0)
    line.resize(line.size() - 2);
  line = trim(line);
  for (const char* p : {"///", "//", "/**", "/*", "*"}) {
    const std::size_t n = std::char_traits<char>::length(p);
    if (line.rfind(p, 0) == 0) {
      line = line.substr(n);
      break;
    }
  }
  return trim(line);
}

}  // namespace detail

/// Parse a raw doc block into NatSpec tag buckets plus untagged plain text.
/// A word starting with '@' switches the active bucket; repeated tags append.
inline CommentDoc parse_doc(const std::string& raw) {
  CommentDoc doc;
  std::string current;  // empty = plain bucket
  std::string line;
  std::istringstream in(raw);
  while (std::getline(in, line)) {
    line = detail::strip_comment_markers(line);
    std::istringstream words(line);
    std::string w;
    while (words >> w) {
      if (w.size() > 1 && w[0] == '@' &&
          std::isalpha(static_cast<unsigned char>(w[1]))) {
        current = w;
        continue;
      }
      std::string& bucket = current.empty() ? doc.plain : doc.tagged[current];
      if (!bucket.empty()) bucket += ' ';
      bucket += w;
    }
  }
  return doc;
}

/// Highest-priority comment source: @notice > @dev > @return > plain.
inline std::optional<std::string> select_comment(const CommentDoc& doc) {
  for (const char* tag : {"@notice", "@dev", "@return"}) {
    auto it = doc.tagged.find(tag);
    if (it != doc.tagged.end() && !detail::trim(it->second).empty())
      return detail::trim(it->second);
  }
  if (!detail::trim(doc.plain).empty()) return detail::trim(doc.plain);
  return std::nullopt;
}

/// Prefix up to the first `.`, `!`, or `?` followed by whitespace/end (the
/// terminator is kept), or up to the first newline, whichever comes first.
inline std::string first_sentence(const std::string& text) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') return detail::trim(text.substr(0, i));
    if ((c == '.' || c == '!' || c == '?') &&
        (i + 1 == text.size() ||
         std::isspace(static_cast<unsigned char>(text[i + 1]))))
      return detail::trim(text.substr(0, i + 1));
  }
  return detail::trim(text);
}

/// Lowercased whitespace-split words with surrounding punctuation stripped;
/// interior punctuation (erc-20) survives. Empty husks are dropped.
inline std::vector<std::string> comment_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&]() {
    std::size_t b = 0, e = cur.size();
    while (b < e && !std::isalnum(static_cast<unsigned char>(cur[b]))) ++b;
    while (e > b && !std::isalnum(static_cast<unsigned char>(cur[e - 1]))) --e;
    if (e > b) out.push_back(cur.substr(b, e - b));
    cur.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// Pair construction
// ---------------------------------------------------------------------------

/// One ⟨method, comment⟩ sample with every derived channel the dataset
/// persists. method_ast is the in-memory derivation source; it is not
/// written to disk (the sbt/nodes/edges/code channels are).
struct PairSample {
  AstNode method_ast;
  std::vector<std::string> sbt;
  std::vector<std::string> nodes;
  std::vector<std::pair<int, int>> edges;
  std::vector<std::string> code_tokens;
  std::vector<std::string> comment_tokens;
  std::string contract_id;
  std::string method_name;
};

/// Persisted-field equality (method_ast is derivation state, not content).
inline bool same_sample(const PairSample& a, const PairSample& b) {
  return a.sbt == b.sbt && a.nodes == b.nodes && a.edges == b.edges &&
         a.code_tokens == b.code_tokens &&
         a.comment_tokens == b.comment_tokens &&
         a.contract_id == b.contract_id && a.method_name == b.method_name;
}

/// Why a method is excluded from the corpus (Kept = retained).
enum class DropReason { Kept, KindFiltered, NoComment, TooShort, TooLong };

inline const char* drop_reason_name(DropReason r) {
  switch (r) {
    case DropReason::Kept: return "kept";
    case DropReason::KindFiltered: return "kind-filtered";
    case DropReason::NoComment: return "no-comment";
    case DropReason::TooShort: return "comment-too-short";
    case DropReason::TooLong: return "comment-too-long";
  }
  return "?";
}

/// Apply the retention filters without building channels: wrong kind, then
/// missing/unusable doc, then first-sentence word count outside [4, 20].
inline DropReason classify_method(const MethodRecord& record) {
  if (record.kind != MethodKind::Function && record.kind != MethodKind::Modifier)
    return DropReason::KindFiltered;
  if (record.doc.empty()) return DropReason::NoComment;
  auto selected = select_comment(parse_doc(record.doc));
  if (!selected) return DropReason::NoComment;
  auto words = comment_tokens(first_sentence(*selected));
  if (static_cast<int>(words.size()) < kCommentMin) return DropReason::TooShort;
  if (static_cast<int>(words.size()) > kCommentMax) return DropReason::TooLong;
  return DropReason::Kept;
}

/// Filter + transform one extracted method. Absent when the kind is not
/// function/modifier, there is no usable doc, or the first-sentence comment
/// falls outside [4, 20] words.
inline std::optional<PairSample> make_pair(const MethodRecord& record) {
  if (classify_method(record) != DropReason::Kept) return std::nullopt;
  auto words =
      comment_tokens(first_sentence(*select_comment(parse_doc(record.doc))));
  PairSample s;
  s.method_ast = normalize_literals(record.ast);
  s.sbt = sbt_serialize(s.method_ast).tokens;
  GraphRep g = graph_extract(s.method_ast);
  s.nodes = std::move(g.node_labels);
  s.edges = std::move(g.edges);
  s.code_tokens = code_tokens(s.method_ast);
  s.comment_tokens = std::move(words);
  s.contract_id = record.contract;
  s.method_name = record.name;
  return s;
}

/// Lex/parse one source file and build pairs from every retained method.
/// `id_prefix` namespaces contract_id across files (e.g. the file stem).
inline std::vector<PairSample> harvest_source(const std::string& source,
                                              const std::string& id_prefix = "") {
  AstNode unit = parse(tokenize(source));
  std::vector<PairSample> out;
  for (const MethodRecord& rec : extract_methods(unit, source)) {
    if (auto s = make_pair(rec)) {
      if (!id_prefix.empty())
        s->contract_id = id_prefix + "#" + s->contract_id;
      out.push_back(std::move(*s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

struct DatasetSplit {
  std::vector<PairSample> train;
  std::vector<PairSample> validation;
  std::vector<PairSample> test;
  uint64_t seed = 0;
};

namespace detail {

inline std::string dedup_key(const PairSample& s) {
  std::string k;
  for (const auto& t : s.code_tokens) {
    k += t;
    k += '\x1f';
  }
  k += '\x1e';
  for (const auto& t : s.comment_tokens) {
    k += t;
    k += '\x1f';
  }
  return k;
}

}  // namespace detail

/// Deterministic 90/5/5 split, then leakage removal: validation/test samples
/// whose (code, comment) key appears in training are dropped.
inline DatasetSplit split_dataset(std::vector<PairSample> pairs,
                                  uint64_t seed) {
  if (pairs.size() < 10)
    throw SplitError("need at least 10 pairs, got " +
                     std::to_string(pairs.size()));
  // Fisher–Yates with an explicit generator: identical output everywhere.
  std::mt19937_64 rng(seed);
  for (std::size_t i = pairs.size() - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(pairs[i], pairs[j]);
  }
  const std::size_t n = pairs.size();
  const std::size_t n_train = n * 90 / 100;
  const std::size_t n_valid = n * 5 / 100;
  DatasetSplit split;
  split.seed = seed;
  split.train.assign(pairs.begin(), pairs.begin() + static_cast<long>(n_train));
  split.validation.assign(pairs.begin() + static_cast<long>(n_train),
                          pairs.begin() + static_cast<long>(n_train + n_valid));
  split.test.assign(pairs.begin() + static_cast<long>(n_train + n_valid),
                    pairs.end());
  std::unordered_set<std::string> train_keys;
  for (const PairSample& s : split.train)
    train_keys.insert(detail::dedup_key(s));
  auto dedup = [&](std::vector<PairSample>& v) {
    std::vector<PairSample> kept;
    for (PairSample& s : v)
      if (!train_keys.count(detail::dedup_key(s))) kept.push_back(std::move(s));
    v = std::move(kept);
  };
  dedup(split.validation);
  dedup(split.test);
  return split;
}

// ---------------------------------------------------------------------------
// Persistence (JSONL + meta.json)
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json sample_to_json(const PairSample& s) {
  nlohmann::json j;
  j["sbt"] = s.sbt;
  j["nodes"] = s.nodes;
  nlohmann::json edges = nlohmann::json::array();
  for (auto [a, b] : s.edges) edges.push_back({a, b});
  j["edges"] = std::move(edges);
  j["code"] = s.code_tokens;
  j["comment"] = s.comment_tokens;
  j["contract_id"] = s.contract_id;
  j["method_name"] = s.method_name;
  return j;
}

inline PairSample sample_from_json(const nlohmann::json& j, int line) {
  auto need = [&](const char* field) -> const nlohmann::json& {
    auto it = j.find(field);
    if (it == j.end())
      throw SchemaError(std::string("missing field '") + field + "'", line);
    return *it;
  };
  auto tokens = [&](const char* field) {
    const nlohmann::json& v = need(field);
    if (!v.is_array())
      throw SchemaError(std::string("field '") + field + "' must be an array",
                        line);
    std::vector<std::string> out;
    for (const auto& t : v) {
      if (!t.is_string())
        throw SchemaError(std::string("field '") + field +
                              "' must hold strings",
                          line);
      out.push_back(t.get<std::string>());
    }
    return out;
  };
  PairSample s;
  s.sbt = tokens("sbt");
  s.nodes = tokens("nodes");
  s.code_tokens = tokens("code");
  s.comment_tokens = tokens("comment");
  const nlohmann::json& edges = need("edges");
  if (!edges.is_array()) throw SchemaError("field 'edges' must be an array", line);
  for (const auto& e : edges) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() ||
        !e[1].is_number_integer())
      throw SchemaError("edges must be [i,j] integer pairs", line);
    const int a = e[0].get<int>(), b = e[1].get<int>();
    if (a < 0 || b <= a || b >= static_cast<int>(s.nodes.size()))
      throw SchemaError("edge (" + std::to_string(a) + "," +
                            std::to_string(b) + ") out of range",
                        line);
    s.edges.emplace_back(a, b);
  }
  if (!need("contract_id").is_string() || !need("method_name").is_string())
    throw SchemaError("contract_id/method_name must be strings", line);
  s.contract_id = j["contract_id"].get<std::string>();
  s.method_name = j["method_name"].get<std::string>();
  if (static_cast<int>(s.comment_tokens.size()) < kCommentMin ||
      static_cast<int>(s.comment_tokens.size()) > kCommentMax)
    throw SchemaError("comment length " +
                          std::to_string(s.comment_tokens.size()) +
                          " outside [4,20]",
                      line);
  if (s.code_tokens.empty()) throw SchemaError("empty code tokens", line);
  // Reconstruct the AST when the stored SBT is complete; truncated
  // sequences stay record-only.
  try {
    s.method_ast = sbt_parse(SbtSequence{s.sbt});
  } catch (const SbtFormatError&) {
    s.method_ast = AstNode{};
  }
  return s;
}

inline void write_jsonl(const std::filesystem::path& file,
                        const std::vector<PairSample>& samples) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  for (const PairSample& s : samples) out << sample_to_json(s).dump() << '\n';
}

inline std::vector<PairSample> read_jsonl(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  std::vector<PairSample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw SchemaError("invalid JSON", lineno);
    out.push_back(sample_from_json(j, lineno));
  }
  return out;
}

}  // namespace detail

/// Write train.jsonl / valid.jsonl / test.jsonl plus meta.json into `dir`.
/// Channel length ceilings recorded with a dataset. Defaults are the
/// data-model limits; a builder may tighten them.
struct ChannelCaps {
  int sbt = kSbtCap;
  int nodes = kGraphCap;
  int comment = kCommentMax;
};

inline void write_dataset(const DatasetSplit& split,
                          const std::filesystem::path& dir,
                          const ChannelCaps& caps = {}) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  detail::write_jsonl(dir / "train.jsonl", split.train);
  detail::write_jsonl(dir / "valid.jsonl", split.validation);
  detail::write_jsonl(dir / "test.jsonl", split.test);
  nlohmann::json meta;
  meta["seed"] = split.seed;
  meta["counts"] = {{"train", split.train.size()},
                    {"valid", split.validation.size()},
                    {"test", split.test.size()}};
  meta["caps"] = {{"sbt", caps.sbt}, {"nodes", caps.nodes},
                  {"comment", caps.comment}};
  std::ofstream out(dir / "meta.json");
  if (!out) throw IoError("cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << '\n';
}

/// Read a dataset directory back. The train split must be non-empty.
inline DatasetSplit read_dataset(const std::filesystem::path& dir) {
  DatasetSplit split;
  split.train = detail::read_jsonl(dir / "train.jsonl");
  split.validation = detail::read_jsonl(dir / "valid.jsonl");
  split.test = detail::read_jsonl(dir / "test.jsonl");
  if (split.train.empty())
    throw SchemaError("train.jsonl holds no records", 0);
  std::ifstream in(dir / "meta.json");
  if (in) {
    nlohmann::json meta = nlohmann::json::parse(in, nullptr, false);
    if (!meta.is_discarded() && meta.contains("seed") &&
        meta["seed"].is_number_unsigned())
      split.seed = meta["seed"].get<uint64_t>();
  }
  return split;
}

}  // namespace mmtrans

#endif  // MMTRANS_CORPUS_HPP_
