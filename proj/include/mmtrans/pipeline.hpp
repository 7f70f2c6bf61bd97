#ifndef MMTRANS_PIPELINE_HPP_
#define MMTRANS_PIPELINE_HPP_

// Command implementations behind the command-line tool: corpus building,
// training, evaluation, scoring, single-method summarization, and modality
// inspection. Each command is an ordinary function operating on an options
// struct and an output stream, so tests drive them in-process; the binary
// adds only flag parsing and exit-code mapping.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mmtrans/corpus.hpp"
#include "mmtrans/metrics.hpp"
#include "mmtrans/model.hpp"
#include "mmtrans/trainer.hpp"
#include "mmtrans/vocab_batch.hpp"

namespace mmtrans {

// ---------------------------------------------------------------------------
// Exit codes
// ---------------------------------------------------------------------------

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitLookup = 3;

/// Run `body`, mapping the error taxonomy onto exit codes: lookup failures
/// → 3, anything wrong with inputs/config/data files → 2, everything else
/// (i.e. bugs) → 1.
template <typename Body>
int run_command(Body&& body, std::ostream& err) {
  try {
    body();
    return kExitOk;
  } catch (const LookupError& e) {
    err << "error: " << e.what() << '\n';
    return kExitLookup;
  } catch (const LexError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const SplitError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const SchemaError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const EmptyCorpus& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const EvalError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const DataModelMismatch& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const EmptyReference& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const EmptyInput& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

// ---------------------------------------------------------------------------
// Seeds and run configuration
// ---------------------------------------------------------------------------

/// Seed default when no flag or config key supplies one: the MMTRANS_SEED
/// environment variable if set, otherwise 0.
inline uint64_t default_seed() {
  const char* env = std::getenv("MMTRANS_SEED");
  if (env == nullptr || *env == '\0') return 0;
  try {
    std::size_t used = 0;
    const uint64_t v = std::stoull(env, &used);
    if (env[used] != '\0') throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("MMTRANS_SEED is not an unsigned integer: ") +
                      env);
  }
}

/// Everything a training run needs: model shape, trainer knobs, and the two
/// directories. Built from defaults, then a config file, then CLI flags —
/// later sources override earlier ones.
struct RunConfig {
  ModelConfig model;
  TrainOptions trainer;
  std::string data_dir;
  std::string out_dir;
};

/// Defaults for every documented config key; the seed falls back to
/// MMTRANS_SEED (see default_seed).
inline RunConfig default_run_config() {
  RunConfig rc;
  const uint64_t seed = default_seed();
  rc.model.seed = seed;
  rc.trainer.seed = seed;
  return rc;
}

namespace detail {

inline int64_t config_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing text");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' needs an integer, got '" + v +
                      "'");
  }
}

inline double config_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing text");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' needs a number, got '" + v +
                      "'");
  }
}

inline bool config_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "' needs a boolean, got '" + v +
                    "'");
}

}  // namespace detail

/// Parse flat `key = value` run-configuration text. `#` starts a comment;
/// blank lines are skipped; unknown keys are rejected. Keys and defaults:
///
///   mode            mmtrans     mmtrans | i-mmtrans | code-only
///   d_model         256         embedding and attention width (d = d_model)
///   d_ff            512         feed-forward inner width
///   heads           4           attention heads J (must divide d_model)
///   layers          1           attention-module repetitions N
///   hop             2           GCN layers
///   dropout         0.1         residual-branch dropout rate
///   gcn_normalize   false       symmetric-normalized adjacency
///   seed            MMTRANS_SEED or 0
///   max_epochs      50
///   batch_size      100
///   validate_every  500         minibatches between validations
///   patience        5           non-improving validations before stopping
///   warmup_steps    4000
///   greedy_max_len  20          decode length ceiling
///   adam_beta1      0.9
///   adam_beta2      0.98
///   adam_epsilon    1e-9
///   stop_at_val     -1          stop once val S-BLEU reaches this (<0: off)
///   max_steps       0           hard optimizer-step cap (0: off)
///   data_dir        (unset)     dataset directory
///   out_dir         (unset)     checkpoint/log directory
inline RunConfig parse_run_config(std::istream& in) {
  RunConfig rc = default_run_config();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.resize(hash);
    const std::string trimmed = detail::trim(line);
    if (trimmed.empty()) continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        " is not 'key = value': " + trimmed);
    const std::string key = detail::trim(trimmed.substr(0, eq));
    const std::string value = detail::trim(trimmed.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config line " + std::to_string(lineno) +
                        " has an empty key or value");

    if (key == "mode") {
      rc.model.mode = mode_from_name(value);
    } else if (key == "d_model") {
      rc.model.d = rc.model.d_model = detail::config_int(key, value);
    } else if (key == "d_ff") {
      rc.model.d_ff = detail::config_int(key, value);
    } else if (key == "heads") {
      rc.model.heads = detail::config_int(key, value);
    } else if (key == "layers") {
      rc.model.layers = detail::config_int(key, value);
    } else if (key == "hop") {
      rc.model.hop = detail::config_int(key, value);
    } else if (key == "dropout") {
      rc.model.dropout = detail::config_double(key, value);
    } else if (key == "gcn_normalize") {
      rc.model.gcn_normalize = detail::config_bool(key, value);
    } else if (key == "seed") {
      const int64_t v = detail::config_int(key, value);
      if (v < 0) throw ConfigError("seed must be non-negative");
      rc.model.seed = static_cast<uint64_t>(v);
      rc.trainer.seed = static_cast<uint64_t>(v);
    } else if (key == "max_epochs") {
      rc.trainer.max_epochs = static_cast<int>(detail::config_int(key, value));
    } else if (key == "batch_size") {
      rc.trainer.batch_size = static_cast<int>(detail::config_int(key, value));
    } else if (key == "validate_every") {
      rc.trainer.validate_every = detail::config_int(key, value);
    } else if (key == "patience") {
      rc.trainer.patience = static_cast<int>(detail::config_int(key, value));
    } else if (key == "warmup_steps") {
      rc.trainer.warmup_steps = detail::config_int(key, value);
    } else if (key == "greedy_max_len") {
      rc.trainer.greedy_max_len =
          static_cast<int>(detail::config_int(key, value));
    } else if (key == "adam_beta1") {
      rc.trainer.adam_beta1 = detail::config_double(key, value);
    } else if (key == "adam_beta2") {
      rc.trainer.adam_beta2 = detail::config_double(key, value);
    } else if (key == "adam_epsilon") {
      rc.trainer.adam_epsilon = detail::config_double(key, value);
    } else if (key == "stop_at_val") {
      rc.trainer.stop_at_val = detail::config_double(key, value);
    } else if (key == "max_steps") {
      rc.trainer.max_steps = detail::config_int(key, value);
    } else if (key == "data_dir") {
      rc.data_dir = value;
    } else if (key == "out_dir") {
      rc.out_dir = value;
    } else {
      throw ConfigError("unknown config key '" + key + "' (line " +
                        std::to_string(lineno) + ")");
    }
  }
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read config file " + file.string());
  return parse_run_config(in);
}

// ---------------------------------------------------------------------------
// Shared front-end helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::string read_text_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Parse a `.sol` file and return the record of the named method/modifier.
inline MethodRecord find_method(const std::filesystem::path& sol,
                                const std::string& method) {
  const std::string source = read_text_file(sol);
  AstNode unit = parse(tokenize(source));
  for (MethodRecord& rec : extract_methods(unit, source))
    if (rec.name == method) return rec;
  throw LookupError("method '" + method + "' not found in " + sol.string());
}

/// Channel derivation for a method outside the corpus path (no doc/comment
/// filters; the comment channel stays empty).
inline PairSample channels_for(const MethodRecord& rec) {
  PairSample s;
  s.method_ast = normalize_literals(rec.ast);
  s.sbt = sbt_serialize(s.method_ast).tokens;
  GraphRep g = graph_extract(s.method_ast);
  s.nodes = std::move(g.node_labels);
  s.edges = std::move(g.edges);
  s.code_tokens = code_tokens(s.method_ast);
  s.contract_id = rec.contract;
  s.method_name = rec.name;
  return s;
}

inline std::string join_tokens(const std::vector<std::string>& toks) {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i > 0) out += ' ';
    out += toks[i];
  }
  return out;
}

}  // namespace detail

/// Print a metric report the way the tables do: names, ×100, 2 decimals.
inline void print_report(const MetricReport& r, std::ostream& out) {
  const auto line = [&](const char* name, double v) {
    out << std::left << std::setw(12) << name << std::right << std::fixed
        << std::setprecision(2) << std::setw(6) << v * 100.0 << '\n';
  };
  line("S-BLEU", r.s_bleu);
  line("C-BLEU", r.c_bleu);
  line("ROUGE-LCS", r.rouge_lcs_f1);
  line("METEOR", r.meteor);
}

// ---------------------------------------------------------------------------
// build-corpus
// ---------------------------------------------------------------------------

struct BuildCorpusOptions {
  std::filesystem::path src;
  std::filesystem::path out;
  uint64_t seed = 0;
  // Channel ceilings; values beyond the data-model limits (600/200/20) have
  // no effect because harvesting already enforces those.
  int max_sbt = kSbtCap;
  int max_nodes = kGraphCap;
  int max_comment = kCommentMax;
};

struct BuildCorpusReport {
  int files = 0;
  int methods = 0;
  int kept = 0;
  std::map<std::string, int> drops;
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
};

/// Harvest every `.sol` under src (sorted by name for determinism), split,
/// and write the dataset + vocabularies + meta into out. Prints counts and
/// per-reason drop tallies. Throws EmptyCorpus when nothing usable remains.
inline BuildCorpusReport cmd_build_corpus(const BuildCorpusOptions& o,
                                          std::ostream& log) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(o.src))
    throw IoError("source directory not found: " + o.src.string());

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(o.src))
    if (entry.path().extension() == ".sol") files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  BuildCorpusReport rep;
  for (const char* reason :
       {"kind-filtered", "no-comment", "comment-too-short",
        "comment-too-long"})
    rep.drops[reason] = 0;

  std::vector<PairSample> pairs;
  for (const fs::path& file : files) {
    ++rep.files;
    const std::string source = detail::read_text_file(file);
    AstNode unit = parse(tokenize(source));
    for (const MethodRecord& rec : extract_methods(unit, source)) {
      ++rep.methods;
      const DropReason reason = classify_method(rec);
      if (reason != DropReason::Kept) {
        ++rep.drops[drop_reason_name(reason)];
        continue;
      }
      PairSample s = *make_pair(rec);
      s.contract_id = file.stem().string() + "#" + s.contract_id;
      if (static_cast<int>(s.comment_tokens.size()) > o.max_comment) {
        ++rep.drops[drop_reason_name(DropReason::TooLong)];
        continue;
      }
      if (static_cast<int>(s.sbt.size()) > o.max_sbt)
        s.sbt.resize(static_cast<std::size_t>(o.max_sbt));
      if (static_cast<int>(s.nodes.size()) > o.max_nodes) {
        s.nodes.resize(static_cast<std::size_t>(o.max_nodes));
        std::erase_if(s.edges, [&](const std::pair<int, int>& e) {
          return e.first >= o.max_nodes || e.second >= o.max_nodes;
        });
      }
      pairs.push_back(std::move(s));
      ++rep.kept;
    }
  }

  if (pairs.empty())
    throw EmptyCorpus("empty corpus: no usable method-comment pairs under " +
                      o.src.string());

  DatasetSplit split = split_dataset(std::move(pairs), o.seed);
  write_dataset(split, o.out, {o.max_sbt, o.max_nodes, o.max_comment});
  save_vocab_set(build_vocab_set(split.train), o.out);

  rep.train = split.train.size();
  rep.valid = split.validation.size();
  rep.test = split.test.size();

  log << "scanned " << rep.files << " files, " << rep.methods << " methods\n";
  log << "kept " << rep.kept << " pairs\n";
  log << "dropped:";
  for (const auto& [reason, count] : rep.drops)
    log << ' ' << reason << ' ' << count;
  log << '\n';
  log << "split: train " << rep.train << ", valid " << rep.valid << ", test "
      << rep.test << '\n';
  log << "wrote " << o.out.string() << '\n';
  return rep;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainCliOptions {
  std::filesystem::path config_file;  // optional
  std::string data_dir;               // overrides config when non-empty
  std::string out_dir;                // overrides config when non-empty
  std::string mode;                   // overrides config when non-empty
  std::optional<int64_t> heads;       // overrides config when set
  std::optional<uint64_t> seed;       // overrides config when set
  bool progress = false;              // echo validation lines to stdout
};

/// Assemble the run configuration (defaults ← config file ← flags), load the
/// dataset + vocabularies, and run the trainer. The vocabulary files are
/// copied next to the checkpoints so decoding commands can work from a
/// checkpoint path alone.
inline TrainResult cmd_train(const TrainCliOptions& o, std::ostream& log) {
  RunConfig rc = o.config_file.empty() ? default_run_config()
                                       : load_run_config(o.config_file);
  if (!o.mode.empty()) rc.model.mode = mode_from_name(o.mode);
  if (o.heads) rc.model.heads = *o.heads;
  if (o.seed) {
    rc.model.seed = *o.seed;
    rc.trainer.seed = *o.seed;
  }
  if (!o.data_dir.empty()) rc.data_dir = o.data_dir;
  if (!o.out_dir.empty()) rc.out_dir = o.out_dir;
  if (rc.data_dir.empty())
    throw ConfigError("no dataset directory: pass --data or set data_dir");
  if (rc.out_dir.empty())
    throw ConfigError("no output directory: pass --out or set out_dir");

  const DatasetSplit data = read_dataset(rc.data_dir);
  const VocabSet vocabs = load_vocab_set(rc.data_dir);
  rc.model.sbt_vocab = vocabs.sbt.size();
  rc.model.node_vocab = vocabs.nodes.size();
  rc.model.comment_vocab = vocabs.comment.size();
  rc.model.code_vocab = vocabs.code.size();
  rc.model.validate();

  rc.trainer.out_dir = rc.out_dir;
  rc.trainer.progress = o.progress;
  save_vocab_set(vocabs, rc.out_dir);

  const TrainResult result = train(rc.model, data, vocabs, rc.trainer);

  log << "trained " << result.state.step << " steps over "
      << result.state.epoch + 1 << " epochs (mode "
      << mode_name(rc.model.mode) << ")\n";
  if (result.best_checkpoint.empty()) {
    log << "no validation improvement recorded; no best checkpoint\n";
  } else {
    log << "best checkpoint " << result.best_checkpoint.string()
        << " (val S-BLEU " << std::fixed << std::setprecision(4)
        << result.state.best_val_sbleu << ")\n";
  }
  if (result.stopped_early) log << "stopped early: patience exhausted\n";
  return result;
}

// ---------------------------------------------------------------------------
// evaluate / score
// ---------------------------------------------------------------------------

struct EvaluateCliOptions {
  std::filesystem::path checkpoint;
  std::string data_dir;
  std::filesystem::path predictions;  // default: next to the checkpoint
  int batch_size = kBatchSize;
  int max_len = 20;
};

/// Greedy-decode the test split with the checkpointed model, write the
/// predictions file, and print the four metrics ×100.
inline MetricReport cmd_evaluate(const EvaluateCliOptions& o,
                                 std::ostream& out) {
  const DatasetSplit data = read_dataset(o.data_dir);
  const VocabSet vocabs = load_vocab_set(o.data_dir);
  ModelParams params =
      load_checkpoint(o.checkpoint, std::nullopt, vocab_fingerprints(vocabs));
  const std::filesystem::path pred =
      o.predictions.empty() ? o.checkpoint.parent_path() / "predictions.txt"
                            : o.predictions;
  const MetricReport rep =
      evaluate(params, data.test, vocabs, pred, o.batch_size, o.max_len);
  print_report(rep, out);
  out << "predictions " << pred.string() << '\n';
  return rep;
}

struct ScoreCliOptions {
  std::filesystem::path predictions;
  std::filesystem::path references;
};

namespace detail {

/// One whitespace-tokenized line per sample; empty lines are empty samples.
inline std::vector<Tokens> read_token_lines(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  std::vector<Tokens> out;
  std::string line;
  while (std::getline(in, line)) {
    Tokens toks;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) toks.push_back(tok);
    out.push_back(std::move(toks));
  }
  return out;
}

}  // namespace detail

/// Score a predictions file against a references file (aligned line-for-line)
/// and print the four metrics ×100.
inline MetricReport cmd_score(const ScoreCliOptions& o, std::ostream& out) {
  const auto predictions = detail::read_token_lines(o.predictions);
  const auto references = detail::read_token_lines(o.references);
  if (predictions.size() != references.size())
    throw EvalError("line count mismatch: " +
                    std::to_string(predictions.size()) + " predictions vs " +
                    std::to_string(references.size()) + " references");
  const MetricReport rep = evaluate_pairs(predictions, references);
  print_report(rep, out);
  return rep;
}

// ---------------------------------------------------------------------------
// summarize / inspect
// ---------------------------------------------------------------------------

struct SummarizeCliOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path sol;
  std::string method;
  std::filesystem::path vocab_dir;  // default: the checkpoint's directory
  int max_len = 20;
};

/// Greedy-decode a comment for one method of a source file.
inline std::vector<std::string> cmd_summarize(const SummarizeCliOptions& o,
                                              std::ostream& out) {
  const MethodRecord rec = detail::find_method(o.sol, o.method);
  const std::filesystem::path vdir =
      o.vocab_dir.empty() ? o.checkpoint.parent_path() : o.vocab_dir;
  const VocabSet vocabs = load_vocab_set(vdir);
  ModelParams params =
      load_checkpoint(o.checkpoint, std::nullopt, vocab_fingerprints(vocabs));

  const std::vector<PairSample> one{detail::channels_for(rec)};
  Batch batch = make_eval_batches(one, vocabs, 1).front();
  const auto rows = greedy_decode(params, batch, o.max_len);
  std::vector<std::string> words;
  for (int id : rows.front()) words.push_back(vocabs.comment.decode(id));
  out << detail::join_tokens(words) << '\n';
  return words;
}

struct InspectCliOptions {
  std::filesystem::path sol;
  std::string method;
  std::string show = "sbt";  // sbt | graph | code
};

/// Print one modality rendering of a method: the SBT token line, the graph
/// as a node list plus edge pairs, or the flat code-token line.
inline void cmd_inspect(const InspectCliOptions& o, std::ostream& out) {
  const MethodRecord rec = detail::find_method(o.sol, o.method);
  const PairSample s = detail::channels_for(rec);
  if (o.show == "sbt") {
    out << detail::join_tokens(s.sbt) << '\n';
  } else if (o.show == "graph") {
    out << "nodes " << s.nodes.size() << '\n';
    for (std::size_t i = 0; i < s.nodes.size(); ++i)
      out << "  " << i << ' ' << s.nodes[i] << '\n';
    out << "edges " << s.edges.size() << '\n';
    for (const auto& [p, c] : s.edges)
      out << "  (" << p << ", " << c << ")\n";
  } else if (o.show == "code") {
    out << detail::join_tokens(s.code_tokens) << '\n';
  } else {
    throw ConfigError("unknown --show value '" + o.show +
                      "' (expected sbt, graph, or code)");
  }
}

}  // namespace mmtrans

#endif  // MMTRANS_PIPELINE_HPP_
