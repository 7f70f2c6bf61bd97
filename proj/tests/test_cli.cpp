#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "mmtrans/pipeline.hpp"

using namespace mmtrans;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("cli_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const fs::path kToyDir{MMTRANS_TOY_CORPUS};

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& file, const std::string& text) {
  std::ofstream out(file);
  REQUIRE(out);
  out << text;
}

/// Build the toy dataset once; most cases below reuse it read-only.
const fs::path& toy_dataset() {
  static const fs::path dir = [] {
    fs::path d = fresh_dir("shared_ds");
    BuildCorpusOptions o;
    o.src = kToyDir;
    o.out = d;
    o.seed = 3;
    std::ostringstream sink;
    cmd_build_corpus(o, sink);
    return d;
  }();
  return dir;
}

/// Train a small model on the toy dataset once; reused by evaluate/summarize.
const fs::path& toy_run() {
  static const fs::path dir = [] {
    fs::path d = fresh_dir("shared_run");
    fs::path cfg = d / "run.cfg";
    spit(cfg,
         "d_model = 32\nd_ff = 64\nheads = 2\ndropout = 0\nseed = 11\n"
         "max_steps = 6\nvalidate_every = 3\nwarmup_steps = 20\n"
         "batch_size = 8\n");
    TrainCliOptions o;
    o.config_file = cfg;
    o.data_dir = toy_dataset().string();
    o.out_dir = (d / "out").string();
    std::ostringstream sink;
    cmd_train(o, sink);
    return d / "out";
  }();
  return dir;
}

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr interleaved
};

/// Run the real binary with `args`, optionally under an env-var prefix.
CliResult run_cli(const std::string& args, const std::string& env = "") {
  std::string cmd;
  if (!env.empty()) cmd += "env " + env + " ";
  cmd += std::string(MMTRANS_CLI_BIN) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult r;
  char buf[4096];
  for (;;) {
    const std::size_t n = fread(buf, 1, sizeof buf, pipe);
    if (n == 0) break;
    r.output.append(buf, n);
  }
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

}  // namespace

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

TEST_CASE("run config parses documented keys with flat key = value lines") {
  std::istringstream in(
      "# comment line\n"
      "mode = i-mmtrans\n"
      "d_model = 128   # trailing comment\n"
      "d_ff = 256\n"
      "heads = 8\n"
      "layers = 2\n"
      "hop = 3\n"
      "dropout = 0.2\n"
      "gcn_normalize = true\n"
      "seed = 42\n"
      "\n"
      "max_epochs = 7\n"
      "batch_size = 16\n"
      "validate_every = 250\n"
      "patience = 3\n"
      "warmup_steps = 100\n"
      "greedy_max_len = 12\n"
      "adam_beta1 = 0.85\n"
      "adam_beta2 = 0.95\n"
      "adam_epsilon = 1e-8\n"
      "stop_at_val = 0.9\n"
      "max_steps = 500\n"
      "data_dir = /some/data\n"
      "out_dir = /some/out\n");
  RunConfig rc = parse_run_config(in);
  CHECK(rc.model.mode == Mode::IMMTrans);
  CHECK(rc.model.d == 128);
  CHECK(rc.model.d_model == 128);
  CHECK(rc.model.d_ff == 256);
  CHECK(rc.model.heads == 8);
  CHECK(rc.model.layers == 2);
  CHECK(rc.model.hop == 3);
  CHECK(rc.model.dropout == 0.2);
  CHECK(rc.model.gcn_normalize);
  CHECK(rc.model.seed == 42);
  CHECK(rc.trainer.seed == 42);
  CHECK(rc.trainer.max_epochs == 7);
  CHECK(rc.trainer.batch_size == 16);
  CHECK(rc.trainer.validate_every == 250);
  CHECK(rc.trainer.patience == 3);
  CHECK(rc.trainer.warmup_steps == 100);
  CHECK(rc.trainer.greedy_max_len == 12);
  CHECK(rc.trainer.adam_beta1 == 0.85);
  CHECK(rc.trainer.adam_beta2 == 0.95);
  CHECK(rc.trainer.adam_epsilon == 1e-8);
  CHECK(rc.trainer.stop_at_val == 0.9);
  CHECK(rc.trainer.max_steps == 500);
  CHECK(rc.data_dir == "/some/data");
  CHECK(rc.out_dir == "/some/out");
}

TEST_CASE("run config defaults match the documented values") {
  std::istringstream in("");
  RunConfig rc = parse_run_config(in);
  CHECK(rc.model.mode == Mode::MMTrans);
  CHECK(rc.model.d_model == 256);
  CHECK(rc.model.d_ff == 512);
  CHECK(rc.model.heads == 4);
  CHECK(rc.model.layers == 1);
  CHECK(rc.model.hop == 2);
  CHECK(rc.model.dropout == 0.1);
  CHECK_FALSE(rc.model.gcn_normalize);
  CHECK(rc.trainer.max_epochs == 50);
  CHECK(rc.trainer.batch_size == 100);
  CHECK(rc.trainer.validate_every == 500);
  CHECK(rc.trainer.patience == 5);
  CHECK(rc.trainer.warmup_steps == 4000);
  CHECK(rc.trainer.greedy_max_len == 20);
  CHECK(rc.data_dir.empty());
  CHECK(rc.out_dir.empty());
}

TEST_CASE("run config rejects unknown keys and malformed lines") {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_run_config(in);
  };
  CHECK_THROWS_AS(parse("d_modle = 256\n"), ConfigError);
  CHECK_THROWS_MATCHES(parse("banana = 1\n"), ConfigError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("banana")));
  CHECK_THROWS_AS(parse("just a sentence\n"), ConfigError);
  CHECK_THROWS_AS(parse("= 4\n"), ConfigError);
  CHECK_THROWS_AS(parse("heads =\n"), ConfigError);
  CHECK_THROWS_AS(parse("heads = four\n"), ConfigError);
  CHECK_THROWS_AS(parse("heads = 4x\n"), ConfigError);
  CHECK_THROWS_AS(parse("dropout = high\n"), ConfigError);
  CHECK_THROWS_AS(parse("gcn_normalize = maybe\n"), ConfigError);
  CHECK_THROWS_AS(parse("seed = -3\n"), ConfigError);
  CHECK_THROWS_AS(parse("mode = transformer\n"), ConfigError);
}

TEST_CASE("seed default falls back to MMTRANS_SEED, then zero") {
  unsetenv("MMTRANS_SEED");
  CHECK(default_seed() == 0);

  setenv("MMTRANS_SEED", "12345", 1);
  CHECK(default_seed() == 12345);
  {
    std::istringstream in("");
    CHECK(parse_run_config(in).trainer.seed == 12345);
  }
  {
    std::istringstream in("seed = 7\n");  // config key wins over env
    CHECK(parse_run_config(in).trainer.seed == 7);
  }

  setenv("MMTRANS_SEED", "not-a-number", 1);
  CHECK_THROWS_AS(default_seed(), ConfigError);
  unsetenv("MMTRANS_SEED");
}

// ---------------------------------------------------------------------------
// build-corpus
// ---------------------------------------------------------------------------

TEST_CASE("build-corpus harvests the bundled corpus with drop accounting") {
  fs::path out = fresh_dir("build");
  BuildCorpusOptions o;
  o.src = kToyDir;
  o.out = out;
  o.seed = 3;
  std::ostringstream log;
  BuildCorpusReport rep = cmd_build_corpus(o, log);

  CHECK(rep.files == 12);
  CHECK(rep.kept == 30);
  CHECK(rep.methods ==
        rep.kept + rep.drops.at("kind-filtered") + rep.drops.at("no-comment") +
            rep.drops.at("comment-too-short") +
            rep.drops.at("comment-too-long"));
  // The corpus plants one deliberate drop of each comment-length kind.
  CHECK(rep.drops.at("comment-too-short") == 1);
  CHECK(rep.drops.at("comment-too-long") == 1);
  // Constructors, fallback, and receive methods exist across the contracts.
  CHECK(rep.drops.at("kind-filtered") >= 12);
  CHECK(rep.drops.at("no-comment") >= 1);
  CHECK(rep.train + rep.valid + rep.test <= 30u);
  CHECK(rep.train >= 24u);

  const std::string text = log.str();
  for (const char* needle :
       {"kept 30 pairs", "kind-filtered", "no-comment", "comment-too-short",
        "comment-too-long", "split: train"})
    CHECK(contains(text, needle));

  // The written dataset reads back and the vocabularies exist.
  DatasetSplit split = read_dataset(out);
  CHECK(split.train.size() == rep.train);
  CHECK(split.seed == 3);
  VocabSet vocabs = load_vocab_set(out);
  CHECK(vocabs.comment.size() > kReservedIds);
  CHECK(vocabs.sbt.size() > kReservedIds);
}

TEST_CASE("build-corpus is byte-identical across same-seed reruns") {
  fs::path a = fresh_dir("bytes_a");
  fs::path b = fresh_dir("bytes_b");
  std::ostringstream sink;
  for (const fs::path& out : {a, b}) {
    BuildCorpusOptions o;
    o.src = kToyDir;
    o.out = out;
    o.seed = 17;
    cmd_build_corpus(o, sink);
  }
  for (const char* name :
       {"train.jsonl", "valid.jsonl", "test.jsonl", "meta.json", "sbt.vocab",
        "nodes.vocab", "comment.vocab", "code.vocab", "vocab.meta"}) {
    INFO(name);
    CHECK(slurp(a / name) == slurp(b / name));
  }
}

TEST_CASE("build-corpus different seeds shuffle the split differently") {
  fs::path a = fresh_dir("seed_a");
  fs::path b = fresh_dir("seed_b");
  std::ostringstream sink;
  BuildCorpusOptions oa, ob;
  oa.src = ob.src = kToyDir;
  oa.out = a;
  ob.out = b;
  oa.seed = 1;
  ob.seed = 2;
  cmd_build_corpus(oa, sink);
  cmd_build_corpus(ob, sink);
  CHECK(slurp(a / "train.jsonl") != slurp(b / "train.jsonl"));
}

TEST_CASE("build-corpus rejects unusable sources") {
  fs::path empty = fresh_dir("no_sol");
  spit(empty / "README.txt", "nothing solar here\n");
  BuildCorpusOptions o;
  o.src = empty;
  o.out = fresh_dir("no_sol_out");
  std::ostringstream sink;
  CHECK_THROWS_AS(cmd_build_corpus(o, sink), EmptyCorpus);

  // Sources exist but every method is filtered out.
  fs::path bare = fresh_dir("bare_sol");
  spit(bare / "Bare.sol",
       "pragma solidity ^0.5.0;\n"
       "contract Bare {\n"
       "    function undocumented() public {}\n"
       "}\n");
  o.src = bare;
  CHECK_THROWS_AS(cmd_build_corpus(o, sink), EmptyCorpus);

  o.src = fresh_dir("gone") / "missing";
  CHECK_THROWS_AS(cmd_build_corpus(o, sink), IoError);
}

TEST_CASE("build-corpus tightened caps truncate channels and drop comments") {
  fs::path out = fresh_dir("caps");
  BuildCorpusOptions o;
  o.src = kToyDir;
  o.out = out;
  o.seed = 3;
  o.max_sbt = 80;
  o.max_nodes = 30;
  o.max_comment = 8;
  std::ostringstream sink;
  BuildCorpusReport rep = cmd_build_corpus(o, sink);

  CHECK(rep.kept < 30);  // nine-token-plus comments now fall out
  CHECK(rep.drops.at("comment-too-long") > 1);

  DatasetSplit split = read_dataset(out);
  for (const auto* part : {&split.train, &split.validation, &split.test}) {
    for (const PairSample& s : *part) {
      CHECK(s.sbt.size() <= 80u);
      CHECK(s.nodes.size() <= 30u);
      CHECK(s.comment_tokens.size() <= 8u);
      for (auto [p, c] : s.edges) {
        CHECK(p < 30);
        CHECK(c < 30);
      }
    }
  }
  const std::string meta = slurp(out / "meta.json");
  CHECK(contains(meta, "\"sbt\": 80"));
  CHECK(contains(meta, "\"nodes\": 30"));
  CHECK(contains(meta, "\"comment\": 8"));
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

TEST_CASE("train command wires config, dataset, and artifacts together") {
  const fs::path& run = toy_run();
  CHECK(fs::exists(run / "best.ckpt"));
  CHECK(fs::exists(run / "resume.bin"));
  CHECK(fs::exists(run / "metrics.log"));
  // Vocabulary files travel with the checkpoints for later decoding.
  for (const char* v :
       {"sbt.vocab", "nodes.vocab", "comment.vocab", "code.vocab"})
    CHECK(slurp(run / v) == slurp(toy_dataset() / v));

  const CheckpointHeader header = read_checkpoint_header(run / "best.ckpt");
  CHECK(header.config.d_model == 32);
  CHECK(header.config.heads == 2);
  CHECK(header.config.mode == Mode::MMTrans);
}

TEST_CASE("train command rejects bad head counts and missing directories") {
  TrainCliOptions o;
  o.data_dir = toy_dataset().string();
  o.out_dir = fresh_dir("reject_run").string();
  o.heads = 3;  // does not divide the default d_model = 256
  std::ostringstream sink;
  CHECK_THROWS_MATCHES(cmd_train(o, sink), ConfigError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("divisible")));

  TrainCliOptions no_data;
  no_data.out_dir = o.out_dir;
  CHECK_THROWS_MATCHES(cmd_train(no_data, sink), ConfigError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("--data")));

  TrainCliOptions no_out;
  no_out.data_dir = toy_dataset().string();
  CHECK_THROWS_MATCHES(cmd_train(no_out, sink), ConfigError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("--out")));
}

TEST_CASE("train flags override config file values") {
  fs::path dir = fresh_dir("override");
  fs::path cfg = dir / "run.cfg";
  // max_steps = 4 is exactly one epoch at batch size 8 over 27 samples, so
  // the epoch-end validation writes best.ckpt before the step cap stops.
  spit(cfg,
       "d_model = 32\nd_ff = 64\nheads = 2\ndropout = 0\nseed = 11\n"
       "max_steps = 4\nvalidate_every = 100\nwarmup_steps = 20\n"
       "batch_size = 8\nmode = mmtrans\n");
  TrainCliOptions o;
  o.config_file = cfg;
  o.data_dir = toy_dataset().string();
  o.out_dir = (dir / "out").string();
  o.mode = "code-only";  // flag wins over the file's mmtrans
  o.heads = 4;
  o.seed = 99;
  std::ostringstream sink;
  cmd_train(o, sink);
  const CheckpointHeader header =
      read_checkpoint_header(dir / "out" / "best.ckpt");
  CHECK(header.config.mode == Mode::CodeOnly);
  CHECK(header.config.heads == 4);
  CHECK(header.config.seed == 99);
}

// ---------------------------------------------------------------------------
// evaluate / score
// ---------------------------------------------------------------------------

TEST_CASE("evaluate writes aligned predictions and score reproduces it") {
  const fs::path& run = toy_run();
  EvaluateCliOptions eo;
  eo.checkpoint = run / "best.ckpt";
  eo.data_dir = toy_dataset().string();
  eo.predictions = run / "predictions.txt";
  std::ostringstream eval_out;
  const MetricReport from_eval = cmd_evaluate(eo, eval_out);

  DatasetSplit split = read_dataset(toy_dataset());
  const std::string pred_text = slurp(run / "predictions.txt");
  const auto lines = static_cast<std::size_t>(
      std::count(pred_text.begin(), pred_text.end(), '\n'));
  CHECK(lines == split.test.size());

  // score ∘ evaluate over the predictions file reproduces the report exactly.
  fs::path refs = run / "references.txt";
  {
    std::ofstream out(refs);
    for (const PairSample& s : split.test) {
      for (std::size_t i = 0; i < s.comment_tokens.size(); ++i) {
        if (i > 0) out << ' ';
        out << s.comment_tokens[i];
      }
      out << '\n';
    }
  }
  ScoreCliOptions so;
  so.predictions = run / "predictions.txt";
  so.references = refs;
  std::ostringstream score_out;
  const MetricReport from_score = cmd_score(so, score_out);
  CHECK(from_score.s_bleu == from_eval.s_bleu);
  CHECK(from_score.c_bleu == from_eval.c_bleu);
  CHECK(from_score.rouge_lcs_f1 == from_eval.rouge_lcs_f1);
  CHECK(from_score.meteor == from_eval.meteor);

  // ... and the printed ×100 tables agree line for line.
  std::string eval_table = eval_out.str();
  eval_table.resize(eval_table.find("predictions "));  // drop the path line
  CHECK(eval_table == score_out.str());
}

TEST_CASE("score of a file against itself maxes out the metrics") {
  fs::path dir = fresh_dir("identity");
  fs::path f = dir / "lines.txt";
  spit(f,
       "transfers tokens to the recipient\n"
       "returns the stored balance\n");
  ScoreCliOptions o;
  o.predictions = f;
  o.references = f;
  std::ostringstream out;
  const MetricReport rep = cmd_score(o, out);
  CHECK(rep.s_bleu == 1.0);
  CHECK(rep.c_bleu == 1.0);
  CHECK(rep.rouge_lcs_f1 == 1.0);
  // METEOR's fragmentation penalty (one chunk of m matches costs 0.5/m³)
  // keeps even identical strings a hair under 1: the two lines score
  // 1 − 0.5/5³ and 1 − 0.5/4³.
  CHECK(rep.meteor == ((1.0 - 0.5 / 125.0) + (1.0 - 0.5 / 64.0)) / 2.0);
  const std::string table = out.str();
  CHECK(contains(table, "S-BLEU      100.00"));
  CHECK(contains(table, "C-BLEU      100.00"));
  CHECK(contains(table, "ROUGE-LCS   100.00"));
  CHECK(contains(table, "METEOR       99.41"));
}

TEST_CASE("score rejects misaligned prediction and reference files") {
  fs::path dir = fresh_dir("misaligned");
  spit(dir / "two.txt", "a b c\nd e f\n");
  spit(dir / "three.txt", "a b c\nd e f\ng h i\n");
  ScoreCliOptions o;
  o.predictions = dir / "two.txt";
  o.references = dir / "three.txt";
  std::ostringstream out;
  CHECK_THROWS_MATCHES(
      cmd_score(o, out), EvalError,
      Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring(
          "line count mismatch: 2 predictions vs 3 references")));

  o.references = dir / "nowhere.txt";
  CHECK_THROWS_AS(cmd_score(o, out), IoError);
}

TEST_CASE("evaluate refuses a checkpoint from different vocabularies") {
  const fs::path& run = toy_run();
  // Rebuild the dataset with a tightened comment cap: the comment
  // vocabulary changes, so its fingerprint no longer matches.
  fs::path other = fresh_dir("other_ds");
  BuildCorpusOptions bo;
  bo.src = kToyDir;
  bo.out = other;
  bo.seed = 3;
  bo.max_comment = 8;
  std::ostringstream sink;
  cmd_build_corpus(bo, sink);

  EvaluateCliOptions eo;
  eo.checkpoint = run / "best.ckpt";
  eo.data_dir = other.string();
  std::ostringstream out;
  CHECK_THROWS_AS(cmd_evaluate(eo, out), DataModelMismatch);
}

// ---------------------------------------------------------------------------
// summarize / inspect
// ---------------------------------------------------------------------------

TEST_CASE("summarize decodes a bounded comment for any known method") {
  const fs::path& run = toy_run();
  SummarizeCliOptions o;
  o.checkpoint = run / "best.ckpt";
  o.sol = kToyDir / "LatiumSeller.sol";
  o.method = "buy";
  std::ostringstream out;
  const auto words = cmd_summarize(o, out);
  CHECK(words.size() <= 20u);
  CHECK(contains(out.str(), "\n"));

  // Works for an undocumented method too: summarization needs no doc.
  o.method = "_tokensToSell";
  std::ostringstream out2;
  CHECK(cmd_summarize(o, out2).size() <= 20u);

  o.method = "fromOuterSpace";
  std::ostringstream out3;
  CHECK_THROWS_AS(cmd_summarize(o, out3), LookupError);
}

TEST_CASE("inspect renders the three modality views") {
  InspectCliOptions o;
  o.sol = kToyDir / "LatiumSeller.sol";
  o.method = "_tokensToSell";

  o.show = "sbt";
  std::ostringstream sbt_out;
  cmd_inspect(o, sbt_out);
  const std::string sbt = sbt_out.str();
  CHECK(contains(sbt, "( FunctionDefinition"));
  CHECK(contains(sbt, "_tokens To Sell"));
  CHECK(contains(sbt, ") FunctionDefinition"));

  o.show = "graph";
  std::ostringstream graph_out;
  cmd_inspect(o, graph_out);
  const std::string graph = graph_out.str();
  CHECK(contains(graph, "nodes 29"));
  CHECK(contains(graph, "edges 28"));
  CHECK(contains(graph, "0 FunctionDefinition"));
  CHECK(contains(graph, "(0, 1)"));

  o.show = "code";
  std::ostringstream code_out;
  cmd_inspect(o, code_out);
  const std::string code = code_out.str();
  CHECK(contains(code, "function _tokens To Sell private returns"));
  CHECK(contains(code, "balance Of"));

  o.show = "tokens";
  std::ostringstream bad_out;
  CHECK_THROWS_AS(cmd_inspect(o, bad_out), ConfigError);

  o.show = "sbt";
  o.method = "nosuch";
  std::ostringstream lookup_out;
  CHECK_THROWS_AS(cmd_inspect(o, lookup_out), LookupError);
}

// ---------------------------------------------------------------------------
// The real binary
// ---------------------------------------------------------------------------

TEST_CASE("binary: build-corpus prints counts and honors MMTRANS_SEED") {
  fs::path out = fresh_dir("bin_build");
  CliResult r = run_cli("build-corpus --src " + kToyDir.string() + " --out " +
                            (out / "ds").string(),
                        "MMTRANS_SEED=9");
  CHECK(r.exit_code == 0);
  CHECK(contains(r.output, "kept 30 pairs"));
  CHECK(contains(r.output, "kind-filtered"));
  CHECK(contains(r.output, "no-comment"));
  CHECK(contains(r.output, "comment-too-short"));
  CHECK(contains(r.output, "comment-too-long"));
  CHECK(contains(slurp(out / "ds" / "meta.json"), "\"seed\": 9"));

  // An explicit --seed flag wins over the environment.
  CliResult r2 = run_cli("build-corpus --src " + kToyDir.string() + " --out " +
                             (out / "ds2").string() + " --seed 4",
                         "MMTRANS_SEED=9");
  CHECK(r2.exit_code == 0);
  CHECK(contains(slurp(out / "ds2" / "meta.json"), "\"seed\": 4"));
}

TEST_CASE("binary: empty corpus exits 2 with a clear message") {
  fs::path empty = fresh_dir("bin_empty");
  CliResult r = run_cli("build-corpus --src " + empty.string() + " --out " +
                        (empty / "out").string());
  CHECK(r.exit_code == 2);
  CHECK(contains(r.output, "empty corpus"));
}

TEST_CASE("binary: unknown method exits 3, bad flags exit 2, help exits 0") {
  CliResult lookup = run_cli("inspect --sol " +
                             (kToyDir / "Vault.sol").string() +
                             " --method warp --show sbt");
  CHECK(lookup.exit_code == 3);
  CHECK(contains(lookup.output, "warp"));

  CliResult badflag = run_cli("inspect --sol x.sol --method f --show ast");
  CHECK(badflag.exit_code == 2);

  CliResult noargs = run_cli("");
  CHECK(noargs.exit_code == 2);

  CliResult help = run_cli("--help");
  CHECK(help.exit_code == 0);
  for (const char* sub : {"build-corpus", "train", "evaluate", "score",
                          "summarize", "inspect"})
    CHECK(contains(help.output, sub));
}

TEST_CASE("binary: inspect shows the traversal of the running example") {
  CliResult r = run_cli("inspect --sol " +
                        (kToyDir / "LatiumSeller.sol").string() +
                        " --method _tokensToSell --show sbt");
  CHECK(r.exit_code == 0);
  CHECK(contains(r.output, "( FunctionDefinition"));
  CHECK(contains(r.output, "_tokens To Sell"));
}

TEST_CASE("binary: train rejects a non-dividing head count via exit 2") {
  CliResult r = run_cli("train --data " + toy_dataset().string() + " --out " +
                        fresh_dir("bin_badheads").string() + " --heads 3");
  CHECK(r.exit_code == 2);
  CHECK(contains(r.output, "divisible"));
}

TEST_CASE("binary: train, evaluate, and score agree end to end") {
  fs::path dir = fresh_dir("bin_train");
  spit(dir / "run.cfg",
       "d_model = 32\nd_ff = 64\nheads = 2\ndropout = 0\nseed = 11\n"
       "max_steps = 6\nvalidate_every = 3\nwarmup_steps = 20\n"
       "batch_size = 8\n");
  CliResult tr = run_cli("train --config " + (dir / "run.cfg").string() +
                         " --data " + toy_dataset().string() + " --out " +
                         (dir / "out").string());
  CHECK(tr.exit_code == 0);
  CHECK(contains(tr.output, "best checkpoint"));

  CliResult ev = run_cli("evaluate --checkpoint " +
                         (dir / "out" / "best.ckpt").string() + " --data " +
                         toy_dataset().string());
  CHECK(ev.exit_code == 0);
  CHECK(contains(ev.output, "S-BLEU"));
  CHECK(contains(ev.output, "METEOR"));

  // Score the predictions evaluate just wrote; tables must agree.
  DatasetSplit split = read_dataset(toy_dataset());
  fs::path refs = dir / "refs.txt";
  {
    std::ofstream out(refs);
    for (const PairSample& s : split.test) {
      for (std::size_t i = 0; i < s.comment_tokens.size(); ++i) {
        if (i > 0) out << ' ';
        out << s.comment_tokens[i];
      }
      out << '\n';
    }
  }
  CliResult sc = run_cli("score --predictions " +
                         (dir / "out" / "predictions.txt").string() +
                         " --references " + refs.string());
  CHECK(sc.exit_code == 0);
  std::string ev_table = ev.output;
  ev_table.resize(ev_table.find("predictions "));
  CHECK(ev_table == sc.output);

  // Summarize runs off the checkpoint directory's vocab copies.
  CliResult su = run_cli("summarize --checkpoint " +
                         (dir / "out" / "best.ckpt").string() + " --sol " +
                         (kToyDir / "Escrow.sol").string() +
                         " --method release");
  CHECK(su.exit_code == 0);
  CHECK_FALSE(su.output.empty());
}

TEST_CASE("binary: same-seed training runs are deterministic") {
  fs::path dir = fresh_dir("bin_det");
  spit(dir / "run.cfg",
       "d_model = 32\nd_ff = 64\nheads = 2\ndropout = 0\nseed = 21\n"
       "max_steps = 4\nvalidate_every = 2\nwarmup_steps = 20\n"
       "batch_size = 8\n");
  auto train_once = [&](const std::string& tag) {
    CliResult r = run_cli("train --config " + (dir / "run.cfg").string() +
                          " --data " + toy_dataset().string() + " --out " +
                          (dir / tag).string());
    REQUIRE(r.exit_code == 0);
    return slurp(dir / tag / "metrics.log");
  };
  CHECK(train_once("a") == train_once("b"));
}
