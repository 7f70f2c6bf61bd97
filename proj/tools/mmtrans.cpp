// Command-line front end: flag parsing and exit-code mapping around the
// pipeline functions. Exit codes: 0 ok, 1 internal error, 2 input/corpus
// error, 3 lookup error.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mmtrans/pipeline.hpp"

int main(int argc, char** argv) {
  using namespace mmtrans;

  CLI::App app{"multi-modal code summarization for Solidity smart contracts"};
  app.require_subcommand(1);

  // ---- build-corpus ----
  BuildCorpusOptions bo;
  std::string b_src;
  std::string b_out;
  CLI::App* build = app.add_subcommand(
      "build-corpus", "harvest .sol files into a train/valid/test dataset");
  build->add_option("--src", b_src, "directory holding .sol sources")
      ->required();
  build->add_option("--out", b_out, "dataset output directory")->required();
  CLI::Option* b_seed = build->add_option(
      "--seed", bo.seed, "split shuffle seed (default: MMTRANS_SEED or 0)");
  build->add_option("--max-sbt", bo.max_sbt, "SBT token ceiling")
      ->capture_default_str();
  build->add_option("--max-nodes", bo.max_nodes, "graph node ceiling")
      ->capture_default_str();
  build->add_option("--max-comment", bo.max_comment, "comment token ceiling")
      ->capture_default_str();

  // ---- train ----
  TrainCliOptions to;
  std::string t_config;
  std::int64_t t_heads = 0;
  std::uint64_t t_seed = 0;
  CLI::App* train_cmd =
      app.add_subcommand("train", "train a model on a built dataset");
  train_cmd->add_option("--config", t_config, "key = value run config file");
  train_cmd->add_option("--data", to.data_dir, "dataset directory");
  train_cmd->add_option("--out", to.out_dir, "checkpoint/log directory");
  train_cmd->add_option("--mode", to.mode,
                        "mmtrans | i-mmtrans | code-only (default mmtrans)");
  CLI::Option* t_heads_opt =
      train_cmd->add_option("--heads", t_heads, "attention head count J");
  CLI::Option* t_seed_opt = train_cmd->add_option(
      "--seed", t_seed, "run seed (default: config, MMTRANS_SEED, or 0)");
  train_cmd->add_flag("--progress", to.progress,
                      "echo validation lines while training");

  // ---- evaluate ----
  EvaluateCliOptions eo;
  CLI::App* eval_cmd = app.add_subcommand(
      "evaluate", "decode the test split and report the four metrics");
  eval_cmd->add_option("--checkpoint", eo.checkpoint, "model checkpoint file")
      ->required();
  eval_cmd->add_option("--data", eo.data_dir, "dataset directory")->required();
  eval_cmd->add_option("--predictions", eo.predictions,
                       "predictions output file (default: next to checkpoint)");

  // ---- score ----
  ScoreCliOptions so;
  CLI::App* score_cmd = app.add_subcommand(
      "score", "score a predictions file against a references file");
  score_cmd->add_option("--predictions", so.predictions, "one summary per line")
      ->required();
  score_cmd->add_option("--references", so.references, "one reference per line")
      ->required();

  // ---- summarize ----
  SummarizeCliOptions mo;
  CLI::App* sum_cmd = app.add_subcommand(
      "summarize", "greedy-decode a comment for one method");
  sum_cmd->add_option("--checkpoint", mo.checkpoint, "model checkpoint file")
      ->required();
  sum_cmd->add_option("--sol", mo.sol, "Solidity source file")->required();
  sum_cmd->add_option("--method", mo.method, "method or modifier name")
      ->required();
  sum_cmd->add_option("--vocab", mo.vocab_dir,
                      "vocabulary directory (default: checkpoint directory)");

  // ---- inspect ----
  InspectCliOptions io;
  CLI::App* inspect_cmd = app.add_subcommand(
      "inspect", "print a modality rendering of one method");
  inspect_cmd->add_option("--sol", io.sol, "Solidity source file")->required();
  inspect_cmd->add_option("--method", io.method, "method or modifier name")
      ->required();
  inspect_cmd
      ->add_option("--show", io.show, "sbt | graph | code (default sbt)")
      ->check(CLI::IsMember({"sbt", "graph", "code"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  if (app.got_subcommand(build)) {
    return run_command(
        [&] {
          if (b_seed->count() == 0) bo.seed = default_seed();
          bo.src = b_src;
          bo.out = b_out;
          cmd_build_corpus(bo, std::cout);
        },
        std::cerr);
  }
  if (app.got_subcommand(train_cmd)) {
    return run_command(
        [&] {
          to.config_file = t_config;
          if (t_heads_opt->count() > 0) to.heads = t_heads;
          if (t_seed_opt->count() > 0) to.seed = t_seed;
          cmd_train(to, std::cout);
        },
        std::cerr);
  }
  if (app.got_subcommand(eval_cmd)) {
    return run_command([&] { cmd_evaluate(eo, std::cout); }, std::cerr);
  }
  if (app.got_subcommand(score_cmd)) {
    return run_command([&] { cmd_score(so, std::cout); }, std::cerr);
  }
  if (app.got_subcommand(sum_cmd)) {
    return run_command([&] { cmd_summarize(mo, std::cout); }, std::cerr);
  }
  if (app.got_subcommand(inspect_cmd)) {
    return run_command([&] { cmd_inspect(io, std::cout); }, std::cerr);
  }
  return kExitInternal;  // unreachable: a subcommand is required
}
