#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmtrans/trainer.hpp"

using namespace mmtrans;
namespace fs = std::filesystem;

namespace {

PairSample toy_sample(std::vector<std::string> nodes,
                      std::vector<std::pair<int, int>> edges,
                      std::vector<std::string> sbt,
                      std::vector<std::string> code,
                      std::vector<std::string> comment) {
  PairSample s;
  s.nodes = std::move(nodes);
  s.edges = std::move(edges);
  s.sbt = std::move(sbt);
  s.code_tokens = std::move(code);
  s.comment_tokens = std::move(comment);
  return s;
}

/// Twelve-sample corpus: three base methods, each in four shallow variants
/// so the model has something to memorize and vocabularies have variety.
std::vector<PairSample> toy_corpus() {
  std::vector<PairSample> base;
  base.push_back(toy_sample(
      {"FunctionDefinition", "SimpleName", "transfer", "Block"},
      {{0, 1}, {1, 2}, {0, 3}},
      {"<START>", "(", "FunctionDefinition", "(", "SimpleName", "transfer",
       ")", "SimpleName", ")", "FunctionDefinition", "<END>"},
      {"<START>", "function", "transfer", "(", ")", "{", "}", "<END>"},
      {"transfers", "tokens", "to", "recipient"}));
  base.push_back(toy_sample(
      {"FunctionDefinition", "SimpleName", "mint", "Visibility", "Block"},
      {{0, 1}, {1, 2}, {0, 3}, {0, 4}},
      {"<START>", "(", "FunctionDefinition", "(", "SimpleName", "mint", ")",
       "SimpleName", "(", "Visibility", "public", ")", "Visibility", ")",
       "FunctionDefinition", "<END>"},
      {"<START>", "function", "mint", "(", ")", "public", "{", "}", "<END>"},
      {"mints", "fresh", "tokens", "for", "owner"}));
  base.push_back(toy_sample(
      {"ModifierDefinition", "SimpleName", "only", "Block"},
      {{0, 1}, {1, 2}, {0, 3}},
      {"<START>", "(", "ModifierDefinition", "(", "SimpleName", "only", ")",
       "SimpleName", ")", "ModifierDefinition", "<END>"},
      {"<START>", "modifier", "only", "{", "}", "<END>"},
      {"restricts", "calls", "to", "owner"}));

  std::vector<PairSample> out;
  const std::vector<std::string> variants = {"alpha", "beta", "gamma", "delta"};
  for (const auto& tag : variants) {
    for (PairSample s : base) {
      // Vary one identifier-like token per copy so samples are distinct.
      s.nodes.push_back(tag);
      s.edges.push_back({0, static_cast<int>(s.nodes.size()) - 1});
      s.sbt.insert(s.sbt.end() - 1, {"(", tag, ")", tag});
      s.code_tokens.insert(s.code_tokens.end() - 1, tag);
      s.comment_tokens.push_back(tag);
      s.method_name = tag;
      out.push_back(std::move(s));
    }
  }
  return out;
}

DatasetSplit toy_dataset() {
  DatasetSplit d;
  d.train = toy_corpus();
  d.validation = d.train;  // overfit harness: validation = training
  d.test = d.train;
  return d;
}

ModelConfig tiny_config(const VocabSet& vs, int64_t width = 16) {
  ModelConfig c;
  c.d = c.d_model = width;
  c.d_ff = 2 * width;
  c.heads = 2;
  c.layers = 1;
  c.hop = 2;
  c.comment_vocab = vs.comment.size();
  c.sbt_vocab = vs.sbt.size();
  c.node_vocab = vs.nodes.size();
  c.code_vocab = vs.code.size();
  c.mode = Mode::MMTrans;
  c.dropout = 0.0;
  c.seed = 5;
  return c;
}

TrainOptions tiny_options(const fs::path& out_dir) {
  TrainOptions opt;
  opt.max_epochs = 50;
  opt.batch_size = 4;
  opt.validate_every = 1000;  // epoch-end validations only, unless lowered
  opt.patience = 5;
  opt.warmup_steps = 20;
  opt.seed = 17;
  opt.out_dir = out_dir;
  return opt;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<nlohmann::json> read_log(const fs::path& file) {
  std::ifstream in(file);
  REQUIRE(in.good());
  std::vector<nlohmann::json> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(nlohmann::json::parse(line));
  return lines;
}

}  // namespace

TEST_CASE("learning-rate schedule follows the warmup/decay closed form") {
  SECTION("closed form at steps 1, warmup, and 10x warmup") {
    const int d = 256;
    const int64_t w = 4000;
    CHECK_THAT(lr_schedule(1, d, w),
               Catch::Matchers::WithinAbs(
                   std::pow(256.0, -0.5) * std::pow(4000.0, -1.5), 1e-12));
    CHECK_THAT(lr_schedule(w, d, w),
               Catch::Matchers::WithinAbs(
                   std::pow(256.0, -0.5) * std::pow(4000.0, -0.5), 1e-12));
    CHECK_THAT(lr_schedule(10 * w, d, w),
               Catch::Matchers::WithinAbs(
                   std::pow(256.0, -0.5) * std::pow(40000.0, -0.5), 1e-12));
  }

  SECTION("the first step of the paper profile is about 2.47e-7") {
    CHECK_THAT(lr_schedule(1, 256, 4000),
               Catch::Matchers::WithinRel(2.4705294220065465e-7, 1e-9));
  }

  SECTION("both min branches agree exactly at the warmup crossover") {
    const double at_warmup = lr_schedule(4000, 256, 4000);
    const double linear_branch = std::pow(256.0, -0.5) * 4000.0 * std::pow(4000.0, -1.5);
    const double decay_branch = std::pow(256.0, -0.5) * std::pow(4000.0, -0.5);
    CHECK_THAT(linear_branch, Catch::Matchers::WithinAbs(decay_branch, 1e-18));
    CHECK(at_warmup == std::min(linear_branch, decay_branch));
  }

  SECTION("non-decreasing up to warmup, non-increasing after") {
    for (int64_t s = 1; s < 200; ++s)
      CHECK(lr_schedule(s, 64, 200) <= lr_schedule(s + 1, 64, 200));
    for (int64_t s = 200; s < 400; ++s)
      CHECK(lr_schedule(s, 64, 200) >= lr_schedule(s + 1, 64, 200));
  }

  SECTION("invalid arguments throw") {
    CHECK_THROWS_AS(lr_schedule(0, 256, 4000), ConfigError);
    CHECK_THROWS_AS(lr_schedule(1, 0, 4000), ConfigError);
    CHECK_THROWS_AS(lr_schedule(1, 256, 0), ConfigError);
  }
}

TEST_CASE("Adam updates match the hand-evaluated recurrences") {
  SECTION("zero gradients leave parameters exactly unchanged") {
    Parameter p("p", Tensor::zeros({2, 3}));
    for (int i = 0; i < 6; ++i) p.value[static_cast<std::size_t>(i)] = 0.5 * i;
    const Tensor before = p.value;
    std::vector<Parameter*> params = {&p};
    OptimizerState state(params);
    adam_step(params, state, 0.01);
    for (int i = 0; i < 6; ++i)
      CHECK(p.value[static_cast<std::size_t>(i)] ==
            before[static_cast<std::size_t>(i)]);
    CHECK(state.t == 1);
  }

  SECTION("one step on a scalar moves by about -rate") {
    Parameter p("p", Tensor::zeros({1}));
    p.grad[0] = 1.0;
    std::vector<Parameter*> params = {&p};
    OptimizerState state(params);
    adam_step(params, state, 0.001);
    // m=0.1, v=0.02; bias-corrected both become 1; update = rate/(1+eps).
    CHECK_THAT(p.value[0], Catch::Matchers::WithinRel(-0.001, 1e-6));
    CHECK_THAT(state.m[0][0], Catch::Matchers::WithinAbs(0.1, 1e-15));
    CHECK_THAT(state.v[0][0], Catch::Matchers::WithinAbs(0.02, 1e-15));
  }

  SECTION("two-step hand recurrence") {
    Parameter p("p", Tensor::zeros({1}));
    std::vector<Parameter*> params = {&p};
    OptimizerState state(params);
    const double rate = 0.1;
    p.grad[0] = 1.0;
    adam_step(params, state, rate);
    const double p1 = p.value[0];
    p.grad[0] = -2.0;
    adam_step(params, state, rate);
    // Hand-evaluate: m2 = 0.9*0.1 + 0.1*(-2) = -0.11; v2 = 0.98*0.02 + 0.02*4
    //             = 0.0996; bc1 = 1-0.81 = 0.19; bc2 = 1-0.9604 = 0.0396.
    const double m_hat = -0.11 / 0.19;
    const double v_hat = 0.0996 / 0.0396;
    const double want = p1 - rate * m_hat / (std::sqrt(v_hat) + 1e-9);
    CHECK_THAT(p.value[0], Catch::Matchers::WithinAbs(want, 1e-15));
  }

  SECTION("identical runs are bitwise identical") {
    auto run = [] {
      Parameter p("p", Tensor::zeros({4}));
      std::vector<Parameter*> params = {&p};
      OptimizerState state(params);
      for (int s = 1; s <= 10; ++s) {
        for (int i = 0; i < 4; ++i)
          p.grad[static_cast<std::size_t>(i)] = 0.25 * i - 0.1 * s;
        adam_step(params, state, 0.01 / s);
      }
      return p.value;
    };
    const Tensor a = run();
    const Tensor b = run();
    for (int i = 0; i < 4; ++i)
      CHECK(a[static_cast<std::size_t>(i)] == b[static_cast<std::size_t>(i)]);
  }

  SECTION("moment bookkeeping mismatches throw") {
    Parameter p("p", Tensor::zeros({2}));
    Parameter q("q", Tensor::zeros({2}));
    std::vector<Parameter*> one = {&p};
    OptimizerState state(one);
    std::vector<Parameter*> two = {&p, &q};
    CHECK_THROWS_AS(adam_step(two, state, 0.01), ShapeError);
  }
}

TEST_CASE("early stopping fires after exactly five consecutive misses") {
  EarlyStopper stopper;
  CHECK(stopper.offer(0.50));
  CHECK(stopper.offer(0.60));
  // An equal score is non-improving.
  CHECK_FALSE(stopper.offer(0.60));
  CHECK(stopper.patience_left == 4);
  // Improvement resets patience in full.
  CHECK(stopper.offer(0.70));
  CHECK(stopper.patience_left == 5);
  // Five consecutive misses: exhausted exactly on the fifth.
  const double misses[5] = {0.69, 0.70, 0.10, 0.65, 0.60};
  for (int i = 0; i < 5; ++i) {
    CHECK_FALSE(stopper.exhausted());
    CHECK_FALSE(stopper.offer(misses[i]));
  }
  CHECK(stopper.exhausted());
  CHECK(stopper.patience_left == 0);
  CHECK(stopper.best == 0.70);
  // Exhausted counters do not underflow.
  CHECK_FALSE(stopper.offer(0.01));
  CHECK(stopper.patience_left == 0);
}

TEST_CASE("training smoke run writes checkpoints, resume file, and log") {
  const auto data = toy_dataset();
  const VocabSet vs = build_vocab_set(data.train);
  const ModelConfig cfg = tiny_config(vs);
  auto opt = tiny_options(fresh_dir("mmtrans_trainer_smoke"));
  opt.max_steps = 12;
  opt.validate_every = 5;

  const TrainResult result = train(cfg, data, vs, opt);
  CHECK(result.state.step == 12);
  CHECK(result.step_losses.size() == 12);
  for (double loss : result.step_losses) {
    CHECK(std::isfinite(loss));
    CHECK(loss > 0.0);
  }
  // Validations at steps 5 and 10 (interval) and 3, 6, 9, 12 (epoch ends).
  REQUIRE_FALSE(result.validations.empty());
  CHECK(result.validations.front().step == 3);

  CHECK(fs::exists(opt.out_dir / "best.ckpt"));
  CHECK(fs::exists(opt.out_dir / "resume.bin"));
  const auto log = read_log(opt.out_dir / "metrics.log");
  REQUIRE(log.size() == result.validations.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(log[i].at("step").get<int64_t>() == result.validations[i].step);
    CHECK(log[i].at("val_sbleu").get<double>() ==
          result.validations[i].val_sbleu);
    CHECK(log[i].at("lr").get<double>() > 0.0);
  }

  SECTION("the best checkpoint reloads against the dataset fingerprints") {
    ModelParams best =
        load_checkpoint(result.best_checkpoint, cfg, vocab_fingerprints(vs));
    CHECK(best.config.d_model == cfg.d_model);
  }

  SECTION("the logged best equals the running maximum") {
    double max_seen = -1.0;
    for (const auto& v : result.validations) max_seen = std::max(max_seen, v.val_sbleu);
    CHECK_THAT(result.state.best_val_sbleu,
               Catch::Matchers::WithinAbs(max_seen, 1e-15));
  }
}

TEST_CASE("two fresh runs with one seed produce identical losses") {
  const auto data = toy_dataset();
  const VocabSet vs = build_vocab_set(data.train);
  const ModelConfig cfg = tiny_config(vs);

  auto run = [&](const std::string& dir) {
    auto opt = tiny_options(fresh_dir(dir));
    opt.max_steps = 10;
    return train(cfg, data, vs, opt);
  };
  const TrainResult a = run("mmtrans_trainer_det_a");
  const TrainResult b = run("mmtrans_trainer_det_b");
  REQUIRE(a.step_losses.size() == b.step_losses.size());
  for (std::size_t i = 0; i < a.step_losses.size(); ++i)
    CHECK(a.step_losses[i] == b.step_losses[i]);
}

TEST_CASE("resuming continues the exact loss trajectory") {
  const auto data = toy_dataset();
  const VocabSet vs = build_vocab_set(data.train);
  const ModelConfig cfg = tiny_config(vs);

  auto opt_full = tiny_options(fresh_dir("mmtrans_trainer_resume_full"));
  opt_full.max_steps = 8;
  const TrainResult full = train(cfg, data, vs, opt_full);
  REQUIRE(full.step_losses.size() == 8);

  auto opt_first = tiny_options(fresh_dir("mmtrans_trainer_resume_legs"));
  opt_first.max_steps = 5;
  const TrainResult leg1 = train(cfg, data, vs, opt_first);
  REQUIRE(leg1.state.step == 5);

  auto opt_second = opt_first;
  opt_second.max_steps = 8;
  const TrainResult leg2 =
      train_resume(opt_first.out_dir / "resume.bin", data, vs, opt_second);
  CHECK(leg2.state.step == 8);
  REQUIRE(leg2.step_losses.size() == 3);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK_THAT(leg2.step_losses[i],
               Catch::Matchers::WithinAbs(full.step_losses[5 + i], 1e-6));

  SECTION("vocabulary fingerprint mismatch is rejected") {
    auto other = data.train;
    other.front().comment_tokens.push_back("extra");
    const VocabSet other_vs = build_vocab_set(other);
    CHECK_THROWS_AS(
        train_resume(opt_first.out_dir / "resume.bin", data, other_vs, opt_second),
        DataModelMismatch);
  }

  SECTION("junk resume files are rejected") {
    const fs::path junk = opt_first.out_dir / "junk.bin";
    std::ofstream(junk) << "not a resume file";
    CHECK_THROWS_AS(load_resume(junk), IoError);
    CHECK_THROWS_AS(load_resume(opt_first.out_dir / "absent.bin"), IoError);
  }
}

TEST_CASE("loss falls while the model overfits the toy corpus") {
  const auto data = toy_dataset();
  const VocabSet vs = build_vocab_set(data.train);
  const ModelConfig cfg = tiny_config(vs);
  auto opt = tiny_options(fresh_dir("mmtrans_trainer_overfit"));
  opt.max_steps = 150;
  opt.validate_every = 50;
  opt.patience = 100;  // this case watches the loss curve, not the stopper

  const TrainResult result = train(cfg, data, vs, opt);
  REQUIRE(result.step_losses.size() == 150);
  const auto mean = [&](std::size_t lo, std::size_t hi) {
    return std::accumulate(result.step_losses.begin() + static_cast<long>(lo),
                           result.step_losses.begin() + static_cast<long>(hi),
                           0.0) /
           static_cast<double>(hi - lo);
  };
  CHECK(mean(100, 150) < mean(0, 50));

  // Validation S-BLEU should end at or above where it started.
  REQUIRE(result.validations.size() >= 2);
  CHECK(result.validations.back().val_sbleu + 1e-9 >=
        result.validations.front().val_sbleu);
  CHECK(result.state.best_val_sbleu >= result.validations.front().val_sbleu);
}

TEST_CASE("evaluate decodes the test split and writes aligned predictions") {
  const auto data = toy_dataset();
  const VocabSet vs = build_vocab_set(data.train);
  const ModelConfig cfg = tiny_config(vs);
  ModelParams params(cfg);

  const fs::path dir = fresh_dir("mmtrans_trainer_eval");
  const fs::path pred = dir / "predictions.txt";
  const MetricReport report = evaluate(params, data.test, vs, pred, 5);

  CHECK(report.s_bleu >= 0.0);
  CHECK(report.s_bleu <= 1.0);
  CHECK(report.c_bleu >= 0.0);
  CHECK(report.c_bleu <= 1.0);
  CHECK(report.rouge_lcs_f1 >= 0.0);
  CHECK(report.rouge_lcs_f1 <= 1.0);
  CHECK(report.meteor >= 0.0);
  CHECK(report.meteor <= 1.0);

  std::ifstream in(pred);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  CHECK(lines.size() == data.test.size());

  SECTION("an untrained model differs from gold; identical lists score 1") {
    std::vector<Tokens> refs;
    for (const auto& s : data.test) refs.push_back(s.comment_tokens);
    const MetricReport perfect = evaluate_pairs(refs, refs);
    CHECK(perfect.s_bleu == 1.0);
    CHECK(perfect.c_bleu == 1.0);
    CHECK(perfect.rouge_lcs_f1 == 1.0);
    CHECK(perfect.meteor > 0.9);
  }

  SECTION("empty test split throws") {
    CHECK_THROWS_AS(evaluate(params, {}, vs, {}), EvalError);
  }
}

TEST_CASE("patience exhausts and halts training") {
  // Tiny warmup and a long run: after the first epoch-end improvements the
  // validation score plateaus at whatever the model memorized; with an
  // aggressive patience of 1 the run must stop early rather than reach the
  // epoch cap.
  const auto data = toy_dataset();
  const VocabSet vs = build_vocab_set(data.train);
  const ModelConfig cfg = tiny_config(vs, 8);
  auto opt = tiny_options(fresh_dir("mmtrans_trainer_patience"));
  opt.patience = 1;
  opt.max_epochs = 50;
  opt.validate_every = 3;

  const TrainResult result = train(cfg, data, vs, opt);
  CHECK(result.stopped_early);
  CHECK(result.state.patience_left == 0);
  CHECK(result.state.step < 50 * 3);
}
