#ifndef MMTRANS_TRAINER_HPP_
#define MMTRANS_TRAINER_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmtrans/autodiff.hpp"
#include "mmtrans/corpus.hpp"
#include "mmtrans/errors.hpp"
#include "mmtrans/metrics.hpp"
#include "mmtrans/model.hpp"
#include "mmtrans/tensor.hpp"
#include "mmtrans/vocab_batch.hpp"

namespace mmtrans {

// ---------------------------------------------------------------------------
// Learning-rate schedule and Adam
// ---------------------------------------------------------------------------

/// Warmup-then-decay schedule:
/// rate = d_model^-0.5 * min(step^-0.5, step * warmup^-1.5).
/// Rises linearly for step <= warmup, peaks at step == warmup, then decays
/// as step^-0.5.
inline double lr_schedule(std::int64_t step, int d_model,
                          std::int64_t warmup_steps) {
  if (step < 1) throw ConfigError("lr_schedule needs step >= 1");
  if (d_model < 1 || warmup_steps < 1)
    throw ConfigError("lr_schedule needs positive d_model and warmup");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup_steps);
  return std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

/// Adam accumulators, one moment pair per parameter, in ModelParams::all()
/// order. `t` counts completed updates (the bias-correction exponent).
struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  std::int64_t warmup_steps = 4000;
  std::int64_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  OptimizerState() = default;
  explicit OptimizerState(const std::vector<Parameter*>& params) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const Parameter* p : params) {
      m.emplace_back(p->value.shape());
      v.emplace_back(p->value.shape());
    }
  }
};

/// One Adam update with bias correction over every parameter's accumulated
/// gradient. Deterministic; gradients are left untouched (the caller zeroes
/// them).
inline void adam_step(const std::vector<Parameter*>& params,
                      OptimizerState& state, double rate) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("optimizer state tracks " + std::to_string(state.m.size()) +
                     " parameters, model has " + std::to_string(params.size()));
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (p.grad.shape() != p.value.shape())
      throw ShapeError("gradient shape mismatch for " + p.name);
    if (state.m[i].shape() != p.value.shape())
      throw ShapeError("optimizer moment shape mismatch for " + p.name);
    double* value = p.value.data();
    const double* grad = p.grad.data();
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    const std::int64_t n = p.value.numel();
    for (std::int64_t k = 0; k < n; ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * grad[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * grad[k] * grad[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      value[k] -= rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Early stopping and train state
// ---------------------------------------------------------------------------

/// Patience counter over validation scores. `offer` returns whether the
/// score improved on the best seen; patience resets on improvement and
/// decrements otherwise (an equal score is non-improving).
struct EarlyStopper {
  int patience = 5;
  int patience_left = 5;
  double best = -1.0;

  bool offer(double score) {
    if (score > best) {
      best = score;
      patience_left = patience;
      return true;
    }
    if (patience_left > 0) --patience_left;
    return false;
  }
  bool exhausted() const { return patience_left <= 0; }
};

/// Progress of a training run; persisted inside resume files.
struct TrainState {
  std::int64_t step = 0;   // completed optimizer steps
  std::int64_t epoch = 0;  // 0-based epoch the next step belongs to
  double best_val_sbleu = -1.0;
  int patience_left = 5;
  std::uint64_t seed = 0;  // batch-shuffle / dropout seed for this run
};

struct TrainOptions {
  int max_epochs = 50;
  int batch_size = kBatchSize;
  std::int64_t validate_every = 500;  // minibatches, global counter
  int patience = 5;
  std::int64_t warmup_steps = 4000;
  int greedy_max_len = 20;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_epsilon = 1e-9;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  double stop_at_val = -1.0;    // stop once val S-BLEU reaches this; <0 off
  std::int64_t max_steps = 0;   // hard step cap; 0 = unlimited
  bool progress = false;        // echo validation lines to stdout
};

struct ValidationEvent {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  double lr = 0.0;
  double val_sbleu = 0.0;
  bool improved = false;
};

struct TrainResult {
  TrainState state;
  std::filesystem::path best_checkpoint;  // empty if no validation improved
  std::vector<double> step_losses;        // loss per optimizer step, this run
  std::vector<ValidationEvent> validations;
  bool stopped_early = false;   // patience exhausted
  bool reached_target = false;  // stop_at_val hit
};

// ---------------------------------------------------------------------------
// Resume files: parameters + optimizer moments + train state + RNG stream
// ---------------------------------------------------------------------------

inline constexpr char kResumeMagic[] = "MMTRES01";

namespace detail {

inline void write_named_tensor(std::ostream& out, const std::string& name,
                               const Tensor& t) {
  write_pod(out, static_cast<std::uint64_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod(out, static_cast<std::uint64_t>(t.rank()));
  for (std::int64_t e : t.shape()) write_pod(out, e);
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() *
                                         static_cast<std::int64_t>(sizeof(double))));
}

inline void read_named_tensor(std::istream& in, const std::string& want_name,
                              Tensor& t, const std::string& file) {
  const auto name_len = read_pod<std::uint64_t>(in);
  std::string name(name_len, '\0');
  in.read(name.data(), static_cast<std::streamsize>(name_len));
  if (name != want_name)
    throw DataModelMismatch("resume file tensor '" + name +
                            "' does not match expected '" + want_name + "'");
  const auto rank = read_pod<std::uint64_t>(in);
  Shape shape(rank);
  for (auto& e : shape) e = read_pod<std::int64_t>(in);
  if (shape != t.shape())
    throw DataModelMismatch("resume file tensor '" + name + "' has shape " +
                            shape_str(shape) + ", expected " +
                            shape_str(t.shape()));
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() *
                                       static_cast<std::int64_t>(sizeof(double))));
  if (!in) throw IoError("resume file truncated: " + file);
}

}  // namespace detail

inline void save_resume(const std::filesystem::path& file, ModelParams& params,
                        const OptimizerState& opt, const TrainState& state,
                        const std::mt19937_64& rng,
                        const std::map<std::string, std::uint64_t>& vocab_hashes) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out.write(kResumeMagic, 8);
  std::ostringstream rng_text;
  rng_text << rng;
  nlohmann::json header;
  header["config"] = config_to_json(params.config);
  header["vocab_hashes"] = vocab_hashes;
  header["state"] = {{"step", state.step},
                     {"epoch", state.epoch},
                     {"best_val_sbleu", state.best_val_sbleu},
                     {"patience_left", state.patience_left},
                     {"seed", state.seed}};
  header["optimizer"] = {{"beta1", opt.beta1},
                         {"beta2", opt.beta2},
                         {"epsilon", opt.epsilon},
                         {"warmup_steps", opt.warmup_steps},
                         {"t", opt.t}};
  header["rng"] = rng_text.str();
  const std::string hs = header.dump();
  detail::write_pod(out, static_cast<std::uint64_t>(hs.size()));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));

  auto all = params.all();
  if (opt.m.size() != all.size())
    throw ShapeError("optimizer state does not cover the model parameters");
  detail::write_pod(out, static_cast<std::uint64_t>(all.size()));
  for (std::size_t i = 0; i < all.size(); ++i) {
    detail::write_named_tensor(out, all[i]->name, all[i]->value);
    detail::write_named_tensor(out, all[i]->name + ".m", opt.m[i]);
    detail::write_named_tensor(out, all[i]->name + ".v", opt.v[i]);
  }
  if (!out) throw IoError("failed writing " + file.string());
}

struct ResumeBundle {
  ModelParams params;
  OptimizerState optimizer;
  TrainState state;
  std::mt19937_64 rng;
};

inline ResumeBundle load_resume(
    const std::filesystem::path& file,
    const std::optional<std::map<std::string, std::uint64_t>>& expect_hashes =
        std::nullopt) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  char magic[9] = {};
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != kResumeMagic)
    throw IoError(file.string() + " is not a resume file");
  const auto header_len = detail::read_pod<std::uint64_t>(in);
  std::string hs(header_len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw IoError("resume file truncated: " + file.string());
  nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
  if (header.is_discarded())
    throw IoError("resume file header is not valid JSON: " + file.string());

  ResumeBundle bundle;
  bundle.params = ModelParams(config_from_json(header.at("config")));
  const auto hashes =
      header.at("vocab_hashes").get<std::map<std::string, std::uint64_t>>();
  if (expect_hashes && *expect_hashes != hashes)
    throw DataModelMismatch("resume file vocabularies do not match the dataset");

  const auto& st = header.at("state");
  bundle.state.step = st.at("step").get<std::int64_t>();
  bundle.state.epoch = st.at("epoch").get<std::int64_t>();
  bundle.state.best_val_sbleu = st.at("best_val_sbleu").get<double>();
  bundle.state.patience_left = st.at("patience_left").get<int>();
  bundle.state.seed = st.at("seed").get<std::uint64_t>();

  const auto& op = header.at("optimizer");
  auto all = bundle.params.all();
  bundle.optimizer = OptimizerState(all);
  bundle.optimizer.beta1 = op.at("beta1").get<double>();
  bundle.optimizer.beta2 = op.at("beta2").get<double>();
  bundle.optimizer.epsilon = op.at("epsilon").get<double>();
  bundle.optimizer.warmup_steps = op.at("warmup_steps").get<std::int64_t>();
  bundle.optimizer.t = op.at("t").get<std::int64_t>();

  std::istringstream rng_text(header.at("rng").get<std::string>());
  rng_text >> bundle.rng;
  if (rng_text.fail())
    throw IoError("resume file RNG state is corrupt: " + file.string());

  const auto count = detail::read_pod<std::uint64_t>(in);
  if (count != all.size())
    throw DataModelMismatch("resume file parameter count " +
                            std::to_string(count) + " != expected " +
                            std::to_string(all.size()));
  for (std::size_t i = 0; i < all.size(); ++i) {
    detail::read_named_tensor(in, all[i]->name, all[i]->value, file.string());
    detail::read_named_tensor(in, all[i]->name + ".m", bundle.optimizer.m[i],
                              file.string());
    detail::read_named_tensor(in, all[i]->name + ".v", bundle.optimizer.v[i],
                              file.string());
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Validation scoring and evaluation
// ---------------------------------------------------------------------------

/// Greedy-decode a split and return mean per-sentence composite BLEU against
/// the gold comments.
inline double validation_sbleu(ModelParams& params,
                               const std::vector<PairSample>& split,
                               const VocabSet& vocabs, int batch_size,
                               int max_len) {
  if (split.empty()) return 0.0;
  double total = 0.0;
  for (Batch& batch : make_eval_batches(split, vocabs, batch_size)) {
    const auto decoded = greedy_decode(params, batch, max_len);
    for (std::size_t row = 0; row < decoded.size(); ++row) {
      Tokens candidate;
      for (int id : decoded[row]) candidate.push_back(vocabs.comment.decode(id));
      const PairSample& gold =
          split[static_cast<std::size_t>(batch.sample_indices[row])];
      total += sentence_bleu(candidate, gold.comment_tokens);
    }
  }
  return total / static_cast<double>(split.size());
}

/// Greedy-decode the test split, optionally write the predictions file (one
/// decoded comment per line, aligned to split order), and score all four
/// metrics against the gold comments.
inline MetricReport evaluate(ModelParams& params,
                             const std::vector<PairSample>& test,
                             const VocabSet& vocabs,
                             const std::filesystem::path& predictions_file = {},
                             int batch_size = kBatchSize, int max_len = 20) {
  if (test.empty()) throw EvalError("test split holds no records");
  std::vector<Tokens> candidates(test.size());
  std::vector<Tokens> references(test.size());
  for (Batch& batch : make_eval_batches(test, vocabs, batch_size)) {
    const auto decoded = greedy_decode(params, batch, max_len);
    for (std::size_t row = 0; row < decoded.size(); ++row) {
      const auto at = static_cast<std::size_t>(batch.sample_indices[row]);
      for (int id : decoded[row])
        candidates[at].push_back(vocabs.comment.decode(id));
      references[at] = test[at].comment_tokens;
    }
  }
  if (!predictions_file.empty()) {
    std::ofstream out(predictions_file);
    if (!out) throw IoError("cannot write " + predictions_file.string());
    for (const Tokens& line : candidates) {
      for (std::size_t i = 0; i < line.size(); ++i) {
        if (i > 0) out << ' ';
        out << line[i];
      }
      out << '\n';
    }
    if (!out) throw IoError("failed writing " + predictions_file.string());
  }
  return evaluate_pairs(candidates, references);
}

// ---------------------------------------------------------------------------
// The training loop
// ---------------------------------------------------------------------------

namespace detail {

inline TrainResult train_loop(ModelParams& params, OptimizerState& opt_state,
                              TrainState& state, std::mt19937_64& rng,
                              const DatasetSplit& data, const VocabSet& vocabs,
                              const TrainOptions& opt) {
  if (data.train.empty()) throw EmptyCorpus("training split holds no records");
  params.config.validate();
  std::filesystem::create_directories(opt.out_dir);
  const auto hashes = vocab_fingerprints(vocabs);
  const auto best_path = opt.out_dir / "best.ckpt";
  const auto resume_path = opt.out_dir / "resume.bin";
  const auto log_path = opt.out_dir / "metrics.log";
  std::ofstream log(log_path, state.step == 0 ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write " + log_path.string());

  auto param_list = params.all();
  const std::int64_t batches_per_epoch =
      (static_cast<std::int64_t>(data.train.size()) + opt.batch_size - 1) /
      opt.batch_size;

  EarlyStopper stopper;
  stopper.patience = opt.patience;
  stopper.patience_left = state.patience_left;
  stopper.best = state.best_val_sbleu;

  TrainResult result;
  bool done = false;
  double last_loss = 0.0;
  double last_rate = 0.0;

  const auto validate_now = [&]() {
    if (data.validation.empty()) return;
    const double score = validation_sbleu(params, data.validation, vocabs,
                                          opt.batch_size, opt.greedy_max_len);
    const bool improved = stopper.offer(score);
    state.best_val_sbleu = stopper.best;
    state.patience_left = stopper.patience_left;
    if (improved) {
      save_checkpoint(best_path, params, hashes);
      result.best_checkpoint = best_path;
    }
    ValidationEvent event{state.step, state.epoch, last_loss,
                          last_rate,  score,       improved};
    result.validations.push_back(event);
    log << nlohmann::json{{"step", event.step},
                          {"epoch", event.epoch},
                          {"train_loss", event.train_loss},
                          {"lr", event.lr},
                          {"val_sbleu", event.val_sbleu}}
               .dump()
        << '\n';
    log.flush();
    if (opt.progress) {
      std::printf("step %lld epoch %lld loss %.4f val S-BLEU %.4f%s\n",
                  static_cast<long long>(event.step),
                  static_cast<long long>(event.epoch), event.train_loss,
                  event.val_sbleu, improved ? " *" : "");
      std::fflush(stdout);
    }
    save_resume(resume_path, params, opt_state, state, rng, hashes);
    if (stopper.exhausted()) {
      done = true;
      result.stopped_early = true;
    }
    if (opt.stop_at_val >= 0.0 && score >= opt.stop_at_val) {
      done = true;
      result.reached_target = true;
    }
  };

  while (!done) {
    const std::int64_t epoch = state.step / batches_per_epoch;
    if (epoch >= opt.max_epochs) break;
    state.epoch = epoch;
    auto batches = make_batches(data.train, vocabs, opt.batch_size, state.seed,
                                static_cast<int>(epoch));
    for (std::int64_t bi = state.step % batches_per_epoch;
         bi < static_cast<std::int64_t>(batches.size()) && !done; ++bi) {
      Batch& batch = batches[static_cast<std::size_t>(bi)];
      Tape tape;
      const DecoderFeed feed = teacher_forcing_feed(batch);
      Value loss = model_loss(tape, params, batch, feed, true, &rng);
      last_loss = loss.val().data()[0];
      tape.backward(loss);
      ++state.step;
      last_rate =
          lr_schedule(state.step, params.config.d_model, opt_state.warmup_steps);
      adam_step(param_list, opt_state, last_rate);
      params.zero_grads();
      result.step_losses.push_back(last_loss);

      const bool epoch_end =
          bi + 1 == static_cast<std::int64_t>(batches.size());
      const bool interval =
          opt.validate_every > 0 && state.step % opt.validate_every == 0;
      if (interval || epoch_end) validate_now();
      if (opt.max_steps > 0 && state.step >= opt.max_steps) done = true;
    }
  }

  save_resume(resume_path, params, opt_state, state, rng, hashes);
  result.state = state;
  if (result.best_checkpoint.empty() && std::filesystem::exists(best_path) &&
      state.best_val_sbleu >= 0.0)
    result.best_checkpoint = best_path;  // inherited from a previous leg
  return result;
}

}  // namespace detail

/// Train from a fresh initialization. Writes best.ckpt (model-only, best
/// validation S-BLEU), resume.bin (full state), and metrics.log (one JSON
/// line per validation event) under opt.out_dir.
inline TrainResult train(const ModelConfig& config, const DatasetSplit& data,
                         const VocabSet& vocabs, const TrainOptions& opt) {
  config.validate();
  ModelParams params(config);
  auto param_list = params.all();
  OptimizerState opt_state(param_list);
  opt_state.beta1 = opt.adam_beta1;
  opt_state.beta2 = opt.adam_beta2;
  opt_state.epsilon = opt.adam_epsilon;
  opt_state.warmup_steps = opt.warmup_steps;
  TrainState state;
  state.patience_left = opt.patience;
  state.seed = opt.seed;
  std::mt19937_64 rng(opt.seed);
  return detail::train_loop(params, opt_state, state, rng, data, vocabs, opt);
}

/// Continue a run from its resume file. The persisted optimizer settings,
/// seed, and progress win over the corresponding TrainOptions fields; stop
/// conditions (max_epochs/max_steps/stop_at_val/validate_every) come from
/// `opt`.
inline TrainResult train_resume(const std::filesystem::path& resume_file,
                                const DatasetSplit& data,
                                const VocabSet& vocabs,
                                const TrainOptions& opt) {
  ResumeBundle bundle = load_resume(resume_file, vocab_fingerprints(vocabs));
  return detail::train_loop(bundle.params, bundle.optimizer, bundle.state,
                            bundle.rng, data, vocabs, opt);
}

}  // namespace mmtrans

#endif  // MMTRANS_TRAINER_HPP_
