#ifndef MMTRANS_MODEL_HPP_
#define MMTRANS_MODEL_HPP_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmtrans/autodiff.hpp"
#include "mmtrans/errors.hpp"
#include "mmtrans/tensor.hpp"
#include "mmtrans/vocab_batch.hpp"

namespace mmtrans {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Which input channels drive the network.
///   MMTrans  — SBT sequence + AST graph (the full model)
///   IMMTrans — plain code tokens + AST graph
///   CodeOnly — plain code tokens alone (single encoder, single cross branch)
enum class Mode { MMTrans, IMMTrans, CodeOnly };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::MMTrans: return "mmtrans";
    case Mode::IMMTrans: return "i-mmtrans";
    case Mode::CodeOnly: return "code-only";
  }
  return "?";
}

inline Mode mode_from_name(const std::string& s) {
  if (s == "mmtrans") return Mode::MMTrans;
  if (s == "i-mmtrans") return Mode::IMMTrans;
  if (s == "code-only") return Mode::CodeOnly;
  throw ConfigError("unknown mode '" + s +
                    "' (expected mmtrans, i-mmtrans, or code-only)");
}

struct ModelConfig {
  int64_t d = 256;        // embedding width
  int64_t d_model = 256;  // attention width
  int64_t d_ff = 512;     // feed-forward inner width
  int64_t heads = 4;      // J
  int64_t layers = 1;     // N attention-module repetitions
  int64_t hop = 2;        // GCN layers
  int64_t max_sbt = kSbtCap;
  int64_t max_nodes = kGraphCap;
  int64_t max_comment = kCommentMax;
  int64_t comment_vocab = 0;  // S
  int64_t sbt_vocab = 0;
  int64_t node_vocab = 0;
  int64_t code_vocab = 0;
  Mode mode = Mode::MMTrans;
  double dropout = 0.1;
  bool gcn_normalize = false;
  uint64_t seed = 1;

  bool uses_graph() const { return mode != Mode::CodeOnly; }
  /// The active sequence-encoder channel's vocabulary size.
  int64_t seq_vocab() const {
    return mode == Mode::MMTrans ? sbt_vocab : code_vocab;
  }
  /// Width of the concatenated decoder branches feeding the output layer.
  int64_t joint_width() const { return uses_graph() ? 2 * d_model : d_model; }

  void validate() const {
    auto positive = [](int64_t v, const char* name) {
      if (v <= 0)
        throw ConfigError(std::string(name) + " must be positive, got " +
                          std::to_string(v));
    };
    positive(d, "d");
    positive(d_model, "d_model");
    positive(d_ff, "d_ff");
    positive(heads, "heads");
    positive(layers, "layers");
    positive(max_sbt, "max_sbt");
    positive(max_nodes, "max_nodes");
    positive(max_comment, "max_comment");
    if (d != d_model)
      throw ConfigError("embedding width d must equal d_model (residual "
                        "wiring adds them)");
    if (d_model % heads != 0)
      throw ConfigError("d_model " + std::to_string(d_model) +
                        " is not divisible by head count " +
                        std::to_string(heads));
    if (d_model % 2 != 0)
      throw ConfigError("d_model must be even for sin/cos positional "
                        "encoding");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError("dropout must lie in [0, 1)");
    if (comment_vocab < kReservedIds + 1)
      throw ConfigError("comment vocabulary is empty");
    if (seq_vocab() < kReservedIds)
      throw ConfigError(std::string("mode ") + mode_name(mode) +
                        " needs a usable sequence vocabulary");
    if (uses_graph()) {
      positive(hop, "hop");
      if (node_vocab < kReservedIds)
        throw ConfigError(std::string("mode ") + mode_name(mode) +
                          " needs a node vocabulary");
    }
  }
};

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"d", c.d},
                        {"d_model", c.d_model},
                        {"d_ff", c.d_ff},
                        {"heads", c.heads},
                        {"layers", c.layers},
                        {"hop", c.hop},
                        {"max_sbt", c.max_sbt},
                        {"max_nodes", c.max_nodes},
                        {"max_comment", c.max_comment},
                        {"comment_vocab", c.comment_vocab},
                        {"sbt_vocab", c.sbt_vocab},
                        {"node_vocab", c.node_vocab},
                        {"code_vocab", c.code_vocab},
                        {"mode", mode_name(c.mode)},
                        {"dropout", c.dropout},
                        {"gcn_normalize", c.gcn_normalize},
                        {"seed", c.seed}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d = j.at("d").get<int64_t>();
  c.d_model = j.at("d_model").get<int64_t>();
  c.d_ff = j.at("d_ff").get<int64_t>();
  c.heads = j.at("heads").get<int64_t>();
  c.layers = j.at("layers").get<int64_t>();
  c.hop = j.at("hop").get<int64_t>();
  c.max_sbt = j.at("max_sbt").get<int64_t>();
  c.max_nodes = j.at("max_nodes").get<int64_t>();
  c.max_comment = j.at("max_comment").get<int64_t>();
  c.comment_vocab = j.at("comment_vocab").get<int64_t>();
  c.sbt_vocab = j.at("sbt_vocab").get<int64_t>();
  c.node_vocab = j.at("node_vocab").get<int64_t>();
  c.code_vocab = j.at("code_vocab").get<int64_t>();
  c.mode = mode_from_name(j.at("mode").get<std::string>());
  c.dropout = j.at("dropout").get<double>();
  c.gcn_normalize = j.at("gcn_normalize").get<bool>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

// ---------------------------------------------------------------------------
// Positional encoding (sin on even columns, cos on odd)
// ---------------------------------------------------------------------------

inline Tensor positional_encoding(int64_t max_len, int64_t d) {
  if (d <= 0 || d % 2 != 0)
    throw ShapeError("positional encoding width must be positive and even");
  Tensor pe({max_len, d});
  for (int64_t pos = 0; pos < max_len; ++pos) {
    for (int64_t i = 0; i < d / 2; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
      pe[static_cast<std::size_t>(pos * d + 2 * i)] = std::sin(angle);
      pe[static_cast<std::size_t>(pos * d + 2 * i + 1)] = std::cos(angle);
    }
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// One attention module layer: multi-head attention projections, the two
/// layer norms, and the point-wise feed-forward pair.
struct AttnBlock {
  Parameter wq, wk, wv, wo;
  Parameter ln1_gain, ln1_bias;
  Parameter ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Parameter ln2_gain, ln2_bias;
};

namespace detail {

inline Tensor glorot(Shape shape, std::mt19937_64& rng) {
  const double fan_in =
      static_cast<double>(shape.size() >= 2 ? shape[shape.size() - 2] : shape[0]);
  const double fan_out = static_cast<double>(shape.back());
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  return t_uniform(std::move(shape), -limit, limit, rng);
}

inline AttnBlock make_block(const std::string& prefix, const ModelConfig& c,
                            std::mt19937_64& rng) {
  AttnBlock b;
  b.wq = Parameter(prefix + ".wq", glorot({c.d_model, c.d_model}, rng));
  b.wk = Parameter(prefix + ".wk", glorot({c.d_model, c.d_model}, rng));
  b.wv = Parameter(prefix + ".wv", glorot({c.d_model, c.d_model}, rng));
  b.wo = Parameter(prefix + ".wo", glorot({c.d_model, c.d_model}, rng));
  b.ln1_gain = Parameter(prefix + ".ln1_gain", Tensor::ones({c.d_model}));
  b.ln1_bias = Parameter(prefix + ".ln1_bias", Tensor::zeros({c.d_model}));
  b.ffn_w1 = Parameter(prefix + ".ffn_w1", glorot({c.d_model, c.d_ff}, rng));
  b.ffn_b1 = Parameter(prefix + ".ffn_b1", Tensor::zeros({c.d_ff}));
  b.ffn_w2 = Parameter(prefix + ".ffn_w2", glorot({c.d_ff, c.d_model}, rng));
  b.ffn_b2 = Parameter(prefix + ".ffn_b2", Tensor::zeros({c.d_model}));
  b.ln2_gain = Parameter(prefix + ".ln2_gain", Tensor::ones({c.d_model}));
  b.ln2_bias = Parameter(prefix + ".ln2_bias", Tensor::zeros({c.d_model}));
  return b;
}

inline void collect_block(AttnBlock& b, std::vector<Parameter*>& out) {
  for (Parameter* p : {&b.wq, &b.wk, &b.wv, &b.wo, &b.ln1_gain, &b.ln1_bias,
                       &b.ffn_w1, &b.ffn_b1, &b.ffn_w2, &b.ffn_b2,
                       &b.ln2_gain, &b.ln2_bias})
    out.push_back(p);
}

}  // namespace detail

/// Every trainable tensor of one model instance, built deterministically
/// from (config, config.seed).
struct ModelParams {
  ModelConfig config;
  std::optional<Parameter> node_embed;  // graph branch only
  Parameter seq_embed;                  // SBT channel or code channel
  Parameter comment_embed;
  std::vector<Parameter> gcn_weights;
  std::vector<AttnBlock> graph_encoder_blocks;
  std::vector<AttnBlock> seq_encoder_blocks;
  std::vector<AttnBlock> decoder_self_blocks;
  std::vector<AttnBlock> decoder_graph_cross;
  std::vector<AttnBlock> decoder_seq_cross;
  Parameter out_w, out_b;

  ModelParams() = default;

  explicit ModelParams(const ModelConfig& cfg) : config(cfg) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    if (config.uses_graph()) {
      node_embed = Parameter("node_embed",
                             detail::glorot({config.node_vocab, config.d}, rng));
      for (int64_t h = 0; h < config.hop; ++h) {
        const int64_t in = (h == 0) ? config.d : config.d_model;
        gcn_weights.emplace_back("gcn_w" + std::to_string(h),
                                 detail::glorot({in, config.d_model}, rng));
      }
      for (int64_t n = 0; n < config.layers; ++n)
        graph_encoder_blocks.push_back(detail::make_block(
            "graph_enc." + std::to_string(n), config, rng));
    }
    seq_embed = Parameter("seq_embed",
                          detail::glorot({config.seq_vocab(), config.d}, rng));
    comment_embed = Parameter(
        "comment_embed", detail::glorot({config.comment_vocab, config.d}, rng));
    for (int64_t n = 0; n < config.layers; ++n)
      seq_encoder_blocks.push_back(
          detail::make_block("seq_enc." + std::to_string(n), config, rng));
    for (int64_t n = 0; n < config.layers; ++n)
      decoder_self_blocks.push_back(
          detail::make_block("dec_self." + std::to_string(n), config, rng));
    if (config.uses_graph())
      for (int64_t n = 0; n < config.layers; ++n)
        decoder_graph_cross.push_back(detail::make_block(
            "dec_graph." + std::to_string(n), config, rng));
    for (int64_t n = 0; n < config.layers; ++n)
      decoder_seq_cross.push_back(
          detail::make_block("dec_seq." + std::to_string(n), config, rng));
    out_w = Parameter("out_w", detail::glorot(
                                   {config.joint_width(), config.comment_vocab},
                                   rng));
    out_b = Parameter("out_b", Tensor::zeros({config.comment_vocab}));
  }

  /// All parameters in a stable order (optimizer state and checkpoints
  /// index into this).
  std::vector<Parameter*> all() {
    std::vector<Parameter*> out;
    if (node_embed) out.push_back(&*node_embed);
    out.push_back(&seq_embed);
    out.push_back(&comment_embed);
    for (Parameter& w : gcn_weights) out.push_back(&w);
    for (auto* blocks :
         {&graph_encoder_blocks, &seq_encoder_blocks, &decoder_self_blocks,
          &decoder_graph_cross, &decoder_seq_cross})
      for (AttnBlock& b : *blocks) detail::collect_block(b, out);
    out.push_back(&out_w);
    out.push_back(&out_b);
    return out;
  }

  void zero_grads() {
    for (Parameter* p : all()) p->zero_grad();
  }
};

// ---------------------------------------------------------------------------
// Mask helpers (keep/block tensors → additive offsets)
// ---------------------------------------------------------------------------

inline constexpr double kMaskOffset = -1e9;

/// 1.0-keep / 0.0-block → 0.0-keep / −1e9-block, same shape.
inline Tensor additive_from_keep(const Tensor& keep) {
  Tensor m(keep.shape());
  for (int64_t i = 0; i < keep.numel(); ++i)
    m[static_cast<std::size_t>(i)] =
        keep[static_cast<std::size_t>(i)] > 0.5 ? 0.0 : kMaskOffset;
  return m;
}

/// Key-side keep mask (rows × K) → per-query mask (rows × q_len × K).
inline Tensor expand_key_mask(const Tensor& key_keep, int64_t q_len) {
  const int64_t rows = key_keep.extent(0), K = key_keep.extent(1);
  Tensor m({rows, q_len, K});
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t q = 0; q < q_len; ++q)
      for (int64_t k = 0; k < K; ++k)
        m[static_cast<std::size_t>((r * q_len + q) * K + k)] =
            key_keep[static_cast<std::size_t>(r * K + k)] > 0.5 ? 0.0
                                                                : kMaskOffset;
  return m;
}

// ---------------------------------------------------------------------------
// Network blocks
// ---------------------------------------------------------------------------

/// Scaled dot-product multi-head attention (project, split J heads, attend,
/// concat, project). `additive` is an already-on-tape offset tensor shaped
/// like the score matrix, or empty for unmasked attention.
inline Value multi_head_attention(Tape& t, Value q_in, Value k_in, Value v_in,
                                  const std::optional<Value>& additive,
                                  Parameter& wq, Parameter& wk, Parameter& wv,
                                  Parameter& wo, int64_t heads) {
  const int64_t width = wq.value.extent(1);
  if (width % heads != 0)
    throw ShapeError("projection width not divisible by head count");
  const int64_t dh = width / heads;
  Value q = matmul(q_in, t.param(wq));
  Value k = matmul(k_in, t.param(wk));
  Value v = matmul(v_in, t.param(wv));
  Value joined;
  for (int64_t j = 0; j < heads; ++j) {
    Value qj = slice_last(q, j * dh, dh);
    Value kj = slice_last(k, j * dh, dh);
    Value vj = slice_last(v, j * dh, dh);
    Value scores =
        scale(matmul(qj, transpose_last2(kj)), 1.0 / std::sqrt(
                                                         static_cast<double>(dh)));
    if (additive) scores = add(scores, *additive);
    Value head = matmul(softmax(scores, -1), vj);
    joined = (j == 0) ? head : concat_last(joined, head);
  }
  return matmul(joined, t.param(wo));
}

/// One GCN propagation step: σ(Ã H W) with σ = ReLU.
inline Value gcn_layer(Tape& t, Value h, Value a_tilde, Parameter& w) {
  return relu(matmul(matmul(a_tilde, h), t.param(w)));
}

namespace detail {

inline Value maybe_dropout(Value v, double rate, std::mt19937_64* rng) {
  if (rate > 0.0 && rng != nullptr) return dropout(v, rate, *rng);
  return v;
}

/// Residual + norm around `attended`, then FFN with its own residual + norm.
inline Value attention_sublayers(Tape& t, Value x, Value attended,
                                 AttnBlock& b, double rate,
                                 std::mt19937_64* rng) {
  Value a = layer_norm(add(x, maybe_dropout(attended, rate, rng)),
                       t.param(b.ln1_gain), t.param(b.ln1_bias));
  Value inner = relu(add(matmul(a, t.param(b.ffn_w1)), t.param(b.ffn_b1)));
  Value f = add(matmul(inner, t.param(b.ffn_w2)), t.param(b.ffn_b2));
  return layer_norm(add(a, maybe_dropout(f, rate, rng)),
                    t.param(b.ln2_gain), t.param(b.ln2_bias));
}

}  // namespace detail

/// Self multi-head attention module: N layers of MHA(x,x,x) + residual/norm
/// + FFN + residual/norm.
inline Value smam(Tape& t, Value x, const std::optional<Value>& additive,
                  std::vector<AttnBlock>& blocks, int64_t heads, double rate,
                  std::mt19937_64* rng) {
  for (AttnBlock& b : blocks) {
    Value a =
        multi_head_attention(t, x, x, x, additive, b.wq, b.wk, b.wv, b.wo,
                             heads);
    x = detail::attention_sublayers(t, x, a, b, rate, rng);
  }
  return x;
}

/// Cross multi-head attention module: same block structure with
/// (K, V) = encoder output.
inline Value mam(Tape& t, Value x, Value encoded,
                 const std::optional<Value>& additive,
                 std::vector<AttnBlock>& blocks, int64_t heads, double rate,
                 std::mt19937_64* rng) {
  for (AttnBlock& b : blocks) {
    Value a = multi_head_attention(t, x, encoded, encoded, additive, b.wq,
                                   b.wk, b.wv, b.wo, heads);
    x = detail::attention_sublayers(t, x, a, b, rate, rng);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Encoders
// ---------------------------------------------------------------------------

namespace detail {

/// Symmetric degree normalization D^{-1/2} Ã D^{-1/2} per batch row.
inline Tensor normalize_adjacency(const Tensor& a) {
  Tensor out = a;
  const int64_t rows = a.extent(0), l = a.extent(1);
  for (int64_t r = 0; r < rows; ++r) {
    std::vector<double> inv_sqrt(static_cast<std::size_t>(l), 0.0);
    for (int64_t i = 0; i < l; ++i) {
      double deg = 0.0;
      for (int64_t j = 0; j < l; ++j)
        deg += a[static_cast<std::size_t>((r * l + i) * l + j)];
      if (deg > 0.0) inv_sqrt[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(deg);
    }
    for (int64_t i = 0; i < l; ++i)
      for (int64_t j = 0; j < l; ++j)
        out[static_cast<std::size_t>((r * l + i) * l + j)] *=
            inv_sqrt[static_cast<std::size_t>(i)] *
            inv_sqrt[static_cast<std::size_t>(j)];
  }
  return out;
}

}  // namespace detail

/// Graph branch: embed node labels, run `hop` GCN layers over Ã, add
/// positional encoding, then the self-attention module under the node mask.
inline Value graph_encoder(Tape& t, ModelParams& p, const Batch& batch,
                           bool training, std::mt19937_64* rng) {
  const ModelConfig& c = p.config;
  Value h = gather_rows(t.param(*p.node_embed), batch.node_ids,
                        {batch.rows, batch.node_len});
  Value a = c.gcn_normalize
                ? t.constant(detail::normalize_adjacency(batch.adjacency))
                : t.input(batch.adjacency);
  for (Parameter& w : p.gcn_weights) h = gcn_layer(t, h, a, w);
  h = add(h, t.constant(positional_encoding(batch.node_len, c.d_model)));
  std::optional<Value> mask =
      t.constant(expand_key_mask(batch.node_mask, batch.node_len));
  const double rate = training ? c.dropout : 0.0;
  return smam(t, h, mask, p.graph_encoder_blocks, c.heads, rate, rng);
}

/// Sequence branch: embed, scale by √d, add positional encoding, then the
/// self-attention module. Drives the SBT channel (mmtrans) or the code
/// channel (i-mmtrans, code-only).
inline Value sequence_encoder(Tape& t, ModelParams& p,
                              const std::vector<int>& ids, int64_t rows,
                              int64_t len, const Tensor& keep_mask,
                              bool training, std::mt19937_64* rng) {
  const ModelConfig& c = p.config;
  Value e = gather_rows(t.param(p.seq_embed), ids, {rows, len});
  e = scale(e, std::sqrt(static_cast<double>(c.d)));
  e = add(e, t.constant(positional_encoding(len, c.d_model)));
  std::optional<Value> mask = t.constant(expand_key_mask(keep_mask, len));
  const double rate = training ? c.dropout : 0.0;
  return smam(t, e, mask, p.seq_encoder_blocks, c.heads, rate, rng);
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

/// Decoder forward over an explicit comment prefix. Embed + PE → causal
/// self-attention module → parallel cross modules over the graph and
/// sequence encodings → concat on the last axis → linear → softmax over S.
inline Value joint_decoder(Tape& t, ModelParams& p,
                           const std::vector<int>& y_ids, int64_t rows,
                           int64_t y_len, const Tensor& y_combined_keep,
                           const std::optional<Value>& graph_encoded,
                           const Tensor* node_keep, Value seq_encoded,
                           const Tensor& seq_keep, bool training,
                           std::mt19937_64* rng) {
  const ModelConfig& c = p.config;
  const double rate = training ? c.dropout : 0.0;
  Value y = gather_rows(t.param(p.comment_embed), y_ids, {rows, y_len});
  y = scale(y, std::sqrt(static_cast<double>(c.d)));
  y = add(y, t.constant(positional_encoding(y_len, c.d_model)));
  std::optional<Value> self_mask =
      t.constant(additive_from_keep(y_combined_keep));
  Value x = smam(t, y, self_mask, p.decoder_self_blocks, c.heads, rate, rng);

  Value joined;
  if (graph_encoded) {
    std::optional<Value> graph_mask =
        t.constant(expand_key_mask(*node_keep, y_len));
    Value g = mam(t, x, *graph_encoded, graph_mask, p.decoder_graph_cross,
                  c.heads, rate, rng);
    std::optional<Value> seq_mask = t.constant(expand_key_mask(seq_keep, y_len));
    Value s = mam(t, x, seq_encoded, seq_mask, p.decoder_seq_cross, c.heads,
                  rate, rng);
    joined = concat_last(g, s);
  } else {
    std::optional<Value> seq_mask = t.constant(expand_key_mask(seq_keep, y_len));
    joined = mam(t, x, seq_encoded, seq_mask, p.decoder_seq_cross, c.heads,
                 rate, rng);
  }
  Value logits = add(matmul(joined, t.param(p.out_w)), t.param(p.out_b));
  return softmax(logits, -1);
}

// ---------------------------------------------------------------------------
// Teacher forcing plumbing
// ---------------------------------------------------------------------------

/// Decoder-side slices of a batch: input = comment row minus its last
/// position, gold = comment row minus its first. weights[i][j] carries
/// 1/l^y_i on the first l^y_i gold positions and 0 on padding, so
/// sum(weights ∘ log p) is exactly the inner sum of the batch loss.
struct DecoderFeed {
  std::vector<int> input_ids;
  std::vector<int> gold_ids;
  Tensor input_keep;  // rows × len × len combined causal+padding keep mask
  Tensor weights;     // rows × len
  std::vector<int> gold_lengths;
  int64_t rows = 0;
  int64_t len = 0;
};

inline DecoderFeed teacher_forcing_feed(const Batch& b) {
  DecoderFeed f;
  f.rows = b.rows;
  f.len = b.comment_len - 1;
  f.input_ids.resize(static_cast<std::size_t>(f.rows * f.len));
  f.gold_ids.resize(static_cast<std::size_t>(f.rows * f.len));
  f.input_keep = Tensor::zeros({f.rows, f.len, f.len});
  f.weights = Tensor::zeros({f.rows, f.len});
  f.gold_lengths.resize(static_cast<std::size_t>(f.rows));
  for (int64_t r = 0; r < f.rows; ++r) {
    int64_t real = 0;
    for (int64_t q = 0; q < b.comment_len; ++q)
      if (b.comment_ids[static_cast<std::size_t>(r * b.comment_len + q)] !=
          kPadId)
        ++real;
    const int64_t gold_len = real - 1;  // tokens … <END>, <START> is input-only
    f.gold_lengths[static_cast<std::size_t>(r)] = static_cast<int>(gold_len);
    for (int64_t q = 0; q < f.len; ++q) {
      f.input_ids[static_cast<std::size_t>(r * f.len + q)] =
          b.comment_ids[static_cast<std::size_t>(r * b.comment_len + q)];
      f.gold_ids[static_cast<std::size_t>(r * f.len + q)] =
          b.comment_ids[static_cast<std::size_t>(r * b.comment_len + q + 1)];
      if (q < gold_len)
        f.weights[static_cast<std::size_t>(r * f.len + q)] =
            1.0 / static_cast<double>(gold_len);
      for (int64_t k = 0; k < f.len; ++k)
        f.input_keep[static_cast<std::size_t>((r * f.len + q) * f.len + k)] =
            b.comment_mask[static_cast<std::size_t>(
                (r * b.comment_len + q) * b.comment_len + k)];
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// Full forward, loss, decoding
// ---------------------------------------------------------------------------

namespace detail {

inline void check_channels(const ModelConfig& c, const Batch& b) {
  if (c.uses_graph() && (b.node_len == 0 || b.adjacency.numel() == 0))
    throw DataModelMismatch(std::string("mode ") + mode_name(c.mode) +
                            " needs the graph channel (nodes, edges)");
  if (c.mode == Mode::MMTrans && b.sbt_len == 0)
    throw DataModelMismatch("mode mmtrans needs the sbt channel");
  if (c.mode != Mode::MMTrans && b.code_len == 0)
    throw DataModelMismatch(std::string("mode ") + mode_name(c.mode) +
                            " needs the code channel");
}

}  // namespace detail

/// Probabilities (rows × feed.len × S) for one teacher-forced batch.
inline Value model_probs(Tape& t, ModelParams& p, const Batch& batch,
                         const DecoderFeed& feed, bool training,
                         std::mt19937_64* rng) {
  const ModelConfig& c = p.config;
  detail::check_channels(c, batch);
  std::optional<Value> graph;
  if (c.uses_graph()) graph = graph_encoder(t, p, batch, training, rng);
  const bool sbt_channel = (c.mode == Mode::MMTrans);
  Value seq = sequence_encoder(
      t, p, sbt_channel ? batch.sbt_ids : batch.code_ids, batch.rows,
      sbt_channel ? batch.sbt_len : batch.code_len,
      sbt_channel ? batch.sbt_mask : batch.code_mask, training, rng);
  return joint_decoder(t, p, feed.input_ids, feed.rows, feed.len,
                       feed.input_keep, graph, &batch.node_mask, seq,
                       sbt_channel ? batch.sbt_mask : batch.code_mask,
                       training, rng);
}

/// Eq.-13 batch loss from probabilities: mean over samples of the
/// per-sample mean negative log-probability of the gold tokens.
inline Value batch_loss(Tape& t, Value probs, const std::vector<int>& gold_ids,
                        const Tensor& weights) {
  const int64_t rows = probs.shape()[0];
  Value lp = gather_last(vlog(probs), gold_ids);
  Value weighted = mul(lp, t.constant(weights));
  return scale(sum_all(weighted), -1.0 / static_cast<double>(rows));
}

/// Convenience overload matching the (probs, targets, lengths) contract.
inline Value batch_loss(Tape& t, Value probs, const std::vector<int>& gold_ids,
                        const std::vector<int>& lengths) {
  const int64_t rows = probs.shape()[0];
  const int64_t len = probs.shape()[1];
  Tensor w = Tensor::zeros({rows, len});
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t q = 0; q < len; ++q)
      if (q < lengths[static_cast<std::size_t>(r)])
        w[static_cast<std::size_t>(r * len + q)] =
            1.0 / static_cast<double>(lengths[static_cast<std::size_t>(r)]);
  return batch_loss(t, probs, gold_ids, w);
}

/// Teacher-forced loss for one batch (the training objective).
inline Value model_loss(Tape& t, ModelParams& p, const Batch& batch,
                        const DecoderFeed& feed, bool training,
                        std::mt19937_64* rng) {
  Value probs = model_probs(t, p, batch, feed, training, rng);
  return batch_loss(t, probs, feed.gold_ids, feed.weights);
}

/// Greedy decoding: encoders run once; the decoder re-runs on the growing
/// prefix, taking the argmax over S each step. Returned rows exclude the
/// <START>/<END> sentinels. Deterministic (no dropout).
inline std::vector<std::vector<int>> greedy_decode(ModelParams& p,
                                                   const Batch& batch,
                                                   int max_len = 20) {
  const ModelConfig& c = p.config;
  detail::check_channels(c, batch);
  Tensor graph_out, seq_out;
  {
    Tape t;
    if (c.uses_graph())
      graph_out = graph_encoder(t, p, batch, false, nullptr).val();
    const bool sbt_channel = (c.mode == Mode::MMTrans);
    seq_out = sequence_encoder(
                  t, p, sbt_channel ? batch.sbt_ids : batch.code_ids,
                  batch.rows, sbt_channel ? batch.sbt_len : batch.code_len,
                  sbt_channel ? batch.sbt_mask : batch.code_mask, false,
                  nullptr)
                  .val();
  }
  const Tensor& seq_keep =
      (c.mode == Mode::MMTrans) ? batch.sbt_mask : batch.code_mask;

  const int64_t rows = batch.rows;
  std::vector<std::vector<int>> prefix(static_cast<std::size_t>(rows),
                                       std::vector<int>{kStartId});
  std::vector<bool> finished(static_cast<std::size_t>(rows), false);
  for (int step = 0; step < max_len; ++step) {
    const int64_t cur = static_cast<int64_t>(prefix[0].size());
    std::vector<int> flat(static_cast<std::size_t>(rows * cur));
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t q = 0; q < cur; ++q)
        flat[static_cast<std::size_t>(r * cur + q)] =
            prefix[static_cast<std::size_t>(r)][static_cast<std::size_t>(q)];
    Tensor causal = Tensor::zeros({rows, cur, cur});
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t q = 0; q < cur; ++q)
        for (int64_t k = 0; k <= q; ++k)
          causal[static_cast<std::size_t>((r * cur + q) * cur + k)] = 1.0;

    Tape t;
    std::optional<Value> graph;
    if (c.uses_graph()) graph = t.input(graph_out);
    Value probs =
        joint_decoder(t, p, flat, rows, cur, causal, graph, &batch.node_mask,
                      t.input(seq_out), seq_keep, false, nullptr);
    const Tensor& pr = probs.val();
    const int64_t S = pr.shape().back();
    bool all_done = true;
    for (int64_t r = 0; r < rows; ++r) {
      if (finished[static_cast<std::size_t>(r)]) continue;
      const std::size_t base =
          static_cast<std::size_t>((r * cur + (cur - 1)) * S);
      int best = 0;
      for (int64_t s = 1; s < S; ++s)
        if (pr[base + static_cast<std::size_t>(s)] >
            pr[base + static_cast<std::size_t>(best)])
          best = static_cast<int>(s);
      prefix[static_cast<std::size_t>(r)].push_back(best);
      if (best == kEndId)
        finished[static_cast<std::size_t>(r)] = true;
      else
        all_done = false;
    }
    // Rows already finished keep their length in step with the others.
    for (int64_t r = 0; r < rows; ++r)
      if (prefix[static_cast<std::size_t>(r)].size() !=
          static_cast<std::size_t>(cur) + 1)
        prefix[static_cast<std::size_t>(r)].push_back(kEndId);
    if (all_done) break;
  }

  std::vector<std::vector<int>> out(static_cast<std::size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    for (std::size_t q = 1; q < prefix[static_cast<std::size_t>(r)].size();
         ++q) {
      const int id = prefix[static_cast<std::size_t>(r)][q];
      if (id == kEndId) break;
      out[static_cast<std::size_t>(r)].push_back(id);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[9] = "MMTCKPT1";
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("checkpoint truncated");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& file,
                            ModelParams& params,
                            const std::map<std::string, uint64_t>& vocab_hashes) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out.write(kCheckpointMagic, 8);
  detail::write_pod(out, kCheckpointVersion);
  nlohmann::json header;
  header["config"] = config_to_json(params.config);
  header["vocab_hashes"] = vocab_hashes;
  const std::string hs = header.dump();
  detail::write_pod(out, static_cast<uint64_t>(hs.size()));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  auto all = params.all();
  detail::write_pod(out, static_cast<uint64_t>(all.size()));
  for (Parameter* p : all) {
    detail::write_pod(out, static_cast<uint64_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    detail::write_pod(out, static_cast<uint64_t>(p->value.rank()));
    for (int64_t e : p->value.shape()) detail::write_pod(out, e);
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.numel() *
                                           static_cast<int64_t>(sizeof(double))));
  }
  if (!out) throw IoError("short write to " + file.string());
}

struct CheckpointHeader {
  uint32_t version = 0;
  ModelConfig config;
  std::map<std::string, uint64_t> vocab_hashes;
};

inline CheckpointHeader read_checkpoint_header(std::istream& in,
                                               const std::string& name) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != std::string(kCheckpointMagic, 8))
    throw IoError("not a checkpoint file: " + name);
  CheckpointHeader h;
  h.version = detail::read_pod<uint32_t>(in);
  if (h.version != kCheckpointVersion)
    throw DataModelMismatch("checkpoint format version " +
                            std::to_string(h.version) + " unsupported");
  const auto len = detail::read_pod<uint64_t>(in);
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("checkpoint truncated: " + name);
  nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
  if (header.is_discarded())
    throw IoError("corrupt checkpoint header: " + name);
  h.config = config_from_json(header.at("config"));
  for (auto& [k, v] : header.at("vocab_hashes").items())
    h.vocab_hashes[k] = v.get<uint64_t>();
  return h;
}

inline CheckpointHeader read_checkpoint_header(
    const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  return read_checkpoint_header(in, file.string());
}

/// Load parameters. When `expect` / `expect_hashes` are given, any config or
/// vocabulary-fingerprint difference refuses the load.
inline ModelParams load_checkpoint(
    const std::filesystem::path& file,
    const std::optional<ModelConfig>& expect = std::nullopt,
    const std::optional<std::map<std::string, uint64_t>>& expect_hashes =
        std::nullopt) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  CheckpointHeader h = read_checkpoint_header(in, file.string());
  if (expect && config_to_json(*expect) != config_to_json(h.config))
    throw DataModelMismatch(
        "checkpoint was trained under a different configuration");
  if (expect_hashes && *expect_hashes != h.vocab_hashes)
    throw DataModelMismatch(
        "checkpoint vocabularies do not match the dataset");

  ModelParams params(h.config);
  auto all = params.all();
  const auto count = detail::read_pod<uint64_t>(in);
  if (count != all.size())
    throw DataModelMismatch("checkpoint parameter count " +
                            std::to_string(count) + " != expected " +
                            std::to_string(all.size()));
  for (Parameter* p : all) {
    const auto name_len = detail::read_pod<uint64_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (name != p->name)
      throw DataModelMismatch("checkpoint parameter '" + name +
                              "' does not match expected '" + p->name + "'");
    const auto rank = detail::read_pod<uint64_t>(in);
    Shape shape(rank);
    for (auto& e : shape) e = detail::read_pod<int64_t>(in);
    if (shape != p->value.shape())
      throw DataModelMismatch("checkpoint parameter '" + name +
                              "' has shape " + shape_str(shape) +
                              ", expected " + shape_str(p->value.shape()));
    in.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.numel() *
                                         static_cast<int64_t>(sizeof(double))));
    if (!in) throw IoError("checkpoint truncated: " + file.string());
  }
  return params;
}

}  // namespace mmtrans

#endif  // MMTRANS_MODEL_HPP_
