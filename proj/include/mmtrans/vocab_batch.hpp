#ifndef MMTRANS_VOCAB_BATCH_HPP_
#define MMTRANS_VOCAB_BATCH_HPP_

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mmtrans/corpus.hpp"
#include "mmtrans/errors.hpp"
#include "mmtrans/tensor.hpp"

namespace mmtrans {

// ---------------------------------------------------------------------------
// Vocabularies
// ---------------------------------------------------------------------------

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kStartId = 2;
inline constexpr int kEndId = 3;
inline constexpr int kReservedIds = 4;

inline constexpr const char* kPadName = "<PAD>";
inline constexpr const char* kUnkName = "<UNK>";

enum class Channel { Sbt, Nodes, Comment, Code };

inline const char* channel_name(Channel c) {
  switch (c) {
    case Channel::Sbt: return "sbt";
    case Channel::Nodes: return "nodes";
    case Channel::Comment: return "comment";
    case Channel::Code: return "code";
  }
  return "?";
}

/// Token↔id table. Ids 0–3 are reserved (<PAD>, <UNK>, <START>, <END>);
/// every other id names one distinct training token, first-seen order.
class Vocab {
 public:
  Vocab() : Vocab(Channel::Comment) {}
  explicit Vocab(Channel channel) : channel_(channel) {
    id_to_token_ = {kPadName, kUnkName, kStartTok, kEndTok};
    for (int i = 0; i < kReservedIds; ++i) to_id_[id_to_token_[i]] = i;
  }

  Channel channel() const { return channel_; }
  int size() const { return static_cast<int>(id_to_token_.size()); }

  /// Insert a token if new; reserved names never get fresh ids.
  void add(const std::string& token) {
    if (to_id_.count(token)) return;
    to_id_[token] = size();
    id_to_token_.push_back(token);
  }

  int encode(const std::string& token) const {
    auto it = to_id_.find(token);
    return it == to_id_.end() ? kUnkId : it->second;
  }

  const std::string& decode(int id) const {
    if (id < 0 || id >= size()) return id_to_token_[kUnkId];
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  std::vector<int> encode_all(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(encode(t));
    return out;
  }

  /// FNV-1a over the ordered token list; checkpoints pin this.
  uint64_t fingerprint() const {
    uint64_t h = 1469598103934665603ull;
    for (const std::string& t : id_to_token_) {
      for (char c : t) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
      }
      h ^= 0x1f;
      h *= 1099511628211ull;
    }
    return h;
  }

  const std::vector<std::string>& tokens() const { return id_to_token_; }

 private:
  Channel channel_;
  std::unordered_map<std::string, int> to_id_;
  std::vector<std::string> id_to_token_;
};

namespace detail {

inline const std::vector<std::string>& channel_tokens(const PairSample& s,
                                                      Channel c) {
  switch (c) {
    case Channel::Sbt: return s.sbt;
    case Channel::Nodes: return s.nodes;
    case Channel::Comment: return s.comment_tokens;
    case Channel::Code: return s.code_tokens;
  }
  return s.comment_tokens;
}

}  // namespace detail

/// Build one channel's vocabulary from the training split.
inline Vocab build_vocab(const std::vector<PairSample>& train, Channel channel) {
  if (train.empty())
    throw EmptyCorpus("cannot build a vocabulary from an empty training split");
  Vocab v(channel);
  for (const PairSample& s : train)
    for (const std::string& t : detail::channel_tokens(s, channel)) v.add(t);
  return v;
}

/// The four channel vocabularies a model consumes.
struct VocabSet {
  Vocab sbt{Channel::Sbt};
  Vocab nodes{Channel::Nodes};
  Vocab comment{Channel::Comment};
  Vocab code{Channel::Code};
};

inline VocabSet build_vocab_set(const std::vector<PairSample>& train) {
  VocabSet vs;
  vs.sbt = build_vocab(train, Channel::Sbt);
  vs.nodes = build_vocab(train, Channel::Nodes);
  vs.comment = build_vocab(train, Channel::Comment);
  vs.code = build_vocab(train, Channel::Code);
  return vs;
}

/// One token per line; line number = id − 4 (reserved ids are implicit).
inline void save_vocab(const Vocab& v, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  for (int id = kReservedIds; id < v.size(); ++id) out << v.decode(id) << '\n';
}

inline Vocab load_vocab(const std::filesystem::path& file, Channel channel) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  Vocab v(channel);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) v.add(line);
  return v;
}

/// Write <channel>.vocab files plus vocab.meta into `dir`.
inline void save_vocab_set(const VocabSet& vs,
                           const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  nlohmann::json meta;
  for (const Vocab* v : {&vs.sbt, &vs.nodes, &vs.comment, &vs.code}) {
    const std::string name = channel_name(v->channel());
    save_vocab(*v, dir / (name + ".vocab"));
    meta[name] = v->size();
  }
  std::ofstream out(dir / "vocab.meta");
  if (!out) throw IoError("cannot write " + (dir / "vocab.meta").string());
  out << meta.dump(2) << '\n';
}

inline VocabSet load_vocab_set(const std::filesystem::path& dir) {
  VocabSet vs;
  vs.sbt = load_vocab(dir / "sbt.vocab", Channel::Sbt);
  vs.nodes = load_vocab(dir / "nodes.vocab", Channel::Nodes);
  vs.comment = load_vocab(dir / "comment.vocab", Channel::Comment);
  vs.code = load_vocab(dir / "code.vocab", Channel::Code);
  return vs;
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

inline constexpr int kBatchSize = 100;

/// One padded mini-batch. Masks use keep/block semantics: 1.0 keeps a
/// position, 0.0 blocks it. The adjacency stack already carries self-loops
/// (Ã = A + I) on real node positions; padded rows and columns stay zero.
/// comment_ids hold <START> tokens <END> so the trainer can slice
/// teacher-forcing input (drop last) and gold labels (drop first).
struct Batch {
  int64_t rows = 0;
  int64_t node_len = 0, sbt_len = 0, comment_len = 0, code_len = 0;
  std::vector<int> node_ids;     // rows × node_len
  std::vector<int> sbt_ids;      // rows × sbt_len
  std::vector<int> comment_ids;  // rows × comment_len
  std::vector<int> code_ids;     // rows × code_len
  Tensor adjacency;              // rows × node_len × node_len
  Tensor node_mask;              // rows × node_len
  Tensor sbt_mask;               // rows × sbt_len
  Tensor code_mask;              // rows × code_len
  Tensor comment_mask;           // rows × comment_len × comment_len
  std::vector<int> sample_indices;  // positions into the source split
};

namespace detail {

struct BatchLengths {
  int64_t node = 0, sbt = 0, comment = 0, code = 0;
};

/// Encode a run of samples into one padded batch. `floors` lets callers pad
/// beyond the natural per-batch maxima (used to check padding neutrality).
inline Batch encode_batch(const std::vector<PairSample>& split,
                          const std::vector<int>& indices, const VocabSet& vs,
                          BatchLengths floors = {}) {
  Batch b;
  b.rows = static_cast<int64_t>(indices.size());
  b.sample_indices = indices;
  BatchLengths len = floors;
  for (int idx : indices) {
    const PairSample& s = split[static_cast<std::size_t>(idx)];
    len.node = std::max<int64_t>(len.node, static_cast<int64_t>(s.nodes.size()));
    len.sbt = std::max<int64_t>(len.sbt, static_cast<int64_t>(s.sbt.size()));
    len.comment = std::max<int64_t>(
        len.comment, static_cast<int64_t>(s.comment_tokens.size()) + 2);
    len.code =
        std::max<int64_t>(len.code, static_cast<int64_t>(s.code_tokens.size()));
  }
  b.node_len = len.node;
  b.sbt_len = len.sbt;
  b.comment_len = len.comment;
  b.code_len = len.code;

  b.node_ids.assign(static_cast<std::size_t>(b.rows * b.node_len), kPadId);
  b.sbt_ids.assign(static_cast<std::size_t>(b.rows * b.sbt_len), kPadId);
  b.comment_ids.assign(static_cast<std::size_t>(b.rows * b.comment_len),
                       kPadId);
  b.code_ids.assign(static_cast<std::size_t>(b.rows * b.code_len), kPadId);
  // A channel absent from every sample keeps a default (empty) tensor; the
  // model's mode contract decides whether that is acceptable.
  if (b.node_len > 0) {
    b.adjacency = Tensor::zeros({b.rows, b.node_len, b.node_len});
    b.node_mask = Tensor::zeros({b.rows, b.node_len});
  }
  if (b.sbt_len > 0) b.sbt_mask = Tensor::zeros({b.rows, b.sbt_len});
  if (b.code_len > 0) b.code_mask = Tensor::zeros({b.rows, b.code_len});
  b.comment_mask = Tensor::zeros({b.rows, b.comment_len, b.comment_len});

  for (int64_t r = 0; r < b.rows; ++r) {
    const PairSample& s = split[static_cast<std::size_t>(indices[r])];

    const auto node_row = vs.nodes.encode_all(s.nodes);
    for (std::size_t p = 0; p < node_row.size(); ++p) {
      b.node_ids[static_cast<std::size_t>(r * b.node_len) + p] = node_row[p];
      b.node_mask[static_cast<std::size_t>(r * b.node_len) + p] = 1.0;
      b.adjacency[static_cast<std::size_t>(
          (r * b.node_len + static_cast<int64_t>(p)) * b.node_len) +
          p] = 1.0;
    }
    for (auto [i, j] : s.edges) {
      b.adjacency[static_cast<std::size_t>((r * b.node_len + i) * b.node_len) +
                  j] = 1.0;
      b.adjacency[static_cast<std::size_t>((r * b.node_len + j) * b.node_len) +
                  i] = 1.0;
    }

    const auto sbt_row = vs.sbt.encode_all(s.sbt);
    for (std::size_t p = 0; p < sbt_row.size(); ++p) {
      b.sbt_ids[static_cast<std::size_t>(r * b.sbt_len) + p] = sbt_row[p];
      b.sbt_mask[static_cast<std::size_t>(r * b.sbt_len) + p] = 1.0;
    }

    const auto code_row = vs.code.encode_all(s.code_tokens);
    for (std::size_t p = 0; p < code_row.size(); ++p) {
      b.code_ids[static_cast<std::size_t>(r * b.code_len) + p] = code_row[p];
      b.code_mask[static_cast<std::size_t>(r * b.code_len) + p] = 1.0;
    }

    std::vector<int> comment_row;
    comment_row.push_back(kStartId);
    for (const auto& t : s.comment_tokens)
      comment_row.push_back(vs.comment.encode(t));
    comment_row.push_back(kEndId);
    for (std::size_t p = 0; p < comment_row.size(); ++p)
      b.comment_ids[static_cast<std::size_t>(r * b.comment_len) + p] =
          comment_row[p];
    // Combined mask: query q may attend key p iff p ≤ q (look-ahead)
    // and p is a real token (padding).
    const int64_t real = static_cast<int64_t>(comment_row.size());
    for (int64_t q = 0; q < b.comment_len; ++q)
      for (int64_t p = 0; p <= q && p < real; ++p)
        b.comment_mask[static_cast<std::size_t>(
            (r * b.comment_len + q) * b.comment_len) + p] = 1.0;
  }
  return b;
}

inline uint64_t epoch_seed(uint64_t seed, int epoch) {
  return seed ^ (0x9e3779b97f4a7c15ull *
                 (static_cast<uint64_t>(epoch) + 1ull));
}

}  // namespace detail

/// Deterministic per-epoch shuffle, then fixed-size batches (last one short).
inline std::vector<Batch> make_batches(const std::vector<PairSample>& split,
                                       const VocabSet& vocabs, int batch_size,
                                       uint64_t seed, int epoch) {
  std::vector<int> order(split.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    order[i] = static_cast<int>(i);
  std::mt19937_64 rng(detail::epoch_seed(seed, epoch));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);

  std::vector<Batch> batches;
  for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(order.size(), at + static_cast<std::size_t>(batch_size));
    std::vector<int> indices(order.begin() + static_cast<long>(at),
                             order.begin() + static_cast<long>(end));
    batches.push_back(detail::encode_batch(split, indices, vocabs));
  }
  return batches;
}

/// Batches in source order, for validation/test decoding.
inline std::vector<Batch> make_eval_batches(const std::vector<PairSample>& split,
                                            const VocabSet& vocabs,
                                            int batch_size) {
  std::vector<Batch> batches;
  const std::size_t n = split.size();
  for (std::size_t at = 0; at < n; at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(n, at + static_cast<std::size_t>(batch_size));
    std::vector<int> indices;
    for (std::size_t i = at; i < end; ++i) indices.push_back(static_cast<int>(i));
    batches.push_back(detail::encode_batch(split, indices, vocabs));
  }
  return batches;
}

/// Per-channel content fingerprints, as stored in checkpoints.
inline std::map<std::string, uint64_t> vocab_fingerprints(const VocabSet& vs) {
  return {{"sbt", vs.sbt.fingerprint()},
          {"nodes", vs.nodes.fingerprint()},
          {"comment", vs.comment.fingerprint()},
          {"code", vs.code.fingerprint()}};
}

}  // namespace mmtrans

#endif  // MMTRANS_VOCAB_BATCH_HPP_
