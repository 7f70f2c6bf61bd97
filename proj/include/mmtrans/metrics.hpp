#ifndef MMTRANS_METRICS_HPP_
#define MMTRANS_METRICS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmtrans/errors.hpp"
#include "mmtrans/porter.hpp"

namespace mmtrans {

using Tokens = std::vector<std::string>;

/// Corpus-level evaluation summary. All fields live in [0,1]; display code
/// may scale by 100.
struct MetricReport {
  double s_bleu = 0.0;
  double c_bleu = 0.0;
  double rouge_lcs_f1 = 0.0;
  double meteor = 0.0;
};

namespace detail {

constexpr int kBleuMaxOrder = 4;
constexpr double kSmoothingEpsilon = 0.1;

/// n-gram multiset of a token list, keyed by the tokens joined with an
/// unprintable separator.
inline std::map<std::string, int> ngram_counts(const Tokens& tokens, int n) {
  std::map<std::string, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t start = 0; start + static_cast<std::size_t>(n) <= tokens.size(); ++start) {
    std::string key;
    for (int offset = 0; offset < n; ++offset) {
      if (offset > 0) key.push_back('\x1f');
      key += tokens[start + static_cast<std::size_t>(offset)];
    }
    ++counts[key];
  }
  return counts;
}

/// Clipped n-gram matches and the candidate's n-gram total for one order.
struct NgramTally {
  std::int64_t matches = 0;
  std::int64_t total = 0;
};

inline NgramTally tally_ngrams(const Tokens& candidate, const Tokens& reference, int n) {
  NgramTally tally;
  if (static_cast<int>(candidate.size()) < n) return tally;
  tally.total = static_cast<std::int64_t>(candidate.size()) - n + 1;
  const auto cand_counts = ngram_counts(candidate, n);
  const auto ref_counts = ngram_counts(reference, n);
  for (const auto& [gram, count] : cand_counts) {
    const auto hit = ref_counts.find(gram);
    if (hit != ref_counts.end())
      tally.matches += std::min<std::int64_t>(count, hit->second);
  }
  return tally;
}

inline double brevity_penalty(std::int64_t candidate_len, std::int64_t reference_len) {
  if (candidate_len >= reference_len) return 1.0;
  return std::exp(1.0 - static_cast<double>(reference_len) / static_cast<double>(candidate_len));
}

}  // namespace detail

/// Sentence-level composite BLEU: the arithmetic mean of the modified
/// 1..4-gram precisions times the brevity penalty. A zero match count for an
/// order is replaced by the smoothing-1 value 0.1/denominator (with the
/// denominator floored at one so orders longer than the candidate still
/// contribute); an empty candidate scores zero outright.
inline double sentence_bleu(const Tokens& candidate, const Tokens& reference) {
  if (reference.empty())
    throw EmptyReference("sentence_bleu needs a non-empty reference");
  if (candidate.empty()) return 0.0;
  double precision_sum = 0.0;
  for (int n = 1; n <= detail::kBleuMaxOrder; ++n) {
    const auto tally = detail::tally_ngrams(candidate, reference, n);
    if (tally.matches > 0) {
      precision_sum += static_cast<double>(tally.matches) / static_cast<double>(tally.total);
    } else {
      precision_sum += detail::kSmoothingEpsilon /
                       static_cast<double>(std::max<std::int64_t>(tally.total, 1));
    }
  }
  const double mean_precision = precision_sum / detail::kBleuMaxOrder;
  return mean_precision * detail::brevity_penalty(
                              static_cast<std::int64_t>(candidate.size()),
                              static_cast<std::int64_t>(reference.size()));
}

/// Corpus-level composite BLEU: n-gram matches and totals are pooled over
/// every pair before the per-order precisions are formed (no smoothing at
/// the corpus level), and the brevity penalty uses summed lengths.
inline double corpus_bleu(const std::vector<std::pair<Tokens, Tokens>>& pairs) {
  if (pairs.empty()) throw EmptyCorpus("corpus_bleu needs at least one pair");
  std::int64_t matches[detail::kBleuMaxOrder] = {0, 0, 0, 0};
  std::int64_t totals[detail::kBleuMaxOrder] = {0, 0, 0, 0};
  std::int64_t candidate_len = 0;
  std::int64_t reference_len = 0;
  for (const auto& [candidate, reference] : pairs) {
    if (reference.empty())
      throw EmptyReference("corpus_bleu met a pair with an empty reference");
    candidate_len += static_cast<std::int64_t>(candidate.size());
    reference_len += static_cast<std::int64_t>(reference.size());
    for (int n = 1; n <= detail::kBleuMaxOrder; ++n) {
      const auto tally = detail::tally_ngrams(candidate, reference, n);
      matches[n - 1] += tally.matches;
      totals[n - 1] += tally.total;
    }
  }
  if (candidate_len == 0) return 0.0;
  double precision_sum = 0.0;
  for (int n = 1; n <= detail::kBleuMaxOrder; ++n) {
    if (totals[n - 1] > 0)
      precision_sum += static_cast<double>(matches[n - 1]) / static_cast<double>(totals[n - 1]);
  }
  const double mean_precision = precision_sum / detail::kBleuMaxOrder;
  return mean_precision * detail::brevity_penalty(candidate_len, reference_len);
}

/// Length of the longest common subsequence, by dynamic programming.
inline int lcs_length(const Tokens& a, const Tokens& b) {
  const std::size_t rows = a.size();
  const std::size_t cols = b.size();
  std::vector<int> prev(cols + 1, 0);
  std::vector<int> curr(cols + 1, 0);
  for (std::size_t i = 1; i <= rows; ++i) {
    for (std::size_t j = 1; j <= cols; ++j) {
      if (a[i - 1] == b[j - 1])
        curr[j] = prev[j - 1] + 1;
      else
        curr[j] = std::max(prev[j], curr[j - 1]);
    }
    std::swap(prev, curr);
  }
  return prev[cols];
}

/// ROUGE-LCS with the plain (β=1) F-measure: P = LCS/|candidate|,
/// R = LCS/|reference|, F1 = 2PR/(P+R), zero when nothing is shared.
inline double rouge_lcs_f1(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty())
    throw EmptyInput("rouge_lcs_f1 needs non-empty candidate and reference");
  const double lcs = lcs_length(candidate, reference);
  const double precision = lcs / static_cast<double>(candidate.size());
  const double recall = lcs / static_cast<double>(reference.size());
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

/// Optional third METEOR matching stage: returns true when two surface
/// tokens should be treated as synonyms. The default (empty) predicate
/// disables the stage, leaving exact + stem matching only.
using SynonymPredicate = std::function<bool(const std::string&, const std::string&)>;

/// METEOR with exact-match and Porter-stem stages (plus an optional synonym
/// stage). Each stage walks the candidate left to right and aligns each
/// still-unmatched token with the first unmatched reference position that
/// agrees under the stage's equivalence. With m matches and the alignment's
/// chunk count: F_mean = 10PR/(R+9P), penalty = 0.5·(chunks/m)³, and the
/// score is F_mean·(1−penalty); zero matches score zero.
inline double meteor(const Tokens& candidate, const Tokens& reference,
                     const SynonymPredicate& synonyms = {}) {
  if (candidate.empty() || reference.empty())
    throw EmptyInput("meteor needs non-empty candidate and reference");

  std::vector<int> aligned_ref(candidate.size(), -1);
  std::vector<bool> ref_used(reference.size(), false);
  const auto run_stage = [&](const std::function<bool(const std::string&, const std::string&)>& same) {
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      if (aligned_ref[i] >= 0) continue;
      for (std::size_t j = 0; j < reference.size(); ++j) {
        if (ref_used[j]) continue;
        if (same(candidate[i], reference[j])) {
          aligned_ref[i] = static_cast<int>(j);
          ref_used[j] = true;
          break;
        }
      }
    }
  };
  run_stage([](const std::string& a, const std::string& b) { return a == b; });
  run_stage([](const std::string& a, const std::string& b) {
    return porter_stem(a) == porter_stem(b);
  });
  if (synonyms) run_stage(synonyms);

  int matches = 0;
  for (int j : aligned_ref)
    if (j >= 0) ++matches;
  if (matches == 0) return 0.0;

  const double precision = static_cast<double>(matches) / static_cast<double>(candidate.size());
  const double recall = static_cast<double>(matches) / static_cast<double>(reference.size());
  const double f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);

  // Chunks: maximal runs of matched pairs contiguous in both sequences,
  // scanned in candidate order.
  int chunks = 0;
  int prev_i = -2;
  int prev_j = -2;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    if (aligned_ref[i] < 0) continue;
    if (static_cast<int>(i) != prev_i + 1 || aligned_ref[i] != prev_j + 1) ++chunks;
    prev_i = static_cast<int>(i);
    prev_j = aligned_ref[i];
  }
  const double fragmentation = static_cast<double>(chunks) / static_cast<double>(matches);
  const double penalty = 0.5 * fragmentation * fragmentation * fragmentation;
  return f_mean * (1.0 - penalty);
}

/// Corpus evaluation over aligned candidate/reference lists: S-BLEU, ROUGE,
/// and METEOR are averaged per pair; C-BLEU pools counts over the corpus. An
/// empty candidate line contributes zero to the averaged metrics instead of
/// tripping their non-empty preconditions.
inline MetricReport evaluate_pairs(const std::vector<Tokens>& candidates,
                                   const std::vector<Tokens>& references) {
  if (candidates.size() != references.size())
    throw ShapeError("evaluate_pairs needs one reference per candidate");
  if (candidates.empty())
    throw EmptyCorpus("evaluate_pairs needs at least one pair");
  MetricReport report;
  std::vector<std::pair<Tokens, Tokens>> pairs;
  pairs.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    pairs.emplace_back(candidates[i], references[i]);
    report.s_bleu += sentence_bleu(candidates[i], references[i]);
    if (!candidates[i].empty()) {
      report.rouge_lcs_f1 += rouge_lcs_f1(candidates[i], references[i]);
      report.meteor += meteor(candidates[i], references[i]);
    }
  }
  const double count = static_cast<double>(candidates.size());
  report.s_bleu /= count;
  report.rouge_lcs_f1 /= count;
  report.meteor /= count;
  report.c_bleu = corpus_bleu(pairs);
  return report;
}

inline nlohmann::json report_to_json(const MetricReport& report) {
  return nlohmann::json{{"s_bleu", report.s_bleu},
                        {"c_bleu", report.c_bleu},
                        {"rouge_lcs_f1", report.rouge_lcs_f1},
                        {"meteor", report.meteor}};
}

inline MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport report;
  report.s_bleu = j.at("s_bleu").get<double>();
  report.c_bleu = j.at("c_bleu").get<double>();
  report.rouge_lcs_f1 = j.at("rouge_lcs_f1").get<double>();
  report.meteor = j.at("meteor").get<double>();
  return report;
}

}  // namespace mmtrans

#endif  // MMTRANS_METRICS_HPP_
