#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace tspnet {

using Sentence = std::vector<std::string>;

/// Length of the longest common subsequence, O(|a|·|b|) time.
std::size_t lcs_length(const Sentence& a, const Sentence& b);

/// Sentence-level ROUGE-L F1 (β = 1) on the 0–100 scale; 0 when there is
/// no common token. Both sentences must be non-empty.
double rouge_l(const Sentence& candidate, const Sentence& reference);

struct BleuOptions {
  std::size_t max_n = 4;
  /// Add-one smoothing of the n > 1 precisions. Off: any zero precision
  /// makes BLEU-n zero.
  bool smooth = false;
};

struct NgramPrecision {
  std::size_t matches = 0;  // clipped
  std::size_t total = 0;
  double value() const { return total ? static_cast<double>(matches) / static_cast<double>(total) : 0.0; }
};

struct ScoreReport {
  std::map<std::size_t, double> bleu;  // n → BLEU-n, 0–100
  double rouge_l = 0;                   // corpus mean, 0–100
  double brevity_penalty = 1;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
  std::vector<NgramPrecision> precisions;  // index n−1
};

/// Corpus BLEU with one reference per candidate: clipped n-gram counts are
/// pooled over the corpus, BLEU-n is the geometric mean of p₁..pₙ times
/// BP = min(1, e^{1 − r/c}), on the 0–100 scale. Fills bleu[1..max_n].
ScoreReport bleu(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references,
                 const BleuOptions& options = {});

/// Corpus BLEU plus mean sentence ROUGE-L (an empty candidate scores 0).
ScoreReport score_corpus(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references,
                         const BleuOptions& options = {});

nlohmann::json to_json(const ScoreReport& report);

}  // namespace tspnet
