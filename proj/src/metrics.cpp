#include "tspnet/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "tspnet/errors.hpp"

namespace tspnet {

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(const Sentence& s, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    ++counts[std::vector<std::string>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                      s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

std::size_t lcs_length(const Sentence& a, const Sentence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Sentence& candidate, const Sentence& reference) {
  if (candidate.empty() || reference.empty()) throw PreconditionError("rouge_l: empty sentence");
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  if (p + r == 0) return 0;
  return 100.0 * 2 * p * r / (p + r);
}

ScoreReport bleu(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references,
                 const BleuOptions& options) {
  if (candidates.empty()) throw PreconditionError("bleu: empty corpus");
  if (candidates.size() != references.size()) {
    throw PreconditionError("bleu: " + std::to_string(candidates.size()) + " candidates but " +
                            std::to_string(references.size()) + " references");
  }
  if (options.max_n == 0) throw PreconditionError("bleu: max_n must be positive");

  ScoreReport report;
  report.precisions.resize(options.max_n);
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    report.candidate_length += candidates[s].size();
    report.reference_length += references[s].size();
    for (std::size_t n = 1; n <= options.max_n; ++n) {
      const auto cand = ngram_counts(candidates[s], n);
      const auto ref = ngram_counts(references[s], n);
      for (const auto& [gram, count] : cand) {
        auto it = ref.find(gram);
        report.precisions[n - 1].matches += std::min(count, it == ref.end() ? std::size_t{0} : it->second);
        report.precisions[n - 1].total += count;
      }
    }
  }

  const double c = static_cast<double>(report.candidate_length);
  const double r = static_cast<double>(report.reference_length);
  report.brevity_penalty = c == 0 ? 0.0 : (c >= r ? 1.0 : std::exp(1.0 - r / c));

  double log_sum = 0;
  bool zero = c == 0;
  for (std::size_t n = 1; n <= options.max_n; ++n) {
    const auto& prec = report.precisions[n - 1];
    double p = prec.value();
    if (options.smooth && n > 1) {
      p = (static_cast<double>(prec.matches) + 1) / (static_cast<double>(prec.total) + 1);
    }
    if (p == 0) zero = true;
    if (!zero) log_sum += std::log(p);
    report.bleu[n] = zero ? 0.0 : 100.0 * report.brevity_penalty * std::exp(log_sum / static_cast<double>(n));
  }
  return report;
}

ScoreReport score_corpus(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references,
                         const BleuOptions& options) {
  ScoreReport report = bleu(candidates, references, options);
  double total = 0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    if (candidates[s].empty() || references[s].empty()) continue;
    total += rouge_l(candidates[s], references[s]);
  }
  report.rouge_l = total / static_cast<double>(candidates.size());
  return report;
}

nlohmann::json to_json(const ScoreReport& report) {
  nlohmann::json j;
  for (const auto& [n, score] : report.bleu) j["bleu"]["bleu" + std::to_string(n)] = score;
  j["rouge_l"] = report.rouge_l;
  j["brevity_penalty"] = report.brevity_penalty;
  j["candidate_length"] = report.candidate_length;
  j["reference_length"] = report.reference_length;
  nlohmann::json precisions = nlohmann::json::array();
  for (std::size_t n = 0; n < report.precisions.size(); ++n) {
    precisions.push_back({{"n", n + 1},
                          {"matches", report.precisions[n].matches},
                          {"total", report.precisions[n].total},
                          {"precision", report.precisions[n].value()}});
  }
  j["precisions"] = precisions;
  return j;
}

}  // namespace tspnet
