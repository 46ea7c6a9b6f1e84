#pragma once

#include <array>
#include <string>
#include <vector>

namespace graft {

using TokenSeq = std::vector<std::string>;

struct BleuReport {
  double score = 0;                     // corpus BLEU-4, 0..100, unsmoothed
  std::array<double, 4> precisions{};  // clipped n-gram precisions
  double brevity_penalty = 1;
  long hyp_length = 0;
  long ref_length = 0;                  // sum of per-example closest reference lengths
  std::vector<double> per_example;      // add-one smoothed BLEU per example, 0..100
};

// Corpus BLEU-4: geometric mean of clipped 1..4-gram precisions with uniform
// weights, multiplied by exp(1 - r/c) when the hypothesis corpus is shorter
// than the closest-reference length sum. No smoothing at the corpus level.
BleuReport corpus_bleu4(const std::vector<TokenSeq>& hypotheses,
                        const std::vector<std::vector<TokenSeq>>& references);

enum class RougeVariant { lcs, four };

struct RougeScore {
  double f = 0;
  double precision = 0;
  double recall = 0;
};

struct RougeReport {
  RougeScore corpus;                    // mean over examples, best reference each
  std::vector<RougeScore> per_example;
};

// ROUGE-L (longest common subsequence, F with beta = 1) or ROUGE-4 (4-gram
// overlap). The best reference per example is chosen by F-measure.
RougeReport corpus_rouge(const std::vector<TokenSeq>& hypotheses,
                         const std::vector<std::vector<TokenSeq>>& references,
                         RougeVariant variant);

}  // namespace graft
