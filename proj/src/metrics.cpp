#include "graft/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "graft/errors.hpp"

namespace graft {

namespace {

using NgramCounts = std::map<std::vector<std::string>, long>;

NgramCounts ngram_counts(const TokenSeq& tokens, int n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

long total_ngrams(const TokenSeq& tokens, int n) {
  return tokens.size() + 1 >= static_cast<std::size_t>(n)
             ? static_cast<long>(tokens.size()) - n + 1
             : 0;
}

// Clipped matches against the per-gram maximum over all references.
long clipped_matches(const NgramCounts& hyp, const std::vector<NgramCounts>& refs) {
  long matches = 0;
  for (const auto& [gram, count] : hyp) {
    long best = 0;
    for (const auto& rc : refs) {
      auto it = rc.find(gram);
      if (it != rc.end()) best = std::max(best, it->second);
    }
    matches += std::min(count, best);
  }
  return matches;
}

long closest_ref_length(const TokenSeq& hyp, const std::vector<TokenSeq>& refs) {
  long best = static_cast<long>(refs[0].size());
  for (const auto& r : refs) {
    const long len = static_cast<long>(r.size());
    const long hyp_len = static_cast<long>(hyp.size());
    if (std::abs(len - hyp_len) < std::abs(best - hyp_len) ||
        (std::abs(len - hyp_len) == std::abs(best - hyp_len) && len < best))
      best = len;
  }
  return best;
}

void check_aligned(const std::vector<TokenSeq>& hyps,
                   const std::vector<std::vector<TokenSeq>>& refs) {
  if (hyps.empty()) throw data_error("metrics: empty corpus");
  if (hyps.size() != refs.size())
    throw data_error("metrics: " + std::to_string(hyps.size()) + " hypotheses for " +
                     std::to_string(refs.size()) + " reference lists");
  for (const auto& r : refs)
    if (r.empty()) throw data_error("metrics: example without references");
}

long lcs_length(const TokenSeq& a, const TokenSeq& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<long> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

RougeScore f_measure(double matches, double hyp_total, double ref_total) {
  RougeScore s;
  s.precision = hyp_total > 0 ? matches / hyp_total : 0.0;
  s.recall = ref_total > 0 ? matches / ref_total : 0.0;
  s.f = s.precision + s.recall > 0
            ? 2 * s.precision * s.recall / (s.precision + s.recall)
            : 0.0;
  return s;
}

}  // namespace

BleuReport corpus_bleu4(const std::vector<TokenSeq>& hypotheses,
                        const std::vector<std::vector<TokenSeq>>& references) {
  check_aligned(hypotheses, references);
  BleuReport report;
  std::array<long, 4> matches{};
  std::array<long, 4> totals{};

  for (std::size_t e = 0; e < hypotheses.size(); ++e) {
    const TokenSeq& hyp = hypotheses[e];
    report.hyp_length += static_cast<long>(hyp.size());
    report.ref_length += closest_ref_length(hyp, references[e]);

    std::array<long, 4> ex_matches{};
    std::array<long, 4> ex_totals{};
    for (int n = 1; n <= 4; ++n) {
      std::vector<NgramCounts> ref_counts;
      for (const auto& r : references[e]) ref_counts.push_back(ngram_counts(r, n));
      ex_matches[n - 1] = clipped_matches(ngram_counts(hyp, n), ref_counts);
      ex_totals[n - 1] = total_ngrams(hyp, n);
      matches[n - 1] += ex_matches[n - 1];
      totals[n - 1] += ex_totals[n - 1];
    }

    // per-example score with add-one smoothing, for reporting only
    const long c = static_cast<long>(hyp.size());
    const long r = closest_ref_length(hyp, references[e]);
    double log_sum = 0;
    for (int n = 0; n < 4; ++n)
      log_sum += std::log((ex_matches[n] + 1.0) / (ex_totals[n] + 1.0));
    const double bp = c == 0 ? 0.0 : (c > r ? 1.0 : std::exp(1.0 - double(r) / double(c)));
    report.per_example.push_back(100.0 * bp * std::exp(log_sum / 4));
  }

  bool all_positive = true;
  for (int n = 0; n < 4; ++n) {
    report.precisions[n] =
        totals[n] > 0 ? static_cast<double>(matches[n]) / static_cast<double>(totals[n]) : 0.0;
    all_positive = all_positive && report.precisions[n] > 0;
  }
  report.brevity_penalty =
      report.hyp_length == 0
          ? 0.0
          : (report.hyp_length > report.ref_length
                 ? 1.0
                 : std::exp(1.0 - static_cast<double>(report.ref_length) /
                                      static_cast<double>(report.hyp_length)));
  if (all_positive && report.hyp_length > 0) {
    double log_sum = 0;
    for (double p : report.precisions) log_sum += std::log(p);
    report.score = 100.0 * report.brevity_penalty * std::exp(log_sum / 4);
  }
  return report;
}

RougeReport corpus_rouge(const std::vector<TokenSeq>& hypotheses,
                         const std::vector<std::vector<TokenSeq>>& references,
                         RougeVariant variant) {
  check_aligned(hypotheses, references);
  RougeReport report;
  for (std::size_t e = 0; e < hypotheses.size(); ++e) {
    const TokenSeq& hyp = hypotheses[e];
    RougeScore best;
    for (const TokenSeq& ref : references[e]) {
      RougeScore s;
      if (variant == RougeVariant::lcs) {
        s = f_measure(static_cast<double>(lcs_length(hyp, ref)),
                      static_cast<double>(hyp.size()), static_cast<double>(ref.size()));
      } else {
        NgramCounts hyp_counts = ngram_counts(hyp, 4);
        s = f_measure(
            static_cast<double>(clipped_matches(hyp_counts, {ngram_counts(ref, 4)})),
            static_cast<double>(total_ngrams(hyp, 4)),
            static_cast<double>(total_ngrams(ref, 4)));
      }
      if (s.f > best.f) best = s;
    }
    report.per_example.push_back(best);
    report.corpus.f += best.f;
    report.corpus.precision += best.precision;
    report.corpus.recall += best.recall;
  }
  const double n = static_cast<double>(hypotheses.size());
  report.corpus.f /= n;
  report.corpus.precision /= n;
  report.corpus.recall /= n;
  return report;
}

}  // namespace graft
