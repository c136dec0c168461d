#include "sbgru/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "sbgru/errors.hpp"

namespace sbgru {

namespace {

using NgramCounts = std::map<std::vector<std::string_view>, std::size_t>;

NgramCounts ngrams(const Sentence& s, std::size_t n) {
  NgramCounts out;
  if (s.size() < n) return out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    std::vector<std::string_view> g(s.begin() + i, s.begin() + i + n);
    ++out[std::move(g)];
  }
  return out;
}

std::size_t lcs_length(const Sentence& a, const Sentence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double bleu4(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references,
             const BleuOptions& opts) {
  if (hypotheses.size() != references.size()) throw ContractError("bleu4: hypothesis/reference counts differ");
  if (hypotheses.empty()) throw ContractError("bleu4: empty corpus");
  const auto orders = static_cast<std::size_t>(opts.max_order);
  std::vector<double> matched(orders, 0.0), total(orders, 0.0);
  double hyp_len = 0.0, ref_len = 0.0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& h = hypotheses[s];
    const auto& r = references[s];
    hyp_len += static_cast<double>(h.size());
    ref_len += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= orders; ++n) {
      const auto hc = ngrams(h, n);
      const auto rc = ngrams(r, n);
      for (const auto& [g, c] : hc) {
        auto it = rc.find(g);
        if (it != rc.end()) matched[n - 1] += static_cast<double>(std::min(c, it->second));
        total[n - 1] += static_cast<double>(c);
      }
    }
  }
  if (hyp_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < orders; ++n) {
    double m = matched[n], t = total[n];
    if (opts.add_one_smoothing && n >= 1) {
      m += 1.0;
      t += 1.0;
    }
    if (m == 0.0 || t == 0.0) return 0.0;
    log_sum += std::log(m / t);
  }
  const double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(orders));
}

double rouge_l(const Sentence& hypothesis, const Sentence& reference) {
  if (hypothesis.empty() || reference.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(hypothesis, reference));
  if (lcs == 0.0) return 0.0;
  // 2PR/(P+R) with P = lcs/|h|, R = lcs/|r| reduces to 2·lcs/(|h|+|r|).
  return 2.0 * lcs / static_cast<double>(hypothesis.size() + reference.size());
}

double corpus_rouge_l(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references) {
  if (hypotheses.size() != references.size()) throw ContractError("rouge_l: hypothesis/reference counts differ");
  if (hypotheses.empty()) throw ContractError("rouge_l: empty corpus");
  double s = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) s += rouge_l(hypotheses[i], references[i]);
  return 100.0 * s / static_cast<double>(hypotheses.size());
}

}  // namespace sbgru
