#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "fnt/corpus/codebook.hpp"
#include "json.hpp"

namespace fnt {

struct Alignment {
  std::size_t substitutions = 0, insertions = 0, deletions = 0;
  // For each reference position, whether it aligned to an identical hypothesis token.
  std::vector<bool> matched;
  std::size_t errors() const { return substitutions + insertions + deletions; }
};

// Levenshtein alignment. Among minimum-cost alignments the backtrace prefers
// match/substitution, then deletion, then insertion.
inline Alignment Align(const std::vector<std::size_t>& ref, const std::vector<std::size_t>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1), at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  Alignment a;
  a.matched.assign(n, false);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] == hyp[j - 1]) {
        a.matched[i - 1] = true;
      } else {
        ++a.substitutions;
      }
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++a.deletions;
      --i;
    } else {
      ++a.insertions;
      --j;
    }
  }
  return a;
}

inline double Wer(const std::vector<std::size_t>& ref, const std::vector<std::size_t>& hyp) {
  if (ref.empty()) throw std::invalid_argument("wer: empty reference");
  return static_cast<double>(Align(ref, hyp).errors()) / static_cast<double>(ref.size());
}

struct Metrics {
  std::size_t utterances = 0;
  std::size_t ref_tokens = 0, hyp_tokens = 0, errors = 0;
  std::size_t keyword_occurrences = 0, keyword_errors = 0;
  // Occurrences not directly preceded by their own anchor: only the history can
  // tell these apart from their partner.
  std::size_t bare_occurrences = 0, bare_errors = 0;
  double lm_nll = 0;  // summed over reference tokens
  std::size_t lm_tokens = 0;
  std::vector<double> end_latency;

  double wer() const { return ref_tokens ? static_cast<double>(errors) / static_cast<double>(ref_tokens) : 0.0; }
  double keyword_error_rate() const {
    return keyword_occurrences ? static_cast<double>(keyword_errors) / static_cast<double>(keyword_occurrences) : 0.0;
  }
  double bare_keyword_error_rate() const {
    return bare_occurrences ? static_cast<double>(bare_errors) / static_cast<double>(bare_occurrences) : 0.0;
  }
  double perplexity() const { return lm_tokens ? std::exp(lm_nll / static_cast<double>(lm_tokens)) : 0.0; }
  double mean_latency() const {
    if (end_latency.empty()) return 0.0;
    return std::accumulate(end_latency.begin(), end_latency.end(), 0.0) / static_cast<double>(end_latency.size());
  }

  // Confusable-keyword errors: reference tokens from a confusable pair that
  // are not aligned to an identical hypothesis token.
  void Add(const std::vector<std::size_t>& ref, const std::vector<std::size_t>& hyp, const Codebook& cb) {
    const auto a = Align(ref, hyp);
    ++utterances;
    ref_tokens += ref.size();
    hyp_tokens += hyp.size();
    errors += a.errors();
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (!cb.confusable(ref[i])) continue;
      ++keyword_occurrences;
      if (!a.matched[i]) ++keyword_errors;
      if (i > 0 && ref[i - 1] == cb.anchor_of(ref[i])) continue;
      ++bare_occurrences;
      if (!a.matched[i]) ++bare_errors;
    }
  }

  void Merge(const Metrics& o) {
    utterances += o.utterances;
    ref_tokens += o.ref_tokens;
    hyp_tokens += o.hyp_tokens;
    errors += o.errors;
    keyword_occurrences += o.keyword_occurrences;
    keyword_errors += o.keyword_errors;
    bare_occurrences += o.bare_occurrences;
    bare_errors += o.bare_errors;
    lm_nll += o.lm_nll;
    lm_tokens += o.lm_tokens;
    end_latency.insert(end_latency.end(), o.end_latency.begin(), o.end_latency.end());
  }
};

inline nlohmann::json ToJson(const Metrics& m) {
  nlohmann::json j = {{"utterances", m.utterances},
                      {"wer", m.wer()},
                      {"confusable_keyword_error_rate", m.keyword_error_rate()},
                      {"bare_keyword_error_rate", m.bare_keyword_error_rate()},
                      {"lm_perplexity", m.perplexity()},
                      {"tokens", {{"reference", m.ref_tokens}, {"hypothesis", m.hyp_tokens}, {"errors", m.errors}}},
                      {"keywords", {{"occurrences", m.keyword_occurrences}, {"errors", m.keyword_errors}}},
                      {"bare_keywords", {{"occurrences", m.bare_occurrences}, {"errors", m.bare_errors}}}};
  if (!m.end_latency.empty()) {
    j["end_latency"] = {{"mean", m.mean_latency()}, {"values", m.end_latency}};
  }
  return j;
}

inline double Median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace fnt
