#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fnt/numerics/rng.hpp"

namespace fnt {

class CodebookError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TokenRole { kConfusable, kAnchor, kFiller };

inline constexpr std::size_t kNoToken = std::numeric_limits<std::size_t>::max();

// Token layout: pairs (2i, 2i+1) for i < n_pairs, then one anchor per
// confusable token (anchor of k is 2 n_pairs + k), then fillers.
struct Codebook {
  std::size_t vocab = 0, d_feat = 0;
  double epsilon = 0, delta_min = 0;
  std::vector<std::vector<double>> prototypes;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;

  std::size_t n_pairs() const { return pairs.size(); }
  std::size_t n_confusable() const { return 2 * pairs.size(); }

  TokenRole role(std::size_t token) const {
    if (token < n_confusable()) return TokenRole::kConfusable;
    if (has_anchors() && token < 2 * n_confusable()) return TokenRole::kAnchor;
    return TokenRole::kFiller;
  }
  bool confusable(std::size_t token) const { return token < n_confusable(); }
  std::size_t partner(std::size_t token) const { return confusable(token) ? token ^ 1u : kNoToken; }
  bool has_anchors() const { return vocab >= 2 * n_confusable() + 1; }
  std::size_t anchor_of(std::size_t token) const {
    return confusable(token) && has_anchors() ? n_confusable() + token : kNoToken;
  }
  std::size_t first_filler() const { return has_anchors() ? 2 * n_confusable() : n_confusable(); }
  std::size_t n_fillers() const { return vocab - first_filler(); }
};

inline double Distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Prototypes are drawn uniformly from [-1, 1]^d and rejected until every
// non-confusable pair is at least delta_min apart; each pair's second member
// is its first plus epsilon times a random unit vector.
inline Codebook BuildCodebook(std::size_t vocab, std::size_t d_feat, std::size_t n_pairs, double epsilon,
                              double delta_min, std::uint64_t seed, std::size_t max_retries = 10000) {
  if (vocab < 2 * n_pairs + 2) {
    throw CodebookError("codebook: vocab " + std::to_string(vocab) + " too small for " + std::to_string(n_pairs) +
                        " confusable pairs");
  }
  if (!(epsilon < delta_min)) throw CodebookError("codebook: epsilon must be below delta_min");
  Codebook cb;
  cb.vocab = vocab;
  cb.d_feat = d_feat;
  cb.epsilon = epsilon;
  cb.delta_min = delta_min;
  cb.prototypes.assign(vocab, {});
  for (std::size_t i = 0; i < n_pairs; ++i) cb.pairs.emplace_back(2 * i, 2 * i + 1);
  Rng rng(seed);
  auto far_enough = [&](const std::vector<double>& v, std::size_t upto) {
    for (std::size_t j = 0; j < upto; ++j) {
      if (Distance(v, cb.prototypes[j]) < delta_min) return false;
    }
    return true;
  };
  auto draw = [&]() {
    std::vector<double> v(d_feat);
    for (auto& x : v) x = rng.Uniform(-1.0, 1.0);
    return v;
  };
  std::size_t tok = 0;
  while (tok < vocab) {
    const bool pair = tok < 2 * n_pairs;
    std::size_t tries = 0;
    for (;; ++tries) {
      if (tries >= max_retries) {
        throw CodebookError("codebook: could not place token " + std::to_string(tok) + " with spacing " +
                            std::to_string(delta_min) + " after " + std::to_string(max_retries) +
                            " draws; use a larger d_feat or a smaller delta_min");
      }
      auto base = draw();
      if (!far_enough(base, tok)) continue;
      if (!pair) {
        cb.prototypes[tok] = std::move(base);
        tok += 1;
        break;
      }
      auto dir = std::vector<double>(d_feat);
      double norm = 0;
      for (auto& x : dir) {
        x = rng.Normal();
        norm += x * x;
      }
      norm = std::sqrt(norm);
      auto twin = base;
      for (std::size_t j = 0; j < d_feat; ++j) twin[j] += epsilon * dir[j] / norm;
      if (!far_enough(twin, tok)) continue;
      cb.prototypes[tok] = std::move(base);
      cb.prototypes[tok + 1] = std::move(twin);
      tok += 2;
      break;
    }
  }
  return cb;
}

}  // namespace fnt
