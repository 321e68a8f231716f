#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "fnt/losses/ctc.hpp"
#include "fnt/losses/lattice.hpp"

namespace fnt {

class BudgetExceededError : public LossError {
 public:
  using LossError::LossError;
};

inline constexpr std::size_t kBruteForceMaxFrames = 6;
inline constexpr std::size_t kBruteForceMaxLabels = 4;

namespace detail {

inline double LogSumExp(const std::vector<double>& xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  double s = 0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace detail

// Number of transducer alignments: choose which of the first T+L-1 moves are
// label emissions (the final move is always the terminal blank).
inline std::size_t TransducerPathCount(std::size_t frames, std::size_t labels) {
  std::size_t n = frames + labels - 1, k = labels, c = 1;
  for (std::size_t i = 1; i <= k; ++i) c = c * (n - k + i) / i;
  return c;
}

// Enumerates every interleaving of T blanks and L emissions that ends in a
// blank, walks it through the lattice, and returns -log of the summed path
// probability.
template <typename T>
double BruteForceTransducer(const LogitLattice<T>& lat, const TargetSeq& target) {
  if (lat.frames > kBruteForceMaxFrames || lat.labels > kBruteForceMaxLabels) {
    throw BudgetExceededError("brute force transducer limited to T <= 6, L <= 4");
  }
  if (target.size() != lat.labels) throw LossError("brute force transducer: target/lattice length mismatch");
  const std::size_t moves = lat.frames + lat.labels - 1;
  std::vector<double> paths;
  for (std::size_t mask = 0; mask < (std::size_t{1} << moves); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcountll(mask)) != lat.labels) continue;
    std::size_t t = 0, l = 0;
    double logp = 0;
    for (std::size_t m = 0; m < moves; ++m) {
      if (mask >> m & 1) {
        logp += static_cast<double>(lat.emit(t, l, target[l]));
        ++l;
      } else {
        logp += static_cast<double>(lat.blank(t, l));
        ++t;
      }
    }
    logp += static_cast<double>(lat.blank(t, l));  // t == T-1, l == L
    paths.push_back(logp);
  }
  return -detail::LogSumExp(paths);
}

// Collapses a frame labelling: merge repeats, then drop blanks.
inline TargetSeq CtcCollapse(const std::vector<std::size_t>& frames, std::size_t blank) {
  TargetSeq out;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (i > 0 && frames[i] == frames[i - 1]) continue;
    if (frames[i] != blank) out.push_back(frames[i]);
  }
  return out;
}

// Sums the probability of every (U+1)^T frame labelling that collapses to
// `target`.
template <typename T>
double BruteForceCtc(const Tensor<T>& logprob, const TargetSeq& target) {
  const std::size_t nT = logprob.rows(), width = logprob.cols();
  if (nT > kBruteForceMaxFrames) throw BudgetExceededError("brute force ctc limited to T <= 6");
  double total_paths = std::pow(static_cast<double>(width), static_cast<double>(nT));
  if (total_paths > 2e6) throw BudgetExceededError("brute force ctc enumeration too large");
  const std::size_t blank = width - 1;
  std::vector<std::size_t> labels(nT, 0);
  std::vector<double> hits;
  while (true) {
    if (CtcCollapse(labels, blank) == target) {
      double logp = 0;
      for (std::size_t t = 0; t < nT; ++t) logp += static_cast<double>(logprob.at(t, labels[t]));
      hits.push_back(logp);
    }
    std::size_t t = 0;
    while (t < nT && ++labels[t] == width) labels[t++] = 0;
    if (t == nT) break;
  }
  if (hits.empty()) throw InfeasibleTargetError("brute force ctc: no labelling collapses to target");
  return -detail::LogSumExp(hits);
}

}  // namespace fnt
