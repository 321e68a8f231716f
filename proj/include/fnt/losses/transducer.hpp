#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "fnt/losses/lattice.hpp"

namespace fnt {

// Forward/backward variables over the (T x (L+1)) grid, computed in double.
struct TransducerGrid {
  std::size_t frames = 0, labels = 0;
  std::vector<double> alpha, beta;  // row-major [T x (L+1)]
  double log_likelihood = 0;

  double& a(std::size_t t, std::size_t l) { return alpha[t * (labels + 1) + l]; }
  double& b(std::size_t t, std::size_t l) { return beta[t * (labels + 1) + l]; }
};

// alpha(t, l): log-probability of reaching node (t, l) with l labels emitted
// and frames 0..t-1 consumed by blanks. beta(t, l): log-probability of
// finishing from (t, l), i.e. emitting labels l+1..L and the remaining blanks
// including the terminal blank at (T-1, L).
template <typename T>
TransducerGrid ComputeTransducerGrid(const LogitLattice<T>& lat, const TargetSeq& target) {
  const std::size_t nT = lat.frames, nL = lat.labels;
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  TransducerGrid g{nT, nL, std::vector<double>(nT * (nL + 1), kNegInf),
                   std::vector<double>(nT * (nL + 1), kNegInf), 0};
  auto blank = [&](std::size_t t, std::size_t l) { return static_cast<double>(lat.blank(t, l)); };
  auto emit = [&](std::size_t t, std::size_t l) { return static_cast<double>(lat.emit(t, l, target[l])); };

  g.a(0, 0) = 0;
  for (std::size_t t = 0; t < nT; ++t)
    for (std::size_t l = 0; l <= nL; ++l) {
      if (t == 0 && l == 0) continue;
      double v = kNegInf;
      if (t > 0) v = g.a(t - 1, l) + blank(t - 1, l);
      if (l > 0) v = LogAddExp(v, g.a(t, l - 1) + emit(t, l - 1));
      g.a(t, l) = v;
    }
  for (std::size_t t = nT; t-- > 0;)
    for (std::size_t l = nL + 1; l-- > 0;) {
      if (t == nT - 1 && l == nL) {
        g.b(t, l) = blank(t, l);
        continue;
      }
      double v = kNegInf;
      if (t + 1 < nT) v = blank(t, l) + g.b(t + 1, l);
      if (l < nL) v = LogAddExp(v, emit(t, l) + g.b(t, l + 1));
      g.b(t, l) = v;
    }
  g.log_likelihood = g.a(nT - 1, nL) + blank(nT - 1, nL);
  return g;
}

// Negative log-likelihood summed over every monotonic alignment of `target`
// to the lattice. max_symbols_per_frame > 0 bounds L by T * max_symbols.
template <typename T>
Tensor<T> TransducerLoss(const LogitLattice<T>& lat, const TargetSeq& target,
                         std::size_t max_symbols_per_frame = 0) {
  lat.Validate();
  if (target.size() != lat.labels) {
    throw LossError("target length " + std::to_string(target.size()) + " but lattice built for L=" +
                    std::to_string(lat.labels));
  }
  ValidateTarget(target, lat.vocab);
  if (max_symbols_per_frame > 0 && lat.labels > lat.frames * max_symbols_per_frame) {
    throw LossError("target of " + std::to_string(lat.labels) + " symbols exceeds budget of " +
                    std::to_string(max_symbols_per_frame) + " per frame over " + std::to_string(lat.frames) +
                    " frames");
  }
  for (T v : lat.logprobs.data()) {
    if (!std::isfinite(static_cast<double>(v))) throw LossError("non-finite lattice entry");
  }
  auto grid = ComputeTransducerGrid(lat, target);
  const double logz = grid.log_likelihood;
  if (!std::isfinite(logz)) throw LossError("transducer likelihood is zero");

  auto node = lat.logprobs.node();
  const std::size_t cols = lat.vocab + 1, nT = lat.frames, nL = lat.labels;
  return Tensor<T>::FromOp(
      {1}, {static_cast<T>(-logz)}, {lat.logprobs},
      [node, grid, target, cols, nT, nL, logz](detail::Node<T>& self) mutable {
        node->EnsureGrad();
        const double g = static_cast<double>(self.grad[0]);
        auto lp = [&](std::size_t r, std::size_t c) { return static_cast<double>(node->data[r * cols + c]); };
        for (std::size_t t = 0; t < nT; ++t)
          for (std::size_t l = 0; l <= nL; ++l) {
            const std::size_t r = t * (nL + 1) + l;
            const double a = grid.a(t, l);
            if (t + 1 < nT) {
              node->grad[r * cols] += static_cast<T>(-g * std::exp(a + lp(r, 0) + grid.b(t + 1, l) - logz));
            } else if (l == nL) {
              node->grad[r * cols] += static_cast<T>(-g * std::exp(a + lp(r, 0) - logz));
            }
            if (l < nL) {
              const std::size_t c = target[l] + 1;
              node->grad[r * cols + c] += static_cast<T>(-g * std::exp(a + lp(r, c) + grid.b(t, l + 1) - logz));
            }
          }
      });
}

}  // namespace fnt
