#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "fnt/losses/lattice.hpp"

namespace fnt {

class InfeasibleTargetError : public LossError {
 public:
  using LossError::LossError;
};

// Frames needed to emit `target` under CTC: one per label plus a separating
// blank between each pair of equal neighbours.
inline std::size_t CtcMinimumFrames(const TargetSeq& target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i) n += target[i] == target[i - 1];
  return n;
}

// CTC negative log-likelihood. logprob is [T x (U+1)] with the CTC blank in
// the last column.
template <typename T>
Tensor<T> CtcLoss(const Tensor<T>& logprob, const TargetSeq& target) {
  const std::size_t nT = logprob.rows(), width = logprob.cols();
  if (logprob.size() == 0 || width < 2) throw LossError("ctc: empty log-probability matrix");
  const std::size_t blank = width - 1;
  ValidateTarget(target, blank);
  if (CtcMinimumFrames(target) > nT) {
    throw InfeasibleTargetError("ctc: target of length " + std::to_string(target.size()) + " needs at least " +
                                std::to_string(CtcMinimumFrames(target)) + " frames, have " +
                                std::to_string(nT));
  }
  const std::size_t S = 2 * target.size() + 1;
  std::vector<std::size_t> ext(S, blank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  auto skip_allowed = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  auto lp = [&](std::size_t t, std::size_t k) { return static_cast<double>(logprob.at(t, k)); };
  std::vector<double> alpha(nT * S, kNegInf), beta(nT * S, kNegInf);
  alpha[0] = lp(0, blank);
  if (S > 1) alpha[1] = lp(0, ext[1]);
  for (std::size_t t = 1; t < nT; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      double v = alpha[(t - 1) * S + s];
      if (s >= 1) v = LogAddExp(v, alpha[(t - 1) * S + s - 1]);
      if (skip_allowed(s)) v = LogAddExp(v, alpha[(t - 1) * S + s - 2]);
      alpha[t * S + s] = v == kNegInf ? kNegInf : v + lp(t, ext[s]);
    }
  beta[(nT - 1) * S + S - 1] = 0;
  if (S > 1) beta[(nT - 1) * S + S - 2] = 0;
  for (std::size_t t = nT - 1; t-- > 0;)
    for (std::size_t s = 0; s < S; ++s) {
      double v = beta[(t + 1) * S + s] + lp(t + 1, ext[s]);
      if (s + 1 < S) v = LogAddExp(v, beta[(t + 1) * S + s + 1] + lp(t + 1, ext[s + 1]));
      if (s + 2 < S && skip_allowed(s + 2)) v = LogAddExp(v, beta[(t + 1) * S + s + 2] + lp(t + 1, ext[s + 2]));
      beta[t * S + s] = v;
    }
  double logz = alpha[(nT - 1) * S + S - 1];
  if (S > 1) logz = LogAddExp(logz, alpha[(nT - 1) * S + S - 2]);
  if (!std::isfinite(logz)) throw LossError("ctc: likelihood is zero or not finite");

  auto node = logprob.node();
  return Tensor<T>::FromOp(
      {1}, {static_cast<T>(-logz)}, {logprob},
      [node, alpha = std::move(alpha), beta = std::move(beta), ext, nT, S, width, logz](detail::Node<T>& self) {
        node->EnsureGrad();
        const double g = static_cast<double>(self.grad[0]);
        for (std::size_t t = 0; t < nT; ++t)
          for (std::size_t s = 0; s < S; ++s) {
            const double occ = alpha[t * S + s] + beta[t * S + s] - logz;
            if (occ == -std::numeric_limits<double>::infinity()) continue;
            node->grad[t * width + ext[s]] += static_cast<T>(-g * std::exp(occ));
          }
      });
}

}  // namespace fnt
