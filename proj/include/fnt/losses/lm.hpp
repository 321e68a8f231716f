#pragma once

#include <string>
#include <vector>

#include "fnt/losses/lattice.hpp"

namespace fnt {

// Per-token mean cross-entropy. Row l of vocab_logprobs is the LM
// distribution for target[l] given the tokens before it.
template <typename T>
Tensor<T> LmLoss(const Tensor<T>& vocab_logprobs, const TargetSeq& target) {
  if (vocab_logprobs.rows() != target.size() && !(target.empty() && vocab_logprobs.size() == 0)) {
    throw LossError("lm loss: " + std::to_string(vocab_logprobs.rows()) + " rows for " +
                    std::to_string(target.size()) + " target tokens");
  }
  if (target.empty()) return Tensor<T>::Scalar(T(0));
  const std::size_t width = vocab_logprobs.cols();
  ValidateTarget(target, width);
  std::vector<std::size_t> idx(target.size());
  for (std::size_t l = 0; l < target.size(); ++l) idx[l] = l * width + target[l];
  return Scale(Sum(Pick(vocab_logprobs, idx)), T(-1) / T(target.size()));
}

struct LossWeights {
  double lm = 0.1;
  double ctc = 0.1;
};

// l_trans + lambda_lm * l_lm + lambda_ctc * l_ctc.
template <typename T>
Tensor<T> TotalLoss(const Tensor<T>& transducer, const Tensor<T>& lm, const Tensor<T>& ctc,
                    const LossWeights& w) {
  auto total = transducer;
  if (w.lm != 0) total = Add(total, Scale(lm, static_cast<T>(w.lm)));
  if (w.ctc != 0) total = Add(total, Scale(ctc, static_cast<T>(w.ctc)));
  return total;
}

inline double TotalLoss(double transducer, double lm, double ctc, const LossWeights& w) {
  return transducer + w.lm * lm + w.ctc * ctc;
}

}  // namespace fnt
