#pragma once

#include "fnt/numerics/ops.hpp"

namespace fnt {

// z^V = z_tV[:, :U] + beta * z_lV. The CTC blank occupies the last column of
// z_tV and is dropped.
template <typename T>
Tensor<T> CombineVocab(const Tensor<T>& encoder_lp, const Tensor<T>& lm_lp, const Tensor<T>& beta) {
  const std::size_t u = lm_lp.cols();
  if (encoder_lp.cols() != u + 1 || encoder_lp.rows() != lm_lp.rows()) {
    throw DimensionError("CombineVocab: encoder log-probs " + ShapeString(encoder_lp.shape()) + " vs LM " +
                         ShapeString(lm_lp.shape()));
  }
  return Add(SliceCols(encoder_lp, 0, u), MulScalar(lm_lp, beta));
}

// Normalized distribution over [blank; vocabulary], blank first.
template <typename T>
Tensor<T> Posterior(const Tensor<T>& blank_logit, const Tensor<T>& vocab_logits) {
  const std::size_t n = vocab_logits.rows();
  return SoftmaxRows(ConcatCols<T>({blank_logit.Reshape({n, 1}), vocab_logits}));
}

template <typename T>
Tensor<T> LogPosterior(const Tensor<T>& blank_logit, const Tensor<T>& vocab_logits) {
  const std::size_t n = vocab_logits.rows();
  return LogSoftmaxRows(ConcatCols<T>({blank_logit.Reshape({n, 1}), vocab_logits}));
}

}  // namespace fnt
