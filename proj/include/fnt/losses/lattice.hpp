#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "fnt/numerics/ops.hpp"

namespace fnt {

class LossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Vocabulary indices 0..U-1. The transducer blank lives in slot 0 of the joint
// output (ahead of the vocabulary); the CTC blank is slot U of the encoder's
// U+1 projection.
struct OutputAlphabet {
  std::size_t vocab_size = 0;

  std::size_t transducer_blank_slot() const { return 0; }
  std::size_t ctc_blank_slot() const { return vocab_size; }
  // Joint-output slot of vocabulary token v.
  std::size_t joint_slot(std::size_t v) const { return v + 1; }
};

using TargetSeq = std::vector<std::size_t>;

inline void ValidateTarget(const TargetSeq& target, std::size_t vocab_size) {
  for (auto y : target) {
    if (y >= vocab_size) {
      throw LossError("target token " + std::to_string(y) + " outside vocabulary of size " +
                      std::to_string(vocab_size));
    }
  }
}

// Log-posteriors over [blank; vocab] for every lattice node (t, l), rows
// ordered t-major: row t * (L + 1) + l, column 0 = blank, column 1 + v = v.
template <typename T>
struct LogitLattice {
  Tensor<T> logprobs;
  std::size_t frames = 0;
  std::size_t labels = 0;
  std::size_t vocab = 0;

  std::size_t row(std::size_t t, std::size_t l) const { return t * (labels + 1) + l; }
  T blank(std::size_t t, std::size_t l) const { return logprobs.at(row(t, l), 0); }
  T emit(std::size_t t, std::size_t l, std::size_t v) const { return logprobs.at(row(t, l), v + 1); }

  void Validate() const {
    if (frames < 1) throw LossError("lattice needs at least one frame");
    if (logprobs.rows() != frames * (labels + 1) || logprobs.cols() != vocab + 1) {
      throw LossError("lattice tensor " + ShapeString(logprobs.shape()) + " does not match T=" +
                      std::to_string(frames) + " L=" + std::to_string(labels) + " U=" + std::to_string(vocab));
    }
  }

  // Largest |1 - sum of probabilities| over nodes.
  double MaxNormalizationError() const {
    double worst = 0;
    for (std::size_t r = 0; r < logprobs.rows(); ++r) {
      double s = 0;
      for (std::size_t c = 0; c < logprobs.cols(); ++c) s += std::exp(static_cast<double>(logprobs.at(r, c)));
      worst = std::max(worst, std::abs(1.0 - s));
    }
    return worst;
  }

  // Normalizes arbitrary joint logits [(T * (L+1)) x (1 + U)].
  static LogitLattice FromLogits(const Tensor<T>& logits, std::size_t frames, std::size_t labels) {
    LogitLattice lat{LogSoftmaxRows(logits), frames, labels, logits.cols() - 1};
    lat.Validate();
    return lat;
  }

  // Builds from separate blank [T x (L+1)] and vocabulary [T x (L+1) x U]
  // log-probabilities that are already normalized jointly.
  static LogitLattice FromParts(const Tensor<T>& blank, const Tensor<T>& vocab_lp, std::size_t frames,
                                std::size_t labels) {
    const std::size_t nodes = frames * (labels + 1);
    auto b = blank.Reshape({nodes, 1});
    auto v = vocab_lp.Reshape({nodes, vocab_lp.size() / nodes});
    LogitLattice lat{ConcatCols<T>({b, v}), frames, labels, v.cols()};
    lat.Validate();
    return lat;
  }
};

template <typename T>
T LogAddExp(T a, T b) {
  constexpr T kNegInf = -std::numeric_limits<T>::infinity();
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

}  // namespace fnt
