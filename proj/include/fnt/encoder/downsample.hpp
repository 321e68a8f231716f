#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "fnt/encoder/config.hpp"
#include "fnt/numerics/ops.hpp"
#include "fnt/numerics/rng.hpp"

namespace fnt {

// Compresses a history bank H [T_h x d] by block length K.
//   statistical  per-block mean; a short final block averages its true length
//   dilated      one uniformly chosen row per block
//   global_mean  a single mean row (K ignored)
//   none         identity
//   mix          training: statistical or dilated with probability 1/2 per
//                call; inference: statistical
template <typename T>
Tensor<T> DownsampleHistory(const Tensor<T>& history, long long k, DownsampleMode mode, Rng& rng,
                            bool training = false) {
  if (k <= 0 && mode != DownsampleMode::kGlobalMean) {
    throw std::invalid_argument("downsample rate K must be >= 1, got " + std::to_string(k));
  }
  const std::size_t rows = history.rows(), d = history.cols();
  if (history.size() == 0 || rows == 0) return history;
  if (mode == DownsampleMode::kMix) {
    mode = training && rng.Bernoulli(0.5) ? DownsampleMode::kDilated : DownsampleMode::kStatistical;
  }
  switch (mode) {
    case DownsampleMode::kNone:
      return history;
    case DownsampleMode::kGlobalMean:
      return MeanRows(history);
    case DownsampleMode::kStatistical: {
      const auto K = static_cast<std::size_t>(k);
      if (K == 1) return history;
      std::vector<Tensor<T>> blocks;
      for (std::size_t r0 = 0; r0 < rows; r0 += K) {
        blocks.push_back(MeanRows(SliceRows(history, r0, std::min(rows, r0 + K))));
      }
      return ConcatRows(blocks);
    }
    case DownsampleMode::kDilated: {
      const auto K = static_cast<std::size_t>(k);
      std::vector<Tensor<T>> picks;
      for (std::size_t r0 = 0; r0 < rows; r0 += K) {
        const std::size_t len = std::min(rows, r0 + K) - r0;
        const std::size_t r = r0 + (K == 1 ? 0 : rng.Below(len));
        picks.push_back(SliceRows(history, r, r + 1));
      }
      return ConcatRows(picks);
    }
    case DownsampleMode::kMix:
      break;
  }
  (void)d;
  throw std::logic_error("unreachable downsample mode");
}

inline std::size_t DownsampledLength(std::size_t rows, std::size_t k, DownsampleMode mode) {
  if (rows == 0) return 0;
  switch (mode) {
    case DownsampleMode::kNone: return rows;
    case DownsampleMode::kGlobalMean: return 1;
    default: return (rows + k - 1) / k;
  }
}

}  // namespace fnt
