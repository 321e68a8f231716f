#pragma once

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>

namespace fnt {

enum class DownsampleMode { kNone, kStatistical, kDilated, kMix, kGlobalMean };

inline std::string ToString(DownsampleMode m) {
  switch (m) {
    case DownsampleMode::kNone: return "none";
    case DownsampleMode::kStatistical: return "statistical";
    case DownsampleMode::kDilated: return "dilated";
    case DownsampleMode::kMix: return "mix";
    case DownsampleMode::kGlobalMean: return "global_mean";
  }
  return "none";
}

inline DownsampleMode ParseDownsampleMode(const std::string& s) {
  if (s == "none") return DownsampleMode::kNone;
  if (s == "statistical") return DownsampleMode::kStatistical;
  if (s == "dilated") return DownsampleMode::kDilated;
  if (s == "mix") return DownsampleMode::kMix;
  if (s == "global_mean") return DownsampleMode::kGlobalMean;
  throw std::invalid_argument("unknown downsample mode: " + s);
}

inline constexpr std::size_t kUnboundedLeftChunks = std::numeric_limits<std::size_t>::max();

struct EncoderConfig {
  std::size_t d_feat = 16;
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 2;
  std::size_t d_ffn = 128;
  std::size_t subsample_rate = 4;
  std::size_t conv_kernel = 3;
  // Encoder frames (after subsampling) per streaming chunk.
  std::size_t chunk_frames = 2;
  std::size_t left_chunks = 4;
  // Block length K for history downsampling.
  std::size_t downsample_rate = 4;
  DownsampleMode downsample_mode = DownsampleMode::kStatistical;

  bool unbounded_left() const { return left_chunks == kUnboundedLeftChunks; }

  void Validate() const {
    if (n_heads == 0 || d_model % n_heads != 0) {
      throw std::invalid_argument("encoder: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                                  std::to_string(n_heads));
    }
    if (chunk_frames < 1) throw std::invalid_argument("encoder: chunk_frames must be >= 1");
    if (subsample_rate != 4) throw std::invalid_argument("encoder: subsample_rate is fixed at 4");
    if (conv_kernel < 1) throw std::invalid_argument("encoder: conv_kernel must be >= 1");
    if (downsample_rate < 1 && downsample_mode != DownsampleMode::kGlobalMean) {
      throw std::invalid_argument("encoder: downsample rate K must be >= 1");
    }
  }
};

}  // namespace fnt
