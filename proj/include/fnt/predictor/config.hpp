#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace fnt {

enum class VocabMode { kTransformer, kRecurrent };
enum class ContextSource { kTrained, kExternal, kPredvHidden };

inline std::string ToString(VocabMode m) { return m == VocabMode::kTransformer ? "transformer" : "recurrent"; }

inline VocabMode ParseVocabMode(const std::string& s) {
  if (s == "transformer") return VocabMode::kTransformer;
  if (s == "recurrent") return VocabMode::kRecurrent;
  throw std::invalid_argument("unknown vocab predictor mode: " + s);
}

inline std::string ToString(ContextSource s) {
  switch (s) {
    case ContextSource::kTrained: return "trained";
    case ContextSource::kExternal: return "external";
    case ContextSource::kPredvHidden: return "predv_hidden";
  }
  return "trained";
}

inline ContextSource ParseContextSource(const std::string& s) {
  if (s == "trained") return ContextSource::kTrained;
  if (s == "external") return ContextSource::kExternal;
  if (s == "predv_hidden") return ContextSource::kPredvHidden;
  throw std::invalid_argument("unknown context source: " + s);
}

struct PredictorConfig {
  std::size_t vocab = 50;
  // Pred^B
  std::size_t d_blank = 32;
  std::size_t blank_layers = 2;
  std::size_t d_joint = 32;
  // Pred^V
  VocabMode mode = VocabMode::kTransformer;
  std::size_t d_vocab = 32;
  std::size_t vocab_layers = 2;
  std::size_t vocab_heads = 2;
  std::size_t vocab_ffn = 64;
  // Integration of history text
  bool utterance_level = false;
  bool token_level = false;
  bool slongfnt_text = false;
  // Context encoder
  ContextSource context_source = ContextSource::kTrained;
  std::size_t d_context = 32;
  std::size_t context_layers = 1;
  std::size_t context_heads = 2;
  std::uint64_t external_seed = 1234;
  double beta_init = 1.0;

  std::size_t sos() const { return vocab; }
  bool uses_context() const { return utterance_level || token_level || slongfnt_text; }
  std::size_t context_dim() const { return context_source == ContextSource::kPredvHidden ? d_vocab : d_context; }

  void Validate() const {
    if (vocab < 1) throw std::invalid_argument("predictor: vocab must be >= 1");
    if (vocab_heads == 0 || d_vocab % vocab_heads != 0) {
      throw std::invalid_argument("predictor: d_vocab not divisible by vocab_heads");
    }
    if (context_heads == 0 || (uses_context() && context_source == ContextSource::kTrained &&
                               d_context % context_heads != 0)) {
      throw std::invalid_argument("predictor: d_context not divisible by context_heads");
    }
    if (token_level && mode != VocabMode::kTransformer) {
      throw std::invalid_argument("predictor: token-level integration needs the transformer predictor");
    }
    if (slongfnt_text && mode != VocabMode::kRecurrent) {
      throw std::invalid_argument("predictor: long-content attention needs the recurrent predictor");
    }
  }
};

}  // namespace fnt
