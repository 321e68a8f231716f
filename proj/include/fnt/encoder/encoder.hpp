#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "fnt/encoder/config.hpp"
#include "fnt/encoder/downsample.hpp"
#include "fnt/numerics/nn.hpp"
#include "fnt/numerics/ops.hpp"
#include "fnt/numerics/rng.hpp"
#include "fnt/numerics/tensor.hpp"

namespace fnt {

class EncoderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct EncodedSeq {
  Tensor<T> hidden;                     // [T x d_model]
  std::vector<bool> grad_mask;          // per frame
  std::vector<Tensor<T>> layer_states;  // per layer, attention inputs [T x d_model], detached
  std::size_t frames() const { return hidden.rows(); }
};

// Per-layer downsampled history, fixed for one utterance.
template <typename T>
struct HistoryBank {
  std::vector<Tensor<T>> layers;
  bool empty() const { return layers.empty() || layers.front().rows() == 0 || layers.front().size() == 0; }
  std::size_t rows() const { return empty() ? 0 : layers.front().rows(); }
};

template <typename T>
struct LayerCache {
  Tensor<T> keys, values;  // cached left context, projected
  Tensor<T> conv_state;    // last (kernel - 1) pointwise outputs
};

template <typename T>
struct ChunkCache {
  std::vector<LayerCache<T>> layers;
  HistoryBank<T> bank;
  std::size_t origin = 0;         // absolute position of the utterance's first frame
  std::size_t next_position = 0;  // absolute position of the next frame
  std::size_t timeline_offset = 0;  // absolute position of the first cached frame
  bool closed = false;            // a short (final) chunk has been consumed

  std::size_t cached_frames() const { return layers.empty() ? 0 : layers.front().keys.rows(); }
};

// Key visibility: causal, plus an optional chunk window counted from origin.
struct AttentionWindow {
  std::size_t chunk_frames = 0;  // 0: no chunk restriction
  std::size_t left_chunks = kUnboundedLeftChunks;
  std::size_t origin = 0;

  bool Visible(std::size_t key_pos, std::size_t query_pos) const {
    if (key_pos > query_pos) return false;
    if (chunk_frames == 0 || left_chunks == kUnboundedLeftChunks || key_pos < origin) return true;
    const std::size_t kc = (key_pos - origin) / chunk_frames, qc = (query_pos - origin) / chunk_frames;
    return kc + left_chunks >= qc;
  }
};

template <typename T>
class Encoder {
 public:
  struct Block {
    LayerNorm<T> norm_att, norm_conv, norm_ffn;
    MultiHeadAttention<T> att;
    Linear<T> conv_pre, conv_post, ffn1, ffn2;
    Tensor<T> dw_weight, dw_bias;  // [kernel x d], [d]
  };

  Encoder(ParamStore<T>& store, const EncoderConfig& cfg, Rng& rng, const std::string& name = "enc") : cfg_(cfg) {
    cfg_.Validate();
    const std::size_t d = cfg_.d_model;
    sub_ = Linear<T>(store, name + ".sub", cfg_.subsample_rate * cfg_.d_feat, d, rng);
    for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
      const std::string p = name + ".l" + std::to_string(i);
      Block b;
      b.norm_att = LayerNorm<T>(store, p + ".norm_att", d);
      b.att = MultiHeadAttention<T>(store, p + ".att", d, cfg_.n_heads, rng);
      b.norm_conv = LayerNorm<T>(store, p + ".norm_conv", d);
      b.conv_pre = Linear<T>(store, p + ".conv_pre", d, d, rng);
      b.dw_weight = store.Create(p + ".conv_dw.weight", {cfg_.conv_kernel, d}, rng,
                                 XavierBound(cfg_.conv_kernel, 1));
      b.dw_bias = store.Constant(p + ".conv_dw.bias", {d}, T(0));
      b.conv_post = Linear<T>(store, p + ".conv_post", d, d, rng);
      b.norm_ffn = LayerNorm<T>(store, p + ".norm_ffn", d);
      b.ffn1 = Linear<T>(store, p + ".ffn1", d, cfg_.d_ffn, rng);
      b.ffn2 = Linear<T>(store, p + ".ffn2", cfg_.d_ffn, d, rng);
      blocks_.push_back(std::move(b));
    }
    final_norm_ = LayerNorm<T>(store, name + ".final_norm", d);
  }

  const EncoderConfig& config() const { return cfg_; }

  std::size_t OutputFrames(std::size_t input_frames) const { return input_frames / cfg_.subsample_rate; }

  Tensor<T> Subsample(const Tensor<T>& feat) const {
    const std::size_t r = cfg_.subsample_rate, n_in = feat.rows();
    if (feat.cols() != cfg_.d_feat) {
      throw DimensionError("encoder: feature width " + std::to_string(feat.cols()) + ", expected " +
                           std::to_string(cfg_.d_feat));
    }
    if (n_in < r) {
      throw EncoderError("encoder: need at least " + std::to_string(r) + " input frames, got " +
                         std::to_string(n_in));
    }
    const std::size_t n = n_in / r;
    auto used = n * r == n_in ? feat : SliceRows(feat, 0, n * r);
    return sub_(used.Reshape({n, r * cfg_.d_feat}));
  }

  ChunkCache<T> NewCache(HistoryBank<T> bank = {}, std::size_t origin = 0) const {
    if (!bank.layers.empty() && bank.layers.size() != cfg_.n_layers) {
      throw EncoderError("encoder: history bank has " + std::to_string(bank.layers.size()) + " layers, model has " +
                         std::to_string(cfg_.n_layers));
    }
    ChunkCache<T> cache;
    cache.layers.resize(cfg_.n_layers);
    for (auto& l : cache.layers) {
      l.keys = Tensor<T>::Zeros({0, cfg_.d_model});
      l.values = Tensor<T>::Zeros({0, cfg_.d_model});
      l.conv_state = Tensor<T>::Zeros({cfg_.conv_kernel - 1, cfg_.d_model});
    }
    if (!bank.empty()) cache.bank = std::move(bank);
    cache.origin = cache.next_position = cache.timeline_offset = origin;
    return cache;
  }

  // Causal offline encoding of one utterance starting at `origin`.
  EncodedSeq<T> EncodeOffline(const Tensor<T>& feat, std::size_t origin = 0) const {
    auto cache = NewCache({}, origin);
    return Run(feat, cache, AttentionWindow{0, kUnboundedLeftChunks, origin});
  }

  // Chunk-masked full-utterance pass; matches EncodeChunk called chunk by
  // chunk with the same bank, so it is what streaming models train on.
  EncodedSeq<T> EncodeMaskedChunks(const Tensor<T>& feat, const HistoryBank<T>& bank = {},
                                   std::size_t origin = 0) const {
    auto cache = NewCache(bank, origin);
    return Run(feat, cache, AttentionWindow{cfg_.chunk_frames, cfg_.left_chunks, origin});
  }

  // History utterances are encoded without gradient into the left context;
  // the current utterance continues on the same timeline.
  EncodedSeq<T> EncodeLongSpeech(const std::vector<Tensor<T>>& history, const Tensor<T>& current) const {
    return EncodeAfter(current, LongSpeechCache(history));
  }

  ChunkCache<T> LongSpeechCache(const std::vector<Tensor<T>>& history) const {
    auto cache = NewCache();
    if (history.empty()) return cache;
    NoGradGuard no_grad;
    std::vector<Tensor<T>> parts;
    for (const auto& h : history) parts.push_back(Subsample(h).Detach());
    Forward(ConcatRows(parts), cache, AttentionWindow{0, kUnboundedLeftChunks, 0}, nullptr);
    return cache;
  }

  EncodedSeq<T> EncodeAfter(const Tensor<T>& current, ChunkCache<T> cache) const {
    return Run(current, cache, AttentionWindow{0, kUnboundedLeftChunks, 0});
  }

  // One streaming step. `chunk_feat` holds subsample_rate * chunk_frames input
  // frames; a shorter final chunk is accepted and closes the cache.
  EncodedSeq<T> EncodeChunk(const Tensor<T>& chunk_feat, ChunkCache<T>& cache) const {
    if (cache.layers.size() != cfg_.n_layers) {
      throw EncoderError("encoder: cache has " + std::to_string(cache.layers.size()) + " layers, model has " +
                         std::to_string(cfg_.n_layers));
    }
    for (const auto& l : cache.layers) {
      if ((l.keys.size() != 0 && l.keys.cols() != cfg_.d_model) || l.conv_state.rows() + 1 != cfg_.conv_kernel) {
        throw EncoderError("encoder: cache layout does not match config");
      }
    }
    if (cache.closed) throw EncoderError("encoder: chunk after a short final chunk");
    const std::size_t full = cfg_.subsample_rate * cfg_.chunk_frames;
    if (chunk_feat.rows() > full) {
      throw EncoderError("encoder: chunk has " + std::to_string(chunk_feat.rows()) + " input frames, max " +
                         std::to_string(full));
    }
    if (chunk_feat.rows() < full) cache.closed = true;
    return Run(chunk_feat, cache, AttentionWindow{cfg_.chunk_frames, cfg_.left_chunks, cache.origin});
  }

  const std::vector<Block>& blocks() const { return blocks_; }

 private:
  EncodedSeq<T> Run(const Tensor<T>& feat, ChunkCache<T>& cache, const AttentionWindow& window) const {
    EncodedSeq<T> out;
    auto x = Subsample(feat);
    out.hidden = Forward(x, cache, window, &out.layer_states);
    out.grad_mask.assign(out.hidden.rows(), true);
    return out;
  }

  Tensor<T> Forward(const Tensor<T>& sub, ChunkCache<T>& cache, const AttentionWindow& window,
                    std::vector<Tensor<T>>* layer_states) const {
    const std::size_t n = sub.rows(), d = cfg_.d_model, start = cache.next_position;
    auto x = Add(sub, SinusoidalPositions<T>(start, n, d));
    const bool has_bank = !cache.bank.empty();
    const std::size_t bank_rows = cache.bank.rows();
    const std::size_t past_rows = cache.cached_frames(), past_start = cache.timeline_offset;

    AttentionMask mask{n, bank_rows + past_rows + n, {}};
    mask.allowed.assign(mask.queries * mask.keys, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto* row = mask.allowed.data() + i * mask.keys;
      for (std::size_t j = 0; j < bank_rows; ++j) row[j] = 1;
      for (std::size_t j = 0; j < past_rows; ++j) row[bank_rows + j] = window.Visible(past_start + j, start + i);
      for (std::size_t j = 0; j < n; ++j) row[bank_rows + past_rows + j] = window.Visible(start + j, start + i);
    }

    const std::size_t km1 = cfg_.conv_kernel - 1;
    for (std::size_t li = 0; li < blocks_.size(); ++li) {
      const auto& b = blocks_[li];
      auto& lc = cache.layers[li];
      auto a = b.norm_att(x);
      auto k_new = b.att.wk(a), v_new = b.att.wv(a);
      std::vector<Tensor<T>> ks, vs;
      if (has_bank) {
        ks.push_back(b.att.wk(cache.bank.layers[li]));
        vs.push_back(b.att.wv(cache.bank.layers[li]));
      }
      ks.push_back(lc.keys);
      vs.push_back(lc.values);
      ks.push_back(k_new);
      vs.push_back(v_new);
      x = Add(x, b.att.AttendProjected(a, ConcatRows(ks), ConcatRows(vs), &mask));

      auto pre = b.conv_pre(b.norm_conv(x));
      auto padded = km1 ? ConcatRows<T>({lc.conv_state, pre}) : pre;
      Tensor<T> dw;
      for (std::size_t j = 0; j < cfg_.conv_kernel; ++j) {
        auto term = MulRow(SliceRows(padded, j, j + n), SliceRows(b.dw_weight, j, j + 1).Reshape({d}));
        dw = j == 0 ? term : Add(dw, term);
      }
      x = Add(x, b.conv_post(Silu(AddRow(dw, b.dw_bias))));
      x = Add(x, b.ffn2(Relu(b.ffn1(b.norm_ffn(x)))));

      if (layer_states) layer_states->push_back(a.Detach());
      lc.keys = ConcatRows<T>({lc.keys, k_new.Detach()});
      lc.values = ConcatRows<T>({lc.values, v_new.Detach()});
      if (km1) lc.conv_state = SliceRows(padded, padded.rows() - km1, padded.rows()).Detach();
    }
    cache.next_position = start + n;
    Evict(cache, window);
    return final_norm_(x);
  }

  void Evict(ChunkCache<T>& cache, const AttentionWindow& window) const {
    if (window.chunk_frames == 0 || window.left_chunks == kUnboundedLeftChunks) return;
    // Keep only what the next chunk may still see.
    const std::size_t next_chunk = (cache.next_position - cache.origin + window.chunk_frames - 1) / window.chunk_frames;
    const std::size_t first_chunk = next_chunk > window.left_chunks ? next_chunk - window.left_chunks : 0;
    const std::size_t keep_from = cache.origin + first_chunk * window.chunk_frames;
    if (keep_from <= cache.timeline_offset) return;
    const std::size_t drop = std::min(keep_from - cache.timeline_offset, cache.cached_frames());
    for (auto& l : cache.layers) {
      l.keys = SliceRows(l.keys, drop, l.keys.rows());
      l.values = SliceRows(l.values, drop, l.values.rows());
    }
    cache.timeline_offset += drop;
  }

  EncoderConfig cfg_;
  Linear<T> sub_;
  std::vector<Block> blocks_;
  LayerNorm<T> final_norm_;
};

// Concatenates per-layer states of previous utterances in session order and
// downsamples each layer with the same block choices.
template <typename T>
HistoryBank<T> BuildHistoryBank(const std::vector<const EncodedSeq<T>*>& history, const EncoderConfig& cfg, Rng& rng,
                                bool training = false) {
  HistoryBank<T> bank;
  if (history.empty()) return bank;
  std::vector<std::vector<Tensor<T>>> per_layer(cfg.n_layers);
  for (const auto* e : history) {
    if (e->layer_states.size() != cfg.n_layers) {
      throw EncoderError("history encoding has " + std::to_string(e->layer_states.size()) + " layer states, expected " +
                         std::to_string(cfg.n_layers));
    }
    for (std::size_t l = 0; l < cfg.n_layers; ++l) per_layer[l].push_back(e->layer_states[l]);
  }
  DownsampleMode mode = cfg.downsample_mode;
  if (mode == DownsampleMode::kMix) {
    mode = training && rng.Bernoulli(0.5) ? DownsampleMode::kDilated : DownsampleMode::kStatistical;
  }
  const Rng pick = rng.Split(0x68697374);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    Rng layer_rng = pick;  // identical dilated picks across layers
    bank.layers.push_back(
        DownsampleHistory(ConcatRows(per_layer[l]).Detach(), static_cast<long long>(cfg.downsample_rate), mode,
                          layer_rng, training));
  }
  rng.NextU64();
  return bank;
}

template <typename T>
HistoryBank<T> BuildHistoryBank(const std::vector<EncodedSeq<T>>& history, const EncoderConfig& cfg, Rng& rng,
                                bool training = false) {
  std::vector<const EncodedSeq<T>*> ptrs;
  for (const auto& e : history) ptrs.push_back(&e);
  return BuildHistoryBank(ptrs, cfg, rng, training);
}

}  // namespace fnt
