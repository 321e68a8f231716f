#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fnt/numerics/nn.hpp"
#include "fnt/numerics/ops.hpp"
#include "fnt/predictor/blank.hpp"
#include "fnt/predictor/config.hpp"
#include "fnt/predictor/context.hpp"

namespace fnt {

// Context projected once per utterance and shared by every predictor call.
template <typename T>
struct PreparedContext {
  std::size_t length = 0;
  std::vector<Tensor<T>> cross_k, cross_v;  // per transformer block
  Tensor<T> long_k, long_v;                  // recurrent long-content attention
  Tensor<T> utterance_term;                  // Projection(c~), [1 x d]
  bool empty() const { return length == 0; }
};

// Attention weights as [layer][head] -> row-major [queries x L_C].
template <typename T>
using AttentionMaps = std::vector<std::vector<std::vector<T>>>;

template <typename T>
struct VocabOutput {
  Tensor<T> logprobs;  // [n x U], row i predicts the token after input i
  Tensor<T> hidden;    // [n x d], predictor states before any context is added
  AttentionMaps<T> attention;
};

template <typename T>
struct VocabState {
  std::vector<std::size_t> inputs;  // SOS followed by emitted tokens
  LstmState<T> lstm;
  Tensor<T> logprobs;  // [1 x U] for the next token
  Tensor<T> hidden;    // [1 x d]
};

template <typename T>
class VocabPredictor {
 public:
  struct Block {
    LayerNorm<T> norm_self, norm_cross, norm_ffn;
    MultiHeadAttention<T> self_att, cross_att;
    Linear<T> ffn1, ffn2;
  };

  VocabPredictor(ParamStore<T>& store, const PredictorConfig& cfg, Rng& rng, const std::string& name = "predv")
      : cfg_(cfg) {
    cfg_.Validate();
    const std::size_t d = cfg_.d_vocab, dc = cfg_.context_dim();
    embed_ = Embedding<T>(store, name + ".emb", cfg_.vocab + 1, d, rng);
    if (cfg_.mode == VocabMode::kTransformer) {
      for (std::size_t i = 0; i < cfg_.vocab_layers; ++i) {
        const auto p = name + ".l" + std::to_string(i);
        Block b;
        b.norm_self = LayerNorm<T>(store, p + ".norm_self", d);
        b.self_att = MultiHeadAttention<T>(store, p + ".self", d, cfg_.vocab_heads, rng);
        if (cfg_.token_level) {
          b.norm_cross = LayerNorm<T>(store, p + ".norm_cross", d);
          b.cross_att = MultiHeadAttention<T>(store, p + ".cross", d, cfg_.vocab_heads, rng, dc);
        }
        b.norm_ffn = LayerNorm<T>(store, p + ".norm_ffn", d);
        b.ffn1 = Linear<T>(store, p + ".ffn1", d, cfg_.vocab_ffn, rng);
        b.ffn2 = Linear<T>(store, p + ".ffn2", cfg_.vocab_ffn, d, rng);
        blocks_.push_back(std::move(b));
      }
      final_norm_ = LayerNorm<T>(store, name + ".final_norm", d);
    } else {
      lstm_ = Lstm<T>(store, name + ".lstm", d, d, cfg_.vocab_layers, rng);
      if (cfg_.slongfnt_text) {
        long_att_ = MultiHeadAttention<T>(store, name + ".long", d, cfg_.vocab_heads, rng, dc);
        out_ctx_ = Linear<T>(store, name + ".out_ctx", d, cfg_.vocab, rng, false);
      }
    }
    if (cfg_.utterance_level) {
      utt_proj_ = Linear<T>(store, name + ".utt_proj", 2 * dc, d, rng);
    }
    out_ = Linear<T>(store, name + ".out", d, cfg_.vocab, rng);
  }

  const PredictorConfig& config() const { return cfg_; }
  std::size_t sos() const { return cfg_.vocab; }

  PreparedContext<T> Prepare(const ContextEmbeddings<T>& ctx) const {
    PreparedContext<T> p;
    p.length = ctx.length();
    if (p.empty()) return p;
    if (ctx.rows.cols() != cfg_.context_dim()) {
      throw DimensionError("vocab predictor: context width " + std::to_string(ctx.rows.cols()) + ", expected " +
                           std::to_string(cfg_.context_dim()));
    }
    if (cfg_.token_level) {
      for (const auto& b : blocks_) {
        p.cross_k.push_back(b.cross_att.wk(ctx.rows));
        p.cross_v.push_back(b.cross_att.wv(ctx.rows));
      }
    }
    if (cfg_.slongfnt_text) {
      p.long_k = long_att_.wk(ctx.rows);
      p.long_v = long_att_.wv(ctx.rows);
    }
    if (cfg_.utterance_level) p.utterance_term = utt_proj_(UtteranceSummary(ctx.rows));
    return p;
  }

  // Runs the predictor over `inputs` (SOS first). Row i of the result
  // predicts the token following inputs[0..i].
  VocabOutput<T> Forward(const std::vector<std::size_t>& inputs, const PreparedContext<T>& ctx,
                         bool want_attention = false) const {
    CheckTokens(inputs);
    VocabOutput<T> out;
    if (cfg_.mode == VocabMode::kTransformer) {
      out.hidden = TransformerStates(inputs, ctx, want_attention ? &out.attention : nullptr);
    } else {
      auto state = lstm_.ZeroState();
      std::vector<Tensor<T>> rows;
      for (auto id : inputs) rows.push_back(lstm_.Step(state, embed_({id})));
      out.hidden = ConcatRows(rows);
    }
    out.logprobs = Head(out.hidden, ctx, want_attention ? &out.attention : nullptr);
    return out;
  }

  // Convenience for teacher forcing: inputs are [SOS, y_1 .. y_L].
  VocabOutput<T> ForwardTarget(const std::vector<std::size_t>& target, const PreparedContext<T>& ctx,
                               bool want_attention = false) const {
    std::vector<std::size_t> inputs{sos()};
    inputs.insert(inputs.end(), target.begin(), target.end());
    return Forward(inputs, ctx, want_attention);
  }

  VocabState<T> Start(const PreparedContext<T>& ctx) const {
    VocabState<T> s;
    if (cfg_.mode == VocabMode::kRecurrent) s.lstm = lstm_.ZeroState();
    return Push(std::move(s), sos(), ctx);
  }

  VocabState<T> Advance(const VocabState<T>& prev, std::size_t token, const PreparedContext<T>& ctx) const {
    if (token >= cfg_.vocab) {
      throw TokenError("vocab predictor: token " + std::to_string(token) + " outside [0, " +
                       std::to_string(cfg_.vocab) + ")");
    }
    return Push(prev, token, ctx);
  }

 private:
  void CheckTokens(const std::vector<std::size_t>& inputs) const {
    for (auto id : inputs) {
      if (id > cfg_.vocab) {
        throw TokenError("vocab predictor: token " + std::to_string(id) + " outside [0, " +
                         std::to_string(cfg_.vocab) + "]");
      }
    }
  }

  VocabState<T> Push(VocabState<T> s, std::size_t token, const PreparedContext<T>& ctx) const {
    s.inputs.push_back(token);
    if (cfg_.mode == VocabMode::kTransformer) {
      auto h = TransformerStates(s.inputs, ctx, nullptr);
      s.hidden = SliceRows(h, h.rows() - 1, h.rows());
    } else {
      s.hidden = lstm_.Step(s.lstm, embed_({token}));
    }
    s.logprobs = Head(s.hidden, ctx, nullptr);
    return s;
  }

  Tensor<T> TransformerStates(const std::vector<std::size_t>& inputs, const PreparedContext<T>& ctx,
                              AttentionMaps<T>* attention) const {
    const std::size_t n = inputs.size(), d = cfg_.d_vocab;
    auto x = Add(embed_(inputs), SinusoidalPositions<T>(0, n, d));
    const auto causal = AttentionMask::Causal(n);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto& b = blocks_[i];
      auto a = b.norm_self(x);
      x = Add(x, b.self_att(a, a, &causal));
      if (cfg_.token_level && !ctx.empty()) {
        std::vector<std::vector<T>> probs;
        x = Add(x, b.cross_att.AttendProjected(b.norm_cross(x), ctx.cross_k[i], ctx.cross_v[i], nullptr,
                                               attention ? &probs : nullptr));
        if (attention) attention->push_back(std::move(probs));
      }
      x = Add(x, b.ffn2(Relu(b.ffn1(b.norm_ffn(x)))));
    }
    return final_norm_(x);
  }

  Tensor<T> Head(const Tensor<T>& hidden, const PreparedContext<T>& ctx, AttentionMaps<T>* attention) const {
    auto o = hidden;
    if (cfg_.utterance_level && !ctx.empty()) o = AddRow(o, ctx.utterance_term.Reshape({cfg_.d_vocab}));
    if (cfg_.mode == VocabMode::kTransformer) return LogSoftmaxRows(out_(Relu(o)));
    auto logits = out_(o);
    if (cfg_.slongfnt_text && !ctx.empty()) {
      std::vector<std::vector<T>> probs;
      auto att = long_att_.AttendProjected(o, ctx.long_k, ctx.long_v, nullptr, attention ? &probs : nullptr);
      logits = Add(logits, out_ctx_(att));
      if (attention) attention->push_back(std::move(probs));
    }
    return LogSoftmaxRows(logits);
  }

  PredictorConfig cfg_;
  Embedding<T> embed_;
  std::vector<Block> blocks_;
  LayerNorm<T> final_norm_;
  Lstm<T> lstm_;
  MultiHeadAttention<T> long_att_;
  Linear<T> out_, out_ctx_, utt_proj_;
};

}  // namespace fnt
