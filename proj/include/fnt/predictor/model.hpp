#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fnt/encoder/encoder.hpp"
#include "fnt/losses/ctc.hpp"
#include "fnt/losses/lattice.hpp"
#include "fnt/losses/lm.hpp"
#include "fnt/losses/transducer.hpp"
#include "fnt/predictor/blank.hpp"
#include "fnt/predictor/combine.hpp"
#include "fnt/predictor/config.hpp"
#include "fnt/predictor/context.hpp"
#include "fnt/predictor/vocab.hpp"

namespace fnt {

struct ModelConfig {
  std::string kind = "fnt";
  EncoderConfig encoder;
  PredictorConfig predictor;
  bool streaming = false;
  bool history_speech = false;
  LossWeights loss;

  bool uses_history() const { return history_speech || predictor.uses_context(); }

  void Validate() const {
    encoder.Validate();
    predictor.Validate();
    if (streaming && predictor.mode != VocabMode::kRecurrent) {
      throw std::invalid_argument("model: streaming models use the recurrent vocabulary predictor");
    }
  }

  // fnt, longfnt_text, longfnt_speech, longfnt, sfnt, slongfnt_text,
  // slongfnt_speech, slongfnt
  static ModelConfig Preset(const std::string& kind) {
    ModelConfig c;
    c.kind = kind;
    auto& p = c.predictor;
    if (kind == "fnt") {
    } else if (kind == "longfnt_text") {
      p.utterance_level = p.token_level = true;
    } else if (kind == "longfnt_speech") {
      c.history_speech = true;
    } else if (kind == "longfnt") {
      p.utterance_level = p.token_level = true;
      c.history_speech = true;
    } else if (kind == "sfnt" || kind == "slongfnt_text" || kind == "slongfnt_speech" || kind == "slongfnt") {
      c.streaming = true;
      p.mode = VocabMode::kRecurrent;
      if (kind == "slongfnt_text" || kind == "slongfnt") {
        p.slongfnt_text = true;
        p.context_source = ContextSource::kPredvHidden;
      }
      if (kind == "slongfnt_speech" || kind == "slongfnt") c.history_speech = true;
    } else {
      throw std::invalid_argument("unknown model kind: " + kind);
    }
    return c;
  }
};

template <typename T>
struct ModelInput {
  Tensor<T> features;  // [T_in x d_feat]
  TargetSeq tokens;
  std::vector<Tensor<T>> history_features;  // session order, oldest first
  std::vector<TargetSeq> history_tokens;
};

template <typename T>
struct ModelLosses {
  Tensor<T> transducer, lm, ctc, total;
  bool ctc_used = false;
  std::size_t frames = 0;
};

// History-derived inputs that carry no gradient: the long-speech left
// context, the streaming history bank and Pred^V-hidden context rows.
template <typename T>
struct FrozenHistory {
  std::optional<ChunkCache<T>> speech_cache;
  HistoryBank<T> bank;
  std::optional<ContextEmbeddings<T>> context;
};

// Per-frame quantities shared by every hypothesis of a decode.
template <typename T>
struct FrameScores {
  Tensor<T> encoder_lp;  // [T x (U+1)], CTC blank last
  Tensor<T> joint_enc;   // [T x d_joint]
  std::size_t frames() const { return encoder_lp.size() == 0 ? 0 : encoder_lp.rows(); }
};

template <typename T>
struct PredictorState {
  LstmState<T> blank;
  Tensor<T> blank_proj;  // [1 x d_joint]
  VocabState<T> vocab;
};

template <typename T>
class FntModel {
 public:
  explicit FntModel(const ModelConfig& cfg, std::uint64_t seed = 1) : cfg_(cfg) {
    cfg_.Validate();
    Rng rng(seed);
    const auto& e = cfg_.encoder;
    const auto& p = cfg_.predictor;
    store_ = std::make_unique<ParamStore<T>>();
    auto& s = *store_;
    encoder_.emplace(s, e, rng);
    enc_vocab_ = Linear<T>(s, "enc.vocab", e.d_model, p.vocab + 1, rng);
    blank_ = BlankPredictor<T>(s, "predb", p.vocab, p.d_blank, p.blank_layers, rng);
    joint_ = JointBlank<T>(s, "joint", e.d_model, p.d_blank, p.d_joint, rng);
    vocab_.emplace(s, p, rng);
    if (p.uses_context() && p.context_source == ContextSource::kTrained) {
      context_encoder_ = ContextEncoder<T>(s, "ctx", p.vocab, p.d_context, p.context_layers, p.context_heads, rng);
    }
    if (p.uses_context() && p.context_source == ContextSource::kExternal) {
      external_.emplace(p.d_context, p.external_seed, p.sos());
    }
    beta_ = s.Constant("beta", {1}, static_cast<T>(p.beta_init));
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return *store_; }
  const ParamStore<T>& params() const { return *store_; }
  const Encoder<T>& encoder() const { return *encoder_; }
  const VocabPredictor<T>& vocab_predictor() const { return *vocab_; }
  const BlankPredictor<T>& blank_predictor() const { return blank_; }
  const JointBlank<T>& joint() const { return joint_; }
  const Tensor<T>& beta() const { return beta_; }

  // Streaming history encodings: each previous utterance from position 0,
  // chunk-masked, no bank of its own, no gradient.
  std::vector<EncodedSeq<T>> HistoryEncodings(const std::vector<Tensor<T>>& history_features) const {
    NoGradGuard no_grad;
    std::vector<EncodedSeq<T>> out;
    for (const auto& f : history_features) out.push_back(encoder_->EncodeMaskedChunks(f));
    return out;
  }

  FrozenHistory<T> Freeze(const ModelInput<T>& in, Rng& rng, bool training) const {
    FrozenHistory<T> f;
    if (cfg_.history_speech && !in.history_features.empty()) {
      if (cfg_.streaming) {
        f.bank = BuildHistoryBank(HistoryEncodings(in.history_features), cfg_.encoder, rng, training);
      } else {
        f.speech_cache = encoder_->LongSpeechCache(in.history_features);
      }
    }
    if (cfg_.predictor.uses_context() && cfg_.predictor.context_source == ContextSource::kPredvHidden) {
      f.context = Context(in.history_tokens);
    }
    return f;
  }

  EncodedSeq<T> Encode(const Tensor<T>& features, const FrozenHistory<T>& frozen) const {
    if (!cfg_.streaming) {
      return frozen.speech_cache ? encoder_->EncodeAfter(features, *frozen.speech_cache)
                                 : encoder_->EncodeOffline(features);
    }
    return encoder_->EncodeMaskedChunks(features, frozen.bank);
  }

  EncodedSeq<T> Encode(const Tensor<T>& features, const std::vector<Tensor<T>>& history_features, Rng& rng,
                       bool training) const {
    ModelInput<T> in;
    in.history_features = history_features;
    return Encode(features, Freeze(in, rng, training));
  }

  ContextEmbeddings<T> Context(const std::vector<TargetSeq>& history_tokens, const FrozenHistory<T>& frozen) const {
    return frozen.context ? *frozen.context : Context(history_tokens);
  }

  ContextEmbeddings<T> Context(const std::vector<TargetSeq>& history_tokens) const {
    const auto& p = cfg_.predictor;
    if (!p.uses_context() || history_tokens.empty()) {
      ContextEmbeddings<T> empty;
      empty.source = p.context_source;
      empty.rows = Tensor<T>::Zeros({0, p.context_dim()});
      return empty;
    }
    switch (p.context_source) {
      case ContextSource::kTrained: return context_encoder_.Encode(history_tokens);
      case ContextSource::kExternal: return external_->Encode(history_tokens);
      case ContextSource::kPredvHidden: {
        std::vector<Tensor<T>> hidden;
        for (const auto& y : history_tokens) hidden.push_back(PredvHidden(y));
        return ContextFromHidden(hidden, p.d_vocab);
      }
    }
    throw std::logic_error("unreachable context source");
  }

  // Pred^V states for [SOS, y...] with no context, used as context rows.
  Tensor<T> PredvHidden(const TargetSeq& tokens) const {
    NoGradGuard no_grad;
    return vocab_->ForwardTarget(tokens, {}).hidden.Detach();
  }

  PreparedContext<T> Prepare(const ContextEmbeddings<T>& ctx) const { return vocab_->Prepare(ctx); }

  Tensor<T> EncoderLogProbs(const Tensor<T>& hidden) const { return LogSoftmaxRows(enc_vocab_(hidden)); }

  // Full lattice of joint logits [(T (L+1)) x (1+U)] before normalization.
  Tensor<T> JointLogits(const Tensor<T>& hidden, const TargetSeq& tokens, const PreparedContext<T>& ctx,
                        Tensor<T>* lm_lp = nullptr, Tensor<T>* enc_lp = nullptr) const {
    const std::size_t U = cfg_.predictor.vocab;
    auto ztv = EncoderLogProbs(hidden);
    auto zlv = vocab_->ForwardTarget(tokens, ctx).logprobs;
    auto zb = joint_.Grid(hidden, blank_.Sequence(tokens));
    auto zv = GridAdd(SliceCols(ztv, 0, U), MulScalar(zlv, beta_));
    if (lm_lp) *lm_lp = zlv;
    if (enc_lp) *enc_lp = ztv;
    return ConcatCols<T>({zb, zv});
  }

  ModelLosses<T> Forward(const ModelInput<T>& in, Rng& rng, bool training = true) const {
    return Forward(in, Freeze(in, rng, training));
  }

  ModelLosses<T> Forward(const ModelInput<T>& in, const FrozenHistory<T>& frozen) const {
    const auto enc = Encode(in.features, frozen);
    return Losses(enc.hidden, in.tokens, Prepare(Context(in.history_tokens, frozen)));
  }

  ModelLosses<T> Losses(const Tensor<T>& hidden, const TargetSeq& y, const PreparedContext<T>& ctx) const {
    ModelLosses<T> out;
    out.frames = hidden.rows();
    Tensor<T> zlv, ztv;
    auto logits = JointLogits(hidden, y, ctx, &zlv, &ztv);
    out.transducer = TransducerLoss(LogitLattice<T>::FromLogits(logits, out.frames, y.size()), y);
    out.lm = y.empty() ? Tensor<T>::Scalar(T(0)) : LmLoss(SliceRows(zlv, 0, y.size()), y);
    out.ctc_used = CtcMinimumFrames(y) <= out.frames;
    out.ctc = out.ctc_used ? CtcLoss(ztv, y) : Tensor<T>::Scalar(T(0));
    out.total = TotalLoss(out.transducer, out.lm, out.ctc, cfg_.loss);
    return out;
  }

  // Text-only LM objective on Pred^V (pre-training stage).
  Tensor<T> LmObjective(const TargetSeq& y, const PreparedContext<T>& ctx = {}) const {
    auto zlv = vocab_->ForwardTarget(y, ctx).logprobs;
    return LmLoss(SliceRows(zlv, 0, y.size()), y);
  }

  // ---- decoding ----
  FrameScores<T> Frames(const Tensor<T>& hidden) const { return {EncoderLogProbs(hidden), joint_.enc(hidden)}; }

  PredictorState<T> StartState(const PreparedContext<T>& ctx) const {
    PredictorState<T> s;
    s.blank = blank_.Start();
    s.blank_proj = joint_.pred(blank_.Step(s.blank, cfg_.predictor.sos()));
    s.vocab = vocab_->Start(ctx);
    return s;
  }

  PredictorState<T> Advance(const PredictorState<T>& prev, std::size_t token, const PreparedContext<T>& ctx) const {
    PredictorState<T> s;
    s.blank = prev.blank;
    s.blank_proj = joint_.pred(blank_.Step(s.blank, token));
    s.vocab = vocab_->Advance(prev.vocab, token, ctx);
    return s;
  }

  // log P([blank; vocab]) at frame t for one predictor state.
  std::vector<double> StepLogProbs(const FrameScores<T>& frames, std::size_t t, const PredictorState<T>& s) const {
    const std::size_t U = cfg_.predictor.vocab;
    auto zb = joint_.FromProjected(SliceRows(frames.joint_enc, t, t + 1), s.blank_proj);
    auto zv = CombineVocab(SliceRows(frames.encoder_lp, t, t + 1), s.vocab.logprobs, beta_);
    auto lp = LogPosterior(zb, zv);
    std::vector<double> out(U + 1);
    for (std::size_t i = 0; i <= U; ++i) out[i] = static_cast<double>(lp[i]);
    return out;
  }

 private:
  ModelConfig cfg_;
  std::unique_ptr<ParamStore<T>> store_;
  std::optional<Encoder<T>> encoder_;
  Linear<T> enc_vocab_;
  BlankPredictor<T> blank_;
  JointBlank<T> joint_;
  std::optional<VocabPredictor<T>> vocab_;
  ContextEncoder<T> context_encoder_;
  std::optional<ExternalContextProvider<T>> external_;
  Tensor<T> beta_;
};

}  // namespace fnt
