#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <future>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "fnt/corpus/session.hpp"
#include "fnt/decoder/history.hpp"
#include "fnt/decoder/search.hpp"
#include "fnt/predictor/model.hpp"
#include "json.hpp"

namespace fnt {

struct DecodeConfig {
  std::size_t beam_width = 8;
  std::size_t nhis = 2;
  std::size_t max_symbols_per_frame = 5;
  HistoryMode history_mode = HistoryMode::kHypothesis;
  bool history_speech = true;   // use speech history when the model supports it
  bool streaming = true;        // chunk-synchronous decoding for streaming models
  std::size_t downsample_rate = 0;  // 0: the model's K
  std::uint64_t seed = 0;

  SearchConfig search() const { return {beam_width, max_symbols_per_frame}; }
  void Validate() const { search().Validate(); }
};

// Decoding view of one utterance for the generic searches. Frames can be
// appended chunk by chunk.
template <typename T>
class FntScorer {
 public:
  using State = PredictorState<T>;

  FntScorer(const FntModel<T>& model, PreparedContext<T> ctx) : model_(&model), ctx_(std::move(ctx)) {}

  void AddFrames(const Tensor<T>& hidden) {
    if (hidden.rows() == 0) return;
    chunks_.push_back(model_->Frames(hidden));
    for (std::size_t r = 0; r < hidden.rows(); ++r) index_.emplace_back(chunks_.size() - 1, r);
  }

  std::size_t frames() const { return index_.size(); }
  State Start() const { return model_->StartState(ctx_); }
  State Advance(const State& s, std::size_t token) const { return model_->Advance(s, token, ctx_); }
  std::vector<double> LogProbs(std::size_t t, const State& s) const {
    const auto [c, r] = index_.at(t);
    return model_->StepLogProbs(chunks_[c], r, s);
  }

 private:
  const FntModel<T>* model_;
  PreparedContext<T> ctx_;
  std::vector<FrameScores<T>> chunks_;
  std::vector<std::pair<std::size_t, std::size_t>> index_;
};

struct UtteranceResult {
  std::string session_id;
  std::size_t index = 0;
  std::vector<std::size_t> reference, tokens;
  double score = 0;
  std::vector<std::size_t> history;   // indices used as history
  std::vector<double> chunk_times;    // seconds since the utterance's audio began
  double duration = 0;                // T^p in seconds
  double end_time = 0;
  double end_latency = 0;
};

inline std::string TokenText(const std::vector<std::size_t>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) s += (i ? " w" : "w") + std::to_string(tokens[i]);
  return s;
}

inline nlohmann::json ToJson(const UtteranceResult& r) {
  return {{"session_id", r.session_id}, {"utterance_index", r.index}, {"tokens", r.tokens},
          {"text", TokenText(r.tokens)}, {"reference", r.reference},   {"history", r.history},
          {"chunk_times", r.chunk_times}, {"duration", r.duration},    {"end_latency", r.end_latency}};
}

// Pred^V states over [SOS, y...] with no context, computed step by step.
template <typename T>
Tensor<T> IncrementalPredvHidden(const FntModel<T>& model, const std::vector<std::size_t>& tokens) {
  NoGradGuard no_grad;
  const PreparedContext<T> none;
  const auto& v = model.vocab_predictor();
  auto state = v.Start(none);
  std::vector<Tensor<T>> rows = {state.hidden};
  for (std::size_t tok : tokens) {
    state = v.Advance(state, tok, none);
    rows.push_back(state.hidden);
  }
  return ConcatRows(rows).Detach();
}

// Sequential decoder for one session. History is read only from utterances
// already decoded by this instance.
template <typename T>
class SessionDecoder {
 public:
  SessionDecoder(const FntModel<T>& model, DecodeConfig cfg)
      : model_(model), cfg_(cfg), buffer_(cfg.history_mode) {
    cfg_.Validate();
    enc_cfg_ = model.config().encoder;
    if (cfg_.downsample_rate != 0) enc_cfg_.downsample_rate = cfg_.downsample_rate;
  }

  const HistoryBuffer<T>& buffer() const { return buffer_; }
  const DecodeConfig& config() const { return cfg_; }

  UtteranceResult Decode(const Utterance& u) {
    buffer_.CheckOrder(u.index);
    NoGradGuard no_grad;
    UtteranceResult r;
    r.session_id = u.session_id;
    r.index = u.index;
    r.reference = u.tokens;
    r.duration = u.duration_seconds();
    r.history = buffer_.Window(u.index, cfg_.nhis);
    std::optional<EncodedSeq<T>> recorded;
    if (model_.config().streaming && cfg_.streaming) {
      recorded = Streaming(u, r);
    } else {
      Offline(u, r);
    }
    const bool keep_speech = model_.config().history_speech && model_.config().streaming;
    buffer_.Record(u.index, u.tokens, r.tokens, keep_speech ? std::move(recorded) : std::nullopt);
    return r;
  }

  std::vector<UtteranceResult> DecodeAll(const Session& s) {
    std::vector<UtteranceResult> out;
    for (const auto& u : s.utterances) out.push_back(Decode(u));
    return out;
  }

  // Oracle features of earlier utterances, used by offline long-speech models.
  void RememberFeatures(const Utterance& u) { features_[u.index] = u.Features<T>(); }

 private:
  using Clock = std::chrono::steady_clock;

  static double Seconds(Clock::duration d) { return std::chrono::duration<double>(d).count(); }

  bool UseSpeech() const { return model_.config().history_speech && cfg_.history_speech; }

  PreparedContext<T> BuildContext(const std::vector<std::size_t>& window) {
    const auto& p = model_.config().predictor;
    if (!p.uses_context() || window.empty()) return {};
    if (p.context_source == ContextSource::kPredvHidden) {
      std::vector<Tensor<T>> hidden;
      for (std::size_t i : window) {
        auto& e = buffer_.at(i);
        if (!e.predv_hidden) e.predv_hidden = IncrementalPredvHidden(model_, e.transcript);
        hidden.push_back(*e.predv_hidden);
      }
      return model_.Prepare(ContextFromHidden(hidden, p.d_vocab));
    }
    std::vector<TargetSeq> texts;
    for (std::size_t i : window) texts.push_back(buffer_.at(i).transcript);
    return model_.Prepare(model_.Context(texts));
  }

  template <typename Scorer>
  void Search(const Scorer& scorer, std::size_t end, std::optional<BeamSearch<Scorer>>& beam,
              std::optional<GreedySearch<Scorer>>& greedy) const {
    if (cfg_.beam_width == 1) {
      if (!greedy) greedy.emplace(scorer, cfg_.search());
      greedy->Run(scorer, end);
    } else {
      if (!beam) beam.emplace(scorer, cfg_.search());
      beam->Run(scorer, end);
    }
  }

  void Offline(const Utterance& u, UtteranceResult& r) {
    FrozenHistory<T> frozen;
    if (UseSpeech() && !r.history.empty()) {
      std::vector<Tensor<T>> feats;
      for (std::size_t i : r.history) {
        auto it = features_.find(i);
        if (it == features_.end()) throw HistoryError("history: no features for utterance " + std::to_string(i));
        feats.push_back(it->second);
      }
      if (model_.config().streaming) {
        Rng rng = Rng(cfg_.seed).Split(u.index);
        frozen.bank = BuildHistoryBank(model_.HistoryEncodings(feats), enc_cfg_, rng, false);
      } else {
        frozen.speech_cache = model_.encoder().LongSpeechCache(feats);
      }
    }
    auto ctx = BuildContext(r.history);
    const auto features = u.Features<T>();
    RememberFeatures(u);
    FntScorer<T> scorer(model_, std::move(ctx));
    scorer.AddFrames(model_.Encode(features, frozen).hidden);
    std::optional<BeamSearch<FntScorer<T>>> beam;
    std::optional<GreedySearch<FntScorer<T>>> greedy;
    Search(scorer, scorer.frames(), beam, greedy);
    const auto& best = beam ? beam->best() : greedy->best();
    r.tokens = best.tokens;
    r.score = best.score;
  }

  // Chunk c's audio is complete at min((c + 1) chunk duration, T^p); compute
  // then runs as fast as possible on a virtual clock. History-derived inputs
  // (bank and context) are prepared on a separate worker that must finish
  // before the first chunk is processed.
  EncodedSeq<T> Streaming(const Utterance& u, UtteranceResult& r) {
    const auto& enc = model_.encoder();
    const auto window = r.history;
    auto worker = std::async(std::launch::async, [&, window]() {
      NoGradGuard no_grad;
      const auto start = Clock::now();
      HistoryBank<T> bank;
      if (UseSpeech()) {
        std::vector<const EncodedSeq<T>*> states;
        for (std::size_t i : window) {
          const auto& e = buffer_.at(i);
          if (e.speech) states.push_back(&*e.speech);
        }
        Rng rng = Rng(cfg_.seed).Split(u.index);
        bank = BuildHistoryBank(states, enc_cfg_, rng, false);
      }
      auto ctx = BuildContext(window);
      return std::make_tuple(std::move(bank), std::move(ctx), Seconds(Clock::now() - start));
    });
    auto [bank, ctx, ready] = worker.get();

    const auto features = u.Features<T>();
    const std::size_t rate = model_.config().encoder.subsample_rate;
    const std::size_t chunk_in = rate * model_.config().encoder.chunk_frames;
    const double chunk_seconds = static_cast<double>(chunk_in) * kFrameShiftSeconds;
    const std::size_t usable = features.rows() / rate * rate;

    auto cache = enc.NewCache(std::move(bank));
    FntScorer<T> scorer(model_, std::move(ctx));
    std::optional<BeamSearch<FntScorer<T>>> beam;
    std::optional<GreedySearch<FntScorer<T>>> greedy;
    std::vector<Tensor<T>> hidden;
    std::vector<std::vector<Tensor<T>>> states(model_.config().encoder.n_layers);
    double clock = ready;
    for (std::size_t begin = 0, c = 0; begin < usable; begin += chunk_in, ++c) {
      const std::size_t end = std::min(begin + chunk_in, usable);
      clock = std::max(clock, std::min(static_cast<double>(c + 1) * chunk_seconds, r.duration));
      const auto start = Clock::now();
      auto out = enc.EncodeChunk(SliceRows(features, begin, end), cache);
      scorer.AddFrames(out.hidden);
      Search(scorer, scorer.frames(), beam, greedy);
      clock += Seconds(Clock::now() - start);
      r.chunk_times.push_back(clock);
      hidden.push_back(out.hidden);
      for (std::size_t l = 0; l < states.size(); ++l) states[l].push_back(out.layer_states[l]);
    }
    const auto& best = beam ? beam->best() : greedy->best();
    r.tokens = best.tokens;
    r.score = best.score;
    r.end_time = r.chunk_times.empty() ? ready : r.chunk_times.back();
    r.end_latency = r.end_time - r.duration;

    EncodedSeq<T> recorded;
    if (!hidden.empty()) {
      recorded.hidden = ConcatRows(hidden);
      for (auto& per_layer : states) recorded.layer_states.push_back(ConcatRows(per_layer));
    }
    return recorded;
  }

  const FntModel<T>& model_;
  DecodeConfig cfg_;
  EncoderConfig enc_cfg_;
  HistoryBuffer<T> buffer_;
  std::map<std::size_t, Tensor<T>> features_;
};

template <typename T>
std::vector<UtteranceResult> DecodeSession(const FntModel<T>& model, const Session& s, const DecodeConfig& cfg) {
  SessionDecoder<T> d(model, cfg);
  return d.DecodeAll(s);
}

}  // namespace fnt
