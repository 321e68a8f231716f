#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fnt/corpus/dataset.hpp"
#include "fnt/decoder/history.hpp"
#include "fnt/harness/config.hpp"
#include "fnt/numerics/checkpoint.hpp"
#include "fnt/predictor/model.hpp"
#include "json.hpp"

namespace fnt {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossRecord {
  std::size_t step = 0;
  std::string stage;  // "pretrain" or "joint"
  double loss = 0, transducer = 0, lm = 0, ctc = 0;
  double grad_norm = 0;
};

inline nlohmann::json ToJson(const LossRecord& r) {
  return {{"step", r.step}, {"stage", r.stage},  {"loss", r.loss},          {"transducer", r.transducer},
          {"lm", r.lm},     {"ctc", r.ctc},      {"grad_norm", r.grad_norm}};
}

inline std::string CheckpointMetadata(const ExperimentConfig& cfg, std::size_t step, const std::string& precision) {
  nlohmann::json j = {{"format", "fnt-checkpoint"}, {"step", step}, {"precision", precision}, {"config", WriteConfig(cfg)}};
  return j.dump();
}

struct CheckpointInfo {
  ExperimentConfig config;
  std::size_t step = 0;
  std::string precision;
};

inline CheckpointInfo ParseCheckpointMetadata(const std::string& metadata) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(metadata);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata: ") + e.what());
  }
  if (j.value("format", "") != "fnt-checkpoint") throw CheckpointError("checkpoint metadata: not an fnt checkpoint");
  return {ParseConfig(j.at("config").get<std::string>()), j.at("step").get<std::size_t>(),
          j.at("precision").get<std::string>()};
}

template <typename T>
constexpr const char* PrecisionName() {
  return sizeof(T) == 4 ? "float32" : "float64";
}

// One training example: utterance `pos` of `session` with its oracle history.
template <typename T>
ModelInput<T> MakeInput(const ModelConfig& model, const Session& session, std::size_t pos, std::size_t nhis) {
  const Utterance& u = session.utterances.at(pos);
  ModelInput<T> in;
  if (u.has_features()) in.features = u.Features<T>();
  in.tokens = u.tokens;
  std::set<std::size_t> available;
  for (std::size_t j = 0; j < pos; ++j) available.insert(session.utterances[j].index);
  std::map<std::size_t, const Utterance*> by_index;
  for (std::size_t j = 0; j < pos; ++j) by_index[session.utterances[j].index] = &session.utterances[j];
  for (std::size_t i : AssembleHistory(u.index, nhis, available)) {
    const Utterance& h = *by_index.at(i);
    if (model.predictor.uses_context()) in.history_tokens.push_back(h.tokens);
    if (model.history_speech && h.has_features()) in.history_features.push_back(h.Features<T>());
  }
  return in;
}

// Plain SGD with global-norm clipping. Step s draws everything random from
// Rng(seed).Split(s), so a run resumed from a checkpoint at step s continues
// exactly as the uninterrupted run would.
template <typename T>
class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, FntModel<T>& model, const Dataset& data, const Dataset* text = nullptr)
      : cfg_(cfg), model_(model), text_(text) {
    for (const Session* s : data.Split("train")) {
      for (std::size_t p = 0; p < s->utterances.size(); ++p) train_.emplace_back(s, p);
    }
    if (train_.empty() && cfg_.train.steps > 0) throw TrainingError("train: the dataset has no training utterances");
    if (text_) {
      for (const auto& s : text_->sessions) {
        for (std::size_t p = 0; p < s.utterances.size(); ++p) text_utts_.emplace_back(&s, p);
      }
    }
  }

  std::size_t total_steps() const { return pretrain_steps() + cfg_.train.steps; }
  std::size_t pretrain_steps() const { return text_utts_.empty() ? 0 : cfg_.train.pretrain_steps; }
  std::size_t step() const { return step_; }
  void set_step(std::size_t s) { step_ = s; }

  LossRecord Step() {
    const std::size_t s = step_;
    Rng rng = Rng(cfg_.seed).Split(0x747261696e).Split(s);
    auto& store = model_.params();
    store.ZeroGrad();
    LossRecord rec;
    rec.step = s;
    const bool pretrain = s < pretrain_steps();
    rec.stage = pretrain ? "pretrain" : "joint";
    const std::size_t batch = pretrain ? cfg_.train.pretrain_batch_size : cfg_.train.batch_size;
    const auto& pool = pretrain ? text_utts_ : train_;
    const T scale = T(1) / static_cast<T>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto [session, pos] = pool[rng.Below(pool.size())];
      const std::size_t nhis = SampleNhisTrain(cfg_.train.nhis, rng);
      ModelInput<T> in = MakeInput<T>(model_.config(), *session, pos, nhis);
      try {
        Accumulate(in, pretrain, rng, scale, rec);
      } catch (const LossError& e) {
        throw TrainingError("train: " + std::string(e.what()) + " at step " + std::to_string(s));
      }
    }
    FinishStep(rec, batch, pretrain);
    return rec;
  }

 private:
  void Accumulate(const ModelInput<T>& in, bool pretrain, Rng& rng, T scale, LossRecord& rec) {
    if (pretrain) {
      auto loss = model_.LmObjective(in.tokens, model_.Prepare(model_.Context(in.history_tokens)));
      rec.lm += static_cast<double>(loss.item());
      Scale(loss, scale).Backward();
    } else {
      auto l = model_.Forward(in, rng, true);
      rec.transducer += static_cast<double>(l.transducer.item());
      rec.lm += static_cast<double>(l.lm.item());
      rec.ctc += static_cast<double>(l.ctc.item());
      rec.loss += static_cast<double>(l.total.item());
      Scale(l.total, scale).Backward();
    }
  }

  void FinishStep(LossRecord& rec, std::size_t batch, bool pretrain) {
    const std::size_t s = rec.step;
    auto& store = model_.params();
    rec.transducer /= static_cast<double>(batch);
    rec.lm /= static_cast<double>(batch);
    rec.ctc /= static_cast<double>(batch);
    rec.loss = pretrain ? rec.lm : rec.loss / static_cast<double>(batch);
    if (!std::isfinite(rec.loss)) {
      throw TrainingError("train: non-finite loss at step " + std::to_string(s));
    }
    double sq = 0;
    for (const auto& [name, p] : store.params()) {
      if (!p.has_grad()) continue;
      for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    rec.grad_norm = std::sqrt(sq);
    if (!std::isfinite(rec.grad_norm)) {
      throw TrainingError("train: non-finite gradient at step " + std::to_string(s));
    }
    const double lr = pretrain ? cfg_.train.pretrain_lr : cfg_.train.lr;
    const double clip = rec.grad_norm > cfg_.train.clip ? cfg_.train.clip / rec.grad_norm : 1.0;
    const T factor = static_cast<T>(lr * clip);
    for (const auto& [name, p] : store.params()) {
      if (!p.has_grad()) continue;
      Tensor<T> t = p;
      auto w = t.mutable_data();
      auto g = p.grad();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= factor * g[i];
    }
    ++step_;
  }

 public:
  // Runs until total_steps(); `on_step` sees every record, `on_checkpoint`
  // fires every checkpoint_every steps (if set) and at the end.
  void Run(const std::function<void(const LossRecord&)>& on_step,
           const std::function<void(std::size_t)>& on_checkpoint = {}) {
    while (step_ < total_steps()) {
      auto rec = Step();
      if (on_step) on_step(rec);
      const std::size_t every = cfg_.train.checkpoint_every;
      if (on_checkpoint && every > 0 && step_ % every == 0 && step_ < total_steps()) on_checkpoint(step_);
    }
    if (on_checkpoint) on_checkpoint(step_);
  }

 private:
  ExperimentConfig cfg_;
  FntModel<T>& model_;
  const Dataset* text_;
  std::vector<std::pair<const Session*, std::size_t>> train_, text_utts_;
  std::size_t step_ = 0;
};

// Model weights are derived from the run seed.
inline std::uint64_t ModelSeed(const ExperimentConfig& cfg) { return Rng(cfg.seed).Split(0x6d6f64656c).NextU64(); }

}  // namespace fnt
