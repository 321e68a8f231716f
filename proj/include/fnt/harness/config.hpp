#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdint>
#include <charconv>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "fnt/corpus/session.hpp"
#include "fnt/decoder/session_decoder.hpp"
#include "fnt/predictor/model.hpp"

namespace fnt {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  std::size_t steps = 24000;
  std::size_t batch_size = 8;
  double lr = 0.1;
  double clip = 1.0;
  std::size_t nhis = 2;
  std::size_t pretrain_steps = 1500;
  std::size_t pretrain_batch_size = 8;
  double pretrain_lr = 0.2;
  std::size_t checkpoint_every = 0;  // 0: only at the end

  bool operator==(const TrainConfig&) const = default;
};

struct LatencyConfig {
  std::size_t runs = 20;
  std::size_t sessions = 8;

  bool operator==(const LatencyConfig&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::size_t threads = 0;  // 0: hardware concurrency
  std::string data_dir = "data";  // dataset directory read by train and eval
  CorpusConfig corpus;
  ModelConfig model = ModelConfig::Preset("longfnt_text");
  TrainConfig train;
  DecodeConfig decode;
  std::string eval_split = "test";
  LatencyConfig latency;

  void Validate() const {
    corpus.Validate();
    model.Validate();
    decode.Validate();
    if (model.predictor.vocab != corpus.vocab) throw ConfigError("config: model vocab must equal corpus vocab");
    if (model.encoder.d_feat != corpus.d_feat) throw ConfigError("config: model d_feat must equal corpus d_feat");
    if (train.batch_size == 0 || train.pretrain_batch_size == 0) throw ConfigError("config: batch sizes must be >= 1");
    if (!(train.lr > 0) || !(train.clip > 0)) throw ConfigError("config: lr and clip must be positive");
    if (latency.runs == 0) throw ConfigError("config: latency.runs must be >= 1");
  }
};

namespace detail {

using boost::property_tree::ptree;

template <typename V>
void Read(const ptree& pt, const std::string& key, V& value) {
  if (auto v = pt.get_optional<std::string>(key)) {
    try {
      if constexpr (std::is_same_v<V, bool>) {
        if (*v == "true" || *v == "1") {
          value = true;
        } else if (*v == "false" || *v == "0") {
          value = false;
        } else {
          throw std::invalid_argument(*v);
        }
      } else if constexpr (std::is_same_v<V, std::string>) {
        value = *v;
      } else if constexpr (std::is_floating_point_v<V>) {
        std::size_t used = 0;
        value = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument(*v);
      } else {
        if (!v->empty() && v->front() == '-') throw std::invalid_argument(*v);
        std::size_t used = 0;
        value = static_cast<V>(std::stoull(*v, &used));
        if (used != v->size()) throw std::invalid_argument(*v);
      }
    } catch (const std::exception&) {
      throw ConfigError("config: bad value for " + key + ": '" + *v + "'");
    }
  }
}

// Shortest text that reads back to the same double.
inline std::string Format(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename V>
void Write(ptree& pt, const std::string& key, const V& value) {
  if constexpr (std::is_same_v<V, bool>) {
    pt.put(key, value ? "true" : "false");
  } else if constexpr (std::is_same_v<V, std::string>) {
    pt.put(key, value);
  } else if constexpr (std::is_floating_point_v<V>) {
    pt.put(key, Format(value));
  } else {
    pt.put(key, std::to_string(value));
  }
}

// One table drives both directions so reading and writing cannot drift.
template <typename Visit>
void VisitKeys(ExperimentConfig& c, Visit&& v) {
  v("run.seed", c.seed);
  v("run.threads", c.threads);

  auto& d = c.corpus;
  v("data.dir", c.data_dir);
  v("data.vocab", d.vocab);
  v("data.d_feat", d.d_feat);
  v("data.n_pairs", d.n_pairs);
  v("data.epsilon", d.epsilon);
  v("data.delta_min", d.delta_min);
  v("data.sigma", d.sigma);
  v("data.n_utterances", d.n_utterances);
  v("data.min_tokens", d.min_tokens);
  v("data.max_tokens", d.max_tokens);
  v("data.frames_per_token", d.frames_per_token);
  v("data.silence_frames", d.silence_frames);
  v("data.confusable_rate", d.confusable_rate);
  v("data.gap_drop_prob", d.gap_drop_prob);
  v("data.keywords_per_session", d.keywords_per_session);
  v("data.intro_window", d.nhis);
  v("data.train_sessions", d.train_sessions);
  v("data.dev_sessions", d.dev_sessions);
  v("data.test_sessions", d.test_sessions);
  v("data.text_sessions", d.text_sessions);

  auto& e = c.model.encoder;
  auto& p = c.model.predictor;
  v("model.n_layers", e.n_layers);
  v("model.d_model", e.d_model);
  v("model.n_heads", e.n_heads);
  v("model.d_ffn", e.d_ffn);
  v("model.subsample_rate", e.subsample_rate);
  v("model.conv_kernel", e.conv_kernel);
  v("model.chunk_frames", e.chunk_frames);
  v("model.left_chunks", e.left_chunks);
  v("model.downsample_rate", e.downsample_rate);
  v("model.d_blank", p.d_blank);
  v("model.blank_layers", p.blank_layers);
  v("model.d_joint", p.d_joint);
  v("model.d_vocab", p.d_vocab);
  v("model.vocab_layers", p.vocab_layers);
  v("model.vocab_heads", p.vocab_heads);
  v("model.vocab_ffn", p.vocab_ffn);
  v("model.utterance_level", p.utterance_level);
  v("model.token_level", p.token_level);
  v("model.slongfnt_text", p.slongfnt_text);
  v("model.history_speech", c.model.history_speech);
  v("model.d_context", p.d_context);
  v("model.context_layers", p.context_layers);
  v("model.context_heads", p.context_heads);
  v("model.external_seed", p.external_seed);
  v("model.beta_init", p.beta_init);

  v("loss.lambda_lm", c.model.loss.lm);
  v("loss.lambda_ctc", c.model.loss.ctc);

  auto& t = c.train;
  v("train.steps", t.steps);
  v("train.batch_size", t.batch_size);
  v("train.lr", t.lr);
  v("train.clip", t.clip);
  v("train.nhis", t.nhis);
  v("train.pretrain_steps", t.pretrain_steps);
  v("train.pretrain_batch_size", t.pretrain_batch_size);
  v("train.pretrain_lr", t.pretrain_lr);
  v("train.checkpoint_every", t.checkpoint_every);

  auto& dc = c.decode;
  v("decode.beam_width", dc.beam_width);
  v("decode.nhis", dc.nhis);
  v("decode.max_symbols_per_frame", dc.max_symbols_per_frame);
  v("decode.history_speech", dc.history_speech);
  v("decode.streaming", dc.streaming);
  v("decode.downsample_rate", dc.downsample_rate);
  v("decode.split", c.eval_split);

  v("latency.runs", c.latency.runs);
  v("latency.sessions", c.latency.sessions);
}

}  // namespace detail

// Sections: run, data, model, loss, train, decode, latency. model.kind picks a
// preset first; the remaining model keys then override it.
inline ExperimentConfig ParseConfig(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  std::string kind = tree.get<std::string>("model.kind", c.model.kind);
  try {
    c.model = ModelConfig::Preset(kind);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  std::string left = tree.get<std::string>("model.left_chunks", "");
  if (left == "unbounded") tree.put("model.left_chunks", std::to_string(kUnboundedLeftChunks));
  std::string vmode = tree.get<std::string>("model.vocab_mode", ToString(c.model.predictor.mode));
  std::string source = tree.get<std::string>("model.context_source", ToString(c.model.predictor.context_source));
  std::string mode = tree.get<std::string>("model.downsample_mode", ToString(c.model.encoder.downsample_mode));
  std::string hist = tree.get<std::string>("decode.history_mode", ToString(c.decode.history_mode));
  try {
    c.model.predictor.mode = ParseVocabMode(vmode);
    c.model.predictor.context_source = ParseContextSource(source);
    c.model.encoder.downsample_mode = ParseDownsampleMode(mode);
    c.decode.history_mode = ParseHistoryMode(hist);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  std::set<std::string> known = {"model.kind", "model.vocab_mode", "model.context_source", "model.downsample_mode", "decode.history_mode"};
  detail::VisitKeys(c, [&](const std::string& key, auto& value) {
    known.insert(key);
    detail::Read(tree, key, value);
  });
  for (const auto& [section, body] : tree) {
    for (const auto& [key, value] : body) {
      if (!known.count(section + "." + key)) throw ConfigError("config: unknown key " + section + "." + key);
    }
    if (body.empty() && !body.data().empty()) throw ConfigError("config: key outside a section: " + section);
  }
  c.corpus.seed = c.seed;
  c.model.predictor.vocab = c.corpus.vocab;
  c.model.encoder.d_feat = c.corpus.d_feat;
  c.Validate();
  return c;
}

inline std::string WriteConfig(const ExperimentConfig& cfg) {
  namespace pt = boost::property_tree;
  ExperimentConfig c = cfg;
  pt::ptree tree;
  for (const char* section : {"run", "data", "model", "loss", "train", "decode", "latency"}) tree.add_child(section, {});
  tree.put("model.kind", c.model.kind);
  tree.put("model.vocab_mode", ToString(c.model.predictor.mode));
  tree.put("model.context_source", ToString(c.model.predictor.context_source));
  tree.put("model.downsample_mode", ToString(c.model.encoder.downsample_mode));
  tree.put("decode.history_mode", ToString(c.decode.history_mode));
  detail::VisitKeys(c, [&](const std::string& key, auto& value) { detail::Write(tree, key, value); });
  if (c.model.encoder.left_chunks == kUnboundedLeftChunks) tree.put("model.left_chunks", "unbounded");
  std::ostringstream out;
  pt::write_ini(out, tree);
  return out.str();
}

inline ExperimentConfig DefaultConfig() { return ParseConfig(""); }

inline bool SameConfig(const ExperimentConfig& a, const ExperimentConfig& b) { return WriteConfig(a) == WriteConfig(b); }

}  // namespace fnt
