#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fnt/corpus/dataset.hpp"
#include "fnt/harness/config.hpp"
#include "fnt/harness/evaluate.hpp"
#include "fnt/harness/train.hpp"
#include "json.hpp"

namespace fnt {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace cli {

namespace fs = std::filesystem;
using Model = FntModel<float>;

inline constexpr const char* kDataFile = "corpus.jsonl";
inline constexpr const char* kTextFile = "text.jsonl";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::vector<std::string> sets;
  std::string data_dir;
  std::string checkpoint;
  std::string resume;
  std::string mode;
  std::optional<std::size_t> nhis;
  std::optional<std::size_t> beam;
  std::optional<std::size_t> downsample;
  std::string split;
  std::string session;
  std::optional<std::size_t> utterance;
};

inline std::string ReadFile(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void WriteFile(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + p.string());
}

// Applies "section.key=value" overrides on top of the config text.
inline std::string ApplySets(const std::string& text, const std::vector<std::string>& sets) {
  if (sets.empty()) return text;
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    const auto dot = s.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw UsageError("--set expects section.key=value, got '" + s + "'");
    }
    tree.put(pt::ptree::path_type(s.substr(0, eq), '.'), s.substr(eq + 1));
  }
  std::ostringstream out;
  pt::write_ini(out, tree);
  return out.str();
}

// Resolution order: defaults, --config file (or the checkpoint's embedded
// config when no file is given), --set overrides, then dedicated flags. The
// model section always comes from the checkpoint when one is loaded.
inline ExperimentConfig ResolveUnchecked(const Options& o, const std::optional<CheckpointInfo>& ckpt) {
  std::string text;
  if (!o.config_path.empty()) {
    text = ReadFile(o.config_path);
  } else if (ckpt) {
    text = WriteConfig(ckpt->config);
  }
  ExperimentConfig c = ParseConfig(ApplySets(text, o.sets));
  if (ckpt) {
    c.model = ckpt->config.model;
    c.corpus.vocab = c.model.predictor.vocab;
    c.corpus.d_feat = c.model.encoder.d_feat;
  }
  if (o.seed) {
    c.seed = *o.seed;
    c.corpus.seed = *o.seed;
  }
  if (!o.data_dir.empty()) c.data_dir = o.data_dir;
  if (!o.mode.empty()) c.decode.history_mode = ParseHistoryMode(o.mode);
  if (o.nhis) c.decode.nhis = *o.nhis;
  if (o.beam) c.decode.beam_width = *o.beam;
  if (o.downsample) c.decode.downsample_rate = *o.downsample;
  if (!o.split.empty()) c.eval_split = o.split;
  c.Validate();
  return c;
}

inline ExperimentConfig Resolve(const Options& o, const std::optional<CheckpointInfo>& ckpt) {
  try {
    return ResolveUnchecked(o, ckpt);
  } catch (const UsageError&) {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

inline fs::path Prepare(const Options& o, const ExperimentConfig& c) {
  fs::path dir(o.out_dir);
  fs::create_directories(dir);
  WriteFile(dir / "config.ini", WriteConfig(c));
  return dir;
}

inline Dataset LoadData(const ExperimentConfig& c, const char* file) {
  const fs::path p = fs::path(c.data_dir) / file;
  if (!fs::exists(p)) throw std::runtime_error("no dataset at " + p.string() + " (run gen-data first)");
  Dataset d = LoadDataset(p.string());
  if (d.config.vocab != c.model.predictor.vocab || d.config.d_feat != c.model.encoder.d_feat) {
    throw std::runtime_error("dataset " + p.string() + " does not match the model's vocab/d_feat");
  }
  return d;
}

inline std::unique_ptr<Model> LoadModel(const std::string& path, const CheckpointInfo& info) {
  if (info.precision != PrecisionName<float>()) throw std::runtime_error("checkpoint precision " + info.precision + " is not supported by the CLI");
  auto m = std::make_unique<Model>(info.config.model, ModelSeed(info.config));
  LoadCheckpoint(path, m->params());
  return m;
}

inline std::optional<CheckpointInfo> ReadInfo(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return ParseCheckpointMetadata(ReadCheckpointMetadata(path));
}

inline const Session& FindSession(const Dataset& d, const std::string& id) {
  for (const auto& s : d.sessions) {
    if (s.id == id) return s;
  }
  throw std::runtime_error("no session " + id + " in the dataset");
}

inline std::vector<const Session*> SplitOrThrow(const Dataset& d, const std::string& split) {
  auto s = d.Split(split);
  if (s.empty()) throw std::runtime_error("split '" + split + "' has no sessions");
  return s;
}

inline int GenData(const Options& o, std::ostream& out) {
  const auto c = Resolve(o, std::nullopt);
  const auto dir = Prepare(o, c);
  const Dataset d = BuildDataset(c.corpus);
  SaveDataset(d, (dir / kDataFile).string());
  SaveDataset(BuildTextCorpus(c.corpus), (dir / kTextFile).string());
  WriteFile(dir / kManifestFile, Manifest(d, kDataFile).dump(2) + "\n");
  out << "wrote " << d.sessions.size() << " sessions (" << d.utterance_count() << " utterances) to " << dir.string()
      << "\n";
  return 0;
}

inline int Train(const Options& o, std::ostream& out) {
  auto info = ReadInfo(o.resume);
  auto c = Resolve(o, info);
  const auto dir = Prepare(o, c);
  const Dataset data = LoadData(c, kDataFile);
  std::optional<Dataset> text;
  if (c.train.pretrain_steps > 0) text = LoadData(c, kTextFile);

  Model model(c.model, ModelSeed(c));
  Trainer<float> trainer(c, model, data, text ? &*text : nullptr);
  if (info) {
    LoadCheckpoint(o.resume, model.params());
    trainer.set_step(info->step);
  }
  std::ofstream curve(dir / "loss.jsonl", std::ios::binary);
  if (!curve) throw std::runtime_error("cannot write " + (dir / "loss.jsonl").string());
  trainer.Run([&](const LossRecord& r) { curve << ToJson(r).dump() << "\n"; },
              [&](std::size_t step) {
                const std::string meta = CheckpointMetadata(c, step, PrecisionName<float>());
                if (step < trainer.total_steps()) {
                  SaveCheckpoint((dir / ("checkpoint-" + std::to_string(step) + ".bin")).string(), meta, model.params());
                } else {
                  SaveCheckpoint((dir / kCheckpointFile).string(), meta, model.params());
                }
              });
  curve.close();
  out << "trained " << c.model.kind << " for " << trainer.total_steps() << " steps; checkpoint "
      << (dir / kCheckpointFile).string() << "\n";
  return 0;
}

inline void WriteRecords(const fs::path& p, const Evaluation& e, bool timing) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  for (const auto& s : e.sessions) {
    for (const auto& r : s.utterances) {
      auto j = ToJson(r);
      if (!timing) {
        j.erase("chunk_times");
        j.erase("duration");
        j.erase("end_latency");
      }
      f << j.dump() << "\n";
    }
  }
}

inline int Eval(const Options& o, std::ostream& out, bool streaming) {
  if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
  const auto info = ReadInfo(o.checkpoint);
  auto c = Resolve(o, info);
  if (streaming && !c.model.streaming) throw LatencyError("stream-eval: the checkpoint is not a streaming model");
  c.decode.streaming = streaming;
  const auto dir = Prepare(o, c);
  const auto model = LoadModel(o.checkpoint, *info);
  const Dataset data = LoadData(c, kDataFile);
  const auto e = Evaluate(*model, SplitOrThrow(data, c.eval_split), c.decode, c.corpus.MakeCodebook(), ResolveThreads(c.threads));
  nlohmann::json j = ToJson(e.metrics);
  j["model"] = c.model.kind;
  j["split"] = c.eval_split;
  j["history_mode"] = ToString(c.decode.history_mode);
  j["nhis"] = c.decode.nhis;
  WriteFile(dir / "metrics.json", j.dump(2) + "\n");
  WriteRecords(dir / "hypotheses.jsonl", e, streaming);
  out << "wer " << e.metrics.wer() << " keyword_error_rate " << e.metrics.keyword_error_rate()
      << " bare_keyword_error_rate " << e.metrics.bare_keyword_error_rate() << " perplexity "
      << e.metrics.perplexity();
  if (streaming) out << " mean_end_latency " << e.metrics.mean_latency();
  out << "\n";
  return 0;
}

inline int Latency(const Options& o, std::ostream& out) {
  if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
  const auto info = ReadInfo(o.checkpoint);
  const auto c = Resolve(o, info);
  if (!c.model.streaming) throw LatencyError("latency: the checkpoint is not a streaming model");
  const auto dir = Prepare(o, c);
  const auto model = LoadModel(o.checkpoint, *info);
  const Dataset data = LoadData(c, kDataFile);
  auto sessions = SplitOrThrow(data, c.eval_split);
  if (c.latency.sessions < sessions.size()) sessions.resize(c.latency.sessions);
  nlohmann::json runs = nlohmann::json::array();
  std::vector<double> means;
  for (std::size_t r = 0; r < c.latency.runs; ++r) {
    Metrics m;
    m.end_latency = MeasureLatency(*model, sessions, c.decode);
    means.push_back(m.mean_latency());
    runs.push_back({{"mean", m.mean_latency()}, {"values", m.end_latency}});
  }
  nlohmann::json j = {{"model", c.model.kind},
                      {"downsample_rate", c.decode.downsample_rate ? c.decode.downsample_rate : c.model.encoder.downsample_rate},
                      {"nhis", c.decode.nhis},
                      {"median_of_means", Median(means)},
                      {"runs", runs}};
  WriteFile(dir / "latency.json", j.dump(2) + "\n");
  out << "median end-latency " << Median(means) << " s over " << c.latency.runs << " runs\n";
  return 0;
}

inline int DumpAttn(const Options& o, std::ostream& out) {
  if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
  if (o.session.empty() || !o.utterance) throw UsageError("--session and --utterance are required");
  const auto info = ReadInfo(o.checkpoint);
  const auto c = Resolve(o, info);
  const auto dir = Prepare(o, c);
  const auto model = LoadModel(o.checkpoint, *info);
  const Dataset data = LoadData(c, kDataFile);
  const auto d = DumpAttention(*model, FindSession(data, o.session), *o.utterance, c.decode.nhis);
  for (const auto& layer : d.layers) {
    const auto p = dir / ("attention_" + layer.name + ".csv");
    WriteFile(p, AttentionCsv(d, layer));
    out << "wrote " << p.string() << "\n";
  }
  return 0;
}

}  // namespace cli

// Exit codes: 0 success, 1 usage error, 2 runtime failure.
inline int RunCli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using cli::Options;
  Options o;
  CLI::App app("Factorized neural transducer experiments on a synthetic long-content corpus", "fnt_cli");
  app.require_subcommand(1);
  auto global = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "INI config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "run seed (overrides run.seed)");
    sub->add_option("--out-dir", o.out_dir, "output directory")->capture_default_str();
    sub->add_option("--set", o.sets, "override a config key: section.key=value");
  };
  auto data_flag = [&](CLI::App* sub) { sub->add_option("--data", o.data_dir, "dataset directory (data.dir)"); };
  auto decode_flags = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", o.checkpoint, "trained checkpoint");
    sub->add_option("--mode", o.mode, "history mode: oracle, hypothesis or none");
    sub->add_option("--nhis", o.nhis, "history utterances (decode.nhis)");
    sub->add_option("--beam", o.beam, "beam width (decode.beam_width)");
    sub->add_option("--downsample", o.downsample, "history bank downsampling rate K");
    sub->add_option("--split", o.split, "dataset split to decode");
  };
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus into --out-dir");
  global(gen);
  auto* train = app.add_subcommand("train", "train a model");
  global(train);
  data_flag(train);
  train->add_option("--resume", o.resume, "continue from a checkpoint");
  auto* eval = app.add_subcommand("eval", "decode a split and report WER, keyword error rate and perplexity");
  auto* stream = app.add_subcommand("stream-eval", "chunk-synchronous decode with end-latency");
  auto* latency = app.add_subcommand("latency", "repeated end-latency measurement");
  auto* attn = app.add_subcommand("dump-attn", "write Pred^V context attention matrices as CSV");
  for (auto* sub : {eval, stream, latency, attn}) {
    global(sub);
    data_flag(sub);
    decode_flags(sub);
  }
  attn->add_option("--session", o.session, "session id");
  attn->add_option("--utterance", o.utterance, "utterance index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  try {
    if (gen->parsed()) return cli::GenData(o, out);
    if (train->parsed()) return cli::Train(o, out);
    if (eval->parsed()) return cli::Eval(o, out, false);
    if (stream->parsed()) return cli::Eval(o, out, true);
    if (latency->parsed()) return cli::Latency(o, out);
    if (attn->parsed()) return cli::DumpAttn(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace fnt
