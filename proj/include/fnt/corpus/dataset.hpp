#pragma once

#include <bit>
#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>
#include <boost/crc.hpp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fnt/corpus/session.hpp"
#include "json.hpp"

namespace fnt {

static_assert(std::endian::native == std::endian::little, "dataset encoding assumes a little-endian host");

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kDatasetVersion = 1;
inline constexpr const char* kDatasetFormat = "fnt-corpus";

inline nlohmann::json ToJson(const CorpusConfig& c) {
  return {{"vocab", c.vocab},
          {"d_feat", c.d_feat},
          {"n_pairs", c.n_pairs},
          {"epsilon", c.epsilon},
          {"delta_min", c.delta_min},
          {"n_utterances", c.n_utterances},
          {"min_tokens", c.min_tokens},
          {"max_tokens", c.max_tokens},
          {"frames_per_token", c.frames_per_token},
          {"silence_frames", c.silence_frames},
          {"sigma", c.sigma},
          {"confusable_rate", c.confusable_rate},
          {"gap_drop_prob", c.gap_drop_prob},
          {"keywords_per_session", c.keywords_per_session},
          {"nhis", c.nhis},
          {"train_sessions", c.train_sessions},
          {"dev_sessions", c.dev_sessions},
          {"test_sessions", c.test_sessions},
          {"text_sessions", c.text_sessions},
          {"seed", c.seed}};
}

inline CorpusConfig CorpusConfigFromJson(const nlohmann::json& j) {
  CorpusConfig c;
  try {
    c.vocab = j.at("vocab");
    c.d_feat = j.at("d_feat");
    c.n_pairs = j.at("n_pairs");
    c.epsilon = j.at("epsilon");
    c.delta_min = j.at("delta_min");
    c.n_utterances = j.at("n_utterances");
    c.min_tokens = j.at("min_tokens");
    c.max_tokens = j.at("max_tokens");
    c.frames_per_token = j.at("frames_per_token");
    c.silence_frames = j.at("silence_frames");
    c.sigma = j.at("sigma");
    c.confusable_rate = j.at("confusable_rate");
    c.gap_drop_prob = j.at("gap_drop_prob");
    c.keywords_per_session = j.at("keywords_per_session");
    c.nhis = j.at("nhis");
    c.train_sessions = j.at("train_sessions");
    c.dev_sessions = j.at("dev_sessions");
    c.test_sessions = j.at("test_sessions");
    c.text_sessions = j.at("text_sessions");
    c.seed = j.at("seed");
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("corpus config: ") + e.what());
  }
  return c;
}

struct Dataset {
  CorpusConfig config;
  bool text_only = false;
  std::vector<Session> sessions;

  std::vector<const Session*> Split(const std::string& name) const {
    std::vector<const Session*> out;
    for (const auto& s : sessions) {
      if (s.split == name) out.push_back(&s);
    }
    return out;
  }
  std::size_t utterance_count() const {
    std::size_t n = 0;
    for (const auto& s : sessions) n += s.utterances.size();
    return n;
  }
};

// Sessions are numbered across splits (train, dev, test) and each one draws
// from its own split of the corpus seed, so generation order is irrelevant.
inline Dataset BuildDataset(const CorpusConfig& cfg) {
  cfg.Validate();
  const Codebook cb = cfg.MakeCodebook();
  const Rng root = Rng(cfg.seed).Split(0x73657373);
  Dataset d;
  d.config = cfg;
  std::uint64_t number = 0;
  auto add = [&](std::size_t count, const char* split) {
    for (std::size_t i = 0; i < count; ++i, ++number) {
      Session s = GenerateSession(cfg, cb, root.Split(number).NextU64(), SessionId(number));
      s.split = split;
      d.sessions.push_back(std::move(s));
    }
  };
  add(cfg.train_sessions, "train");
  add(cfg.dev_sessions, "dev");
  add(cfg.test_sessions, "test");
  return d;
}

// Same token process, features omitted; the pool used to pre-train Pred^V.
inline Dataset BuildTextCorpus(const CorpusConfig& cfg) {
  cfg.Validate();
  const Codebook cb = cfg.MakeCodebook();
  const Rng root = Rng(cfg.seed).Split(0x74657874);
  Dataset d;
  d.config = cfg;
  d.text_only = true;
  for (std::uint64_t i = 0; i < cfg.text_sessions; ++i) {
    Session s = GenerateSession(cfg, cb, root.Split(i).NextU64(), "t" + SessionId(i).substr(1), false);
    s.split = "text";
    d.sessions.push_back(std::move(s));
  }
  return d;
}

namespace detail {

inline std::string Base64Encode(const std::vector<double>& values) {
  using namespace boost::archive::iterators;
  using It = base64_from_binary<transform_width<const char*, 6, 8>>;
  const char* begin = reinterpret_cast<const char*>(values.data());
  const char* end = begin + values.size() * sizeof(double);
  std::string out{It(begin), It(end)};
  out.append((3 - values.size() * sizeof(double) % 3) % 3, '=');
  return out;
}

inline std::vector<double> Base64Decode(std::string text, std::size_t count) {
  using namespace boost::archive::iterators;
  using It = transform_width<binary_from_base64<const char*>, 8, 6>;
  const std::size_t bytes = count * sizeof(double);
  if (text.size() != (bytes + 2) / 3 * 4) throw DatasetError("features: base64 length does not match frame count");
  std::size_t pad = 0;
  while (!text.empty() && text.back() == '=') {
    text.pop_back();
    pad += 1;
  }
  if (pad != (3 - bytes % 3) % 3) throw DatasetError("features: bad base64 padding");
  std::string raw;
  try {
    raw.assign(It(text.data()), It(text.data() + text.size()));
  } catch (const std::exception& e) {
    throw DatasetError(std::string("features: invalid base64: ") + e.what());
  }
  if (raw.size() < bytes) throw DatasetError("features: base64 payload too short");
  std::vector<double> out(count);
  std::memcpy(out.data(), raw.data(), bytes);
  return out;
}

inline std::string Crc32Hex(const std::string& bytes) {
  boost::crc_32_type crc;
  crc.process_bytes(bytes.data(), bytes.size());
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(crc.checksum()));
  return buf;
}

}  // namespace detail

inline std::string SerializeDataset(const Dataset& d) {
  std::string body;
  nlohmann::json header = {{"format", kDatasetFormat},
                           {"version", kDatasetVersion},
                           {"kind", d.text_only ? "text" : "speech"},
                           {"config", ToJson(d.config)}};
  body += header.dump() + "\n";
  std::size_t records = 0;
  for (const auto& s : d.sessions) {
    for (const auto& u : s.utterances) {
      nlohmann::json line = {{"session_id", u.session_id}, {"split", s.split},     {"utterance_index", u.index},
                             {"tokens", u.tokens},         {"seed", u.seed}};
      if (!d.text_only) {
        line["n_frames"] = u.n_frames;
        line["d_feat"] = u.d_feat;
        line["features"] = detail::Base64Encode(u.features);
      }
      body += line.dump() + "\n";
      records += 1;
    }
  }
  nlohmann::json trailer = {{"checksum", "crc32:" + detail::Crc32Hex(body)}, {"records", records}};
  return body + trailer.dump() + "\n";
}

inline Dataset ParseDataset(const std::string& text) {
  if (text.empty() || text.back() != '\n') throw DatasetError("dataset: truncated (missing final newline)");
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t nl = text.find('\n', start);
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  if (lines.size() < 2) throw DatasetError("dataset: truncated (no trailer)");
  auto parse = [](const std::string& line, std::size_t no) {
    try {
      return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError("dataset: line " + std::to_string(no + 1) + ": " + e.what());
    }
  };
  const auto header = parse(lines.front(), 0);
  if (!header.is_object() || header.value("format", "") != kDatasetFormat) throw DatasetError("dataset: not a corpus file");
  if (header.value("version", -1) != kDatasetVersion) {
    throw DatasetError("dataset: version " + header.value("version", nlohmann::json()).dump() + " unsupported (expected " +
                       std::to_string(kDatasetVersion) + ")");
  }
  const auto trailer = parse(lines.back(), lines.size() - 1);
  if (!trailer.is_object() || !trailer.contains("checksum")) throw DatasetError("dataset: truncated (no trailer)");
  const std::string body = text.substr(0, text.size() - lines.back().size() - 1);
  if (trailer["checksum"] != "crc32:" + detail::Crc32Hex(body)) throw DatasetError("dataset: checksum mismatch");
  if (trailer.value("records", std::size_t{0}) != lines.size() - 2) throw DatasetError("dataset: record count mismatch");

  Dataset d;
  d.config = CorpusConfigFromJson(header.at("config"));
  d.text_only = header.value("kind", "") == "text";
  for (std::size_t i = 1; i + 1 < lines.size(); ++i) {
    const auto j = parse(lines[i], i);
    try {
      Utterance u;
      u.session_id = j.at("session_id");
      u.index = j.at("utterance_index");
      u.tokens = j.at("tokens").get<std::vector<std::size_t>>();
      u.seed = j.at("seed");
      if (!d.text_only) {
        u.n_frames = j.at("n_frames");
        u.d_feat = j.at("d_feat");
        u.features = detail::Base64Decode(j.at("features"), u.n_frames * u.d_feat);
      }
      const std::string split = j.at("split");
      if (d.sessions.empty() || d.sessions.back().id != u.session_id) {
        d.sessions.push_back(Session{u.session_id, split, {}});
      }
      d.sessions.back().utterances.push_back(std::move(u));
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError("dataset: line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return d;
}

inline void SaveDataset(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("dataset: cannot write " + path.string());
  out << SerializeDataset(d);
  if (!out) throw DatasetError("dataset: write failed for " + path.string());
}

inline Dataset LoadDataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("dataset: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ParseDataset(ss.str());
}

inline nlohmann::json Manifest(const Dataset& d, const std::string& data_file) {
  nlohmann::json sessions = nlohmann::json::array();
  for (const auto& s : d.sessions) {
    std::vector<std::size_t> idx;
    for (const auto& u : s.utterances) idx.push_back(u.index);
    sessions.push_back({{"id", s.id}, {"split", s.split}, {"utterances", idx}});
  }
  return {{"format", "fnt-manifest"},   {"version", kDatasetVersion}, {"data_file", data_file},
          {"generator", ToJson(d.config)}, {"sessions", sessions}};
}

}  // namespace fnt
