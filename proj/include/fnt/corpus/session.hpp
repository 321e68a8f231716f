#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "fnt/corpus/codebook.hpp"
#include "fnt/numerics/rng.hpp"
#include "fnt/numerics/tensor.hpp"

namespace fnt {

class CorpusConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kFrameShiftSeconds = 0.01;

struct CorpusConfig {
  // Codebook.
  std::size_t vocab = 50;
  std::size_t d_feat = 16;
  std::size_t n_pairs = 6;
  double epsilon = 0.05;
  double delta_min = 1.2;
  // Sessions.
  std::size_t n_utterances = 8;
  std::size_t min_tokens = 3;
  std::size_t max_tokens = 6;
  std::size_t frames_per_token = 4;
  std::size_t silence_frames = 4;
  double sigma = 0.4;
  double confusable_rate = 0.9;
  double gap_drop_prob = 0.1;
  std::size_t keywords_per_session = 2;
  std::size_t nhis = 2;
  // Splits.
  std::size_t train_sessions = 3000;
  std::size_t dev_sessions = 30;
  std::size_t test_sessions = 300;
  std::size_t text_sessions = 600;
  std::uint64_t seed = 7;

  void Validate() const {
    auto fail = [](const std::string& m) { throw CorpusConfigError("corpus config: " + m); };
    if (n_pairs == 0) fail("n_pairs must be positive");
    if (vocab < 4 * n_pairs + 2) {
      fail("vocab " + std::to_string(vocab) + " leaves fewer than 2 fillers after " + std::to_string(n_pairs) +
           " pairs and their anchors");
    }
    if (!(epsilon > 0 && epsilon < sigma && sigma < delta_min)) fail("need 0 < epsilon < sigma < delta_min");
    if (frames_per_token < 4) fail("frames_per_token must be >= the subsampling rate 4");
    if (silence_frames % 4 != 0) fail("silence_frames must be a multiple of 4");
    if (min_tokens < 1 || min_tokens > max_tokens) fail("need 1 <= min_tokens <= max_tokens");
    if (n_utterances == 0) fail("n_utterances must be positive");
    if (keywords_per_session == 0 || keywords_per_session > n_pairs) fail("keywords_per_session must be in [1, n_pairs]");
    if (confusable_rate < 0 || confusable_rate > 1) fail("confusable_rate must be in [0, 1]");
    if (gap_drop_prob < 0 || gap_drop_prob >= 1) fail("gap_drop_prob must be in [0, 1)");
    if (d_feat == 0) fail("d_feat must be positive");
  }

  Codebook MakeCodebook() const { return BuildCodebook(vocab, d_feat, n_pairs, epsilon, delta_min, Rng(seed).Split(0xC0DE).NextU64()); }
};

struct Utterance {
  std::string session_id;
  std::size_t index = 0;
  std::vector<std::size_t> tokens;
  std::size_t n_frames = 0, d_feat = 0;
  std::vector<double> features;  // row-major n_frames x d_feat, empty in text-only mode
  std::uint64_t seed = 0;

  bool has_features() const { return n_frames > 0; }
  double duration_seconds() const { return static_cast<double>(n_frames) * kFrameShiftSeconds; }

  template <typename T>
  Tensor<T> Features() const {
    return Tensor<T>({n_frames, d_feat}, std::vector<T>(features.begin(), features.end()));
  }
};

struct Session {
  std::string id;
  std::string split;
  std::vector<Utterance> utterances;
};

// Each token emits frames_per_token rows of prototype + N(0, sigma^2).
inline std::vector<double> RenderFeatures(const std::vector<std::size_t>& tokens, const Codebook& cb,
                                          std::size_t frames_per_token, double sigma, Rng& rng) {
  std::vector<double> out;
  out.reserve(tokens.size() * frames_per_token * cb.d_feat);
  for (std::size_t tok : tokens) {
    if (tok >= cb.vocab) throw std::out_of_range("RenderFeatures: token " + std::to_string(tok) + " outside codebook");
    const auto& proto = cb.prototypes[tok];
    for (std::size_t f = 0; f < frames_per_token; ++f) {
      for (double p : proto) out.push_back(sigma == 0 ? p : p + rng.Normal(0.0, sigma));
    }
  }
  return out;
}

inline std::size_t SampleNhisTrain(std::size_t nhis, Rng& rng) { return static_cast<std::size_t>(rng.Below(nhis + 1)); }

inline std::string SessionId(std::uint64_t number) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%05llu", static_cast<unsigned long long>(number));
  return buf;
}

// A keyword occurrence is an introduction when its own anchor directly
// precedes it. Any other occurrence is generated only while an introduction
// of the same token lies within the previous nhis generated utterances.
inline Session GenerateSession(const CorpusConfig& cfg, const Codebook& cb, std::uint64_t seed, std::string id,
                               bool with_features = true) {
  Rng rng(seed);
  Rng noise = rng.Split(0x6e6f697365);
  Session s;
  s.id = std::move(id);

  std::vector<std::size_t> pair_ids(cb.n_pairs());
  for (std::size_t i = 0; i < pair_ids.size(); ++i) pair_ids[i] = i;
  for (std::size_t i = 0; i + 1 < pair_ids.size(); ++i) {
    std::swap(pair_ids[i], pair_ids[i + rng.Below(pair_ids.size() - i)]);
  }
  std::vector<std::size_t> keywords;
  for (std::size_t i = 0; i < cfg.keywords_per_session; ++i) {
    const auto& pr = cb.pairs[pair_ids[i]];
    keywords.push_back(rng.Bernoulli(0.5) ? pr.second : pr.first);
  }
  std::vector<long long> last_intro(keywords.size(), -1);

  std::size_t index = 0;
  for (std::size_t j = 0; j < cfg.n_utterances; ++j) {
    index += 1;
    while (rng.Bernoulli(cfg.gap_drop_prob)) index += 1;

    const std::size_t n = cfg.min_tokens + rng.Below(cfg.max_tokens - cfg.min_tokens + 1);
    std::vector<std::size_t> tokens;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t tok;
      do {
        tok = cb.first_filler() + rng.Below(cb.n_fillers());
      } while (!tokens.empty() && tokens.back() == tok);
      tokens.push_back(tok);
    }
    if (rng.Bernoulli(cfg.confusable_rate)) {
      const std::size_t k = rng.Below(keywords.size());
      const std::size_t kw = keywords[k];
      const auto pos = static_cast<std::ptrdiff_t>(rng.Below(n + 1));
      const bool fresh = last_intro[k] >= 0 && static_cast<long long>(j) - last_intro[k] <= static_cast<long long>(cfg.nhis);
      if (fresh) {
        tokens.insert(tokens.begin() + pos, kw);
      } else {
        tokens.insert(tokens.begin() + pos, {cb.anchor_of(kw), kw});
        last_intro[k] = static_cast<long long>(j);
      }
    }

    Utterance u;
    u.session_id = s.id;
    u.index = index;
    u.tokens = std::move(tokens);
    u.seed = noise.Split(j).NextU64();
    if (with_features) {
      Rng r(u.seed);
      std::vector<double> silence_lead(cfg.silence_frames * cfg.d_feat), silence_trail(silence_lead.size());
      for (auto& x : silence_lead) x = r.Normal(0.0, cfg.sigma);
      auto body = RenderFeatures(u.tokens, cb, cfg.frames_per_token, cfg.sigma, r);
      for (auto& x : silence_trail) x = r.Normal(0.0, cfg.sigma);
      u.features = std::move(silence_lead);
      u.features.insert(u.features.end(), body.begin(), body.end());
      u.features.insert(u.features.end(), silence_trail.begin(), silence_trail.end());
      u.d_feat = cfg.d_feat;
      u.n_frames = u.features.size() / cfg.d_feat;
    }
    s.utterances.push_back(std::move(u));
  }
  return s;
}

struct AuditResult {
  std::size_t occurrences = 0, introductions = 0, violations = 0;
  bool pair_exclusive = true;
  bool ok() const { return violations == 0 && pair_exclusive; }
};

// Structural check of the introduction rule and of one pair member per session.
inline AuditResult AuditSession(const Session& s, const Codebook& cb, std::size_t nhis) {
  AuditResult r;
  std::vector<int> member(cb.n_pairs(), -1);
  auto introduced = [&](const Utterance& u, std::size_t tok) {
    for (std::size_t i = 1; i < u.tokens.size(); ++i) {
      if (u.tokens[i] == tok && u.tokens[i - 1] == cb.anchor_of(tok)) return true;
    }
    return false;
  };
  for (std::size_t j = 0; j < s.utterances.size(); ++j) {
    const auto& toks = s.utterances[j].tokens;
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (!cb.confusable(toks[i])) continue;
      const std::size_t p = toks[i] / 2;
      const int m = static_cast<int>(toks[i] % 2);
      if (member[p] >= 0 && member[p] != m) r.pair_exclusive = false;
      member[p] = m;
      r.occurrences += 1;
      if (i > 0 && toks[i - 1] == cb.anchor_of(toks[i])) {
        r.introductions += 1;
        continue;
      }
      bool found = false;
      for (std::size_t b = 1; b <= nhis && b <= j && !found; ++b) found = introduced(s.utterances[j - b], toks[i]);
      if (!found) r.violations += 1;
    }
  }
  return r;
}

}  // namespace fnt
