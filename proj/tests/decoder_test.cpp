#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <map>

#include "fnt/decoder/history.hpp"
#include "fnt/decoder/search.hpp"
#include "fnt/decoder/session_decoder.hpp"
#include "test_util.hpp"

namespace fnt {
namespace {

using testing::MaxAbsDiff;
using testing::RandomTensor;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Log-probabilities drawn from a hash of (seed, t, prefix): an arbitrary
// prefix-dependent transducer with no learned structure.
struct ToyScorer {
  using State = std::vector<std::size_t>;
  std::size_t T = 3, U = 3;
  std::uint64_t seed = 0;
  double sharpness = 2.0;

  std::size_t frames() const { return T; }
  State Start() const { return {}; }
  State Advance(const State& s, std::size_t tok) const {
    auto n = s;
    n.push_back(tok);
    return n;
  }
  std::vector<double> LogProbs(std::size_t t, const State& s) const {
    Rng rng = Rng(seed).Split(t);
    for (auto tok : s) rng = rng.Split(tok + 1);
    std::vector<double> z(U + 1);
    double m = kNegInf;
    for (auto& v : z) {
      v = sharpness * rng.Normal();
      m = std::max(m, v);
    }
    double sum = 0;
    for (double v : z) sum += std::exp(v - m);
    for (auto& v : z) v -= m + std::log(sum);
    return z;
  }
};

// Fixed table scorer: row t gives log-probs regardless of prefix length
// unless overridden per emitted count.
struct TableScorer {
  using State = std::size_t;  // tokens emitted so far
  std::vector<std::vector<std::vector<double>>> table;  // [t][emitted] -> log-probs
  std::size_t frames() const { return table.size(); }
  State Start() const { return 0; }
  State Advance(const State& s, std::size_t) const { return s + 1; }
  std::vector<double> LogProbs(std::size_t t, const State& s) const {
    const auto& row = table[t];
    return row[std::min(s, row.size() - 1)];
  }
};

// Sum over all alignments of prefix y with the per-frame emission cap.
double BruteForceLogProb(const ToyScorer& sc, const std::vector<std::size_t>& y, std::size_t cap) {
  std::function<double(std::size_t, std::size_t, std::size_t)> go = [&](std::size_t t, std::size_t i,
                                                                         std::size_t emitted) -> double {
    if (t == sc.T) return i == y.size() ? 0.0 : kNegInf;
    std::vector<std::size_t> prefix(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(i));
    const auto lp = sc.LogProbs(t, prefix);
    double total = lp[0] + go(t + 1, i, 0);
    if (i < y.size() && emitted < cap) total = LogAddExp(total, lp[y[i] + 1] + go(t, i + 1, emitted + 1));
    return total;
  };
  return go(0, 0, 0);
}

TEST(AssembleHistory, FirstUtteranceHasNoHistory) {
  EXPECT_TRUE(AssembleHistory(1, 2, {}).empty());
}

TEST(AssembleHistory, SecondUtteranceUsesOnlyFirst) {
  EXPECT_EQ(AssembleHistory(2, 2, {1}), (std::vector<std::size_t>{1}));
}

TEST(AssembleHistory, GapCaseSkipsMissingIndex) {
  EXPECT_EQ(AssembleHistory(6, 2, {3, 5}), (std::vector<std::size_t>{3, 5}));
}

TEST(AssembleHistory, WindowAndFutureExcluded) {
  EXPECT_EQ(AssembleHistory(9, 2, {1, 2, 4, 7, 9, 12}), (std::vector<std::size_t>{4, 7}));
  EXPECT_EQ(AssembleHistory(9, 0, {1, 2}), (std::vector<std::size_t>{}));
  EXPECT_EQ(AssembleHistory(3, 5, {1, 2}), (std::vector<std::size_t>{1, 2}));
}

TEST(HistoryBufferTest, ModesAndDuplicates) {
  HistoryBuffer<double> oracle(HistoryMode::kOracle), hyp(HistoryMode::kHypothesis), none(HistoryMode::kNone);
  oracle.Record(1, {1, 2}, {1, 3});
  hyp.Record(1, {1, 2}, {1, 3});
  none.Record(1, {1, 2}, {1, 3});
  EXPECT_EQ(oracle.at(1).transcript, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(hyp.at(1).transcript, (std::vector<std::size_t>{1, 3}));
  EXPECT_THROW(oracle.Record(1, {}, {}), HistoryError);
  EXPECT_THROW(oracle.Update(0, {}), HistoryError);
  oracle.Record(3, {4}, {4});
  EXPECT_EQ(oracle.size(), 2u);
  EXPECT_EQ(oracle.Window(5, 2), (std::vector<std::size_t>{1, 3}));
  EXPECT_TRUE(none.Window(5, 2).empty());
}

TEST(Greedy, AlwaysBlankGivesEmpty) {
  TableScorer sc;
  sc.table.assign(4, {{std::log(0.7), std::log(0.2), std::log(0.1)}});
  EXPECT_TRUE(GreedyDecode(sc).tokens.empty());
  EXPECT_TRUE(BeamDecode(sc, {1, 5}).tokens.empty());
}

TEST(Greedy, ForcedSingleEmission) {
  TableScorer sc;
  sc.table = {{{std::log(0.3), std::log(0.6), std::log(0.1)}, {std::log(0.8), std::log(0.1), std::log(0.1)}}};
  const auto h = GreedyDecode(sc);
  EXPECT_EQ(h.tokens, (std::vector<std::size_t>{0}));
  EXPECT_NEAR(h.score, std::log(0.6) + std::log(0.8), 1e-15);
}

TEST(Greedy, EmissionCapPerFrame) {
  TableScorer sc;
  sc.table.assign(2, {{std::log(0.1), std::log(0.9)}});
  for (std::size_t cap : {1u, 3u, 5u}) {
    EXPECT_EQ(GreedyDecode(sc, {1, cap}).tokens.size(), 2 * cap);
    EXPECT_LE(BeamDecode(sc, {4, cap}).tokens.size(), 2 * cap);
  }
}

TEST(Greedy, TiesGoToLowestIndexBlankFirst) {
  TableScorer sc;
  const double h = std::log(0.5);
  sc.table = {{{h, h}}};
  EXPECT_TRUE(GreedyDecode(sc).tokens.empty());
  EXPECT_TRUE(BeamDecode(sc, {1, 5}).tokens.empty());
  const double q = std::log(0.4);
  sc.table = {{{std::log(0.2), q, q}, {0.0, kNegInf, kNegInf}}};
  EXPECT_EQ(GreedyDecode(sc).tokens, (std::vector<std::size_t>{0}));
  EXPECT_EQ(BeamDecode(sc, {1, 5}).tokens, (std::vector<std::size_t>{0}));
}

TEST(Beam, WidthOneEqualsGreedyOnFiftyToyModels) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ToyScorer sc{4 + seed % 3, 3 + seed % 4, seed, 1.0 + 0.1 * static_cast<double>(seed % 10)};
    const auto g = GreedyDecode(sc);
    const auto b = BeamDecode(sc, {1, 5});
    EXPECT_EQ(g.tokens, b.tokens) << seed;
    EXPECT_EQ(g.score, b.score) << seed;
  }
}

TEST(Beam, BestScoreAtLeastGreedyOnHundredInstances) {
  for (std::uint64_t seed = 100; seed < 200; ++seed) {
    ToyScorer sc{5, 4, seed, 1.5};
    const double g = GreedyDecode(sc).score;
    EXPECT_GE(BeamDecode(sc, {8, 5}).score, g) << seed;
  }
}

TEST(Beam, BestScoreNonDecreasingInWidth) {
  for (std::uint64_t seed = 300; seed < 350; ++seed) {
    ToyScorer sc{5, 4, seed, 1.5};
    double prev = kNegInf;
    for (std::size_t w : {1u, 2u, 4u, 8u}) {
      const double s = BeamDecode(sc, {w, 5}).score;
      EXPECT_GE(s, prev) << "seed " << seed << " width " << w;
      prev = s;
    }
  }
}

TEST(Beam, MergedScoresEqualSumOverAlignments) {
  ToyScorer sc{3, 2, 17, 1.0};
  const std::size_t cap = 2;
  BeamSearch<ToyScorer> b(sc, {100000, cap});
  b.Run(sc, sc.frames());
  EXPECT_GT(b.beam().size(), 10u);
  for (const auto& h : b.beam()) EXPECT_NEAR(h.score, BruteForceLogProb(sc, h.tokens, cap), 1e-12);
}

TEST(Beam, DeterministicAndSorted) {
  ToyScorer sc{6, 5, 9, 1.2};
  BeamSearch<ToyScorer> a(sc, {8, 5}), b(sc, {8, 5});
  a.Run(sc, sc.frames());
  b.Run(sc, sc.frames());
  ASSERT_EQ(a.beam().size(), b.beam().size());
  for (std::size_t i = 0; i < a.beam().size(); ++i) {
    EXPECT_EQ(a.beam()[i].tokens, b.beam()[i].tokens);
    EXPECT_EQ(a.beam()[i].score, b.beam()[i].score);
    EXPECT_LE(a.beam()[i].score, 0.0);
    if (i) {
      EXPECT_GE(a.beam()[i - 1].score, a.beam()[i].score);
    }
  }
}

TEST(Beam, IncrementalRunMatchesOneShot) {
  ToyScorer sc{7, 4, 21, 1.3};
  BeamSearch<ToyScorer> a(sc, {4, 5});
  for (std::size_t t = 1; t <= sc.T; t += 2) a.Run(sc, std::min(t, sc.T));
  a.Run(sc, sc.T);
  const auto b = BeamDecode(sc, {4, 5});
  EXPECT_EQ(a.best().tokens, b.tokens);
  EXPECT_EQ(a.best().score, b.score);
}

ModelConfig Tiny(const std::string& kind) {
  auto c = ModelConfig::Preset(kind);
  c.encoder.d_feat = 4;
  c.encoder.n_layers = 2;
  c.encoder.d_model = 8;
  c.encoder.n_heads = 2;
  c.encoder.d_ffn = 8;
  c.encoder.chunk_frames = 2;
  c.encoder.left_chunks = 2;
  c.encoder.downsample_rate = 2;
  auto& p = c.predictor;
  p.vocab = 6;
  p.d_blank = 6;
  p.d_joint = 6;
  p.d_vocab = 8;
  p.vocab_layers = 1;
  p.vocab_heads = 2;
  p.vocab_ffn = 8;
  p.d_context = 8;
  p.context_heads = 2;
  return c;
}

// Untrained models put nearly all mass on blank; lowering the blank logit
// makes decodes emit tokens.
template <typename T>
void LowerBlank(FntModel<T>& m, T shift) {
  for (const auto& [name, t] : m.params().params()) {
    if (name == "joint.out.bias") {
      auto p = t;
      p.mutable_data()[0] -= shift;
    }
  }
}

Utterance RandomUtterance(Rng& rng, std::size_t index, std::size_t frames, std::size_t d_feat = 4) {
  Utterance u;
  u.session_id = "s";
  u.index = index;
  u.n_frames = frames;
  u.d_feat = d_feat;
  for (std::size_t i = 0; i < frames * d_feat; ++i) u.features.push_back(rng.Normal(0.0, 2.0));
  for (std::size_t i = 0; i < frames / 8; ++i) u.tokens.push_back(rng.Below(6));
  return u;
}

Session RandomSession(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  Session s;
  s.id = "s";
  std::size_t index = 0;
  for (std::size_t i = 0; i < n; ++i) {
    index += 1 + rng.Below(2);
    s.utterances.push_back(RandomUtterance(rng, index, 12 + 4 * rng.Below(4)));
  }
  return s;
}

TEST(Streaming, UnboundedChunkedGreedyMatchesOffline) {
  for (std::size_t cf : {1u, 2u, 4u}) {
    auto cfg = Tiny("sfnt");
    cfg.encoder.chunk_frames = cf;
    cfg.encoder.left_chunks = kUnboundedLeftChunks;
    FntModel<float> m(cfg, 5);
    LowerBlank(m, 4.0f);
    Rng rng(cf);
    std::size_t emitted = 0;
    for (std::size_t i = 0; i < 50; ++i) {
      const auto u = RandomUtterance(rng, 1, 4 * (2 + rng.Below(6)));
      DecodeConfig dc;
      dc.beam_width = 1;
      const auto streamed = SessionDecoder<float>(m, dc).Decode(u);
      NoGradGuard no_grad;
      FntScorer<float> scorer(m, {});
      scorer.AddFrames(m.encoder().EncodeOffline(u.Features<float>()).hidden);
      const auto offline = GreedyDecode(scorer, dc.search());
      EXPECT_EQ(streamed.tokens, offline.tokens) << "chunk " << cf << " utt " << i;
      emitted += offline.tokens.size();
    }
    EXPECT_GT(emitted, 0u);
  }
}

TEST(Streaming, ChunkLogitsMatchFullPrefixRecompute) {
  FntModel<float> m(Tiny("sfnt"), 6);
  Rng rng(2);
  const auto u = RandomUtterance(rng, 1, 36);
  const auto feat = u.Features<float>();
  NoGradGuard no_grad;
  auto cache = m.encoder().NewCache();
  const auto state = m.StartState({});
  std::size_t done = 0;
  for (std::size_t begin = 0; begin < feat.rows(); begin += 8) {
    const std::size_t end = std::min(begin + 8, feat.rows());
    const auto chunk = m.encoder().EncodeChunk(SliceRows(feat, begin, end), cache);
    const auto full = m.encoder().EncodeMaskedChunks(SliceRows(feat, 0, end));
    const auto tail = SliceRows(full.hidden, done, full.frames());
    EXPECT_LE(MaxAbsDiff(chunk.hidden, tail), 1e-5);
    const auto fa = m.Frames(chunk.hidden), fb = m.Frames(tail);
    for (std::size_t t = 0; t < chunk.frames(); ++t) {
      const auto a = m.StepLogProbs(fa, t, state), b = m.StepLogProbs(fb, t, state);
      for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-5);
    }
    done = full.frames();
  }
}

TEST(Streaming, CachedPredvHiddenMatchesRecompute) {
  FntModel<float> m(Tiny("slongfnt_text"), 7);
  const std::vector<std::size_t> y = {2, 0, 5, 5, 1};
  const auto cached = IncrementalPredvHidden(m, y);
  const auto full = m.PredvHidden(y);
  ASSERT_EQ(cached.shape(), full.shape());
  EXPECT_LE(MaxAbsDiff(cached, full), 1e-6);
}

TEST(Streaming, ZeroHistoryMatchesPlainStreamingModel) {
  for (const char* kind : {"slongfnt", "slongfnt_text", "slongfnt_speech"}) {
    FntModel<double> ctx(Tiny(kind), 8), plain(Tiny("sfnt"), 9);
    plain.params().CopyFrom(ctx.params());
    const auto s = RandomSession(4, 5);
    DecodeConfig dc;
    dc.beam_width = 4;
    dc.nhis = 0;
    const auto a = DecodeSession(ctx, s, dc);
    const auto b = DecodeSession(plain, s, dc);
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].tokens, b[i].tokens) << kind;
      EXPECT_EQ(a[i].score, b[i].score) << kind;
    }
  }
}

TEST(Streaming, TimestampsMonotoneAndLatencyNonNegative) {
  FntModel<double> m(Tiny("slongfnt"), 10);
  const auto s = RandomSession(5, 4);
  for (const auto& r : DecodeSession(m, s, DecodeConfig{})) {
    ASSERT_FALSE(r.chunk_times.empty());
    for (std::size_t i = 1; i < r.chunk_times.size(); ++i) EXPECT_GE(r.chunk_times[i], r.chunk_times[i - 1]);
    EXPECT_GE(r.end_latency, 0.0);
    EXPECT_DOUBLE_EQ(r.end_latency, r.end_time - r.duration);
  }
}

TEST(Streaming, HistoryIsUsedAndBankChangesNothingStructural) {
  FntModel<double> m(Tiny("slongfnt"), 11);
  const auto s = RandomSession(6, 4);
  const auto rs = DecodeSession(m, s, DecodeConfig{});
  EXPECT_TRUE(rs[0].history.empty());
  EXPECT_EQ(rs[1].history, (std::vector<std::size_t>{s.utterances[0].index}));
  EXPECT_EQ(rs[3].history, (std::vector<std::size_t>{s.utterances[1].index, s.utterances[2].index}));
}

TEST(SessionDecoderTest, OrderViolationThrows) {
  FntModel<double> m(Tiny("fnt"), 12);
  auto s = RandomSession(7, 2);
  SessionDecoder<double> d(m, DecodeConfig{});
  d.Decode(s.utterances[1]);
  EXPECT_THROW(d.Decode(s.utterances[0]), HistoryError);
  EXPECT_THROW(d.Decode(s.utterances[1]), HistoryError);
}

TEST(SessionDecoderTest, BufferHoldsOneEntryPerDecodedUtterance) {
  FntModel<double> m(Tiny("longfnt_text"), 13);
  const auto s = RandomSession(8, 4);
  for (auto mode : {HistoryMode::kOracle, HistoryMode::kHypothesis}) {
    DecodeConfig dc;
    dc.history_mode = mode;
    SessionDecoder<double> d(m, dc);
    for (std::size_t k = 0; k < s.utterances.size(); ++k) {
      const auto r = d.Decode(s.utterances[k]);
      EXPECT_EQ(d.buffer().size(), k + 1);
      EXPECT_EQ(d.buffer().at(r.index).transcript, mode == HistoryMode::kOracle ? r.reference : r.tokens);
    }
  }
}

TEST(SessionDecoderTest, FutureUtterancesNeverRead) {
  for (const char* kind : {"longfnt", "slongfnt"}) {
    FntModel<double> m(Tiny(kind), 14);
    auto s = RandomSession(9, 4);
    const auto a = DecodeSession(m, s, DecodeConfig{});
    auto& last = s.utterances.back();
    for (auto& x : last.features) x = -x;
    last.tokens = {0, 0, 0};
    const auto b = DecodeSession(m, s, DecodeConfig{});
    for (std::size_t i = 0; i + 1 < a.size(); ++i) {
      EXPECT_EQ(a[i].tokens, b[i].tokens);
      EXPECT_EQ(a[i].score, b[i].score);
    }
  }
}

TEST(SessionDecoderTest, NoneModeEqualsZeroHistory) {
  FntModel<double> m(Tiny("longfnt"), 15);
  const auto s = RandomSession(10, 4);
  DecodeConfig none, zero;
  none.history_mode = HistoryMode::kNone;
  zero.nhis = 0;
  const auto a = DecodeSession(m, s, none), b = DecodeSession(m, s, zero);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tokens, b[i].tokens);
    EXPECT_EQ(a[i].score, b[i].score);
  }
}

TEST(SessionDecoderTest, OfflineBeamOneEqualsGreedyOnModel) {
  FntModel<double> m(Tiny("longfnt_text"), 16);
  const auto s = RandomSession(11, 3);
  DecodeConfig one;
  one.beam_width = 1;
  const auto g = DecodeSession(m, s, one);
  SessionDecoder<double> d(m, one);
  for (std::size_t i = 0; i < s.utterances.size(); ++i) {
    const auto& u = s.utterances[i];
    NoGradGuard no_grad;
    PreparedContext<double> ctx;
    if (i > 0) {
      std::vector<TargetSeq> hist;
      for (auto idx : g[i].history) {
        for (std::size_t j = 0; j < i; ++j) {
          if (s.utterances[j].index == idx) hist.push_back(g[j].tokens);
        }
      }
      ctx = m.Prepare(m.Context(hist));
    }
    FntScorer<double> sc(m, ctx);
    sc.AddFrames(m.encoder().EncodeOffline(u.Features<double>()).hidden);
    const auto b = BeamDecode(sc, {1, 5});
    EXPECT_EQ(b.tokens, g[i].tokens);
    EXPECT_EQ(b.score, g[i].score);
  }
}

}  // namespace
}  // namespace fnt
