#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "fnt/corpus/codebook.hpp"
#include "fnt/corpus/dataset.hpp"
#include "fnt/corpus/session.hpp"

namespace fnt {
namespace {

namespace fs = std::filesystem;

CorpusConfig SmallCorpus() {
  CorpusConfig c;
  c.train_sessions = 4;
  c.dev_sessions = 2;
  c.test_sessions = 2;
  c.text_sessions = 3;
  c.n_utterances = 5;
  return c;
}

fs::path TempFile(const std::string& name) { return fs::temp_directory_path() / ("fnt_corpus_" + name); }

std::string ReadBytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

TEST(Codebook, NoPairsAllDistancesAtLeastDeltaMin) {
  const auto cb = BuildCodebook(30, 16, 0, 0.1, 1.5, 11);
  for (std::size_t a = 0; a < cb.vocab; ++a) {
    for (std::size_t b = a + 1; b < cb.vocab; ++b) {
      double s = 0;
      for (std::size_t k = 0; k < cb.d_feat; ++k) {
        const double d = cb.prototypes[a][k] - cb.prototypes[b][k];
        s += d * d;
      }
      EXPECT_GE(std::sqrt(s), 1.5) << a << "," << b;
    }
  }
}

TEST(Codebook, PairsAtEpsilonOthersSpaced) {
  const auto cb = BuildCodebook(50, 16, 6, 0.1, 1.2, 3);
  for (const auto& [a, b] : cb.pairs) EXPECT_NEAR(Distance(cb.prototypes[a], cb.prototypes[b]), 0.1, 1e-12);
  for (std::size_t a = 0; a < cb.vocab; ++a) {
    for (std::size_t b = a + 1; b < cb.vocab; ++b) {
      if (cb.partner(a) == b) continue;
      EXPECT_GE(Distance(cb.prototypes[a], cb.prototypes[b]), 1.2);
    }
  }
  EXPECT_EQ(cb.role(0), TokenRole::kConfusable);
  EXPECT_EQ(cb.role(12), TokenRole::kAnchor);
  EXPECT_EQ(cb.role(24), TokenRole::kFiller);
  EXPECT_EQ(cb.anchor_of(3), 15u);
}

TEST(Codebook, DeterministicPerSeed) {
  const auto a = BuildCodebook(50, 16, 6, 0.1, 1.2, 9);
  const auto b = BuildCodebook(50, 16, 6, 0.1, 1.2, 9);
  const auto c = BuildCodebook(50, 16, 6, 0.1, 1.2, 10);
  EXPECT_EQ(a.prototypes, b.prototypes);
  EXPECT_NE(a.prototypes, c.prototypes);
}

TEST(Codebook, UnsatisfiableSuggestsLargerDim) {
  try {
    BuildCodebook(50, 2, 0, 0.1, 1.5, 1, 500);
    FAIL() << "expected CodebookError";
  } catch (const CodebookError& e) {
    EXPECT_NE(std::string(e.what()).find("d_feat"), std::string::npos);
  }
  EXPECT_THROW(BuildCodebook(5, 16, 2, 0.1, 1.2, 1), CodebookError);
  EXPECT_THROW(BuildCodebook(50, 16, 2, 1.5, 1.2, 1), CodebookError);
}

TEST(Render, ShapeLawAndZeroNoise) {
  const auto cb = BuildCodebook(50, 16, 6, 0.1, 1.2, 3);
  Rng rng(1);
  const std::vector<std::size_t> toks = {30, 2, 41};
  const auto f = RenderFeatures(toks, cb, 4, 0.0, rng);
  ASSERT_EQ(f.size(), 4 * toks.size() * 16);
  for (std::size_t t = 0; t < toks.size(); ++t) {
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(f[(t * 4 + r) * 16 + k], cb.prototypes[toks[t]][k]);
    }
  }
}

TEST(Render, MeanOfRendersWithinThreeSigmaOverRootN) {
  const auto cb = BuildCodebook(50, 16, 6, 0.1, 1.2, 3);
  const double sigma = 0.4;
  const std::size_t n = 10000;
  Rng rng(77);
  std::vector<double> sum(16, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = RenderFeatures({7}, cb, 1, sigma, rng);
    for (std::size_t k = 0; k < 16; ++k) sum[k] += f[k];
  }
  for (std::size_t k = 0; k < 16; ++k) {
    EXPECT_NEAR(sum[k] / n, cb.prototypes[7][k], 3 * sigma / std::sqrt(static_cast<double>(n)));
  }
}

TEST(Nhis, ZeroAlwaysZero) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(SampleNhisTrain(0, rng), 0u);
}

TEST(Nhis, UniformOverSupport) {
  Rng rng(5);
  std::vector<std::size_t> count(3, 0);
  const std::size_t n = 100000;
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = SampleNhisTrain(2, rng);
    ASSERT_LE(v, 2u);
    count[v] += 1;
  }
  for (auto c : count) EXPECT_NEAR(static_cast<double>(c) / n, 1.0 / 3.0, 0.02);
  Rng a(8), b(8);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(SampleNhisTrain(2, a), SampleNhisTrain(2, b));
}

TEST(Session, NoGapsGivesConsecutiveIndices) {
  CorpusConfig c = SmallCorpus();
  c.gap_drop_prob = 0;
  const auto cb = c.MakeCodebook();
  const auto s = GenerateSession(c, cb, 42, "s0");
  ASSERT_EQ(s.utterances.size(), c.n_utterances);
  for (std::size_t i = 0; i < s.utterances.size(); ++i) EXPECT_EQ(s.utterances[i].index, i + 1);
}

TEST(Session, GapsAreMonotone) {
  CorpusConfig c = SmallCorpus();
  c.gap_drop_prob = 0.5;
  const auto cb = c.MakeCodebook();
  bool saw_gap = false;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = GenerateSession(c, cb, seed, "s");
    for (std::size_t i = 1; i < s.utterances.size(); ++i) {
      EXPECT_GT(s.utterances[i].index, s.utterances[i - 1].index);
      saw_gap |= s.utterances[i].index > s.utterances[i - 1].index + 1;
    }
  }
  EXPECT_TRUE(saw_gap);
}

TEST(Session, StructuralAuditOverThousandSessions) {
  const CorpusConfig c;
  const auto cb = c.MakeCodebook();
  std::size_t occurrences = 0, introductions = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto s = GenerateSession(c, cb, seed, "s", false);
    const auto r = AuditSession(s, cb, c.nhis);
    ASSERT_TRUE(r.ok()) << "seed " << seed << " violations " << r.violations;
    occurrences += r.occurrences;
    introductions += r.introductions;
    for (const auto& u : s.utterances) {
      for (std::size_t i = 1; i < u.tokens.size(); ++i) EXPECT_NE(u.tokens[i], u.tokens[i - 1]);
    }
  }
  EXPECT_GT(occurrences, introductions);
  EXPECT_GT(introductions, 0u);
}

TEST(Session, FeaturesAreRenderOfTokens) {
  CorpusConfig c = SmallCorpus();
  const auto cb = c.MakeCodebook();
  const auto s = GenerateSession(c, cb, 3, "s");
  for (const auto& u : s.utterances) {
    EXPECT_EQ(u.n_frames, u.tokens.size() * c.frames_per_token + 2 * c.silence_frames);
    EXPECT_EQ(u.features.size(), u.n_frames * c.d_feat);
    Rng r(u.seed);
    for (std::size_t i = 0; i < c.silence_frames * c.d_feat; ++i) r.Normal(0.0, c.sigma);
    const auto body = RenderFeatures(u.tokens, cb, c.frames_per_token, c.sigma, r);
    const std::size_t off = c.silence_frames * c.d_feat;
    for (std::size_t i = 0; i < body.size(); ++i) ASSERT_EQ(u.features[off + i], body[i]);
    EXPECT_DOUBLE_EQ(u.duration_seconds(), u.n_frames * 0.01);
  }
}

TEST(Session, Deterministic) {
  const CorpusConfig c = SmallCorpus();
  const auto cb = c.MakeCodebook();
  const auto a = GenerateSession(c, cb, 99, "s");
  const auto b = GenerateSession(c, cb, 99, "s");
  ASSERT_EQ(a.utterances.size(), b.utterances.size());
  for (std::size_t i = 0; i < a.utterances.size(); ++i) {
    EXPECT_EQ(a.utterances[i].tokens, b.utterances[i].tokens);
    EXPECT_EQ(a.utterances[i].features, b.utterances[i].features);
    EXPECT_EQ(a.utterances[i].index, b.utterances[i].index);
  }
}

TEST(Config, ValidationRejectsBadOrdering) {
  CorpusConfig c;
  c.sigma = 0.05;
  EXPECT_THROW(c.Validate(), CorpusConfigError);
  c = CorpusConfig{};
  c.frames_per_token = 2;
  EXPECT_THROW(c.Validate(), CorpusConfigError);
  c = CorpusConfig{};
  c.vocab = 20;
  EXPECT_THROW(c.Validate(), CorpusConfigError);
}

TEST(Dataset, SplitsAndTextCorpus) {
  const auto c = SmallCorpus();
  const auto d = BuildDataset(c);
  EXPECT_EQ(d.Split("train").size(), 4u);
  EXPECT_EQ(d.Split("dev").size(), 2u);
  EXPECT_EQ(d.Split("test").size(), 2u);
  const auto t = BuildTextCorpus(c);
  EXPECT_EQ(t.sessions.size(), 3u);
  for (const auto& s : t.sessions) {
    for (const auto& u : s.utterances) EXPECT_FALSE(u.has_features());
  }
  const auto m = Manifest(d, "dataset.jsonl");
  EXPECT_EQ(m["sessions"].size(), 8u);
  EXPECT_EQ(CorpusConfigFromJson(m["generator"]).seed, c.seed);
}

TEST(Dataset, SaveLoadSaveByteIdentical) {
  const auto d = BuildDataset(SmallCorpus());
  const auto p1 = TempFile("a.jsonl"), p2 = TempFile("b.jsonl");
  SaveDataset(d, p1);
  const auto loaded = LoadDataset(p1);
  SaveDataset(loaded, p2);
  EXPECT_EQ(ReadBytes(p1), ReadBytes(p2));
  ASSERT_EQ(loaded.sessions.size(), d.sessions.size());
  for (std::size_t s = 0; s < d.sessions.size(); ++s) {
    EXPECT_EQ(loaded.sessions[s].split, d.sessions[s].split);
    for (std::size_t i = 0; i < d.sessions[s].utterances.size(); ++i) {
      EXPECT_EQ(loaded.sessions[s].utterances[i].features, d.sessions[s].utterances[i].features);
      EXPECT_EQ(loaded.sessions[s].utterances[i].tokens, d.sessions[s].utterances[i].tokens);
    }
  }
  const auto t = BuildTextCorpus(SmallCorpus());
  EXPECT_EQ(SerializeDataset(ParseDataset(SerializeDataset(t))), SerializeDataset(t));
  fs::remove(p1);
  fs::remove(p2);
}

TEST(Dataset, TruncationChecksumAndVersionErrors) {
  const auto text = SerializeDataset(BuildDataset(SmallCorpus()));
  EXPECT_THROW(ParseDataset(text.substr(0, text.size() / 2)), DatasetError);
  EXPECT_THROW(ParseDataset(text.substr(0, text.size() - 1)), DatasetError);
  const std::size_t last = text.rfind('\n', text.size() - 2);
  EXPECT_THROW(ParseDataset(text.substr(0, last + 1)), DatasetError);

  auto corrupt = text;
  const std::size_t pos = corrupt.find("\"tokens\":[") + 10;
  corrupt[pos] = corrupt[pos] == '1' ? '2' : '1';
  EXPECT_THROW(ParseDataset(corrupt), DatasetError);

  auto versioned = text;
  versioned.replace(versioned.find("\"version\":1"), 11, "\"version\":9");
  try {
    ParseDataset(versioned);
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Dataset, Base64RoundTripsArbitraryLengths) {
  for (std::size_t n : {0, 1, 2, 3, 5}) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = std::ldexp(1.0 + i, -static_cast<int>(i)) - 0.1 * i;
    EXPECT_EQ(detail::Base64Decode(detail::Base64Encode(v), n), v);
  }
  EXPECT_EQ(detail::Base64Encode({1.0}), "AAAAAAAA8D8=");
}

}  // namespace
}  // namespace fnt
