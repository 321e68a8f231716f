#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fnt/numerics/nn.hpp"
#include "fnt/numerics/ops.hpp"
#include "fnt/numerics/rng.hpp"
#include "fnt/predictor/config.hpp"

namespace fnt {

class ContextFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Token-level history embeddings C. Each history utterance contributes one
// SOS row followed by one row per token.
template <typename T>
struct ContextEmbeddings {
  Tensor<T> rows;                           // [L_C x d_ctx]
  std::vector<std::size_t> utterance_rows;  // rows per utterance, session order
  ContextSource source = ContextSource::kTrained;

  std::size_t length() const { return rows.size() == 0 ? 0 : rows.rows(); }
  bool empty() const { return length() == 0; }
};

inline std::vector<std::size_t> SosSeparated(const std::vector<std::vector<std::size_t>>& history, std::size_t sos) {
  std::vector<std::size_t> ids;
  for (const auto& utt : history) {
    ids.push_back(sos);
    ids.insert(ids.end(), utt.begin(), utt.end());
  }
  return ids;
}

inline std::size_t ContextLength(const std::vector<std::vector<std::size_t>>& history) {
  std::size_t n = 0;
  for (const auto& utt : history) n += 1 + utt.size();
  return n;
}

// c~ = [mean(C); std(C)] as a [1 x 2 d_ctx] row.
template <typename T>
Tensor<T> UtteranceSummary(const Tensor<T>& c) {
  return ConcatCols<T>({MeanRows(c), StdRows(c)});
}

// Small bidirectional transformer over the SOS-separated history.
template <typename T>
struct ContextEncoder {
  struct Block {
    LayerNorm<T> norm_att, norm_ffn;
    MultiHeadAttention<T> att;
    Linear<T> ffn1, ffn2;
  };
  Embedding<T> embed;
  std::vector<Block> blocks;
  LayerNorm<T> final_norm;
  std::size_t sos = 0;

  ContextEncoder() = default;
  ContextEncoder(ParamStore<T>& store, const std::string& name, std::size_t vocab, std::size_t d, std::size_t layers,
                 std::size_t heads, Rng& rng)
      : embed(store, name + ".emb", vocab + 1, d, rng), sos(vocab) {
    for (std::size_t i = 0; i < layers; ++i) {
      const auto p = name + ".l" + std::to_string(i);
      Block b;
      b.norm_att = LayerNorm<T>(store, p + ".norm_att", d);
      b.att = MultiHeadAttention<T>(store, p + ".att", d, heads, rng);
      b.norm_ffn = LayerNorm<T>(store, p + ".norm_ffn", d);
      b.ffn1 = Linear<T>(store, p + ".ffn1", d, 2 * d, rng);
      b.ffn2 = Linear<T>(store, p + ".ffn2", 2 * d, d, rng);
      blocks.push_back(std::move(b));
    }
    final_norm = LayerNorm<T>(store, name + ".final_norm", d);
  }

  ContextEmbeddings<T> Encode(const std::vector<std::vector<std::size_t>>& history) const {
    ContextEmbeddings<T> out;
    out.source = ContextSource::kTrained;
    for (const auto& u : history) out.utterance_rows.push_back(1 + u.size());
    const auto ids = SosSeparated(history, sos);
    const std::size_t d = embed.table.cols();
    if (ids.empty()) {
      out.rows = Tensor<T>::Zeros({0, d});
      return out;
    }
    auto x = Add(embed(ids), SinusoidalPositions<T>(0, ids.size(), d));
    for (const auto& b : blocks) {
      auto a = b.norm_att(x);
      x = Add(x, b.att(a, a));
      x = Add(x, b.ffn2(Relu(b.ffn1(b.norm_ffn(x)))));
    }
    out.rows = final_norm(x);
    return out;
  }
};

// Frozen stand-in for a pre-trained text embedder: each token id maps to a
// fixed seeded random vector, and every row is averaged with its
// utterance's mean vector.
template <typename T>
class ExternalContextProvider {
 public:
  ExternalContextProvider(std::size_t dim, std::uint64_t seed, std::size_t sos) : dim_(dim), root_(seed), sos_(sos) {}

  std::size_t dim() const { return dim_; }

  std::vector<double> TokenVector(std::size_t token) const {
    Rng r = root_.Split(token);
    std::vector<double> v(dim_);
    for (auto& x : v) x = r.Normal(0.0, 1.0);
    return v;
  }

  ContextEmbeddings<T> Encode(const std::vector<std::vector<std::size_t>>& history) const {
    ContextEmbeddings<T> out;
    out.source = ContextSource::kExternal;
    std::vector<T> data;
    for (const auto& utt : history) {
      std::vector<std::vector<double>> vecs{TokenVector(sos_)};
      for (auto y : utt) vecs.push_back(TokenVector(y));
      std::vector<double> mean(dim_, 0.0);
      for (const auto& v : vecs)
        for (std::size_t j = 0; j < dim_; ++j) mean[j] += v[j] / static_cast<double>(vecs.size());
      for (const auto& v : vecs)
        for (std::size_t j = 0; j < dim_; ++j) data.push_back(static_cast<T>(0.5 * (v[j] + mean[j])));
      out.utterance_rows.push_back(vecs.size());
    }
    const std::size_t n = data.size() / dim_;
    out.rows = Tensor<T>({n, dim_}, std::move(data));
    return out;
  }

 private:
  std::size_t dim_;
  Rng root_;
  std::size_t sos_;
};

// Context built from Pred^V hidden states already computed for each history
// utterance ([(1 + L) x d] per utterance, SOS position first).
template <typename T>
ContextEmbeddings<T> ContextFromHidden(const std::vector<Tensor<T>>& hidden, std::size_t d) {
  ContextEmbeddings<T> out;
  out.source = ContextSource::kPredvHidden;
  std::vector<Tensor<T>> parts;
  for (const auto& h : hidden) {
    parts.push_back(h.Detach());
    out.utterance_rows.push_back(h.rows());
  }
  out.rows = parts.empty() ? Tensor<T>::Zeros({0, d}) : ConcatRows(parts);
  return out;
}

// Binary layout (little-endian): u32 n_utterances, u32 d_ctx, then per
// utterance u32 row count followed by rows * d_ctx float32 values.
template <typename T>
void WriteContextFile(const std::string& path, const ContextEmbeddings<T>& ctx) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ContextFileError("cannot open " + path + " for writing");
  auto put_u32 = [&](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
  };
  const std::size_t d = ctx.rows.size() == 0 ? (ctx.rows.rank() == 2 ? ctx.rows.cols() : 0) : ctx.rows.cols();
  put_u32(static_cast<std::uint32_t>(ctx.utterance_rows.size()));
  put_u32(static_cast<std::uint32_t>(d));
  std::size_t r = 0;
  for (auto n : ctx.utterance_rows) {
    put_u32(static_cast<std::uint32_t>(n));
    for (std::size_t i = 0; i < n * d; ++i) {
      const float v = static_cast<float>(ctx.rows[r * d + i]);
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(bits);
    }
    r += n;
  }
  if (!f) throw ContextFileError("write failed for " + path);
}

template <typename T>
ContextEmbeddings<T> ReadContextFile(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ContextFileError("cannot open " + path);
  auto get_u32 = [&]() {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4)) throw ContextFileError("truncated context file " + path);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  };
  ContextEmbeddings<T> out;
  out.source = ContextSource::kExternal;
  const std::size_t n_utt = get_u32(), d = get_u32();
  std::vector<T> data;
  for (std::size_t u = 0; u < n_utt; ++u) {
    const std::size_t n = get_u32();
    out.utterance_rows.push_back(n);
    for (std::size_t i = 0; i < n * d; ++i) {
      const std::uint32_t bits = get_u32();
      float v;
      std::memcpy(&v, &bits, 4);
      data.push_back(static_cast<T>(v));
    }
  }
  if (f.peek() != std::char_traits<char>::eof()) throw ContextFileError("trailing bytes in context file " + path);
  const std::size_t rows = d == 0 ? 0 : data.size() / d;
  out.rows = Tensor<T>({rows, d}, std::move(data));
  return out;
}

}  // namespace fnt
