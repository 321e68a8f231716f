#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fnt/numerics/ops.hpp"
#include "fnt/numerics/rng.hpp"
#include "fnt/numerics/tensor.hpp"

namespace fnt {

// Raised when attention is asked to attend over zero keys. Callers decide
// whether that means pass-through.
class EmptyContextError : public std::runtime_error {
 public:
  EmptyContextError() : std::runtime_error("attention over an empty key set") {}
};

// Row-major boolean mask, true = key visible to query.
struct AttentionMask {
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<unsigned char> allowed;

  static AttentionMask All(std::size_t q, std::size_t k) { return {q, k, std::vector<unsigned char>(q * k, 1)}; }
  static AttentionMask Causal(std::size_t n) {
    AttentionMask m{n, n, std::vector<unsigned char>(n * n, 0)};
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) m.allowed[i * n + j] = 1;
    return m;
  }
  bool operator()(std::size_t q, std::size_t k) const { return allowed[q * keys + k] != 0; }
};

inline constexpr double kMaskBias = -1e9;

// softmax(q k^T / sqrt(d) + mask_bias) v for a single head.
template <typename T>
Tensor<T> Attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const AttentionMask* mask = nullptr, std::vector<T>* probs_out = nullptr) {
  const std::size_t d = q.cols();
  if (d == 0) throw DimensionError("Attention: zero head dimension");
  if (k.rows() == 0 || k.size() == 0) throw EmptyContextError();
  if (k.cols() != d || v.rows() != k.rows()) {
    throw DimensionError("Attention: q " + ShapeString(q.shape()) + ", k " + ShapeString(k.shape()) + ", v " +
                         ShapeString(v.shape()));
  }
  auto scores = Scale(MatmulNT(q, k), T(1) / std::sqrt(T(d)));
  if (mask != nullptr) {
    if (mask->queries != q.rows() || mask->keys != k.rows()) {
      throw DimensionError("Attention: mask is " + std::to_string(mask->queries) + "x" +
                           std::to_string(mask->keys) + " for scores " + ShapeString(scores.shape()));
    }
    std::vector<T> bias(mask->allowed.size());
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = mask->allowed[i] ? T(0) : T(kMaskBias);
    scores = Add(scores, Tensor<T>(scores.shape(), std::move(bias)));
  }
  auto probs = SoftmaxRows(scores);
  if (probs_out != nullptr) probs_out->assign(probs.data().begin(), probs.data().end());
  return Matmul(probs, v);
}

// Named, ordered parameter registry shared by all modules of a model.
template <typename T>
class ParamStore {
 public:
  Tensor<T> Create(const std::string& name, Shape shape, Rng& rng, double bound) {
    std::vector<T> data(NumElements(shape));
    for (auto& x : data) x = static_cast<T>(rng.Uniform(-bound, bound));
    return Register(name, Tensor<T>(std::move(shape), std::move(data), true));
  }

  Tensor<T> Constant(const std::string& name, Shape shape, T value) {
    const auto n = NumElements(shape);
    return Register(name, Tensor<T>(std::move(shape), std::vector<T>(n, value), true));
  }

  Tensor<T> Register(const std::string& name, Tensor<T> t) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_[name] = params_.size();
    params_.emplace_back(name, t);
    return t;
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& params() const { return params_; }
  std::optional<Tensor<T>> Find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return params_[it->second].second;
  }
  Tensor<T> Get(const std::string& name) const {
    auto t = Find(name);
    if (!t) throw std::out_of_range("no parameter named " + name);
    return *t;
  }

  void ZeroGrad() {
    for (auto& [name, p] : params_) p.ZeroGrad();
  }

  std::size_t NumScalars() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.size();
    return n;
  }

  // Copies values of every same-named parameter present in `other`.
  template <typename U>
  std::size_t CopyFrom(const ParamStore<U>& other) {
    std::size_t copied = 0;
    for (auto& [name, p] : params_) {
      auto src = other.Find(name);
      if (!src) continue;
      if (src->shape() != p.shape()) {
        throw DimensionError("CopyFrom: parameter " + name + " is " + ShapeString(src->shape()) + " here " +
                             ShapeString(p.shape()));
      }
      auto dst = p.mutable_data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src->data()[i]);
      ++copied;
    }
    return copied;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

inline double XavierBound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in x out]
  std::optional<Tensor<T>> bias;

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool with_bias = true)
      : weight(store.Create(name + ".weight", {in, out}, rng, XavierBound(in, out))) {
    if (with_bias) bias = store.Constant(name + ".bias", {out}, T(0));
  }

  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = Matmul(x, weight);
    return bias ? AddRow(y, *bias) : y;
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain, bias;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t dim)
      : gain(store.Constant(name + ".gain", {dim}, T(1))), bias(store.Constant(name + ".bias", {dim}, T(0))) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return LayerNormRows(x, gain, bias); }
};

template <typename T>
struct Embedding {
  Tensor<T> table;  // [vocab x dim]

  Embedding() = default;
  Embedding(ParamStore<T>& store, const std::string& name, std::size_t vocab, std::size_t dim, Rng& rng)
      : table(store.Create(name + ".table", {vocab, dim}, rng, XavierBound(vocab, dim))) {}

  std::size_t vocab() const { return table.rows(); }
  Tensor<T> operator()(const std::vector<std::size_t>& ids) const { return GatherRows(table, ids); }
};

// h independent heads on d/h column slices, concatenated, then an output
// projection. Queries and keys may come from spaces of different width.
template <typename T>
struct MultiHeadAttention {
  Linear<T> wq, wk, wv, wo;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& store, const std::string& name, std::size_t d_model, std::size_t n_heads,
                     Rng& rng, std::size_t d_kv_in = 0)
      : wq(store, name + ".q", d_model, d_model, rng),
        wk(store, name + ".k", d_kv_in ? d_kv_in : d_model, d_model, rng),
        wv(store, name + ".v", d_kv_in ? d_kv_in : d_model, d_model, rng),
        wo(store, name + ".o", d_model, d_model, rng),
        heads(n_heads) {
    if (n_heads == 0 || d_model % n_heads != 0) {
      throw std::invalid_argument(name + ": d_model " + std::to_string(d_model) + " not divisible by " +
                                  std::to_string(n_heads) + " heads");
    }
  }

  std::size_t d_model() const { return wq.out_features(); }

  // Attention over already-projected keys and values.
  Tensor<T> AttendProjected(const Tensor<T>& query_in, const Tensor<T>& k, const Tensor<T>& v,
                            const AttentionMask* mask, std::vector<std::vector<T>>* probs = nullptr) const {
    auto q = wq(query_in);
    const std::size_t dh = d_model() / heads;
    std::vector<Tensor<T>> outs;
    if (probs) probs->assign(heads, {});
    for (std::size_t h = 0; h < heads; ++h) {
      auto c0 = h * dh, c1 = (h + 1) * dh;
      outs.push_back(Attention(SliceCols(q, c0, c1), SliceCols(k, c0, c1), SliceCols(v, c0, c1), mask,
                               probs ? &(*probs)[h] : nullptr));
    }
    return wo(heads == 1 ? outs.front() : ConcatCols(outs));
  }

  Tensor<T> operator()(const Tensor<T>& query_in, const Tensor<T>& kv_in, const AttentionMask* mask = nullptr,
                       std::vector<std::vector<T>>* probs = nullptr) const {
    return AttendProjected(query_in, wk(kv_in), wv(kv_in), mask, probs);
  }
};

template <typename T>
struct LstmLayerState {
  Tensor<T> h, c;  // [1 x hidden]
};

template <typename T>
using LstmState = std::vector<LstmLayerState<T>>;

// Stack of LSTM layers, gates ordered (input, forget, cell, output).
template <typename T>
struct Lstm {
  struct Layer {
    Tensor<T> w_x, w_h, b;
  };
  std::vector<Layer> layers;
  std::size_t input_dim = 0, hidden = 0;

  Lstm() = default;
  Lstm(ParamStore<T>& store, const std::string& name, std::size_t d_in, std::size_t d_hidden,
       std::size_t n_layers, Rng& rng)
      : input_dim(d_in), hidden(d_hidden) {
    for (std::size_t l = 0; l < n_layers; ++l) {
      const auto in = l == 0 ? d_in : d_hidden;
      const auto pre = name + ".l" + std::to_string(l);
      layers.push_back({store.Create(pre + ".w_x", {in, 4 * d_hidden}, rng, XavierBound(in, 4 * d_hidden)),
                        store.Create(pre + ".w_h", {d_hidden, 4 * d_hidden}, rng,
                                     XavierBound(d_hidden, 4 * d_hidden)),
                        store.Constant(pre + ".b", {4 * d_hidden}, T(0))});
    }
  }

  LstmState<T> ZeroState() const {
    LstmState<T> s;
    for (std::size_t l = 0; l < layers.size(); ++l)
      s.push_back({Tensor<T>::Zeros({1, hidden}), Tensor<T>::Zeros({1, hidden})});
    return s;
  }

  // One time step through every layer; returns the top-layer hidden vector.
  Tensor<T> Step(LstmState<T>& state, const Tensor<T>& input) const {
    if (state.size() != layers.size()) {
      throw DimensionError("Lstm::Step: state has " + std::to_string(state.size()) + " layers, config has " +
                           std::to_string(layers.size()));
    }
    if (input.size() != input_dim) {
      throw DimensionError("Lstm::Step: input " + ShapeString(input.shape()) + " for input width " +
                           std::to_string(input_dim));
    }
    Tensor<T> x = input.Reshape({1, input_dim});
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& st = state[l];
      if (st.h.size() != hidden || st.c.size() != hidden) {
        throw DimensionError("Lstm::Step: layer " + std::to_string(l) + " state width mismatch");
      }
      const auto& L = layers[l];
      auto z = AddRow(Add(Matmul(x, L.w_x), Matmul(st.h, L.w_h)), L.b);
      auto i = Sigmoid(SliceCols(z, 0, hidden));
      auto f = Sigmoid(SliceCols(z, hidden, 2 * hidden));
      auto g = Tanh(SliceCols(z, 2 * hidden, 3 * hidden));
      auto o = Sigmoid(SliceCols(z, 3 * hidden, 4 * hidden));
      st.c = Add(Mul(f, st.c), Mul(i, g));
      st.h = Mul(o, Tanh(st.c));
      x = st.h;
    }
    return x;
  }
};

// Sinusoidal absolute position rows for positions [start, start + n).
template <typename T>
Tensor<T> SinusoidalPositions(std::size_t start, std::size_t n, std::size_t d) {
  std::vector<T> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = static_cast<double>(start + i);
    for (std::size_t j = 0; j < d; ++j) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(d));
      out[i * d + j] = static_cast<T>(j % 2 == 0 ? std::sin(pos * rate) : std::cos(pos * rate));
    }
  }
  return Tensor<T>({n, d}, std::move(out));
}

}  // namespace fnt
