#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "fnt/numerics/nn.hpp"
#include "fnt/numerics/ops.hpp"

namespace fnt {

class TokenError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Pred^B: token embedding followed by a stacked LSTM. Token ids run over the
// vocabulary plus SOS (= vocab).
template <typename T>
struct BlankPredictor {
  Embedding<T> embed;
  Lstm<T> lstm;

  BlankPredictor() = default;
  BlankPredictor(ParamStore<T>& store, const std::string& name, std::size_t vocab, std::size_t hidden,
                 std::size_t layers, Rng& rng)
      : embed(store, name + ".emb", vocab + 1, hidden, rng), lstm(store, name + ".lstm", hidden, hidden, layers, rng) {}

  std::size_t hidden() const { return lstm.hidden; }
  LstmState<T> Start() const { return lstm.ZeroState(); }

  Tensor<T> Step(LstmState<T>& state, std::size_t token) const {
    if (token >= embed.vocab()) {
      throw TokenError("blank predictor: token " + std::to_string(token) + " outside [0, " +
                       std::to_string(embed.vocab()) + ")");
    }
    return lstm.Step(state, embed({token}));
  }

  // Embeddings for [SOS, y_1 .. y_L] from a fresh state: [(L+1) x hidden].
  Tensor<T> Sequence(const std::vector<std::size_t>& tokens) const {
    auto state = Start();
    std::vector<Tensor<T>> rows;
    rows.push_back(Step(state, embed.vocab() - 1));
    for (auto y : tokens) rows.push_back(Step(state, y));
    return ConcatRows(rows);
  }
};

// z^B = w_out . tanh(W_h h + W_e e + b) + b_out
template <typename T>
struct JointBlank {
  Linear<T> enc, pred, out;

  JointBlank() = default;
  JointBlank(ParamStore<T>& store, const std::string& name, std::size_t d_enc, std::size_t d_pred, std::size_t d_joint,
             Rng& rng)
      : enc(store, name + ".enc", d_enc, d_joint, rng),
        pred(store, name + ".pred", d_pred, d_joint, rng, false),
        out(store, name + ".out", d_joint, 1, rng) {}

  Tensor<T> operator()(const Tensor<T>& h, const Tensor<T>& e) const { return FromProjected(enc(h), pred(e)); }

  Tensor<T> FromProjected(const Tensor<T>& h_proj, const Tensor<T>& e_proj) const {
    return out(Tanh(Add(h_proj, e_proj)));
  }

  // All (t, l) pairs: row t * M + l of the [(T*M) x 1] result.
  Tensor<T> Grid(const Tensor<T>& h, const Tensor<T>& e) const { return out(Tanh(GridAdd(enc(h), pred(e)))); }
};

}  // namespace fnt
