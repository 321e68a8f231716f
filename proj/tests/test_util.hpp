#pragma once

#include <type_traits>
#include <vector>

#include "fnt/numerics/rng.hpp"
#include "fnt/numerics/tensor.hpp"

namespace fnt::testing {

template <typename T = double>
Tensor<T> RandomTensor(Rng& rng, Shape shape, double scale = 1.0, bool requires_grad = false) {
  std::vector<T> data(NumElements(shape));
  for (auto& x : data) x = static_cast<T>(rng.Normal(0.0, scale));
  return Tensor<T>(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
double MaxAbsDiff(const Tensor<T>& a, const Tensor<T>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

template <typename Store>
auto ParamTensors(const Store& store) {
  std::vector<std::decay_t<decltype(store.params().front().second)>> out;
  for (const auto& [name, t] : store.params()) out.push_back(t);
  return out;
}

}  // namespace fnt::testing
