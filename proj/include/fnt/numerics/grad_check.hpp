#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "fnt/numerics/tensor.hpp"

namespace fnt {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline double Evaluate(const std::function<Tensor<double>()>& f) {
  NoGradGuard guard;
  const double v = f().item();
  if (!std::isfinite(v)) throw EvaluationError("grad_check: objective is not finite");
  return v;
}

}  // namespace detail

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar objective of x.
inline double GradCheck(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                        const Tensor<double>& x, double h = 1e-5) {
  Tensor<double> leaf(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  auto y = f(leaf);
  if (!std::isfinite(y.item())) throw EvaluationError("grad_check: objective is not finite");
  y.Backward();
  std::vector<double> analytic(leaf.size(), 0.0);
  if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());

  Tensor<double> probe(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  auto values = probe.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + h;
    const double up = detail::Evaluate([&] { return f(probe); });
    values[i] = orig - h;
    const double down = detail::Evaluate([&] { return f(probe); });
    values[i] = orig;
    const double fd = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

// Same measure over a set of parameter tensors that `f` closes over. The
// parameters are perturbed in place and restored.
inline double GradCheckParams(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> params,
                              double h = 1e-5, std::size_t max_coords_per_param = 0) {
  for (auto& p : params) p.ZeroGrad();
  auto y = f();
  if (!std::isfinite(y.item())) throw EvaluationError("grad_check: objective is not finite");
  y.Backward();
  double worst = 0.0;
  for (auto& p : params) {
    std::vector<double> analytic(p.size(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    auto values = p.mutable_data();
    std::size_t stride = 1;
    if (max_coords_per_param > 0 && values.size() > max_coords_per_param) {
      stride = (values.size() + max_coords_per_param - 1) / max_coords_per_param;
    }
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const double orig = values[i];
      values[i] = orig + h;
      const double up = detail::Evaluate(f);
      values[i] = orig - h;
      const double down = detail::Evaluate(f);
      values[i] = orig;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i])));
    }
  }
  return worst;
}

}  // namespace fnt
