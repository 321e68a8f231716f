#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace fnt {

using Shape = std::vector<std::size_t>;

inline std::size_t NumElements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string ShapeString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline bool& GradEnabledFlag() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  void EnsureGrad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

}  // namespace detail

// While alive, operations on the current thread build no autograd graph.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::GradEnabledFlag()) { detail::GradEnabledFlag() = false; }
  ~NoGradGuard() { detail::GradEnabledFlag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool GradEnabled() { return detail::GradEnabledFlag(); }

// Dense row-major array with optional reverse-mode gradient. Copies share the
// underlying node; values are not mutated once an op has consumed them.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;

  Tensor() : node_(std::make_shared<NodeT>()) { node_->shape = {0}; }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<NodeT>()) {
    if (NumElements(shape) != data.size()) {
      throw DimensionError("Tensor: data length " + std::to_string(data.size()) +
                           " does not match shape " + ShapeString(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor Zeros(Shape shape, bool requires_grad = false) {
    const auto n = NumElements(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor Full(Shape shape, T value) {
    const auto n = NumElements(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }

  static Tensor Scalar(T value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  static Tensor Matrix(std::size_t rows, std::size_t cols, std::vector<T> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

  // 2-D view: leading dims folded into rows. A rank-1 tensor is a single row.
  std::size_t rows() const { return rank() <= 1 ? 1 : size() / node_->shape.back(); }
  std::size_t cols() const { return rank() == 0 ? 1 : node_->shape.back(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + ShapeString(shape()));
    return node_->data[0];
  }
  T operator[](std::size_t i) const { return node_->data[i]; }
  T at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->EnsureGrad();
    return node_->grad;
  }
  void ZeroGrad() { node_->grad.assign(node_->data.size(), T(0)); }

  // New leaf holding a copy of the values; no gradient flows through it.
  Tensor Detach() const { return Tensor(shape(), node_->data, false); }

  Tensor Reshape(Shape shape) const;

  // Seeds d(this)/d(this) = 1 and accumulates gradients into every reachable
  // node that requires them.
  void Backward() const;

  const std::shared_ptr<NodeT>& node() const { return node_; }

  // Builds the result of an op. The backward closure is attached only when
  // some input requires a gradient and grad mode is on.
  static Tensor FromOp(Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                       std::function<void(NodeT&)> backward) {
    Tensor out(std::move(shape), std::move(data));
    if (!GradEnabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    for (auto& in : inputs) out.node_->parents.push_back(in.node_);
    out.node_->backward = std::move(backward);
    return out;
  }

 private:
  std::shared_ptr<NodeT> node_;
};

template <typename T>
Tensor<T> Tensor<T>::Reshape(Shape new_shape) const {
  if (NumElements(new_shape) != size()) {
    throw DimensionError("Reshape " + ShapeString(shape()) + " -> " + ShapeString(new_shape));
  }
  auto in = node_;
  return FromOp(std::move(new_shape), node_->data, {*this}, [in](NodeT& self) {
    in->EnsureGrad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) in->grad[i] += self.grad[i];
  });
}

template <typename T>
void Tensor<T>::Backward() const {
  // Iterative post-order DFS gives a topological order.
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      NodeT* p = n->parents[idx++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->EnsureGrad();
  for (auto& g : node_->grad) g += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

}  // namespace fnt
