#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "fnt/numerics/tensor.hpp"

namespace fnt {

// All matrix ops view tensors as 2-D (rows x cols, leading dims folded).

namespace detail {

template <typename T>
void RequireSameSize(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + ShapeString(a.shape()) + " vs " +
                         ShapeString(b.shape()));
  }
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> Unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  std::vector<T> out(x.size());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xs[i]);
  auto in = x.node();
  return Tensor<T>::FromOp(x.shape(), std::move(out), {x}, [in, deriv](Node<T>& self) {
    in->EnsureGrad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      in->grad[i] += self.grad[i] * deriv(in->data[i], self.data[i]);
    }
  });
}

}  // namespace detail

template <typename T>
Tensor<T> Matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("Matmul: inner dimensions disagree, " + ShapeString(a.shape()) + " x " +
                         ShapeString(b.shape()));
  }
  std::vector<T> out(m * n, T(0));
  auto A = a.data(), B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      if (av == T(0)) continue;
      const T* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  auto na = a.node(), nb = b.node();
  return Tensor<T>::FromOp({m, n}, std::move(out), {a, b}, [na, nb, m, k, n](detail::Node<T>& self) {
    const T* G = self.grad.data();
    if (na->requires_grad) {
      na->EnsureGrad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          T s = 0;
          const T* g = G + i * n;
          const T* brow = nb->data.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) s += g[j] * brow[j];
          na->grad[i * k + p] += s;
        }
    }
    if (nb->requires_grad) {
      nb->EnsureGrad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T av = na->data[i * k + p];
          if (av == T(0)) continue;
          T* gb = nb->grad.data() + p * n;
          const T* g = G + i * n;
          for (std::size_t j = 0; j < n; ++j) gb[j] += av * g[j];
        }
    }
  });
}

// a [m x k] times transpose(b) where b is [n x k].
template <typename T>
Tensor<T> MatmulNT(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("MatmulNT: inner dimensions disagree, " + ShapeString(a.shape()) +
                         " x " + ShapeString(b.shape()) + "^T");
  }
  std::vector<T> out(m * n);
  auto A = a.data(), B = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[j * k + p];
      out[i * n + j] = s;
    }
  auto na = a.node(), nb = b.node();
  return Tensor<T>::FromOp({m, n}, std::move(out), {a, b}, [na, nb, m, k, n](detail::Node<T>& self) {
    const T* G = self.grad.data();
    if (na->requires_grad) {
      na->EnsureGrad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const T g = G[i * n + j];
          if (g == T(0)) continue;
          for (std::size_t p = 0; p < k; ++p) na->grad[i * k + p] += g * nb->data[j * k + p];
        }
    }
    if (nb->requires_grad) {
      nb->EnsureGrad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const T g = G[i * n + j];
          if (g == T(0)) continue;
          for (std::size_t p = 0; p < k; ++p) nb->grad[j * k + p] += g * na->data[i * k + p];
        }
    }
  });
}

template <typename T>
Tensor<T> Transpose(const Tensor<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(m * n);
  auto A = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  auto na = a.node();
  return Tensor<T>::FromOp({n, m}, std::move(out), {a}, [na, m, n](detail::Node<T>& self) {
    na->EnsureGrad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) na->grad[i * n + j] += self.grad[j * m + i];
  });
}

template <typename T>
Tensor<T> Add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::RequireSameSize(a, b, "Add");
  std::vector<T> out(a.size());
  auto A = a.data(), B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
  auto na = a.node(), nb = b.node();
  return Tensor<T>::FromOp(a.shape(), std::move(out), {a, b}, [na, nb](detail::Node<T>& self) {
    for (auto* p : {na.get(), nb.get()}) {
      if (!p->requires_grad) continue;
      p->EnsureGrad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> Sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::RequireSameSize(a, b, "Sub");
  std::vector<T> out(a.size());
  auto A = a.data(), B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i];
  auto na = a.node(), nb = b.node();
  return Tensor<T>::FromOp(a.shape(), std::move(out), {a, b}, [na, nb](detail::Node<T>& self) {
    if (na->requires_grad) {
      na->EnsureGrad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) na->grad[i] += self.grad[i];
    }
    if (nb->requires_grad) {
      nb->EnsureGrad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) nb->grad[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> Mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::RequireSameSize(a, b, "Mul");
  std::vector<T> out(a.size());
  auto A = a.data(), B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  auto na = a.node(), nb = b.node();
  return Tensor<T>::FromOp(a.shape(), std::move(out), {a, b}, [na, nb](detail::Node<T>& self) {
    if (na->requires_grad) {
      na->EnsureGrad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) na->grad[i] += self.grad[i] * nb->data[i];
    }
    if (nb->requires_grad) {
      nb->EnsureGrad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) nb->grad[i] += self.grad[i] * na->data[i];
    }
  });
}

// a [m x n] + row [n], broadcast over rows.
template <typename T>
Tensor<T> AddRow(const Tensor<T>& a, const Tensor<T>& row) {
  const std::size_t m = a.rows(), n = a.cols();
  if (row.size() != n) {
    throw DimensionError("AddRow: row " + ShapeString(row.shape()) + " does not broadcast over " +
                         ShapeString(a.shape()));
  }
  std::vector<T> out(a.size());
  auto A = a.data(), R = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A[i * n + j] + R[j];
  auto na = a.node(), nr = row.node();
  return Tensor<T>::FromOp(a.shape(), std::move(out), {a, row}, [na, nr, m, n](detail::Node<T>& self) {
    if (na->requires_grad) {
      na->EnsureGrad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) na->grad[i] += self.grad[i];
    }
    if (nr->requires_grad) {
      nr->EnsureGrad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) nr->grad[j] += self.grad[i * n + j];
    }
  });
}

// a [m x n] * row [n], broadcast over rows.
template <typename T>
Tensor<T> MulRow(const Tensor<T>& a, const Tensor<T>& row) {
  const std::size_t m = a.rows(), n = a.cols();
  if (row.size() != n) {
    throw DimensionError("MulRow: row " + ShapeString(row.shape()) + " does not broadcast over " +
                         ShapeString(a.shape()));
  }
  std::vector<T> out(a.size());
  auto A = a.data(), R = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A[i * n + j] * R[j];
  auto na = a.node(), nr = row.node();
  return Tensor<T>::FromOp(a.shape(), std::move(out), {a, row}, [na, nr, m, n](detail::Node<T>& self) {
    if (na->requires_grad) {
      na->EnsureGrad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) na->grad[i * n + j] += self.grad[i * n + j] * nr->data[j];
    }
    if (nr->requires_grad) {
      nr->EnsureGrad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) nr->grad[j] += self.grad[i * n + j] * na->data[i * n + j];
    }
  });
}

template <typename T>
Tensor<T> Scale(const Tensor<T>& a, T s) {
  return detail::Unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

// a * s where s is a trainable single-element tensor.
template <typename T>
Tensor<T> MulScalar(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.size() != 1) throw DimensionError("MulScalar: scalar has shape " + ShapeString(s.shape()));
  const T sv = s[0];
  std::vector<T> out(a.size());
  auto A = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * sv;
  auto na = a.node(), ns = s.node();
  return Tensor<T>::FromOp(a.shape(), std::move(out), {a, s}, [na, ns](detail::Node<T>& self) {
    if (na->requires_grad) {
      na->EnsureGrad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) na->grad[i] += self.grad[i] * ns->data[0];
    }
    if (ns->requires_grad) {
      ns->EnsureGrad();
      T acc = 0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * na->data[i];
      ns->grad[0] += acc;
    }
  });
}

template <typename T>
Tensor<T> Tanh(const Tensor<T>& x) {
  return detail::Unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> Sigmoid(const Tensor<T>& x) {
  return detail::Unary(
      x, [](T v) { return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> Relu(const Tensor<T>& x) {
  return detail::Unary(x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <typename T>
Tensor<T> Exp(const Tensor<T>& x) {
  return detail::Unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> Log(const Tensor<T>& x) {
  return detail::Unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> Square(const Tensor<T>& x) {
  return detail::Unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

// The derivative at 0 is taken as 0 so a zero spread has a finite gradient.
template <typename T>
Tensor<T> Sqrt(const Tensor<T>& x) {
  return detail::Unary(
      x, [](T v) { return std::sqrt(v > 0 ? v : T(0)); },
      [](T, T y) { return y > 0 ? T(0.5) / y : T(0); });
}

template <typename T>
Tensor<T> Silu(const Tensor<T>& x) {
  return Mul(x, Sigmoid(x));
}

template <typename T>
Tensor<T> LogSoftmaxRows(const Tensor<T>& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<T> out(x.size());
  auto X = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* xr = X.data() + i * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xr[j]);
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(xr[j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xr[j] - lse;
  }
  auto nx = x.node();
  return Tensor<T>::FromOp(x.shape(), std::move(out), {x}, [nx, m, n](detail::Node<T>& self) {
    nx->EnsureGrad();
    for (std::size_t i = 0; i < m; ++i) {
      const T* g = self.grad.data() + i * n;
      const T* y = self.data.data() + i * n;
      T gs = 0;
      for (std::size_t j = 0; j < n; ++j) gs += g[j];
      for (std::size_t j = 0; j < n; ++j) nx->grad[i * n + j] += g[j] - std::exp(y[j]) * gs;
    }
  });
}

template <typename T>
Tensor<T> SoftmaxRows(const Tensor<T>& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<T> out(x.size());
  auto X = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* xr = X.data() + i * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xr[j]);
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) s += (out[i * n + j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= s;
  }
  auto nx = x.node();
  return Tensor<T>::FromOp(x.shape(), std::move(out), {x}, [nx, m, n](detail::Node<T>& self) {
    nx->EnsureGrad();
    for (std::size_t i = 0; i < m; ++i) {
      const T* g = self.grad.data() + i * n;
      const T* y = self.data.data() + i * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) nx->grad[i * n + j] += y[j] * (g[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> LayerNormRows(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.size() != n || bias.size() != n) {
    throw DimensionError("LayerNormRows: gain/bias " + ShapeString(gain.shape()) + " vs input " +
                         ShapeString(x.shape()));
  }
  std::vector<T> out(x.size()), xhat(x.size()), inv_std(m);
  auto X = x.data(), G = gain.data(), B = bias.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* xr = X.data() + i * n;
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= T(n);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (xr[j] - mean) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * G[j] + B[j];
    }
  }
  auto nx = x.node(), ng = gain.node(), nb = bias.node();
  return Tensor<T>::FromOp(
      x.shape(), std::move(out), {x, gain, bias},
      [nx, ng, nb, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
        if (ng->requires_grad) ng->EnsureGrad();
        if (nb->requires_grad) nb->EnsureGrad();
        if (nx->requires_grad) nx->EnsureGrad();
        for (std::size_t i = 0; i < m; ++i) {
          const T* g = self.grad.data() + i * n;
          const T* xh = xhat.data() + i * n;
          T sum_gx = 0, sum_gxx = 0;
          for (std::size_t j = 0; j < n; ++j) {
            if (ng->requires_grad) ng->grad[j] += g[j] * xh[j];
            if (nb->requires_grad) nb->grad[j] += g[j];
            const T gx = g[j] * ng->data[j];
            sum_gx += gx;
            sum_gxx += gx * xh[j];
          }
          if (!nx->requires_grad) continue;
          for (std::size_t j = 0; j < n; ++j) {
            const T gx = g[j] * ng->data[j];
            nx->grad[i * n + j] += inv_std[i] * (gx - sum_gx / T(n) - xh[j] * sum_gxx / T(n));
          }
        }
      });
}

template <typename T>
Tensor<T> ConcatRows(const std::vector<Tensor<T>>& parts) {
  std::size_t n = 0, m = 0;
  for (const auto& p : parts) {
    if (p.size() == 0) continue;
    if (n == 0) n = p.cols();
    if (p.cols() != n) {
      throw DimensionError("ConcatRows: column mismatch " + ShapeString(p.shape()) + " vs width " +
                           std::to_string(n));
    }
    m += p.rows();
  }
  std::vector<T> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<std::shared_ptr<detail::Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return Tensor<T>::FromOp({m, n}, std::move(out), parts, [nodes](detail::Node<T>& self) {
    std::size_t off = 0;
    for (const auto& p : nodes) {
      if (p->requires_grad) {
        p->EnsureGrad();
        for (std::size_t i = 0; i < p->data.size(); ++i) p->grad[i] += self.grad[off + i];
      }
      off += p->data.size();
    }
  });
}

template <typename T>
Tensor<T> ConcatCols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("ConcatCols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      throw DimensionError("ConcatCols: row mismatch " + ShapeString(p.shape()) + " vs " +
                           ShapeString(parts.front().shape()));
    }
    widths.push_back(p.cols());
    n += p.cols();
  }
  std::vector<T> out(m * n);
  std::size_t c0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto P = parts[k].data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * n + c0 + j] = P[i * widths[k] + j];
    c0 += widths[k];
  }
  std::vector<std::shared_ptr<detail::Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return Tensor<T>::FromOp({m, n}, std::move(out), parts, [nodes, widths, m, n](detail::Node<T>& self) {
    std::size_t c = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      auto& p = nodes[k];
      if (p->requires_grad) {
        p->EnsureGrad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) p->grad[i * widths[k] + j] += self.grad[i * n + c + j];
      }
      c += widths[k];
    }
  });
}

// Rows [r0, r1).
template <typename T>
Tensor<T> SliceRows(const Tensor<T>& a, std::size_t r0, std::size_t r1) {
  const std::size_t n = a.cols();
  if (r0 > r1 || r1 > a.rows()) {
    throw DimensionError("SliceRows: [" + std::to_string(r0) + ", " + std::to_string(r1) +
                         ") out of range for " + ShapeString(a.shape()));
  }
  std::vector<T> out(a.data().begin() + r0 * n, a.data().begin() + r1 * n);
  auto na = a.node();
  return Tensor<T>::FromOp({r1 - r0, n}, std::move(out), {a}, [na, r0, n](detail::Node<T>& self) {
    na->EnsureGrad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) na->grad[r0 * n + i] += self.grad[i];
  });
}

// Columns [c0, c1).
template <typename T>
Tensor<T> SliceCols(const Tensor<T>& a, std::size_t c0, std::size_t c1) {
  const std::size_t m = a.rows(), n = a.cols(), w = c1 - c0;
  if (c0 > c1 || c1 > n) {
    throw DimensionError("SliceCols: [" + std::to_string(c0) + ", " + std::to_string(c1) +
                         ") out of range for " + ShapeString(a.shape()));
  }
  std::vector<T> out(m * w);
  auto A = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = A[i * n + c0 + j];
  auto na = a.node();
  return Tensor<T>::FromOp({m, w}, std::move(out), {a}, [na, m, n, w, c0](detail::Node<T>& self) {
    na->EnsureGrad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) na->grad[i * n + c0 + j] += self.grad[i * w + j];
  });
}

template <typename T>
Tensor<T> Sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  auto na = a.node();
  return Tensor<T>::FromOp({1}, {s}, {a}, [na](detail::Node<T>& self) {
    na->EnsureGrad();
    for (auto& g : na->grad) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> Mean(const Tensor<T>& a) {
  if (a.size() == 0) throw DimensionError("Mean of empty tensor");
  return Scale(Sum(a), T(1) / T(a.size()));
}

// Column means, [1 x n].
template <typename T>
Tensor<T> MeanRows(const Tensor<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  if (m == 0) throw DimensionError("MeanRows of empty tensor");
  std::vector<T> out(n, T(0));
  auto A = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += A[i * n + j];
  for (auto& v : out) v /= T(m);
  auto na = a.node();
  return Tensor<T>::FromOp({1, n}, std::move(out), {a}, [na, m, n](detail::Node<T>& self) {
    na->EnsureGrad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) na->grad[i * n + j] += self.grad[j] / T(m);
  });
}

// Population standard deviation of each column, [1 x n].
template <typename T>
Tensor<T> StdRows(const Tensor<T>& a) {
  const std::size_t m = a.rows();
  auto mean = MeanRows(a);
  std::vector<T> ones(m, T(1));
  auto centered = Sub(a, Matmul(Tensor<T>({m, 1}, std::move(ones)), mean));
  return Sqrt(MeanRows(Square(centered)));
}

// Embedding lookup: rows of table selected by ids.
template <typename T>
Tensor<T> GatherRows(const Tensor<T>& table, const std::vector<std::size_t>& ids) {
  const std::size_t n = table.cols(), vocab = table.rows();
  std::vector<T> out(ids.size() * n);
  auto Tb = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw DimensionError("GatherRows: id " + std::to_string(ids[i]) + " outside table " +
                           ShapeString(table.shape()));
    }
    std::copy_n(Tb.data() + ids[i] * n, n, out.data() + i * n);
  }
  auto nt = table.node();
  return Tensor<T>::FromOp({ids.size(), n}, std::move(out), {table}, [nt, ids, n](detail::Node<T>& self) {
    nt->EnsureGrad();
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) nt->grad[ids[i] * n + j] += self.grad[i * n + j];
  });
}

// Row (t * M + m) of the result is a[t] + b[m]; a is [T x n], b is [M x n].
template <typename T>
Tensor<T> GridAdd(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t ta = a.rows(), mb = b.rows(), n = a.cols();
  if (b.cols() != n) {
    throw DimensionError("GridAdd: width mismatch " + ShapeString(a.shape()) + " vs " + ShapeString(b.shape()));
  }
  std::vector<T> out(ta * mb * n);
  auto A = a.data(), B = b.data();
  for (std::size_t t = 0; t < ta; ++t)
    for (std::size_t m = 0; m < mb; ++m)
      for (std::size_t j = 0; j < n; ++j) out[(t * mb + m) * n + j] = A[t * n + j] + B[m * n + j];
  auto na = a.node(), nb = b.node();
  return Tensor<T>::FromOp({ta * mb, n}, std::move(out), {a, b}, [na, nb, ta, mb, n](detail::Node<T>& self) {
    if (na->requires_grad) na->EnsureGrad();
    if (nb->requires_grad) nb->EnsureGrad();
    for (std::size_t t = 0; t < ta; ++t)
      for (std::size_t m = 0; m < mb; ++m)
        for (std::size_t j = 0; j < n; ++j) {
          const T g = self.grad[(t * mb + m) * n + j];
          if (na->requires_grad) na->grad[t * n + j] += g;
          if (nb->requires_grad) nb->grad[m * n + j] += g;
        }
  });
}

// Selected flat elements, as a rank-1 tensor.
template <typename T>
Tensor<T> Pick(const Tensor<T>& a, const std::vector<std::size_t>& flat_indices) {
  const std::size_t n = flat_indices.size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (flat_indices[i] >= a.size()) throw DimensionError("Pick: index out of range");
    out[i] = a[flat_indices[i]];
  }
  auto na = a.node();
  return Tensor<T>::FromOp({n}, std::move(out), {a}, [na, flat_indices](detail::Node<T>& self) {
    na->EnsureGrad();
    for (std::size_t i = 0; i < flat_indices.size(); ++i) na->grad[flat_indices[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> StopGradient(const Tensor<T>& a) {
  return a.Detach();
}

}  // namespace fnt
