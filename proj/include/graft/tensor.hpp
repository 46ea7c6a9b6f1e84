#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "graft/errors.hpp"
#include "graft/rng.hpp"

namespace graft {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i)
    out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

// Counts softmax rows where every key was hidden; such rows are defined as
// all-zero and flagged here so tests and training diagnostics can notice.
inline std::atomic<long>& empty_softmax_row_count() {
  static std::atomic<long> count{0};
  return count;
}

// Autodiff graph construction can be disabled for inference paths.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool previous;
  NoGradGuard() : previous(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = previous; }
};

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major tensor with optional reverse-mode provenance. Copying a
/// Tensor shares the underlying node; every op allocates a fresh buffer.
template <typename T>
class Tensor {
 public:
  using Node = detail::TensorNode<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T value, bool requires_grad = false) {
    auto node = std::make_shared<Node>();
    node->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
      throw data_error("tensor data length does not match shape " + shape_str(shape));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from_data({}, {value}, requires_grad);
  }

  static Tensor randn(Shape shape, Rng& rng, T stddev, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.data()) v = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t dim(int i) const { return node_->shape[i]; }
  std::int64_t numel() const { return node_->numel(); }
  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }

  T item() const {
    if (numel() != 1) throw data_error("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  // 2-d element accessor for tests and glue code.
  T at(std::int64_t i, std::int64_t j) const { return node_->data[i * dim(1) + j]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  std::vector<T>& grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }

  std::shared_ptr<Node> node() const { return node_; }

  // Reverse-mode sweep from a scalar loss: every reachable node is visited
  // exactly once in reverse topological order.
  void backward() {
    if (numel() != 1) throw data_error("backward: loss must be a scalar tensor");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.push_back({node_.get(), 0});
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second)
          stack.push_back({parent, 0});
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    node_->ensure_grad()[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
  }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> parents,
                      std::function<void(TensorNode<T>&)> backward_fn) {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs_grad = false;
  if (grad_mode()) {
    for (const auto& p : parents) needs_grad = needs_grad || p.requires_grad();
  }
  node->requires_grad = needs_grad;
  if (needs_grad) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

}  // namespace detail

// ---- elementwise and structural ops ----------------------------------------

// add with broadcasting of b over a's leading axes (b's shape must equal a's
// shape or a suffix of it).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size())
    throw data_error("add: shape " + shape_str(sb) + " does not broadcast to " + shape_str(sa));
  for (std::size_t i = 0; i < sb.size(); ++i) {
    if (sb[sb.size() - 1 - i] != sa[sa.size() - 1 - i])
      throw data_error("add: shape " + shape_str(sb) + " does not broadcast to " +
                       shape_str(sa));
  }
  const std::int64_t bn = std::max<std::int64_t>(b.numel(), 1);
  std::vector<T> out(a.data());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] += b.data()[i % bn];

  auto an = a.node(), bnode = b.node();
  return detail::make_result<T>(
      sa, std::move(out), {a, b}, [an, bnode, bn](detail::TensorNode<T>& self) {
        if (an->requires_grad) {
          auto& g = an->ensure_grad();
          for (std::int64_t i = 0; i < self.numel(); ++i) g[i] += self.grad[i];
        }
        if (bnode->requires_grad) {
          auto& g = bnode->ensure_grad();
          for (std::int64_t i = 0; i < self.numel(); ++i) g[i % bn] += self.grad[i];
        }
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw data_error("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " differ");
  std::vector<T> out(a.data());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] *= b.data()[i];
  auto an = a.node(), bnode = b.node();
  return detail::make_result<T>(
      a.shape(), std::move(out), {a, b}, [an, bnode](detail::TensorNode<T>& self) {
        if (an->requires_grad) {
          auto& g = an->ensure_grad();
          for (std::int64_t i = 0; i < self.numel(); ++i) g[i] += self.grad[i] * bnode->data[i];
        }
        if (bnode->requires_grad) {
          auto& g = bnode->ensure_grad();
          for (std::int64_t i = 0; i < self.numel(); ++i) g[i] += self.grad[i] * an->data[i];
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data());
  for (auto& v : out) v *= factor;
  auto an = a.node();
  return detail::make_result<T>(
      a.shape(), std::move(out), {a}, [an, factor](detail::TensorNode<T>& self) {
        auto& g = an->ensure_grad();
        for (std::int64_t i = 0; i < self.numel(); ++i) g[i] += self.grad[i] * factor;
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  auto an = a.node();
  return detail::make_result<T>({}, {total}, {a}, [an](detail::TensorNode<T>& self) {
    auto& g = an->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw data_error("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n), T(0));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      const T* brow = pb + p * n;
      T* orow = out.data() + i * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  auto an = a.node(), bnode = b.node();
  return detail::make_result<T>(
      {m, n}, std::move(out), {a, b}, [an, bnode, m, k, n](detail::TensorNode<T>& self) {
        if (an->requires_grad) {
          auto& ga = an->ensure_grad();
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) {
              const T gv = self.grad[i * n + j];
              for (std::int64_t p = 0; p < k; ++p) ga[i * k + p] += gv * bnode->data[p * n + j];
            }
        }
        if (bnode->requires_grad) {
          auto& gb = bnode->ensure_grad();
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t p = 0; p < k; ++p) {
              const T av = an->data[i * k + p];
              for (std::int64_t j = 0; j < n; ++j) gb[p * n + j] += av * self.grad[i * n + j];
            }
        }
      });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw data_error("transpose: rank-2 tensor required");
  const std::int64_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  auto an = a.node();
  return detail::make_result<T>(
      {n, m}, std::move(out), {a}, [an, m, n](detail::TensorNode<T>& self) {
        auto& g = an->ensure_grad();
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
      });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::int64_t start, std::int64_t len) {
  if (a.rank() != 2 || start < 0 || start + len > a.dim(1))
    throw data_error("slice_cols: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of " + shape_str(a.shape()));
  const std::int64_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * len));
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < len; ++j) out[i * len + j] = a.data()[i * n + start + j];
  auto an = a.node();
  return detail::make_result<T>(
      {m, len}, std::move(out), {a}, [an, m, n, start, len](detail::TensorNode<T>& self) {
        auto& g = an->ensure_grad();
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < len; ++j)
            g[i * n + start + j] += self.grad[i * len + j];
      });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw data_error("concat_cols: no inputs");
  const std::int64_t m = parts[0].dim(0);
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != m) throw data_error("concat_cols: row counts differ");
    total += p.dim(1);
  }
  std::vector<T> out(static_cast<std::size_t>(m * total));
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t w = p.dim(1);
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < w; ++j) out[i * total + offset + j] = p.data()[i * w + j];
    offset += w;
  }
  std::vector<std::shared_ptr<detail::TensorNode<T>>> nodes;
  std::vector<std::int64_t> widths;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.dim(1));
  }
  return detail::make_result<T>(
      {m, total}, std::move(out), parts,
      [nodes, widths, m, total](detail::TensorNode<T>& self) {
        std::int64_t offset = 0;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          const std::int64_t w = widths[k];
          if (nodes[k]->requires_grad) {
            auto& g = nodes[k]->ensure_grad();
            for (std::int64_t i = 0; i < m; ++i)
              for (std::int64_t j = 0; j < w; ++j)
                g[i * w + j] += self.grad[i * total + offset + j];
          }
          offset += w;
        }
      });
}

// ---- lookup ops -------------------------------------------------------------

template <typename T>
Tensor<T> embedding_gather(const Tensor<T>& table, std::span<const int> indices) {
  if (table.rank() != 2) throw data_error("embedding_gather: table must be rank-2");
  const std::int64_t rows = table.dim(0), d = table.dim(1);
  for (int idx : indices)
    if (idx < 0 || idx >= rows)
      throw data_error("embedding_gather: id " + std::to_string(idx) + " out of range [0," +
                       std::to_string(rows) + ")");
  const std::int64_t n = static_cast<std::int64_t>(indices.size());
  std::vector<T> out(static_cast<std::size_t>(n * d));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j) out[i * d + j] = table.data()[indices[i] * d + j];
  auto tn = table.node();
  std::vector<int> idx_copy(indices.begin(), indices.end());
  return detail::make_result<T>(
      {n, d}, std::move(out), {table},
      [tn, idx_copy = std::move(idx_copy), d](detail::TensorNode<T>& self) {
        auto& g = tn->ensure_grad();
        for (std::size_t i = 0; i < idx_copy.size(); ++i)
          for (std::int64_t j = 0; j < d; ++j)
            g[static_cast<std::int64_t>(idx_copy[i]) * d + j] += self.grad[i * d + j];
      });
}

// out(i, j) = m(i, idx(i, j)); idx has shape (rows(m), cols) flattened.
// This is the selection step of the segment-wise and position-wise scores.
template <typename T>
Tensor<T> gather_pairs(const Tensor<T>& m, const std::vector<int>& idx, std::int64_t cols) {
  if (m.rank() != 2) throw data_error("gather_pairs: rank-2 tensor required");
  const std::int64_t rows = m.dim(0), r = m.dim(1);
  if (static_cast<std::int64_t>(idx.size()) != rows * cols)
    throw data_error("gather_pairs: index table size mismatch");
  for (int v : idx)
    if (v < 0 || v >= r)
      throw data_error("gather_pairs: index " + std::to_string(v) +
                       " outside table range [0," + std::to_string(r) + ")");
  std::vector<T> out(static_cast<std::size_t>(rows * cols));
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j)
      out[i * cols + j] = m.data()[i * r + idx[i * cols + j]];
  auto mn = m.node();
  return detail::make_result<T>(
      {rows, cols}, std::move(out), {m},
      [mn, idx, rows, cols, r](detail::TensorNode<T>& self) {
        auto& g = mn->ensure_grad();
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < cols; ++j)
            g[i * r + idx[i * cols + j]] += self.grad[i * cols + j];
      });
}

// ---- nonlinearities and reductions ------------------------------------------

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  const T inv_sqrt2pi = static_cast<T>(1.0 / std::sqrt(2.0 * std::numbers::pi));
  std::vector<T> out(x.data());
  for (auto& v : out) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  auto xn = x.node();
  return detail::make_result<T>(
      x.shape(), std::move(out), {x},
      [xn, inv_sqrt2, inv_sqrt2pi](detail::TensorNode<T>& self) {
        auto& g = xn->ensure_grad();
        for (std::int64_t i = 0; i < self.numel(); ++i) {
          const T v = xn->data[i];
          const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
          const T pdf = std::exp(T(-0.5) * v * v) * inv_sqrt2pi;
          g[i] += self.grad[i] * (cdf + v * pdf);
        }
      });
}

// Masked softmax over the last axis via the additive -1e9 surrogate. Rows
// whose keys are all hidden come out all-zero and bump the warning counter.
template <typename T>
Tensor<T> softmax_masked(const Tensor<T>& logits, const std::vector<std::uint8_t>& visible) {
  if (logits.rank() != 2) throw data_error("softmax_masked: rank-2 tensor required");
  const std::int64_t rows = logits.dim(0), cols = logits.dim(1);
  if (static_cast<std::int64_t>(visible.size()) != rows * cols)
    throw data_error("softmax_masked: mask size does not match logits " +
                     shape_str(logits.shape()));
  constexpr T kMaskOffset = T(-1e9);
  std::vector<T> out(static_cast<std::size_t>(rows * cols), T(0));
  long empty_rows = 0;
  for (std::int64_t i = 0; i < rows; ++i) {
    bool any_visible = false;
    T row_max = kMaskOffset;
    for (std::int64_t j = 0; j < cols; ++j) {
      const T adj = logits.data()[i * cols + j] + (visible[i * cols + j] ? T(0) : kMaskOffset);
      any_visible = any_visible || visible[i * cols + j];
      row_max = std::max(row_max, adj);
    }
    if (!any_visible) {
      ++empty_rows;
      continue;  // defined as an all-zero row
    }
    T denom = T(0);
    for (std::int64_t j = 0; j < cols; ++j) {
      const T adj = logits.data()[i * cols + j] + (visible[i * cols + j] ? T(0) : kMaskOffset);
      const T e = std::exp(adj - row_max);  // hidden keys underflow to exactly 0
      out[i * cols + j] = e;
      denom += e;
    }
    for (std::int64_t j = 0; j < cols; ++j) out[i * cols + j] /= denom;
  }
  if (empty_rows > 0) {
    empty_softmax_row_count() += empty_rows;
    std::fprintf(stderr, "[graft] warning: softmax_masked saw %ld row(s) with no visible keys\n",
                 empty_rows);
  }
  auto ln = logits.node();
  return detail::make_result<T>(
      logits.shape(), std::move(out), {logits},
      [ln, rows, cols](detail::TensorNode<T>& self) {
        auto& g = ln->ensure_grad();
        for (std::int64_t i = 0; i < rows; ++i) {
          T dot = T(0);
          for (std::int64_t j = 0; j < cols; ++j)
            dot += self.grad[i * cols + j] * self.data[i * cols + j];
          for (std::int64_t j = 0; j < cols; ++j)
            g[i * cols + j] += self.data[i * cols + j] * (self.grad[i * cols + j] - dot);
        }
      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = static_cast<T>(1e-5)) {
  if (x.rank() != 2 || gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != x.dim(1) ||
      beta.dim(0) != x.dim(1))
    throw data_error("layer_norm: shape mismatch");
  const std::int64_t n = x.dim(0), d = x.dim(1);
  std::vector<T> out(static_cast<std::size_t>(n * d));
  std::vector<T> inv_std(n), xhat(static_cast<std::size_t>(n * d));
  for (std::int64_t i = 0; i < n; ++i) {
    T mean = T(0);
    for (std::int64_t j = 0; j < d; ++j) mean += x.data()[i * d + j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (std::int64_t j = 0; j < d; ++j) {
      const T c = x.data()[i * d + j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T istd = T(1) / std::sqrt(var + eps);
    inv_std[i] = istd;
    for (std::int64_t j = 0; j < d; ++j) {
      const T h = (x.data()[i * d + j] - mean) * istd;
      xhat[i * d + j] = h;
      out[i * d + j] = gamma.data()[j] * h + beta.data()[j];
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return detail::make_result<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, n, d, inv_std = std::move(inv_std),
       xhat = std::move(xhat)](detail::TensorNode<T>& self) {
        for (std::int64_t i = 0; i < n; ++i) {
          // dxhat, then the two mean corrections from mu and sigma.
          T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
          for (std::int64_t j = 0; j < d; ++j) {
            const T dx = self.grad[i * d + j] * gn->data[j];
            sum_dxhat += dx;
            sum_dxhat_xhat += dx * xhat[i * d + j];
          }
          if (xn->requires_grad) {
            auto& gx = xn->ensure_grad();
            for (std::int64_t j = 0; j < d; ++j) {
              const T dx = self.grad[i * d + j] * gn->data[j];
              gx[i * d + j] += inv_std[i] * (dx - (sum_dxhat + xhat[i * d + j] * sum_dxhat_xhat) /
                                                      static_cast<T>(d));
            }
          }
          if (gn->requires_grad) {
            auto& gg = gn->ensure_grad();
            for (std::int64_t j = 0; j < d; ++j)
              gg[j] += self.grad[i * d + j] * xhat[i * d + j];
          }
          if (bn->requires_grad) {
            auto& gb = bn->ensure_grad();
            for (std::int64_t j = 0; j < d; ++j) gb[j] += self.grad[i * d + j];
          }
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool train, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw config_error("dropout: rate must be in [0, 1)");
  if (!train || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.data().size());
  for (auto& m : mask) m = rng.uniform() >= rate ? keep_scale : T(0);
  std::vector<T> out(x.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  auto xn = x.node();
  return detail::make_result<T>(
      x.shape(), std::move(out), {x}, [xn, mask = std::move(mask)](detail::TensorNode<T>& self) {
        auto& g = xn->ensure_grad();
        for (std::int64_t i = 0; i < self.numel(); ++i) g[i] += self.grad[i] * mask[i];
      });
}

// Mean negative log-likelihood over rows of (n, vocab) logits.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
  if (logits.rank() != 2) throw data_error("cross_entropy: rank-2 logits required");
  const std::int64_t n = logits.dim(0), v = logits.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != n)
    throw data_error("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " rows");
  for (int t : targets)
    if (t < 0 || t >= v)
      throw data_error("cross_entropy: target id " + std::to_string(t) + " out of range");
  std::vector<T> log_probs(static_cast<std::size_t>(n * v));
  T total = T(0);
  for (std::int64_t i = 0; i < n; ++i) {
    T row_max = logits.data()[i * v];
    for (std::int64_t j = 1; j < v; ++j) row_max = std::max(row_max, logits.data()[i * v + j]);
    T denom = T(0);
    for (std::int64_t j = 0; j < v; ++j) denom += std::exp(logits.data()[i * v + j] - row_max);
    const T lse = row_max + std::log(denom);
    for (std::int64_t j = 0; j < v; ++j) log_probs[i * v + j] = logits.data()[i * v + j] - lse;
    total -= log_probs[i * v + targets[i]];
  }
  total /= static_cast<T>(n);
  auto ln = logits.node();
  std::vector<int> tgt(targets.begin(), targets.end());
  return detail::make_result<T>(
      {}, {total}, {logits},
      [ln, n, v, tgt = std::move(tgt),
       log_probs = std::move(log_probs)](detail::TensorNode<T>& self) {
        auto& g = ln->ensure_grad();
        const T scale = self.grad[0] / static_cast<T>(n);
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < v; ++j) {
            T p = std::exp(log_probs[i * v + j]);
            g[i * v + j] += scale * (p - (tgt[i] == j ? T(1) : T(0)));
          }
      });
}

}  // namespace graft
