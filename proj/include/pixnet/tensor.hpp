#pragma once

// Reverse-mode autodiff core. A Tensor<S> is a cheap handle onto a shared
// graph node holding an n-d row-major value buffer; ops are free functions
// that compute eagerly and attach a backward closure. Gradients accumulate
// across backward() calls until zero_grad().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "pixnet/common.hpp"

namespace pixnet {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int e : shape) n *= static_cast<std::size_t>(e);
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

template <typename S>
class Tensor;

template <typename S>
struct BackwardCtx;

template <typename S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // persistent; allocated lazily, accumulated across passes
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<S>>> parents;
  // (self, adjoint of self for this pass, pass accumulator)
  std::function<void(const TensorNode<S>&, const std::vector<S>&, BackwardCtx<S>&)> backward;
};

// Pass-local adjoint buffers. Keeping propagation separate from the
// persistent .grad makes repeated backward calls over shared subgraphs
// accumulate correctly.
template <typename S>
struct BackwardCtx {
  std::unordered_map<const TensorNode<S>*, std::vector<S>> adjoint;

  std::vector<S>& at(const std::shared_ptr<TensorNode<S>>& node) {
    auto& buf = adjoint[node.get()];
    if (buf.empty()) buf.assign(node->value.size(), S(0));
    return buf;
  }
};

template <typename S>
class Tensor {
 public:
  using Node = TensorNode<S>;

  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), S(0)); }

  static Tensor filled(Shape shape, S v) {
    check_shape(shape);
    auto node = std::make_shared<Node>();
    node->value.assign(numel(shape), v);
    node->shape = std::move(shape);
    return Tensor(std::move(node));
  }

  static Tensor from(Shape shape, std::vector<S> data) {
    check_shape(shape);
    if (numel(shape) != data.size())
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    return Tensor(std::move(node));
  }

  static Tensor scalar(S v) { return from({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  int extent(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }

  std::vector<S>& value() { return node_->value; }
  const std::vector<S>& value() const { return node_->value; }
  std::vector<S>& grad() { return node_->grad; }
  const std::vector<S>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }

  S item() const {
    if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  // row-major element accessors, test convenience
  S& at(int i) { return node_->value[static_cast<std::size_t>(i)]; }
  S& at(int i, int j) { return node_->value[static_cast<std::size_t>(i) * shape()[1] + j]; }
  S& at(int c, int i, int j) {
    return node_->value[(static_cast<std::size_t>(c) * shape()[1] + i) * shape()[2] + j];
  }
  S at(int i) const { return node_->value[static_cast<std::size_t>(i)]; }
  S at(int i, int j) const { return node_->value[static_cast<std::size_t>(i) * shape()[1] + j]; }
  S at(int c, int i, int j) const {
    return node_->value[(static_cast<std::size_t>(c) * shape()[1] + i) * shape()[2] + j];
  }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  void ensure_grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), S(0));
  }

  // Reverse pass from a scalar root. Seeds 1, propagates pass-local
  // adjoints in reverse topological order, and adds each node's adjoint
  // into its persistent grad.
  void backward() const {
    if (size() != 1) throw DimensionError("backward() requires a scalar root");
    std::vector<Node*> order = topo_order();
    BackwardCtx<S> ctx;
    ctx.adjoint[node_.get()] = {S(1)};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* node = *it;
      auto found = ctx.adjoint.find(node);
      if (found == ctx.adjoint.end()) continue;
      const std::vector<S>& adj = found->second;
      if (node->requires_grad) {
        if (node->grad.empty()) node->grad.assign(node->value.size(), S(0));
        for (std::size_t i = 0; i < adj.size(); ++i) node->grad[i] += adj[i];
      }
      if (node->backward) node->backward(*node, adj, ctx);
    }
  }

  std::shared_ptr<Node> node() const { return node_; }

  // internal: op result constructor
  static Tensor make(Shape shape, std::vector<S> value, std::vector<Tensor> parents,
                     std::function<void(const Node&, const std::vector<S>&, BackwardCtx<S>&)> fn) {
    Tensor out = from(std::move(shape), std::move(value));
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
      out.node_->requires_grad = true;
      out.node_->parents.reserve(parents.size());
      for (auto& p : parents) out.node_->parents.push_back(p.node());
      out.node_->backward = std::move(fn);
    }
    return out;
  }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor rank must be >= 1");
    for (int e : shape)
      if (e <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }

  std::vector<Node*> topo_order() const {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // iterative post-order DFS over parent edges
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* parent = node->parents[next++].get();
        if (seen.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    return order;  // reverse iteration visits every node before its parents
  }

  std::shared_ptr<Node> node_;
};

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

namespace detail {

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename S>
void check_all_finite(const std::vector<S>& v, const char* what) {
  for (S x : v)
    if (!std::isfinite(static_cast<double>(x))) throw NumericError(std::string(what) + " is not finite");
}

}  // namespace detail

// ---- elementwise arithmetic ----

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return Tensor<S>::make(
      a.shape(), std::move(out), {a, b},
      [](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        for (int k = 0; k < 2; ++k) {
          const auto& p = self.parents[static_cast<std::size_t>(k)];
          if (!p->requires_grad) continue;
          auto& acc = ctx.at(p);
          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
        }
      });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return Tensor<S>::make(
      a.shape(), std::move(out), {a, b},
      [](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        if (self.parents[0]->requires_grad) {
          auto& acc = ctx.at(self.parents[0]);
          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
        }
        if (self.parents[1]->requires_grad) {
          auto& acc = ctx.at(self.parents[1]);
          for (std::size_t i = 0; i < g.size(); ++i) acc[i] -= g[i];
        }
      });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return Tensor<S>::make(
      a.shape(), std::move(out), {a, b},
      [](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
          auto& acc = ctx.at(self.parents[0]);
          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * bv[i];
        }
        if (self.parents[1]->requires_grad) {
          auto& acc = ctx.at(self.parents[1]);
          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * av[i];
        }
      });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "div");
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
  return Tensor<S>::make(
      a.shape(), std::move(out), {a, b},
      [](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
          auto& acc = ctx.at(self.parents[0]);
          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] / bv[i];
        }
        if (self.parents[1]->requires_grad) {
          auto& acc = ctx.at(self.parents[1]);
          for (std::size_t i = 0; i < g.size(); ++i) acc[i] -= g[i] * av[i] / (bv[i] * bv[i]);
        }
      });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c;
  return Tensor<S>::make(
      a.shape(), std::move(out), {a},
      [c](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * c;
      });
}

template <typename S>
Tensor<S> add_const(const Tensor<S>& a, S c) {
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + c;
  return Tensor<S>::make(
      a.shape(), std::move(out), {a},
      [](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
      });
}

// x - s broadcast over all elements; s is a scalar graph node
template <typename S>
Tensor<S> sub_scalar(const Tensor<S>& x, const Tensor<S>& s) {
  if (s.size() != 1) throw DimensionError("sub_scalar: subtrahend must be scalar");
  std::vector<S> out(x.size());
  const S sv = s.value()[0];
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] - sv;
  return Tensor<S>::make(
      x.shape(), std::move(out), {x, s},
      [](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        if (self.parents[0]->requires_grad) {
          auto& acc = ctx.at(self.parents[0]);
          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
        }
        if (self.parents[1]->requires_grad) {
          auto& acc = ctx.at(self.parents[1]);
          S total = S(0);
          for (S gi : g) total += gi;
          acc[0] -= total;
        }
      });
}

template <typename S>
Tensor<S> sqrt_elem(const Tensor<S>& a) {
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a.value()[i]);
  return Tensor<S>::make(
      a.shape(), std::move(out), {a},
      [](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * S(0.5) / self.value[i];
      });
}

// ---- reductions ----

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  S total = S(0);
  for (S v : a.value()) total += v;
  return Tensor<S>::make(
      {1}, {total}, {a},
      [](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[0];
      });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  S total = S(0);
  for (S v : a.value()) total += v;
  const S inv = S(1) / static_cast<S>(a.size());
  return Tensor<S>::make(
      {1}, {total * inv}, {a},
      [inv](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[0] * inv;
      });
}

// ---- activations ----

template <typename S>
S sigmoid_value(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] > S(0) ? a.value()[i] : S(0);
  return Tensor<S>::make(
      a.shape(), std::move(out), {a},
      [](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        const auto& x = self.parents[0]->value;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] > S(0)) acc[i] += g[i];
      });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_value(a.value()[i]);
  return Tensor<S>::make(
      a.shape(), std::move(out), {a},
      [](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const S y = self.value[i];
          acc[i] += g[i] * y * (S(1) - y);
        }
      });
}

template <typename S>
Tensor<S> silu(const Tensor<S>& a) {
  std::vector<S> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * sigmoid_value(a.value()[i]);
  return Tensor<S>::make(
      a.shape(), std::move(out), {a},
      [](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        const auto& x = self.parents[0]->value;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const S s = sigmoid_value(x[i]);
          acc[i] += g[i] * (s + x[i] * s * (S(1) - s));
        }
      });
}

enum class Activation { relu, silu, sigmoid };

template <typename S>
Tensor<S> activation(const Tensor<S>& x, Activation kind) {
  switch (kind) {
    case Activation::relu:
      return relu(x);
    case Activation::silu:
      return silu(x);
    case Activation::sigmoid:
      return sigmoid(x);
  }
  throw ArgumentError("activation: unknown kind");
}

// ---- matrix ops (Eigen-backed) ----

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
  std::vector<S> out(static_cast<std::size_t>(m) * n);
  ConstMatMap<S> A(a.value().data(), m, k), B(b.value().data(), k, n);
  MatMap<S> C(out.data(), m, n);
  C.noalias() = A * B;
  return Tensor<S>::make(
      {m, n}, std::move(out), {a, b},
      [m, k, n](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        ConstMatMap<S> G(g.data(), m, n);
        ConstMatMap<S> A(self.parents[0]->value.data(), m, k);
        ConstMatMap<S> B(self.parents[1]->value.data(), k, n);
        if (self.parents[0]->requires_grad) {
          MatMap<S> dA(ctx.at(self.parents[0]).data(), m, k);
          dA.noalias() += G * B.transpose();
        }
        if (self.parents[1]->requires_grad) {
          MatMap<S> dB(ctx.at(self.parents[1]).data(), k, n);
          dB.noalias() += A.transpose() * G;
        }
      });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.rank() != 2) throw DimensionError("transpose: rank-2 tensor required");
  const int m = a.extent(0), n = a.extent(1);
  std::vector<S> out(a.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(j) * m + i] = a.value()[static_cast<std::size_t>(i) * n + j];
  return Tensor<S>::make(
      {n, m}, std::move(out), {a},
      [m, n](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            acc[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
      });
}

// X[T,Din] * W[Din,Dout] + b[Dout] per row
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.extent(1) != w.extent(0) ||
      w.extent(1) != b.extent(0))
    throw DimensionError("linear: incompatible shapes");
  const int t = x.extent(0), din = x.extent(1), dout = w.extent(1);
  std::vector<S> out(static_cast<std::size_t>(t) * dout);
  ConstMatMap<S> X(x.value().data(), t, din), W(w.value().data(), din, dout);
  MatMap<S> Y(out.data(), t, dout);
  Y.noalias() = X * W;
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < dout; ++j) out[static_cast<std::size_t>(i) * dout + j] += b.value()[j];
  return Tensor<S>::make(
      {t, dout}, std::move(out), {x, w, b},
      [t, din, dout](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        ConstMatMap<S> G(g.data(), t, dout);
        ConstMatMap<S> X(self.parents[0]->value.data(), t, din);
        ConstMatMap<S> W(self.parents[1]->value.data(), din, dout);
        if (self.parents[0]->requires_grad) {
          MatMap<S> dX(ctx.at(self.parents[0]).data(), t, din);
          dX.noalias() += G * W.transpose();
        }
        if (self.parents[1]->requires_grad) {
          MatMap<S> dW(ctx.at(self.parents[1]).data(), din, dout);
          dW.noalias() += X.transpose() * G;
        }
        if (self.parents[2]->requires_grad) {
          auto& db = ctx.at(self.parents[2]);
          for (int i = 0; i < t; ++i)
            for (int j = 0; j < dout; ++j) db[static_cast<std::size_t>(j)] += G(i, j);
        }
      });
}

// row-wise softmax with max-shift stabilization
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& a) {
  if (a.rank() != 2) throw DimensionError("softmax_rows: rank-2 tensor required");
  const int m = a.extent(0), n = a.extent(1);
  std::vector<S> out(a.size());
  for (int i = 0; i < m; ++i) {
    const S* row = a.value().data() + static_cast<std::size_t>(i) * n;
    S* orow = out.data() + static_cast<std::size_t>(i) * n;
    S mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    S z = S(0);
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= z;
  }
  return Tensor<S>::make(
      {m, n}, std::move(out), {a},
      [m, n](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        for (int i = 0; i < m; ++i) {
          const S* y = self.value.data() + static_cast<std::size_t>(i) * n;
          const S* gr = g.data() + static_cast<std::size_t>(i) * n;
          S dot = S(0);
          for (int j = 0; j < n; ++j) dot += gr[j] * y[j];
          S* arow = acc.data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j) arow[j] += (gr[j] - dot) * y[j];
        }
      });
}

// ---- shape ops ----

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (numel(shape) != a.size())
    throw DimensionError("reshape: size mismatch " + shape_str(a.shape()) + " -> " +
                         shape_str(shape));
  std::vector<S> out = a.value();
  return Tensor<S>::make(
      std::move(shape), std::move(out), {a},
      [](const TensorNode<S>& self, const std::vector<S>& g, BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
      });
}

// contiguous slice along one axis
template <typename S>
Tensor<S> narrow(const Tensor<S>& a, int axis, int start, int len) {
  if (axis < 0 || axis >= a.rank()) throw DimensionError("narrow: bad axis");
  const int extent = a.extent(axis);
  if (start < 0 || len <= 0 || start + len > extent) throw DimensionError("narrow: bad range");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(a.extent(i));
  for (int i = axis + 1; i < a.rank(); ++i) inner *= static_cast<std::size_t>(a.extent(i));
  Shape oshape = a.shape();
  oshape[static_cast<std::size_t>(axis)] = len;
  std::vector<S> out(outer * static_cast<std::size_t>(len) * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    const S* src = a.value().data() + (o * extent + start) * inner;
    S* dst = out.data() + o * len * inner;
    std::copy(src, src + static_cast<std::size_t>(len) * inner, dst);
  }
  return Tensor<S>::make(
      std::move(oshape), std::move(out), {a},
      [outer, inner, extent, start, len](const TensorNode<S>& self, const std::vector<S>& g,
                                         BackwardCtx<S>& ctx) {
        auto& acc = ctx.at(self.parents[0]);
        for (std::size_t o = 0; o < outer; ++o) {
          S* dst = acc.data() + (o * static_cast<std::size_t>(extent) + start) * inner;
          const S* src = g.data() + o * len * inner;
          for (std::size_t i = 0; i < static_cast<std::size_t>(len) * inner; ++i) dst[i] += src[i];
        }
      });
}

// concatenate along one axis; all other extents must agree
template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const int rank = parts[0].rank();
  if (axis < 0 || axis >= rank) throw DimensionError("concat: bad axis");
  Shape oshape = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw DimensionError("concat: rank mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != axis && p.extent(i) != oshape[static_cast<std::size_t>(i)])
        throw DimensionError("concat: extent mismatch on axis " + std::to_string(i));
    total += p.extent(axis);
  }
  oshape[static_cast<std::size_t>(axis)] = total;
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(oshape[static_cast<std::size_t>(i)]);
  for (int i = axis + 1; i < rank; ++i) inner *= static_cast<std::size_t>(oshape[static_cast<std::size_t>(i)]);
  std::vector<S> out(numel(oshape));
  std::vector<int> extents;
  extents.reserve(parts.size());
  for (const auto& p : parts) extents.push_back(p.extent(axis));
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t axis_off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const std::size_t chunk = static_cast<std::size_t>(extents[pi]) * inner;
      const S* src = parts[pi].value().data() + o * chunk;
      S* dst = out.data() + (o * static_cast<std::size_t>(total) + axis_off) * inner;
      std::copy(src, src + chunk, dst);
      axis_off += static_cast<std::size_t>(extents[pi]);
    }
  }
  return Tensor<S>::make(
      std::move(oshape), std::move(out), parts,
      [outer, inner, total, extents](const TensorNode<S>& self, const std::vector<S>& g,
                                     BackwardCtx<S>& ctx) {
        for (std::size_t o = 0; o < outer; ++o) {
          std::size_t axis_off = 0;
          for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
            const std::size_t chunk = static_cast<std::size_t>(extents[pi]) * inner;
            if (self.parents[pi]->requires_grad) {
              auto& acc = ctx.at(self.parents[pi]);
              const S* src = g.data() + (o * static_cast<std::size_t>(total) + axis_off) * inner;
              S* dst = acc.data() + o * chunk;
              for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
            }
            axis_off += static_cast<std::size_t>(extents[pi]);
          }
        }
      });
}

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.extent(1) != b.extent(1) || a.extent(2) != b.extent(2))
    throw DimensionError("concat_channels: spatial extents must match");
  return concat<S>({a, b}, 0);
}

// tokens [T,D] -> map [D,h,w] with token t = y*w + x
template <typename S>
Tensor<S> tokens_to_map(const Tensor<S>& tokens, int h, int w) {
  if (tokens.rank() != 2 || tokens.extent(0) != h * w)
    throw DimensionError("tokens_to_map: token count " +
                         std::to_string(tokens.extent(0)) + " != " + std::to_string(h * w));
  return reshape(transpose(tokens), {tokens.extent(1), h, w});
}

template <typename S>
Tensor<S> map_to_tokens(const Tensor<S>& map) {
  if (map.rank() != 3) throw DimensionError("map_to_tokens: rank-3 tensor required");
  return transpose(reshape(map, {map.extent(0), map.extent(1) * map.extent(2)}));
}

}  // namespace pixnet
