#pragma once

#include <Eigen/Core>

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "matr/tensor.hpp"

namespace matr {

/// Raised when a forward value or a loss stops being finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<T>& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  const Tensor<T>& value() const { return graph_->value(id_); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  T item() const {
    if (value().size() != 1) throw std::invalid_argument("item: tensor is not a scalar");
    return value()[0];
  }

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape of primitive ops. Nodes are appended in creation order, which is a
/// topological order; backward walks the tape once in reverse.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
    std::string_view op;
  };

  Graph() = default;
  /// With gradients disabled no backward closures are recorded.
  explicit Graph(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value) { return emit("constant", std::move(value), false, {}); }

  /// Differentiable input leaf owned by the graph.
  Var<T> input(Tensor<T> value) { return emit("input", std::move(value), true, [](Graph&, std::size_t) {}); }

  /// Differentiable leaf that aliases externally owned storage. Repeated calls
  /// with the same tensor return the same node.
  Var<T> parameter(const Tensor<T>& ref) {
    if (auto it = param_ids_.find(&ref); it != param_ids_.end()) return {this, it->second};
    Node node;
    node.external = &ref;
    node.requires_grad = grad_enabled_;
    node.op = "parameter";
    nodes_.push_back(std::move(node));
    const std::size_t id = nodes_.size() - 1;
    param_ids_.emplace(&ref, id);
    params_.push_back(&ref);
    return {this, id};
  }

  Var<T> emit(std::string_view op, Tensor<T> value, bool requires_grad, BackwardFn backward) {
    if (check_finite_ && !value.all_finite()) {
      throw NumericError(std::string("non-finite value produced by ") + std::string(op));
    }
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad && grad_enabled_;
    node.backward = node.requires_grad ? std::move(backward) : BackwardFn{};
    node.op = op;
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient accumulator of a node, zero-initialised on first access.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor<T>(value(id).shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  const Tensor<T>& grad_of_node(std::size_t id) const { return nodes_[id].grad; }
  bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }

  void backward(Var<T> root) {
    if (root.value().size() != 1) {
      throw std::invalid_argument("backward: root must be a scalar, got " +
                                  shape_string(root.value().shape()));
    }
    if (backward_done_) throw std::logic_error("backward: already run on this graph");
    backward_done_ = true;
    grad_buffer(root.id())[0] = T(1);
    for (std::size_t id = root.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.has_grad || !n.backward) continue;
      n.backward(*this, id);
    }
  }

  /// Gradient w.r.t. a tensor registered through parameter(); zeros if it
  /// did not influence the root.
  Tensor<T> grad_of(const Tensor<T>& param) const {
    auto it = param_ids_.find(&param);
    if (it == param_ids_.end() || !nodes_[it->second].has_grad) return Tensor<T>(param.shape());
    return nodes_[it->second].grad;
  }

  Tensor<T> grad(Var<T> v) const {
    if (!nodes_[v.id()].has_grad) return Tensor<T>(v.value().shape());
    return nodes_[v.id()].grad;
  }

  const std::vector<const Tensor<T>*>& parameters() const { return params_; }

  std::size_t size() const { return nodes_.size(); }
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor<T>*, std::size_t> param_ids_;
  std::vector<const Tensor<T>*> params_;
  bool grad_enabled_ = true;
  bool check_finite_ = true;
  bool backward_done_ = false;
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
ConstMatMap<T> as_mat(const Tensor<T>& t) {
  return ConstMatMap<T>(t.ptr(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}
template <typename T>
MatMap<T> as_mat(Tensor<T>& t) {
  return MatMap<T>(t.ptr(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
void require_same_graph(const Var<T>& a, const Var<T>& b) {
  if (&a.graph() != &b.graph()) throw std::invalid_argument("ops: operands live in different graphs");
}

template <typename T>
[[noreturn]] void shape_error(std::string_view op, const Tensor<T>& a, const Tensor<T>& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                              " vs " + shape_string(b.shape()));
}

template <typename T>
bool any_requires_grad(std::initializer_list<Var<T>> vs) {
  for (const auto& v : vs)
    if (v.graph().requires_grad(v.id())) return true;
  return false;
}

// Broadcast rule for binary elementwise ops: b is either the same shape as a,
// a 1xC row, an Rx1 column, or a 1x1 scalar.
struct Broadcast {
  std::size_t rows, cols, b_rows, b_cols;
  std::size_t b_index(std::size_t r, std::size_t c) const {
    return (b_rows == 1 ? 0 : r) * b_cols + (b_cols == 1 ? 0 : c);
  }
};

template <typename T>
Broadcast broadcast_shape(std::string_view op, const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t r = a.rows(), c = a.cols(), br = b.rows(), bc = b.cols();
  const bool ok = (br == r || br == 1) && (bc == c || bc == 1);
  if (!ok) shape_error(op, a, b);
  return {r, c, br, bc};
}

template <typename T, typename Fwd, typename DA, typename DB>
Var<T> binary(std::string_view op, Var<T> a, Var<T> b, Fwd fwd, DA da, DB db) {
  require_same_graph(a, b);
  Graph<T>& g = a.graph();
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const Broadcast bc = broadcast_shape(op, av, bv);
  Tensor<T> out(Shape{bc.rows, bc.cols});
  for (std::size_t r = 0; r < bc.rows; ++r)
    for (std::size_t c = 0; c < bc.cols; ++c)
      out[r * bc.cols + c] = fwd(av[r * bc.cols + c], bv[bc.b_index(r, c)]);
  const std::size_t ia = a.id(), ib = b.id();
  return g.emit(op, std::move(out), any_requires_grad({a, b}),
                [ia, ib, bc, da, db](Graph<T>& gr, std::size_t self) {
                  const Tensor<T>& go = gr.grad_of_node(self);
                  const Tensor<T>& y = gr.value(self);
                  const Tensor<T>& x = gr.value(ia);
                  const Tensor<T>& w = gr.value(ib);
                  if (gr.requires_grad(ia)) {
                    Tensor<T>& ga = gr.grad_buffer(ia);
                    for (std::size_t r = 0; r < bc.rows; ++r)
                      for (std::size_t c = 0; c < bc.cols; ++c) {
                        const std::size_t k = r * bc.cols + c;
                        ga[k] += go[k] * da(x[k], w[bc.b_index(r, c)], y[k]);
                      }
                  }
                  if (gr.requires_grad(ib)) {
                    Tensor<T>& gb = gr.grad_buffer(ib);
                    for (std::size_t r = 0; r < bc.rows; ++r)
                      for (std::size_t c = 0; c < bc.cols; ++c) {
                        const std::size_t k = r * bc.cols + c;
                        const std::size_t kb = bc.b_index(r, c);
                        gb[kb] += go[k] * db(x[k], w[kb], y[k]);
                      }
                  }
                });
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(std::string_view op, Var<T> a, Fwd fwd, Deriv deriv) {
  Graph<T>& g = a.graph();
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  const std::size_t ia = a.id();
  return g.emit(op, std::move(out), g.requires_grad(ia),
                [ia, deriv](Graph<T>& gr, std::size_t self) {
                  const Tensor<T>& go = gr.grad_of_node(self);
                  const Tensor<T>& y = gr.value(self);
                  const Tensor<T>& x = gr.value(ia);
                  Tensor<T>& ga = gr.grad_buffer(ia);
                  for (std::size_t i = 0; i < x.size(); ++i) ga[i] += go[i] * deriv(x[i], y[i]);
                });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a[m x k] * b[k x n]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_same_graph(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.cols() != bv.rows()) detail::shape_error("matmul", av, bv);
  Tensor<T> out(av.rows(), bv.cols());
  detail::as_mat(out).noalias() = detail::as_mat(av) * detail::as_mat(bv);
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().emit("matmul", std::move(out), detail::any_requires_grad({a, b}),
                        [ia, ib](Graph<T>& g, std::size_t self) {
                          auto go = detail::as_mat(g.grad_of_node(self));
                          if (g.requires_grad(ia))
                            detail::as_mat(g.grad_buffer(ia)).noalias() +=
                                go * detail::as_mat(g.value(ib)).transpose();
                          if (g.requires_grad(ib))
                            detail::as_mat(g.grad_buffer(ib)).noalias() +=
                                detail::as_mat(g.value(ia)).transpose() * go;
                        });
}

/// a[m x k] * b[n x k]^T
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  detail::require_same_graph(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.cols() != bv.cols()) detail::shape_error("matmul_nt", av, bv);
  Tensor<T> out(av.rows(), bv.rows());
  detail::as_mat(out).noalias() = detail::as_mat(av) * detail::as_mat(bv).transpose();
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().emit("matmul_nt", std::move(out), detail::any_requires_grad({a, b}),
                        [ia, ib](Graph<T>& g, std::size_t self) {
                          auto go = detail::as_mat(g.grad_of_node(self));
                          if (g.requires_grad(ia))
                            detail::as_mat(g.grad_buffer(ia)).noalias() +=
                                go * detail::as_mat(g.value(ib));
                          if (g.requires_grad(ib))
                            detail::as_mat(g.grad_buffer(ib)).noalias() +=
                                go.transpose() * detail::as_mat(g.value(ia));
                        });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.cols(), av.rows());
  detail::as_mat(out) = detail::as_mat(av).transpose();
  const std::size_t ia = a.id();
  return a.graph().emit("transpose", std::move(out), a.graph().requires_grad(ia),
                        [ia](Graph<T>& g, std::size_t self) {
                          detail::as_mat(g.grad_buffer(ia)) +=
                              detail::as_mat(g.grad_of_node(self)).transpose();
                        });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic (b broadcasts as row, column or scalar)

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T z) { return -z / y; });
}

/// Elementwise minimum; ties route the gradient to a.
template <typename T>
Var<T> minimum(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "minimum", a, b, [](T x, T y) { return x <= y ? x : y; },
      [](T x, T y, T) { return x <= y ? T(1) : T(0); },
      [](T x, T y, T) { return x <= y ? T(0) : T(1); });
}

/// Elementwise maximum; ties route the gradient to a.
template <typename T>
Var<T> maximum(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "maximum", a, b, [](T x, T y) { return x >= y ? x : y; },
      [](T x, T y, T) { return x >= y ? T(1) : T(0); },
      [](T x, T y, T) { return x >= y ? T(0) : T(1); });
}

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <typename T>
Var<T> operator/(Var<T> a, Var<T> b) { return div(a, b); }

template <typename T>
Var<T> scale(Var<T> a, T s) {
  return detail::unary<T>(
      "scale", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  return detail::unary<T>(
      "add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> neg(Var<T> a) { return scale(a, T(-1)); }

template <typename T>
Var<T> exp(Var<T> a) {
  return detail::unary<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(Var<T> a) {
  return detail::unary<T>(
      "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary<T>(
      "sigmoid", a,
      [](T x) {
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return detail::unary<T>(
      "relu", a, [](T x) { return x > 0 ? x : T(0); },
      [](T x, T) { return x > 0 ? T(1) : T(0); });
}

/// |x| with subgradient 0 at the origin.
template <typename T>
Var<T> abs(Var<T> a) {
  return detail::unary<T>(
      "abs", a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
}

template <typename T>
Var<T> square(Var<T> a) {
  return detail::unary<T>(
      "square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

/// x^p for x >= 0 (p may be fractional).
template <typename T>
Var<T> pow_scalar(Var<T> a, T p) {
  return detail::unary<T>(
      "pow", a, [p](T x) { return std::pow(x, p); },
      [p](T x, T) { return p == T(0) ? T(0) : p * std::pow(x, p - T(1)); });
}

/// log(1 + exp(x)), numerically stable.
template <typename T>
Var<T> softplus(Var<T> a) {
  return detail::unary<T>(
      "softplus", a,
      [](T x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](T x, T) {
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      });
}

// ---------------------------------------------------------------------------
// Row-wise normalisations

template <typename T>
Var<T> softmax_rows(Var<T> a) {
  const Tensor<T>& av = a.value();
  const std::size_t R = av.rows(), C = av.cols();
  Tensor<T> out(av.shape());
  for (std::size_t r = 0; r < R; ++r) {
    const T* x = av.ptr() + r * C;
    T* y = out.ptr() + r * C;
    const T m = *std::max_element(x, x + C);
    T z = 0;
    for (std::size_t c = 0; c < C; ++c) z += (y[c] = std::exp(x[c] - m));
    for (std::size_t c = 0; c < C; ++c) y[c] /= z;
  }
  const std::size_t ia = a.id();
  return a.graph().emit("softmax", std::move(out), a.graph().requires_grad(ia),
                        [ia, R, C](Graph<T>& g, std::size_t self) {
                          const Tensor<T>& go = g.grad_of_node(self);
                          const Tensor<T>& y = g.value(self);
                          Tensor<T>& ga = g.grad_buffer(ia);
                          for (std::size_t r = 0; r < R; ++r) {
                            T dot = 0;
                            for (std::size_t c = 0; c < C; ++c) dot += go[r * C + c] * y[r * C + c];
                            for (std::size_t c = 0; c < C; ++c)
                              ga[r * C + c] += y[r * C + c] * (go[r * C + c] - dot);
                          }
                        });
}

template <typename T>
Var<T> log_softmax_rows(Var<T> a) {
  const Tensor<T>& av = a.value();
  const std::size_t R = av.rows(), C = av.cols();
  Tensor<T> out(av.shape());
  for (std::size_t r = 0; r < R; ++r) {
    const T* x = av.ptr() + r * C;
    const T m = *std::max_element(x, x + C);
    T z = 0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(x[c] - m);
    const T lse = m + std::log(z);
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = x[c] - lse;
  }
  const std::size_t ia = a.id();
  return a.graph().emit("log_softmax", std::move(out), a.graph().requires_grad(ia),
                        [ia, R, C](Graph<T>& g, std::size_t self) {
                          const Tensor<T>& go = g.grad_of_node(self);
                          const Tensor<T>& y = g.value(self);
                          Tensor<T>& ga = g.grad_buffer(ia);
                          for (std::size_t r = 0; r < R; ++r) {
                            T s = 0;
                            for (std::size_t c = 0; c < C; ++c) s += go[r * C + c];
                            for (std::size_t c = 0; c < C; ++c)
                              ga[r * C + c] += go[r * C + c] - std::exp(y[r * C + c]) * s;
                          }
                        });
}

/// Row-wise layer normalisation followed by the affine map gamma * xhat + beta.
/// gamma and beta are 1 x C rows.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  detail::require_same_graph(x, gamma);
  detail::require_same_graph(x, beta);
  const Tensor<T>& xv = x.value();
  const std::size_t R = xv.rows(), C = xv.cols();
  if (gamma.value().size() != C || beta.value().size() != C)
    detail::shape_error("layer_norm", xv, gamma.value());
  Tensor<T> xhat(xv.shape());
  std::vector<T> inv_std(R);
  Tensor<T> out(xv.shape());
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  for (std::size_t r = 0; r < R; ++r) {
    const T* xr = xv.ptr() + r * C;
    T mean = 0;
    for (std::size_t c = 0; c < C; ++c) mean += xr[c];
    mean /= static_cast<T>(C);
    T var = 0;
    for (std::size_t c = 0; c < C; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(C);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < C; ++c) {
      const T h = (xr[c] - mean) * inv_std[r];
      xhat[r * C + c] = h;
      out[r * C + c] = gv[c] * h + bv[c];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.graph().emit(
      "layer_norm", std::move(out), detail::any_requires_grad({x, gamma, beta}),
      [ix, ig, ib, R, C, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Graph<T>& g, std::size_t self) {
        const Tensor<T>& go = g.grad_of_node(self);
        const Tensor<T>& gv = g.value(ig);
        if (g.requires_grad(ig)) {
          Tensor<T>& gg = g.grad_buffer(ig);
          for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) gg[c] += go[r * C + c] * xhat[r * C + c];
        }
        if (g.requires_grad(ib)) {
          Tensor<T>& gb = g.grad_buffer(ib);
          for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) gb[c] += go[r * C + c];
        }
        if (g.requires_grad(ix)) {
          Tensor<T>& gx = g.grad_buffer(ix);
          const T n = static_cast<T>(C);
          for (std::size_t r = 0; r < R; ++r) {
            T sum_d = 0, sum_dh = 0;
            for (std::size_t c = 0; c < C; ++c) {
              const T d = go[r * C + c] * gv[c];
              sum_d += d;
              sum_dh += d * xhat[r * C + c];
            }
            for (std::size_t c = 0; c < C; ++c) {
              const T d = go[r * C + c] * gv[c];
              gx[r * C + c] += inv_std[r] / n * (n * d - sum_d - xhat[r * C + c] * sum_dh);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Graph<T>& g = parts.front().graph();
  const std::size_t C = parts.front().cols();
  std::size_t R = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    detail::require_same_graph(p, parts.front());
    if (p.cols() != C) detail::shape_error("concat_rows", parts.front().value(), p.value());
    R += p.rows();
    needs_grad = needs_grad || g.requires_grad(p.id());
  }
  Tensor<T> out(R, C);
  std::vector<std::size_t> ids;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.ptr() + offset);
    offset += p.value().size();
    ids.push_back(p.id());
  }
  return g.emit("concat_rows", std::move(out), needs_grad,
                [ids = std::move(ids)](Graph<T>& gr, std::size_t self) {
                  const Tensor<T>& go = gr.grad_of_node(self);
                  std::size_t off = 0;
                  for (std::size_t id : ids) {
                    const std::size_t n = gr.value(id).size();
                    if (gr.requires_grad(id)) {
                      Tensor<T>& gi = gr.grad_buffer(id);
                      for (std::size_t k = 0; k < n; ++k) gi[k] += go[off + k];
                    }
                    off += n;
                  }
                });
}

template <typename T>
Var<T> concat_rows(std::initializer_list<Var<T>> parts) {
  return concat_rows<T>(std::span<const Var<T>>(parts.begin(), parts.size()));
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Graph<T>& g = parts.front().graph();
  const std::size_t R = parts.front().rows();
  std::size_t C = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    detail::require_same_graph(p, parts.front());
    if (p.rows() != R) detail::shape_error("concat_cols", parts.front().value(), p.value());
    C += p.cols();
    needs_grad = needs_grad || g.requires_grad(p.id());
  }
  Tensor<T> out(R, C);
  std::vector<std::size_t> ids;
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const Tensor<T>& v = p.value();
    const std::size_t pc = v.cols();
    for (std::size_t r = 0; r < R; ++r)
      std::copy(v.ptr() + r * pc, v.ptr() + (r + 1) * pc, out.ptr() + r * C + c0);
    c0 += pc;
    ids.push_back(p.id());
  }
  return g.emit("concat_cols", std::move(out), needs_grad,
                [ids = std::move(ids), R, C](Graph<T>& gr, std::size_t self) {
                  const Tensor<T>& go = gr.grad_of_node(self);
                  std::size_t off = 0;
                  for (std::size_t id : ids) {
                    const std::size_t pc = gr.value(id).cols();
                    if (gr.requires_grad(id)) {
                      Tensor<T>& gi = gr.grad_buffer(id);
                      for (std::size_t r = 0; r < R; ++r)
                        for (std::size_t c = 0; c < pc; ++c) gi[r * pc + c] += go[r * C + off + c];
                    }
                    off += pc;
                  }
                });
}

template <typename T>
Var<T> concat_cols(std::initializer_list<Var<T>> parts) {
  return concat_cols<T>(std::span<const Var<T>>(parts.begin(), parts.size()));
}

/// Rows [begin, end).
template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
  const Tensor<T>& av = a.value();
  if (begin > end || end > av.rows()) throw std::out_of_range("slice_rows: range out of bounds");
  const std::size_t C = av.cols();
  Tensor<T> out = av.slice_rows(begin, end);
  const std::size_t ia = a.id();
  return a.graph().emit("slice_rows", std::move(out), a.graph().requires_grad(ia),
                        [ia, begin, C](Graph<T>& g, std::size_t self) {
                          const Tensor<T>& go = g.grad_of_node(self);
                          Tensor<T>& ga = g.grad_buffer(ia);
                          for (std::size_t k = 0; k < go.size(); ++k) ga[begin * C + k] += go[k];
                        });
}

/// Columns [begin, end).
template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  const Tensor<T>& av = a.value();
  const std::size_t R = av.rows(), C = av.cols(), W = end - begin;
  if (begin > end || end > C) throw std::out_of_range("slice_cols: range out of bounds");
  Tensor<T> out(R, W);
  for (std::size_t r = 0; r < R; ++r)
    std::copy(av.ptr() + r * C + begin, av.ptr() + r * C + end, out.ptr() + r * W);
  const std::size_t ia = a.id();
  return a.graph().emit("slice_cols", std::move(out), a.graph().requires_grad(ia),
                        [ia, begin, R, C, W](Graph<T>& g, std::size_t self) {
                          const Tensor<T>& go = g.grad_of_node(self);
                          Tensor<T>& ga = g.grad_buffer(ia);
                          for (std::size_t r = 0; r < R; ++r)
                            for (std::size_t c = 0; c < W; ++c)
                              ga[r * C + begin + c] += go[r * W + c];
                        });
}

/// Embedding lookup: out row i = table row indices[i].
template <typename T>
Var<T> gather_rows(Var<T> table, std::vector<std::size_t> indices) {
  const Tensor<T>& tv = table.value();
  const std::size_t C = tv.cols();
  Tensor<T> out(indices.size(), C);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= tv.rows()) throw std::out_of_range("gather_rows: index out of range");
    std::copy(tv.ptr() + indices[i] * C, tv.ptr() + (indices[i] + 1) * C, out.ptr() + i * C);
  }
  const std::size_t it = table.id();
  return table.graph().emit("gather_rows", std::move(out), table.graph().requires_grad(it),
                            [it, C, indices = std::move(indices)](Graph<T>& g, std::size_t self) {
                              const Tensor<T>& go = g.grad_of_node(self);
                              Tensor<T>& gt = g.grad_buffer(it);
                              for (std::size_t i = 0; i < indices.size(); ++i)
                                for (std::size_t c = 0; c < C; ++c)
                                  gt[indices[i] * C + c] += go[i * C + c];
                            });
}

/// Picks one column per row: out[i] = a(i, cols[i]); result is R x 1.
template <typename T>
Var<T> pick_cols(Var<T> a, std::vector<std::size_t> cols) {
  const Tensor<T>& av = a.value();
  const std::size_t R = av.rows(), C = av.cols();
  if (cols.size() != R) throw std::invalid_argument("pick_cols: need one column per row");
  Tensor<T> out(R, 1);
  for (std::size_t r = 0; r < R; ++r) {
    if (cols[r] >= C) throw std::out_of_range("pick_cols: column out of range");
    out[r] = av[r * C + cols[r]];
  }
  const std::size_t ia = a.id();
  return a.graph().emit("pick_cols", std::move(out), a.graph().requires_grad(ia),
                        [ia, C, cols = std::move(cols)](Graph<T>& g, std::size_t self) {
                          const Tensor<T>& go = g.grad_of_node(self);
                          Tensor<T>& ga = g.grad_buffer(ia);
                          for (std::size_t r = 0; r < cols.size(); ++r) ga[r * C + cols[r]] += go[r];
                        });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(Var<T> a) {
  const Tensor<T>& av = a.value();
  T s = 0;
  for (T v : av.data()) s += v;
  const std::size_t ia = a.id();
  return a.graph().emit("sum", Tensor<T>::scalar(s), a.graph().requires_grad(ia),
                        [ia](Graph<T>& g, std::size_t self) {
                          const T go = g.grad_of_node(self)[0];
                          for (T& v : g.grad_buffer(ia).data()) v += go;
                        });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(n));
}

/// Sum across columns: R x C -> R x 1.
template <typename T>
Var<T> sum_cols(Var<T> a) {
  const Tensor<T>& av = a.value();
  const std::size_t R = av.rows(), C = av.cols();
  Tensor<T> out(R, 1);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[r] += av[r * C + c];
  const std::size_t ia = a.id();
  return a.graph().emit("sum_cols", std::move(out), a.graph().requires_grad(ia),
                        [ia, R, C](Graph<T>& g, std::size_t self) {
                          const Tensor<T>& go = g.grad_of_node(self);
                          Tensor<T>& ga = g.grad_buffer(ia);
                          for (std::size_t r = 0; r < R; ++r)
                            for (std::size_t c = 0; c < C; ++c) ga[r * C + c] += go[r];
                        });
}

/// Sum of several scalars.
template <typename T>
Var<T> add_all(std::span<const Var<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("add_all: no inputs");
  Var<T> acc = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
  return acc;
}

}  // namespace matr
