#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "matr/autograd.hpp"

namespace matr {

/// Named, ordered collection of trainable tensors. Layers refer to entries by
/// index so a store can be cast between precisions without rewiring.
template <typename T>
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor<T> init) {
    if (index_.contains(name)) throw std::invalid_argument("param store: duplicate name " + name);
    index_.emplace(name, names_.size());
    names_.push_back(std::move(name));
    values_.push_back(std::move(init));
    return values_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  Tensor<T>& value(std::size_t i) { return values_[i]; }
  const Tensor<T>& value(std::size_t i) const { return values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }

  std::size_t find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("param store: no parameter named " + name);
    return it->second;
  }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

  std::vector<Tensor<T>*> pointers() {
    std::vector<Tensor<T>*> out;
    for (auto& v : values_) out.push_back(&v);
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Binds a parameter store to one graph for the duration of a forward pass.
template <typename T>
struct Scope {
  Graph<T>& graph;
  const ParamStore<T>& params;
  Var<T> operator()(std::size_t index) const { return graph.parameter(params.value(index)); }
};

namespace init {

template <typename T>
Tensor<T> uniform(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> out(rows, cols);
  for (auto& v : out.data()) v = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
Tensor<T> normal(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> out(rows, cols);
  for (auto& v : out.data()) v = static_cast<T>(dist(rng));
  return out;
}

}  // namespace init

// ---------------------------------------------------------------------------
// Positional encodings

/// Standard transformer sinusoid: even columns sin(p / 10000^(i/dim)), odd
/// columns the matching cos.
inline double sinusoid(double position, std::size_t column, std::size_t dim) {
  const std::size_t pair = column - column % 2;
  const double freq = std::pow(10000.0, static_cast<double>(pair) / static_cast<double>(dim));
  return column % 2 == 0 ? std::sin(position / freq) : std::cos(position / freq);
}

template <typename T>
Tensor<T> sinusoidal_pe(std::size_t length, std::size_t dim) {
  if (dim % 2 != 0) throw std::invalid_argument("sinusoidal_pe: dim must be even");
  Tensor<T> out(length, dim);
  for (std::size_t p = 0; p < length; ++p)
    for (std::size_t c = 0; c < dim; ++c)
      out(p, c) = static_cast<T>(sinusoid(static_cast<double>(p), c, dim));
  return out;
}

// ---------------------------------------------------------------------------
// Layers

template <typename T>
struct Linear {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t in = 0;
  std::size_t out = 0;

  /// Weights and bias drawn from U(-1/sqrt(in), 1/sqrt(in)).
  static Linear create(ParamStore<T>& store, const std::string& name, std::size_t in,
                       std::size_t out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = store.add(name + ".weight", init::uniform<T>(in, out, bound, rng));
    l.bias = store.add(name + ".bias", init::uniform<T>(1, out, bound, rng));
    return l;
  }

  Var<T> operator()(const Scope<T>& s, Var<T> x) const {
    return add(matmul(x, s(weight)), s(bias));
  }
};

template <typename T>
struct LayerNorm {
  std::size_t gamma = 0;
  std::size_t beta = 0;
  T eps = T(1e-5);

  static LayerNorm create(ParamStore<T>& store, const std::string& name, std::size_t dim, T eps) {
    LayerNorm l;
    l.gamma = store.add(name + ".gamma", Tensor<T>(1, dim, T(1)));
    l.beta = store.add(name + ".beta", Tensor<T>(1, dim, T(0)));
    l.eps = eps;
    return l;
  }

  Var<T> operator()(const Scope<T>& s, Var<T> x) const {
    return layer_norm(x, s(gamma), s(beta), eps);
  }
};

/// Two linear maps with a ReLU between them.
template <typename T>
struct FeedForward {
  Linear<T> first;
  Linear<T> second;

  static FeedForward create(ParamStore<T>& store, const std::string& name, std::size_t in,
                            std::size_t hidden, std::size_t out, std::mt19937_64& rng) {
    return {Linear<T>::create(store, name + ".0", in, hidden, rng),
            Linear<T>::create(store, name + ".1", hidden, out, rng)};
  }

  Var<T> operator()(const Scope<T>& s, Var<T> x) const { return second(s, relu(first(s, x))); }
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParamStore<T>& store, const std::string& name,
                                   std::size_t dim, std::size_t heads, std::mt19937_64& rng) {
    if (heads == 0 || dim % heads != 0)
      throw std::invalid_argument("attention: width " + std::to_string(dim) +
                                  " not divisible by " + std::to_string(heads) + " heads");
    MultiHeadAttention m;
    m.q = Linear<T>::create(store, name + ".q", dim, dim, rng);
    m.k = Linear<T>::create(store, name + ".k", dim, dim, rng);
    m.v = Linear<T>::create(store, name + ".v", dim, dim, rng);
    m.o = Linear<T>::create(store, name + ".o", dim, dim, rng);
    m.heads = heads;
    return m;
  }

  /// Scaled dot-product attention per head. If `weights` is given it receives
  /// the per-head attention matrices (queries x keys).
  Var<T> operator()(const Scope<T>& s, Var<T> queries, Var<T> keys, Var<T> values,
                    std::vector<Tensor<T>>* weights = nullptr) const {
    if (keys.rows() != values.rows())
      throw std::invalid_argument("attention: key/value lengths differ");
    const std::size_t dim = queries.cols();
    if (dim % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
    const std::size_t dh = dim / heads;
    const T scale_factor = T(1) / std::sqrt(static_cast<T>(dh));
    Var<T> Q = q(s, queries);
    Var<T> K = k(s, keys);
    Var<T> V = v(s, values);
    std::vector<Var<T>> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Var<T> qh = heads == 1 ? Q : slice_cols(Q, h * dh, (h + 1) * dh);
      Var<T> kh = heads == 1 ? K : slice_cols(K, h * dh, (h + 1) * dh);
      Var<T> vh = heads == 1 ? V : slice_cols(V, h * dh, (h + 1) * dh);
      Var<T> attn = softmax_rows(scale(matmul_nt(qh, kh), scale_factor));
      if (weights) weights->push_back(attn.value());
      outs.push_back(matmul(attn, vh));
    }
    Var<T> merged = heads == 1 ? outs.front() : concat_cols<T>(outs);
    return o(s, merged);
  }
};

/// Post-norm encoder layer; positional encodings enter queries and keys only.
template <typename T>
struct EncoderLayer {
  MultiHeadAttention<T> attn;
  LayerNorm<T> norm1;
  FeedForward<T> ffn;
  LayerNorm<T> norm2;

  static EncoderLayer create(ParamStore<T>& store, const std::string& name, std::size_t dim,
                             std::size_t heads, std::size_t ffn_dim, T eps,
                             std::mt19937_64& rng) {
    EncoderLayer l;
    l.attn = MultiHeadAttention<T>::create(store, name + ".attn", dim, heads, rng);
    l.norm1 = LayerNorm<T>::create(store, name + ".norm1", dim, eps);
    l.ffn = FeedForward<T>::create(store, name + ".ffn", dim, ffn_dim, dim, rng);
    l.norm2 = LayerNorm<T>::create(store, name + ".norm2", dim, eps);
    return l;
  }

  Var<T> operator()(const Scope<T>& s, Var<T> x, Var<T> pos) const {
    if (x.value().shape() != pos.value().shape())
      throw std::invalid_argument("encoder layer: positional encoding shape mismatch");
    Var<T> qk = add(x, pos);
    x = norm1(s, add(x, attn(s, qk, qk, x)));
    return norm2(s, add(x, ffn(s, x)));
  }
};

/// Post-norm decoder layer: self-attention, cross-attention, FFN. Query
/// positions are added to queries and keys of both attentions; memory
/// positions are added to the cross-attention keys and, when given, values.
template <typename T>
struct DecoderLayer {
  MultiHeadAttention<T> self_attn;
  LayerNorm<T> norm1;
  MultiHeadAttention<T> cross_attn;
  LayerNorm<T> norm2;
  FeedForward<T> ffn;
  LayerNorm<T> norm3;

  static DecoderLayer create(ParamStore<T>& store, const std::string& name, std::size_t dim,
                             std::size_t heads, std::size_t ffn_dim, T eps,
                             std::mt19937_64& rng) {
    DecoderLayer l;
    l.self_attn = MultiHeadAttention<T>::create(store, name + ".self_attn", dim, heads, rng);
    l.norm1 = LayerNorm<T>::create(store, name + ".norm1", dim, eps);
    l.cross_attn = MultiHeadAttention<T>::create(store, name + ".cross_attn", dim, heads, rng);
    l.norm2 = LayerNorm<T>::create(store, name + ".norm2", dim, eps);
    l.ffn = FeedForward<T>::create(store, name + ".ffn", dim, ffn_dim, dim, rng);
    l.norm3 = LayerNorm<T>::create(store, name + ".norm3", dim, eps);
    return l;
  }

  Var<T> operator()(const Scope<T>& s, Var<T> tgt, Var<T> query_pos, Var<T> memory,
                    Var<T> memory_key_pos, Var<T> memory_value_pos = {}) const {
    if (tgt.value().shape() != query_pos.value().shape() ||
        memory.value().shape() != memory_key_pos.value().shape() ||
        (memory_value_pos.valid() && memory.value().shape() != memory_value_pos.value().shape()))
      throw std::invalid_argument("decoder layer: positional encoding shape mismatch");
    Var<T> q = add(tgt, query_pos);
    tgt = norm1(s, add(tgt, self_attn(s, q, q, tgt)));
    q = add(tgt, query_pos);
    Var<T> keys = add(memory, memory_key_pos);
    Var<T> values = memory;
    if (memory_value_pos.valid())
      values = memory_value_pos.id() == memory_key_pos.id() ? keys : add(memory, memory_value_pos);
    tgt = norm2(s, add(tgt, cross_attn(s, q, keys, values)));
    return norm3(s, add(tgt, ffn(s, tgt)));
  }
};

}  // namespace matr
