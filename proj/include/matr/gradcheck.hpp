#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "matr/autograd.hpp"

namespace matr {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `fn(graph)` must build the function on the given graph and
/// register every leaf through graph.parameter(*leaf). Leaves are perturbed in
/// place and restored. Error per coordinate is |a - n| / max(1, |a|).
template <typename Fn>
GradCheckReport finite_diff_check(Fn&& fn, std::span<Tensor<double>* const> leaves,
                                  double eps = 1e-5) {
  std::vector<Tensor<double>> analytic;
  {
    Graph<double> g;
    Var<double> root = fn(g);
    g.backward(root);
    for (Tensor<double>* leaf : leaves) analytic.push_back(g.grad_of(*leaf));
  }
  auto evaluate = [&fn]() {
    Graph<double> g;
    return fn(g).item();
  };
  GradCheckReport report;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    Tensor<double>& leaf = *leaves[l];
    for (std::size_t i = 0; i < leaf.size(); ++i) {
      const double saved = leaf[i];
      leaf[i] = saved + eps;
      const double plus = evaluate();
      leaf[i] = saved - eps;
      const double minus = evaluate();
      leaf[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[l][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      ++report.coordinates;
      if (err >= report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_leaf = l;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

/// Single-point convenience form: fn(graph, x) -> scalar.
template <typename Fn>
GradCheckReport finite_diff_check(Fn&& fn, Tensor<double> point, double eps = 1e-5) {
  Tensor<double>* leaf = &point;
  return finite_diff_check(
      [&](Graph<double>& g) { return fn(g, g.parameter(point)); },
      std::span<Tensor<double>* const>(&leaf, 1), eps);
}

}  // namespace matr
