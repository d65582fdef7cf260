#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "matr/tensor.hpp"
#include "matr/types.hpp"

namespace matr {

/// Minimum-cost assignment of every row to a distinct column (rows <= cols),
/// Kuhn-Munkres with potentials, O(rows^2 * cols). Returns the column of each
/// row.
inline std::vector<std::size_t> hungarian_min(const Tensor<double>& cost) {
  const std::size_t n = cost.rows();
  const std::size_t m = cost.cols();
  if (n == 0) return {};
  if (n > m) throw std::invalid_argument("hungarian: more ground truths than proposals");
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) assignment[p[j] - 1] = j - 1;
  return assignment;
}

/// Assignment maximising the total of a similarity matrix.
inline std::vector<std::size_t> hungarian_max(const Tensor<double>& similarity) {
  Tensor<double> cost(similarity.shape());
  for (std::size_t i = 0; i < similarity.size(); ++i) cost[i] = -similarity[i];
  return hungarian_min(cost);
}

inline double assignment_value(const Tensor<double>& matrix, std::span<const std::size_t> assignment) {
  double total = 0.0;
  for (std::size_t r = 0; r < assignment.size(); ++r) total += matrix(r, assignment[r]);
  return total;
}

/// Similarity between a ground truth and a proposal: probability the proposal
/// gives the true class plus the tIoU of the boundaries. Higher is better.
inline double matching_cost(double prob_of_label, const Interval& gt, const Interval& predicted) {
  return prob_of_label + tiou(gt, predicted);
}

}  // namespace matr
