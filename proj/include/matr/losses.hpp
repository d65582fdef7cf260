#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "matr/autograd.hpp"
#include "matr/heads.hpp"
#include "matr/types.hpp"

namespace matr {

/// A ground-truth instance assigned to query `query`, with its regression
/// targets.
struct MatchedTarget {
  std::size_t query = 0;
  std::size_t label = 0;
  double start = 0.0;
  double end = 0.0;
  std::size_t region = 0;
  double start_offset = 0.0;
  double end_offset = 0.0;
};

template <typename T>
struct LossParts {
  Var<T> classification;
  Var<T> start;
  Var<T> end;
  Var<T> diou;
  Var<T> flag;
  Var<T> total;
};

namespace detail {

template <typename T>
Var<T> column(Graph<T>& g, const std::vector<double>& values) {
  Tensor<T> t(values.size(), 1);
  for (std::size_t i = 0; i < values.size(); ++i) t[i] = static_cast<T>(values[i]);
  return g.constant(std::move(t));
}

template <typename T>
std::vector<std::size_t> matched_queries(std::span<const MatchedTarget> targets) {
  std::vector<std::size_t> q;
  for (const auto& t : targets) q.push_back(t.query);
  return q;
}

}  // namespace detail

/// Multi-class focal loss summed over all queries. `labels[i]` is the target
/// class of query i (background = num_classes). Foreground rows are weighted
/// by alpha, background rows by 1 - alpha.
template <typename T>
Var<T> focal_loss(Var<T> class_logits, std::span<const std::size_t> labels, double alpha,
                  double gamma) {
  Graph<T>& g = class_logits.graph();
  const std::size_t background = class_logits.cols() - 1;
  Var<T> logp = pick_cols(log_softmax_rows(class_logits),
                          std::vector<std::size_t>(labels.begin(), labels.end()));
  std::vector<double> weights;
  for (std::size_t label : labels) weights.push_back(label == background ? 1.0 - alpha : alpha);
  Var<T> term = logp;
  if (gamma != 0.0) {
    Var<T> one_minus_p = add_scalar(neg(exp(logp)), T(1));
    // exp(logp) can round to slightly above 1; pow of a negative base is NaN.
    one_minus_p = relu(one_minus_p);
    term = mul(pow_scalar(one_minus_p, static_cast<T>(gamma)), logp);
  }
  return neg(sum(mul(detail::column<T>(g, weights), term)));
}

/// Region cross-entropy plus L1 on the offset read at the predicted region.
template <typename T>
Var<T> start_loss(Var<T> region_logits, Var<T> start_offsets, std::span<const MatchedTarget> targets) {
  Graph<T>& g = region_logits.graph();
  if (targets.empty()) return g.constant(Tensor<T>::scalar(T(0)));
  const auto queries = detail::matched_queries<T>(targets);
  Var<T> logits = gather_rows(region_logits, queries);
  std::vector<std::size_t> regions, predicted;
  std::vector<double> offsets;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    regions.push_back(targets[i].region);
    offsets.push_back(targets[i].start_offset);
    predicted.push_back(argmax(logits.value().row_span(i)));
  }
  Var<T> ce = neg(sum(pick_cols(log_softmax_rows(logits), regions)));
  Var<T> v_hat = pick_cols(gather_rows(start_offsets, queries), predicted);
  Var<T> l1 = sum(abs(sub(v_hat, detail::column<T>(g, offsets))));
  return add(ce, l1);
}

template <typename T>
Var<T> end_loss(Var<T> end_offsets, std::span<const MatchedTarget> targets) {
  Graph<T>& g = end_offsets.graph();
  if (targets.empty()) return g.constant(Tensor<T>::scalar(T(0)));
  std::vector<double> u;
  for (const auto& t : targets) u.push_back(t.end_offset);
  Var<T> u_hat = gather_rows(end_offsets, detail::matched_queries<T>(targets));
  return sum(abs(sub(u_hat, detail::column<T>(g, u))));
}

/// Predicted start/end (frames) of the matched queries as graph nodes.
template <typename T>
std::pair<Var<T>, Var<T>> predicted_boundaries(Var<T> region_logits, Var<T> start_offsets,
                                               Var<T> end_offsets, std::int64_t t,
                                               std::size_t segment_len,
                                               std::span<const MatchedTarget> targets) {
  Graph<T>& g = region_logits.graph();
  const auto queries = detail::matched_queries<T>(targets);
  const double ls = static_cast<double>(segment_len);
  std::vector<std::size_t> predicted;
  std::vector<double> base;
  for (std::size_t q : queries) {
    const std::size_t o = argmax(region_logits.value().row_span(q));
    predicted.push_back(o);
    base.push_back(static_cast<double>(t) - static_cast<double>(o) * ls);
  }
  Var<T> v_hat = pick_cols(gather_rows(start_offsets, queries), predicted);
  Var<T> start = sub(detail::column<T>(g, base), scale(v_hat, static_cast<T>(ls)));
  Var<T> end = add_scalar(scale(gather_rows(end_offsets, queries), static_cast<T>(ls)),
                          static_cast<T>(t));
  return {start, end};
}

/// 1 - tIoU + squared centre distance over squared enclosing length, summed
/// over matched pairs. A pair whose enclosing interval has zero length
/// contributes 0.
template <typename T>
Var<T> diou_loss(Var<T> pred_start, Var<T> pred_end, std::span<const Interval> gt) {
  Graph<T>& g = pred_start.graph();
  if (gt.empty()) return g.constant(Tensor<T>::scalar(T(0)));
  std::vector<double> gs, ge, valid;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    gs.push_back(gt[i].start);
    ge.push_back(gt[i].end);
    const double lo = std::min(pred_start.value()[i], static_cast<T>(gt[i].start));
    const double hi = std::max(pred_end.value()[i], static_cast<T>(gt[i].end));
    valid.push_back(hi - lo > 0.0 ? 1.0 : 0.0);
  }
  Var<T> s = detail::column<T>(g, gs);
  Var<T> e = detail::column<T>(g, ge);
  const T tiny = static_cast<T>(1e-9);
  Var<T> inter = relu(sub(minimum(pred_end, e), maximum(pred_start, s)));
  Var<T> pred_len = relu(sub(pred_end, pred_start));
  Var<T> union_len = sub(add(pred_len, sub(e, s)), inter);
  Var<T> iou = div(inter, maximum(union_len, g.constant(Tensor<T>::scalar(tiny))));
  Var<T> enclosing = sub(maximum(pred_end, e), minimum(pred_start, s));
  Var<T> centre_gap = scale(sub(add(pred_start, pred_end), add(s, e)), T(0.5));
  Var<T> penalty = div(square(centre_gap),
                       maximum(square(enclosing), g.constant(Tensor<T>::scalar(tiny))));
  Var<T> per_pair = add(add_scalar(neg(iou), T(1)), penalty);
  return sum(mul(per_pair, detail::column<T>(g, valid)));
}

/// Binary cross-entropy of sigmoid(logit) against the flag.
template <typename T>
Var<T> flag_loss(Var<T> logit, bool flag) {
  Var<T> loss = softplus(logit);
  if (flag) loss = sub(loss, logit);
  return sum(loss);
}

/// Plain-value DIoU loss for a single pair.
inline double diou_value(const Interval& pred, const Interval& gt) {
  const double enclosing = std::max(pred.end, gt.end) - std::min(pred.start, gt.start);
  if (enclosing <= 0.0) return 0.0;
  const double rho = pred.center() - gt.center();
  return 1.0 - tiou(pred, gt) + rho * rho / (enclosing * enclosing);
}

}  // namespace matr
