#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "matr/config.hpp"
#include "matr/nn.hpp"
#include "matr/types.hpp"

namespace matr {

/// Index of the largest element; ties resolve to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

/// s = t - (region + offset) * L_s
inline double decode_start(double t, std::size_t region, double offset, std::size_t segment_len) {
  return t - (static_cast<double>(region) + offset) * static_cast<double>(segment_len);
}

/// e = t + offset * L_s
inline double decode_end(double t, double offset, std::size_t segment_len) {
  return t + offset * static_cast<double>(segment_len);
}

struct StartTarget {
  std::size_t region = 0;
  double offset = 0.0;
};

/// Inverse of decode_start. Region L_m + 1 collects every start older than
/// the memory; its offset is clamped to `offset_max`.
inline StartTarget encode_start_target(double t, double s, std::size_t segment_len,
                                       std::size_t memory_len, double offset_max) {
  const double x = (t - s) / static_cast<double>(segment_len);
  const double last = static_cast<double>(memory_len + 1);
  const double region = std::clamp(std::floor(x), 0.0, last);
  StartTarget out;
  out.region = static_cast<std::size_t>(region);
  out.offset = x - region;
  if (out.region == memory_len + 1) out.offset = std::min(out.offset, offset_max);
  return out;
}

inline double encode_end_target(double t, double e, std::size_t segment_len) {
  return (e - t) / static_cast<double>(segment_len);
}

/// Head outputs of one timestamp, detached from the graph.
struct HeadValues {
  Tensor<double> end_offsets;    // N x 1
  Tensor<double> region_logits;  // N x (L_m + 2)
  Tensor<double> start_offsets;  // N x (L_m + 2)
  Tensor<double> class_probs;    // N x (C + 1), background last

  std::size_t num_queries() const { return end_offsets.rows(); }
  std::size_t num_classes() const { return class_probs.cols() - 1; }
};

/// Boundaries and class of every query, valid or not.
inline std::vector<ActionProposal> decode_queries(std::int64_t t, const HeadValues& h,
                                                  std::size_t segment_len) {
  std::vector<ActionProposal> out;
  const std::size_t n = h.num_queries();
  const std::size_t bg = h.num_classes();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t region = argmax(h.region_logits.row_span(i));
    const double offset = h.start_offsets(i, region);
    ActionProposal p;
    p.start = decode_start(static_cast<double>(t), region, offset, segment_len);
    p.end = decode_end(static_cast<double>(t), h.end_offsets[i], segment_len);
    auto probs = h.class_probs.row_span(i);
    p.label = argmax(probs);
    p.score = *std::max_element(probs.begin(), probs.begin() + static_cast<std::ptrdiff_t>(bg));
    p.generated_at = t;
    p.query = i;
    out.push_back(p);
  }
  return out;
}

/// Proposals that name a real class and have start <= end.
inline std::vector<ActionProposal> assemble_proposals(std::int64_t t, const HeadValues& h,
                                                      std::size_t segment_len) {
  std::vector<ActionProposal> out;
  for (const auto& p : decode_queries(t, h, segment_len))
    if (p.label != h.num_classes() && p.start <= p.end) out.push_back(p);
  return out;
}

/// End, start and classification heads, each a 2-layer FFN.
template <typename T>
struct PredictionHeads {
  FeedForward<T> end_offset;
  FeedForward<T> start_region;
  FeedForward<T> start_offset;
  FeedForward<T> classifier;

  static PredictionHeads create(ParamStore<T>& store, const ModelConfig& cfg, std::mt19937_64& rng) {
    const std::size_t d = cfg.model_dim;
    PredictionHeads h;
    h.end_offset = FeedForward<T>::create(store, "heads.end_offset", d, d, 1, rng);
    h.start_region = FeedForward<T>::create(store, "heads.start_region", d, d, cfg.regions(), rng);
    h.start_offset = FeedForward<T>::create(store, "heads.start_offset", d, d, cfg.regions(), rng);
    h.classifier = FeedForward<T>::create(store, "heads.classifier", 2 * d, d, cfg.num_classes + 1, rng);
    return h;
  }
};

}  // namespace matr
