#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "matr/config.hpp"
#include "matr/nn.hpp"
#include "matr/types.hpp"

namespace matr {

/// Bounded FIFO of admitted segments. Slots are kept in temporal order.
template <typename Payload>
class MemoryQueue {
 public:
  struct Slot {
    std::int64_t segment_index = 0;  // segment the slot belongs to
    std::int64_t end_frame = 0;      // absolute index of the slot's newest frame
    Payload features{};
  };

  explicit MemoryQueue(std::size_t capacity = 0) : capacity_(capacity) {}

  /// Admit `slot` if `flag`, then purge the oldest slot while over capacity.
  void update(Slot slot, bool flag) {
    if (flag) {
      if (!slots_.empty() && slot.end_frame <= slots_.back().end_frame)
        throw std::logic_error("memory queue: slots must arrive in temporal order");
      slots_.push_back(std::move(slot));
    }
    while (slots_.size() > capacity_) slots_.pop_front();
  }

  /// Start of a new video.
  void reset() { slots_.clear(); }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return slots_.size(); }
  bool empty() const { return slots_.empty(); }
  const std::deque<Slot>& slots() const { return slots_; }

  std::vector<std::int64_t> segment_indices() const {
    std::vector<std::int64_t> out;
    for (const auto& s : slots_) out.push_back(s.segment_index);
    return out;
  }

 private:
  std::size_t capacity_;
  std::deque<Slot> slots_;
};

/// Frames [t - L_s + 1, t] of the window ending at t.
inline std::pair<std::int64_t, std::int64_t> window_frames(std::int64_t t, std::size_t segment_len) {
  return {t - static_cast<std::int64_t>(segment_len) + 1, t};
}

/// True iff the integer frame range [first, last] shares a frame with any
/// annotated instance.
inline bool ground_truth_flag(std::int64_t first, std::int64_t last,
                              std::span<const ActionAnnotation> annotations) {
  for (const auto& a : annotations)
    if (a.start <= last && a.end >= first) return true;
  return false;
}

enum class FlagMode { Train, Infer };

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// Memory admission decision: the supplied ground truth while training,
/// sigmoid(logit) > threshold at inference.
inline bool flag_decision(double logit, double threshold, FlagMode mode, bool ground_truth = false) {
  if (mode == FlagMode::Train) return ground_truth;
  return sigmoid(logit) > threshold;
}

/// Index of the segment the frame belongs to.
inline std::int64_t segment_index_of(std::int64_t frame, std::size_t segment_len) {
  const auto ls = static_cast<std::int64_t>(segment_len);
  return frame >= 0 ? frame / ls : -((-frame + ls - 1) / ls);
}

/// Whether the window ending at t is offered to the memory queue.
inline bool push_attempted_at(std::int64_t t, const ModelConfig& cfg) {
  if (t + 1 < static_cast<std::int64_t>(cfg.segment_len)) return false;
  if (cfg.memory_push == MemoryPush::PerFrame) return true;
  return (t + 1) % static_cast<std::int64_t>(cfg.segment_len) == 0;
}

/// Transformer encoder over the window plus a learnable flag token appended
/// after the last frame.
template <typename T>
struct SegmentEncoder {
  std::vector<EncoderLayer<T>> layers;
  std::size_t flag_token = 0;
  FeedForward<T> flag_head;
  Tensor<T> positions;  // (L_s + 1) x D

  struct Output {
    Var<T> encoded;     // L_s x D
    Var<T> flag_logit;  // 1 x 1
  };

  static SegmentEncoder create(ParamStore<T>& store, const ModelConfig& cfg, std::mt19937_64& rng) {
    SegmentEncoder e;
    const T eps = static_cast<T>(cfg.layer_norm_eps);
    for (std::size_t i = 0; i < cfg.encoder_layers; ++i)
      e.layers.push_back(EncoderLayer<T>::create(store, "encoder.layers." + std::to_string(i),
                                                 cfg.model_dim, cfg.encoder_heads,
                                                 cfg.ffn_width(), eps, rng));
    e.flag_token = store.add("encoder.flag_token", init::normal<T>(1, cfg.model_dim, 0.02, rng));
    e.flag_head = FeedForward<T>::create(store, "encoder.flag_head", cfg.model_dim, cfg.model_dim,
                                         1, rng);
    e.positions = sinusoidal_pe<T>(cfg.segment_len + 1, cfg.model_dim);
    return e;
  }

  Output operator()(const Scope<T>& s, Var<T> segment) const {
    const std::size_t ls = positions.rows() - 1;
    if (segment.rows() != ls || segment.cols() != positions.cols())
      throw std::invalid_argument("segment encoder: expected " + std::to_string(ls) + "x" +
                                  std::to_string(positions.cols()) + " segment, got " +
                                  shape_string(segment.value().shape()));
    Var<T> x = concat_rows({segment, s(flag_token)});
    Var<T> pos = s.graph.constant(positions);
    for (const auto& layer : layers) x = layer(s, x, pos);
    Output out;
    out.encoded = slice_rows(x, 0, ls);
    out.flag_logit = flag_head(s, slice_rows(x, ls, ls + 1));
    return out;
  }
};

}  // namespace matr
