#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "matr/config.hpp"
#include "matr/nn.hpp"

namespace matr {

/// Position of a memory row relative to the present: how many segments back
/// its segment lies, and how many frames back it lies from its segment's
/// newest frame.
struct RelativePosition {
  std::int64_t segment = 0;
  std::int64_t frame = 0;
  friend bool operator==(const RelativePosition&, const RelativePosition&) = default;
};

/// One entry per memory row: every frame of every slot (oldest slot first),
/// then the frames of the current segment.
inline std::vector<RelativePosition> relative_positions(std::span<const std::int64_t> slot_indices,
                                                        std::int64_t current_index,
                                                        std::size_t segment_len) {
  std::vector<RelativePosition> out;
  out.reserve((slot_indices.size() + 1) * segment_len);
  auto emit_segment = [&](std::int64_t rel_seg) {
    for (std::size_t f = 0; f < segment_len; ++f)
      out.push_back({rel_seg, static_cast<std::int64_t>(segment_len - 1 - f)});
  };
  for (std::int64_t idx : slot_indices) {
    if (idx > current_index)
      throw std::invalid_argument("relative_positions: slot index ahead of current segment");
    emit_segment(current_index - idx);
  }
  emit_segment(0);
  return out;
}

/// Concatenation of two D/2 sinusoidal encodings: relative segment position
/// in the first half, relative frame position in the second.
template <typename T>
Tensor<T> temporal_pe_2d(std::span<const RelativePosition> positions, std::size_t dim) {
  if (dim % 2 != 0) throw std::invalid_argument("temporal_pe_2d: dim must be even");
  const std::size_t half = dim / 2;
  Tensor<T> out(positions.size(), dim);
  for (std::size_t r = 0; r < positions.size(); ++r) {
    const auto seg = static_cast<double>(positions[r].segment);
    const auto frame = static_cast<double>(positions[r].frame);
    for (std::size_t c = 0; c < half; ++c) {
      out(r, c) = static_cast<T>(sinusoid(seg, c, half));
      out(r, half + c) = static_cast<T>(sinusoid(frame, c, half));
    }
  }
  return out;
}

/// Uniform subsampling with the given stride, anchored so the last (newest)
/// row is always kept. Returns kept row indices in ascending order.
inline std::vector<std::size_t> sample_rows(std::size_t rows, std::size_t stride) {
  if (stride == 0) throw std::invalid_argument("sample_rows: stride must be >= 1");
  std::vector<std::size_t> kept;
  if (rows == 0) return kept;
  std::size_t first = (rows - 1) % stride;
  for (std::size_t i = first; i < rows; i += stride) kept.push_back(i);
  return kept;
}

/// Rows of the start decoder's memory to keep. With `queue_only`, current
/// segment rows (the trailing `current_rows`) are all kept and only the queue
/// part is subsampled.
inline std::vector<std::size_t> memory_sample_indices(std::size_t total_rows,
                                                      std::size_t current_rows,
                                                      std::size_t stride, bool queue_only) {
  if (!queue_only) return sample_rows(total_rows, stride);
  const std::size_t queue_rows = total_rows - current_rows;
  std::vector<std::size_t> kept = sample_rows(queue_rows, stride);
  for (std::size_t i = queue_rows; i < total_rows; ++i) kept.push_back(i);
  return kept;
}

template <typename T>
Tensor<T> take_rows(const Tensor<T>& src, std::span<const std::size_t> rows) {
  const std::size_t C = src.cols();
  Tensor<T> out(rows.size(), C);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(src.ptr() + rows[i] * C, src.ptr() + (rows[i] + 1) * C, out.ptr() + i * C);
  return out;
}

/// Learnable class queries, boundary queries, and the positional embedding
/// each class/boundary pair shares.
struct InstanceQueries {
  std::size_t class_queries = 0;
  std::size_t boundary_queries = 0;
  std::size_t positions = 0;

  template <typename T>
  static InstanceQueries create(ParamStore<T>& store, std::size_t n, std::size_t dim,
                                std::mt19937_64& rng) {
    InstanceQueries q;
    q.class_queries = store.add("queries.class", init::normal<T>(n, dim, 0.02, rng));
    q.boundary_queries = store.add("queries.boundary", init::normal<T>(n, dim, 0.02, rng));
    q.positions = store.add("queries.positions", init::normal<T>(n, dim, 0.02, rng));
    return q;
  }
};

/// End decoder over the encoded segment and start decoder over the memory.
/// Both operate on 2N tokens: class rows [0, N), boundary rows [N, 2N).
template <typename T>
struct InstanceDecoder {
  InstanceQueries queries;
  std::vector<DecoderLayer<T>> end_layers;
  std::vector<DecoderLayer<T>> start_layers;
  std::size_t num_queries = 0;
  bool pe_on_values = true;

  static InstanceDecoder create(ParamStore<T>& store, const ModelConfig& cfg, std::mt19937_64& rng) {
    InstanceDecoder d;
    d.num_queries = cfg.num_queries;
    d.pe_on_values = cfg.memory_pe_on_values;
    d.queries = InstanceQueries::create<T>(store, cfg.num_queries, cfg.model_dim, rng);
    const T eps = static_cast<T>(cfg.layer_norm_eps);
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i)
      d.end_layers.push_back(DecoderLayer<T>::create(store, "end_decoder.layers." + std::to_string(i),
                                                     cfg.model_dim, cfg.decoder_heads,
                                                     cfg.ffn_width(), eps, rng));
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i)
      d.start_layers.push_back(DecoderLayer<T>::create(
          store, "start_decoder.layers." + std::to_string(i), cfg.model_dim, cfg.decoder_heads,
          cfg.ffn_width(), eps, rng));
    return d;
  }

  /// [E_pos; E_pos], the query positions shared by each class/boundary pair.
  Var<T> query_positions(const Scope<T>& s) const {
    Var<T> pos = s(queries.positions);
    return concat_rows({pos, pos});
  }

  /// Returns 2N embeddings: class rows then end-boundary rows.
  Var<T> end_decode(const Scope<T>& s, Var<T> encoded_segment, Var<T> segment_pos) const {
    Var<T> tgt = concat_rows({s(queries.class_queries), s(queries.boundary_queries)});
    Var<T> qpos = query_positions(s);
    for (const auto& layer : end_layers) tgt = layer(s, tgt, qpos, encoded_segment, segment_pos);
    return tgt;
  }

  /// Refines the end decoder output against the memory features. Returns 2N
  /// embeddings: class rows then start-boundary rows.
  Var<T> start_decode(const Scope<T>& s, Var<T> end_outputs, Var<T> memory, Var<T> memory_pe) const {
    if (memory.rows() == 0) throw std::invalid_argument("start decoder: empty memory features");
    if (end_outputs.rows() != 2 * num_queries)
      throw std::invalid_argument("start decoder: expected 2N end-decoder embeddings");
    Var<T> tgt = end_outputs;
    Var<T> qpos = query_positions(s);
    for (const auto& layer : start_layers)
      tgt = layer(s, tgt, qpos, memory, memory_pe, pe_on_values ? memory_pe : Var<T>{});
    return tgt;
  }
};

}  // namespace matr
