#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "matr/config.hpp"
#include "matr/heads.hpp"
#include "matr/instance_decoder.hpp"
#include "matr/memory_encoder.hpp"
#include "matr/nn.hpp"

namespace matr {

/// Projected features of one memory slot, as seen by a forward pass.
template <typename T>
struct MemoryView {
  std::int64_t segment_index = 0;
  const Tensor<T>* features = nullptr;  // L_s x D, treated as a constant
};

/// Graph nodes produced by one timestamp.
template <typename T>
struct ModelOutputs {
  Var<T> projected;      // L_s x D, current window after the input projection
  Var<T> encoded;        // L_s x D
  Var<T> flag_logit;     // 1 x 1
  Var<T> end_offsets;    // N x 1
  Var<T> region_logits;  // N x (L_m + 2)
  Var<T> start_offsets;  // N x (L_m + 2)
  Var<T> class_logits;   // N x (C + 1)

  HeadValues head_values() const {
    HeadValues h;
    h.end_offsets = end_offsets.value().template cast<double>();
    h.region_logits = region_logits.value().template cast<double>();
    h.start_offsets = start_offsets.value().template cast<double>();
    Tensor<double> logits = class_logits.value().template cast<double>();
    h.class_probs = Tensor<double>(logits.shape());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      auto row = logits.row_span(r);
      const double m = *std::max_element(row.begin(), row.end());
      double z = 0;
      for (std::size_t c = 0; c < row.size(); ++c) z += (h.class_probs(r, c) = std::exp(row[c] - m));
      for (std::size_t c = 0; c < row.size(); ++c) h.class_probs(r, c) /= z;
    }
    return h;
  }
};

/// Memory-augmented transformer for online action localisation: input
/// projection, segment encoder with flag token, end/start decoders and heads.
template <typename T>
class MatrModel {
 public:
  explicit MatrModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.init_seed);
    projection_ = Linear<T>::create(params_, "input_projection", cfg_.raw_dim, cfg_.model_dim, rng);
    encoder_ = SegmentEncoder<T>::create(params_, cfg_, rng);
    decoder_ = InstanceDecoder<T>::create(params_, cfg_, rng);
    heads_ = PredictionHeads<T>::create(params_, cfg_, rng);
    segment_pos_ = encoder_.positions.slice_rows(0, cfg_.segment_len);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const SegmentEncoder<T>& encoder() const { return encoder_; }
  const InstanceDecoder<T>& decoder() const { return decoder_; }
  const PredictionHeads<T>& heads() const { return heads_; }

  /// Same architecture with parameters converted to another precision.
  template <typename U>
  MatrModel<U> cast() const {
    MatrModel<U> out(cfg_);
    for (std::size_t i = 0; i < params_.size(); ++i)
      out.params().value(i) = params_.value(i).template cast<U>();
    return out;
  }

  /// Input projection outside any graph; used to fill memory slots.
  Tensor<T> project(const Tensor<T>& raw) const {
    Graph<T> g(false);
    Scope<T> s{g, params_};
    return projection_(s, g.constant(raw)).value();
  }

  /// Forward pass for the window ending at frame t. `memory` lists queue slots
  /// oldest first; `current_segment` is the segment index of frame t.
  ModelOutputs<T> forward(Graph<T>& g, const Tensor<T>& window_raw,
                          std::span<const MemoryView<T>> memory,
                          std::int64_t current_segment) const {
    if (window_raw.rows() != cfg_.segment_len || window_raw.cols() != cfg_.raw_dim)
      throw std::invalid_argument("model: window must be " + std::to_string(cfg_.segment_len) +
                                  "x" + std::to_string(cfg_.raw_dim) + ", got " +
                                  shape_string(window_raw.shape()));
    Scope<T> s{g, params_};
    ModelOutputs<T> out;
    out.projected = projection_(s, g.constant(window_raw));

    auto enc = encoder_(s, out.projected);
    out.encoded = enc.encoded;
    out.flag_logit = enc.flag_logit;

    Var<T> end_emb = decoder_.end_decode(s, enc.encoded, g.constant(segment_pos_));

    // Memory features: queue slots then the current window, with 2D positions.
    std::vector<Var<T>> parts;
    std::vector<std::int64_t> slot_indices;
    for (const auto& m : memory) {
      if (!m.features || m.features->rows() != cfg_.segment_len || m.features->cols() != cfg_.model_dim)
        throw std::invalid_argument("model: memory slot has wrong shape");
      parts.push_back(g.constant(*m.features));
      slot_indices.push_back(m.segment_index);
    }
    parts.push_back(out.projected);
    Var<T> mem = concat_rows<T>(parts);
    const auto rel = relative_positions(slot_indices, current_segment, cfg_.segment_len);
    Tensor<T> pe = temporal_pe_2d<T>(rel, cfg_.model_dim);
    const auto kept = memory_sample_indices(mem.rows(), cfg_.segment_len,
                                            cfg_.memory_sample_stride, cfg_.sample_queue_only);
    if (kept.size() != mem.rows()) {
      mem = gather_rows(mem, kept);
      pe = take_rows(pe, kept);
    }
    Var<T> start_emb = decoder_.start_decode(s, end_emb, mem, g.constant(std::move(pe)));

    const std::size_t n = cfg_.num_queries;
    Var<T> end_boundary = slice_rows(end_emb, n, 2 * n);
    Var<T> start_boundary = slice_rows(start_emb, n, 2 * n);
    Var<T> class_emb = concat_cols({slice_rows(end_emb, 0, n), slice_rows(start_emb, 0, n)});
    out.end_offsets = heads_.end_offset(s, end_boundary);
    out.region_logits = heads_.start_region(s, start_boundary);
    out.start_offsets = heads_.start_offset(s, start_boundary);
    out.class_logits = heads_.classifier(s, class_emb);
    return out;
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
  Linear<T> projection_;
  SegmentEncoder<T> encoder_;
  InstanceDecoder<T> decoder_;
  PredictionHeads<T> heads_;
  Tensor<T> segment_pos_;
};

}  // namespace matr
