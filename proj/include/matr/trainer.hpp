#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "matr/config.hpp"
#include "matr/data.hpp"
#include "matr/heads.hpp"
#include "matr/losses.hpp"
#include "matr/matching.hpp"
#include "matr/memory_encoder.hpp"
#include "matr/model.hpp"
#include "matr/optim.hpp"

namespace matr {

/// Instances whose end lies in [t - T_d + 1, t + T_a], with their targets,
/// and the memory flag of the window ending at t.
struct TrainTarget {
  std::int64_t t = 0;
  std::vector<MatchedTarget> instances;  // `query` is filled in by matching
  bool flag = false;
};

inline TrainTarget build_targets(std::span<const ActionAnnotation> annotations, std::int64_t t,
                                 const ModelConfig& model, const TrainConfig& train) {
  TrainTarget out;
  out.t = t;
  for (const auto& a : annotations) {
    if (a.end < t - train.detect_range + 1 || a.end > t + train.anticipate_range) continue;
    MatchedTarget m;
    m.label = a.label;
    m.start = static_cast<double>(a.start);
    m.end = static_cast<double>(a.end);
    const auto st = encode_start_target(static_cast<double>(t), m.start, model.segment_len,
                                        model.memory_len, model.offset_max);
    m.region = st.region;
    m.start_offset = st.offset;
    m.end_offset = encode_end_target(static_cast<double>(t), m.end, model.segment_len);
    out.instances.push_back(m);
  }
  const auto [first, last] = window_frames(t, model.segment_len);
  out.flag = ground_truth_flag(first, last, annotations);
  return out;
}

/// A memory slot as seen at time t: the window ending at `end_frame`.
struct SlotRef {
  std::int64_t segment_index = 0;
  std::int64_t end_frame = 0;
};

/// Queue contents at time t when every earlier push used the ground-truth
/// flag. Pushes at t itself are not yet visible.
inline std::vector<SlotRef> replay_memory(std::span<const ActionAnnotation> annotations,
                                          std::int64_t t, const ModelConfig& cfg) {
  MemoryQueue<char> queue(cfg.memory_len);
  for (std::int64_t p = static_cast<std::int64_t>(cfg.segment_len) - 1; p < t; ++p) {
    if (!push_attempted_at(p, cfg)) continue;
    const auto [first, last] = window_frames(p, cfg.segment_len);
    queue.update({segment_index_of(p, cfg.segment_len), p, 0}, ground_truth_flag(first, last, annotations));
  }
  std::vector<SlotRef> out;
  for (const auto& s : queue.slots()) out.push_back({s.segment_index, s.end_frame});
  return out;
}

template <typename T>
Tensor<T> window_of(const Tensor<float>& features, std::int64_t t, std::size_t segment_len) {
  const auto [first, last] = window_frames(t, segment_len);
  if (first < 0 || last >= static_cast<std::int64_t>(features.rows()))
    throw std::out_of_range("window ending at " + std::to_string(t) + " lies outside the video");
  return features.slice_rows(static_cast<std::size_t>(first), static_cast<std::size_t>(last) + 1)
      .template cast<T>();
}

/// Assigns every target a distinct query by maximising class probability
/// plus tIoU. When there are more targets than queries the earliest-ending
/// ones are dropped.
inline std::vector<MatchedTarget> match_targets(std::vector<MatchedTarget> targets,
                                                const HeadValues& h, std::int64_t t,
                                                std::size_t segment_len) {
  const std::size_t n = h.num_queries();
  if (targets.size() > n) {
    std::stable_sort(targets.begin(), targets.end(),
                     [](const MatchedTarget& a, const MatchedTarget& b) { return a.end > b.end; });
    targets.resize(n);
  }
  if (targets.empty()) return targets;
  const auto proposals = decode_queries(t, h, segment_len);
  Tensor<double> sim(targets.size(), n);
  for (std::size_t i = 0; i < targets.size(); ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const auto& p = proposals[j];
      const Interval pred{std::min(p.start, p.end), std::max(p.start, p.end)};
      sim(i, j) = matching_cost(h.class_probs(j, targets[i].label), {targets[i].start, targets[i].end}, pred);
    }
  const auto assignment = hungarian_max(sim);
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i].query = assignment[i];
  return targets;
}

/// Projected features of the memory slots visible at time t. They enter the
/// forward pass as constants.
template <typename T>
struct SampleMemory {
  std::vector<std::int64_t> segment_indices;
  std::vector<Tensor<T>> features;

  std::vector<MemoryView<T>> views() const {
    std::vector<MemoryView<T>> out;
    for (std::size_t i = 0; i < features.size(); ++i) out.push_back({segment_indices[i], &features[i]});
    return out;
  }
};

template <typename T>
SampleMemory<T> sample_memory(const MatrModel<T>& model, const VideoData& video, std::int64_t t) {
  SampleMemory<T> m;
  for (const auto& s : replay_memory(video.instances, t, model.config())) {
    m.segment_indices.push_back(s.segment_index);
    m.features.push_back(model.project(window_of<T>(video.features, s.end_frame, model.config().segment_len)));
  }
  return m;
}

/// Forward pass and the five losses for the window of `video` ending at t.
template <typename T>
LossParts<T> sample_loss(const MatrModel<T>& model, Graph<T>& g, const VideoData& video,
                         std::int64_t t, const TrainConfig& train, const SampleMemory<T>& memory) {
  const ModelConfig& cfg = model.config();
  const TrainTarget target = build_targets(video.instances, t, cfg, train);
  const ModelOutputs<T> out =
      model.forward(g, window_of<T>(video.features, t, cfg.segment_len), memory.views(),
                    segment_index_of(t, cfg.segment_len));

  const auto matched = match_targets(target.instances, out.head_values(), t, cfg.segment_len);
  std::vector<std::size_t> labels(cfg.num_queries, cfg.num_classes);
  for (const auto& m : matched) labels[m.query] = m.label;

  LossParts<T> parts;
  parts.classification = focal_loss(out.class_logits, labels, train.focal_alpha, train.focal_gamma);
  parts.start = start_loss(out.region_logits, out.start_offsets, matched);
  parts.end = end_loss(out.end_offsets, matched);
  if (matched.empty()) {
    parts.diou = g.constant(Tensor<T>::scalar(T(0)));
  } else {
    auto [ps, pe] = predicted_boundaries(out.region_logits, out.start_offsets, out.end_offsets, t,
                                         cfg.segment_len, matched);
    std::vector<Interval> gt;
    for (const auto& m : matched) gt.push_back({m.start, m.end});
    parts.diou = diou_loss(ps, pe, gt);
  }
  parts.flag = flag_loss(out.flag_logit, target.flag);
  parts.total = add(add(add(parts.classification, parts.start), add(parts.end, parts.diou)), parts.flag);
  return parts;
}

template <typename T>
LossParts<T> sample_loss(const MatrModel<T>& model, Graph<T>& g, const VideoData& video,
                         std::int64_t t, const TrainConfig& train) {
  return sample_loss(model, g, video, t, train, sample_memory(model, video, t));
}

struct TrainSample {
  std::size_t video = 0;
  std::int64_t t = 0;
};

/// Every timestamp with at least one qualifying instance, plus
/// `negative_ratio` times as many random timestamps without one.
inline std::vector<TrainSample> sample_timestamps(const Dataset& data, const ModelConfig& model,
                                                  const TrainConfig& train, std::mt19937_64& rng) {
  std::vector<TrainSample> positives, negatives;
  for (std::size_t v = 0; v < data.videos.size(); ++v) {
    const auto& video = data.videos[v];
    for (std::int64_t t = static_cast<std::int64_t>(model.segment_len) - 1; t < video.length(); ++t) {
      bool qualifies = false;
      for (const auto& a : video.instances)
        qualifies |= a.end >= t - train.detect_range + 1 && a.end <= t + train.anticipate_range;
      (qualifies ? positives : negatives).push_back({v, t});
    }
  }
  std::shuffle(negatives.begin(), negatives.end(), rng);
  const auto wanted = static_cast<std::size_t>(std::llround(train.negative_ratio * static_cast<double>(positives.size())));
  negatives.resize(std::min(negatives.size(), wanted));
  std::vector<TrainSample> out = std::move(positives);
  out.insert(out.end(), negatives.begin(), negatives.end());
  std::shuffle(out.begin(), out.end(), rng);
  if (train.max_samples_per_epoch > 0 && out.size() > train.max_samples_per_epoch)
    out.resize(train.max_samples_per_epoch);
  return out;
}

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, nlohmann::json state)
      : std::runtime_error(what), state_(std::move(state)) {}
  const nlohmann::json& state() const { return state_; }

 private:
  nlohmann::json state_;
};

struct LossTotals {
  double classification = 0, start = 0, end = 0, diou = 0, flag = 0, total = 0;
  std::size_t samples = 0;

  template <typename T>
  void add(const LossParts<T>& p) {
    classification += p.classification.value()[0];
    start += p.start.value()[0];
    end += p.end.value()[0];
    diou += p.diou.value()[0];
    flag += p.flag.value()[0];
    total += p.total.value()[0];
    ++samples;
  }

  nlohmann::json mean_json() const {
    const double n = samples ? static_cast<double>(samples) : 1.0;
    return {{"classification", classification / n}, {"start", start / n}, {"end", end / n},
            {"diou", diou / n}, {"flag", flag / n}, {"total", total / n}};
  }
};

struct EpochReport {
  std::size_t epoch = 0;
  double lr = 0.0;  // rate at the start of the epoch
  LossTotals losses;
  std::size_t steps = 0;
  double seconds = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"epoch", epoch}, {"lr", lr}, {"samples", losses.samples},
                        {"steps", steps}, {"seconds", seconds}};
    j["loss"] = losses.mean_json();
    return j;
  }
};

/// Mini-batch trainer. Gradients of a batch are averaged in sample order,
/// clipped, and applied with Adam at the scheduled rate.
template <typename T>
class Trainer {
 public:
  Trainer(MatrModel<T>& model, TrainConfig cfg)
      : model_(model),
        cfg_(std::move(cfg)),
        adam_(model.params(), cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps),
        rng_(cfg_.seed) {
    cfg_.validate();
  }

  /// One optimiser step over `batch`; returns the summed losses.
  LossTotals step(const Dataset& data, std::span<const TrainSample> batch, double lr) {
    ParamStore<T>& params = model_.params();
    std::vector<Tensor<T>> grads;
    for (std::size_t i = 0; i < params.size(); ++i) grads.emplace_back(params.value(i).shape());
    LossTotals totals;
    for (const auto& s : batch) {
      const VideoData& video = data.videos.at(s.video);
      Graph<T> g;
      LossParts<T> parts;
      try {
        parts = sample_loss(model_, g, video, s.t, cfg_);
      } catch (const NumericError& e) {
        throw TrainingError(std::string("non-finite value during training: ") + e.what(),
                            diagnostic(video, s.t, lr));
      }
      g.backward(parts.total);
      for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor<T> gi = g.grad_of(params.value(i));
        for (std::size_t k = 0; k < gi.size(); ++k) grads[i][k] += gi[k];
      }
      totals.add(parts);
    }
    const T inv = static_cast<T>(1.0 / static_cast<double>(batch.size()));
    for (auto& gi : grads) {
      for (T& v : gi.data()) v *= inv;
      if (!gi.all_finite())
        throw TrainingError("non-finite gradient", diagnostic(data.videos.at(batch.front().video),
                                                               batch.front().t, lr));
    }
    clip_grad_norm(grads, cfg_.grad_clip);
    adam_.step(params, grads, lr);
    return totals;
  }

  EpochReport run_epoch(const Dataset& data, std::size_t epoch) {
    const auto start_time = std::chrono::steady_clock::now();
    const auto samples = sample_timestamps(data, model_.config(), cfg_, rng_);
    EpochReport report;
    report.epoch = epoch;
    const std::size_t batches = (samples.size() + cfg_.batch_size - 1) / cfg_.batch_size;
    report.lr = lr_schedule(static_cast<double>(epoch), cfg_);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg_.batch_size;
      const std::size_t hi = std::min(samples.size(), lo + cfg_.batch_size);
      const double lr = lr_schedule(static_cast<double>(epoch) + static_cast<double>(b) / static_cast<double>(batches), cfg_);
      const LossTotals t = step(data, std::span(samples).subspan(lo, hi - lo), lr);
      report.losses.classification += t.classification;
      report.losses.start += t.start;
      report.losses.end += t.end;
      report.losses.diou += t.diou;
      report.losses.flag += t.flag;
      report.losses.total += t.total;
      report.losses.samples += t.samples;
      ++report.steps;
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    return report;
  }

  /// Runs every configured epoch, writing one JSON line per epoch to `metrics`
  /// when given.
  std::vector<EpochReport> fit(const Dataset& data, std::ostream* metrics = nullptr,
                               const std::function<void(const EpochReport&)>& on_epoch = {}) {
    std::vector<EpochReport> reports;
    for (std::size_t e = 0; e < cfg_.epochs; ++e) {
      reports.push_back(run_epoch(data, e));
      if (metrics) *metrics << reports.back().to_json().dump() << '\n' << std::flush;
      if (on_epoch) on_epoch(reports.back());
    }
    return reports;
  }

  std::size_t steps() const { return adam_.steps(); }

 private:
  nlohmann::json diagnostic(const VideoData& video, std::int64_t t, double lr) const {
    nlohmann::json params = nlohmann::json::array();
    const ParamStore<T>& store = model_.params();
    for (std::size_t i = 0; i < store.size(); ++i) {
      double max_abs = 0.0;
      bool finite = true;
      for (T v : store.value(i).data()) {
        finite &= std::isfinite(static_cast<double>(v));
        max_abs = std::max(max_abs, std::abs(static_cast<double>(v)));
      }
      params.push_back({{"name", store.name(i)}, {"finite", finite}, {"max_abs", max_abs}});
    }
    return {{"video_id", video.id}, {"t", t}, {"lr", lr}, {"optimizer_steps", adam_.steps()},
            {"parameters", params}};
  }

  MatrModel<T>& model_;
  TrainConfig cfg_;
  Adam<T> adam_;
  std::mt19937_64 rng_;
};

}  // namespace matr
