#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "matr/config.hpp"
#include "matr/data.hpp"
#include "matr/gradcheck.hpp"
#include "matr/model.hpp"
#include "matr/trainer.hpp"

namespace matr {

struct ModelGradCheck {
  GradCheckReport report;
  std::string worst_parameter;
  std::size_t parameters = 0;
  std::int64_t t = 0;
  std::size_t memory_slots = 0;
  std::size_t matched = 0;
  double seconds = 0.0;
};

/// A timestamp of `video` whose window is flagged, has a target, and sees a
/// non-empty memory, so every loss term is active. Prefers a full memory.
inline std::int64_t informative_timestamp(const VideoData& video, const ModelConfig& model,
                                          const TrainConfig& train) {
  std::int64_t best = -1;
  std::size_t best_slots = 0;
  for (std::int64_t t = static_cast<std::int64_t>(model.segment_len) - 1; t < video.length(); ++t) {
    const auto target = build_targets(video.instances, t, model, train);
    const std::size_t slots = replay_memory(video.instances, t, model).size();
    if (target.flag && !target.instances.empty() && slots > best_slots) {
      best = t;
      best_slots = slots;
    }
  }
  if (best < 0) throw std::runtime_error("gradcheck: no timestamp exercises every loss term");
  return best;
}

/// Finite-difference check of the total training loss with respect to every
/// model parameter, in double precision, on a synthetic video.
inline ModelGradCheck model_gradcheck(const RunConfig& cfg, std::uint64_t seed, double eps = 1e-5) {
  const auto start = std::chrono::steady_clock::now();
  SyntheticConfig sc = cfg.synthetic;
  sc.raw_dim = cfg.model.raw_dim;
  sc.num_classes = cfg.model.num_classes;
  sc.num_videos = 1;
  sc.min_instances = std::max<std::size_t>(sc.min_instances, 1);
  sc.seed = seed;
  const Dataset data = generate_dataset(sc);
  const VideoData& video = data.videos.front();

  ModelConfig mc = cfg.model;
  mc.init_seed = seed;
  MatrModel<double> model(mc);
  const std::int64_t t = informative_timestamp(video, mc, cfg.train);
  const SampleMemory<double> memory = sample_memory(model, video, t);

  ModelGradCheck out;
  out.t = t;
  out.memory_slots = memory.features.size();
  out.matched = build_targets(video.instances, t, mc, cfg.train).instances.size();
  out.parameters = model.params().numel();
  auto leaves = model.params().pointers();
  out.report = finite_diff_check(
      [&](Graph<double>& g) { return sample_loss(model, g, video, t, cfg.train, memory).total; },
      std::span<Tensor<double>* const>(leaves), eps);
  out.worst_parameter = model.params().name(out.report.worst_leaf);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace matr
