#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace matr {

/// When the runtime attempts to admit the current window into memory.
enum class MemoryPush {
  SegmentAligned,  // once per L_s frames, when the window is a whole segment
  PerFrame,        // at every frame
};

NLOHMANN_JSON_SERIALIZE_ENUM(MemoryPush, {{MemoryPush::SegmentAligned, "segment-aligned"},
                                          {MemoryPush::PerFrame, "per-frame"}})

struct ModelConfig {
  std::size_t raw_dim = 32;        // D_raw, width of input frame features
  std::size_t model_dim = 64;      // D
  std::size_t segment_len = 16;    // L_s
  std::size_t memory_len = 4;      // L_m
  std::size_t num_queries = 6;     // N
  std::size_t num_classes = 4;     // C, background is index C
  std::size_t encoder_layers = 3;
  std::size_t encoder_heads = 8;
  std::size_t decoder_layers = 5;
  std::size_t decoder_heads = 4;
  std::size_t ffn_dim = 0;         // 0 means 4 * model_dim
  std::size_t memory_sample_stride = 2;
  bool sample_queue_only = false;
  bool memory_pe_on_values = true;
  MemoryPush memory_push = MemoryPush::SegmentAligned;
  double layer_norm_eps = 1e-5;
  double offset_max = 4.0;         // clamp for the start offset of the oldest region
  std::uint64_t init_seed = 0;

  std::size_t regions() const { return memory_len + 2; }
  std::size_t ffn_width() const { return ffn_dim == 0 ? 4 * model_dim : ffn_dim; }

  void validate() const {
    if (model_dim == 0 || segment_len == 0 || num_queries == 0 || num_classes == 0 || raw_dim == 0)
      throw std::invalid_argument("model config: dimensions must be positive");
    if (model_dim % 2 != 0) throw std::invalid_argument("model config: model_dim must be even");
    if (encoder_heads == 0 || model_dim % encoder_heads != 0)
      throw std::invalid_argument("model config: model_dim not divisible by encoder_heads");
    if (decoder_heads == 0 || model_dim % decoder_heads != 0)
      throw std::invalid_argument("model config: model_dim not divisible by decoder_heads");
    if (memory_sample_stride == 0)
      throw std::invalid_argument("model config: memory_sample_stride must be >= 1");
  }
};

struct InferenceConfig {
  double flag_threshold = 0.5;  // theta
  double nms_threshold = 0.3;
  double score_min = 0.5;
};

struct TrainConfig {
  std::int64_t detect_range = 16;      // T_d
  std::int64_t anticipate_range = 16;  // T_a
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double lr_min = 1e-8;
  double lr_max = 1e-5;
  double cycle_epochs = 10;            // T_cycle
  double warmup_epochs = 3;            // T_up
  double cycle_decay = 0.9;            // lr_max multiplier per cycle
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;              // global-norm clip, 0 disables
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  double negative_ratio = 1.0;         // negatives per positive timestamp
  std::size_t max_samples_per_epoch = 0;  // 0 keeps every sampled timestamp
  std::uint64_t seed = 0;

  void validate() const {
    if (detect_range < 0 || anticipate_range < 0)
      throw std::invalid_argument("train config: T_d and T_a must be >= 0");
    if (!(focal_alpha > 0.0 && focal_alpha <= 1.0))
      throw std::invalid_argument("train config: focal alpha must lie in (0, 1]");
    if (focal_gamma < 0.0) throw std::invalid_argument("train config: focal gamma must be >= 0");
    if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (cycle_epochs <= 0 || warmup_epochs < 0 || warmup_epochs >= cycle_epochs)
      throw std::invalid_argument("train config: need 0 <= warmup < cycle");
  }
};

struct SyntheticConfig {
  std::size_t num_videos = 200;
  std::size_t frames_per_video = 256;
  std::size_t raw_dim = 32;
  std::size_t num_classes = 4;
  std::size_t min_instance_len = 24;
  std::size_t max_instance_len = 64;
  std::size_t min_instances = 1;
  std::size_t max_instances = 3;
  std::size_t min_gap = 8;           // background frames kept between instances
  std::size_t ramp_len = 3;          // frames of linear fade-in / fade-out
  double signature_scale = 1.0;      // std of class signature entries
  double signature_noise = 0.15;     // per-instance perturbation of the signature
  double frame_noise = 1.0;          // per-frame noise inside instances
  double background_noise = 1.0;     // per-frame noise outside instances
  std::uint64_t signature_seed = 0;  // class signatures; share it across splits
  std::uint64_t seed = 0;            // video content

  void validate() const {
    if (min_instance_len == 0 || min_instance_len > max_instance_len)
      throw std::invalid_argument("synthetic config: bad instance length range");
    if (min_instances > max_instances)
      throw std::invalid_argument("synthetic config: bad instance count range");
    if (max_instances > 0 && max_instance_len > frames_per_video)
      throw std::invalid_argument("synthetic config: instance longer than video");
    if (raw_dim == 0 || num_classes == 0)
      throw std::invalid_argument("synthetic config: raw_dim and num_classes must be positive");
  }
};

struct RunConfig {
  std::string profile = "toy";
  ModelConfig model;
  InferenceConfig inference;
  TrainConfig train;
  SyntheticConfig synthetic;
};

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"raw_dim", c.raw_dim},
       {"model_dim", c.model_dim},
       {"segment_len", c.segment_len},
       {"memory_len", c.memory_len},
       {"num_queries", c.num_queries},
       {"num_classes", c.num_classes},
       {"encoder_layers", c.encoder_layers},
       {"encoder_heads", c.encoder_heads},
       {"decoder_layers", c.decoder_layers},
       {"decoder_heads", c.decoder_heads},
       {"ffn_dim", c.ffn_dim},
       {"memory_sample_stride", c.memory_sample_stride},
       {"sample_queue_only", c.sample_queue_only},
       {"memory_pe_on_values", c.memory_pe_on_values},
       {"memory_push", c.memory_push},
       {"layer_norm_eps", c.layer_norm_eps},
       {"offset_max", c.offset_max},
       {"init_seed", c.init_seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.raw_dim = j.value("raw_dim", c.raw_dim);
  c.model_dim = j.value("model_dim", c.model_dim);
  c.segment_len = j.value("segment_len", c.segment_len);
  c.memory_len = j.value("memory_len", c.memory_len);
  c.num_queries = j.value("num_queries", c.num_queries);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.encoder_heads = j.value("encoder_heads", c.encoder_heads);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.decoder_heads = j.value("decoder_heads", c.decoder_heads);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.memory_sample_stride = j.value("memory_sample_stride", c.memory_sample_stride);
  c.sample_queue_only = j.value("sample_queue_only", c.sample_queue_only);
  c.memory_pe_on_values = j.value("memory_pe_on_values", c.memory_pe_on_values);
  c.memory_push = j.value("memory_push", c.memory_push);
  c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
  c.offset_max = j.value("offset_max", c.offset_max);
  c.init_seed = j.value("init_seed", c.init_seed);
}

inline void to_json(nlohmann::json& j, const InferenceConfig& c) {
  j = {{"flag_threshold", c.flag_threshold},
       {"nms_threshold", c.nms_threshold},
       {"score_min", c.score_min}};
}

inline void from_json(const nlohmann::json& j, InferenceConfig& c) {
  c.flag_threshold = j.value("flag_threshold", c.flag_threshold);
  c.nms_threshold = j.value("nms_threshold", c.nms_threshold);
  c.score_min = j.value("score_min", c.score_min);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"detect_range", c.detect_range},
       {"anticipate_range", c.anticipate_range},
       {"focal_alpha", c.focal_alpha},
       {"focal_gamma", c.focal_gamma},
       {"lr_min", c.lr_min},
       {"lr_max", c.lr_max},
       {"cycle_epochs", c.cycle_epochs},
       {"warmup_epochs", c.warmup_epochs},
       {"cycle_decay", c.cycle_decay},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_eps", c.adam_eps},
       {"grad_clip", c.grad_clip},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"negative_ratio", c.negative_ratio},
       {"max_samples_per_epoch", c.max_samples_per_epoch},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.detect_range = j.value("detect_range", c.detect_range);
  c.anticipate_range = j.value("anticipate_range", c.anticipate_range);
  c.focal_alpha = j.value("focal_alpha", c.focal_alpha);
  c.focal_gamma = j.value("focal_gamma", c.focal_gamma);
  c.lr_min = j.value("lr_min", c.lr_min);
  c.lr_max = j.value("lr_max", c.lr_max);
  c.cycle_epochs = j.value("cycle_epochs", c.cycle_epochs);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.cycle_decay = j.value("cycle_decay", c.cycle_decay);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.negative_ratio = j.value("negative_ratio", c.negative_ratio);
  c.max_samples_per_epoch = j.value("max_samples_per_epoch", c.max_samples_per_epoch);
  c.seed = j.value("seed", c.seed);
}

inline void to_json(nlohmann::json& j, const SyntheticConfig& c) {
  j = {{"num_videos", c.num_videos},
       {"frames_per_video", c.frames_per_video},
       {"raw_dim", c.raw_dim},
       {"num_classes", c.num_classes},
       {"min_instance_len", c.min_instance_len},
       {"max_instance_len", c.max_instance_len},
       {"min_instances", c.min_instances},
       {"max_instances", c.max_instances},
       {"min_gap", c.min_gap},
       {"ramp_len", c.ramp_len},
       {"signature_scale", c.signature_scale},
       {"signature_noise", c.signature_noise},
       {"frame_noise", c.frame_noise},
       {"background_noise", c.background_noise},
       {"signature_seed", c.signature_seed},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticConfig& c) {
  c.num_videos = j.value("num_videos", c.num_videos);
  c.frames_per_video = j.value("frames_per_video", c.frames_per_video);
  c.raw_dim = j.value("raw_dim", c.raw_dim);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.min_instance_len = j.value("min_instance_len", c.min_instance_len);
  c.max_instance_len = j.value("max_instance_len", c.max_instance_len);
  c.min_instances = j.value("min_instances", c.min_instances);
  c.max_instances = j.value("max_instances", c.max_instances);
  c.min_gap = j.value("min_gap", c.min_gap);
  c.ramp_len = j.value("ramp_len", c.ramp_len);
  c.signature_scale = j.value("signature_scale", c.signature_scale);
  c.signature_noise = j.value("signature_noise", c.signature_noise);
  c.frame_noise = j.value("frame_noise", c.frame_noise);
  c.background_noise = j.value("background_noise", c.background_noise);
  c.signature_seed = j.value("signature_seed", c.signature_seed);
  c.seed = j.value("seed", c.seed);
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"profile", c.profile},
       {"model", c.model},
       {"inference", c.inference},
       {"train", c.train},
       {"synthetic", c.synthetic}};
}

/// Overlays the keys present in `j` onto `c`.
inline void merge_config(RunConfig& c, const nlohmann::json& j) {
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("inference")) from_json(j.at("inference"), c.inference);
  if (j.contains("train")) from_json(j.at("train"), c.train);
  if (j.contains("synthetic")) from_json(j.at("synthetic"), c.synthetic);
}

// ---------------------------------------------------------------------------
// Profiles

/// Desk-scale profile used by the end-to-end test.
inline RunConfig toy_profile() {
  RunConfig c;
  c.profile = "toy";
  c.model.raw_dim = 32;
  c.model.model_dim = 64;
  c.model.segment_len = 16;
  c.model.memory_len = 4;
  c.model.num_queries = 6;
  c.model.num_classes = 4;
  c.model.encoder_layers = 2;
  c.model.encoder_heads = 8;
  c.model.decoder_layers = 2;
  c.model.decoder_heads = 4;
  c.model.ffn_dim = 128;
  c.train.lr_min = 1e-5;
  c.train.lr_max = 1e-3;
  c.train.cycle_epochs = 3;
  c.train.warmup_epochs = 1;
  c.train.cycle_decay = 0.9;
  c.train.batch_size = 16;
  c.train.epochs = 3;
  c.train.grad_clip = 1.0;
  c.synthetic.num_videos = 200;
  c.synthetic.raw_dim = 32;
  c.synthetic.num_classes = 4;
  return c;
}

/// THUMOS14-scale hyperparameters.
inline RunConfig thumos_profile() {
  RunConfig c;
  c.profile = "thumos-like";
  c.model.raw_dim = 2048;
  c.model.model_dim = 1024;
  c.model.segment_len = 64;
  c.model.memory_len = 7;
  c.model.num_queries = 10;
  c.model.num_classes = 20;
  c.model.encoder_layers = 3;
  c.model.encoder_heads = 8;
  c.model.decoder_layers = 5;
  c.model.decoder_heads = 4;
  c.inference = {0.5, 0.3, 0.5};
  c.train.detect_range = 16;
  c.train.anticipate_range = 16;
  c.train.focal_alpha = 0.25;
  c.train.focal_gamma = 2.0;
  c.train.lr_min = 1e-8;
  c.train.lr_max = 1e-5;
  c.train.cycle_epochs = 10;
  c.train.warmup_epochs = 3;
  c.train.cycle_decay = 0.9;
  c.train.batch_size = 64;
  c.train.epochs = 100;
  c.synthetic.raw_dim = 2048;
  c.synthetic.num_classes = 20;
  c.synthetic.frames_per_video = 2048;
  c.synthetic.min_instance_len = 32;
  c.synthetic.max_instance_len = 512;
  return c;
}

/// MUSES-scale hyperparameters.
inline RunConfig muses_profile() {
  RunConfig c = thumos_profile();
  c.profile = "muses-like";
  c.model.raw_dim = 1024;
  c.model.segment_len = 75;
  c.model.memory_len = 15;
  c.model.num_queries = 6;
  c.model.num_classes = 25;
  c.train.focal_alpha = 1.0;
  c.train.focal_gamma = 5.0;
  c.train.batch_size = 75;
  c.train.epochs = 30;
  c.synthetic.raw_dim = 1024;
  c.synthetic.num_classes = 25;
  return c;
}

/// Smallest configuration exercised by gradient checks.
inline RunConfig tiny_profile() {
  RunConfig c = toy_profile();
  c.profile = "tiny";
  c.model.raw_dim = 6;
  c.model.model_dim = 8;
  c.model.segment_len = 4;
  c.model.memory_len = 2;
  c.model.num_queries = 2;
  c.model.num_classes = 3;
  c.model.encoder_layers = 3;
  c.model.encoder_heads = 8;
  c.model.decoder_layers = 5;
  c.model.decoder_heads = 4;
  c.model.ffn_dim = 0;
  c.train.detect_range = 4;
  c.train.anticipate_range = 4;
  c.synthetic.num_videos = 2;
  c.synthetic.frames_per_video = 40;
  c.synthetic.raw_dim = 6;
  c.synthetic.num_classes = 3;
  c.synthetic.min_instance_len = 5;
  c.synthetic.max_instance_len = 12;
  c.synthetic.min_gap = 2;
  c.synthetic.ramp_len = 1;
  return c;
}

inline RunConfig profile_config(std::string_view name) {
  if (name == "toy") return toy_profile();
  if (name == "thumos-like") return thumos_profile();
  if (name == "muses-like") return muses_profile();
  if (name == "tiny") return tiny_profile();
  throw std::invalid_argument("unknown profile: " + std::string(name));
}

}  // namespace matr
