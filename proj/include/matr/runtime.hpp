#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "matr/config.hpp"
#include "matr/data.hpp"
#include "matr/heads.hpp"
#include "matr/memory_encoder.hpp"
#include "matr/model.hpp"
#include "matr/types.hpp"

namespace matr {

/// Proposals of one timestamp that survive, in descending score order:
/// no future end, score at least score_min, class-wise greedy NMS, and no
/// same-class overlap above the threshold with anything already committed.
inline std::vector<ActionProposal> online_nms(std::span<const ActionProposal> proposals,
                                              std::span<const ActionInstance> committed,
                                              const InferenceConfig& cfg, std::int64_t t) {
  std::vector<ActionProposal> live;
  for (const auto& p : proposals)
    if (p.end <= static_cast<double>(t) && p.score >= cfg.score_min) live.push_back(p);
  std::stable_sort(live.begin(), live.end(),
                   [](const ActionProposal& a, const ActionProposal& b) { return a.score > b.score; });

  std::vector<ActionProposal> kept;
  for (const auto& p : live) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (k.label == p.label && tiou(k.interval(), p.interval()) > cfg.nms_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(p);
  }

  std::vector<ActionProposal> out;
  for (const auto& p : kept) {
    bool suppressed = false;
    for (const auto& c : committed)
      if (c.label == p.label && tiou(c.interval(), p.interval()) > cfg.nms_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) out.push_back(p);
  }
  return out;
}

/// Per-stream state of the online detector.
template <typename T>
struct StreamState {
  std::string video_id;
  std::deque<std::vector<T>> buffer;  // last L_s raw frames
  MemoryQueue<Tensor<T>> memory;
  std::vector<ActionInstance> committed;
  std::int64_t t = -1;  // index of the newest frame seen

  StreamState() = default;
  StreamState(std::string id, const ModelConfig& cfg) : video_id(std::move(id)), memory(cfg.memory_len) {}

  /// Start of a new video.
  void reset(std::string id) {
    video_id = std::move(id);
    buffer.clear();
    memory.reset();
    committed.clear();
    t = -1;
  }
};

/// Consumes one frame and returns the instances committed at that frame.
/// Decoding sees the memory as it was before this frame's push.
template <typename T>
std::vector<ActionInstance> stream_step(const MatrModel<T>& model, StreamState<T>& state,
                                        std::span<const float> frame, const InferenceConfig& cfg) {
  const ModelConfig& mc = model.config();
  if (frame.size() != mc.raw_dim)
    throw std::invalid_argument("stream: frame has " + std::to_string(frame.size()) +
                                " features, expected " + std::to_string(mc.raw_dim));
  ++state.t;
  state.buffer.emplace_back(frame.begin(), frame.end());
  while (state.buffer.size() > mc.segment_len) state.buffer.pop_front();
  if (state.buffer.size() < mc.segment_len) return {};

  Tensor<T> window(mc.segment_len, mc.raw_dim);
  for (std::size_t r = 0; r < mc.segment_len; ++r)
    std::copy(state.buffer[r].begin(), state.buffer[r].end(), window.row_span(r).begin());

  std::vector<MemoryView<T>> views;
  for (const auto& slot : state.memory.slots()) views.push_back({slot.segment_index, &slot.features});

  Graph<T> g(false);
  const std::int64_t t = state.t;
  const ModelOutputs<T> out = model.forward(g, window, views, segment_index_of(t, mc.segment_len));

  if (push_attempted_at(t, mc)) {
    const bool flag = flag_decision(static_cast<double>(out.flag_logit.value()[0]), cfg.flag_threshold,
                                    FlagMode::Infer);
    state.memory.update({segment_index_of(t, mc.segment_len), t, out.projected.value()}, flag);
  }

  const auto proposals = assemble_proposals(t, out.head_values(), mc.segment_len);
  std::vector<ActionInstance> fresh;
  for (const auto& p : online_nms(proposals, state.committed, cfg, t))
    fresh.push_back({p.start, p.end, p.label, p.score, t});
  state.committed.insert(state.committed.end(), fresh.begin(), fresh.end());
  return fresh;
}

/// Runs a whole video through a fresh stream.
template <typename T>
std::vector<ActionInstance> run_stream(const MatrModel<T>& model, const Tensor<float>& features,
                                       const InferenceConfig& cfg, const std::string& video_id = "") {
  StreamState<T> state(video_id, model.config());
  for (std::size_t f = 0; f < features.rows(); ++f) stream_step(model, state, features.row_span(f), cfg);
  return state.committed;
}

// ---------------------------------------------------------------------------
// Detections as JSON lines

struct Detection {
  std::string video_id;
  ActionInstance instance;
};

inline nlohmann::json detection_to_json(const Detection& d) {
  return {{"video_id", d.video_id},       {"t_committed", d.instance.committed_at},
          {"start", d.instance.start},    {"end", d.instance.end},
          {"class", d.instance.label},    {"score", d.instance.score}};
}

inline Detection detection_from_json(const nlohmann::json& j) {
  Detection d;
  d.video_id = j.at("video_id").get<std::string>();
  d.instance.committed_at = j.at("t_committed").get<std::int64_t>();
  d.instance.start = j.at("start").get<double>();
  d.instance.end = j.at("end").get<double>();
  d.instance.label = j.at("class").get<std::size_t>();
  d.instance.score = j.at("score").get<double>();
  return d;
}

inline void write_detections(std::ostream& os, std::span<const Detection> detections) {
  for (const auto& d : detections) os << detection_to_json(d).dump() << '\n';
}

inline std::vector<Detection> read_detections(std::istream& is) {
  std::vector<Detection> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(is, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(detection_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("detections line " + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<Detection> read_detections(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_detections(is);
}

}  // namespace matr
