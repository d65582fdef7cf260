#pragma once

#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "matr/config.hpp"
#include "matr/data.hpp"
#include "matr/model.hpp"

namespace matr {

/// Writes `<manifest>` (names, shapes, offsets, config) and the matching .bin
/// payload of little-endian floats in parameter order.
inline void save_checkpoint(const fs::path& manifest, const MatrModel<float>& model,
                            const RunConfig& config) {
  const ParamStore<float>& params = model.params();
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& v = params.value(i);
    tensors.push_back({{"name", params.name(i)}, {"shape", v.shape()}, {"offset", offset}});
    offset += v.size();
  }
  RunConfig echoed = config;
  echoed.model = model.config();
  const nlohmann::json j = {{"format", "matr-checkpoint"},
                            {"version", 1},
                            {"dtype", "f32le"},
                            {"order", "row-major"},
                            {"count", offset},
                            {"config", echoed},
                            {"tensors", tensors}};
  if (manifest.has_parent_path()) fs::create_directories(manifest.parent_path());
  write_json(manifest, j);
  std::ofstream os(payload_path(manifest), std::ios::binary);
  if (!os) throw FormatError("cannot write " + payload_path(manifest).string());
  for (std::size_t i = 0; i < params.size(); ++i) write_f32le(os, params.value(i).data());
}

struct Checkpoint {
  RunConfig config;
  MatrModel<float> model;
};

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  c.profile = j.value("profile", c.profile);
  merge_config(c, j);
  return c;
}

inline Checkpoint load_checkpoint(const fs::path& manifest) {
  const nlohmann::json j = read_json(manifest);
  if (j.value("format", "") != "matr-checkpoint") throw FormatError(manifest.string() + ": not a checkpoint");
  if (j.value("dtype", "") != "f32le") throw FormatError(manifest.string() + ": unknown dtype");
  const RunConfig config = run_config_from_json(j.at("config"));
  MatrModel<float> model(config.model);
  const std::vector<float> payload = read_f32le(payload_path(manifest));
  if (payload.size() != j.at("count").get<std::size_t>())
    throw FormatError(manifest.string() + ": size mismatch between manifest and payload");
  const auto& tensors = j.at("tensors");
  ParamStore<float>& params = model.params();
  if (tensors.size() != params.size())
    throw FormatError(manifest.string() + ": checkpoint holds " + std::to_string(tensors.size()) +
                      " tensors, model expects " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    Tensor<float>& dst = params.value(i);
    if (t.at("name").get<std::string>() != params.name(i) || t.at("shape").get<Shape>() != dst.shape())
      throw FormatError(manifest.string() + ": tensor " + std::to_string(i) + " does not match " +
                        params.name(i) + " " + shape_string(dst.shape()));
    const auto offset = t.at("offset").get<std::size_t>();
    if (offset + dst.size() > payload.size()) throw FormatError(manifest.string() + ": tensor past end of payload");
    std::copy_n(payload.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.ptr());
  }
  return {config, std::move(model)};
}

}  // namespace matr
