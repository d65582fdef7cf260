#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "matr/config.hpp"
#include "matr/tensor.hpp"
#include "matr/types.hpp"

namespace matr {

namespace fs = std::filesystem;

/// Frame features of one video together with its annotations.
struct VideoData {
  std::string id;
  Tensor<float> features;  // T x D_raw
  std::vector<ActionAnnotation> instances;

  std::int64_t length() const { return static_cast<std::int64_t>(features.rows()); }
  VideoAnnotation annotation() const { return {id, length(), instances}; }
};

struct Dataset {
  std::size_t num_classes = 0;
  std::size_t raw_dim = 0;
  std::vector<VideoData> videos;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Raw little-endian float payloads

inline void write_f32le(std::ostream& os, std::span<const float> values) {
  std::vector<char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<float> read_f32le(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() % 4 != 0) throw FormatError(path.string() + ": payload is not a whole number of floats");
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Feature files: <stem>.json manifest + <stem>.bin payload

inline fs::path payload_path(const fs::path& manifest) {
  fs::path p = manifest;
  return p.replace_extension(".bin");
}

inline void write_features(const fs::path& manifest, const std::string& video_id,
                           const Tensor<float>& features) {
  nlohmann::json j = {{"video_id", video_id},
                      {"T", features.rows()},
                      {"D", features.cols()},
                      {"dtype", "f32le"},
                      {"order", "row-major"}};
  if (manifest.has_parent_path()) fs::create_directories(manifest.parent_path());
  write_json(manifest, j);
  std::ofstream os(payload_path(manifest), std::ios::binary);
  if (!os) throw FormatError("cannot write " + payload_path(manifest).string());
  write_f32le(os, features.data());
}

struct FeatureFile {
  std::string video_id;
  Tensor<float> features;
};

inline FeatureFile read_features(const fs::path& manifest) {
  const nlohmann::json j = read_json(manifest);
  const std::string dtype = j.value("dtype", "");
  if (dtype != "f32le") throw FormatError(manifest.string() + ": unknown dtype '" + dtype + "'");
  if (j.value("order", "row-major") != "row-major")
    throw FormatError(manifest.string() + ": only row-major order is supported");
  const auto T = j.at("T").get<std::size_t>();
  const auto D = j.at("D").get<std::size_t>();
  std::vector<float> data = read_f32le(payload_path(manifest));
  if (data.size() != T * D)
    throw FormatError(manifest.string() + ": size mismatch, manifest says " + std::to_string(T) +
                      "x" + std::to_string(D) + " but payload holds " + std::to_string(data.size()) +
                      " floats");
  return {j.at("video_id").get<std::string>(), Tensor<float>({T, D}, std::move(data))};
}

// ---------------------------------------------------------------------------
// Annotation file

inline nlohmann::json annotations_to_json(std::span<const VideoAnnotation> videos, std::size_t num_classes) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& v : videos) {
    nlohmann::json inst = nlohmann::json::array();
    for (const auto& a : v.instances) inst.push_back({{"start", a.start}, {"end", a.end}, {"class", a.label}});
    list.push_back({{"id", v.id}, {"length", v.length}, {"instances", inst}});
  }
  return {{"num_classes", num_classes}, {"videos", list}};
}

struct AnnotationFile {
  std::size_t num_classes = 0;
  std::vector<VideoAnnotation> videos;
};

inline AnnotationFile annotations_from_json(const nlohmann::json& j) {
  AnnotationFile out;
  out.num_classes = j.at("num_classes").get<std::size_t>();
  for (const auto& v : j.at("videos")) {
    VideoAnnotation va;
    va.id = v.at("id").get<std::string>();
    va.length = v.at("length").get<std::int64_t>();
    for (const auto& a : v.at("instances")) {
      ActionAnnotation ann{a.at("start").get<std::int64_t>(), a.at("end").get<std::int64_t>(),
                           a.at("class").get<std::size_t>()};
      if (ann.start < 0 || ann.start > ann.end || ann.end >= va.length || ann.label >= out.num_classes)
        throw FormatError("annotation out of range in video " + va.id);
      va.instances.push_back(ann);
    }
    out.videos.push_back(std::move(va));
  }
  return out;
}

inline AnnotationFile read_annotations(const fs::path& path) {
  try {
    return annotations_from_json(read_json(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Dataset directories: annotations.json, features/<id>.json|.bin

inline void save_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir / "features");
  std::vector<VideoAnnotation> anns;
  for (const auto& v : ds.videos) {
    write_features(dir / "features" / (v.id + ".json"), v.id, v.features);
    anns.push_back(v.annotation());
  }
  write_json(dir / "annotations.json", annotations_to_json(anns, ds.num_classes));
}

inline Dataset load_dataset(const fs::path& dir) {
  const AnnotationFile anns = read_annotations(dir / "annotations.json");
  Dataset ds;
  ds.num_classes = anns.num_classes;
  for (const auto& a : anns.videos) {
    FeatureFile f = read_features(dir / "features" / (a.id + ".json"));
    if (static_cast<std::int64_t>(f.features.rows()) != a.length)
      throw FormatError("video " + a.id + ": feature length differs from annotation length");
    if (ds.raw_dim == 0) ds.raw_dim = f.features.cols();
    if (f.features.cols() != ds.raw_dim) throw FormatError("video " + a.id + ": feature width differs");
    ds.videos.push_back({a.id, std::move(f.features), a.instances});
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic streams

/// Class signatures depend only on `signature_seed`, so splits generated with
/// different video seeds share the same classes.
inline std::vector<std::vector<double>> class_signatures(const SyntheticConfig& cfg) {
  std::mt19937_64 rng(cfg.signature_seed);
  std::normal_distribution<double> dist(0.0, cfg.signature_scale);
  std::vector<std::vector<double>> sigs(cfg.num_classes, std::vector<double>(cfg.raw_dim));
  for (auto& s : sigs)
    for (auto& v : s) v = dist(rng);
  return sigs;
}

/// Non-overlapping instances separated by at least `min_gap` frames.
inline std::vector<ActionAnnotation> plant_instances(const SyntheticConfig& cfg, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> count_dist(cfg.min_instances, cfg.max_instances);
  std::uniform_int_distribution<std::size_t> len_dist(cfg.min_instance_len, cfg.max_instance_len);
  std::uniform_int_distribution<std::size_t> class_dist(0, cfg.num_classes - 1);
  const auto T = static_cast<std::int64_t>(cfg.frames_per_video);
  std::size_t k = count_dist(rng);
  std::vector<std::int64_t> lengths;
  for (std::size_t i = 0; i < k; ++i) lengths.push_back(static_cast<std::int64_t>(len_dist(rng)));
  auto slack = [&]() {
    std::int64_t used = static_cast<std::int64_t>(lengths.size() + 1) * static_cast<std::int64_t>(cfg.min_gap);
    for (auto l : lengths) used += l;
    return T - used;
  };
  while (!lengths.empty() && slack() < 0) lengths.pop_back();
  const std::int64_t free = slack();
  std::vector<std::int64_t> cuts;
  std::uniform_int_distribution<std::int64_t> cut_dist(0, std::max<std::int64_t>(free, 0));
  for (std::size_t i = 0; i < lengths.size(); ++i) cuts.push_back(cut_dist(rng));
  std::sort(cuts.begin(), cuts.end());
  std::vector<ActionAnnotation> out;
  std::int64_t prev_cut = 0;
  std::int64_t cursor = 0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    cursor += static_cast<std::int64_t>(cfg.min_gap) + (cuts[i] - prev_cut);
    prev_cut = cuts[i];
    out.push_back({cursor, cursor + lengths[i] - 1, class_dist(rng)});
    cursor += lengths[i];
  }
  return out;
}

inline VideoData generate_video(const SyntheticConfig& cfg,
                                const std::vector<std::vector<double>>& signatures,
                                std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  VideoData v;
  v.id = "v" + std::to_string(cfg.seed) + "_" + std::to_string(index);
  v.instances = plant_instances(cfg, rng);
  v.features = Tensor<float>(cfg.frames_per_video, cfg.raw_dim);
  std::normal_distribution<double> bg(0.0, cfg.background_noise);
  std::normal_distribution<double> fg(0.0, cfg.frame_noise);
  std::normal_distribution<double> perturb(0.0, cfg.signature_noise * cfg.signature_scale);
  for (std::size_t f = 0; f < cfg.frames_per_video; ++f)
    for (std::size_t d = 0; d < cfg.raw_dim; ++d) v.features(f, d) = static_cast<float>(bg(rng));
  const double ramp = static_cast<double>(cfg.ramp_len + 1);
  for (const auto& a : v.instances) {
    std::vector<double> sig = signatures[a.label];
    for (auto& s : sig) s += perturb(rng);
    for (std::int64_t f = a.start; f <= a.end; ++f) {
      const double amp = std::min({1.0, static_cast<double>(f - a.start + 1) / ramp,
                                   static_cast<double>(a.end - f + 1) / ramp});
      for (std::size_t d = 0; d < cfg.raw_dim; ++d)
        v.features(static_cast<std::size_t>(f), d) = static_cast<float>(amp * sig[d] + fg(rng));
    }
  }
  return v;
}

/// Background frames are noise; in-instance frames are the class signature
/// (perturbed per instance, ramped at both ends) plus noise.
inline Dataset generate_dataset(const SyntheticConfig& cfg) {
  cfg.validate();
  const auto sigs = class_signatures(cfg);
  Dataset ds;
  ds.num_classes = cfg.num_classes;
  ds.raw_dim = cfg.raw_dim;
  for (std::size_t i = 0; i < cfg.num_videos; ++i) ds.videos.push_back(generate_video(cfg, sigs, i));
  return ds;
}

}  // namespace matr
