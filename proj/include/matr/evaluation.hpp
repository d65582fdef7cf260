#pragma once

#include <algorithm>
#include <cstddef>
#include <iomanip>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "matr/runtime.hpp"
#include "matr/types.hpp"

namespace matr {

struct ScoredSegment {
  std::string video_id;
  Interval interval;
  double score = 0.0;
};

struct GroundTruthSegment {
  std::string video_id;
  Interval interval;
};

/// Area under the precision envelope (all-point interpolation).
inline double interpolated_area(std::span<const double> precision, std::span<const double> recall) {
  std::vector<double> p(precision.begin(), precision.end());
  for (std::size_t i = p.size(); i-- > 1;) p[i - 1] = std::max(p[i - 1], p[i]);
  double area = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    area += (recall[i] - prev_recall) * p[i];
    prev_recall = recall[i];
  }
  return area;
}

/// AP of one class. Predictions are taken by descending score; each takes the
/// unmatched ground truth of its video with the highest tIoU >= threshold.
inline double average_precision(std::span<const ScoredSegment> predictions,
                                std::span<const GroundTruthSegment> ground_truth, double threshold) {
  if (ground_truth.empty() || predictions.empty()) return 0.0;
  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return predictions[a].score > predictions[b].score;
  });
  std::vector<bool> used(ground_truth.size(), false);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto& p = predictions[order[rank]];
    double best = -1.0;
    std::size_t best_gt = 0;
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      if (used[g] || ground_truth[g].video_id != p.video_id) continue;
      const double iou = tiou(p.interval, ground_truth[g].interval);
      if (iou >= threshold && iou > best) {
        best = iou;
        best_gt = g;
      }
    }
    if (best >= 0.0) {
      used[best_gt] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(rank + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(ground_truth.size()));
  }
  return interpolated_area(precision, recall);
}

inline const std::vector<double>& default_thresholds() {
  static const std::vector<double> t{0.3, 0.4, 0.5, 0.6, 0.7};
  return t;
}

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<std::size_t> classes;            // classes with at least one ground truth
  std::vector<std::vector<double>> class_ap;   // [class][threshold]
  std::vector<double> map;                     // per threshold
  double average_map = 0.0;

  double map_at(double threshold) const {
    for (std::size_t i = 0; i < thresholds.size(); ++i)
      if (std::abs(thresholds[i] - threshold) < 1e-12) return map[i];
    throw std::out_of_range("eval report: threshold not evaluated");
  }

  nlohmann::json to_json() const {
    nlohmann::json per_class = nlohmann::json::array();
    for (std::size_t c = 0; c < classes.size(); ++c)
      per_class.push_back({{"class", classes[c]}, {"ap", class_ap[c]}});
    return {{"thresholds", thresholds}, {"map", map}, {"average_map", average_map},
            {"per_class", per_class}};
  }

  /// Percentages, one column per threshold plus the average.
  std::string table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1);
    os << std::left << std::setw(10) << "tIoU" << std::right;
    for (double t : thresholds) os << std::setw(8) << std::setprecision(1) << t;
    os << std::setw(9) << "Avg" << '\n';
    auto row = [&](const std::string& name, const std::vector<double>& values, double avg) {
      os << std::left << std::setw(10) << name << std::right << std::setprecision(1);
      for (double v : values) os << std::setw(8) << 100.0 * v;
      os << std::setw(9) << 100.0 * avg << '\n';
    };
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const auto& ap = class_ap[c];
      row("class " + std::to_string(classes[c]), ap,
          std::accumulate(ap.begin(), ap.end(), 0.0) / static_cast<double>(ap.size()));
    }
    row("mAP", map, average_map);
    return os.str();
  }
};

/// Per-class AP at every threshold; mAP averages the classes that have
/// ground truth, and the average mAP averages the thresholds.
inline EvalReport mean_ap(std::span<const Detection> detections,
                          std::span<const VideoAnnotation> annotations, std::size_t num_classes,
                          std::span<const double> thresholds) {
  if (thresholds.empty()) throw std::invalid_argument("mean_ap: no thresholds");
  std::vector<std::vector<GroundTruthSegment>> gt(num_classes);
  for (const auto& v : annotations)
    for (const auto& a : v.instances) {
      if (a.label >= num_classes) throw std::invalid_argument("mean_ap: annotation class out of range");
      gt[a.label].push_back({v.id, a.interval()});
    }
  std::vector<std::vector<ScoredSegment>> preds(num_classes);
  for (const auto& d : detections)
    if (d.instance.label < num_classes)
      preds[d.instance.label].push_back({d.video_id, d.instance.interval(), d.instance.score});

  EvalReport r;
  r.thresholds.assign(thresholds.begin(), thresholds.end());
  r.map.assign(thresholds.size(), 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (gt[c].empty()) continue;
    r.classes.push_back(c);
    std::vector<double> aps;
    for (double th : thresholds) aps.push_back(average_precision(preds[c], gt[c], th));
    r.class_ap.push_back(std::move(aps));
  }
  if (r.classes.empty()) throw std::invalid_argument("mean_ap: no ground-truth instances");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    for (const auto& aps : r.class_ap) r.map[i] += aps[i];
    r.map[i] /= static_cast<double>(r.classes.size());
  }
  r.average_map = std::accumulate(r.map.begin(), r.map.end(), 0.0) / static_cast<double>(r.map.size());
  return r;
}

inline EvalReport mean_ap(std::span<const Detection> detections,
                          std::span<const VideoAnnotation> annotations, std::size_t num_classes) {
  return mean_ap(detections, annotations, num_classes, default_thresholds());
}

}  // namespace matr
