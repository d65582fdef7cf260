#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace matr {

/// Closed time interval in frame units.
struct Interval {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  double center() const { return 0.5 * (start + end); }
};

/// Temporal IoU. The union is the enclosing span minus the gap between the
/// intervals. Two coincident points have tIoU 1.
inline double tiou(const Interval& a, const Interval& b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double enclosing = std::max(a.end, b.end) - std::min(a.start, b.start);
  const double gap = std::max(0.0, std::max(a.start, b.start) - std::min(a.end, b.end));
  const double uni = enclosing - gap;
  if (uni <= 0.0) return a.start == b.start && a.end == b.end ? 1.0 : 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// A ground-truth action instance (s_m, e_m, c_m).
struct ActionAnnotation {
  std::int64_t start = 0;
  std::int64_t end = 0;
  std::size_t label = 0;

  Interval interval() const { return {static_cast<double>(start), static_cast<double>(end)}; }
};

struct VideoAnnotation {
  std::string id;
  std::int64_t length = 0;
  std::vector<ActionAnnotation> instances;
};

/// Candidate produced by the heads at one timestamp.
struct ActionProposal {
  double start = 0.0;
  double end = 0.0;
  std::size_t label = 0;
  double score = 0.0;
  std::int64_t generated_at = 0;
  std::size_t query = 0;

  Interval interval() const { return {start, end}; }
};

/// Irrevocably emitted detection.
struct ActionInstance {
  double start = 0.0;
  double end = 0.0;
  std::size_t label = 0;
  double score = 0.0;
  std::int64_t committed_at = 0;

  Interval interval() const { return {start, end}; }
  friend bool operator==(const ActionInstance&, const ActionInstance&) = default;
};

}  // namespace matr
