// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "dact/probabilities.hpp"
#include "json.hpp"

namespace dact {

struct LocalizeConfig {
  std::size_t median_width = 351;
  double min_height = 0.1;
  std::int64_t min_width_frames = 200;
  double o_max = 0.5;
  std::size_t num_cameras = 3;

  /// Throws ConfigError on an even or zero width, min_height outside (0, 1)
  /// or o_max outside [0, 1].
  void validate() const;
  static LocalizeConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// A detected or annotated activity over frames [start_frame, end_frame).
struct ActivityInterval {
  int class_id = 0;
  std::int64_t start_frame = 0;
  std::int64_t end_frame = 0;
  double peak_height = 0.0;

  friend bool operator==(const ActivityInterval&, const ActivityInterval&) = default;
};

/// Bases are inclusive indices of the contiguous run >= min_height around the peak.
struct Peak {
  std::int64_t index = 0;
  double height = 0.0;
  std::int64_t left_base = 0;
  std::int64_t right_base = 0;

  std::int64_t width() const { return right_base - left_base + 1; }
  friend bool operator==(const Peak&, const Peak&) = default;
};

/// Elementwise mean over cameras. Throws InputError on an empty list and
/// ShapeError when frame or class counts differ.
FrameProbabilities average_cameras(std::span<const FrameProbabilities> streams);

/// Sliding median with nearest-value padding; output has the input's length.
std::vector<double> median_filter(std::span<const double> signal, std::size_t width);

/// Local maxima (plateaus included, index at the plateau midpoint) of height
/// >= min_height whose run above min_height spans >= min_width frames.
/// Sorted by index.
std::vector<Peak> find_peaks(std::span<const double> signal, double min_height,
                             std::int64_t min_width);

/// Half-open activity range around a peak. The start is the steepest rise
/// s[i] - s[i-1] for i in [left_base, index]; the end follows the steepest
/// fall s[i+1] - s[i] for i in [index, right_base]. Ties take the earliest
/// index. Without any rise (fall) the base itself is used. Samples outside
/// the signal repeat the edge value.
std::pair<std::int64_t, std::int64_t> activity_bounds(std::span<const double> signal,
                                                      const Peak& peak);

/// |a & b| / |a | b| over half-open frame ranges; 0 when disjoint.
double interval_iou(const ActivityInterval& a, const ActivityInterval& b);

/// Greedy suppression across classes. Candidates are ranked by peak height
/// (descending), class id, start, end; one is kept when its IoU with every
/// kept interval is <= o_max. Result is sorted by start, class, end, then
/// descending height.
std::vector<ActivityInterval> dedup(std::vector<ActivityInterval> preds, double o_max);

/// Median filter, peak detection and boundary search per class (class 0 is
/// background and skipped), then cross-class dedup.
std::vector<ActivityInterval> localize(const FrameProbabilities& scene, const LocalizeConfig& cfg);

}  // namespace dact
