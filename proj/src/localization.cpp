// SPDX-License-Identifier: Apache-2.0
#include "dact/localization.hpp"

#include <algorithm>
#include <string>

#include "dact/errors.hpp"
#include "dact/parallel.hpp"

namespace dact {

void LocalizeConfig::validate() const {
  if (median_width == 0 || median_width % 2 == 0) {
    throw ConfigError("median width must be odd, got " + std::to_string(median_width));
  }
  if (!(min_height > 0.0 && min_height < 1.0)) {
    throw ConfigError("min_height must lie in (0, 1), got " + std::to_string(min_height));
  }
  if (min_width_frames < 1) throw ConfigError("min_width_frames must be >= 1");
  if (!(o_max >= 0.0 && o_max <= 1.0)) {
    throw ConfigError("o_max must lie in [0, 1], got " + std::to_string(o_max));
  }
  if (num_cameras == 0) throw ConfigError("num_cameras must be >= 1");
}

LocalizeConfig LocalizeConfig::from_json(const nlohmann::json& j) {
  LocalizeConfig c;
  try {
    c.median_width = j.value("median_width", c.median_width);
    c.min_height = j.value("min_height", c.min_height);
    c.min_width_frames = j.value("min_width_frames", c.min_width_frames);
    c.o_max = j.value("o_max", c.o_max);
    c.num_cameras = j.value("num_cameras", c.num_cameras);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("localize config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json LocalizeConfig::to_json() const {
  return nlohmann::json{{"median_width", median_width},
                        {"min_height", min_height},
                        {"min_width_frames", min_width_frames},
                        {"o_max", o_max},
                        {"num_cameras", num_cameras}};
}

FrameProbabilities average_cameras(std::span<const FrameProbabilities> streams) {
  if (streams.empty()) throw InputError("no camera streams to average");
  const auto rows = streams.front().values.rows();
  const auto cols = streams.front().values.cols();
  FrameProbabilities out;
  out.values = Eigen::MatrixXd::Zero(rows, cols);
  for (std::size_t c = 0; c < streams.size(); ++c) {
    const auto& v = streams[c].values;
    if (v.rows() != rows || v.cols() != cols) {
      throw ShapeError("camera " + std::to_string(c) + " has " + std::to_string(v.rows()) + "x" +
                       std::to_string(v.cols()) + " probabilities, camera 0 has " +
                       std::to_string(rows) + "x" + std::to_string(cols));
    }
  }
  // Sorting each entry's camera values makes the sum independent of camera order.
  std::vector<double> vals(streams.size());
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (std::size_t c = 0; c < streams.size(); ++c) vals[c] = streams[c].values(i, j);
      std::sort(vals.begin(), vals.end());
      double sum = 0.0;
      for (double x : vals) sum += x;
      out.values(i, j) = sum / static_cast<double>(streams.size());
    }
  }
  return out;
}

std::vector<double> median_filter(std::span<const double> signal, std::size_t width) {
  if (width == 0 || width % 2 == 0) {
    throw ConfigError("median width must be odd, got " + std::to_string(width));
  }
  const auto n = static_cast<std::int64_t>(signal.size());
  std::vector<double> out(signal.size());
  if (n == 0) return out;
  const auto half = static_cast<std::int64_t>(width / 2);
  auto at = [&](std::int64_t i) { return signal[static_cast<std::size_t>(std::clamp<std::int64_t>(i, 0, n - 1))]; };

  // Sorted copy of the current window, updated by one erase and one insert per step.
  std::vector<double> window;
  window.reserve(width);
  for (std::int64_t i = -half; i <= half; ++i) window.push_back(at(i));
  std::sort(window.begin(), window.end());
  for (std::int64_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = window[static_cast<std::size_t>(half)];
    if (i + 1 == n) break;
    window.erase(std::lower_bound(window.begin(), window.end(), at(i - half)));
    const double incoming = at(i + half + 1);
    window.insert(std::upper_bound(window.begin(), window.end(), incoming), incoming);
  }
  return out;
}

std::vector<Peak> find_peaks(std::span<const double> signal, double min_height,
                             std::int64_t min_width) {
  const auto n = static_cast<std::int64_t>(signal.size());
  auto s = [&](std::int64_t i) { return signal[static_cast<std::size_t>(i)]; };
  std::vector<Peak> peaks;
  std::int64_t i = 0;
  while (i < n) {
    std::int64_t j = i;
    while (j + 1 < n && s(j + 1) == s(i)) ++j;
    const bool rises = i == 0 || s(i - 1) < s(i);
    const bool falls = j == n - 1 || s(j + 1) < s(i);
    if (rises && falls && s(i) >= min_height) {
      Peak p;
      p.index = i + (j - i) / 2;
      p.height = s(i);
      p.left_base = i;
      while (p.left_base > 0 && s(p.left_base - 1) >= min_height) --p.left_base;
      p.right_base = j;
      while (p.right_base + 1 < n && s(p.right_base + 1) >= min_height) ++p.right_base;
      if (p.width() >= min_width) peaks.push_back(p);
    }
    i = j + 1;
  }
  return peaks;
}

std::pair<std::int64_t, std::int64_t> activity_bounds(std::span<const double> signal,
                                                      const Peak& peak) {
  const auto n = static_cast<std::int64_t>(signal.size());
  if (peak.left_base < 0 || peak.right_base >= n || peak.left_base > peak.index ||
      peak.index > peak.right_base) {
    throw InputError("peak at " + std::to_string(peak.index) + " does not fit a signal of " +
                     std::to_string(n) + " samples");
  }
  auto s = [&](std::int64_t i) { return signal[static_cast<std::size_t>(std::clamp<std::int64_t>(i, 0, n - 1))]; };

  std::int64_t start = peak.left_base;
  double best_rise = 0.0;
  for (std::int64_t i = peak.left_base; i <= peak.index; ++i) {
    const double d = s(i) - s(i - 1);
    if (d > best_rise) {
      best_rise = d;
      start = i;
    }
  }
  std::int64_t end = peak.right_base + 1;
  double best_fall = 0.0;
  for (std::int64_t i = peak.index; i <= peak.right_base; ++i) {
    const double d = s(i + 1) - s(i);
    if (d < best_fall) {
      best_fall = d;
      end = i + 1;
    }
  }
  return {start, end};
}

double interval_iou(const ActivityInterval& a, const ActivityInterval& b) {
  const auto inter = std::min(a.end_frame, b.end_frame) - std::max(a.start_frame, b.start_frame);
  if (inter <= 0) return 0.0;
  const auto uni = (a.end_frame - a.start_frame) + (b.end_frame - b.start_frame) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<ActivityInterval> dedup(std::vector<ActivityInterval> preds, double o_max) {
  std::sort(preds.begin(), preds.end(), [](const ActivityInterval& a, const ActivityInterval& b) {
    if (a.peak_height != b.peak_height) return a.peak_height > b.peak_height;
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    if (a.start_frame != b.start_frame) return a.start_frame < b.start_frame;
    return a.end_frame < b.end_frame;
  });
  std::vector<ActivityInterval> kept;
  for (const auto& p : preds) {
    const bool ok = std::all_of(kept.begin(), kept.end(),
                                [&](const ActivityInterval& k) { return interval_iou(p, k) <= o_max; });
    if (ok) kept.push_back(p);
  }
  std::sort(kept.begin(), kept.end(), [](const ActivityInterval& a, const ActivityInterval& b) {
    if (a.start_frame != b.start_frame) return a.start_frame < b.start_frame;
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    if (a.end_frame != b.end_frame) return a.end_frame < b.end_frame;
    return a.peak_height > b.peak_height;
  });
  return kept;
}

std::vector<ActivityInterval> localize(const FrameProbabilities& scene, const LocalizeConfig& cfg) {
  cfg.validate();
  const auto C = static_cast<std::size_t>(scene.num_classes());
  std::vector<std::vector<ActivityInterval>> per_class(C);
  parallel_for(C > 0 ? C - 1 : 0, [&](std::size_t idx) {
    const std::size_t k = idx + 1;
    std::vector<double> column(static_cast<std::size_t>(scene.num_frames()));
    for (std::size_t n = 0; n < column.size(); ++n) {
      column[n] = scene.values(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    }
    const auto filtered = median_filter(column, cfg.median_width);
    for (const auto& peak : find_peaks(filtered, cfg.min_height, cfg.min_width_frames)) {
      const auto [start, end] = activity_bounds(filtered, peak);
      per_class[k].push_back({static_cast<int>(k), start, end, peak.height});
    }
  });
  std::vector<ActivityInterval> all;
  for (const auto& v : per_class) all.insert(all.end(), v.begin(), v.end());
  return dedup(std::move(all), cfg.o_max);
}

}  // namespace dact
