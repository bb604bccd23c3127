// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>

#include <Eigen/Core>

namespace dact {

/// Class distribution predicted for one segment.
struct SegmentProbabilities {
  std::int64_t start_frame = 0;
  Eigen::VectorXd probs;
};

/// One class distribution per frame (rows) of a camera stream or a scene.
struct FrameProbabilities {
  Eigen::MatrixXd values;  ///< num_frames x num_classes

  std::int64_t num_frames() const { return values.rows(); }
  std::int64_t num_classes() const { return values.cols(); }

  /// Throws SchemaError unless entries are >= 0 and rows sum to 1 within tol.
  void validate(double tol = 1e-5) const;
};

/// Stored in the STEM container with feat_dim = classes and segment_len = stride = 1.
FrameProbabilities read_frame_probabilities(const std::filesystem::path& path);
void write_frame_probabilities(const std::filesystem::path& path, const FrameProbabilities& fp);

}  // namespace dact
