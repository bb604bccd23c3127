// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dact/data_io.hpp"
#include "dact/pose_features.hpp"
#include "json.hpp"

namespace dact {

/// A synthetic recording session: one driver, several cameras, a list of
/// non-overlapping activities. Everything generated from it is a pure
/// function of the scenario and the camera index.
struct Scenario {
  std::string video_id = "synth";
  std::int64_t num_frames = 0;
  double fps = 30.0;
  std::vector<AnnotationRecord> activities;  ///< sorted, disjoint, classes 1..15
  double noise_sigma = 1.0;        ///< keypoint jitter, pixels
  double embed_noise_sigma = 0.3;  ///< per-coordinate embedding noise
  double embed_noise_corr = 0.0;   ///< AR(1) coefficient of the embedding noise across segments
  std::size_t n_f = 64;
  std::size_t segment_len = 64;
  std::size_t num_cameras = 3;
  std::uint64_t seed = 0;

  /// Throws InputError on overlapping, unsorted, out-of-range or class-0
  /// activities and on invalid noise or size settings.
  void validate() const;
  static Scenario from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Intrinsics of the synthetic 512 x 512 cameras.
CameraIntrinsics synth_intrinsics();

/// The 68-landmark head model used for rendering, in the same axes and units
/// as FaceModel::canonical(); its six PnP landmarks coincide with it.
const std::array<Eigen::Vector3d, wholebody::kFaceLandmarks>& synth_face_model();

std::vector<int> scenario_labels(const Scenario& scn);

/// One keypoint frame per scenario frame for the given camera.
std::vector<KeypointFrame> gen_keypoints(const Scenario& scn, int camera);

/// kNumClasses x n_f class centroids from a fixed seed, shared by every
/// scenario so models transfer between scenarios. Row 0 is background.
Eigen::MatrixXd class_centroids(std::size_t n_f);

/// Smallest pairwise Euclidean distance between rows.
double min_centroid_distance(const Eigen::MatrixXd& centroids);

/// Stride-1 segments: centroid of the segment's majority label plus noise.
std::vector<EmbeddingSegment> gen_embeddings(const Scenario& scn, int camera);

struct RandomScenarioOptions {
  std::int64_t num_frames = 20000;
  std::size_t num_activities = 8;
  std::int64_t min_length = 450;
  std::int64_t max_length = 900;
  std::int64_t min_gap = 300;
  bool distinct_classes = true;
  std::uint64_t seed = 0;
};

/// Activities with random classes, lengths and gaps. Other scenario fields
/// keep their defaults. Throws InputError if they cannot fit.
Scenario random_scenario(const RandomScenarioOptions& opts);

}  // namespace dact
