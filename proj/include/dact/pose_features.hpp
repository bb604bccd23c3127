// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include "json.hpp"

namespace dact {

/// Index constants for the 133-point COCO-WholeBody skeleton.
namespace wholebody {
inline constexpr std::size_t kNumJoints = 133;
inline constexpr std::size_t kBodyBegin = 0;   // 17 body joints
inline constexpr std::size_t kFeetBegin = 17;  // 6 feet joints
inline constexpr std::size_t kFaceBegin = 23;  // 68 face landmarks
inline constexpr std::size_t kLeftHandBegin = 91;
inline constexpr std::size_t kRightHandBegin = 112;
inline constexpr std::size_t kHandJoints = 21;
inline constexpr std::size_t kFaceLandmarks = 68;

inline constexpr std::size_t kLeftShoulder = 5;
inline constexpr std::size_t kRightShoulder = 6;

/// Whole-body id of a 68-point face landmark.
constexpr std::size_t face(std::size_t landmark) { return kFaceBegin + landmark; }

inline constexpr std::size_t kNoseTip = face(30);
}  // namespace wholebody

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double c = 0.0;  ///< detector confidence in [0, 1]
};

struct KeypointFrame {
  std::string video_id;
  int camera = 0;
  std::int64_t frame_index = 0;
  std::array<Keypoint, wholebody::kNumJoints> joints{};
};

/// Which joints and derived distances make up a per-frame pose feature.
struct FeatureLayout {
  std::vector<std::size_t> selected_joint_ids;
  std::vector<std::pair<std::size_t, std::size_t>> hand_face_pairs;
  std::vector<std::pair<std::size_t, std::size_t>> lip_pairs;
  bool include_confidence = false;
  std::size_t head_pose_dim = 6;  ///< 6 (axis-angle + translation) or 0 to omit

  /// Throws ConfigError on out-of-range ids, a head_pose_dim other than 0/6,
  /// or a layout that yields no features at all.
  void validate() const;

  std::size_t coords_per_joint() const { return include_confidence ? 3 : 2; }
  std::size_t pose_dim() const;

  /// 68 face + 42 hand + 2 shoulder joints, every hand joint to the nose tip,
  /// ten upper/lower lip pairs, head pose on.
  static FeatureLayout default_layout();
  /// Same joints as the default layout, no motion features.
  static FeatureLayout skeleton_only();

  static FeatureLayout from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;

  /// fx = fy = image width, principal point at the image centre.
  static CameraIntrinsics for_image(double width, double height);
  static CameraIntrinsics from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct HeadPose {
  Eigen::Vector3d rotation = Eigen::Vector3d::Zero();     ///< axis-angle, radians
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();  ///< model units
  double reproj_error = 0.0;                              ///< RMS, pixels
};

struct MotionVector {
  std::array<double, 6> head_pose{};
  std::vector<double> hand_face_distances;
  std::vector<double> lip_distances;

  std::size_t size() const { return 6 + hand_face_distances.size() + lip_distances.size(); }
};

struct PoseFeatureVector {
  std::vector<double> values;
  std::int64_t frame_index = 0;
};

std::vector<Keypoint> select_keypoints(const KeypointFrame& frame, const FeatureLayout& layout);

/// Euclidean image-plane distance between two joints.
double joint_distance(const Keypoint& a, const Keypoint& b);

/// Pinhole projection after the rigid transform given by pose.
/// Throws DegenerateGeometryError if any point lands at non-positive depth.
std::vector<Eigen::Vector2d> project_points(std::span<const Eigen::Vector3d> model_points,
                                            const HeadPose& pose, const CameraIntrinsics& intr);

struct PnpOptions {
  int max_iters = 100;
  double lambda0 = 1e-3;
  double step_tol = 1e-10;
  double residual_change_tol = 1e-12;
  /// Starting pose. Defaults to identity rotation at depth fx.
  std::optional<HeadPose> initial;
};

/// Levenberg-Marquardt over (axis-angle, translation) minimising squared
/// reprojection error. Throws InputError for fewer than four correspondences
/// and ConvergenceError if the iteration budget runs out.
HeadPose solve_pnp(std::span<const Eigen::Vector3d> model_points,
                   std::span<const Eigen::Vector2d> image_points, const CameraIntrinsics& intr,
                   const PnpOptions& opts = {});

/// Six generic head landmarks with the whole-body ids they correspond to.
/// Coordinates are in camera axes (x right, y down, z away from the camera),
/// so zero rotation is a face looking straight into the lens.
struct FaceModel {
  std::array<Eigen::Vector3d, 6> points;
  std::array<std::size_t, 6> joint_ids;

  static const FaceModel& canonical();
};

/// Head pose from the six face landmarks. Throws LowConfidenceError if any
/// of them has confidence below min_confidence.
HeadPose estimate_head_pose(const KeypointFrame& frame, const CameraIntrinsics& intr,
                            const FaceModel& face_model = FaceModel::canonical(),
                            double min_confidence = 0.3);

MotionVector build_motion_vector(const KeypointFrame& frame, const FeatureLayout& layout,
                                 const HeadPose& head);

PoseFeatureVector build_pose_feature(const KeypointFrame& frame, const FeatureLayout& layout,
                                     const HeadPose& head);

/// Per-stream feature extraction. Frames whose face landmarks are not
/// confident enough (or whose PnP fails to converge) reuse the previous
/// frame's head pose, zeros before the first good frame.
class PoseFeatureExtractor {
 public:
  PoseFeatureExtractor(FeatureLayout layout, CameraIntrinsics intr, double min_confidence = 0.3);

  PoseFeatureVector operator()(const KeypointFrame& frame);

  std::size_t low_confidence_frames() const { return low_confidence_frames_; }
  const FeatureLayout& layout() const { return layout_; }

 private:
  FeatureLayout layout_;
  CameraIntrinsics intr_;
  double min_confidence_;
  HeadPose last_pose_;
  std::size_t low_confidence_frames_ = 0;
};

}  // namespace dact
