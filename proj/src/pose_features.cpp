// SPDX-License-Identifier: Apache-2.0
#include "dact/pose_features.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "dact/errors.hpp"

namespace dact {

namespace {

void check_id(std::size_t id, const char* what) {
  if (id >= wholebody::kNumJoints) {
    throw ConfigError(std::string(what) + " references joint " + std::to_string(id) +
                      " (valid ids are 0.." + std::to_string(wholebody::kNumJoints - 1) + ")");
  }
}

Eigen::Matrix3d rotation_matrix(const Eigen::Vector3d& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle < 1e-300) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

// Residual vector (u - u_obs, v - v_obs per point); nullopt if a point is
// behind the camera.
std::optional<Eigen::VectorXd> reprojection_residuals(
    const Eigen::Matrix<double, 6, 1>& params, std::span<const Eigen::Vector3d> model,
    std::span<const Eigen::Vector2d> image, const CameraIntrinsics& intr) {
  const Eigen::Matrix3d rot = rotation_matrix(params.head<3>());
  const Eigen::Vector3d t = params.tail<3>();
  Eigen::VectorXd r(2 * model.size());
  for (std::size_t i = 0; i < model.size(); ++i) {
    const Eigen::Vector3d pc = rot * model[i] + t;
    if (!(pc.z() > 0.0)) return std::nullopt;
    r(2 * i) = intr.fx * pc.x() / pc.z() + intr.cx - image[i].x();
    r(2 * i + 1) = intr.fy * pc.y() / pc.z() + intr.cy - image[i].y();
  }
  return r;
}

Eigen::Vector3d wrap_rotation(const Eigen::Vector3d& r) {
  double angle = r.norm();
  if (angle <= std::numbers::pi) return r;
  const Eigen::Vector3d axis = r / angle;
  angle = std::fmod(angle, 2.0 * std::numbers::pi);
  if (angle > std::numbers::pi) return -(2.0 * std::numbers::pi - angle) * axis;
  return angle * axis;
}

}  // namespace

// ---------------------------------------------------------------------------
// FeatureLayout

void FeatureLayout::validate() const {
  for (auto id : selected_joint_ids) check_id(id, "selected_joint_ids");
  for (auto [h, f] : hand_face_pairs) {
    check_id(h, "hand_face_pairs");
    check_id(f, "hand_face_pairs");
  }
  for (auto [u, l] : lip_pairs) {
    check_id(u, "lip_pairs");
    check_id(l, "lip_pairs");
  }
  if (head_pose_dim != 0 && head_pose_dim != 6) {
    throw ConfigError("head_pose_dim must be 0 or 6, got " + std::to_string(head_pose_dim));
  }
  if (pose_dim() == 0) throw ConfigError("feature layout produces an empty feature vector");
}

std::size_t FeatureLayout::pose_dim() const {
  return selected_joint_ids.size() * coords_per_joint() + head_pose_dim + hand_face_pairs.size() +
         lip_pairs.size();
}

FeatureLayout FeatureLayout::default_layout() {
  FeatureLayout layout = skeleton_only();
  layout.head_pose_dim = 6;
  for (std::size_t h = 0; h < 2 * wholebody::kHandJoints; ++h) {
    layout.hand_face_pairs.emplace_back(wholebody::kLeftHandBegin + h, wholebody::kNoseTip);
  }
  using wholebody::face;
  // Outer lip verticals, inner lip verticals, two outer/inner crossings.
  const std::pair<std::size_t, std::size_t> lips[] = {
      {49, 59}, {50, 58}, {51, 57}, {52, 56}, {53, 55},
      {61, 67}, {62, 66}, {63, 65}, {51, 66}, {62, 57}};
  for (auto [u, l] : lips) layout.lip_pairs.emplace_back(face(u), face(l));
  return layout;
}

FeatureLayout FeatureLayout::skeleton_only() {
  FeatureLayout layout;
  layout.head_pose_dim = 0;
  for (std::size_t i = 0; i < wholebody::kFaceLandmarks; ++i) {
    layout.selected_joint_ids.push_back(wholebody::face(i));
  }
  for (std::size_t h = 0; h < 2 * wholebody::kHandJoints; ++h) {
    layout.selected_joint_ids.push_back(wholebody::kLeftHandBegin + h);
  }
  layout.selected_joint_ids.push_back(wholebody::kLeftShoulder);
  layout.selected_joint_ids.push_back(wholebody::kRightShoulder);
  return layout;
}

FeatureLayout FeatureLayout::from_json(const nlohmann::json& j) {
  FeatureLayout layout;
  try {
    layout.selected_joint_ids = j.at("selected_joint_ids").get<std::vector<std::size_t>>();
    layout.hand_face_pairs =
        j.value("hand_face_pairs", std::vector<std::pair<std::size_t, std::size_t>>{});
    layout.lip_pairs = j.value("lip_pairs", std::vector<std::pair<std::size_t, std::size_t>>{});
    layout.include_confidence = j.value("include_confidence", false);
    layout.head_pose_dim = j.value("head_pose_dim", std::size_t{6});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid feature layout: ") + e.what());
  }
  layout.validate();
  return layout;
}

nlohmann::json FeatureLayout::to_json() const {
  return nlohmann::json{{"selected_joint_ids", selected_joint_ids},
                        {"hand_face_pairs", hand_face_pairs},
                        {"lip_pairs", lip_pairs},
                        {"include_confidence", include_confidence},
                        {"head_pose_dim", head_pose_dim}};
}

// ---------------------------------------------------------------------------
// CameraIntrinsics

CameraIntrinsics CameraIntrinsics::for_image(double width, double height) {
  return CameraIntrinsics{width, width, width / 2.0, height / 2.0};
}

CameraIntrinsics CameraIntrinsics::from_json(const nlohmann::json& j) {
  CameraIntrinsics intr;
  try {
    if (j.contains("image_width")) {
      intr = for_image(j.at("image_width").get<double>(), j.at("image_height").get<double>());
    } else {
      intr.fx = j.at("fx").get<double>();
      intr.fy = j.at("fy").get<double>();
      intr.cx = j.at("cx").get<double>();
      intr.cy = j.at("cy").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid intrinsics: ") + e.what());
  }
  if (!(intr.fx > 0.0) || !(intr.fy > 0.0)) throw ConfigError("intrinsics need fx, fy > 0");
  return intr;
}

nlohmann::json CameraIntrinsics::to_json() const {
  return nlohmann::json{{"fx", fx}, {"fy", fy}, {"cx", cx}, {"cy", cy}};
}

// ---------------------------------------------------------------------------
// Geometry

std::vector<Keypoint> select_keypoints(const KeypointFrame& frame, const FeatureLayout& layout) {
  std::vector<Keypoint> out;
  out.reserve(layout.selected_joint_ids.size());
  for (auto id : layout.selected_joint_ids) {
    check_id(id, "selected_joint_ids");
    out.push_back(frame.joints[id]);
  }
  return out;
}

double joint_distance(const Keypoint& a, const Keypoint& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

std::vector<Eigen::Vector2d> project_points(std::span<const Eigen::Vector3d> model_points,
                                            const HeadPose& pose, const CameraIntrinsics& intr) {
  const Eigen::Matrix3d rot = rotation_matrix(pose.rotation);
  std::vector<Eigen::Vector2d> out;
  out.reserve(model_points.size());
  for (const auto& p : model_points) {
    const Eigen::Vector3d pc = rot * p + pose.translation;
    if (!(pc.z() > 0.0)) {
      throw DegenerateGeometryError("point projects at non-positive depth " +
                                    std::to_string(pc.z()));
    }
    out.emplace_back(intr.fx * pc.x() / pc.z() + intr.cx, intr.fy * pc.y() / pc.z() + intr.cy);
  }
  return out;
}

HeadPose solve_pnp(std::span<const Eigen::Vector3d> model_points,
                   std::span<const Eigen::Vector2d> image_points, const CameraIntrinsics& intr,
                   const PnpOptions& opts) {
  if (model_points.size() != image_points.size()) {
    throw InputError("solve_pnp: " + std::to_string(model_points.size()) + " model points vs " +
                     std::to_string(image_points.size()) + " image points");
  }
  if (model_points.size() < 4) {
    throw InputError("solve_pnp needs at least 4 correspondences, got " +
                     std::to_string(model_points.size()));
  }

  using Vec6 = Eigen::Matrix<double, 6, 1>;
  using Mat6 = Eigen::Matrix<double, 6, 6>;

  Vec6 params;
  if (opts.initial) {
    params << opts.initial->rotation, opts.initial->translation;
  } else {
    params << 0.0, 0.0, 0.0, 0.0, 0.0, intr.fx;
  }
  auto residuals = [&](const Vec6& p) {
    return reprojection_residuals(p, model_points, image_points, intr);
  };
  auto current = residuals(params);
  if (!current) throw DegenerateGeometryError("solve_pnp: initial pose puts points behind camera");

  const auto m = static_cast<Eigen::Index>(current->size());
  double cost = current->squaredNorm();
  double lambda = opts.lambda0;
  bool converged = cost == 0.0;
  Eigen::MatrixXd jac(m, 6);

  for (int iter = 0; iter < opts.max_iters && !converged; ++iter) {
    // Central-difference Jacobian; step scaled to each parameter's magnitude.
    for (int k = 0; k < 6; ++k) {
      const double h = 1e-6 * std::max(1.0, std::abs(params(k)));
      Vec6 plus = params, minus = params;
      plus(k) += h;
      minus(k) -= h;
      auto rp = residuals(plus);
      auto rm = residuals(minus);
      if (!rp || !rm) throw DegenerateGeometryError("solve_pnp: iterate crosses the image plane");
      jac.col(k) = (*rp - *rm) / (2.0 * h);
    }
    const Mat6 jtj = jac.transpose() * jac;
    const Vec6 grad = jac.transpose() * *current;

    // Retry with growing damping until the cost drops or the step vanishes.
    while (true) {
      Mat6 damped = jtj;
      for (int k = 0; k < 6; ++k) damped(k, k) += lambda * std::max(jtj(k, k), 1e-12);
      const Vec6 step = damped.ldlt().solve(-grad);
      if (!step.allFinite() || step.norm() < opts.step_tol) {
        converged = true;
        break;
      }
      const Vec6 candidate = params + step;
      auto next = residuals(candidate);
      const double next_cost = next ? next->squaredNorm() : std::numeric_limits<double>::infinity();
      if (next_cost < cost) {
        const double change = cost - next_cost;
        params = candidate;
        current = std::move(next);
        cost = next_cost;
        lambda = std::max(lambda / 10.0, 1e-15);
        if (change < opts.residual_change_tol || cost == 0.0) converged = true;
        break;
      }
      lambda *= 10.0;
      if (lambda > 1e20) {
        converged = true;  // no descent direction left at working precision
        break;
      }
    }
  }

  const double rms = std::sqrt(cost / static_cast<double>(model_points.size()));
  if (!converged) {
    throw ConvergenceError("solve_pnp did not converge in " + std::to_string(opts.max_iters) +
                               " iterations (rms " + std::to_string(rms) + " px)",
                           rms);
  }
  HeadPose pose;
  pose.rotation = wrap_rotation(params.head<3>());
  pose.translation = params.tail<3>();
  pose.reproj_error = rms;
  return pose;
}

// ---------------------------------------------------------------------------
// Head pose

const FaceModel& FaceModel::canonical() {
  // Generic head model (mm): nose tip, chin, outer eye corners, mouth corners,
  // flipped from y-up / z-toward-viewer into camera axes.
  static const FaceModel model = [] {
    FaceModel m;
    const double raw[6][3] = {{0.0, 0.0, 0.0},          {0.0, -330.0, -65.0},
                              {-225.0, 170.0, -135.0},  {225.0, 170.0, -135.0},
                              {-150.0, -150.0, -125.0}, {150.0, -150.0, -125.0}};
    for (int i = 0; i < 6; ++i) m.points[i] = Eigen::Vector3d(raw[i][0], -raw[i][1], -raw[i][2]);
    using wholebody::face;
    m.joint_ids = {face(30), face(8), face(36), face(45), face(48), face(54)};
    return m;
  }();
  return model;
}

HeadPose estimate_head_pose(const KeypointFrame& frame, const CameraIntrinsics& intr,
                            const FaceModel& face_model, double min_confidence) {
  std::array<Eigen::Vector2d, 6> image;
  for (std::size_t i = 0; i < 6; ++i) {
    const Keypoint& kp = frame.joints[face_model.joint_ids[i]];
    if (!(kp.c >= min_confidence)) {
      throw LowConfidenceError("face landmark " + std::to_string(face_model.joint_ids[i]) +
                               " confidence " + std::to_string(kp.c) + " below " +
                               std::to_string(min_confidence));
    }
    image[i] = Eigen::Vector2d(kp.x, kp.y);
  }
  return solve_pnp(face_model.points, image, intr);
}

// ---------------------------------------------------------------------------
// Features

MotionVector build_motion_vector(const KeypointFrame& frame, const FeatureLayout& layout,
                                 const HeadPose& head) {
  MotionVector mv;
  for (int k = 0; k < 3; ++k) {
    mv.head_pose[k] = head.rotation(k);
    mv.head_pose[3 + k] = head.translation(k);
  }
  mv.hand_face_distances.reserve(layout.hand_face_pairs.size());
  for (auto [h, f] : layout.hand_face_pairs) {
    mv.hand_face_distances.push_back(joint_distance(frame.joints.at(h), frame.joints.at(f)));
  }
  mv.lip_distances.reserve(layout.lip_pairs.size());
  for (auto [u, l] : layout.lip_pairs) {
    mv.lip_distances.push_back(joint_distance(frame.joints.at(u), frame.joints.at(l)));
  }
  return mv;
}

PoseFeatureVector build_pose_feature(const KeypointFrame& frame, const FeatureLayout& layout,
                                     const HeadPose& head) {
  layout.validate();
  PoseFeatureVector out;
  out.frame_index = frame.frame_index;
  out.values.reserve(layout.pose_dim());
  for (const auto& kp : select_keypoints(frame, layout)) {
    out.values.push_back(kp.x);
    out.values.push_back(kp.y);
    if (layout.include_confidence) out.values.push_back(kp.c);
  }
  const MotionVector mv = build_motion_vector(frame, layout, head);
  if (layout.head_pose_dim == 6) {
    out.values.insert(out.values.end(), mv.head_pose.begin(), mv.head_pose.end());
  }
  out.values.insert(out.values.end(), mv.hand_face_distances.begin(),
                    mv.hand_face_distances.end());
  out.values.insert(out.values.end(), mv.lip_distances.begin(), mv.lip_distances.end());
  return out;
}

PoseFeatureExtractor::PoseFeatureExtractor(FeatureLayout layout, CameraIntrinsics intr,
                                           double min_confidence)
    : layout_(std::move(layout)), intr_(intr), min_confidence_(min_confidence) {
  layout_.validate();
}

PoseFeatureVector PoseFeatureExtractor::operator()(const KeypointFrame& frame) {
  if (layout_.head_pose_dim == 6) {
    try {
      last_pose_ = estimate_head_pose(frame, intr_, FaceModel::canonical(), min_confidence_);
    } catch (const LowConfidenceError&) {
      ++low_confidence_frames_;
    } catch (const ConvergenceError&) {
      ++low_confidence_frames_;
    } catch (const DegenerateGeometryError&) {
      ++low_confidence_frames_;
    }
  }
  return build_pose_feature(frame, layout_, last_pose_);
}

}  // namespace dact
