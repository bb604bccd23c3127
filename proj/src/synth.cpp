// SPDX-License-Identifier: Apache-2.0
#include "dact/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "dact/errors.hpp"
#include "dact/random.hpp"

namespace dact {

void Scenario::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw InputError("scenario: " + msg);
  };
  require(num_frames >= 1, "num_frames must be >= 1");
  require(fps > 0.0, "fps must be positive");
  require(noise_sigma >= 0.0 && embed_noise_sigma >= 0.0, "noise levels must be >= 0");
  require(embed_noise_corr >= 0.0 && embed_noise_corr < 1.0, "embed_noise_corr must lie in [0, 1)");
  require(n_f >= 1 && segment_len >= 1 && num_cameras >= 1,
          "n_f, segment_len and num_cameras must be >= 1");
  for (std::size_t i = 0; i < activities.size(); ++i) {
    const auto& a = activities[i];
    const std::string tag = "activity " + std::to_string(i) + ": ";
    require(a.class_id >= 1 && a.class_id < kNumClasses,
            tag + "class " + std::to_string(a.class_id) + " is not a distracted-driving class");
    require(a.start_frame >= 0 && a.start_frame < a.end_frame && a.end_frame <= num_frames,
            tag + "[" + std::to_string(a.start_frame) + ", " + std::to_string(a.end_frame) +
                ") is not inside [0, " + std::to_string(num_frames) + ")");
    if (i > 0) {
      require(activities[i - 1].end_frame <= a.start_frame,
              tag + "overlaps or precedes activity " + std::to_string(i - 1));
    }
  }
}

Scenario Scenario::from_json(const nlohmann::json& j) {
  Scenario s;
  try {
    s.video_id = j.value("video_id", s.video_id);
    s.num_frames = j.at("num_frames").get<std::int64_t>();
    s.fps = j.value("fps", s.fps);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.embed_noise_sigma = j.value("embed_noise_sigma", s.embed_noise_sigma);
    s.embed_noise_corr = j.value("embed_noise_corr", s.embed_noise_corr);
    s.n_f = j.value("n_f", s.n_f);
    s.segment_len = j.value("segment_len", s.segment_len);
    s.num_cameras = j.value("num_cameras", s.num_cameras);
    s.seed = j.value("seed", s.seed);
    for (const auto& a : j.value("activities", nlohmann::json::array())) {
      AnnotationRecord r;
      r.video_id = s.video_id;
      r.class_id = a.at("class_id").get<int>();
      r.start_frame = a.at("start_frame").get<std::int64_t>();
      r.end_frame = a.at("end_frame").get<std::int64_t>();
      s.activities.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("scenario: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json Scenario::to_json() const {
  nlohmann::json acts = nlohmann::json::array();
  for (const auto& a : activities) {
    acts.push_back({{"class_id", a.class_id}, {"start_frame", a.start_frame}, {"end_frame", a.end_frame}});
  }
  return nlohmann::json{{"video_id", video_id},
                        {"num_frames", num_frames},
                        {"fps", fps},
                        {"noise_sigma", noise_sigma},
                        {"embed_noise_sigma", embed_noise_sigma},
                        {"embed_noise_corr", embed_noise_corr},
                        {"n_f", n_f},
                        {"segment_len", segment_len},
                        {"num_cameras", num_cameras},
                        {"seed", seed},
                        {"activities", acts}};
}

CameraIntrinsics synth_intrinsics() { return CameraIntrinsics::for_image(512.0, 512.0); }

const std::array<Eigen::Vector3d, wholebody::kFaceLandmarks>& synth_face_model() {
  // Camera axes: x right, y down, z away from the camera; nose tip at the origin.
  static const auto model = [] {
    std::array<Eigen::Vector3d, wholebody::kFaceLandmarks> m;
    for (int i = 0; i <= 16; ++i) {
      const double a = (i - 8) / 8.0;
      m[i] = {280.0 * a, -80.0 + 410.0 * std::pow(1.0 - a * a, 0.8), 65.0 + 200.0 * a * a};
    }
    for (int i = 0; i < 5; ++i) {
      const double bump = std::sin(std::numbers::pi * i / 4.0);
      m[17 + i] = {-280.0 + 55.0 * i, -250.0 - 30.0 * bump, 120.0};
      m[26 - i] = {280.0 - 55.0 * i, -250.0 - 30.0 * bump, 120.0};
    }
    m[27] = {0, -190, 60};
    m[28] = {0, -125, 40};
    m[29] = {0, -60, 20};
    m[30] = {0, 0, 0};
    const double nostril_x[5] = {-60, -30, 0, 30, 60};
    const double nostril_z[5] = {50, 45, 40, 45, 50};
    for (int i = 0; i < 5; ++i) m[31 + i] = {nostril_x[i], 40.0, nostril_z[i]};
    const double eye[6][3] = {{-225, -170, 135}, {-190, -190, 120}, {-140, -190, 120},
                              {-100, -170, 120}, {-140, -155, 120}, {-190, -155, 120}};
    for (int i = 0; i < 6; ++i) {
      m[36 + i] = {eye[i][0], eye[i][1], eye[i][2]};
    }
    // Left eye mirrors the right one; 42 is the inner corner, 45 the outer.
    const int mirror[6] = {39, 38, 37, 36, 41, 40};
    for (int i = 0; i < 6; ++i) {
      const auto& src = m[mirror[i]];
      m[42 + i] = {-src.x(), src.y(), src.z()};
    }
    const double mouth[20][3] = {
        {-150, 150, 125}, {-100, 125, 105}, {-45, 115, 95}, {0, 120, 90},   {45, 115, 95},
        {100, 125, 105},  {150, 150, 125},  {100, 180, 105}, {45, 190, 95}, {0, 192, 90},
        {-45, 190, 95},   {-100, 180, 105}, {-130, 150, 115}, {-45, 140, 100}, {0, 142, 98},
        {45, 140, 100},   {130, 150, 115},  {45, 160, 100},  {0, 162, 98},   {-45, 160, 100}};
    for (int i = 0; i < 20; ++i) m[48 + i] = {mouth[i][0], mouth[i][1], mouth[i][2]};
    return m;
  }();
  return model;
}

namespace {

using Eigen::Vector2d;
using Eigen::Vector3d;
namespace wb = wholebody;

// Head, mouth and hand movement of each class, scaled by the activity envelope.
struct ClassMotion {
  Vector2d right_hand{0, 0};
  Vector2d left_hand{0, 0};
  double hand_osc = 0.0;  // fraction of the hand displacement that oscillates
  double yaw = 0.0, pitch = 0.0, roll = 0.0;
  double head_osc = 0.0;  // roll oscillation amplitude, radians
  double mouth_open = 0.0;
  double mouth_osc = 0.0;
  Vector2d right_shoulder{0, 0};
  Vector2d left_shoulder{0, 0};
};

const std::array<ClassMotion, kNumClasses>& motion_table() {
  static const auto table = [] {
    std::array<ClassMotion, kNumClasses> t{};
    t[1].right_hand = {74, -215};  // drinking
    t[1].pitch = -0.25;
    t[1].mouth_open = 0.3;
    t[2].right_hand = {-1, -270};  // phone call, right hand
    t[2].mouth_osc = 0.35;
    t[3].left_hand = {1, -270};  // phone call, left hand
    t[3].mouth_osc = 0.35;
    t[4].right_hand = {69, -205};  // eating
    t[4].hand_osc = 0.5;
    t[5].right_hand = {64, 40};  // texting, right hand
    t[5].hand_osc = 0.1;
    t[5].pitch = 0.35;
    t[6].left_hand = {-64, 40};  // texting, left hand
    t[6].hand_osc = 0.1;
    t[6].pitch = 0.35;
    t[7].right_hand = {-60, -330};  // reaching behind
    t[7].right_shoulder = {-30, -20};
    t[7].yaw = 0.8;
    t[8].right_hand = {150, -60};  // adjusting control panel
    t[9].left_hand = {94, 70};  // picking up, driver side
    t[9].left_shoulder = {15, 25};
    t[9].yaw = -0.45;
    t[9].pitch = 0.3;
    t[10].right_hand = {-106, 70};  // picking up, passenger side
    t[10].right_shoulder = {-15, 25};
    t[10].yaw = 0.5;
    t[10].pitch = 0.3;
    t[11].yaw = 0.6;  // talking to passenger, right
    t[11].mouth_osc = 0.35;
    t[12].yaw = 1.0;  // talking to passenger, back
    t[12].roll = 0.1;
    t[12].mouth_osc = 0.35;
    t[12].right_shoulder = {-20, -10};
    t[13].right_hand = {55, -165};  // yawning
    t[13].mouth_open = 1.0;
    t[13].pitch = -0.2;
    t[14].right_hand = {34, -350};  // hand on head
    t[14].roll = 0.15;
    t[15].right_hand = {0, -15};  // singing
    t[15].left_hand = {0, -15};
    t[15].hand_osc = 1.0;
    t[15].head_osc = 0.12;
    t[15].mouth_osc = 0.5;
    return t;
  }();
  return table;
}

const Vector3d kHeadTranslation{0.0, -310.0, 1500.0};
const Vector2d kRightWheel{166, 430};
const Vector2d kLeftWheel{346, 430};
const Vector2d kRightShoulder{136, 340};
const Vector2d kLeftShoulder{376, 340};
constexpr std::int64_t kRamp = 15;

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

// 0 outside the activity, smooth ramps of kRamp frames at both ends.
double envelope(const AnnotationRecord& a, std::int64_t f) {
  if (f < a.start_frame || f >= a.end_frame) return 0.0;
  const auto ramp = std::max<std::int64_t>(1, std::min(kRamp, (a.end_frame - a.start_frame) / 4));
  const double in = static_cast<double>(f - a.start_frame + 1) / static_cast<double>(ramp);
  const double out = static_cast<double>(a.end_frame - f) / static_cast<double>(ramp);
  return smoothstep(std::min(in, out));
}

struct Affine {
  double scale = 1.0, angle = 0.0;
  Vector2d shift{0, 0};

  Vector2d operator()(const Vector2d& p) const {
    const Vector2d c(256.0, 256.0);
    const Vector2d d = p - c;
    const double cs = std::cos(angle), sn = std::sin(angle);
    return c + scale * Vector2d(cs * d.x() - sn * d.y(), sn * d.x() + cs * d.y()) + shift;
  }
};

Affine camera_affine(int camera) {
  switch (camera) {
    case 0: return {};
    case 1: return {0.92, 0.06, {18, -12}};
    case 2: return {1.08, -0.05, {-22, 14}};
    default: {
      Rng rng(derive_seed(0xCA3E7A, static_cast<std::uint64_t>(camera)));
      return {rng.uniform(0.9, 1.1), rng.uniform(-0.06, 0.06),
              {rng.uniform(-25, 25), rng.uniform(-15, 15)}};
    }
  }
}

// Wrist plus five fingers of four joints, fanned around `direction`.
void place_hand(std::array<Keypoint, wb::kNumJoints>& joints, std::size_t begin,
                const Vector2d& wrist, double direction) {
  joints[begin] = {wrist.x(), wrist.y(), 0.9};
  for (int finger = 0; finger < 5; ++finger) {
    const double phi = direction + (finger - 2) * 0.3;
    const double step = finger == 0 ? 9.0 : 12.0;
    for (int k = 1; k <= 4; ++k) {
      const Vector2d p = wrist + step * k * Vector2d(std::cos(phi), std::sin(phi));
      joints[begin + 1 + static_cast<std::size_t>(finger) * 4 + static_cast<std::size_t>(k - 1)] = {
          p.x(), p.y(), 0.9};
    }
  }
}

// Motion of one frame, already scaled by envelopes and oscillations.
ClassMotion frame_motion(const Scenario& scn, std::int64_t f) {
  ClassMotion m;
  const double t = static_cast<double>(f) / scn.fps;
  const double two_pi = 2.0 * std::numbers::pi;
  for (const auto& a : scn.activities) {
    const double e = envelope(a, f);
    if (e == 0.0) continue;
    const ClassMotion& c = motion_table()[static_cast<std::size_t>(a.class_id)];
    const double hand_scale = e * (1.0 - c.hand_osc * (0.5 + 0.5 * std::sin(two_pi * 0.8 * t)));
    m.right_hand += hand_scale * c.right_hand;
    m.left_hand += hand_scale * c.left_hand;
    m.right_shoulder += e * c.right_shoulder;
    m.left_shoulder += e * c.left_shoulder;
    m.yaw += e * c.yaw;
    m.pitch += e * c.pitch;
    m.roll += e * (c.roll + c.head_osc * std::sin(two_pi * 0.5 * t));
    m.mouth_open += e * (c.mouth_open + c.mouth_osc * (0.5 + 0.5 * std::sin(two_pi * 3.0 * t)));
  }
  return m;
}

KeypointFrame render(const Scenario& scn, int camera, std::int64_t f, const Affine& affine) {
  const ClassMotion m = frame_motion(scn, f);
  KeypointFrame kf;
  kf.video_id = scn.video_id;
  kf.camera = camera;
  kf.frame_index = f;

  // Face: open the mouth in model space, then rotate about the nose tip.
  std::array<Vector3d, wb::kFaceLandmarks> face = synth_face_model();
  for (int i : {55, 56, 57, 58, 59, 65, 66, 67}) face[i].y() += 60.0 * m.mouth_open;
  for (int i = 5; i <= 11; ++i) face[i].y() += 40.0 * m.mouth_open * (1.0 - std::abs(i - 8) / 4.0);
  const Eigen::Matrix3d rot = (Eigen::AngleAxisd(m.roll, Vector3d::UnitZ()) *
                               Eigen::AngleAxisd(m.yaw, Vector3d::UnitY()) *
                               Eigen::AngleAxisd(m.pitch, Vector3d::UnitX()))
                                  .toRotationMatrix();
  const Eigen::AngleAxisd aa(rot);
  HeadPose pose;
  pose.rotation = aa.angle() * aa.axis();
  pose.translation = kHeadTranslation;
  const auto face2d = project_points(face, pose, synth_intrinsics());
  for (std::size_t i = 0; i < wb::kFaceLandmarks; ++i) {
    kf.joints[wb::face(i)] = {face2d[i].x(), face2d[i].y(), 0.9};
  }

  const Vector2d right_wrist = kRightWheel + m.right_hand;
  const Vector2d left_wrist = kLeftWheel + m.left_hand;
  const Vector2d right_shoulder = kRightShoulder + m.right_shoulder;
  const Vector2d left_shoulder = kLeftShoulder + m.left_shoulder;
  place_hand(kf.joints, wb::kRightHandBegin, right_wrist, -2.2);
  place_hand(kf.joints, wb::kLeftHandBegin, left_wrist, -0.9);

  auto set = [&](std::size_t id, const Vector2d& p, double c) { kf.joints[id] = {p.x(), p.y(), c}; };
  auto face_pt = [&](std::size_t lm) {
    return Vector2d(kf.joints[wb::face(lm)].x, kf.joints[wb::face(lm)].y);
  };
  set(0, face_pt(30), 0.9);
  set(1, 0.5 * (face_pt(42) + face_pt(45)), 0.9);
  set(2, 0.5 * (face_pt(36) + face_pt(39)), 0.9);
  set(3, face_pt(16), 0.8);
  set(4, face_pt(0), 0.8);
  set(wb::kLeftShoulder, left_shoulder, 0.9);
  set(wb::kRightShoulder, right_shoulder, 0.9);
  set(7, 0.5 * (left_shoulder + left_wrist) + Vector2d(40, 40), 0.8);
  set(8, 0.5 * (right_shoulder + right_wrist) + Vector2d(-40, 40), 0.8);
  set(9, left_wrist, 0.9);
  set(10, right_wrist, 0.9);
  set(11, {336, 505}, 0.5);
  set(12, {176, 505}, 0.5);
  const double legs[10][2] = {{340, 600}, {172, 600}, {345, 700}, {167, 700}, {350, 720},
                              {360, 722}, {345, 715}, {162, 720}, {152, 722}, {167, 715}};
  for (std::size_t i = 0; i < 10; ++i) set(13 + i, {legs[i][0], legs[i][1]}, 0.1);

  for (auto& j : kf.joints) {
    const Vector2d p = affine({j.x, j.y});
    j.x = p.x();
    j.y = p.y();
  }
  return kf;
}

}  // namespace

std::vector<int> scenario_labels(const Scenario& scn) {
  return frame_labels(scn.num_frames, scn.activities);
}

std::vector<KeypointFrame> gen_keypoints(const Scenario& scn, int camera) {
  scn.validate();
  if (camera < 0 || static_cast<std::size_t>(camera) >= scn.num_cameras) {
    throw InputError("camera " + std::to_string(camera) + " not in scenario");
  }
  const Affine affine = camera_affine(camera);
  Rng rng(derive_seed(scn.seed, 2 * static_cast<std::uint64_t>(camera)));
  std::vector<KeypointFrame> frames;
  frames.reserve(static_cast<std::size_t>(scn.num_frames));
  for (std::int64_t f = 0; f < scn.num_frames; ++f) {
    KeypointFrame kf = render(scn, camera, f, affine);
    for (auto& j : kf.joints) {
      j.x += rng.normal(0.0, scn.noise_sigma);
      j.y += rng.normal(0.0, scn.noise_sigma);
    }
    frames.push_back(std::move(kf));
  }
  return frames;
}

Eigen::MatrixXd class_centroids(std::size_t n_f) {
  Rng rng(derive_seed(0xC3E7201D, n_f));
  Eigen::MatrixXd c(kNumClasses, static_cast<Eigen::Index>(n_f));
  for (Eigen::Index r = 0; r < c.rows(); ++r) {
    for (Eigen::Index k = 0; k < c.cols(); ++k) c(r, k) = rng.normal();
  }
  return c;
}

double min_centroid_distance(const Eigen::MatrixXd& centroids) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index a = 0; a < centroids.rows(); ++a) {
    for (Eigen::Index b = a + 1; b < centroids.rows(); ++b) {
      best = std::min(best, (centroids.row(a) - centroids.row(b)).norm());
    }
  }
  return best;
}

std::vector<EmbeddingSegment> gen_embeddings(const Scenario& scn, int camera) {
  scn.validate();
  const auto T = static_cast<std::int64_t>(scn.segment_len);
  if (scn.num_frames < T) {
    throw InsufficientDataError("scenario has " + std::to_string(scn.num_frames) +
                                " frames, fewer than one segment of " + std::to_string(T));
  }
  const Eigen::MatrixXd centroids = class_centroids(scn.n_f);
  const std::vector<int> labels = scenario_labels(scn);
  Rng rng(derive_seed(scn.seed, 2 * static_cast<std::uint64_t>(camera) + 1));
  const double rho = scn.embed_noise_corr;
  const double innovation = std::sqrt(1.0 - rho * rho);
  Eigen::VectorXd noise = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(scn.n_f));

  std::vector<EmbeddingSegment> out;
  const auto S = scn.num_frames - T + 1;
  out.reserve(static_cast<std::size_t>(S));
  for (std::int64_t s = 0; s < S; ++s) {
    for (Eigen::Index k = 0; k < noise.size(); ++k) {
      const double z = rng.normal(0.0, scn.embed_noise_sigma);
      noise(k) = s == 0 ? z : rho * noise(k) + innovation * z;
    }
    const int label = segment_majority_label(
        std::span<const int>(labels).subspan(static_cast<std::size_t>(s), static_cast<std::size_t>(T)));
    EmbeddingSegment seg;
    seg.start_frame = s;
    seg.values.resize(scn.n_f);
    for (std::size_t k = 0; k < scn.n_f; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      seg.values[k] = static_cast<float>(centroids(label, kk) + noise(kk));
    }
    out.push_back(std::move(seg));
  }
  return out;
}

Scenario random_scenario(const RandomScenarioOptions& opts) {
  const auto n = static_cast<std::int64_t>(opts.num_activities);
  if (opts.min_length < 1 || opts.max_length < opts.min_length || opts.min_gap < 0) {
    throw InputError("random scenario: invalid length or gap bounds");
  }
  if (opts.distinct_classes && opts.num_activities > kNumClasses - 1) {
    throw InputError("random scenario: at most 15 distinct activity classes");
  }
  Rng rng(derive_seed(opts.seed, 0x5CE9));
  std::vector<std::int64_t> lengths;
  std::int64_t total = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    lengths.push_back(opts.min_length +
                      static_cast<std::int64_t>(rng.index(
                          static_cast<std::uint64_t>(opts.max_length - opts.min_length + 1))));
    total += lengths.back();
  }
  const std::int64_t slack = opts.num_frames - total - (n + 1) * opts.min_gap;
  if (slack < 0) {
    throw InputError("random scenario: " + std::to_string(n) + " activities do not fit in " +
                     std::to_string(opts.num_frames) + " frames");
  }
  // Split the slack over the n + 1 gaps with random weights.
  std::vector<double> weights(static_cast<std::size_t>(n + 1));
  double wsum = 0.0;
  for (auto& w : weights) wsum += (w = rng.uniform(0.1, 1.0));
  std::vector<int> classes;
  std::vector<int> pool;
  for (int c = 1; c < kNumClasses; ++c) pool.push_back(c);
  for (std::int64_t i = 0; i < n; ++i) {
    if (opts.distinct_classes) {
      const auto k = rng.index(pool.size());
      classes.push_back(pool[k]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
    } else {
      classes.push_back(1 + static_cast<int>(rng.index(kNumClasses - 1)));
    }
  }

  Scenario scn;
  scn.num_frames = opts.num_frames;
  scn.seed = opts.seed;
  std::int64_t cursor = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    cursor += opts.min_gap +
              static_cast<std::int64_t>(std::floor(static_cast<double>(slack) *
                                                   weights[static_cast<std::size_t>(i)] / wsum));
    scn.activities.push_back({scn.video_id, classes[static_cast<std::size_t>(i)], cursor,
                              cursor + lengths[static_cast<std::size_t>(i)]});
    cursor += lengths[static_cast<std::size_t>(i)];
  }
  scn.validate();
  return scn;
}

}  // namespace dact
