// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: prints one PASS/FAIL line per check and exits non-zero if
// any fails. Pass check numbers as arguments to run a subset, and
// --report <file> to also write the lines to a file.
#include <Eigen/Geometry>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "dact/cli.hpp"
#include "dact/data_io.hpp"
#include "dact/errors.hpp"
#include "dact/localization.hpp"
#include "dact/metrics.hpp"
#include "dact/pose_features.hpp"
#include "dact/synth.hpp"
#include "dact/training.hpp"
#include "fixtures.hpp"
#include "generators.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace dact;
using namespace dact::testing;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Collects failures; the first few are kept for the report.
class Tally {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (ok) return;
    ++failures_;
    if (failures_ <= 3) notes_ += (notes_.empty() ? "" : "; ") + what;
  }
  std::size_t checks() const { return checks_; }
  std::size_t failures() const { return failures_; }
  Outcome outcome(std::string detail) const {
    if (failures_ > 0) detail += ", " + std::to_string(failures_) + " failed: " + notes_;
    return {failures_ == 0, detail};
  }

 private:
  std::size_t checks_ = 0;
  std::size_t failures_ = 0;
  std::string notes_;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

ActivityInterval iv(int cls, std::int64_t s, std::int64_t e) { return {cls, s, e, 0.0}; }

// ---------------------------------------------------------------------------

Outcome metric_fixtures() {
  Tally t;
  const auto near = [](double a, double b) { return std::abs(a - b) <= 1e-9; };
  const ActivityInterval g{1, 100, 200, 0};
  t.expect(near(overlap_score(g, g, 300), 1.0), "os(p = g)");
  t.expect(near(overlap_score(iv(1, 115, 200), g, 10), 0.0), "start gate");
  t.expect(near(overlap_score(iv(1, 115, 200), g, 300), 85.0 / 100.0), "late start inside the gate");
  t.expect(near(overlap_score(iv(1, 105, 205), g, 300), 95.0 / 105.0), "os 95/105");

  const std::vector<ActivityInterval> gts{iv(1, 0, 100), iv(2, 200, 300), iv(1, 400, 500)};
  const MatchResult perfect = match_activities(gts, gts, 300);
  t.expect(perfect.pairs.size() == 3 && perfect.unmatched_preds.empty() && perfect.unmatched_gts.empty(),
           "preds = gts all matched");
  for (const auto& p : perfect.pairs) t.expect(near(p.os, 1.0), "matched os 1");
  t.expect(near(final_os(perfect), 1.0), "final_os perfect");
  const Prf1 pp = prf1(perfect);
  t.expect(near(pp.precision, 1.0) && near(pp.recall, 1.0) && near(pp.f1, 1.0), "prf1 perfect");

  const MatchResult none = match_activities({}, gts, 300);
  t.expect(none.pairs.empty() && none.unmatched_gts.size() == 3, "no preds");
  const Prf1 pn = prf1(none);
  t.expect(pn.precision == 0.0 && pn.recall == 0.0 && pn.f1 == 0.0, "prf1 no preds");

  const MatchResult comp = match_activities({iv(1, 10, 100), iv(1, 0, 100)}, {iv(1, 0, 100)}, 300);
  t.expect(comp.pairs.size() == 1 && comp.pairs[0].pred == 1 && comp.unmatched_preds == std::vector<std::size_t>{0},
           "competing preds");

  MatchResult half;
  half.pairs.push_back({0, 0, 0.5});
  half.unmatched_gts.push_back(1);
  t.expect(near(final_os(half), 0.25), "final_os 0.25");
  t.expect(near(final_os(MatchResult{}), 1.0), "final_os empty");

  MatchResult m;
  m.pairs = {{0, 0, 1.0}, {1, 1, 1.0}};
  m.unmatched_preds = {2};
  m.unmatched_gts = {2};
  const Prf1 p = prf1(m);
  t.expect(near(p.precision, 2.0 / 3.0) && near(p.recall, 2.0 / 3.0) && near(p.f1, 2.0 / 3.0), "prf1 2/3");
  return t.outcome(std::to_string(t.checks()) + " fixtures");
}

Outcome gradient_check() {
  ModelConfig cfg;
  cfg.n_f = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.window_tokens = 2;
  cfg.segment_len = 4;
  cfg.pose_dim = 12;
  cfg.mlp_hidden = 16;
  cfg.head_hidden = 8;
  Tally t;
  double worst = 0.0;
  std::size_t params = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    cfg.seed = seed;
    Rng rng(seed);
    ModelParams p = perturbed_params(cfg, rng);
    const std::vector<WindowSample> samples{random_window(cfg, rng), random_window(cfg, rng)};
    const std::vector<WindowView> batch{samples[0].view(), samples[1].view()};
    ModelParams analytic;
    batch_loss_and_grad(p, cfg, batch, 5.0, analytic);
    ModelParams numeric = oracle::fd_gradients(p, cfg, batch, 5.0, 1e-4);
    auto a = tensor_refs(analytic);
    auto n = tensor_refs(numeric);
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (!a[k].trainable) continue;
      for (std::size_t i = 0; i < a[k].span().size(); ++i) {
        const double x = a[k].span()[i], y = n[k].span()[i];
        const double rel = std::abs(x - y) / std::max({std::abs(x), std::abs(y), 1e-7});
        worst = std::max(worst, rel);
        ++params;
        t.expect(rel <= 1e-4, a[k].name + "[" + std::to_string(i) + "] rel " + fmt(rel));
      }
    }
  }
  return t.outcome(std::to_string(params) + " parameter entries over 5 draws, worst rel err " + fmt(worst));
}

double rotation_error(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const auto mat = [](const Eigen::Vector3d& r) -> Eigen::Matrix3d {
    const double angle = r.norm();
    return angle > 0.0 ? Eigen::AngleAxisd(angle, r / angle).toRotationMatrix() : Eigen::Matrix3d::Identity();
  };
  return Eigen::AngleAxisd(mat(a) * mat(b).transpose()).angle();
}

HeadPose random_head_pose(Rng& rng) {
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  HeadPose p;
  p.rotation = axis * rng.uniform(0.0, 60.0 * std::numbers::pi / 180.0);
  const double z = rng.uniform(500.0, 2000.0);
  p.translation = Eigen::Vector3d(rng.uniform(-0.2, 0.2) * z, rng.uniform(-0.2, 0.2) * z, z);
  return p;
}

Outcome pnp_round_trips() {
  const CameraIntrinsics intr = CameraIntrinsics::for_image(1920, 1080);
  const auto& face = FaceModel::canonical();
  Rng rng(7);
  Tally t;
  double worst_rms = 0.0, worst_rot = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const HeadPose truth = random_head_pose(rng);
    const auto img = project_points(face.points, truth, intr);
    try {
      const HeadPose est = solve_pnp(face.points, img, intr);
      const auto back = project_points(face.points, est, intr);
      double sq = 0.0;
      for (std::size_t i = 0; i < img.size(); ++i) sq += (back[i] - img[i]).squaredNorm();
      const double rms = std::sqrt(sq / static_cast<double>(img.size()));
      const double rot = rotation_error(est.rotation, truth.rotation);
      worst_rms = std::max(worst_rms, rms);
      worst_rot = std::max(worst_rot, rot);
      t.expect(rms <= 1e-6 && rot <= 1e-6, "noiseless trial " + std::to_string(trial));
    } catch (const Error& e) {
      t.expect(false, "noiseless trial " + std::to_string(trial) + ": " + e.what());
    }
  }
  std::size_t within = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const HeadPose truth = random_head_pose(rng);
    auto img = project_points(face.points, truth, intr);
    for (auto& pt : img) pt += Eigen::Vector2d(rng.normal(0.0, 0.5), rng.normal(0.0, 0.5));
    try {
      const HeadPose est = solve_pnp(face.points, img, intr);
      within += rotation_error(est.rotation, truth.rotation) <= 2.0 * std::numbers::pi / 180.0;
    } catch (const Error&) {
    }
  }
  const double frac = static_cast<double>(within) / 1000.0;
  t.expect(frac >= 0.95, "noisy fraction within 2 deg " + fmt(frac));
  return t.outcome("noiseless worst rms " + fmt(worst_rms) + " px, rot " + fmt(worst_rot) +
                   " rad; noisy within 2 deg " + fmt(frac * 100.0, 3) + "%");
}

Outcome oracle_equivalence() {
  Rng rng(11);
  Tally t;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto s = random_signal(rng, 1 + rng.index(2000));
    const std::size_t width = 2 * rng.index(200) + 1;
    t.expect(median_filter(s, width) == oracle::naive_median(s, width), "median trial " + std::to_string(trial));
  }
  for (int trial = 0; trial < 1000; ++trial) {
    const auto s = random_signal(rng, 1 + rng.index(2000));
    const double h = rng.uniform(0.05, 0.95);
    const auto w = static_cast<std::int64_t>(1 + rng.index(300));
    t.expect(find_peaks(s, h, w) == oracle::naive_peaks(s, h, w), "peaks trial " + std::to_string(trial));
  }
  for (int trial = 0; trial < 1000; ++trial) {
    const auto preds = random_detections(rng, rng.index(21));
    const double o_max = rng.uniform();
    t.expect(dedup(preds, o_max) == oracle::naive_dedup(preds, o_max), "dedup trial " + std::to_string(trial));
  }
  return t.outcome("1000 instances each of median_filter, find_peaks, dedup");
}

// 200 pure segments: ten single-activity clips of 20 segments each.
Outcome overfit() {
  const FeatureLayout layout = FeatureLayout::default_layout();
  std::vector<VideoData> clips;
  for (int c = 1; c <= 10; ++c) {
    Scenario s;
    s.num_frames = 20 + 63;
    s.n_f = 32;
    s.seed = static_cast<std::uint64_t>(c);
    s.activities = {{"clip", c, 0, s.num_frames}};
    clips.push_back(synth_video(s, 0, layout));
  }
  ModelConfig cfg;
  cfg.pose_dim = layout.pose_dim();
  cfg.n_f = 32;
  cfg.n_heads = 4;
  cfg.n_layers = 1;
  cfg.window_tokens = 4;
  cfg.mlp_hidden = 64;
  cfg.head_hidden = 32;
  cfg.seed = 1;
  LossConfig lc;
  lc.beta = 20.0;
  lc.lr = 3e-3;
  TrainOptions o;
  o.epochs = 500;
  o.batch_size = 16;
  o.seed = 1;
  o.target_loss = 0.05;

  TempDir dir;
  const TrainResult a = train(clips, cfg, lc, o);
  const TrainResult b = train(clips, cfg, lc, o);
  write_checkpoint(to_checkpoint(a.model), dir / "a.ckpt");
  write_checkpoint(to_checkpoint(b.model), dir / "b.ckpt");
  const auto bytes = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  Tally t;
  const double final_loss = a.loss_history.back();
  t.expect(final_loss < 0.05, "final loss " + fmt(final_loss));
  t.expect(bytes(dir / "a.ckpt") == bytes(dir / "b.ckpt"), "checkpoints differ");
  t.expect(a.loss_history == b.loss_history, "loss histories differ");
  return t.outcome("loss " + fmt(final_loss) + " after " + std::to_string(a.loss_history.size()) +
                   " epochs, checkpoints bit-identical");
}

Scenario training_scenario(std::uint64_t seed) {
  RandomScenarioOptions o;
  o.seed = seed;
  o.num_frames = 13000;
  o.num_activities = 15;
  o.min_length = 300;
  o.max_length = 600;
  o.min_gap = 200;
  Scenario s = random_scenario(o);
  s.video_id = "train";
  s.n_f = 32;
  s.seed = seed;
  for (auto& a : s.activities) a.video_id = s.video_id;
  return s;
}

Scenario test_scenario(std::uint64_t seed) {
  RandomScenarioOptions o;
  o.seed = seed;
  Scenario s = random_scenario(o);
  s.video_id = "test";
  s.n_f = 32;
  s.seed = seed;
  for (auto& a : s.activities) a.video_id = s.video_id;
  return s;
}

nlohmann::json desk_model_json() {
  return {{"n_f", 32}, {"n_heads", 4}, {"n_layers", 1}, {"window_tokens", 4}, {"mlp_hidden", 64}, {"head_hidden", 32}};
}

Outcome end_to_end() {
  TempDir dir;
  const auto cli = [](std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    if (code != kExitOk) throw std::runtime_error(args[0] + " exited " + std::to_string(code) + ": " + err.str());
    return out.str();
  };
  const Scenario train_scn = training_scenario(1);
  const Scenario test_scn = test_scenario(2);
  std::ofstream(dir / "train.json") << train_scn.to_json().dump();
  std::ofstream(dir / "test.json") << test_scn.to_json().dump();
  std::ofstream(dir / "model.json") << desk_model_json().dump();

  cli({"synth", "--scenario", (dir / "train.json").string(), "--out-dir", (dir / "train").string()});
  cli({"synth", "--scenario", (dir / "test.json").string(), "--out-dir", (dir / "test").string()});
  std::vector<std::string> train{"train", "--pose"}, embeds{"--embed"};
  for (const char* split : {"train", "test"}) {
    for (int c = 0; c < 3; ++c) {
      const auto base = dir / split;
      const auto cam = std::to_string(c);
      cli({"features", "--keypoints", (base / ("keypoints_cam" + cam + ".jsonl")).string(), "--out",
           (base / ("pose" + cam + ".stem")).string()});
      if (std::string(split) == "train") {
        train.push_back((base / ("pose" + cam + ".stem")).string());
        embeds.push_back((base / ("embeddings_cam" + cam + ".stem")).string());
      }
    }
  }
  train.insert(train.end(), embeds.begin(), embeds.end());
  train.insert(train.end(), {"--labels", (dir / "train" / "labels.csv").string(), "--model-config",
                             (dir / "model.json").string(), "--out", (dir / "model.ckpt").string(), "--epochs", "10",
                             "--sample-stride", "16", "--seed", "1"});
  cli(train);
  std::vector<std::string> localize{"localize", "--probs"};
  for (int c = 0; c < 3; ++c) {
    const auto cam = std::to_string(c);
    const auto out = (dir / ("probs" + cam + ".stem")).string();
    cli({"infer", "--ckpt", (dir / "model.ckpt").string(), "--pose", (dir / "test" / ("pose" + cam + ".stem")).string(),
         "--embed", (dir / "test" / ("embeddings_cam" + cam + ".stem")).string(), "--out", out});
    localize.push_back(out);
  }
  localize.insert(localize.end(), {"--video-id", "test", "--out", (dir / "pred.csv").string()});
  cli(localize);
  const auto report =
      nlohmann::json::parse(cli({"eval", "--pred", (dir / "pred.csv").string(), "--gt", (dir / "test" / "labels.csv").string()}));
  const double os = report.at("os").get<double>();
  const double recall = report.at("recall").get<double>();
  Tally t;
  t.expect(os >= 0.8, "os " + fmt(os));
  t.expect(recall >= 0.85, "recall " + fmt(recall));
  return t.outcome("os " + fmt(os) + ", recall " + fmt(recall) + ", precision " +
                   fmt(report.at("precision").get<double>()));
}

double scene_os(const FusionModel& model, const std::vector<VideoData>& cams, const Scenario& scn) {
  std::vector<FrameProbabilities> probs;
  for (const auto& v : cams) probs.push_back(infer(model, v));
  const auto preds = localize(average_cameras(probs), LocalizeConfig{});
  std::vector<ActivityInterval> gts;
  for (const auto& a : scn.activities) gts.push_back({a.class_id, a.start_frame, a.end_frame, 0.0});
  return final_os(match_activities(preds, gts, static_cast<std::int64_t>(std::llround(10.0 * scn.fps))));
}

Outcome ablation() {
  struct Variant {
    const char* name;
    std::optional<FeatureLayout> layout;
  };
  const std::vector<Variant> variants{
      {"embeddings", std::nullopt}, {"skeleton", FeatureLayout::skeleton_only()}, {"skeleton+motion", FeatureLayout::default_layout()}};
  std::vector<std::vector<double>> os(variants.size());
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Scenario train_scn = training_scenario(100 + seed);
    Scenario test_scn = test_scenario(200 + seed);
    for (Scenario* s : {&train_scn, &test_scn}) {
      s->embed_noise_sigma = 4.0;
      s->embed_noise_corr = 0.98;
    }
    for (std::size_t v = 0; v < variants.size(); ++v) {
      std::vector<VideoData> train_cams, test_cams;
      for (int c = 0; c < 3; ++c) {
        train_cams.push_back(synth_video(train_scn, c, variants[v].layout));
        test_cams.push_back(synth_video(test_scn, c, variants[v].layout));
      }
      ModelConfig cfg = ModelConfig::from_json(desk_model_json());
      cfg.pose_dim = variants[v].layout ? variants[v].layout->pose_dim() : 0;
      cfg.seed = seed;
      TrainOptions o;
      o.epochs = 8;
      o.sample_stride = 16;
      o.seed = seed;
      const TrainResult r = train(train_cams, cfg, LossConfig{}, o);
      os[v].push_back(scene_os(r.model, test_cams, test_scn));
    }
  }
  std::vector<double> med;
  std::string detail = "median os";
  for (std::size_t v = 0; v < variants.size(); ++v) {
    auto sorted = os[v];
    std::sort(sorted.begin(), sorted.end());
    med.push_back(sorted[sorted.size() / 2]);
    detail += std::string(" ") + variants[v].name + " " + fmt(med.back(), 3) + " (";
    for (std::size_t i = 0; i < os[v].size(); ++i) detail += (i ? " " : "") + fmt(os[v][i], 3);
    detail += ")";
  }
  Tally t;
  t.expect(med[1] - med[0] >= -0.02, "skeleton below embeddings");
  t.expect(med[2] - med[1] >= -0.02, "skeleton+motion below skeleton");
  return t.outcome(detail);
}

std::vector<double> piecewise_constant(Rng& rng, std::size_t n, std::size_t min_run) {
  std::vector<double> s;
  while (s.size() < n) {
    const double level = std::round(rng.uniform() * 10.0) / 10.0;
    s.insert(s.end(), min_run + rng.index(3 * min_run + 1), level);
  }
  s.resize(n);
  // Edge replication keeps a trimmed final run fixed too.
  return s;
}

Outcome invariants() {
  Rng rng(21);
  Tally t;
  std::size_t cases = 0;

  ModelConfig tiny;
  tiny.n_f = 8;
  tiny.n_heads = 2;
  tiny.n_layers = 1;
  tiny.window_tokens = 2;
  tiny.segment_len = 4;
  tiny.pose_dim = 12;
  tiny.mlp_hidden = 16;
  tiny.head_hidden = 8;
  for (int trial = 0; trial < 200; ++trial, ++cases) {
    const FusionModel model{tiny, LossConfig{}, perturbed_params(tiny, rng), 0};
    const auto frames = static_cast<Eigen::Index>(4 + rng.index(40));
    VideoData v;
    v.pose_frames = Mat::NullaryExpr(frames, 12, [&] { return rng.normal(0.0, 1.0); });
    v.embeddings = Mat::NullaryExpr(frames - 3, 8, [&] { return rng.normal(0.0, 1.0); });
    const FrameProbabilities fp = infer(model, v);
    bool ok = fp.num_frames() == frames && (fp.values.array() >= 0.0).all();
    for (Eigen::Index r = 0; r < frames; ++r) ok = ok && std::abs(fp.values.row(r).sum() - 1.0) <= 1e-9;
    const std::vector<FrameProbabilities> cams{random_scene(rng, 300), random_scene(rng, 300)};
    const FrameProbabilities avg = average_cameras(cams);
    for (Eigen::Index r = 0; r < 300; ++r) ok = ok && std::abs(avg.values.row(r).sum() - 1.0) <= 1e-9;
    t.expect(ok, "normalisation trial " + std::to_string(trial));
  }

  for (int trial = 0; trial < 200; ++trial, ++cases) {
    Vec logits = Vec::NullaryExpr(kNumClasses, [&] { return rng.normal(0.0, 3.0); });
    const double beta = rng.uniform(0.1, 10.0);
    const double shift = rng.uniform(-100.0, 100.0);
    const Vec a = softmax_beta(logits, beta);
    const Vec b = softmax_beta((logits.array() + shift).matrix(), beta);
    t.expect((a - b).cwiseAbs().maxCoeff() <= 1e-9 && std::abs(a.sum() - 1.0) <= 1e-12,
             "softmax shift trial " + std::to_string(trial));
  }

  for (int trial = 0; trial < 200; ++trial, ++cases) {
    const std::size_t n = 1 + rng.index(128);
    const int major = static_cast<int>(rng.index(kNumClasses));
    const std::size_t count = n / 2 + 1 + rng.index(n - n / 2);
    std::vector<int> labels(count, major);
    while (labels.size() < n) labels.push_back(static_cast<int>(rng.index(kNumClasses)));
    for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[rng.index(i)]);
    const double beta = rng.uniform(0.01, 20.0);
    Eigen::Index arg;
    density_target(labels, beta).maxCoeff(&arg);
    t.expect(arg == major, "density argmax trial " + std::to_string(trial));
  }

  LocalizeConfig small;
  small.median_width = 51;
  small.min_width_frames = 50;
  for (int trial = 0; trial < 200; ++trial, ++cases) {
    const std::size_t n_cams = 2 + rng.index(3);
    std::vector<FrameProbabilities> cams;
    for (std::size_t c = 0; c < n_cams; ++c) cams.push_back(random_scene(rng, 1200));
    const LocalizeConfig& cfg = trial % 2 ? small : LocalizeConfig{};
    const auto ref = localize(average_cameras(cams), cfg);
    std::vector<std::size_t> order(n_cams);
    std::iota(order.begin(), order.end(), 0);
    bool same = true;
    while (std::next_permutation(order.begin(), order.end())) {
      std::vector<FrameProbabilities> perm;
      for (std::size_t i : order) perm.push_back(cams[i]);
      same = same && localize(average_cameras(perm), cfg) == ref;
    }
    t.expect(same, "camera permutation trial " + std::to_string(trial));
  }

  for (int trial = 0; trial < 200; ++trial, ++cases) {
    const std::size_t width = 2 * rng.index(50) + 1;
    const auto s = piecewise_constant(rng, 1 + rng.index(2000), width / 2 + 1);
    const auto once = median_filter(s, width);
    t.expect(once == s && median_filter(once, width) == once, "median idempotence trial " + std::to_string(trial));
  }
  return t.outcome(std::to_string(cases) + " cases over 5 properties");
}

struct Check {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Check> checks{
      {1, "metric fixtures", 1.0, metric_fixtures},
      {2, "gradient integrity", 30.0, gradient_check},
      {3, "pnp round-trips", 10.0, pnp_round_trips},
      {4, "oracle equivalence", 60.0, oracle_equivalence},
      {5, "overfit", 120.0, overfit},
      {6, "end-to-end synthetic", 300.0, end_to_end},
      {7, "ablation direction", 900.0, ablation},
      {8, "invariant suite", 60.0, invariants},
  };
  std::set<int> wanted;
  std::ofstream report;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--report" && i + 1 < argc) {
      report.open(argv[++i]);
    } else {
      wanted.insert(std::atoi(argv[i]));
    }
  }

  int failed = 0;
  for (const auto& c : checks) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) {
      o.pass = false;
      o.detail += ", over the " + fmt(c.budget_s) + " s budget";
    }
    failed += !o.pass;
    std::ostringstream line;
    line << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << " (" << fmt(secs, 3)
         << " s): " << o.detail << "\n";
    std::cout << line.str() << std::flush;
    if (report.is_open()) report << line.str() << std::flush;
  }
  return failed == 0 ? 0 : 1;
}
