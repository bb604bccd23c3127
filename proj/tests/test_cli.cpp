// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "dact/cli.hpp"
#include "dact/data_io.hpp"
#include "dact/localization.hpp"
#include "dact/metrics.hpp"
#include "dact/probabilities.hpp"
#include "dact/synth.hpp"
#include "temp_dir.hpp"

using namespace dact;
using dact::testing::TempDir;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_json(const std::filesystem::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(); }

Scenario pipeline_scenario() {
  Scenario s;
  s.video_id = "v1";
  s.num_frames = 3000;
  s.n_f = 16;
  s.seed = 3;
  s.activities = {{"v1", 2, 300, 800}, {"v1", 5, 1200, 1700}, {"v1", 9, 2100, 2600}};
  return s;
}

// Writes num_cameras probability streams that put p on the labelled class.
std::vector<std::string> ideal_streams(const TempDir& dir, const Scenario& s, double p) {
  const auto labels = scenario_labels(s);
  FrameProbabilities fp;
  fp.values = Eigen::MatrixXd::Constant(s.num_frames, kNumClasses, (1.0 - p) / (kNumClasses - 1));
  for (std::int64_t f = 0; f < s.num_frames; ++f) fp.values(f, labels[static_cast<std::size_t>(f)]) = p;
  std::vector<std::string> paths;
  for (int c = 0; c < 3; ++c) {
    const auto path = dir / ("ideal" + std::to_string(c) + ".stem");
    write_frame_probabilities(path, fp);
    paths.push_back(path.string());
  }
  return paths;
}

}  // namespace

TEST_CASE("cli usage errors") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"bogus"}).code == kExitUsage);
  CHECK(run({"train", "--embed", "x.stem"}).code == kExitUsage);
  const Run help = run({"--help"});
  CHECK(help.code == kExitOk);
  CHECK(help.out.find("localize") != std::string::npos);
  const Run missing = run({"eval", "--pred", "/nonexistent/p.csv", "--gt", "/nonexistent/g.csv"});
  CHECK(missing.code == kExitUsage);
  CHECK(missing.err.find("does not exist") != std::string::npos);
}

TEST_CASE("cli synth writes a reproducible tree") {
  TempDir dir;
  const Scenario s = pipeline_scenario();
  write_json(dir / "scn.json", s.to_json());
  REQUIRE(run({"synth", "--scenario", (dir / "scn.json").string(), "--out-dir", (dir / "a").string()}).code == 0);
  REQUIRE(run({"synth", "--scenario", (dir / "scn.json").string(), "--out-dir", (dir / "b").string()}).code == 0);
  for (const char* name : {"labels.csv", "scenario.json", "keypoints_cam0.jsonl", "keypoints_cam2.jsonl",
                           "embeddings_cam1.stem"}) {
    CHECK(slurp(dir / "a" / name) == slurp(dir / "b" / name));
  }
  CHECK(read_annotations(dir / "a" / "labels.csv").size() == 3);
  CHECK(read_embeddings(dir / "a" / "embeddings_cam0.stem").segments.size() == 3000 - 64 + 1);

  const Run again = run({"synth", "--scenario", (dir / "scn.json").string(), "--out-dir", (dir / "a").string()});
  CHECK(again.code == kExitUsage);
  CHECK(again.err.find("--force") != std::string::npos);
  CHECK(run({"synth", "--scenario", (dir / "scn.json").string(), "--out-dir", (dir / "a").string(), "--force"})
            .code == 0);

  Scenario overlap = s;
  overlap.activities[1].start_frame = 700;
  write_json(dir / "overlap.json", overlap.to_json());
  CHECK(run({"synth", "--scenario", (dir / "overlap.json").string(), "--out-dir", (dir / "c").string()}).code ==
        kExitUsage);
  CHECK_FALSE(std::filesystem::exists(dir / "c"));
}

TEST_CASE("cli features") {
  TempDir dir;
  Scenario s = pipeline_scenario();
  s.num_frames = 200;
  s.activities = {{"v1", 1, 50, 150}};
  write_keypoints(dir / "k.jsonl", gen_keypoints(s, 0));
  const auto k = (dir / "k.jsonl").string();

  REQUIRE(run({"features", "--keypoints", k, "--out", (dir / "f.stem").string()}).code == 0);
  const auto f = read_embeddings(dir / "f.stem");
  CHECK(f.segments.size() == 200);
  CHECK(f.header.feat_dim == FeatureLayout::default_layout().pose_dim());
  CHECK(f.header.segment_len == 1);

  REQUIRE(run({"features", "--keypoints", k, "--layout", "skeleton", "--out", (dir / "s.stem").string()}).code == 0);
  CHECK(read_embeddings(dir / "s.stem").header.feat_dim == 224);

  write_json(dir / "layout.json", nlohmann::json{{"selected_joint_ids", {0, 1}}, {"head_pose_dim", 0}});
  REQUIRE(run({"features", "--keypoints", k, "--layout", (dir / "layout.json").string(), "--out",
                (dir / "l.stem").string()})
              .code == 0);
  CHECK(read_embeddings(dir / "l.stem").header.feat_dim == 4);

  CHECK(run({"features", "--keypoints", k, "--layout", "nope", "--out", (dir / "x.stem").string()}).code ==
        kExitUsage);
  write_json(dir / "bad_layout.json", nlohmann::json{{"selected_joint_ids", {500}}});
  CHECK(run({"features", "--keypoints", k, "--layout", (dir / "bad_layout.json").string(), "--out",
              (dir / "x.stem").string()})
            .code == kExitUsage);

  std::ofstream(dir / "empty.jsonl").close();
  const Run empty = run({"features", "--keypoints", (dir / "empty.jsonl").string(), "--out", (dir / "e.stem").string()});
  CHECK(empty.code == 0);
  CHECK(empty.err.find("warning") != std::string::npos);
  CHECK(read_embeddings(dir / "e.stem").segments.empty());

  // Two cameras in one file are not a single stream.
  auto mixed = gen_keypoints(s, 0);
  mixed[10].camera = 1;
  write_keypoints(dir / "mixed.jsonl", mixed);
  CHECK(run({"features", "--keypoints", (dir / "mixed.jsonl").string(), "--out", (dir / "m.stem").string()}).code ==
        kExitUsage);
}

TEST_CASE("cli localize and eval") {
  TempDir dir;
  const Scenario s = pipeline_scenario();
  write_annotations(dir / "gt.csv", s.activities);
  const auto streams = ideal_streams(dir, s, 0.9);

  std::vector<std::string> args{"localize", "--probs"};
  args.insert(args.end(), streams.begin(), streams.end());
  args.insert(args.end(), {"--video-id", "v1", "--out", (dir / "pred.csv").string()});
  REQUIRE(run(args).code == 0);
  const auto preds = read_predictions(dir / "pred.csv");
  REQUIRE(preds.size() == 3);
  double iou_sum = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(preds[i].class_id == s.activities[i].class_id);
    iou_sum += interval_iou({preds[i].class_id, preds[i].start_frame, preds[i].end_frame, 0},
                            {s.activities[i].class_id, s.activities[i].start_frame, s.activities[i].end_frame, 0});
  }
  CHECK(iou_sum / 3.0 >= 0.8);

  const Run two = run({"localize", "--probs", streams[0], streams[1], "--out", (dir / "two.csv").string()});
  CHECK(two.code == kExitUsage);
  CHECK(run({"localize", "--probs", streams[0], streams[1], "--cameras", "2", "--out", (dir / "two.csv").string()})
            .code == 0);
  CHECK(run({"localize", "--probs", streams[0], streams[1], streams[2], "--median", "350", "--out",
              (dir / "even.csv").string()})
            .code == kExitUsage);

  Scenario idle = s;
  idle.activities.clear();
  const auto flat = ideal_streams(dir, idle, 1.0 / kNumClasses);
  REQUIRE(run({"localize", "--probs", flat[0], flat[1], flat[2], "--out", (dir / "flat.csv").string()}).code == 0);
  CHECK(read_predictions(dir / "flat.csv").empty());

  const Run self = run({"eval", "--pred", (dir / "gt_as_pred.csv").string(), "--gt", (dir / "gt.csv").string()});
  CHECK(self.code == kExitUsage);
  std::vector<PredictionRecord> perfect;
  for (const auto& a : s.activities) perfect.push_back({a.video_id, a.class_id, a.start_frame, a.end_frame, 1.0});
  write_predictions(dir / "perfect.csv", perfect);
  const Run ok = run({"eval", "--pred", (dir / "perfect.csv").string(), "--gt", (dir / "gt.csv").string(), "--out",
                       (dir / "report.json").string()});
  REQUIRE(ok.code == 0);
  const auto report = nlohmann::json::parse(ok.out);
  CHECK(report.at("os").get<double>() == 1.0);
  CHECK(report == nlohmann::json::parse(slurp(dir / "report.json")));

  const Run mixed = run({"eval", "--pred", (dir / "pred.csv").string(), "--gt", (dir / "gt.csv").string()});
  REQUIRE(mixed.code == 0);
  const EvaluationReport direct =
      evaluate(read_predictions(dir / "pred.csv"), read_annotations(dir / "gt.csv"), 300);
  CHECK(nlohmann::json::parse(mixed.out) == nlohmann::json::parse(direct.to_json().dump()));

  write_predictions(dir / "none.csv", {});
  const Run none = run({"eval", "--pred", (dir / "none.csv").string(), "--gt", (dir / "gt.csv").string()});
  REQUIRE(none.code == 0);
  const auto nj = nlohmann::json::parse(none.out);
  CHECK(nj.at("os").get<double>() == 0.0);
  CHECK(nj.at("fn").get<int>() == 3);
}

TEST_CASE("cli pipeline") {
  TempDir dir;
  const Scenario s = pipeline_scenario();
  write_json(dir / "scn.json", s.to_json());
  write_json(dir / "model.json", nlohmann::json{{"n_heads", 2}, {"n_layers", 1}, {"window_tokens", 4},
                                                {"mlp_hidden", 32}, {"head_hidden", 16}});
  const auto d = [&](const std::string& name) { return (dir / "data" / name).string(); };
  REQUIRE(run({"synth", "--scenario", (dir / "scn.json").string(), "--out-dir", (dir / "data").string()}).code == 0);

  std::vector<std::string> train{"train", "--pose"};
  for (int c = 0; c < 3; ++c) {
    const auto cam = std::to_string(c);
    REQUIRE(run({"features", "--keypoints", d("keypoints_cam" + cam + ".jsonl"), "--out", d("pose" + cam + ".stem")})
                .code == 0);
    train.push_back(d("pose" + cam + ".stem"));
  }
  train.push_back("--embed");
  for (int c = 0; c < 3; ++c) train.push_back(d("embeddings_cam" + std::to_string(c) + ".stem"));
  train.insert(train.end(), {"--labels", d("labels.csv"), "--model-config", (dir / "model.json").string(), "--out",
                             (dir / "m.ckpt").string(), "--epochs", "8", "--sample-stride", "8", "--seed", "1"});
  const Run trained = run(train);
  REQUIRE(trained.code == 0);
  CHECK(trained.err.find("epoch 8/8") != std::string::npos);
  const std::string history = slurp(dir / "m.ckpt.history.csv");
  CHECK(history.rfind("epoch,loss\n", 0) == 0);
  CHECK(std::count(history.begin(), history.end(), '\n') == 9);

  std::vector<std::string> localize{"localize", "--probs"};
  for (int c = 0; c < 3; ++c) {
    const auto cam = std::to_string(c);
    const auto out = (dir / ("p" + cam + ".stem")).string();
    REQUIRE(run({"infer", "--ckpt", (dir / "m.ckpt").string(), "--pose", d("pose" + cam + ".stem"), "--embed",
                  d("embeddings_cam" + cam + ".stem"), "--out", out})
                .code == 0);
    localize.push_back(out);
  }
  // Frames inside activities are classified correctly.
  const auto labels = scenario_labels(s);
  const auto fp = read_frame_probabilities(localize[2]);
  std::size_t inside = 0, correct = 0;
  for (std::int64_t f = 0; f < s.num_frames; ++f) {
    const int y = labels[static_cast<std::size_t>(f)];
    if (y == 0) continue;
    ++inside;
    Eigen::Index arg;
    fp.values.row(f).maxCoeff(&arg);
    correct += (arg == y);
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(inside) >= 0.95);

  REQUIRE(run({"infer", "--ckpt", (dir / "m.ckpt").string(), "--pose", d("pose0.stem"), "--embed",
                d("embeddings_cam0.stem"), "--out", (dir / "again.stem").string()})
              .code == 0);
  CHECK(slurp(dir / "again.stem") == slurp(localize[2]));

  localize.insert(localize.end(), {"--video-id", "v1", "--out", (dir / "pred.csv").string()});
  REQUIRE(run(localize).code == 0);
  const Run ev = run({"eval", "--pred", (dir / "pred.csv").string(), "--gt", d("labels.csv")});
  REQUIRE(ev.code == 0);
  const auto report = nlohmann::json::parse(ev.out);
  CHECK(report.at("os").get<double>() >= 0.8);
  CHECK(report.at("recall").get<double>() >= 0.85);

  {
    // Embedding width differs from the requested model.
    write_json(dir / "wide.json", nlohmann::json{{"n_f", 32}, {"n_heads", 2}, {"n_layers", 1}});
    CHECK(run({"train", "--embed", d("embeddings_cam0.stem"), "--labels", d("labels.csv"), "--model-config",
                (dir / "wide.json").string(), "--out", (dir / "w.ckpt").string()})
              .code == kExitUsage);
    CHECK(run({"train", "--pose", d("pose0.stem"), "--embed", d("embeddings_cam0.stem"), d("embeddings_cam1.stem"),
                "--labels", d("labels.csv"), "--out", (dir / "w.ckpt").string()})
              .code == kExitUsage);

    // A stream shorter than one segment.
    StemHeader h;
    h.feat_dim = 16;
    h.segment_len = 64;
    write_embeddings(dir / "empty_embed.stem", h, {});
    CHECK(run({"infer", "--ckpt", (dir / "m.ckpt").string(), "--pose", d("pose0.stem"), "--embed",
                (dir / "empty_embed.stem").string(), "--out", (dir / "short.stem").string()})
              .code == kExitUsage);
    CHECK(run({"infer", "--ckpt", (dir / "m.ckpt").string(), "--embed", d("embeddings_cam0.stem"), "--out",
                (dir / "nopose.stem").string()})
              .code == kExitUsage);
    CHECK(run({"infer", "--ckpt", d("labels.csv"), "--pose", d("pose0.stem"), "--embed", d("embeddings_cam0.stem"),
                "--out", (dir / "bad.stem").string()})
              .code == kExitUsage);
  }
  // Non-finite data is an internal training failure.
  {
    auto e = read_embeddings(d("embeddings_cam0.stem"));
    for (auto& seg : e.segments) seg.values[0] = std::numeric_limits<float>::quiet_NaN();
    write_embeddings(dir / "nan.stem", e.header, e.segments);
    const Run r = run({"train", "--embed", (dir / "nan.stem").string(), "--labels", d("labels.csv"),
                        "--model-config", (dir / "model.json").string(), "--out", (dir / "nan.ckpt").string(),
                        "--epochs", "1", "--sample-stride", "64"});
    CHECK(r.code == kExitInternal);
    CHECK_FALSE(std::filesystem::exists(dir / "nan.ckpt"));
  }
}
