// SPDX-License-Identifier: Apache-2.0
#include "dact/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "dact/data_io.hpp"
#include "dact/errors.hpp"
#include "dact/localization.hpp"
#include "dact/metrics.hpp"
#include "dact/pose_features.hpp"
#include "dact/synth.hpp"
#include "dact/training.hpp"

namespace fs = std::filesystem;

namespace dact {
namespace {

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

void require_input(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw InputError("input file " + path.string() + " does not exist");
}

void require_writable(const fs::path& path, bool force) {
  if (fs::exists(path) && !force) {
    throw InputError(path.string() + " already exists (use --force to overwrite)");
  }
}

// Rows of a STEM file as a matrix.
Mat read_stem_matrix(const fs::path& path, StemHeader* header = nullptr) {
  const EmbeddingFile file = read_embeddings(path);
  Mat m(static_cast<Eigen::Index>(file.segments.size()), file.header.feat_dim);
  for (std::size_t r = 0; r < file.segments.size(); ++r) {
    for (std::uint32_t k = 0; k < file.header.feat_dim; ++k) {
      m(static_cast<Eigen::Index>(r), k) = file.segments[r].values[k];
    }
  }
  if (header) *header = file.header;
  return m;
}

void write_stem_matrix(const fs::path& path, const Mat& m, std::uint32_t segment_len) {
  StemHeader header;
  header.feat_dim = static_cast<std::uint32_t>(m.cols());
  header.segment_len = segment_len;
  std::vector<EmbeddingSegment> rows(static_cast<std::size_t>(m.rows()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    rows[r].start_frame = static_cast<std::int64_t>(r);
    rows[r].values.resize(header.feat_dim);
    for (std::uint32_t k = 0; k < header.feat_dim; ++k) {
      rows[r].values[k] = static_cast<float>(m(static_cast<Eigen::Index>(r), k));
    }
  }
  write_embeddings(path, header, rows);
}

// Pose stream and embeddings of one camera, checked for alignment.
VideoData load_stream(const std::optional<fs::path>& pose_path, const fs::path& embed_path) {
  VideoData v;
  StemHeader eh;
  v.embeddings = read_stem_matrix(embed_path, &eh);
  if (eh.stride != 1) {
    throw SchemaError(embed_path.string() + ": embeddings must have stride 1, got " +
                      std::to_string(eh.stride));
  }
  const std::int64_t frames = eh.num_segments == 0 ? 0 : eh.num_frames();
  if (pose_path) {
    StemHeader ph;
    v.pose_frames = read_stem_matrix(*pose_path, &ph);
    if (ph.segment_len != 1 || ph.stride != 1) {
      throw SchemaError(pose_path->string() + ": pose features must have one row per frame");
    }
    if (v.pose_frames.rows() != frames) {
      throw ShapeError(pose_path->string() + " has " + std::to_string(v.pose_frames.rows()) +
                       " frames but " + embed_path.string() + " spans " + std::to_string(frames));
    }
  } else {
    v.pose_frames.resize(frames, 0);
  }
  return v;
}

FeatureLayout load_layout(const std::string& name) {
  if (name == "default") return FeatureLayout::default_layout();
  if (name == "skeleton") return FeatureLayout::skeleton_only();
  if (!fs::exists(name)) {
    throw InputError("unknown layout '" + name + "' (expected default, skeleton or a layout JSON file)");
  }
  FeatureLayout layout = FeatureLayout::from_json(read_json_file(name));
  layout.validate();
  return layout;
}

// ---------------------------------------------------------------------------
// features

struct FeaturesArgs {
  std::string keypoints, layout = "default", intrinsics, out;
  bool force = false;
};

void cmd_features(const FeaturesArgs& a, std::ostream& err) {
  require_input(a.keypoints);
  require_writable(a.out, a.force);
  const FeatureLayout layout = load_layout(a.layout);
  CameraIntrinsics intr = synth_intrinsics();
  if (!a.intrinsics.empty()) {
    require_input(a.intrinsics);
    intr = CameraIntrinsics::from_json(read_json_file(a.intrinsics));
  }

  KeypointReader reader(a.keypoints);
  PoseFeatureExtractor extract(layout, intr);
  std::vector<std::vector<double>> rows;
  std::optional<std::pair<std::string, int>> stream;
  while (auto frame = reader.next()) {
    const std::pair<std::string, int> id{frame->video_id, frame->camera};
    if (!stream) stream = id;
    if (id != *stream) {
      throw SchemaError(a.keypoints + ": expected a single stream (" + stream->first + ", camera " +
                        std::to_string(stream->second) + "), found " + id.first + ", camera " +
                        std::to_string(id.second));
    }
    if (frame->frame_index != static_cast<std::int64_t>(rows.size())) {
      throw SchemaError(a.keypoints + ": frame_index " + std::to_string(frame->frame_index) +
                        " where " + std::to_string(rows.size()) + " was expected (frames must be contiguous from 0)");
    }
    rows.push_back(extract(*frame).values);
  }
  if (rows.empty()) err << "warning: " << a.keypoints << " has no frames; writing an empty feature file\n";
  if (extract.low_confidence_frames() > 0) {
    err << "warning: " << extract.low_confidence_frames()
        << " frames reused the previous head pose (low-confidence landmarks or failed PnP)\n";
  }
  Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(layout.pose_dim()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t k = 0; k < rows[r].size(); ++k) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = rows[r][k];
    }
  }
  write_stem_matrix(a.out, m, 1);
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::vector<std::string> pose, embed, labels;
  std::string model_config, loss_config, out, history;
  std::size_t epochs = 10;
  std::optional<std::uint64_t> seed;
  std::size_t batch_size = 16;
  std::size_t sample_stride = 1;
  std::optional<double> target_loss;
  bool force = false;
};

void cmd_train(const TrainArgs& a, std::ostream& err) {
  if (!a.pose.empty() && a.pose.size() != a.embed.size()) {
    throw InputError("got " + std::to_string(a.pose.size()) + " --pose files for " +
                     std::to_string(a.embed.size()) + " --embed files");
  }
  if (a.labels.size() != 1 && a.labels.size() != a.embed.size()) {
    throw InputError("--labels needs one file, or one per --embed file");
  }
  for (const auto& p : a.pose) require_input(p);
  for (const auto& p : a.embed) require_input(p);
  for (const auto& p : a.labels) require_input(p);
  const std::string history = a.history.empty() ? a.out + ".history.csv" : a.history;
  require_writable(a.out, a.force);
  require_writable(history, a.force);

  std::vector<VideoData> videos;
  for (std::size_t i = 0; i < a.embed.size(); ++i) {
    std::optional<fs::path> pose;
    if (!a.pose.empty()) pose = a.pose[i];
    VideoData v = load_stream(pose, a.embed[i]);
    const auto records = read_annotations(a.labels.size() == 1 ? a.labels[0] : a.labels[i]);
    v.labels = frame_labels(v.num_frames(), records);
    videos.push_back(std::move(v));
  }

  nlohmann::json mj = nlohmann::json::object();
  if (!a.model_config.empty()) {
    require_input(a.model_config);
    mj = read_json_file(a.model_config);
  }
  if (!mj.contains("pose_dim")) mj["pose_dim"] = videos.front().pose_frames.cols();
  if (!mj.contains("n_f")) mj["n_f"] = videos.front().embeddings.cols();
  if (a.seed) mj["seed"] = *a.seed;
  const ModelConfig model_cfg = ModelConfig::from_json(mj);
  LossConfig loss_cfg;
  if (!a.loss_config.empty()) {
    require_input(a.loss_config);
    loss_cfg = LossConfig::from_json(read_json_file(a.loss_config));
  }

  TrainOptions opts;
  opts.epochs = a.epochs;
  opts.batch_size = a.batch_size;
  opts.sample_stride = a.sample_stride;
  opts.seed = model_cfg.seed;
  opts.target_loss = a.target_loss;
  opts.on_epoch = [&](std::size_t epoch, double loss) {
    err << "epoch " << epoch + 1 << "/" << a.epochs << " loss " << loss << "\n";
  };
  const TrainResult result = train(videos, model_cfg, loss_cfg, opts);

  write_checkpoint(to_checkpoint(result.model), a.out);
  write_file_atomically(history, [&](std::ostream& out) {
    out << "epoch,loss\n";
    out.precision(17);
    for (std::size_t e = 0; e < result.loss_history.size(); ++e) {
      out << e + 1 << "," << result.loss_history[e] << "\n";
    }
  });
}

// ---------------------------------------------------------------------------
// infer

struct InferArgs {
  std::string ckpt, pose, embed, out;
  bool force = false;
};

void cmd_infer(const InferArgs& a) {
  require_input(a.ckpt);
  require_input(a.embed);
  if (!a.pose.empty()) require_input(a.pose);
  require_writable(a.out, a.force);
  const FusionModel model = load_model(a.ckpt);
  if (model.config.pose_dim > 0 && a.pose.empty()) {
    throw InputError("model uses pose features (pose_dim " + std::to_string(model.config.pose_dim) +
                     "); pass --pose");
  }
  std::optional<fs::path> pose;
  if (model.config.pose_dim > 0) pose = a.pose;
  const VideoData video = load_stream(pose, a.embed);
  write_frame_probabilities(a.out, infer(model, video));
}

// ---------------------------------------------------------------------------
// localize

struct LocalizeArgs {
  std::vector<std::string> probs;
  LocalizeConfig cfg;
  std::string video_id = "video";
  std::string out;
  bool force = false;
};

void cmd_localize(const LocalizeArgs& a) {
  a.cfg.validate();
  if (a.probs.size() != a.cfg.num_cameras) {
    throw InputError("expected " + std::to_string(a.cfg.num_cameras) + " camera streams, got " +
                     std::to_string(a.probs.size()));
  }
  for (const auto& p : a.probs) require_input(p);
  require_writable(a.out, a.force);
  std::vector<FrameProbabilities> streams;
  for (const auto& p : a.probs) streams.push_back(read_frame_probabilities(p));
  const auto intervals = localize(average_cameras(streams), a.cfg);
  std::vector<PredictionRecord> records;
  for (const auto& iv : intervals) {
    records.push_back({a.video_id, iv.class_id, iv.start_frame, iv.end_frame, iv.peak_height});
  }
  write_predictions(a.out, records);
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string pred, gt, out;
  double fps = 30.0;
  double window_s = 10.0;
  bool force = false;
};

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  require_input(a.pred);
  require_input(a.gt);
  if (!(a.fps > 0.0)) throw InputError("--fps must be positive");
  if (!a.out.empty()) require_writable(a.out, a.force);
  const auto window = static_cast<std::int64_t>(std::llround(a.window_s * a.fps));
  const EvaluationReport report = evaluate(read_predictions(a.pred), read_annotations(a.gt), window);
  const std::string text = report.to_json().dump(2);
  out << text << "\n";
  if (!a.out.empty()) {
    write_file_atomically(a.out, [&](std::ostream& o) { o << text << "\n"; });
  }
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string scenario, out_dir;
  bool force = false;
};

void cmd_synth(const SynthArgs& a) {
  require_input(a.scenario);
  const Scenario scn = Scenario::from_json(read_json_file(a.scenario));
  const fs::path dir = a.out_dir;
  std::vector<fs::path> targets{dir / "labels.csv", dir / "scenario.json"};
  for (std::size_t c = 0; c < scn.num_cameras; ++c) {
    targets.push_back(dir / ("keypoints_cam" + std::to_string(c) + ".jsonl"));
    targets.push_back(dir / ("embeddings_cam" + std::to_string(c) + ".stem"));
  }
  for (const auto& t : targets) require_writable(t, a.force);
  fs::create_directories(dir);

  write_annotations(dir / "labels.csv", scn.activities);
  write_file_atomically(dir / "scenario.json",
                        [&](std::ostream& o) { o << scn.to_json().dump(2) << "\n"; });
  for (std::size_t c = 0; c < scn.num_cameras; ++c) {
    const int cam = static_cast<int>(c);
    write_keypoints(dir / ("keypoints_cam" + std::to_string(c) + ".jsonl"), gen_keypoints(scn, cam));
    StemHeader header;
    header.feat_dim = static_cast<std::uint32_t>(scn.n_f);
    header.segment_len = static_cast<std::uint32_t>(scn.segment_len);
    write_embeddings(dir / ("embeddings_cam" + std::to_string(c) + ".stem"), header,
                     gen_embeddings(scn, cam));
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Distracted-driver action recognition pipeline", "dact"};
  app.require_subcommand(1);

  FeaturesArgs fa;
  auto* features = app.add_subcommand("features", "Pose features from a keypoint stream");
  features->add_option("--keypoints", fa.keypoints, "Keypoint JSON Lines file")->required();
  features->add_option("--layout", fa.layout, "Layout JSON, or 'default' / 'skeleton'");
  features->add_option("--intrinsics", fa.intrinsics, "Camera intrinsics JSON (default: 512x512 image)");
  features->add_option("--out", fa.out, "Output feature file")->required();
  features->add_flag("--force", fa.force, "Overwrite existing outputs");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train the fusion model");
  train_cmd->add_option("--pose", ta.pose, "Pose feature files, one per stream");
  train_cmd->add_option("--embed", ta.embed, "Embedding files, one per stream")->required();
  train_cmd->add_option("--labels", ta.labels, "Annotation CSV (one, or one per stream)")->required();
  train_cmd->add_option("--model-config", ta.model_config, "Model config JSON");
  train_cmd->add_option("--loss-config", ta.loss_config, "Loss / optimiser config JSON");
  train_cmd->add_option("--out", ta.out, "Checkpoint path")->required();
  train_cmd->add_option("--history", ta.history, "Loss history CSV (default: <out>.history.csv)");
  train_cmd->add_option("--epochs", ta.epochs, "Epochs")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--seed", ta.seed, "Seed for initialisation and shuffling");
  train_cmd->add_option("--batch-size", ta.batch_size, "Windows per batch")->check(CLI::PositiveNumber);
  train_cmd->add_option("--sample-stride", ta.sample_stride, "Segments between window starts")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--target-loss", ta.target_loss, "Stop once the epoch loss drops below this");
  train_cmd->add_flag("--force", ta.force, "Overwrite existing outputs");

  InferArgs ia;
  auto* infer_cmd = app.add_subcommand("infer", "Frame probabilities of one camera stream");
  infer_cmd->add_option("--ckpt", ia.ckpt, "Checkpoint")->required();
  infer_cmd->add_option("--pose", ia.pose, "Pose feature file");
  infer_cmd->add_option("--embed", ia.embed, "Embedding file")->required();
  infer_cmd->add_option("--out", ia.out, "Output probability file")->required();
  infer_cmd->add_flag("--force", ia.force, "Overwrite existing outputs");

  LocalizeArgs la;
  auto* localize_cmd = app.add_subcommand("localize", "Activity intervals from camera probabilities");
  localize_cmd->add_option("--probs", la.probs, "Probability files, one per camera")->required();
  localize_cmd->add_option("--median", la.cfg.median_width, "Median filter width (odd)");
  localize_cmd->add_option("--min-height", la.cfg.min_height, "Minimum peak height");
  localize_cmd->add_option("--min-width", la.cfg.min_width_frames, "Minimum peak width, frames");
  localize_cmd->add_option("--iou-max", la.cfg.o_max, "IoU above which overlaps are suppressed");
  localize_cmd->add_option("--cameras", la.cfg.num_cameras, "Expected number of cameras");
  localize_cmd->add_option("--video-id", la.video_id, "video_id written to the predictions");
  localize_cmd->add_option("--out", la.out, "Predictions CSV")->required();
  localize_cmd->add_flag("--force", la.force, "Overwrite existing outputs");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Score predictions against ground truth");
  eval_cmd->add_option("--pred", ea.pred, "Predictions CSV")->required();
  eval_cmd->add_option("--gt", ea.gt, "Ground-truth CSV")->required();
  eval_cmd->add_option("--fps", ea.fps, "Frames per second");
  eval_cmd->add_option("--window", ea.window_s, "Start/end tolerance in seconds");
  eval_cmd->add_option("--out", ea.out, "Also write the JSON report here");
  eval_cmd->add_flag("--force", ea.force, "Overwrite existing outputs");

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic scenario");
  synth_cmd->add_option("--scenario", sa.scenario, "Scenario JSON")->required();
  synth_cmd->add_option("--out-dir", sa.out_dir, "Output directory")->required();
  synth_cmd->add_flag("--force", sa.force, "Overwrite existing outputs");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (features->parsed()) cmd_features(fa, err);
    else if (train_cmd->parsed()) cmd_train(ta, err);
    else if (infer_cmd->parsed()) cmd_infer(ia);
    else if (localize_cmd->parsed()) cmd_localize(la);
    else if (eval_cmd->parsed()) cmd_eval(ea, out);
    else if (synth_cmd->parsed()) cmd_synth(sa);
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitOk;
}

}  // namespace dact
