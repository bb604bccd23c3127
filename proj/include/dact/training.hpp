// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "dact/fusion_model.hpp"
#include "dact/probabilities.hpp"

namespace dact {

struct AdamState {
  std::vector<Vec> m;
  std::vector<Vec> v;
  std::uint64_t step = 0;

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
};

/// One Adam update with bias correction and decoupled weight decay
/// (p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)) on every
/// trainable tensor. State is lazily sized on first use.
void adam_step(ModelParams& params, ModelParams& grads, AdamState& state, const LossConfig& cfg);

/// Frame-aligned inputs of one camera stream.
struct VideoData {
  Mat pose_frames;          ///< num_frames x pose_dim (may have 0 columns)
  Mat embeddings;           ///< num_segments x n_f, segment s starts at frame s
  std::vector<int> labels;  ///< per-frame class ids, empty at inference

  std::int64_t num_frames() const;
  std::int64_t num_segments() const { return embeddings.rows(); }
};

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  std::size_t sample_stride = 1;  ///< distance between consecutive window starts
  std::uint64_t seed = 0;         ///< shuffling stream
  std::optional<double> target_loss;  ///< stop once an epoch mean drops below this
  std::function<void(std::size_t epoch, double loss)> on_epoch;
};

struct FusionModel {
  ModelConfig config;
  LossConfig loss;
  ModelParams params;
  std::uint64_t step = 0;
};

struct TrainResult {
  FusionModel model;
  std::vector<double> loss_history;  ///< mean window loss per epoch
};

/// Fits input standardisation on all pose frames, then runs Adam over
/// shuffled W-token windows. Throws InputError on an empty dataset and
/// TrainingError on a non-finite loss.
TrainResult train(const std::vector<VideoData>& videos, const ModelConfig& model_cfg,
                  const LossConfig& loss_cfg, const TrainOptions& opts);

/// Class distributions of every segment (plain softmax), using W-token windows
/// that tile the segment sequence.
std::vector<SegmentProbabilities> infer_segments(const FusionModel& model, const VideoData& video);

/// Per-frame probability: mean over every segment that contains the frame.
FrameProbabilities frame_probabilities(const std::vector<SegmentProbabilities>& segments,
                                       std::int64_t num_frames, std::int64_t segment_len);

FrameProbabilities infer(const FusionModel& model, const VideoData& video);

Checkpoint to_checkpoint(const FusionModel& model);
FusionModel from_checkpoint(const Checkpoint& ckpt);
/// Reads a checkpoint and validates it against the shapes its config implies.
FusionModel load_model(const std::filesystem::path& path);

}  // namespace dact
