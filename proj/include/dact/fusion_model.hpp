// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dact/data_io.hpp"
#include "json.hpp"

namespace dact {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Shape of the fusion network. pose_dim = 0 drops the pose branch entirely
/// (spatio-temporal tokens only).
struct ModelConfig {
  std::size_t pose_dim = 0;
  std::size_t n_f = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t mlp_hidden = 256;
  std::size_t head_hidden = 128;
  std::size_t n_classes = kNumClasses;
  std::size_t window_tokens = 8;
  std::size_t segment_len = 64;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t head_dim() const { return n_f / n_heads; }

  /// Missing keys take the defaults above; mlp_hidden / head_hidden default to 4 n_f / 2 n_f.
  static ModelConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct LossConfig {
  double beta = 5.0;
  double weight_decay = 5e-4;
  double lr = 1e-3;

  void validate() const;
  static LossConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// ---------------------------------------------------------------------------
// Elementwise and vector primitives

/// x * Phi(x), with Phi evaluated through erf.
double gelu(double x);
/// d/dx gelu(x) = Phi(x) + x phi(x).
double gelu_grad(double x);

inline constexpr double kLayerNormEps = 1e-5;
Vec layer_norm(const Vec& x, const Vec& gain, const Vec& bias);

/// softmax(beta * logits) with max subtraction.
Vec softmax_beta(const Vec& logits, double beta);

/// softmax(beta * d) where d_k is the fraction of frames labelled k.
Vec density_target(std::span<const int> frame_labels, double beta,
                   std::size_t n_classes = kNumClasses);

inline constexpr double kProbFloor = 1e-12;
/// Cross-entropy -sum_k q_k log max(p_k, 1e-12).
double cross_entropy(const Vec& probs, const Vec& target);

// ---------------------------------------------------------------------------
// Parameters

struct EncoderLayerParams {
  Vec ln1_gain, ln1_bias;
  Mat wq, wk, wv, wo;
  Vec bq, bk, bv, bo;
  Vec ln2_gain, ln2_bias;
  Mat w1, w2;
  Vec b1, b2;
};

/// Every tensor of the network. Gradients use the same structure.
struct ModelParams {
  Vec pose_mean, pose_std;  ///< input standardisation, fitted on training data
  Mat lstm_w_ih, lstm_w_hh;
  Vec lstm_bias;  ///< gate order: input, forget, cell, output
  std::vector<EncoderLayerParams> layers;
  Mat head_w1, head_w2;
  Vec head_b1, head_b2;

  /// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases,
  /// forget-gate bias +1, unit layer-norm gains.
  static ModelParams init(const ModelConfig& cfg);
  static ModelParams zeros(const ModelConfig& cfg);
};

struct TensorRef {
  std::string name;
  double* data;
  Eigen::Index rows;
  Eigen::Index cols;
  bool is_vector;
  bool trainable;

  Eigen::Index size() const { return rows * cols; }
  std::span<double> span() const { return {data, static_cast<std::size_t>(size())}; }
};

/// Tensors in a fixed order (names as stored in checkpoints).
std::vector<TensorRef> tensor_refs(ModelParams& params);

/// Expected checkpoint tensor shapes for a model config.
std::map<std::string, std::vector<std::uint32_t>> tensor_shapes(const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Network pieces

/// Final hidden state of the single-layer LSTM over a (T x pose_dim) sequence
/// that has already been standardised.
Vec lstm_forward(const ModelParams& p, const Mat& pose_seq);

/// POSEition embedding of every stride-1 segment of a raw pose stream
/// (num_frames x pose_dim), one row per segment.
Mat poseition_embeddings(const ModelParams& p, const ModelConfig& cfg,
                         const Eigen::Ref<const Mat>& pose_frames);

/// Token-wise sum of spatio-temporal tokens and POSEition embeddings.
Mat fuse_tokens(const Mat& embed_window, const Mat& poseition);

/// Pre-LN transformer encoder over W tokens (rows). If attention is non-null
/// it receives the attention matrices, one per layer and head.
Mat encoder_forward(const ModelParams& p, const ModelConfig& cfg, const Mat& tokens,
                    std::vector<Mat>* attention = nullptr);

/// Two affine layers with GELU in between.
Vec head_forward(const ModelParams& p, const Vec& token);

/// Encoder and head on already fused tokens (W x n_f), giving W x n_classes logits.
Mat token_logits(const ModelParams& p, const ModelConfig& cfg, const Mat& tokens);

// ---------------------------------------------------------------------------
// Windows

/// W consecutive stride-1 segments: token w covers frames [w, w + T) of
/// pose_frames, so pose_frames has W + T - 1 rows (raw, unstandardised).
struct WindowView {
  Eigen::Ref<const Mat> pose_frames;
  Eigen::Ref<const Mat> embeddings;  ///< W x n_f
  std::span<const int> frame_labels; ///< W + T - 1 labels; may be empty at inference
};

/// Per-token logits (W x n_classes).
Mat forward_window(const ModelParams& p, const ModelConfig& cfg, const WindowView& window);

/// Mean token cross-entropy of one window against density targets. When
/// grads is non-null, adds scale * dLoss/dParam into it.
double window_loss(const ModelParams& p, const ModelConfig& cfg, const WindowView& window,
                   double beta, ModelParams* grads = nullptr, double scale = 1.0);

/// Mean loss over a batch and its exact gradient (grads is overwritten).
/// Per-window gradients are reduced in batch order. window_losses, if
/// non-empty, receives each window's loss.
double batch_loss_and_grad(const ModelParams& p, const ModelConfig& cfg,
                           std::span<const WindowView> batch, double beta, ModelParams& grads,
                           std::span<double> window_losses = {});

}  // namespace dact
