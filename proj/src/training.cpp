// SPDX-License-Identifier: Apache-2.0
#include "dact/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dact/errors.hpp"
#include "dact/parallel.hpp"
#include "dact/random.hpp"

namespace dact {

void adam_step(ModelParams& params, ModelParams& grads, AdamState& state, const LossConfig& cfg) {
  auto p_refs = tensor_refs(params);
  auto g_refs = tensor_refs(grads);
  if (p_refs.size() != g_refs.size()) throw ShapeError("adam_step: parameter/gradient mismatch");
  if (state.m.empty()) {
    for (const auto& t : p_refs) {
      state.m.push_back(Vec::Zero(t.size()));
      state.v.push_back(Vec::Zero(t.size()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(AdamState::kBeta1, t);
  const double bc2 = 1.0 - std::pow(AdamState::kBeta2, t);
  for (std::size_t i = 0; i < p_refs.size(); ++i) {
    if (!p_refs[i].trainable) continue;
    if (p_refs[i].size() != g_refs[i].size()) throw ShapeError("adam_step: shape mismatch");
    auto p = p_refs[i].span();
    auto g = g_refs[i].span();
    Vec& m = state.m[i];
    Vec& v = state.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      m(kk) = AdamState::kBeta1 * m(kk) + (1.0 - AdamState::kBeta1) * g[k];
      v(kk) = AdamState::kBeta2 * v(kk) + (1.0 - AdamState::kBeta2) * g[k] * g[k];
      const double m_hat = m(kk) / bc1;
      const double v_hat = v(kk) / bc2;
      p[k] -= cfg.lr * (m_hat / (std::sqrt(v_hat) + AdamState::kEps) + cfg.weight_decay * p[k]);
    }
  }
}

std::int64_t VideoData::num_frames() const { return pose_frames.rows(); }

namespace {

void check_video(const VideoData& v, const ModelConfig& cfg, std::size_t index, bool need_labels) {
  const std::string tag = "video " + std::to_string(index) + ": ";
  const auto T = static_cast<std::int64_t>(cfg.segment_len);
  if (static_cast<std::size_t>(v.pose_frames.cols()) != cfg.pose_dim) {
    throw ShapeError(tag + "pose features have dim " + std::to_string(v.pose_frames.cols()) +
                     ", model expects " + std::to_string(cfg.pose_dim));
  }
  if (static_cast<std::size_t>(v.embeddings.cols()) != cfg.n_f) {
    throw ShapeError(tag + "embeddings have dim " + std::to_string(v.embeddings.cols()) +
                     ", model expects n_f = " + std::to_string(cfg.n_f));
  }
  if (v.num_frames() < T) {
    throw InsufficientDataError(tag + std::to_string(v.num_frames()) +
                                " frames is shorter than one segment (" + std::to_string(T) + ")");
  }
  if (v.num_segments() != v.num_frames() - T + 1) {
    throw ShapeError(tag + std::to_string(v.num_segments()) + " segments for " +
                     std::to_string(v.num_frames()) + " frames; expected " +
                     std::to_string(v.num_frames() - T + 1) + " at stride 1");
  }
  if (need_labels && static_cast<std::int64_t>(v.labels.size()) != v.num_frames()) {
    throw ShapeError(tag + std::to_string(v.labels.size()) + " labels for " +
                     std::to_string(v.num_frames()) + " frames");
  }
}

struct WindowRef {
  std::size_t video;
  Eigen::Index start;   // first segment
  Eigen::Index tokens;  // number of segments in the window
};

WindowView make_view(const VideoData& v, const WindowRef& w, const ModelConfig& cfg,
                     bool with_labels) {
  const auto frames = w.tokens + static_cast<Eigen::Index>(cfg.segment_len) - 1;
  std::span<const int> labels;
  if (with_labels) {
    labels = std::span<const int>(v.labels).subspan(static_cast<std::size_t>(w.start),
                                                    static_cast<std::size_t>(frames));
  }
  return WindowView{v.pose_frames.middleRows(w.start, frames),
                    v.embeddings.middleRows(w.start, w.tokens), labels};
}

void fit_standardisation(const std::vector<VideoData>& videos, ModelParams& params) {
  const auto P = params.pose_mean.size();
  if (P == 0) return;
  Vec sum = Vec::Zero(P);
  double n = 0.0;
  for (const auto& v : videos) {
    sum += v.pose_frames.colwise().sum().transpose();
    n += static_cast<double>(v.pose_frames.rows());
  }
  const Vec mean = sum / n;
  Vec sq = Vec::Zero(P);
  for (const auto& v : videos) {
    sq += (v.pose_frames.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
  }
  Vec stddev = (sq / n).array().sqrt().matrix();
  for (Eigen::Index k = 0; k < P; ++k) {
    if (!(stddev(k) > 1e-8)) stddev(k) = 1.0;
  }
  params.pose_mean = mean;
  params.pose_std = stddev;
}

}  // namespace

TrainResult train(const std::vector<VideoData>& videos, const ModelConfig& model_cfg,
                  const LossConfig& loss_cfg, const TrainOptions& opts) {
  model_cfg.validate();
  loss_cfg.validate();
  if (videos.empty()) throw InputError("training set is empty");
  if (opts.batch_size == 0 || opts.sample_stride == 0) {
    throw ConfigError("batch_size and sample_stride must be >= 1");
  }

  std::vector<WindowRef> windows;
  for (std::size_t vi = 0; vi < videos.size(); ++vi) {
    check_video(videos[vi], model_cfg, vi, true);
    const auto S = videos[vi].num_segments();
    const auto W = std::min<Eigen::Index>(static_cast<Eigen::Index>(model_cfg.window_tokens), S);
    for (Eigen::Index s = 0; s + W <= S; s += static_cast<Eigen::Index>(opts.sample_stride)) {
      windows.push_back({vi, s, W});
    }
  }
  if (windows.empty()) throw InputError("training set yields no windows");

  TrainResult result;
  FusionModel& model = result.model;
  model.config = model_cfg;
  model.loss = loss_cfg;
  model.params = ModelParams::init(model_cfg);
  fit_standardisation(videos, model.params);

  AdamState adam;
  ModelParams grads = ModelParams::zeros(model_cfg);
  std::vector<std::size_t> order(windows.size());
  std::vector<double> window_losses(windows.size());

  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(opts.seed, epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.index(i)]);
    }
    for (std::size_t b = 0; b < order.size(); b += opts.batch_size) {
      const std::size_t end = std::min(order.size(), b + opts.batch_size);
      std::vector<WindowView> batch;
      batch.reserve(end - b);
      for (std::size_t i = b; i < end; ++i) {
        batch.push_back(make_view(videos[windows[order[i]].video], windows[order[i]], model_cfg, true));
      }
      std::vector<double> losses(end - b);
      const double loss =
          batch_loss_and_grad(model.params, model_cfg, batch, loss_cfg.beta, grads, losses);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch " << b / opts.batch_size;
        for (std::size_t i = b; i < end; ++i) {
          if (!std::isfinite(losses[i - b])) {
            msg << "; window video=" << windows[order[i]].video
                << " start=" << windows[order[i]].start;
            break;
          }
        }
        throw TrainingError(msg.str());
      }
      for (std::size_t i = b; i < end; ++i) window_losses[order[i]] = losses[i - b];
      adam_step(model.params, grads, adam, loss_cfg);
    }
    // Summed in window order so the value does not depend on the shuffle.
    double total = 0.0;
    for (double l : window_losses) total += l;
    const double mean = total / static_cast<double>(window_losses.size());
    result.loss_history.push_back(mean);
    if (opts.on_epoch) opts.on_epoch(epoch, mean);
    if (opts.target_loss && mean < *opts.target_loss) break;
  }
  model.step = adam.step;
  return result;
}

std::vector<SegmentProbabilities> infer_segments(const FusionModel& model, const VideoData& video) {
  const ModelConfig& cfg = model.config;
  check_video(video, cfg, 0, false);
  const auto S = video.num_segments();
  const auto W = std::min<Eigen::Index>(static_cast<Eigen::Index>(cfg.window_tokens), S);
  const auto num_windows = (S + W - 1) / W;

  // Tokens of the whole stream first; windows then only run the encoder.
  Mat tokens = video.embeddings;
  if (cfg.pose_dim > 0) tokens = fuse_tokens(tokens, poseition_embeddings(model.params, cfg, video.pose_frames));

  std::vector<SegmentProbabilities> out(static_cast<std::size_t>(S));
  parallel_for(static_cast<std::size_t>(num_windows), [&](std::size_t wi) {
    const auto first = static_cast<Eigen::Index>(wi) * W;  // first segment owned by this window
    const auto start = std::min(first, S - W);
    const Mat logits = token_logits(model.params, cfg, tokens.middleRows(start, W));
    for (Eigen::Index s = first; s < std::min(first + W, S); ++s) {
      auto& sp = out[static_cast<std::size_t>(s)];
      sp.start_frame = s;
      sp.probs = softmax_beta(logits.row(s - start).transpose(), 1.0);
    }
  });
  return out;
}

FrameProbabilities frame_probabilities(const std::vector<SegmentProbabilities>& segments,
                                       std::int64_t num_frames, std::int64_t segment_len) {
  const auto S = static_cast<std::int64_t>(segments.size());
  if (num_frames < segment_len || S != num_frames - segment_len + 1) {
    throw InsufficientDataError("cannot spread " + std::to_string(S) + " segments of length " +
                                std::to_string(segment_len) + " over " +
                                std::to_string(num_frames) + " frames");
  }
  const auto C = segments.front().probs.size();
  FrameProbabilities fp;
  fp.values = Mat::Zero(num_frames, C);
  for (std::int64_t n = 0; n < num_frames; ++n) {
    const auto lo = std::max<std::int64_t>(0, n - segment_len + 1);
    const auto hi = std::min<std::int64_t>(n, S - 1);
    Vec sum = Vec::Zero(C);
    for (auto s = lo; s <= hi; ++s) sum += segments[static_cast<std::size_t>(s)].probs;
    fp.values.row(n) = (sum / static_cast<double>(hi - lo + 1)).transpose();
  }
  return fp;
}

FrameProbabilities infer(const FusionModel& model, const VideoData& video) {
  return frame_probabilities(infer_segments(model, video), video.num_frames(),
                             static_cast<std::int64_t>(model.config.segment_len));
}

// ---------------------------------------------------------------------------
// Checkpoints

Checkpoint to_checkpoint(const FusionModel& model) {
  Checkpoint ckpt;
  ckpt.config = {{"model", model.config.to_json()}, {"loss", model.loss.to_json()}};
  ckpt.step = model.step;
  ModelParams copy = model.params;
  for (const auto& t : tensor_refs(copy)) {
    NamedTensor nt;
    nt.name = t.name;
    if (t.is_vector) {
      nt.shape = {static_cast<std::uint32_t>(t.rows)};
    } else {
      nt.shape = {static_cast<std::uint32_t>(t.rows), static_cast<std::uint32_t>(t.cols)};
    }
    nt.values.assign(t.span().begin(), t.span().end());
    ckpt.tensors.push_back(std::move(nt));
  }
  return ckpt;
}

FusionModel from_checkpoint(const Checkpoint& ckpt) {
  FusionModel model;
  try {
    model.config = ModelConfig::from_json(ckpt.config.at("model"));
    model.loss = LossConfig::from_json(ckpt.config.value("loss", nlohmann::json::object()));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("checkpoint config: ") + e.what());
  }
  model.step = ckpt.step;
  model.params = ModelParams::zeros(model.config);
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : ckpt.tensors) {
    if (!by_name.emplace(t.name, &t).second) throw SchemaError("tensor " + t.name + " repeated");
  }
  auto refs = tensor_refs(model.params);
  if (refs.size() != by_name.size()) {
    throw SchemaError("checkpoint has " + std::to_string(by_name.size()) +
                      " tensors, model expects " + std::to_string(refs.size()));
  }
  for (auto& r : refs) {
    auto it = by_name.find(r.name);
    if (it == by_name.end()) throw SchemaError("checkpoint is missing tensor " + r.name);
    if (it->second->values.size() != static_cast<std::size_t>(r.size())) {
      throw ShapeError("tensor " + r.name + " has " + std::to_string(it->second->values.size()) +
                       " values, model expects " + std::to_string(r.size()));
    }
    std::copy(it->second->values.begin(), it->second->values.end(), r.data);
  }
  return model;
}

FusionModel load_model(const std::filesystem::path& path) {
  auto schema = [](const nlohmann::json& config) {
    try {
      return tensor_shapes(ModelConfig::from_json(config.at("model")));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("checkpoint config: ") + e.what());
    }
  };
  return from_checkpoint(read_checkpoint(path, schema));
}

}  // namespace dact
