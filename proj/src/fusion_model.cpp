// SPDX-License-Identifier: Apache-2.0
#include "dact/fusion_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dact/errors.hpp"
#include "dact/parallel.hpp"
#include "dact/random.hpp"

namespace dact {

// ---------------------------------------------------------------------------
// Configs

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("model config: " + msg);
  };
  require(n_f >= 1 && n_heads >= 1 && n_layers >= 1, "n_f, n_heads, n_layers must be >= 1");
  require(n_f % n_heads == 0, "n_f (" + std::to_string(n_f) + ") not divisible by n_heads (" +
                                  std::to_string(n_heads) + ")");
  require(mlp_hidden >= 1 && head_hidden >= 1, "hidden sizes must be >= 1");
  require(n_classes >= 2, "n_classes must be >= 2");
  require(window_tokens >= 1 && segment_len >= 1, "window_tokens and segment_len must be >= 1");
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.pose_dim = j.value("pose_dim", c.pose_dim);
    c.n_f = j.value("n_f", c.n_f);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.mlp_hidden = j.value("mlp_hidden", 4 * c.n_f);
    c.head_hidden = j.value("head_hidden", 2 * c.n_f);
    c.n_classes = j.value("n_classes", c.n_classes);
    c.window_tokens = j.value("window_tokens", c.window_tokens);
    c.segment_len = j.value("segment_len", c.segment_len);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json ModelConfig::to_json() const {
  return nlohmann::json{{"pose_dim", pose_dim},       {"n_f", n_f},
                        {"n_heads", n_heads},         {"n_layers", n_layers},
                        {"mlp_hidden", mlp_hidden},   {"head_hidden", head_hidden},
                        {"n_classes", n_classes},     {"window_tokens", window_tokens},
                        {"segment_len", segment_len}, {"seed", seed}};
}

void LossConfig::validate() const {
  if (!(beta >= 0.0)) throw ConfigError("loss config: beta must be >= 0");
  if (!(lr >= 0.0)) throw ConfigError("loss config: lr must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("loss config: weight_decay must be >= 0");
}

LossConfig LossConfig::from_json(const nlohmann::json& j) {
  LossConfig c;
  try {
    c.beta = j.value("beta", c.beta);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.lr = j.value("lr", c.lr);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("loss config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json LossConfig::to_json() const {
  return nlohmann::json{{"beta", beta}, {"weight_decay", weight_decay}, {"lr", lr}};
}

// ---------------------------------------------------------------------------
// Primitives

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Vec layer_norm(const Vec& x, const Vec& gain, const Vec& bias) {
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
  return ((x.array() - mean) * inv * gain.array() + bias.array()).matrix();
}

Vec softmax_beta(const Vec& logits, double beta) {
  const Vec scaled = beta * logits;
  const double m = scaled.maxCoeff();
  Vec e = (scaled.array() - m).exp().matrix();
  return e / e.sum();
}

Vec density_target(std::span<const int> frame_labels, double beta, std::size_t n_classes) {
  Vec density = Vec::Zero(static_cast<Eigen::Index>(n_classes));
  if (frame_labels.empty()) return Vec::Constant(density.size(), 1.0 / density.size());
  for (int l : frame_labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= n_classes) {
      throw InputError("frame label " + std::to_string(l) + " out of range");
    }
    density(l) += 1.0;
  }
  density /= static_cast<double>(frame_labels.size());
  return softmax_beta(density, beta);
}

double cross_entropy(const Vec& probs, const Vec& target) {
  double loss = 0.0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    if (target(k) != 0.0) loss -= target(k) * std::log(std::max(probs(k), kProbFloor));
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

template <typename F>
void visit_tensors(ModelParams& p, F&& f) {
  if (p.lstm_w_ih.size() > 0 || p.pose_mean.size() > 0) {
    f("input.pose_mean", p.pose_mean, false);
    f("input.pose_std", p.pose_std, false);
    f("lstm.w_ih", p.lstm_w_ih, true);
    f("lstm.w_hh", p.lstm_w_hh, true);
    f("lstm.bias", p.lstm_bias, true);
  }
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "encoder." + std::to_string(l) + ".";
    f(pre + "ln1.gain", L.ln1_gain, true);
    f(pre + "ln1.bias", L.ln1_bias, true);
    f(pre + "attn.wq", L.wq, true);
    f(pre + "attn.bq", L.bq, true);
    f(pre + "attn.wk", L.wk, true);
    f(pre + "attn.bk", L.bk, true);
    f(pre + "attn.wv", L.wv, true);
    f(pre + "attn.bv", L.bv, true);
    f(pre + "attn.wo", L.wo, true);
    f(pre + "attn.bo", L.bo, true);
    f(pre + "ln2.gain", L.ln2_gain, true);
    f(pre + "ln2.bias", L.ln2_bias, true);
    f(pre + "mlp.w1", L.w1, true);
    f(pre + "mlp.b1", L.b1, true);
    f(pre + "mlp.w2", L.w2, true);
    f(pre + "mlp.b2", L.b2, true);
  }
  f("head.w1", p.head_w1, true);
  f("head.b1", p.head_b1, true);
  f("head.w2", p.head_w2, true);
  f("head.b2", p.head_b2, true);
}

ModelParams allocate(const ModelConfig& cfg) {
  cfg.validate();
  const auto P = static_cast<Eigen::Index>(cfg.pose_dim);
  const auto H = static_cast<Eigen::Index>(cfg.n_f);
  const auto M = static_cast<Eigen::Index>(cfg.mlp_hidden);
  const auto Hh = static_cast<Eigen::Index>(cfg.head_hidden);
  const auto C = static_cast<Eigen::Index>(cfg.n_classes);
  ModelParams p;
  if (P > 0) {
    p.pose_mean = Vec::Zero(P);
    p.pose_std = Vec::Ones(P);
    p.lstm_w_ih = Mat::Zero(4 * H, P);
    p.lstm_w_hh = Mat::Zero(4 * H, H);
    p.lstm_bias = Vec::Zero(4 * H);
  }
  p.layers.resize(cfg.n_layers);
  for (auto& L : p.layers) {
    L.ln1_gain = Vec::Ones(H);
    L.ln1_bias = Vec::Zero(H);
    L.wq = L.wk = L.wv = L.wo = Mat::Zero(H, H);
    L.bq = L.bk = L.bv = L.bo = Vec::Zero(H);
    L.ln2_gain = Vec::Ones(H);
    L.ln2_bias = Vec::Zero(H);
    L.w1 = Mat::Zero(M, H);
    L.b1 = Vec::Zero(M);
    L.w2 = Mat::Zero(H, M);
    L.b2 = Vec::Zero(H);
  }
  p.head_w1 = Mat::Zero(Hh, H);
  p.head_b1 = Vec::Zero(Hh);
  p.head_w2 = Mat::Zero(C, Hh);
  p.head_b2 = Vec::Zero(C);
  return p;
}

}  // namespace

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
  ModelParams p = allocate(cfg);
  for (auto& t : tensor_refs(p)) std::fill(t.span().begin(), t.span().end(), 0.0);
  return p;
}

ModelParams ModelParams::init(const ModelConfig& cfg) {
  ModelParams p = allocate(cfg);
  Rng rng(cfg.seed);
  for (auto& t : tensor_refs(p)) {
    if (t.is_vector || !t.trainable) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(t.cols));
    for (double& v : t.span()) v = rng.uniform(-bound, bound);
  }
  if (cfg.pose_dim > 0) {
    const auto H = static_cast<Eigen::Index>(cfg.n_f);
    p.lstm_bias.segment(H, H).setOnes();
  }
  return p;
}

std::vector<TensorRef> tensor_refs(ModelParams& params) {
  std::vector<TensorRef> refs;
  visit_tensors(params, [&](const std::string& name, auto& t, bool trainable) {
    using T = std::decay_t<decltype(t)>;
    refs.push_back(TensorRef{name, t.data(), t.rows(), t.cols(),
                             std::is_same_v<T, Vec>, trainable});
  });
  return refs;
}

std::map<std::string, std::vector<std::uint32_t>> tensor_shapes(const ModelConfig& cfg) {
  ModelParams p = allocate(cfg);
  std::map<std::string, std::vector<std::uint32_t>> shapes;
  for (const auto& t : tensor_refs(p)) {
    if (t.is_vector) {
      shapes[t.name] = {static_cast<std::uint32_t>(t.rows)};
    } else {
      shapes[t.name] = {static_cast<std::uint32_t>(t.rows), static_cast<std::uint32_t>(t.cols)};
    }
  }
  return shapes;
}

// ---------------------------------------------------------------------------
// Forward / backward machinery

namespace {

struct LnCache {
  Mat xhat;
  Vec inv_std;
};

// Row-wise layer norm.
Mat ln_rows(const Mat& x, const Vec& gain, const Vec& bias, LnCache* cache) {
  const Eigen::Index rows = x.rows();
  Mat xhat(rows, x.cols());
  Vec inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (x.row(r).array() - mean) * inv_std(r);
  }
  Mat y = (xhat.array().rowwise() * gain.transpose().array()).matrix();
  y.rowwise() += bias.transpose();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Mat ln_rows_backward(const Mat& dy, const Vec& gain, const LnCache& c, Vec& dgain, Vec& dbias) {
  dgain += (dy.array() * c.xhat.array()).colwise().sum().transpose().matrix();
  dbias += dy.colwise().sum().transpose();
  const Mat dxhat = (dy.array().rowwise() * gain.transpose().array()).matrix();
  Mat dx(dy.rows(), dy.cols());
  const double n = static_cast<double>(dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).sum() / n;
    const double mean_dx = dxhat.row(r).dot(c.xhat.row(r)) / n;
    dx.row(r) = c.inv_std(r) * (dxhat.row(r).array() - mean_d - c.xhat.row(r).array() * mean_dx);
  }
  return dx;
}

Mat affine_rows(const Mat& x, const Mat& w, const Vec& b) {
  Mat y = x * w.transpose();
  y.rowwise() += b.transpose();
  return y;
}

void softmax_rows_inplace(Mat& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - m).exp();
    s.row(r) /= s.row(r).sum();
  }
}

// Per step t: activated gates (B x 4H, order i, f, g, o), tanh of the new
// cell state, and the cell / hidden states entering the step.
struct LstmTrace {
  std::vector<Mat> gates, tanh_c, cells, hidden;
};

Mat sigmoid(const Mat& z) { return (1.0 + (-z.array()).exp()).inverse().matrix(); }

// B overlapping sequences of length T over precomputed input projections:
// sequence b reads rows b .. b + T - 1 of proj, so step t of every sequence
// is the contiguous block proj.middleRows(t, B). Returns final hidden states (B x H).
Mat run_lstm(const ModelParams& p, const Eigen::Ref<const Mat>& proj, Eigen::Index B,
             Eigen::Index T, LstmTrace* trace) {
  const Eigen::Index H = p.lstm_w_hh.cols();
  Mat h = Mat::Zero(B, H), c = Mat::Zero(B, H);
  Mat z(B, 4 * H);
  if (trace) {
    for (auto* v : {&trace->gates, &trace->tanh_c, &trace->cells, &trace->hidden}) {
      v->clear();
      v->reserve(static_cast<std::size_t>(T));
    }
  }
  for (Eigen::Index t = 0; t < T; ++t) {
    z.noalias() = h * p.lstm_w_hh.transpose();
    z += proj.middleRows(t, B);
    z.rowwise() += p.lstm_bias.transpose();
    // tanh(x) = 2 sigmoid(2x) - 1, so one vectorised exp serves all four gates.
    z.middleCols(2 * H, H) *= 2.0;
    Mat gates = sigmoid(z);
    gates.middleCols(2 * H, H) = (2.0 * gates.middleCols(2 * H, H).array() - 1.0).matrix();
    if (trace) {
      trace->cells.push_back(c);
      trace->hidden.push_back(h);
    }
    c = gates.middleCols(H, H).cwiseProduct(c) +
        gates.leftCols(H).cwiseProduct(gates.middleCols(2 * H, H));
    Mat tc = (2.0 * sigmoid(2.0 * c).array() - 1.0).matrix();
    h = gates.rightCols(H).cwiseProduct(tc);
    if (trace) {
      trace->gates.push_back(std::move(gates));
      trace->tanh_c.push_back(std::move(tc));
    }
  }
  return h;
}

// Backpropagation through time for run_lstm. Accumulates dW_hh and dbias
// into g and the input-projection gradient into dproj (same row layout as proj).
void run_lstm_backward(const ModelParams& p, const LstmTrace& tr, Mat dh, Eigen::Ref<Mat> dproj,
                       ModelParams& g) {
  const auto T = static_cast<Eigen::Index>(tr.gates.size());
  const Eigen::Index B = dh.rows();
  const Eigen::Index H = p.lstm_w_hh.cols();
  Mat dc = Mat::Zero(B, H);
  Mat dz(B, 4 * H);
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const auto ts = static_cast<std::size_t>(t);
    const auto G = tr.gates[ts].array();
    const auto ig = G.leftCols(H), fg = G.middleCols(H, H);
    const auto gg = G.middleCols(2 * H, H), og = G.rightCols(H);
    const auto tc = tr.tanh_c[ts].array();
    const Mat dck = (dc.array() + dh.array() * og * (1.0 - tc.square())).matrix();
    const auto d = dck.array();
    dz.leftCols(H) = (d * gg * ig * (1.0 - ig)).matrix();
    dz.middleCols(H, H) = (d * tr.cells[ts].array() * fg * (1.0 - fg)).matrix();
    dz.middleCols(2 * H, H) = (d * ig * (1.0 - gg.square())).matrix();
    dz.rightCols(H) = (dh.array() * tc * og * (1.0 - og)).matrix();
    dc = (d * fg).matrix();
    g.lstm_w_hh.noalias() += dz.transpose() * tr.hidden[ts];
    g.lstm_bias += dz.colwise().sum().transpose();
    dproj.middleRows(t, B) += dz;
    dh.noalias() = dz * p.lstm_w_hh;
  }
}

struct LayerCache {
  LnCache ln1, ln2;
  Mat u, q, k, v, o, vln, m, a;
  std::vector<Mat> attn;
};

Mat encoder_layer_forward(const EncoderLayerParams& L, const ModelConfig& cfg, const Mat& x,
                          LayerCache* cache, std::vector<Mat>* attention) {
  const auto dk = static_cast<Eigen::Index>(cfg.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  LnCache ln1;
  Mat u = ln_rows(x, L.ln1_gain, L.ln1_bias, &ln1);
  Mat q = affine_rows(u, L.wq, L.bq);
  Mat k = affine_rows(u, L.wk, L.bk);
  Mat v = affine_rows(u, L.wv, L.bv);
  Mat o(x.rows(), x.cols());
  std::vector<Mat> attn(cfg.n_heads);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const Eigen::Index off = static_cast<Eigen::Index>(h) * dk;
    Mat s = q.middleCols(off, dk) * k.middleCols(off, dk).transpose() * scale;
    softmax_rows_inplace(s);
    o.middleCols(off, dk).noalias() = s * v.middleCols(off, dk);
    attn[h] = std::move(s);
  }
  Mat x1 = x + affine_rows(o, L.wo, L.bo);
  LnCache ln2;
  Mat vln = ln_rows(x1, L.ln2_gain, L.ln2_bias, &ln2);
  Mat m = affine_rows(vln, L.w1, L.b1);
  Mat a = m.unaryExpr([](double t) { return gelu(t); });
  Mat x2 = x1 + affine_rows(a, L.w2, L.b2);
  if (attention) attention->insert(attention->end(), attn.begin(), attn.end());
  if (cache) {
    cache->ln1 = std::move(ln1);
    cache->ln2 = std::move(ln2);
    cache->u = std::move(u);
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->o = std::move(o);
    cache->vln = std::move(vln);
    cache->m = std::move(m);
    cache->a = std::move(a);
    cache->attn = std::move(attn);
  }
  return x2;
}

Mat encoder_layer_backward(const EncoderLayerParams& L, const ModelConfig& cfg,
                           const LayerCache& c, const Mat& dx2, EncoderLayerParams& g) {
  const auto dk = static_cast<Eigen::Index>(cfg.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  // MLP block
  g.w2.noalias() += dx2.transpose() * c.a;
  g.b2 += dx2.colwise().sum().transpose();
  Mat dm = dx2 * L.w2;
  dm.array() *= c.m.unaryExpr([](double t) { return gelu_grad(t); }).array();
  g.w1.noalias() += dm.transpose() * c.vln;
  g.b1 += dm.colwise().sum().transpose();
  const Mat dvln = dm * L.w1;
  Mat dx1 = dx2 + ln_rows_backward(dvln, L.ln2_gain, c.ln2, g.ln2_gain, g.ln2_bias);

  // Attention block
  g.wo.noalias() += dx1.transpose() * c.o;
  g.bo += dx1.colwise().sum().transpose();
  const Mat d_o = dx1 * L.wo;
  Mat dq(dx1.rows(), dx1.cols()), dkm(dx1.rows(), dx1.cols()), dv(dx1.rows(), dx1.cols());
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const Eigen::Index off = static_cast<Eigen::Index>(h) * dk;
    const Mat& A = c.attn[h];
    const Mat dA = d_o.middleCols(off, dk) * c.v.middleCols(off, dk).transpose();
    dv.middleCols(off, dk).noalias() = A.transpose() * d_o.middleCols(off, dk);
    Mat dS = A.array() * (dA.array().colwise() - (dA.array() * A.array()).rowwise().sum());
    dS *= scale;
    dq.middleCols(off, dk).noalias() = dS * c.k.middleCols(off, dk);
    dkm.middleCols(off, dk).noalias() = dS.transpose() * c.q.middleCols(off, dk);
  }
  g.wq.noalias() += dq.transpose() * c.u;
  g.bq += dq.colwise().sum().transpose();
  g.wk.noalias() += dkm.transpose() * c.u;
  g.bk += dkm.colwise().sum().transpose();
  g.wv.noalias() += dv.transpose() * c.u;
  g.bv += dv.colwise().sum().transpose();
  const Mat du = dq * L.wq + dkm * L.wk + dv * L.wv;
  return dx1 + ln_rows_backward(du, L.ln1_gain, c.ln1, g.ln1_gain, g.ln1_bias);
}

struct WindowCache {
  Mat xn;    // F x P standardised pose frames
  Mat proj;  // F x 4H
  LstmTrace lstm;
  std::vector<LayerCache> layers;
  Mat x_out, z1, g1;
};

void check_window(const ModelConfig& cfg, const WindowView& w) {
  const auto W = w.embeddings.rows();
  if (W < 1) throw ShapeError("window has no tokens");
  if (static_cast<std::size_t>(w.embeddings.cols()) != cfg.n_f) {
    throw ShapeError("embedding dim " + std::to_string(w.embeddings.cols()) +
                     " does not match model n_f " + std::to_string(cfg.n_f));
  }
  const auto F = W + static_cast<Eigen::Index>(cfg.segment_len) - 1;
  if (cfg.pose_dim > 0) {
    if (w.pose_frames.rows() != F || static_cast<std::size_t>(w.pose_frames.cols()) != cfg.pose_dim) {
      throw ShapeError("pose window is " + std::to_string(w.pose_frames.rows()) + "x" +
                       std::to_string(w.pose_frames.cols()) + ", expected " + std::to_string(F) +
                       "x" + std::to_string(cfg.pose_dim));
    }
  }
  if (!w.frame_labels.empty() && static_cast<Eigen::Index>(w.frame_labels.size()) != F) {
    throw ShapeError("window has " + std::to_string(w.frame_labels.size()) +
                     " frame labels, expected " + std::to_string(F));
  }
}

Mat standardise(const ModelParams& p, const Eigen::Ref<const Mat>& pose_frames) {
  return ((pose_frames.rowwise() - p.pose_mean.transpose()).array().rowwise() /
          p.pose_std.transpose().array())
      .matrix();
}

// Encoder layers and head on fused tokens.
Mat encode_tokens(const ModelParams& p, const ModelConfig& cfg, Mat tokens, WindowCache* cache) {
  if (cache) cache->layers.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    tokens = encoder_layer_forward(p.layers[l], cfg, tokens, cache ? &cache->layers[l] : nullptr,
                                   nullptr);
  }
  Mat z1 = affine_rows(tokens, p.head_w1, p.head_b1);
  Mat g1 = z1.unaryExpr([](double t) { return gelu(t); });
  Mat logits = affine_rows(g1, p.head_w2, p.head_b2);
  if (cache) {
    cache->x_out = std::move(tokens);
    cache->z1 = std::move(z1);
    cache->g1 = std::move(g1);
  }
  return logits;
}

Mat window_logits(const ModelParams& p, const ModelConfig& cfg, const WindowView& w,
                  WindowCache* cache) {
  check_window(cfg, w);
  const auto W = w.embeddings.rows();
  const auto T = static_cast<Eigen::Index>(cfg.segment_len);
  if (cfg.pose_dim == 0) return encode_tokens(p, cfg, w.embeddings, cache);
  Mat xn = standardise(p, w.pose_frames);
  Mat proj = xn * p.lstm_w_ih.transpose();
  const Mat poseition = run_lstm(p, proj, W, T, cache ? &cache->lstm : nullptr);
  if (cache) {
    cache->xn = std::move(xn);
    cache->proj = std::move(proj);
  }
  return encode_tokens(p, cfg, fuse_tokens(w.embeddings, poseition), cache);
}

}  // namespace

// ---------------------------------------------------------------------------
// Public network pieces

Vec lstm_forward(const ModelParams& p, const Mat& pose_seq) {
  if (pose_seq.rows() < 1) throw InputError("lstm_forward needs at least one time step");
  const Mat proj = pose_seq * p.lstm_w_ih.transpose();
  return run_lstm(p, proj, 1, proj.rows(), nullptr).row(0).transpose();
}

Mat poseition_embeddings(const ModelParams& p, const ModelConfig& cfg,
                         const Eigen::Ref<const Mat>& pose_frames) {
  const auto T = static_cast<Eigen::Index>(cfg.segment_len);
  const auto F = pose_frames.rows();
  if (static_cast<std::size_t>(pose_frames.cols()) != cfg.pose_dim || cfg.pose_dim == 0) {
    throw ShapeError("pose stream has dim " + std::to_string(pose_frames.cols()) +
                     ", model expects " + std::to_string(cfg.pose_dim));
  }
  if (F < T) {
    throw InsufficientDataError(std::to_string(F) + " pose frames, fewer than one segment (" +
                                std::to_string(T) + ")");
  }
  const Eigen::Index S = F - T + 1;
  constexpr Eigen::Index kChunk = 64;  // segments per batched recurrence
  const Eigen::Index chunks = (S + kChunk - 1) / kChunk;
  Mat out(S, static_cast<Eigen::Index>(cfg.n_f));
  parallel_for(static_cast<std::size_t>(chunks), [&](std::size_t ci) {
    const Eigen::Index s0 = static_cast<Eigen::Index>(ci) * kChunk;
    const Eigen::Index B = std::min(kChunk, S - s0);
    const Mat proj = standardise(p, pose_frames.middleRows(s0, B + T - 1)) * p.lstm_w_ih.transpose();
    out.middleRows(s0, B) = run_lstm(p, proj, B, T, nullptr);
  });
  return out;
}

Mat token_logits(const ModelParams& p, const ModelConfig& cfg, const Mat& tokens) {
  if (static_cast<std::size_t>(tokens.cols()) != cfg.n_f) {
    throw ShapeError("tokens have dim " + std::to_string(tokens.cols()) + ", model expects " +
                     std::to_string(cfg.n_f));
  }
  return encode_tokens(p, cfg, tokens, nullptr);
}

Mat fuse_tokens(const Mat& embed_window, const Mat& poseition) {
  if (embed_window.rows() != poseition.rows() || embed_window.cols() != poseition.cols()) {
    throw ShapeError("fuse_tokens: " + std::to_string(embed_window.rows()) + "x" +
                     std::to_string(embed_window.cols()) + " vs " +
                     std::to_string(poseition.rows()) + "x" + std::to_string(poseition.cols()));
  }
  return embed_window + poseition;
}

Mat encoder_forward(const ModelParams& p, const ModelConfig& cfg, const Mat& tokens,
                    std::vector<Mat>* attention) {
  Mat x = tokens;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    x = encoder_layer_forward(p.layers[l], cfg, x, nullptr, attention);
  }
  return x;
}

Vec head_forward(const ModelParams& p, const Vec& token) {
  Vec z = p.head_w1 * token + p.head_b1;
  Vec g = z.unaryExpr([](double t) { return gelu(t); });
  return p.head_w2 * g + p.head_b2;
}

Mat forward_window(const ModelParams& p, const ModelConfig& cfg, const WindowView& window) {
  return window_logits(p, cfg, window, nullptr);
}

double window_loss(const ModelParams& p, const ModelConfig& cfg, const WindowView& window,
                   double beta, ModelParams* grads, double scale) {
  if (window.frame_labels.empty()) throw InputError("window_loss needs frame labels");
  WindowCache cache;
  const Mat logits = window_logits(p, cfg, window, grads ? &cache : nullptr);
  const auto W = logits.rows();
  const auto T = static_cast<std::size_t>(cfg.segment_len);

  double loss = 0.0;
  Mat dlogits(W, logits.cols());
  for (Eigen::Index t = 0; t < W; ++t) {
    const Vec probs = softmax_beta(logits.row(t).transpose(), 1.0);
    const Vec target =
        density_target(window.frame_labels.subspan(static_cast<std::size_t>(t), T), beta,
                       cfg.n_classes);
    loss += cross_entropy(probs, target);
    // d/dz of -sum q log max(p, floor): entries below the floor carry no gradient.
    double active_mass = 0.0;
    for (Eigen::Index k = 0; k < probs.size(); ++k) {
      if (probs(k) > kProbFloor) active_mass += target(k);
    }
    for (Eigen::Index k = 0; k < probs.size(); ++k) {
      const double own = probs(k) > kProbFloor ? target(k) : 0.0;
      dlogits(t, k) = probs(k) * active_mass - own;
    }
  }
  loss /= static_cast<double>(W);
  if (!grads) return loss;

  ModelParams& g = *grads;
  dlogits *= scale / static_cast<double>(W);

  // Head
  g.head_w2.noalias() += dlogits.transpose() * cache.g1;
  g.head_b2 += dlogits.colwise().sum().transpose();
  Mat dz1 = dlogits * p.head_w2;
  dz1.array() *= cache.z1.unaryExpr([](double t) { return gelu_grad(t); }).array();
  g.head_w1.noalias() += dz1.transpose() * cache.x_out;
  g.head_b1 += dz1.colwise().sum().transpose();
  Mat dx = dz1 * p.head_w1;

  // Encoder
  for (std::size_t l = cfg.n_layers; l-- > 0;) {
    dx = encoder_layer_backward(p.layers[l], cfg, cache.layers[l], dx, g.layers[l]);
  }

  // POSEition branch: d tokens / d poseition is the identity.
  if (cfg.pose_dim > 0) {
    Mat dproj = Mat::Zero(cache.proj.rows(), cache.proj.cols());
    run_lstm_backward(p, cache.lstm, dx, dproj, g);
    g.lstm_w_ih.noalias() += dproj.transpose() * cache.xn;
  }
  return loss;
}

double batch_loss_and_grad(const ModelParams& p, const ModelConfig& cfg,
                           std::span<const WindowView> batch, double beta, ModelParams& grads,
                           std::span<double> window_losses) {
  if (batch.empty()) throw InputError("empty batch");
  grads = ModelParams::zeros(cfg);
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<ModelParams> partial(batch.size());
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    partial[i] = ModelParams::zeros(cfg);
    losses[i] = window_loss(p, cfg, batch[i], beta, &partial[i], scale);
  });
  auto total = tensor_refs(grads);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto part = tensor_refs(partial[i]);
    for (std::size_t t = 0; t < total.size(); ++t) {
      auto dst = total[t].span();
      auto src = part[t].span();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
    loss += losses[i];
  }
  if (!window_losses.empty()) {
    if (window_losses.size() != batch.size()) throw InputError("window_losses size mismatch");
    std::copy(losses.begin(), losses.end(), window_losses.begin());
  }
  return loss * scale;
}

}  // namespace dact
