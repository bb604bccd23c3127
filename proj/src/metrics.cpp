// SPDX-License-Identifier: Apache-2.0
#include "dact/metrics.hpp"

#include <algorithm>
#include <set>

namespace dact {

double overlap_score(const ActivityInterval& p, const ActivityInterval& g,
                     std::int64_t window_frames) {
  const auto w = window_frames;
  if (p.start_frame < g.start_frame - w || p.start_frame > g.start_frame + w) return 0.0;
  if (p.end_frame < g.end_frame - w || p.end_frame > g.end_frame + w) return 0.0;
  const auto inter = std::min(p.end_frame, g.end_frame) - std::max(p.start_frame, g.start_frame);
  const auto uni = std::max(p.end_frame, g.end_frame) - std::min(p.start_frame, g.start_frame);
  if (inter <= 0 || uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

MatchResult match_activities(const std::vector<ActivityInterval>& preds,
                             const std::vector<ActivityInterval>& gts, std::int64_t window_frames) {
  std::vector<MatchPair> candidates;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (preds[i].class_id != gts[j].class_id) continue;
      const double os = overlap_score(preds[i], gts[j], window_frames);
      if (os > 0.0) candidates.push_back({i, j, os});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [&](const MatchPair& a, const MatchPair& b) {
    if (a.os != b.os) return a.os > b.os;
    if (gts[a.gt].start_frame != gts[b.gt].start_frame) {
      return gts[a.gt].start_frame < gts[b.gt].start_frame;
    }
    if (preds[a.pred].start_frame != preds[b.pred].start_frame) {
      return preds[a.pred].start_frame < preds[b.pred].start_frame;
    }
    if (a.gt != b.gt) return a.gt < b.gt;
    return a.pred < b.pred;
  });

  MatchResult result;
  std::vector<bool> pred_used(preds.size(), false);
  std::vector<bool> gt_used(gts.size(), false);
  for (const auto& c : candidates) {
    if (pred_used[c.pred] || gt_used[c.gt]) continue;
    pred_used[c.pred] = true;
    gt_used[c.gt] = true;
    result.pairs.push_back(c);
  }
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!pred_used[i]) result.unmatched_preds.push_back(i);
  }
  for (std::size_t j = 0; j < gts.size(); ++j) {
    if (!gt_used[j]) result.unmatched_gts.push_back(j);
  }
  return result;
}

namespace {

ScoreTally tally(const MatchResult& m) {
  ScoreTally t;
  for (const auto& p : m.pairs) t.os_sum += p.os;
  t.tp = m.pairs.size();
  t.fp = m.unmatched_preds.size();
  t.fn = m.unmatched_gts.size();
  return t;
}

void accumulate(ScoreTally& into, const ScoreTally& t) {
  into.os_sum += t.os_sum;
  into.tp += t.tp;
  into.fp += t.fp;
  into.fn += t.fn;
}

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

double ScoreTally::os() const {
  const auto n = tp + fp + fn;
  return n == 0 ? 1.0 : os_sum / static_cast<double>(n);
}

Prf1 ScoreTally::prf1() const {
  Prf1 r;
  r.precision = ratio(static_cast<double>(tp), static_cast<double>(tp + fp));
  r.recall = ratio(static_cast<double>(tp), static_cast<double>(tp + fn));
  r.f1 = ratio(2.0 * r.precision * r.recall, r.precision + r.recall);
  return r;
}

nlohmann::json ScoreTally::to_json() const {
  const Prf1 r = prf1();
  return nlohmann::json{{"os", os()},     {"precision", r.precision},
                        {"recall", r.recall}, {"f1", r.f1},
                        {"tp", tp},       {"fp", fp},
                        {"fn", fn}};
}

double final_os(const MatchResult& match) { return tally(match).os(); }

Prf1 prf1(const MatchResult& match) { return tally(match).prf1(); }

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json j = overall.to_json();
  j["per_class"] = nlohmann::json::object();
  for (const auto& [k, t] : per_class) j["per_class"][std::to_string(k)] = t.to_json();
  j["per_video"] = nlohmann::json::object();
  for (const auto& [v, t] : per_video) j["per_video"][v] = t.to_json();
  return j;
}

EvaluationReport evaluate(const std::vector<PredictionRecord>& preds,
                          const std::vector<AnnotationRecord>& gts, std::int64_t window_frames) {
  std::set<std::string> videos;
  for (const auto& p : preds) videos.insert(p.video_id);
  for (const auto& g : gts) videos.insert(g.video_id);

  EvaluationReport report;
  for (const auto& video : videos) {
    std::vector<ActivityInterval> p_iv, g_iv;
    for (const auto& p : preds) {
      if (p.video_id == video) p_iv.push_back({p.class_id, p.start_frame, p.end_frame, p.peak_height});
    }
    for (const auto& g : gts) {
      if (g.video_id == video) g_iv.push_back({g.class_id, g.start_frame, g.end_frame, 1.0});
    }
    const MatchResult m = match_activities(p_iv, g_iv, window_frames);
    const ScoreTally t = tally(m);
    accumulate(report.overall, t);
    report.per_video[video] = t;

    for (const auto& pair : m.pairs) {
      auto& c = report.per_class[g_iv[pair.gt].class_id];
      c.os_sum += pair.os;
      ++c.tp;
    }
    for (auto i : m.unmatched_preds) ++report.per_class[p_iv[i].class_id].fp;
    for (auto j : m.unmatched_gts) ++report.per_class[g_iv[j].class_id].fn;
  }
  return report;
}

}  // namespace dact
