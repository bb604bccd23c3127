// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dact/data_io.hpp"
#include "dact/localization.hpp"
#include "json.hpp"

namespace dact {

/// Temporal IoU of p against ground truth g, or 0 when p's start is outside
/// [gs - window, gs + window] or its end outside [ge - window, ge + window].
double overlap_score(const ActivityInterval& p, const ActivityInterval& g,
                     std::int64_t window_frames);

struct MatchPair {
  std::size_t pred = 0;
  std::size_t gt = 0;
  double os = 0.0;
};

struct MatchResult {
  std::vector<MatchPair> pairs;
  std::vector<std::size_t> unmatched_preds;
  std::vector<std::size_t> unmatched_gts;
};

/// Greedy one-to-one matching of same-class pairs with os > 0, taken in
/// descending os (ties: earlier gt start, then earlier pred start, then
/// lower indices).
MatchResult match_activities(const std::vector<ActivityInterval>& preds,
                             const std::vector<ActivityInterval>& gts, std::int64_t window_frames);

/// Mean os over matched and unmatched activities; 1 when there are none.
double final_os(const MatchResult& match);

struct Prf1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Matched pairs are true positives; zero denominators give 0.
Prf1 prf1(const MatchResult& match);

struct ScoreTally {
  double os_sum = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  double os() const;
  Prf1 prf1() const;
  nlohmann::json to_json() const;
};

struct EvaluationReport {
  ScoreTally overall;
  std::map<int, ScoreTally> per_class;
  std::map<std::string, ScoreTally> per_video;

  nlohmann::json to_json() const;
};

/// Matches predictions to ground truth video by video (in video-id order)
/// and pools the tallies globally.
EvaluationReport evaluate(const std::vector<PredictionRecord>& preds,
                          const std::vector<AnnotationRecord>& gts, std::int64_t window_frames);

}  // namespace dact
