// SPDX-License-Identifier: Apache-2.0
#include "fixtures.hpp"

#include <cstring>

namespace dact::testing {

VideoData synth_video(const Scenario& scn, int camera, const std::optional<FeatureLayout>& layout) {
  VideoData v;
  const auto segs = gen_embeddings(scn, camera);
  v.embeddings.resize(static_cast<Eigen::Index>(segs.size()), static_cast<Eigen::Index>(scn.n_f));
  for (std::size_t s = 0; s < segs.size(); ++s) {
    for (std::size_t k = 0; k < scn.n_f; ++k) {
      v.embeddings(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)) = segs[s].values[k];
    }
  }
  if (layout) {
    PoseFeatureExtractor extract(*layout, synth_intrinsics());
    const auto frames = gen_keypoints(scn, camera);
    v.pose_frames.resize(scn.num_frames, static_cast<Eigen::Index>(layout->pose_dim()));
    for (std::size_t f = 0; f < frames.size(); ++f) {
      const auto feat = extract(frames[f]).values;
      for (std::size_t k = 0; k < feat.size(); ++k) {
        v.pose_frames(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(k)) = feat[k];
      }
    }
  } else {
    v.pose_frames.resize(scn.num_frames, 0);
  }
  v.labels = scenario_labels(scn);
  return v;
}

bool same_params(ModelParams a, ModelParams b) {
  auto ra = tensor_refs(a);
  auto rb = tensor_refs(b);
  if (ra.size() != rb.size()) return false;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    if (ra[i].name != rb[i].name || ra[i].size() != rb[i].size()) return false;
    if (std::memcmp(ra[i].data, rb[i].data, static_cast<std::size_t>(ra[i].size()) * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace dact::testing
