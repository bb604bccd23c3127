// SPDX-License-Identifier: Apache-2.0
// Builders shared by the unit and acceptance tests.
#pragma once

#include <optional>

#include "dact/pose_features.hpp"
#include "dact/synth.hpp"
#include "dact/training.hpp"

namespace dact::testing {

/// Model inputs of one synthetic camera. Without a layout the pose matrix has
/// no columns; with one, features come from the generated keypoints.
VideoData synth_video(const Scenario& scn, int camera,
                      const std::optional<FeatureLayout>& layout = std::nullopt);

/// True when every tensor of a and b is bit-identical.
bool same_params(ModelParams a, ModelParams b);

}  // namespace dact::testing
