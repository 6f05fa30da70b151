#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "engage/pose.hpp"

namespace engage::gaze {

struct GazeConfig {
  double target_yaw = 0.0;        // calibrated proxy value for "looking at the target"
  double tolerance = 0.25;
  double min_visible_conf = 0.3;
};

/// Lateral head-yaw proxy in [-1, 1] from facial landmarks:
/// (|nose-left| - |nose-right|) / (|nose-left| + |nose-right|), where each
/// side uses the ear and falls back to the eye. nullopt when the nose or
/// either side is missing. Needs no camera calibration and is invariant to
/// uniform scaling and translation.
std::optional<double> head_yaw_proxy(const UpperBodyPose& pose, double min_visible_conf = 0.3);

struct GazeFrequency {
  double value = 0.0;          // fraction of defined-proxy frames within tolerance
  std::size_t defined_frames = 0;
  bool low_coverage = false;   // no frame had a defined proxy
};

/// Fraction of frames with |proxy - target_yaw| <= tolerance, counted over
/// frames where the proxy is defined. Throws empty_window on empty input.
GazeFrequency gaze_at_target_frequency(const std::vector<UpperBodyPose>& window,
                                       const GazeConfig& config);

/// Mean proxy over all defined poses; used by gaze calibration.
std::optional<double> mean_yaw_proxy(const std::vector<UpperBodyPose>& poses,
                                     double min_visible_conf);

void save_gaze_config(const GazeConfig& config, const std::filesystem::path& path);
GazeConfig load_gaze_config(const std::filesystem::path& path);

}  // namespace engage::gaze
