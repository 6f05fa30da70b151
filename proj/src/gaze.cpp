#include "engage/gaze.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "engage/errors.hpp"

namespace engage::gaze {

namespace {

std::optional<Keypoint> lateral_landmark(const UpperBodyPose& pose, CocoJoint ear, CocoJoint eye,
                                         double min_conf) {
  const Keypoint& e = pose.keypoints[ear];
  if (e.c >= min_conf && e.visible()) return e;
  const Keypoint& fallback = pose.keypoints[eye];
  if (fallback.c >= min_conf && fallback.visible()) return fallback;
  return std::nullopt;
}

}  // namespace

std::optional<double> head_yaw_proxy(const UpperBodyPose& pose, double min_visible_conf) {
  const Keypoint& nose = pose.keypoints[kNose];
  if (!(nose.c >= min_visible_conf) || !nose.visible()) return std::nullopt;
  const auto left = lateral_landmark(pose, kLeftEar, kLeftEye, min_visible_conf);
  const auto right = lateral_landmark(pose, kRightEar, kRightEye, min_visible_conf);
  if (!left || !right) return std::nullopt;
  const double d_left = std::hypot(nose.x - left->x, nose.y - left->y);
  const double d_right = std::hypot(nose.x - right->x, nose.y - right->y);
  const double total = d_left + d_right;
  if (total == 0.0) return 0.0;
  return (d_left - d_right) / total;
}

GazeFrequency gaze_at_target_frequency(const std::vector<UpperBodyPose>& window,
                                       const GazeConfig& config) {
  if (window.empty()) throw Error(Errc::empty_window, "gaze window has no frames");
  GazeFrequency out;
  std::size_t at_target = 0;
  for (const UpperBodyPose& pose : window) {
    const auto proxy = head_yaw_proxy(pose, config.min_visible_conf);
    if (!proxy) continue;
    ++out.defined_frames;
    if (std::abs(*proxy - config.target_yaw) <= config.tolerance) ++at_target;
  }
  if (out.defined_frames == 0) {
    out.low_coverage = true;
    return out;
  }
  out.value = static_cast<double>(at_target) / static_cast<double>(out.defined_frames);
  return out;
}

std::optional<double> mean_yaw_proxy(const std::vector<UpperBodyPose>& poses,
                                     double min_visible_conf) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const UpperBodyPose& pose : poses) {
    if (const auto proxy = head_yaw_proxy(pose, min_visible_conf)) {
      sum += *proxy;
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

void save_gaze_config(const GazeConfig& config, const std::filesystem::path& path) {
  nlohmann::json obj = {{"target_yaw", config.target_yaw},
                        {"tolerance", config.tolerance},
                        {"min_visible_conf", config.min_visible_conf}};
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
  out << obj.dump(2) << '\n';
}

GazeConfig load_gaze_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
  nlohmann::json obj = nlohmann::json::parse(in, nullptr, false);
  if (obj.is_discarded()) throw Error(Errc::malformed_line, "invalid gaze config JSON");
  GazeConfig config;
  config.target_yaw = obj.at("target_yaw").get<double>();
  config.tolerance = obj.value("tolerance", 0.25);
  config.min_visible_conf = obj.value("min_visible_conf", 0.3);
  return config;
}

}  // namespace engage::gaze
