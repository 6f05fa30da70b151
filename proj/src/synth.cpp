#include "engage/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "engage/errors.hpp"
#include "engage/gaze.hpp"
#include "engage/rng.hpp"

namespace engage::synth {

namespace {

using features::ActionLabel;

constexpr double kTau = 2.0 * std::numbers::pi;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

Vec2 lerp(Vec2 a, Vec2 b, double e) { return {a.x + (b.x - a.x) * e, a.y + (b.y - a.y) * e}; }

// Seated upper body, anatomical left at +x, y grows downward. The wrists
// rest on the desk line.
constexpr std::array<Vec2, kUpperBodyJointCount> kBase{{
    {0.0, 2.0},     // nose
    {7.0, -4.0},    // left eye
    {-7.0, -4.0},   // right eye
    {16.0, 0.0},    // left ear
    {-16.0, 0.0},   // right ear
    {34.0, 38.0},   // left shoulder
    {-34.0, 38.0},  // right shoulder
    {44.0, 80.0},   // left elbow
    {-44.0, 80.0},  // right elbow
    {40.0, 112.0},  // left wrist
    {-40.0, 112.0}, // right wrist
}};

constexpr Vec2 kRestWristL{40.0, 112.0};
constexpr Vec2 kRestWristR{-40.0, 112.0};

/// 0 outside the episode, 1 during the dwell, linear ramps of `ramp` seconds.
double episode_envelope(double t, double center, double dwell, double ramp) {
  const double d = std::abs(t - center) - dwell / 2.0;
  if (d <= 0.0) return 1.0;
  if (d >= ramp) return 0.0;
  return 1.0 - d / ramp;
}

/// Episodes evenly spread over the clip: centers at (k + 0.5) / m.
double multi_episode_envelope(double t, double seconds, int episodes, double dwell, double ramp) {
  double e = 0.0;
  for (int k = 0; k < episodes; ++k)
    e = std::max(e, episode_envelope(t, (k + 0.5) * seconds / episodes, dwell, ramp));
  return e;
}

struct HeadPose {
  double yaw = 0.0;   // lateral nose/eye shift in px; eyes move at half rate
  double tilt = 0.0;  // vertical shift in px; positive looks down
};

/// Noiseless joint offsets for `action` at clip time t.
std::array<Vec2, kUpperBodyJointCount> action_offsets(ActionLabel action, double t,
                                                      double seconds) {
  std::array<Vec2, kUpperBodyJointCount> o = kBase;
  HeadPose head;
  switch (action) {
    case ActionLabel::writing:
      o[kRightWrist] = {-30.0 + 11.0 * std::sin(kTau * 1.2 * t),
                        114.0 + 3.0 * std::sin(kTau * 2.4 * t)};
      break;
    case ActionLabel::raising_hand: {
      const double e = std::clamp(t / 1.0, 0.0, 1.0);
      o[kRightWrist] = lerp(kRestWristR, {-52.0, -20.0}, e);
      break;
    }
    case ActionLabel::reading: {
      const double sway = 1.5 * std::sin(kTau * 0.3 * t);
      o[kLeftWrist] = {14.0 + sway, 64.0};
      o[kRightWrist] = {-14.0 - sway, 64.0};
      head.tilt = 6.0;
      break;
    }
    case ActionLabel::discussing:
      head.yaw = 7.0;
      o[kRightWrist] = {-40.0 + 14.0 * std::sin(kTau * 0.8 * t),
                        90.0 + 10.0 * std::sin(kTau * 0.53 * t + 1.0)};
      break;
    case ActionLabel::typing_keyboard:
      o[kLeftWrist] = {28.0, 108.0 + 5.0 * std::sin(kTau * 3.0 * t)};
      o[kRightWrist] = {-28.0, 108.0 + 5.0 * std::sin(kTau * 3.0 * t + std::numbers::pi)};
      break;
    case ActionLabel::playing_phone:
      o[kLeftWrist] = {12.0, 135.0};
      o[kRightWrist] = {-12.0, 135.0 + 3.0 * std::sin(kTau * 2.2 * t)};
      head.tilt = 8.0;
      break;
    case ActionLabel::wiping_face: {
      const double e = multi_episode_envelope(t, seconds, 3, 0.8, 0.27);
      const Vec2 target{kBase[kNose].x + 12.0 * std::sin(kTau * 2.5 * t), kBase[kNose].y + 4.0};
      o[kRightWrist] = lerp(kRestWristR, target, e);
      break;
    }
    case ActionLabel::yawning: {
      const double e = episode_envelope(t, seconds * 0.5, 2.2, 0.3);
      head.tilt = -7.0 * e;
      o[kRightWrist] = lerp(kRestWristR, {kBase[kNose].x - 2.0, kBase[kNose].y + 7.0 + head.tilt},
                            e);
      break;
    }
    case ActionLabel::checking_time: {
      const double e = episode_envelope(t, seconds * 0.45, seconds * 0.3, 0.3);
      o[kLeftWrist] = lerp(kRestWristL, {18.0, 46.0}, e);
      head.yaw = 4.0 * e;
      break;
    }
    case ActionLabel::fiddling_hair: {
      const double e = std::clamp(std::min(t, seconds - t) / 0.8, 0.0, 1.0);
      const Vec2 target{kBase[kRightEar].x - 4.0 + 10.0 * std::cos(kTau * 0.9 * t),
                        kBase[kRightEar].y + 2.0 + 8.0 * std::sin(kTau * 0.9 * t)};
      o[kRightWrist] = lerp(kRestWristR, target, e);
      break;
    }
    case ActionLabel::drinking: {
      const double e = multi_episode_envelope(t, seconds, 2, 1.6, 0.3);
      head.tilt = -5.0 * e;
      o[kRightWrist] = lerp(kRestWristR, {kBase[kNose].x - 3.0, kBase[kNose].y + 9.0 + head.tilt},
                            e);
      break;
    }
    case ActionLabel::eating: {
      const double e = multi_episode_envelope(t, seconds, 5, 0.5, 0.25);
      o[kRightWrist] = lerp(kRestWristR, {kBase[kNose].x - 2.0, kBase[kNose].y + 6.0}, e);
      o[kLeftWrist] = {20.0, 70.0};
      break;
    }
    case ActionLabel::crossing_arms_or_supporting_head:
      o[kLeftWrist] = {-22.0, 60.0};
      o[kRightWrist] = {22.0, 60.0};
      break;
  }

  // elbows follow the wrists
  o[kLeftElbow] = {(o[kLeftShoulder].x + o[kLeftWrist].x) / 2.0 + 8.0,
                   (o[kLeftShoulder].y + o[kLeftWrist].y) / 2.0 + 2.0};
  o[kRightElbow] = {(o[kRightShoulder].x + o[kRightWrist].x) / 2.0 - 8.0,
                    (o[kRightShoulder].y + o[kRightWrist].y) / 2.0 + 2.0};

  o[kNose].x += head.yaw;
  o[kNose].y += head.tilt;
  for (auto eye : {kLeftEye, kRightEye}) {
    o[eye].x += 0.5 * head.yaw;
    o[eye].y += 0.6 * head.tilt;
  }
  return o;
}

constexpr double kJointConfidence = 0.9;
constexpr Vec2 kClipAnchor{400.0, 300.0};

UpperBodyPose make_upper_pose(const std::array<Vec2, kUpperBodyJointCount>& offsets, Vec2 anchor,
                              double yaw_shift, double noise_sigma, Rng& rng) {
  UpperBodyPose pose;
  for (std::size_t j = 0; j < kUpperBodyJointCount; ++j) {
    double x = anchor.x + offsets[j].x;
    double y = anchor.y + offsets[j].y;
    if (j == kNose) x += yaw_shift;
    if (j == kLeftEye || j == kRightEye) x += 0.5 * yaw_shift;
    // sigma 0 still consumes two draws, so the stream position is
    // independent of the noise setting
    x += rng.gaussian(0.0, noise_sigma);
    y += rng.gaussian(0.0, noise_sigma);
    pose.keypoints[j] = Keypoint{x, y, kJointConfidence};
  }
  return pose;
}

}  // namespace

std::vector<UpperBodyPose> generate_action_clip(ActionLabel action, double seconds, double fps,
                                                double noise_sigma, std::uint64_t seed) {
  if (!(seconds > 0.0) || !(fps > 0.0))
    throw Error(Errc::bad_config, "clip duration and fps must be positive");
  const auto frames = static_cast<std::size_t>(std::llround(seconds * fps));
  Rng rng(seed);
  std::vector<UpperBodyPose> clip;
  clip.reserve(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    const double t = static_cast<double>(f) / fps;
    clip.push_back(make_upper_pose(action_offsets(action, t, seconds), kClipAnchor, 0.0,
                                   noise_sigma, rng));
  }
  return clip;
}

// ---------------------------------------------------------------------------
// signatures

namespace {

double joint_x(const UpperBodyPose& p, std::size_t j) { return p.keypoints[j].x; }
double joint_y(const UpperBodyPose& p, std::size_t j) { return p.keypoints[j].y; }

double joint_distance(const UpperBodyPose& p, std::size_t a, std::size_t b) {
  return std::hypot(p.keypoints[a].x - p.keypoints[b].x, p.keypoints[a].y - p.keypoints[b].y);
}

template <class Fn>
double mean_over(std::span<const UpperBodyPose> clip, Fn&& fn) {
  double sum = 0.0;
  for (const auto& p : clip) sum += fn(p);
  return sum / static_cast<double>(clip.size());
}

template <class Fn>
double range_over(std::span<const UpperBodyPose> clip, Fn&& fn) {
  double lo = fn(clip[0]), hi = lo;
  for (const auto& p : clip) {
    const double v = fn(p);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return hi - lo;
}

template <class Fn>
double fraction_of(std::span<const UpperBodyPose> clip, Fn&& fn) {
  std::size_t hits = 0;
  for (const auto& p : clip) hits += fn(p) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(clip.size());
}

/// Runs of `mask` at least min_len long; runs separated by gaps shorter than
/// merge_gap count as one (jitter near the threshold must not split runs).
std::vector<std::pair<std::size_t, std::size_t>> mask_runs(const std::vector<bool>& mask,
                                                           std::size_t merge_gap = 5,
                                                           std::size_t min_len = 2) {
  std::vector<std::pair<std::size_t, std::size_t>> raw;
  std::size_t i = 0;
  while (i < mask.size()) {
    if (!mask[i]) {
      ++i;
      continue;
    }
    std::size_t begin = i;
    while (i < mask.size() && mask[i]) ++i;
    raw.emplace_back(begin, i);
  }
  std::vector<std::pair<std::size_t, std::size_t>> merged;
  for (const auto& run : raw) {
    if (!merged.empty() && run.first - merged.back().second < merge_gap)
      merged.back().second = run.second;
    else
      merged.push_back(run);
  }
  std::erase_if(merged, [&](const auto& run) { return run.second - run.first < min_len; });
  return merged;
}

std::vector<bool> near_mask(std::span<const UpperBodyPose> clip, std::size_t joint,
                            std::size_t ref, double threshold) {
  std::vector<bool> mask(clip.size());
  for (std::size_t f = 0; f < clip.size(); ++f)
    mask[f] = joint_distance(clip[f], joint, ref) < threshold;
  return mask;
}

std::size_t face_episodes(std::span<const UpperBodyPose> clip, std::vector<bool>* mask_out) {
  auto mask = near_mask(clip, kRightWrist, kNose, 25.0);
  const auto runs = mask_runs(mask);
  if (mask_out != nullptr) {
    std::vector<bool> episode_mask(clip.size(), false);
    for (const auto& [begin, end] : runs)
      for (std::size_t f = begin; f < end; ++f) episode_mask[f] = true;
    *mask_out = std::move(episode_mask);
  }
  return runs.size();
}

}  // namespace

bool matches_signature(ActionLabel action, std::span<const UpperBodyPose> clip) {
  if (clip.empty()) return false;
  const auto wrist_l_x = [](const UpperBodyPose& p) { return joint_x(p, kLeftWrist); };
  const auto wrist_r_x = [](const UpperBodyPose& p) { return joint_x(p, kRightWrist); };
  const auto wrist_r_y = [](const UpperBodyPose& p) { return joint_y(p, kRightWrist); };
  const auto gap = [](const UpperBodyPose& p) {
    return std::abs(joint_x(p, kLeftWrist) - joint_x(p, kRightWrist));
  };

  switch (action) {
    case ActionLabel::writing:
      return range_over(clip, wrist_r_x) >= 16.0 && range_over(clip, wrist_r_x) <= 44.0 &&
             range_over(clip, wrist_r_y) <= 20.0 &&
             fraction_of(clip, [](const UpperBodyPose& p) {
               return joint_y(p, kRightWrist) > joint_y(p, kRightShoulder) + 30.0;
             }) >= 0.95;
    case ActionLabel::raising_hand:
      return fraction_of(clip, [](const UpperBodyPose& p) {
               return joint_y(p, kRightWrist) < joint_y(p, kRightShoulder);
             }) >= 0.5;
    case ActionLabel::reading: {
      const double rel_l = mean_over(clip, [](const UpperBodyPose& p) {
        return joint_y(p, kLeftWrist) - joint_y(p, kLeftShoulder);
      });
      const double rel_r = mean_over(clip, [](const UpperBodyPose& p) {
        return joint_y(p, kRightWrist) - joint_y(p, kRightShoulder);
      });
      return mean_over(clip, gap) < 40.0 && rel_l >= 10.0 && rel_l <= 45.0 && rel_r >= 10.0 &&
             rel_r <= 45.0;
    }
    case ActionLabel::discussing: {
      double proxy_sum = 0.0;
      std::size_t proxy_count = 0;
      for (const auto& p : clip)
        if (const auto proxy = gaze::head_yaw_proxy(p)) {
          proxy_sum += *proxy;
          ++proxy_count;
        }
      if (proxy_count == 0) return false;
      return std::abs(proxy_sum / static_cast<double>(proxy_count)) >= 0.2 &&
             range_over(clip, wrist_r_x) >= 16.0;
    }
    case ActionLabel::typing_keyboard: {
      const auto wrist_l_y = [](const UpperBodyPose& p) { return joint_y(p, kLeftWrist); };
      const double yr_l = range_over(clip, wrist_l_y);
      const double yr_r = range_over(clip, wrist_r_y);
      return yr_l >= 7.0 && yr_l <= 26.0 && yr_r >= 7.0 && yr_r <= 26.0 &&
             range_over(clip, wrist_l_x) < 14.0 && range_over(clip, wrist_r_x) < 14.0 &&
             mean_over(clip, gap) >= 44.0;
    }
    case ActionLabel::playing_phone: {
      const double rel_l = mean_over(clip, [](const UpperBodyPose& p) {
        return joint_y(p, kLeftWrist) - joint_y(p, kLeftShoulder);
      });
      const double rel_r = mean_over(clip, [](const UpperBodyPose& p) {
        return joint_y(p, kRightWrist) - joint_y(p, kRightShoulder);
      });
      return mean_over(clip, gap) < 40.0 && rel_l > 80.0 && rel_r > 80.0;
    }
    case ActionLabel::wiping_face:
      return face_episodes(clip, nullptr) == 3;
    case ActionLabel::yawning: {
      std::vector<bool> inside;
      if (face_episodes(clip, &inside) != 1) return false;
      double in_sum = 0.0, out_sum = 0.0;
      std::size_t in_count = 0, out_count = 0;
      for (std::size_t f = 0; f < clip.size(); ++f) {
        if (inside[f]) {
          in_sum += joint_y(clip[f], kNose);
          ++in_count;
        } else {
          out_sum += joint_y(clip[f], kNose);
          ++out_count;
        }
      }
      if (in_count == 0 || out_count == 0) return false;
      return in_sum / in_count < out_sum / out_count - 3.0;  // head tips back
    }
    case ActionLabel::checking_time: {
      std::vector<bool> elevated(clip.size());
      for (std::size_t f = 0; f < clip.size(); ++f)
        elevated[f] =
            joint_y(clip[f], kLeftWrist) < joint_y(clip[f], kLeftShoulder) + 25.0;
      const auto runs = mask_runs(elevated);
      double frac = 0.0;
      for (const auto& [begin, end] : runs) frac += static_cast<double>(end - begin);
      frac /= static_cast<double>(clip.size());
      const bool never_overhead = fraction_of(clip, [](const UpperBodyPose& p) {
                                    return joint_y(p, kLeftWrist) <
                                           joint_y(p, kLeftShoulder) - 15.0;
                                  }) == 0.0;
      return runs.size() == 1 && frac >= 0.15 && frac <= 0.6 && never_overhead;
    }
    case ActionLabel::fiddling_hair:
      return fraction_of(clip, [](const UpperBodyPose& p) {
               return joint_distance(p, kRightWrist, kRightEar) < 30.0;
             }) >= 0.5;
    case ActionLabel::drinking:
      return face_episodes(clip, nullptr) == 2;
    case ActionLabel::eating:
      return face_episodes(clip, nullptr) >= 4;
    case ActionLabel::crossing_arms_or_supporting_head:
      return mean_over(clip, [](const UpperBodyPose& p) {
               return joint_x(p, kRightWrist) - joint_x(p, kLeftWrist);
             }) > 20.0;
  }
  return false;
}

// ---------------------------------------------------------------------------
// clip sets

ClipSet generate_clip_set(const ClipSetConfig& config) {
  ClipSet set;
  set.fps = config.fps;
  set.clip_seconds = config.clip_seconds;
  Rng master(config.seed);
  for (int k = 0; k < features::kActionCount; ++k) {
    const auto action = static_cast<ActionLabel>(k);
    for (int i = 0; i < config.clips_per_class; ++i) {
      LabeledClip clip;
      char suffix[16];
      std::snprintf(suffix, sizeof(suffix), "%04d", i);
      clip.id = std::string(features::action_name(action)) + "_" + suffix;
      clip.label = action;
      const std::uint64_t clip_seed =
          master.fork(static_cast<std::uint64_t>(k) * 100'000 + static_cast<std::uint64_t>(i))
              .next_u64();
      clip.poses = generate_action_clip(action, config.clip_seconds, config.fps,
                                        config.noise_sigma, clip_seed);
      set.clips.push_back(std::move(clip));
    }
  }
  return set;
}

void write_clips_file(const ClipSet& set, const std::filesystem::path& path) {
  using nlohmann::json;
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
  json meta = {{"meta", {{"type", "clips"}, {"fps", set.fps}, {"clip_seconds", set.clip_seconds}}}};
  out << meta.dump() << '\n';
  for (const LabeledClip& clip : set.clips) {
    json track = json::array();
    for (std::size_t f = 0; f < clip.poses.size(); ++f) {
      json kp = json::array();
      for (const Keypoint& k : clip.poses[f].keypoints)
        kp.push_back(json::array({k.x, k.y, k.c}));
      track.push_back(json::array({f, std::move(kp)}));
    }
    json line = {{"id", clip.id},
                 {"label", std::string(features::action_name(clip.label))},
                 {"track", std::move(track)}};
    out << line.dump() << '\n';
  }
}

ClipSet read_clips_file(const std::filesystem::path& path) {
  using nlohmann::json;
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
  ClipSet set;
  std::string line;
  std::size_t line_no = 0;
  bool have_meta = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded())
      throw Error(Errc::malformed_line, "line " + std::to_string(line_no) + ": invalid JSON",
                  line_no);
    if (!have_meta) {
      set.fps = obj.at("meta").at("fps").get<double>();
      set.clip_seconds = obj.at("meta").at("clip_seconds").get<double>();
      have_meta = true;
      continue;
    }
    LabeledClip clip;
    clip.id = obj.at("id").get<std::string>();
    const auto label = features::action_from_name(obj.at("label").get<std::string>());
    if (!label)
      throw Error(Errc::malformed_line,
                  "line " + std::to_string(line_no) + ": unknown action label", line_no);
    clip.label = *label;
    for (const json& entry : obj.at("track")) {
      UpperBodyPose pose;
      const json& kp = entry.at(1);
      for (std::size_t j = 0; j < kUpperBodyJointCount; ++j)
        pose.keypoints[j] =
            Keypoint{kp[j][0].get<double>(), kp[j][1].get<double>(), kp[j][2].get<double>()};
      clip.poses.push_back(pose);
    }
    set.clips.push_back(std::move(clip));
  }
  if (!have_meta) throw Error(Errc::empty_session, "clip file carries no meta");
  return set;
}

// ---------------------------------------------------------------------------
// sessions

namespace {

constexpr std::array<Vec2, 6> kLowerBody{{
    {20.0, 150.0},   // left hip
    {-20.0, 150.0},  // right hip
    {24.0, 215.0},   // left knee
    {-24.0, 215.0},  // right knee
    {26.0, 262.0},   // left ankle
    {-26.0, 262.0},  // right ankle
}};
constexpr std::array<double, 6> kLowerBodyConfidence{0.6, 0.6, 0.5, 0.5, 0.4, 0.4};

ActionLabel draw_action(const std::array<double, features::kActionCount>& mix, bool engaged,
                        Rng& rng) {
  std::vector<double> weights(features::kActionCount, 0.0);
  double total = 0.0;
  for (int k = 0; k < features::kActionCount; ++k) {
    const auto action = static_cast<ActionLabel>(k);
    const bool in_set = engaged ? features::is_engaged_action(action)
                                : features::is_disengaged_action(action);
    if (in_set || action == ActionLabel::crossing_arms_or_supporting_head) {
      weights[static_cast<std::size_t>(k)] = mix[static_cast<std::size_t>(k)];
      total += mix[static_cast<std::size_t>(k)];
    }
  }
  if (total <= 0.0) weights.assign(mix.begin(), mix.end());  // degenerate mix: use it as-is
  return static_cast<ActionLabel>(rng.pick_weighted(weights));
}

void validate_config(const SynthConfig& config) {
  if (config.students < 1) throw Error(Errc::bad_config, "students must be >= 1");
  if (!(config.fps > 0.0) || !(config.duration_seconds > 0.0))
    throw Error(Errc::bad_config, "fps and duration must be positive");
  if (config.noise_sigma < 0.0) throw Error(Errc::bad_config, "noise_sigma must be >= 0");
  double total = 0.0;
  for (double p : config.class_mix) {
    if (p < 0.0) throw Error(Errc::invalid_mix, "class mix proportions must be >= 0");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6)
    throw Error(Errc::invalid_mix, "class mix must sum to 1, got " + std::to_string(total));
}

PersonPose make_full_pose(const UpperBodyPose& upper, Vec2 anchor, double noise_sigma, Rng& rng,
                          int frame_width, int frame_height) {
  PersonPose pose;
  for (std::size_t j = 0; j < kUpperBodyJointCount; ++j) pose.keypoints[j] = upper.keypoints[j];
  for (std::size_t j = 0; j < kLowerBody.size(); ++j) {
    const double x = anchor.x + kLowerBody[j].x + rng.gaussian(0.0, noise_sigma);
    const double y = anchor.y + kLowerBody[j].y + rng.gaussian(0.0, noise_sigma);
    pose.keypoints[kUpperBodyJointCount + j] = Keypoint{x, y, kLowerBodyConfidence[j]};
  }
  for (Keypoint& k : pose.keypoints) {
    k.x = std::clamp(k.x, 0.0, static_cast<double>(frame_width) - 1.0);
    k.y = std::clamp(k.y, 0.0, static_cast<double>(frame_height) - 1.0);
  }
  return pose;
}

}  // namespace

GeneratedSession generate_session(const SynthConfig& config) {
  validate_config(config);

  const auto window_frames =
      static_cast<std::int64_t>(std::llround(config.window_seconds * config.fps));
  const auto subclip_frames =
      static_cast<std::int64_t>(std::llround(config.subclip_seconds * config.fps));
  if (window_frames < 1 || subclip_frames < 1 || window_frames % subclip_frames != 0)
    throw Error(Errc::bad_config, "window must be a whole number of sub-clips");
  const auto requested = static_cast<std::int64_t>(std::llround(config.duration_seconds * config.fps));
  const std::int64_t window_count = (requested + window_frames - 1) / window_frames;
  const std::int64_t total_frames = window_count * window_frames;
  const std::int64_t clips_per_window = window_frames / subclip_frames;

  Rng master(config.seed);
  GeneratedSession out;
  out.stream.frame_width = config.frame_width;
  out.stream.frame_height = config.frame_height;
  out.stream.fps = config.fps;
  out.truth.fps = config.fps;
  out.truth.window_seconds = config.window_seconds;
  out.truth.subclip_seconds = config.subclip_seconds;

  std::vector<std::vector<PersonPose>> full_poses(
      static_cast<std::size_t>(config.students));

  for (int s = 0; s < config.students; ++s) {
    Rng rng = master.fork(1000 + static_cast<std::uint64_t>(s));
    TruthStudent student;
    student.id = s;
    const Vec2 anchor{
        config.seat_layout.origin_x + (s % config.seat_layout.cols) * config.seat_layout.spacing_x,
        config.seat_layout.origin_y + (s / config.seat_layout.cols) * config.seat_layout.spacing_y};
    student.seat_x = anchor.x;
    student.seat_y = anchor.y;

    // script the whole session first, then roll the poses
    std::vector<double> away_side(static_cast<std::size_t>(window_count), 1.0);
    for (std::int64_t w = 0; w < window_count; ++w) {
      const EngagementScript& script = config.engagement_script;
      double p_on = script.base_ratio;
      if (script.drift_amplitude != 0.0 && script.drift_period_windows > 0.0)
        p_on += script.drift_amplitude *
                std::sin(kTau * static_cast<double>(w) / script.drift_period_windows);
      p_on = std::clamp(p_on, 0.0, 1.0);
      TruthWindow window;
      window.id = static_cast<int>(w);
      window.engaged = rng.uniform() < p_on;
      away_side[static_cast<std::size_t>(w)] = rng.uniform() < 0.5 ? 1.0 : -1.0;
      for (std::int64_t c = 0; c < clips_per_window; ++c)
        window.actions.push_back(draw_action(config.class_mix, window.engaged, rng));
      student.windows.push_back(std::move(window));
    }

    full_poses[static_cast<std::size_t>(s)].reserve(static_cast<std::size_t>(total_frames));
    for (std::int64_t f = 0; f < total_frames; ++f) {
      const std::int64_t w = f / window_frames;
      const std::int64_t c = (f % window_frames) / subclip_frames;
      const double t_local =
          static_cast<double>(f % subclip_frames) / config.fps;
      const TruthWindow& window = student.windows[static_cast<std::size_t>(w)];
      const ActionLabel action = window.actions[static_cast<std::size_t>(c)];
      // off-task students look away from the target; on-task head pose is
      // whatever the action template dictates
      const double yaw_shift =
          window.engaged ? 0.0 : 7.0 * away_side[static_cast<std::size_t>(w)];
      UpperBodyPose upper =
          make_upper_pose(action_offsets(action, t_local, config.subclip_seconds), anchor,
                          yaw_shift, config.noise_sigma, rng);
      PersonPose full = make_full_pose(upper, anchor, config.noise_sigma, rng,
                                       config.frame_width, config.frame_height);
      // ground truth carries exactly what the stream carries
      student.entries.emplace_back(f, select_upper_body(full));
      full_poses[static_cast<std::size_t>(s)].push_back(full);
    }
    out.truth.students.push_back(std::move(student));
  }

  out.stream.frames.reserve(static_cast<std::size_t>(total_frames));
  for (std::int64_t f = 0; f < total_frames; ++f) {
    Frame frame;
    frame.index = f;
    for (int s = 0; s < config.students; ++s)
      frame.poses.push_back(full_poses[static_cast<std::size_t>(s)][static_cast<std::size_t>(f)]);
    out.stream.frames.push_back(std::move(frame));
  }
  return out;
}

SessionStream generate_calibration_session(const SynthConfig& config, double seconds) {
  validate_config(config);
  const auto frames = static_cast<std::int64_t>(std::llround(seconds * config.fps));
  Rng master(config.seed);
  SessionStream stream;
  stream.frame_width = config.frame_width;
  stream.frame_height = config.frame_height;
  stream.fps = config.fps;

  std::vector<Rng> rngs;
  std::vector<Vec2> anchors;
  for (int s = 0; s < config.students; ++s) {
    rngs.push_back(master.fork(5000 + static_cast<std::uint64_t>(s)));
    anchors.push_back(
        {config.seat_layout.origin_x + (s % config.seat_layout.cols) * config.seat_layout.spacing_x,
         config.seat_layout.origin_y +
             (s / config.seat_layout.cols) * config.seat_layout.spacing_y});
  }

  std::array<Vec2, kUpperBodyJointCount> idle = kBase;
  idle[kLeftElbow] = {(kBase[kLeftShoulder].x + kBase[kLeftWrist].x) / 2.0 + 8.0,
                      (kBase[kLeftShoulder].y + kBase[kLeftWrist].y) / 2.0 + 2.0};
  idle[kRightElbow] = {(kBase[kRightShoulder].x + kBase[kRightWrist].x) / 2.0 - 8.0,
                       (kBase[kRightShoulder].y + kBase[kRightWrist].y) / 2.0 + 2.0};

  for (std::int64_t f = 0; f < frames; ++f) {
    Frame frame;
    frame.index = f;
    for (int s = 0; s < config.students; ++s) {
      UpperBodyPose upper = make_upper_pose(idle, anchors[static_cast<std::size_t>(s)], 0.0,
                                            config.noise_sigma, rngs[static_cast<std::size_t>(s)]);
      frame.poses.push_back(make_full_pose(upper, anchors[static_cast<std::size_t>(s)],
                                           config.noise_sigma, rngs[static_cast<std::size_t>(s)],
                                           config.frame_width, config.frame_height));
    }
    stream.frames.push_back(std::move(frame));
  }
  return stream;
}

std::vector<int> match_tracks_to_students(const std::vector<track::Track>& tracks,
                                          const SessionTruth& truth) {
  std::vector<int> assignment(tracks.size(), -1);
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    double sum_x = 0.0, sum_y = 0.0;
    std::size_t count = 0;
    for (const auto& [frame, pose] : tracks[t].entries) {
      const Keypoint& nose = pose.keypoints[kNose];
      if (!nose.visible()) continue;
      sum_x += nose.x;
      sum_y += nose.y;
      ++count;
    }
    if (count == 0) continue;
    const double mx = sum_x / static_cast<double>(count);
    const double my = sum_y / static_cast<double>(count);
    double best = 120.0;  // matching radius; seats sit hundreds of px apart
    for (const TruthStudent& student : truth.students) {
      const double d = std::hypot(mx - student.seat_x, my - (student.seat_y + kBase[kNose].y));
      if (d < best) {
        best = d;
        assignment[t] = student.id;
      }
    }
  }
  return assignment;
}

void write_truth_file(const SessionTruth& truth, const std::filesystem::path& path) {
  using nlohmann::json;
  json obj;
  obj["fps"] = truth.fps;
  obj["window_seconds"] = truth.window_seconds;
  obj["subclip_seconds"] = truth.subclip_seconds;
  json students = json::array();
  for (const TruthStudent& student : truth.students) {
    json windows = json::array();
    for (const TruthWindow& window : student.windows) {
      json actions = json::array();
      for (ActionLabel action : window.actions)
        actions.push_back(std::string(features::action_name(action)));
      windows.push_back(
          {{"id", window.id}, {"engaged", window.engaged}, {"actions", std::move(actions)}});
    }
    students.push_back({{"id", student.id},
                        {"seat", json::array({student.seat_x, student.seat_y})},
                        {"windows", std::move(windows)}});
  }
  obj["students"] = std::move(students);
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
  out << obj.dump(2) << '\n';
}

SessionTruth read_truth_file(const std::filesystem::path& path) {
  using nlohmann::json;
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
  json obj = json::parse(in, nullptr, false);
  if (obj.is_discarded()) throw Error(Errc::malformed_line, "invalid truth JSON");
  SessionTruth truth;
  truth.fps = obj.at("fps").get<double>();
  truth.window_seconds = obj.at("window_seconds").get<double>();
  truth.subclip_seconds = obj.at("subclip_seconds").get<double>();
  for (const json& student_obj : obj.at("students")) {
    TruthStudent student;
    student.id = student_obj.at("id").get<int>();
    student.seat_x = student_obj.at("seat")[0].get<double>();
    student.seat_y = student_obj.at("seat")[1].get<double>();
    for (const json& window_obj : student_obj.at("windows")) {
      TruthWindow window;
      window.id = window_obj.at("id").get<int>();
      window.engaged = window_obj.at("engaged").get<bool>();
      for (const json& name : window_obj.at("actions")) {
        const auto action = features::action_from_name(name.get<std::string>());
        if (!action) throw Error(Errc::malformed_line, "unknown action in truth file");
        window.actions.push_back(*action);
      }
      student.windows.push_back(std::move(window));
    }
    truth.students.push_back(std::move(student));
  }
  return truth;
}

}  // namespace engage::synth
