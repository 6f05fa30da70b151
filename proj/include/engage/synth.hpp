#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "engage/features.hpp"
#include "engage/pose.hpp"
#include "engage/tracker.hpp"

namespace engage::synth {

/// Seat positions on a grid, row-major from the top-left.
struct GridSpec {
  int cols = 5;
  double origin_x = 260.0;
  double origin_y = 320.0;
  double spacing_x = 300.0;
  double spacing_y = 260.0;
};

/// Per-window on-task probability: base_ratio plus an optional sinusoidal
/// drift so session timelines carry variance.
struct EngagementScript {
  double base_ratio = 0.8;
  double drift_amplitude = 0.0;
  double drift_period_windows = 8.0;
};

struct SynthConfig {
  std::uint64_t seed = 7;
  int students = 10;
  double duration_seconds = 480.0;  // rounded up to whole windows
  double fps = 15.0;
  double noise_sigma = 1.5;  // pixel jitter on every joint coordinate
  std::array<double, features::kActionCount> class_mix{
      1.0 / 13, 1.0 / 13, 1.0 / 13, 1.0 / 13, 1.0 / 13, 1.0 / 13, 1.0 / 13,
      1.0 / 13, 1.0 / 13, 1.0 / 13, 1.0 / 13, 1.0 / 13, 1.0 / 13};
  GridSpec seat_layout;
  EngagementScript engagement_script;
  double window_seconds = 120.0;
  double subclip_seconds = 10.0;
  int frame_width = 1920;
  int frame_height = 1080;
};

// ---------------------------------------------------------------------------
// action clips

/// Deterministic kinematic template for one action plus seeded Gaussian
/// jitter. noise_sigma = 0 reproduces the closed-form template exactly.
std::vector<UpperBodyPose> generate_action_clip(features::ActionLabel action, double seconds,
                                                double fps, double noise_sigma,
                                                std::uint64_t seed);

/// Checks the documented kinematic signature of an action template, e.g.
/// raising_hand keeps a wrist above the shoulder line in at least half the
/// frames. Signatures are computed from the clip itself (no anchor needed).
bool matches_signature(features::ActionLabel action, std::span<const UpperBodyPose> clip);

struct LabeledClip {
  std::string id;
  features::ActionLabel label = features::ActionLabel::writing;
  std::vector<UpperBodyPose> poses;
};

struct ClipSetConfig {
  std::uint64_t seed = 7;
  int clips_per_class = 40;
  double clip_seconds = 10.0;
  double fps = 15.0;
  double noise_sigma = 1.5;
};

struct ClipSet {
  double fps = 15.0;
  double clip_seconds = 10.0;
  std::vector<LabeledClip> clips;
};

ClipSet generate_clip_set(const ClipSetConfig& config);

// Clip dataset JSONL: meta line, then one {"id","label","track"} object per
// clip, where track entries are [frame, 11 x [x,y,c]].
void write_clips_file(const ClipSet& set, const std::filesystem::path& path);
ClipSet read_clips_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// sessions

struct TruthWindow {
  int id = 0;
  bool engaged = false;
  std::vector<features::ActionLabel> actions;  // one per sub-clip
};

struct TruthStudent {
  int id = 0;
  double seat_x = 0.0;
  double seat_y = 0.0;
  std::vector<std::pair<std::int64_t, UpperBodyPose>> entries;  // in-memory ground truth track
  std::vector<TruthWindow> windows;
};

struct SessionTruth {
  double fps = 15.0;
  double window_seconds = 120.0;
  double subclip_seconds = 10.0;
  std::vector<TruthStudent> students;
};

struct GeneratedSession {
  SessionStream stream;
  SessionTruth truth;
};

/// Students at fixed seats; per-window engagement drawn from the script;
/// sub-clip actions drawn from class_mix restricted to the window's on/off
/// dictionary (plus the gaze-dependent crossing class); gaze points at the
/// target during on-task windows and away otherwise. Throws invalid_mix.
GeneratedSession generate_session(const SynthConfig& config);

/// Students idle at their seats looking at the target; used to calibrate the
/// gaze yaw.
SessionStream generate_calibration_session(const SynthConfig& config, double seconds);

/// Student id per track, matched by mean nose position against seat anchors;
/// -1 when no seat is within matching range.
std::vector<int> match_tracks_to_students(const std::vector<track::Track>& tracks,
                                          const SessionTruth& truth);

// Truth JSON: fps, window/sub-clip spans, per-student seat, per-window
// engagement plus action names. Pose entries stay in memory only.
void write_truth_file(const SessionTruth& truth, const std::filesystem::path& path);
SessionTruth read_truth_file(const std::filesystem::path& path);

}  // namespace engage::synth
