#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "engage/pose.hpp"
#include "engage/tracker.hpp"

namespace engage::features {

/// The 13-class action dictionary with its stable integer encoding.
enum class ActionLabel : int {
  writing = 0,
  raising_hand = 1,
  reading = 2,
  discussing = 3,
  typing_keyboard = 4,
  playing_phone = 5,
  wiping_face = 6,
  yawning = 7,
  checking_time = 8,
  fiddling_hair = 9,
  drinking = 10,
  eating = 11,
  crossing_arms_or_supporting_head = 12,
};

inline constexpr int kActionCount = 13;

std::string_view action_name(ActionLabel label);
std::optional<ActionLabel> action_from_name(std::string_view name);

/// On-task dictionary membership. crossing_arms_or_supporting_head belongs
/// to neither set: its reading depends on gaze.
bool is_engaged_action(ActionLabel label);
bool is_disengaged_action(ActionLabel label);

// ---------------------------------------------------------------------------
// windowing

struct SubClip {
  std::int64_t begin_frame = 0;
  std::int64_t end_frame = 0;  // exclusive
  std::vector<std::pair<std::int64_t, UpperBodyPose>> entries;
};

struct Window {
  int id = 0;
  std::int64_t begin_frame = 0;
  std::int64_t end_frame = 0;  // exclusive
  std::vector<SubClip> subclips;
};

/// Cuts a track into consecutive non-overlapping windows and sub-clips.
/// Trailing partials are kept when at least half the nominal length remains,
/// at both levels. Throws empty_track on a track without entries.
std::vector<Window> window_segments(const track::Track& track, double window_seconds,
                                    double subclip_seconds, double fps);

// ---------------------------------------------------------------------------
// features

struct ActionHistogram {
  std::array<double, kActionCount> freq{};
};

/// Normalized class frequencies; throws empty_predictions on empty input.
ActionHistogram histogram_of_actions(const std::vector<ActionLabel>& predictions);

/// 13 action frequencies + 1 gaze-at-target frequency.
struct EngagementFeature {
  std::array<double, kActionCount + 1> values{};
};

EngagementFeature build_feature(const ActionHistogram& hist, double gaze_freq);

// ---------------------------------------------------------------------------
// feature CSV: track_id,window_id,f0..f12,gaze,label
// label is "engaged", "disengaged", or "" when unlabeled.

struct FeatureRow {
  int track_id = 0;
  int window_id = 0;
  EngagementFeature feature;
  std::optional<bool> engaged;
};

void write_features_csv(const std::vector<FeatureRow>& rows, const std::filesystem::path& path);
std::vector<FeatureRow> read_features_csv(const std::filesystem::path& path);

}  // namespace engage::features
