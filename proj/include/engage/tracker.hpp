#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

#include "engage/pose.hpp"

namespace engage::track {

struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double area() const noexcept { return (x_max - x_min) * (y_max - y_min); }
  bool operator==(const BBox&) const = default;
};

/// Intersection over union in [0,1]. Two identical zero-area boxes compare
/// as 1, any other pairing with a zero-area box as 0.
double iou(const BBox& a, const BBox& b);

/// Axis-aligned box over joints with c >= conf_threshold; nullopt when no
/// joint qualifies.
std::optional<BBox> keypoint_bbox(const UpperBodyPose& pose, double conf_threshold);

struct TrackerConfig {
  double iou_threshold = 0.3;
  std::int64_t max_gap = 15;  // frames a track may be unseen before it closes
  double conf_threshold = 0.3;
};

/// One student's temporally associated pose sequence.
struct Track {
  int id = 0;
  std::vector<std::pair<std::int64_t, UpperBodyPose>> entries;  // frame index ascending

  std::int64_t first_frame() const { return entries.front().first; }
  std::int64_t last_frame() const { return entries.back().first; }
};

/// Greedy IoU association over the whole session. Candidate pairs are taken
/// in order of descending IoU (ties: lower track id, then lower detection
/// index); unmatched detections open new tracks; tracks unseen for more than
/// max_gap frames are closed. Detections whose upper body has no joint at or
/// above conf_threshold are dropped. Track ids count up from 0 in creation
/// order and are never reused.
std::vector<Track> associate(const SessionStream& stream, const TrackerConfig& config = {});

/// Track container carrying the session meta needed downstream.
struct TrackSet {
  int frame_width = 0;
  int frame_height = 0;
  double fps = 15.0;
  std::vector<Track> tracks;
};

void write_tracks(const TrackSet& set, std::ostream& out);
void write_tracks_file(const TrackSet& set, const std::filesystem::path& path);
TrackSet read_tracks(std::istream& in);
TrackSet read_tracks_file(const std::filesystem::path& path);

}  // namespace engage::track
