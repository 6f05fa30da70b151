#include "engage/tracker.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "engage/errors.hpp"

namespace engage::track {

double iou(const BBox& a, const BBox& b) {
  if (a.area() == 0.0 && b.area() == 0.0) return a == b ? 1.0 : 0.0;
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::optional<BBox> keypoint_bbox(const UpperBodyPose& pose, double conf_threshold) {
  bool any = false;
  BBox box;
  for (const Keypoint& k : pose.keypoints) {
    if (!k.visible() || k.c < conf_threshold) continue;
    if (!any) {
      box = BBox{k.x, k.y, k.x, k.y};
      any = true;
    } else {
      box.x_min = std::min(box.x_min, k.x);
      box.y_min = std::min(box.y_min, k.y);
      box.x_max = std::max(box.x_max, k.x);
      box.y_max = std::max(box.y_max, k.y);
    }
  }
  if (!any) return std::nullopt;
  return box;
}

namespace {

struct ActiveTrack {
  int id;
  BBox last_box;
  std::int64_t last_seen;
  std::size_t slot;  // index into the result vector
};

struct Candidate {
  double overlap;
  std::size_t active_idx;
  std::size_t det_idx;
};

}  // namespace

std::vector<Track> associate(const SessionStream& stream, const TrackerConfig& config) {
  if (stream.frames.empty()) throw Error(Errc::empty_session, "cannot associate an empty session");

  std::vector<Track> tracks;
  std::vector<ActiveTrack> active;
  int next_id = 0;

  for (const Frame& frame : stream.frames) {
    // Close tracks whose gap exceeded max_gap. Gap counts fully missed
    // frame indices, so presence at frame f and f + max_gap + 1 survives.
    std::erase_if(active, [&](const ActiveTrack& t) {
      return frame.index - t.last_seen - 1 > config.max_gap;
    });

    // Non-empty detections only: a detection must have at least one joint
    // at or above conf_threshold to carry a box.
    std::vector<UpperBodyPose> dets;
    std::vector<BBox> det_boxes;
    for (const PersonPose& pose : frame.poses) {
      UpperBodyPose upper = select_upper_body(pose);
      if (auto box = keypoint_bbox(upper, config.conf_threshold)) {
        dets.push_back(upper);
        det_boxes.push_back(*box);
      }
    }

    std::vector<Candidate> candidates;
    for (std::size_t a = 0; a < active.size(); ++a)
      for (std::size_t d = 0; d < dets.size(); ++d) {
        const double ov = iou(active[a].last_box, det_boxes[d]);
        if (ov >= config.iou_threshold) candidates.push_back({ov, a, d});
      }
    std::sort(candidates.begin(), candidates.end(), [&](const Candidate& l, const Candidate& r) {
      if (l.overlap != r.overlap) return l.overlap > r.overlap;
      if (active[l.active_idx].id != active[r.active_idx].id)
        return active[l.active_idx].id < active[r.active_idx].id;
      return l.det_idx < r.det_idx;
    });

    std::vector<bool> track_taken(active.size(), false);
    std::vector<bool> det_taken(dets.size(), false);
    for (const Candidate& c : candidates) {
      if (track_taken[c.active_idx] || det_taken[c.det_idx]) continue;
      track_taken[c.active_idx] = true;
      det_taken[c.det_idx] = true;
      ActiveTrack& t = active[c.active_idx];
      tracks[t.slot].entries.emplace_back(frame.index, dets[c.det_idx]);
      t.last_box = det_boxes[c.det_idx];
      t.last_seen = frame.index;
    }

    for (std::size_t d = 0; d < dets.size(); ++d) {
      if (det_taken[d]) continue;
      Track t;
      t.id = next_id++;
      t.entries.emplace_back(frame.index, dets[d]);
      tracks.push_back(std::move(t));
      active.push_back({tracks.back().id, det_boxes[d], frame.index, tracks.size() - 1});
    }
  }
  return tracks;
}

void write_tracks(const TrackSet& set, std::ostream& out) {
  using nlohmann::json;
  json meta = {{"meta",
                {{"width", set.frame_width}, {"height", set.frame_height}, {"fps", set.fps}}}};
  out << meta.dump() << '\n';
  for (const Track& t : set.tracks) {
    json entries = json::array();
    for (const auto& [frame, pose] : t.entries) {
      json kp = json::array();
      for (const Keypoint& k : pose.keypoints) kp.push_back(json::array({k.x, k.y, k.c}));
      entries.push_back(json::array({frame, std::move(kp)}));
    }
    json line = {{"track", t.id}, {"entries", std::move(entries)}};
    out << line.dump() << '\n';
  }
}

void write_tracks_file(const TrackSet& set, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
  write_tracks(set, out);
}

TrackSet read_tracks(std::istream& in) {
  using nlohmann::json;
  TrackSet set;
  std::string line;
  std::size_t line_no = 0;
  bool have_meta = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object())
      throw Error(Errc::malformed_line, "line " + std::to_string(line_no) + ": not a JSON object",
                  line_no);
    if (!have_meta) {
      if (!obj.contains("meta"))
        throw Error(Errc::malformed_line, "line 1: first line must carry meta", line_no);
      set.frame_width = obj["meta"]["width"].get<int>();
      set.frame_height = obj["meta"]["height"].get<int>();
      set.fps = obj["meta"]["fps"].get<double>();
      have_meta = true;
      continue;
    }
    Track t;
    t.id = obj.at("track").get<int>();
    for (const json& entry : obj.at("entries")) {
      UpperBodyPose pose;
      const json& kp = entry.at(1);
      for (std::size_t j = 0; j < kUpperBodyJointCount; ++j)
        pose.keypoints[j] = Keypoint{kp[j][0].get<double>(), kp[j][1].get<double>(),
                                     kp[j][2].get<double>()};
      t.entries.emplace_back(entry.at(0).get<std::int64_t>(), pose);
    }
    set.tracks.push_back(std::move(t));
  }
  if (!have_meta) throw Error(Errc::empty_session, "track file carries no meta", line_no);
  return set;
}

TrackSet read_tracks_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
  return read_tracks(in);
}

}  // namespace engage::track
