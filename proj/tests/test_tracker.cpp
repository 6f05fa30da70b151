#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "engage/errors.hpp"
#include "engage/rng.hpp"
#include "engage/tracker.hpp"
#include "oracles.hpp"

using namespace engage;
using track::BBox;

namespace {

PersonPose person_at(double x, double y, double c = 0.9, double size = 40.0) {
  PersonPose pose;
  // a small upper-body blob: enough visible joints for a box
  pose.keypoints[kNose] = {x, y, c};
  pose.keypoints[kLeftShoulder] = {x + size / 2, y + size, c};
  pose.keypoints[kRightShoulder] = {x - size / 2, y + size, c};
  pose.keypoints[kLeftWrist] = {x + size / 2, y + 2 * size, c};
  pose.keypoints[kRightWrist] = {x - size / 2, y + 2 * size, c};
  return pose;
}

SessionStream session_of(const std::vector<std::vector<PersonPose>>& frames) {
  SessionStream s;
  s.frame_width = 4000;
  s.frame_height = 4000;
  s.fps = 15.0;
  for (std::size_t f = 0; f < frames.size(); ++f)
    s.frames.push_back(Frame{static_cast<std::int64_t>(f), frames[f]});
  return s;
}

}  // namespace

TEST_CASE("keypoint_bbox covers qualifying joints only") {
  UpperBodyPose pose;
  pose.keypoints[0] = {10.0, 20.0, 0.9};
  const auto single = track::keypoint_bbox(pose, 0.3);
  REQUIRE(single.has_value());
  CHECK(*single == BBox{10.0, 20.0, 10.0, 20.0});

  pose.keypoints[1] = {0.0, 0.0, 1.0};
  pose.keypoints[2] = {4.0, 8.0, 1.0};
  pose.keypoints[0].c = 0.0;
  const auto box = track::keypoint_bbox(pose, 0.3);
  REQUIRE(box.has_value());
  CHECK(*box == BBox{0.0, 0.0, 4.0, 8.0});

  UpperBodyPose faint;
  for (auto& k : faint.keypoints) k = {5.0, 5.0, 0.1};
  CHECK_FALSE(track::keypoint_bbox(faint, 0.3).has_value());
}

TEST_CASE("iou handles identity, disjoint boxes, and hand-computed overlap") {
  const BBox a{0, 0, 2, 2};
  CHECK(track::iou(a, a) == doctest::Approx(1.0));
  CHECK(track::iou(BBox{0, 0, 1, 1}, BBox{2, 2, 3, 3}) == 0.0);
  // intersection 1, union 7
  CHECK(track::iou(BBox{0, 0, 2, 2}, BBox{1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0));
}

TEST_CASE("iou of degenerate boxes") {
  const BBox point{5, 5, 5, 5};
  CHECK(track::iou(point, point) == 1.0);
  CHECK(track::iou(point, BBox{6, 6, 6, 6}) == 0.0);
  CHECK(track::iou(point, BBox{0, 0, 10, 10}) == 0.0);  // zero-area intersection
}

TEST_CASE("two stationary persons produce two full tracks") {
  std::vector<std::vector<PersonPose>> frames(10);
  for (auto& f : frames) f = {person_at(500, 500), person_at(1500, 500)};
  const auto tracks = track::associate(session_of(frames), {});
  REQUIRE(tracks.size() == 2);
  CHECK(tracks[0].entries.size() == 10);
  CHECK(tracks[1].entries.size() == 10);
  CHECK(tracks[0].id == 0);
  CHECK(tracks[1].id == 1);
}

TEST_CASE("a 3-frame dropout within max_gap keeps one track") {
  std::vector<std::vector<PersonPose>> frames(10);
  for (std::size_t f = 0; f < frames.size(); ++f)
    if (f < 3 || f >= 6) frames[f] = {person_at(500, 500)};
  track::TrackerConfig config;
  config.max_gap = 5;
  const auto tracks = track::associate(session_of(frames), config);
  REQUIRE(tracks.size() == 1);
  CHECK(tracks[0].entries.size() == 7);
}

TEST_CASE("a 6-frame dropout beyond max_gap splits the track") {
  std::vector<std::vector<PersonPose>> frames(12);
  for (std::size_t f = 0; f < frames.size(); ++f)
    if (f < 3 || f >= 9) frames[f] = {person_at(500, 500)};
  track::TrackerConfig config;
  config.max_gap = 5;
  const auto tracks = track::associate(session_of(frames), config);
  REQUIRE(tracks.size() == 2);
  CHECK(tracks[0].entries.size() == 3);
  CHECK(tracks[1].entries.size() == 3);
}

TEST_CASE("empty session raises") {
  SessionStream s;
  CHECK_THROWS_AS(track::associate(s, {}), Error);
}

namespace {

SessionStream random_session(Rng& rng, int max_persons = 3, int max_frames = 8) {
  const int persons = rng.uniform_int(1, max_persons);
  const int frames = rng.uniform_int(2, max_frames);
  std::vector<std::vector<PersonPose>> grid(static_cast<std::size_t>(frames));
  std::vector<std::pair<double, double>> anchor(static_cast<std::size_t>(persons));
  for (auto& a : anchor) a = {rng.uniform(200.0, 3400.0), rng.uniform(200.0, 3000.0)};
  for (auto& frame : grid)
    for (int p = 0; p < persons; ++p) {
      if (rng.uniform() < 0.15) continue;  // occasional missed detection
      auto& [ax, ay] = anchor[static_cast<std::size_t>(p)];
      ax += rng.uniform(-8.0, 8.0);
      ay += rng.uniform(-8.0, 8.0);
      frame.push_back(person_at(ax, ay));
    }
  return session_of(grid);
}

std::size_t detection_count(const SessionStream& s) {
  std::size_t n = 0;
  for (const auto& f : s.frames) n += f.poses.size();
  return n;
}

/// (frame, quantized nose position) -> track id, for comparing assignments
/// up to track relabeling.
std::map<std::pair<std::int64_t, long>, int> assignment_key(
    const std::vector<track::Track>& tracks) {
  std::map<std::pair<std::int64_t, long>, int> out;
  for (const auto& t : tracks)
    for (const auto& [frame, pose] : t.entries)
      out[{frame, std::lround(pose.keypoints[0].x * 8) * 100000 +
                      std::lround(pose.keypoints[0].y * 8)}] = t.id;
  return out;
}

}  // namespace

TEST_CASE("every detection lands in exactly one track") {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const auto session = random_session(rng, 4, 12);
    const auto tracks = track::associate(session, {});
    std::size_t entries = 0;
    std::set<std::pair<int, std::int64_t>> seen;
    for (const auto& t : tracks) {
      entries += t.entries.size();
      std::int64_t prev = -1;
      for (const auto& [frame, pose] : t.entries) {
        CHECK(frame > prev);  // strictly increasing
        prev = frame;
        CHECK(seen.insert({t.id, frame}).second);  // one entry per frame per track
      }
    }
    CHECK(entries == detection_count(session));
  }
}

TEST_CASE("person order within a frame does not change assignments") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    auto session = random_session(rng);
    const auto baseline = assignment_key(track::associate(session, {}));
    auto shuffled = session;
    for (auto& frame : shuffled.frames) rng.shuffle(frame.poses);
    const auto permuted = assignment_key(track::associate(shuffled, {}));
    REQUIRE(baseline.size() == permuted.size());
    // same partition up to relabeling: the id mapping must be a bijection
    std::map<int, int> forward, backward;
    for (const auto& [key, id] : baseline) {
      const int other = permuted.at(key);
      if (forward.count(id)) {
        CHECK(forward[id] == other);
      } else {
        forward[id] = other;
      }
      if (backward.count(other)) {
        CHECK(backward[other] == id);
      } else {
        backward[other] = id;
      }
    }
  }
}

TEST_CASE("identical input streams give identical tracks") {
  Rng rng(7);
  const auto session = random_session(rng, 4, 10);
  const auto a = track::associate(session, {});
  const auto b = track::associate(session, {});
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].entries == b[i].entries);
  }
}

TEST_CASE("track JSONL round-trips") {
  Rng rng(11);
  const auto session = random_session(rng, 3, 6);
  track::TrackSet set;
  set.frame_width = session.frame_width;
  set.frame_height = session.frame_height;
  set.fps = session.fps;
  set.tracks = track::associate(session, {});

  std::ostringstream out;
  track::write_tracks(set, out);
  std::istringstream in(out.str());
  const auto round = track::read_tracks(in);
  REQUIRE(round.tracks.size() == set.tracks.size());
  for (std::size_t i = 0; i < set.tracks.size(); ++i) {
    CHECK(round.tracks[i].id == set.tracks[i].id);
    CHECK(round.tracks[i].entries == set.tracks[i].entries);
  }
}

TEST_CASE("greedy matching agrees with the exhaustive oracle on separated instances") {
  // Replays the tracker against per-frame optimal assignment on instances
  // whose confusable IoUs are separated by more than 0.2.
  track::TrackerConfig config;
  Rng rng(2024);
  int checked = 0;
  int attempts = 0;
  while (checked < 500 && attempts < 20000) {
    ++attempts;
    const auto session = random_session(rng);

    struct OracleTrack {
      BBox box;
      std::int64_t last_seen;
      std::vector<std::pair<std::int64_t, UpperBodyPose>> entries;
    };
    std::vector<OracleTrack> oracle_tracks;
    bool separated = true;
    for (const auto& frame : session.frames) {
      std::vector<std::size_t> active;
      for (std::size_t t = 0; t < oracle_tracks.size(); ++t)
        if (frame.index - oracle_tracks[t].last_seen - 1 <= config.max_gap) active.push_back(t);

      std::vector<BBox> active_boxes;
      for (std::size_t t : active) active_boxes.push_back(oracle_tracks[t].box);
      std::vector<UpperBodyPose> dets;
      std::vector<BBox> det_boxes;
      for (const auto& pose : frame.poses) {
        const auto upper = select_upper_body(pose);
        if (auto box = track::keypoint_bbox(upper, config.conf_threshold)) {
          dets.push_back(upper);
          det_boxes.push_back(*box);
        }
      }

      std::vector<double> overlaps;
      for (const auto& ab : active_boxes)
        for (const auto& db : det_boxes) {
          const double ov = track::iou(ab, db);
          if (ov >= config.iou_threshold) overlaps.push_back(ov);
        }
      std::sort(overlaps.begin(), overlaps.end());
      for (std::size_t k = 1; k < overlaps.size() && separated; ++k)
        if (overlaps[k] != overlaps[k - 1] && overlaps[k] - overlaps[k - 1] <= 0.2)
          separated = false;
      if (!separated) break;

      const auto assignment =
          oracles::optimal_assignment(active_boxes, det_boxes, config.iou_threshold);
      for (std::size_t d = 0; d < dets.size(); ++d) {
        if (assignment[d] >= 0) {
          OracleTrack& t = oracle_tracks[active[static_cast<std::size_t>(assignment[d])]];
          t.entries.emplace_back(frame.index, dets[d]);
          t.box = det_boxes[d];
          t.last_seen = frame.index;
        } else {
          oracle_tracks.push_back(OracleTrack{det_boxes[d], frame.index, {{frame.index, dets[d]}}});
        }
      }
    }
    if (!separated) continue;
    ++checked;

    const auto greedy = track::associate(session, config);
    REQUIRE(greedy.size() == oracle_tracks.size());
    for (std::size_t t = 0; t < greedy.size(); ++t)
      CHECK(greedy[t].entries == oracle_tracks[t].entries);
  }
  CHECK(checked == 500);
}
