#include "engage/ingest.hpp"

#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "engage/errors.hpp"

namespace engage::ingest {

namespace {

using nlohmann::json;

[[noreturn]] void fail(Errc code, std::size_t line_no, const std::string& what) {
  throw Error(code, "line " + std::to_string(line_no) + ": " + what, line_no);
}

Keypoint parse_keypoint(const json& kp, std::size_t line_no, std::size_t joint, int width,
                        int height) {
  if (!kp.is_array() || kp.size() != 3 || !kp[0].is_number() || !kp[1].is_number() ||
      !kp[2].is_number())
    fail(Errc::malformed_line, line_no, "keypoint " + std::to_string(joint) + " is not [x,y,c]");
  Keypoint k{kp[0].get<double>(), kp[1].get<double>(), kp[2].get<double>()};
  if (!(k.c >= 0.0 && k.c <= 1.0))
    fail(Errc::confidence_out_of_range, line_no,
         "joint " + std::to_string(joint) + " confidence " + std::to_string(k.c) +
             " outside [0,1]");
  if (k.c == 0.0) return Keypoint{};  // canonical missing-joint encoding
  if (!(k.x >= 0.0 && k.x < width) || !(k.y >= 0.0 && k.y < height))
    fail(Errc::malformed_line, line_no,
         "joint " + std::to_string(joint) + " at (" + std::to_string(k.x) + "," +
             std::to_string(k.y) + ") outside frame bounds");
  return k;
}

}  // namespace

SessionStream parse_session(std::istream& in) {
  SessionStream session;
  std::string line;
  std::size_t line_no = 0;
  bool have_meta = false;
  bool have_frame = false;
  std::int64_t prev_index = std::numeric_limits<std::int64_t>::min();

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object())
      fail(Errc::malformed_line, line_no, "not a JSON object");

    if (!have_meta) {
      if (!obj.contains("meta")) fail(Errc::malformed_line, line_no, "first line must carry meta");
      const json& meta = obj["meta"];
      if (!meta.is_object() || !meta.contains("width") || !meta.contains("height") ||
          !meta.contains("fps"))
        fail(Errc::malformed_line, line_no, "meta requires width, height, fps");
      session.frame_width = meta["width"].get<int>();
      session.frame_height = meta["height"].get<int>();
      session.fps = meta["fps"].get<double>();
      if (session.frame_width <= 0 || session.frame_height <= 0)
        fail(Errc::malformed_line, line_no, "frame dimensions must be positive");
      if (!(session.fps > 0.0)) fail(Errc::malformed_line, line_no, "fps must be > 0");
      have_meta = true;
      continue;
    }

    if (!obj.contains("frame") || !obj["frame"].is_number_integer())
      fail(Errc::malformed_line, line_no, "missing integer frame index");
    Frame frame;
    frame.index = obj["frame"].get<std::int64_t>();
    if (frame.index <= prev_index)
      fail(Errc::non_monotonic_frame_index, line_no,
           "frame index " + std::to_string(frame.index) + " not greater than previous " +
               std::to_string(prev_index));
    prev_index = frame.index;

    const json& persons = obj.value("persons", json::array());
    if (!persons.is_array()) fail(Errc::malformed_line, line_no, "persons must be an array");
    for (const json& person : persons) {
      if (!person.is_object() || !person.contains("kp") || !person["kp"].is_array() ||
          person["kp"].size() != kCocoJointCount)
        fail(Errc::malformed_line, line_no, "each person requires 17 keypoints under \"kp\"");
      PersonPose pose;
      bool any_visible = false;
      for (std::size_t j = 0; j < kCocoJointCount; ++j) {
        pose.keypoints[j] =
            parse_keypoint(person["kp"][j], line_no, j, session.frame_width, session.frame_height);
        any_visible = any_visible || pose.keypoints[j].visible();
      }
      if (!any_visible)
        fail(Errc::malformed_line, line_no, "pose with no detected joint (all confidences 0)");
      frame.poses.push_back(pose);
    }
    session.frames.push_back(std::move(frame));
    have_frame = true;
  }

  if (!have_meta || !have_frame)
    throw Error(Errc::empty_session, "session carries no frames", line_no);
  return session;
}

SessionStream parse_session_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
  return parse_session(in);
}

void serialize_session(const SessionStream& session, std::ostream& out) {
  json meta = {{"meta",
                {{"width", session.frame_width},
                 {"height", session.frame_height},
                 {"fps", session.fps}}}};
  out << meta.dump() << '\n';
  for (const Frame& frame : session.frames) {
    json persons = json::array();
    for (const PersonPose& pose : frame.poses) {
      json kp = json::array();
      for (const Keypoint& k : pose.keypoints) kp.push_back(json::array({k.x, k.y, k.c}));
      persons.push_back({{"kp", std::move(kp)}});
    }
    json line = {{"frame", frame.index}, {"persons", std::move(persons)}};
    out << line.dump() << '\n';
  }
}

std::string serialize_session(const SessionStream& session) {
  std::ostringstream out;
  serialize_session(session, out);
  return out.str();
}

void write_session_file(const SessionStream& session, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
  serialize_session(session, out);
}

}  // namespace engage::ingest
