#include "engage/features.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "engage/errors.hpp"

namespace engage::features {

namespace {

constexpr std::array<std::string_view, kActionCount> kActionNames{
    "writing",        "raising_hand", "reading",       "discussing",    "typing_keyboard",
    "playing_phone",  "wiping_face",  "yawning",       "checking_time", "fiddling_hair",
    "drinking",       "eating",       "crossing_arms_or_supporting_head",
};

}  // namespace

std::string_view action_name(ActionLabel label) {
  return kActionNames[static_cast<std::size_t>(label)];
}

std::optional<ActionLabel> action_from_name(std::string_view name) {
  for (std::size_t k = 0; k < kActionNames.size(); ++k)
    if (kActionNames[k] == name) return static_cast<ActionLabel>(k);
  return std::nullopt;
}

bool is_engaged_action(ActionLabel label) {
  switch (label) {
    case ActionLabel::writing:
    case ActionLabel::raising_hand:
    case ActionLabel::reading:
    case ActionLabel::discussing:
    case ActionLabel::typing_keyboard:
      return true;
    default:
      return false;
  }
}

bool is_disengaged_action(ActionLabel label) {
  return !is_engaged_action(label) && label != ActionLabel::crossing_arms_or_supporting_head;
}

std::vector<Window> window_segments(const track::Track& track, double window_seconds,
                                    double subclip_seconds, double fps) {
  if (track.entries.empty()) throw Error(Errc::empty_track, "track has no entries");
  if (!(fps > 0.0)) throw Error(Errc::bad_config, "fps must be > 0");

  const std::int64_t window_frames = std::llround(window_seconds * fps);
  const std::int64_t subclip_frames = std::llround(subclip_seconds * fps);
  if (window_frames < 1 || subclip_frames < 1)
    throw Error(Errc::bad_config, "window and sub-clip must span at least one frame");

  const std::int64_t first = track.first_frame();
  const std::int64_t total = track.last_frame() - first + 1;

  // Trailing partials survive when they cover at least half the nominal span.
  const std::int64_t full_windows = total / window_frames;
  const std::int64_t window_rem = total - full_windows * window_frames;
  const std::int64_t window_count = full_windows + (2 * window_rem >= window_frames ? 1 : 0);

  std::vector<Window> windows;
  std::size_t cursor = 0;  // index into track.entries, which are frame-sorted
  for (std::int64_t w = 0; w < window_count; ++w) {
    Window window;
    window.id = static_cast<int>(w);
    window.begin_frame = first + w * window_frames;
    window.end_frame = std::min(first + (w + 1) * window_frames, first + total);

    const std::int64_t span = window.end_frame - window.begin_frame;
    const std::int64_t full_clips = span / subclip_frames;
    const std::int64_t clip_rem = span - full_clips * subclip_frames;
    const std::int64_t clip_count = full_clips + (2 * clip_rem >= subclip_frames ? 1 : 0);

    for (std::int64_t c = 0; c < clip_count; ++c) {
      SubClip clip;
      clip.begin_frame = window.begin_frame + c * subclip_frames;
      clip.end_frame = std::min(clip.begin_frame + subclip_frames, window.end_frame);
      while (cursor < track.entries.size() && track.entries[cursor].first < clip.begin_frame)
        ++cursor;
      std::size_t probe = cursor;
      while (probe < track.entries.size() && track.entries[probe].first < clip.end_frame)
        clip.entries.push_back(track.entries[probe++]);
      cursor = probe;
      window.subclips.push_back(std::move(clip));
    }
    windows.push_back(std::move(window));
  }
  return windows;
}

ActionHistogram histogram_of_actions(const std::vector<ActionLabel>& predictions) {
  if (predictions.empty()) throw Error(Errc::empty_predictions, "no sub-clip predictions");
  ActionHistogram hist;
  for (ActionLabel label : predictions) hist.freq[static_cast<std::size_t>(label)] += 1.0;
  for (double& f : hist.freq) f /= static_cast<double>(predictions.size());
  return hist;
}

EngagementFeature build_feature(const ActionHistogram& hist, double gaze_freq) {
  EngagementFeature feature;
  for (std::size_t k = 0; k < static_cast<std::size_t>(kActionCount); ++k)
    feature.values[k] = hist.freq[k];
  feature.values[kActionCount] = gaze_freq;
  return feature;
}

namespace {

std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

void write_features_csv(const std::vector<FeatureRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
  out << "track_id,window_id";
  for (int k = 0; k < kActionCount; ++k) out << ",f" << k;
  out << ",gaze,label\n";
  for (const FeatureRow& row : rows) {
    out << row.track_id << ',' << row.window_id;
    for (double v : row.feature.values) out << ',' << format_double(v);
    out << ',' << (row.engaged ? (*row.engaged ? "engaged" : "disengaged") : "") << '\n';
  }
}

std::vector<FeatureRow> read_features_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
  std::vector<FeatureRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;  // header
    std::vector<std::string> fields;
    std::stringstream s(line);
    std::string field;
    while (std::getline(s, field, ',')) fields.push_back(field);
    if (line.back() == ',') fields.push_back("");
    if (fields.size() != 2 + kActionCount + 1 + 1)
      throw Error(Errc::malformed_line, "line " + std::to_string(line_no) + ": expected " +
                      std::to_string(2 + kActionCount + 2) + " fields",
                  line_no);
    FeatureRow row;
    row.track_id = std::stoi(fields[0]);
    row.window_id = std::stoi(fields[1]);
    for (std::size_t k = 0; k < static_cast<std::size_t>(kActionCount) + 1; ++k)
      row.feature.values[k] = std::stod(fields[2 + k]);
    const std::string& label = fields.back();
    if (label == "engaged")
      row.engaged = true;
    else if (label == "disengaged")
      row.engaged = false;
    else if (!label.empty())
      throw Error(Errc::malformed_line, "line " + std::to_string(line_no) + ": unknown label '" +
                      label + "'",
                  line_no);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace engage::features
