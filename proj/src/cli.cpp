#include "engage/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <omp.h>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "engage/errors.hpp"
#include "engage/features.hpp"
#include "engage/gaze.hpp"
#include "engage/heatmap.hpp"
#include "engage/ingest.hpp"
#include "engage/metrics.hpp"
#include "engage/net3d.hpp"
#include "engage/rng.hpp"
#include "engage/svm.hpp"
#include "engage/synth.hpp"
#include "engage/tracker.hpp"

namespace engage::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("ENGAGE_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return omp_get_max_threads();
}

// ---------------------------------------------------------------------------
// clip datasets

fs::path clips_path(const fs::path& data) {
  return fs::is_directory(data) ? data / "clips.jsonl" : data;
}

/// Stratified 3:1 split per class, ordered by a seeded stable hash of clip
/// ids so both train and eval commands reproduce it independently.
struct ClipSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

ClipSplit stratified_split(const synth::ClipSet& set, std::uint64_t split_seed) {
  std::map<features::ActionLabel, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < set.clips.size(); ++i)
    by_class[set.clips[i].label].push_back(i);

  ClipSplit split;
  for (auto& [label, indices] : by_class) {
    std::sort(indices.begin(), indices.end(), [&](std::size_t a, std::size_t b) {
      const auto ha = stable_hash64(set.clips[a].id + ":" + std::to_string(split_seed));
      const auto hb = stable_hash64(set.clips[b].id + ":" + std::to_string(split_seed));
      if (ha != hb) return ha < hb;
      return set.clips[a].id < set.clips[b].id;
    });
    const std::size_t train_count = (indices.size() * 3 + 3) / 4;  // ceil(3n/4)
    for (std::size_t k = 0; k < indices.size(); ++k)
      (k < train_count ? split.train : split.test).push_back(indices[k]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

/// Lazily renders clip volumes so the corpus never sits in memory twice.
class ClipVolumeDataset final : public net3d::VolumeDataset {
 public:
  ClipVolumeDataset(const synth::ClipSet& set, std::vector<std::size_t> indices,
                    const heatmap::SamplerConfig& sampler)
      : set_(set), indices_(std::move(indices)), sampler_(sampler) {}

  std::size_t size() const override { return indices_.size(); }
  int label(std::size_t i) const override {
    return static_cast<int>(set_.clips[indices_[i]].label);
  }
  net3d::Tensor<float> volume(std::size_t i) const override {
    return net3d::to_tensor(heatmap::build_volume(set_.clips[indices_[i]].poses, sampler_));
  }

 private:
  const synth::ClipSet& set_;
  std::vector<std::size_t> indices_;
  heatmap::SamplerConfig sampler_;
};

std::vector<int> predict_clips(const net3d::Model<float>& model, const synth::ClipSet& set,
                               const std::vector<std::size_t>& indices,
                               const heatmap::SamplerConfig& sampler, int threads) {
  std::vector<int> predictions(indices.size(), -1);
#pragma omp parallel num_threads(threads)
  {
    net3d::Workspace<float> ws;
#pragma omp for schedule(dynamic, 1)
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto volume =
          net3d::to_tensor(heatmap::build_volume(set.clips[indices[i]].poses, sampler));
      const auto logits_f = net3d::forward(model, volume, ws);
      int best = 0;
      for (std::size_t k = 1; k < logits_f.size(); ++k)
        if (logits_f[k] > logits_f[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
      predictions[i] = best;
    }
  }
  return predictions;
}

json action_metrics_report(const metrics::Metrics& m, const std::string& evaluated_on) {
  json per_class;
  for (int k = 0; k < features::kActionCount; ++k) {
    const auto& c = m.per_class[static_cast<std::size_t>(k)];
    per_class[std::string(features::action_name(static_cast<features::ActionLabel>(k)))] = {
        {"recall", c.recall}, {"precision", c.precision}, {"f1", c.f1}, {"support", c.support}};
  }
  return json{{"top1_accuracy", m.accuracy},
              {"mean_class_accuracy", m.mean_class_accuracy},
              {"evaluated_on", evaluated_on},
              {"samples", m.weighted.support},
              {"per_class", std::move(per_class)},
              {"confusion", m.confusion}};
}

json engagement_metrics_report(const metrics::Metrics& m) {
  const auto& dis = m.per_class[0];
  const auto& eng = m.per_class[1];
  return json{{"classes",
               {{"disengaged",
                 {{"recall", dis.recall},
                  {"precision", dis.precision},
                  {"f1", dis.f1},
                  {"support", dis.support}}},
                {"engaged",
                 {{"recall", eng.recall},
                  {"precision", eng.precision},
                  {"f1", eng.f1},
                  {"support", eng.support}}}}},
              {"weighted_avg",
               {{"recall", m.weighted.recall},
                {"precision", m.weighted.precision},
                {"f1", m.weighted.f1}}},
              {"accuracy", m.accuracy},
              {"samples", m.weighted.support}};
}

void write_json_file(const json& obj, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
  out << obj.dump(2) << '\n';
}

std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// feature extraction shared by `features` and `pipeline`

struct FeatureExtraction {
  std::vector<features::FeatureRow> rows;
  std::size_t skipped_subclips = 0;
};

FeatureExtraction extract_features(const track::TrackSet& tracks, const net3d::Model<float>& model,
                                   const gaze::GazeConfig& gaze_config,
                                   const synth::SessionTruth* truth, double window_seconds,
                                   double subclip_seconds,
                                   const heatmap::SamplerConfig& sampler, int threads) {
  std::vector<int> student_of;
  if (truth != nullptr) student_of = synth::match_tracks_to_students(tracks.tracks, *truth);

  FeatureExtraction out;
  std::vector<std::vector<features::FeatureRow>> per_track(tracks.tracks.size());
  std::vector<std::size_t> skipped(tracks.tracks.size(), 0);

#pragma omp parallel num_threads(threads)
  {
    net3d::Workspace<float> ws;
#pragma omp for schedule(dynamic, 1)
    for (std::size_t t = 0; t < tracks.tracks.size(); ++t) {
      const track::Track& track = tracks.tracks[t];
      const auto windows =
          features::window_segments(track, window_seconds, subclip_seconds, tracks.fps);
      for (const features::Window& window : windows) {
        std::vector<features::ActionLabel> predictions;
        std::vector<UpperBodyPose> window_poses;
        for (const features::SubClip& clip : window.subclips) {
          heatmap::PoseSequence poses;
          poses.reserve(clip.entries.size());
          for (const auto& [frame, pose] : clip.entries) {
            poses.push_back(pose);
            window_poses.push_back(pose);
          }
          if (poses.empty()) {
            ++skipped[t];
            continue;
          }
          try {
            const auto volume = net3d::to_tensor(heatmap::build_volume(poses, sampler));
            const auto logits = net3d::forward(model, volume, ws);
            int best = 0;
            for (std::size_t k = 1; k < logits.size(); ++k)
              if (logits[k] > logits[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
            predictions.push_back(static_cast<features::ActionLabel>(best));
          } catch (const Error& e) {
            if (e.code() != Errc::all_joints_missing) throw;
            ++skipped[t];
          }
        }
        if (predictions.empty() || window_poses.empty()) continue;

        features::FeatureRow row;
        row.track_id = track.id;
        row.window_id = window.id;
        const auto hist = features::histogram_of_actions(predictions);
        const auto freq = gaze::gaze_at_target_frequency(window_poses, gaze_config);
        row.feature = features::build_feature(hist, freq.value);
        if (truth != nullptr && student_of[t] >= 0) {
          for (const synth::TruthStudent& student : truth->students) {
            if (student.id != student_of[t]) continue;
            for (const synth::TruthWindow& tw : student.windows)
              if (tw.id == window.id) row.engaged = tw.engaged;
            break;
          }
        }
        per_track[t].push_back(std::move(row));
      }
    }
  }
  for (std::size_t t = 0; t < per_track.size(); ++t) {
    out.skipped_subclips += skipped[t];
    for (auto& row : per_track[t]) out.rows.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// svm glue

struct LabeledFeatures {
  std::vector<std::vector<double>> x;
  std::vector<int> y;  // +1 engaged, -1 disengaged
};

LabeledFeatures labeled_features(const std::vector<features::FeatureRow>& rows) {
  LabeledFeatures out;
  for (const auto& row : rows) {
    if (!row.engaged) continue;
    out.x.emplace_back(row.feature.values.begin(), row.feature.values.end());
    out.y.push_back(*row.engaged ? 1 : -1);
  }
  return out;
}

metrics::Metrics engagement_metrics(const svm::SvmModel& model, const LabeledFeatures& data) {
  std::vector<int> predictions, labels;
  for (std::size_t i = 0; i < data.x.size(); ++i) {
    predictions.push_back(svm::predict(model, data.x[i]) == 1 ? 1 : 0);
    labels.push_back(data.y[i] == 1 ? 1 : 0);
  }
  return metrics::compute_metrics(predictions, labels, 2);  // 0 disengaged, 1 engaged
}

void write_timeline_csv(const metrics::Timeline& timeline, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
  out << "window,mean_predicted,mean_reference\n";
  for (const auto& point : timeline.points) {
    out << point.window_id << ',' << format_double(point.mean_predicted) << ',';
    if (point.mean_reference) out << format_double(*point.mean_reference);
    out << '\n';
  }
}

metrics::Timeline timeline_from_rows(const std::vector<features::FeatureRow>& rows,
                                     const svm::SvmModel& model) {
  std::vector<metrics::EngagementRecord> records;
  for (const auto& row : rows) {
    metrics::EngagementRecord record;
    record.track_id = row.track_id;
    record.window_id = row.window_id;
    std::vector<double> x(row.feature.values.begin(), row.feature.values.end());
    record.predicted = svm::predict(model, x) == 1 ? 1 : 0;
    if (row.engaged) record.reference = *row.engaged ? 1 : 0;
    records.push_back(record);
  }
  return metrics::mean_engagement_timeline(records);
}

// ---------------------------------------------------------------------------
// flat key = value config with [sections]

class IniConfig {
 public:
  static IniConfig parse_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_failure, "cannot open config " + path.string());
    IniConfig config;
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto comment = line.find('#');
      if (comment != std::string::npos) line.erase(comment);
      const auto strip = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = strip(line);
      if (line.empty()) continue;
      if (line.front() == '[' && line.back() == ']') {
        section = strip(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw Error(Errc::bad_config, "config line " + std::to_string(line_no) +
                                          ": expected key = value");
      config.values_[section + "." + strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
    }
    return config;
  }

  std::string get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }
  double get(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stod(it->second);
  }
  int get(const std::string& key, int fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stoi(it->second);
  }
  std::uint64_t get(const std::string& key, std::uint64_t fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stoull(it->second);
  }

 private:
  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// subcommand bodies

struct SynthArgs {
  std::string mode = "session";
  std::string out;
  std::string truth;
  std::uint64_t seed = 7;
  int students = 10;
  double minutes = 8.0;
  double seconds = 30.0;  // calibration mode
  int clips_per_class = 40;
  double clip_seconds = 10.0;
  double fps = 15.0;
  double noise_sigma = 1.5;
  double engaged_ratio = 0.8;
  double drift = 0.0;
};

int cmd_synth(const SynthArgs& args) {
  synth::SynthConfig config;
  config.seed = args.seed;
  config.students = args.students;
  config.duration_seconds = args.minutes * 60.0;
  config.fps = args.fps;
  config.noise_sigma = args.noise_sigma;
  config.engagement_script.base_ratio = args.engaged_ratio;
  config.engagement_script.drift_amplitude = args.drift;

  if (args.mode == "clips") {
    synth::ClipSetConfig clip_config;
    clip_config.seed = args.seed;
    clip_config.clips_per_class = args.clips_per_class;
    clip_config.clip_seconds = args.clip_seconds;
    clip_config.fps = args.fps;
    clip_config.noise_sigma = args.noise_sigma;
    const auto set = synth::generate_clip_set(clip_config);
    synth::write_clips_file(set, args.out);
    std::cout << "wrote " << set.clips.size() << " clips to " << args.out << '\n';
    return 0;
  }
  if (args.mode == "calibration") {
    const auto stream = synth::generate_calibration_session(config, args.seconds);
    ingest::write_session_file(stream, args.out);
    std::cout << "wrote calibration session (" << stream.frames.size() << " frames) to "
              << args.out << '\n';
    return 0;
  }
  if (args.mode != "session") throw Error(Errc::bad_config, "unknown synth mode " + args.mode);

  const auto session = synth::generate_session(config);
  ingest::write_session_file(session.stream, args.out);
  if (!args.truth.empty()) synth::write_truth_file(session.truth, args.truth);
  std::cout << "wrote session (" << session.stream.frames.size() << " frames, " << args.students
            << " students) to " << args.out << '\n';
  return 0;
}

int cmd_ingest(const std::string& input, bool validate_only, const std::string& out) {
  const auto session = ingest::parse_session_file(input);
  std::size_t poses = 0;
  for (const auto& frame : session.frames) poses += frame.poses.size();
  std::cout << "valid session: " << session.frames.size() << " frames, " << poses
            << " poses, " << session.frame_width << "x" << session.frame_height << " @ "
            << session.fps << " fps\n";
  if (!validate_only && !out.empty()) ingest::write_session_file(session, out);
  return 0;
}

int cmd_track(const std::string& input, double iou, std::int64_t max_gap, double conf,
              const std::string& out) {
  const auto session = ingest::parse_session_file(input);
  track::TrackerConfig config;
  config.iou_threshold = iou;
  config.max_gap = max_gap;
  config.conf_threshold = conf;
  track::TrackSet set;
  set.frame_width = session.frame_width;
  set.frame_height = session.frame_height;
  set.fps = session.fps;
  set.tracks = track::associate(session, config);
  track::write_tracks_file(set, out);
  std::cout << "wrote " << set.tracks.size() << " tracks to " << out << '\n';
  return 0;
}

int cmd_volumes(const std::string& tracks_path, const std::string& out_dir, double window_seconds,
                double subclip_seconds, const heatmap::SamplerConfig& sampler) {
  const auto tracks = track::read_tracks_file(tracks_path);
  fs::create_directories(out_dir);
  json index = json::array();
  std::size_t written = 0;
  for (const track::Track& track : tracks.tracks) {
    const auto windows =
        features::window_segments(track, window_seconds, subclip_seconds, tracks.fps);
    for (const features::Window& window : windows)
      for (std::size_t c = 0; c < window.subclips.size(); ++c) {
        const features::SubClip& clip = window.subclips[c];
        heatmap::PoseSequence poses;
        for (const auto& [frame, pose] : clip.entries) poses.push_back(pose);
        if (poses.empty()) continue;
        char name[64];
        std::snprintf(name, sizeof(name), "t%03d_w%02d_c%02d.egkv", track.id, window.id,
                      static_cast<int>(c));
        try {
          heatmap::save_volume_file(heatmap::build_volume(poses, sampler),
                                    fs::path(out_dir) / name);
        } catch (const Error& e) {
          if (e.code() != Errc::all_joints_missing) throw;
          continue;
        }
        index.push_back({{"file", name},
                         {"track", track.id},
                         {"window", window.id},
                         {"subclip", c},
                         {"frames", clip.entries.size()}});
        ++written;
      }
  }
  write_json_file(index, fs::path(out_dir) / "index.json");
  std::cout << "wrote " << written << " volumes to " << out_dir << '\n';
  return 0;
}

struct TrainActionsArgs {
  std::string data;
  std::string out;
  std::string loss_log;
  net3d::TrainConfig train;
  int freeze = 0;
  std::uint64_t split_seed = 7;
};

int cmd_train_actions(const TrainActionsArgs& args) {
  const auto set = synth::read_clips_file(clips_path(args.data));
  if (set.clips.empty()) throw Error(Errc::empty_dataset, "clip file is empty");
  const auto split = stratified_split(set, args.split_seed);

  std::vector<int> train_labels;
  for (std::size_t i : split.train) train_labels.push_back(static_cast<int>(set.clips[i].label));

  net3d::ModelConfig model_config;
  model_config.freeze_prefix = args.freeze;
  net3d::TrainConfig train_config = args.train;
  train_config.threads = resolve_threads(train_config.threads);

  const heatmap::SamplerConfig sampler;
  ClipVolumeDataset dataset(set, split.train, sampler);
  const auto weights = net3d::inverse_frequency_weights(train_labels, model_config.num_classes);

  const auto result = net3d::train(dataset, model_config, train_config, weights);
  net3d::save_checkpoint(result.model, args.out);

  if (!args.loss_log.empty()) {
    std::ofstream log(args.loss_log);
    log << "epoch,loss\n";
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
      log << e << ',' << format_double(result.epoch_loss[e]) << '\n';
  }
  std::cout << "trained on " << split.train.size() << " clips (" << split.test.size()
            << " held out), final epoch loss " << result.epoch_loss.back() << ", model at "
            << args.out << '\n';
  return 0;
}

int cmd_eval_actions(const std::string& data, const std::string& model_path,
                     std::uint64_t split_seed, const std::string& on, const std::string& report,
                     int threads) {
  const auto set = synth::read_clips_file(clips_path(data));
  const auto split = stratified_split(set, split_seed);
  std::vector<std::size_t> indices;
  if (on == "train")
    indices = split.train;
  else if (on == "all") {
    indices = split.train;
    indices.insert(indices.end(), split.test.begin(), split.test.end());
    std::sort(indices.begin(), indices.end());
  } else
    indices = split.test;
  if (indices.empty()) throw Error(Errc::empty_dataset, "nothing to evaluate");

  const auto model = net3d::load_checkpoint(model_path);
  const heatmap::SamplerConfig sampler;
  const auto predictions = predict_clips(model, set, indices, sampler, resolve_threads(threads));
  std::vector<int> labels;
  for (std::size_t i : indices) labels.push_back(static_cast<int>(set.clips[i].label));

  const auto m = metrics::compute_metrics(predictions, labels, features::kActionCount);
  write_json_file(action_metrics_report(m, on), report);
  std::cout << "top1_accuracy " << m.accuracy << ", mean_class_accuracy " << m.mean_class_accuracy
            << " on " << indices.size() << " clips (" << on << ")\n";
  return 0;
}

int cmd_gaze_calibrate(const std::string& frames_path, const std::string& out, double tolerance,
                       double min_conf) {
  const auto session = ingest::parse_session_file(frames_path);
  std::vector<UpperBodyPose> poses;
  for (const auto& frame : session.frames)
    for (const auto& person : frame.poses) poses.push_back(select_upper_body(person));
  const auto mean = gaze::mean_yaw_proxy(poses, min_conf);
  if (!mean)
    throw Error(Errc::all_joints_missing, "no pose with a defined yaw proxy in " + frames_path);
  gaze::GazeConfig config;
  config.target_yaw = *mean;
  config.tolerance = tolerance;
  config.min_visible_conf = min_conf;
  gaze::save_gaze_config(config, out);
  std::cout << "target_yaw " << config.target_yaw << " from " << poses.size() << " poses, wrote "
            << out << '\n';
  return 0;
}

struct FeaturesArgs {
  std::string tracks;
  std::string model;
  std::string gaze;
  std::string truth;
  std::string out;
  double window_seconds = 120.0;
  double subclip_seconds = 10.0;
  int threads = 0;
};

int cmd_features(const FeaturesArgs& args) {
  const auto tracks = track::read_tracks_file(args.tracks);
  const auto model = net3d::load_checkpoint(args.model);
  const auto gaze_config = gaze::load_gaze_config(args.gaze);
  std::optional<synth::SessionTruth> truth;
  if (!args.truth.empty()) truth = synth::read_truth_file(args.truth);

  const heatmap::SamplerConfig sampler;
  const auto extraction =
      extract_features(tracks, model, gaze_config, truth ? &*truth : nullptr, args.window_seconds,
                       args.subclip_seconds, sampler, resolve_threads(args.threads));
  features::write_features_csv(extraction.rows, args.out);
  std::cout << "wrote " << extraction.rows.size() << " feature rows to " << args.out;
  if (extraction.skipped_subclips > 0)
    std::cout << " (" << extraction.skipped_subclips << " empty sub-clips skipped)";
  std::cout << '\n';
  return 0;
}

struct TrainEngagementArgs {
  std::vector<std::string> feature_files;
  std::string out;
  std::string kernel = "linear";
  double gamma = 0.5;
  double c = 1.0;
  bool no_class_weighting = false;
  double tol = 1e-3;
};

int cmd_train_engagement(const TrainEngagementArgs& args) {
  std::vector<features::FeatureRow> rows;
  for (const auto& file : args.feature_files) {
    const auto part = features::read_features_csv(file);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const auto data = labeled_features(rows);
  if (data.x.empty()) throw Error(Errc::empty_dataset, "no labeled feature rows");

  svm::SvmConfig config;
  config.c = args.c;
  config.tol = args.tol;
  config.class_weighting = !args.no_class_weighting;
  if (args.kernel == "rbf") {
    config.kernel.type = svm::KernelType::rbf;
    config.kernel.gamma = args.gamma;
  } else if (args.kernel != "linear") {
    throw Error(Errc::bad_config, "unknown kernel " + args.kernel);
  }

  svm::TrainDiagnostics diagnostics;
  const auto model = svm::train_svm(data.x, data.y, config, &diagnostics);
  svm::save_svm(model, args.out);
  std::size_t positive = 0;
  for (int y : data.y) positive += y == 1 ? 1 : 0;
  std::cout << "trained on " << data.x.size() << " windows (" << positive << " engaged, "
            << data.x.size() - positive << " disengaged), " << diagnostics.iterations
            << " SMO updates, wrote " << args.out << '\n';
  return 0;
}

int cmd_eval_engagement(const std::string& features_path, const std::string& model_path,
                        const std::string& report) {
  const auto rows = features::read_features_csv(features_path);
  const auto data = labeled_features(rows);
  if (data.x.empty()) throw Error(Errc::empty_dataset, "no labeled feature rows");
  const auto model = svm::load_svm(model_path);
  const auto m = engagement_metrics(model, data);
  write_json_file(engagement_metrics_report(m), report);
  std::cout << "weighted f1 " << m.weighted.f1 << ", accuracy " << m.accuracy << " on "
            << data.x.size() << " windows\n";
  return 0;
}

int cmd_timeline(const std::string& features_path, const std::string& model_path,
                 const std::string& out, const std::string& report) {
  const auto rows = features::read_features_csv(features_path);
  if (rows.empty()) throw Error(Errc::empty_input, "no feature rows");
  const auto model = svm::load_svm(model_path);
  const auto timeline = timeline_from_rows(rows, model);
  write_timeline_csv(timeline, out);
  if (!report.empty()) {
    json obj = {{"windows", timeline.points.size()}};
    if (timeline.correlation) obj["pearson"] = *timeline.correlation;
    write_json_file(obj, report);
  }
  std::cout << "wrote timeline (" << timeline.points.size() << " windows";
  if (timeline.correlation) std::cout << ", pearson " << *timeline.correlation;
  std::cout << ") to " << out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// pipeline

int cmd_pipeline(const std::string& config_path, const std::string& workdir_flag,
                 std::optional<std::uint64_t> seed_flag, int threads_flag) {
  const auto config = IniConfig::parse_file(config_path);
  const fs::path workdir = workdir_flag.empty() ? config.get("pipeline.workdir", std::string("out"))
                                                : workdir_flag;
  fs::create_directories(workdir);
  const std::uint64_t seed = seed_flag.value_or(config.get("synth.seed", std::uint64_t{7}));
  const int threads = resolve_threads(threads_flag);

  // --- synthetic corpus
  synth::SynthConfig base;
  base.students = config.get("synth.students", 10);
  base.duration_seconds = config.get("synth.session_minutes", 20.0) * 60.0;
  base.fps = config.get("synth.fps", 15.0);
  base.noise_sigma = config.get("synth.noise_sigma", 1.5);
  base.engagement_script.base_ratio = config.get("synth.engaged_ratio", 0.8);
  base.engagement_script.drift_amplitude = config.get("synth.drift", 0.15);
  base.engagement_script.drift_period_windows = config.get("synth.drift_period", 8.0);
  const int sessions = config.get("synth.sessions", 3);
  if (sessions < 2) throw Error(Errc::bad_config, "pipeline needs at least 2 sessions");

  synth::ClipSetConfig clip_config;
  clip_config.seed = splitmix64(seed ^ 0xc11b5ULL);
  clip_config.clips_per_class = config.get("synth.clips_per_class", 40);
  clip_config.clip_seconds = config.get("synth.clip_seconds", 10.0);
  clip_config.fps = base.fps;
  clip_config.noise_sigma = base.noise_sigma;

  const fs::path clips_file = workdir / "clips.jsonl";
  synth::write_clips_file(synth::generate_clip_set(clip_config), clips_file);

  std::vector<fs::path> session_files, truth_files;
  for (int s = 0; s < sessions; ++s) {
    synth::SynthConfig session_config = base;
    session_config.seed = splitmix64(seed ^ (0x5e550ULL + static_cast<std::uint64_t>(s)));
    const auto session = synth::generate_session(session_config);
    const fs::path session_file = workdir / ("session_" + std::to_string(s) + ".jsonl");
    const fs::path truth_file = workdir / ("truth_" + std::to_string(s) + ".json");
    ingest::write_session_file(session.stream, session_file);
    synth::write_truth_file(session.truth, truth_file);
    session_files.push_back(session_file);
    truth_files.push_back(truth_file);
  }

  synth::SynthConfig calib_config = base;
  calib_config.seed = splitmix64(seed ^ 0xca11bULL);
  const fs::path calibration_file = workdir / "calibration.jsonl";
  ingest::write_session_file(
      synth::generate_calibration_session(calib_config,
                                          config.get("gaze.calibration_seconds", 30.0)),
      calibration_file);

  // --- actions model
  TrainActionsArgs train_args;
  train_args.data = clips_file.string();
  train_args.out = (workdir / "model.egkm").string();
  train_args.loss_log = (workdir / "actions_loss.csv").string();
  train_args.train.epochs = config.get("actions.epochs", 60);
  train_args.train.batch_size = config.get("actions.batch", 16);
  train_args.train.learning_rate = config.get("actions.lr", 0.0025);
  train_args.train.momentum = config.get("actions.momentum", 0.9);
  train_args.train.seed = config.get("actions.seed", seed);
  train_args.train.threads = threads;
  train_args.freeze = config.get("actions.freeze", 0);
  train_args.split_seed = config.get("actions.split_seed", std::uint64_t{7});
  cmd_train_actions(train_args);
  cmd_eval_actions(clips_file.string(), train_args.out, train_args.split_seed, "test",
                   (workdir / "actions_report.json").string(), threads);

  // --- gaze calibration
  cmd_gaze_calibrate(calibration_file.string(), (workdir / "gaze.json").string(),
                     config.get("gaze.tolerance", 0.25), config.get("gaze.min_conf", 0.3));

  // --- per-session tracking + features
  const double window_seconds = config.get("features.window_seconds", 120.0);
  const double subclip_seconds = config.get("features.subclip_seconds", 10.0);
  std::vector<fs::path> feature_files;
  for (int s = 0; s < sessions; ++s) {
    const fs::path tracks_file = workdir / ("tracks_" + std::to_string(s) + ".jsonl");
    cmd_track(session_files[static_cast<std::size_t>(s)].string(),
              config.get("track.iou", 0.3), config.get("track.max_gap", 15),
              config.get("track.conf", 0.3), tracks_file.string());
    FeaturesArgs feature_args;
    feature_args.tracks = tracks_file.string();
    feature_args.model = train_args.out;
    feature_args.gaze = (workdir / "gaze.json").string();
    feature_args.truth = truth_files[static_cast<std::size_t>(s)].string();
    feature_args.out = (workdir / ("features_" + std::to_string(s) + ".csv")).string();
    feature_args.window_seconds = window_seconds;
    feature_args.subclip_seconds = subclip_seconds;
    feature_args.threads = threads;
    cmd_features(feature_args);
    feature_files.emplace_back(feature_args.out);
  }

  // --- engagement: train on all sessions but the last, evaluate the last
  TrainEngagementArgs engagement_args;
  for (int s = 0; s + 1 < sessions; ++s)
    engagement_args.feature_files.push_back(feature_files[static_cast<std::size_t>(s)].string());
  engagement_args.out = (workdir / "svm.json").string();
  engagement_args.kernel = config.get("engagement.kernel", std::string("linear"));
  engagement_args.gamma = config.get("engagement.gamma", 0.5);
  engagement_args.c = config.get("engagement.c", 1.0);
  engagement_args.tol = config.get("engagement.tol", 1e-3);
  engagement_args.no_class_weighting = config.get("engagement.class_weighting", 1) == 0;
  cmd_train_engagement(engagement_args);

  const auto test_features = feature_files.back().string();
  cmd_eval_engagement(test_features, engagement_args.out,
                      (workdir / "engagement_report.json").string());
  cmd_timeline(test_features, engagement_args.out, (workdir / "timeline.csv").string(),
               (workdir / "timeline.json").string());

  std::cout << "pipeline artifacts in " << workdir.string() << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"skeleton-based student engagement pipeline"};
  app.require_subcommand(1);

  // synth
  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "generate synthetic sessions or clip sets");
  synth_cmd->add_option("--mode", synth_args.mode, "clips | session | calibration");
  synth_cmd->add_option("--out", synth_args.out)->required();
  synth_cmd->add_option("--truth", synth_args.truth, "ground-truth JSON (session mode)");
  synth_cmd->add_option("--seed", synth_args.seed);
  synth_cmd->add_option("--students", synth_args.students);
  synth_cmd->add_option("--minutes", synth_args.minutes);
  synth_cmd->add_option("--seconds", synth_args.seconds, "calibration length");
  synth_cmd->add_option("--clips-per-class", synth_args.clips_per_class);
  synth_cmd->add_option("--clip-seconds", synth_args.clip_seconds);
  synth_cmd->add_option("--fps", synth_args.fps);
  synth_cmd->add_option("--noise", synth_args.noise_sigma);
  synth_cmd->add_option("--engaged-ratio", synth_args.engaged_ratio);
  synth_cmd->add_option("--drift", synth_args.drift);

  // ingest
  std::string ingest_input, ingest_out;
  bool validate_only = false;
  auto* ingest_cmd = app.add_subcommand("ingest", "parse and validate a skeleton JSONL stream");
  ingest_cmd->add_option("--input", ingest_input)->required();
  ingest_cmd->add_flag("--validate-only", validate_only);
  ingest_cmd->add_option("--out", ingest_out, "write the normalized stream here");

  // track
  std::string track_input, track_out;
  double track_iou = 0.3, track_conf = 0.3;
  std::int64_t track_max_gap = 15;
  auto* track_cmd = app.add_subcommand("track", "associate detections into tracks");
  track_cmd->add_option("--input", track_input)->required();
  track_cmd->add_option("--iou", track_iou);
  track_cmd->add_option("--max-gap", track_max_gap);
  track_cmd->add_option("--conf", track_conf);
  track_cmd->add_option("--out", track_out)->required();

  // volumes
  std::string volumes_tracks, volumes_out;
  double volumes_window = 120.0, volumes_subclip = 10.0;
  auto* volumes_cmd = app.add_subcommand("volumes", "dump pseudo-heatmap volumes");
  volumes_cmd->add_option("--tracks", volumes_tracks)->required();
  volumes_cmd->add_option("--out", volumes_out)->required();
  volumes_cmd->add_option("--window", volumes_window);
  volumes_cmd->add_option("--subclip", volumes_subclip);

  // train-actions
  TrainActionsArgs ta;
  auto* train_actions_cmd = app.add_subcommand("train-actions", "train the 3D-CNN action model");
  train_actions_cmd->add_option("--data", ta.data)->required();
  train_actions_cmd->add_option("--out", ta.out)->required();
  train_actions_cmd->add_option("--loss-log", ta.loss_log);
  train_actions_cmd->add_option("--epochs", ta.train.epochs);
  train_actions_cmd->add_option("--batch", ta.train.batch_size);
  train_actions_cmd->add_option("--lr", ta.train.learning_rate);
  train_actions_cmd->add_option("--momentum", ta.train.momentum);
  train_actions_cmd->add_option("--seed", ta.train.seed);
  train_actions_cmd->add_option("--threads", ta.train.threads);
  train_actions_cmd->add_option("--freeze", ta.freeze);
  train_actions_cmd->add_option("--split-seed", ta.split_seed);

  // eval-actions
  std::string ea_data, ea_model, ea_on = "test", ea_report;
  std::uint64_t ea_split_seed = 7;
  int ea_threads = 0;
  auto* eval_actions_cmd = app.add_subcommand("eval-actions", "evaluate the action model");
  eval_actions_cmd->add_option("--data", ea_data)->required();
  eval_actions_cmd->add_option("--model", ea_model)->required();
  eval_actions_cmd->add_option("--split-seed", ea_split_seed);
  eval_actions_cmd->add_option("--on", ea_on, "test | train | all");
  eval_actions_cmd->add_option("--report", ea_report)->required();
  eval_actions_cmd->add_option("--threads", ea_threads);

  // gaze-calibrate
  std::string gc_frames, gc_out;
  double gc_tolerance = 0.25, gc_min_conf = 0.3;
  auto* gaze_cmd = app.add_subcommand("gaze-calibrate", "calibrate the target yaw");
  gaze_cmd->add_option("--frames", gc_frames)->required();
  gaze_cmd->add_option("--out", gc_out)->required();
  gaze_cmd->add_option("--tolerance", gc_tolerance);
  gaze_cmd->add_option("--min-conf", gc_min_conf);

  // features
  FeaturesArgs fa;
  auto* features_cmd = app.add_subcommand("features", "histogram-of-actions + gaze features");
  features_cmd->add_option("--tracks", fa.tracks)->required();
  features_cmd->add_option("--model", fa.model)->required();
  features_cmd->add_option("--gaze", fa.gaze)->required();
  features_cmd->add_option("--truth", fa.truth, "label rows from this ground truth");
  features_cmd->add_option("--out", fa.out)->required();
  features_cmd->add_option("--window", fa.window_seconds);
  features_cmd->add_option("--subclip", fa.subclip_seconds);
  features_cmd->add_option("--threads", fa.threads);

  // train-engagement
  TrainEngagementArgs te;
  auto* train_engagement_cmd = app.add_subcommand("train-engagement", "train the engagement SVM");
  train_engagement_cmd->add_option("--features", te.feature_files)->required();
  train_engagement_cmd->add_option("--out", te.out)->required();
  train_engagement_cmd->add_option("--kernel", te.kernel, "linear | rbf");
  train_engagement_cmd->add_option("--gamma", te.gamma);
  train_engagement_cmd->add_option("--c", te.c);
  train_engagement_cmd->add_flag("--no-class-weighting", te.no_class_weighting);
  train_engagement_cmd->add_option("--tol", te.tol);

  // eval-engagement
  std::string ee_features, ee_model, ee_report;
  auto* eval_engagement_cmd = app.add_subcommand("eval-engagement", "evaluate the engagement SVM");
  eval_engagement_cmd->add_option("--features", ee_features)->required();
  eval_engagement_cmd->add_option("--model", ee_model)->required();
  eval_engagement_cmd->add_option("--report", ee_report)->required();

  // timeline
  std::string tl_features, tl_model, tl_out, tl_report;
  auto* timeline_cmd = app.add_subcommand("timeline", "mean engagement per window");
  timeline_cmd->add_option("--features", tl_features)->required();
  timeline_cmd->add_option("--model", tl_model)->required();
  timeline_cmd->add_option("--out", tl_out)->required();
  timeline_cmd->add_option("--report", tl_report);

  // pipeline
  std::string pl_config, pl_workdir;
  std::uint64_t pl_seed = 0;
  bool pl_seed_set = false;
  int pl_threads = 0;
  auto* pipeline_cmd = app.add_subcommand("pipeline", "run every stage from one config");
  pipeline_cmd->add_option("--config", pl_config)->required();
  pipeline_cmd->add_option("--workdir", pl_workdir);
  pipeline_cmd->add_option("--seed", pl_seed)->each([&](const std::string&) { pl_seed_set = true; });
  pipeline_cmd->add_option("--threads", pl_threads);

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("engage");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth_args);
    if (ingest_cmd->parsed()) return cmd_ingest(ingest_input, validate_only, ingest_out);
    if (track_cmd->parsed())
      return cmd_track(track_input, track_iou, track_max_gap, track_conf, track_out);
    if (volumes_cmd->parsed())
      return cmd_volumes(volumes_tracks, volumes_out, volumes_window, volumes_subclip, {});
    if (train_actions_cmd->parsed()) return cmd_train_actions(ta);
    if (eval_actions_cmd->parsed())
      return cmd_eval_actions(ea_data, ea_model, ea_split_seed, ea_on, ea_report, ea_threads);
    if (gaze_cmd->parsed()) return cmd_gaze_calibrate(gc_frames, gc_out, gc_tolerance, gc_min_conf);
    if (features_cmd->parsed()) return cmd_features(fa);
    if (train_engagement_cmd->parsed()) return cmd_train_engagement(te);
    if (eval_engagement_cmd->parsed())
      return cmd_eval_engagement(ee_features, ee_model, ee_report);
    if (timeline_cmd->parsed()) return cmd_timeline(tl_features, tl_model, tl_out, tl_report);
    if (pipeline_cmd->parsed())
      return cmd_pipeline(pl_config, pl_workdir,
                          pl_seed_set ? std::optional<std::uint64_t>(pl_seed) : std::nullopt,
                          pl_threads);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace engage::cli
