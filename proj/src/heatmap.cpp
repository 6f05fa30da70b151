#include "engage/heatmap.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "engage/errors.hpp"

namespace engage::heatmap {

std::vector<std::size_t> uniform_sample_frames(std::size_t n, std::size_t count) {
  std::vector<std::size_t> indices(count);
  for (std::size_t i = 0; i < count; ++i)
    indices[i] = static_cast<std::size_t>((2 * i + 1) * n / (2 * count));
  return indices;
}

std::vector<std::array<ResizedJoint, kUpperBodyJointCount>> normalize_coords(
    const PoseSequence& segment, const SamplerConfig& config) {
  double x_min = std::numeric_limits<double>::infinity();
  double y_min = std::numeric_limits<double>::infinity();
  double x_max = -std::numeric_limits<double>::infinity();
  double y_max = -std::numeric_limits<double>::infinity();
  for (const UpperBodyPose& pose : segment)
    for (const Keypoint& k : pose.keypoints) {
      if (!k.visible()) continue;
      x_min = std::min(x_min, k.x);
      y_min = std::min(y_min, k.y);
      x_max = std::max(x_max, k.x);
      y_max = std::max(y_max, k.y);
    }
  if (!(x_min <= x_max))
    throw Error(Errc::all_joints_missing, "segment has no visible joint to normalize against");

  const double margin_x = config.padding * (x_max - x_min);
  const double margin_y = config.padding * (y_max - y_min);
  x_min -= margin_x;
  x_max += margin_x;
  y_min -= margin_y;
  y_max += margin_y;
  const double extent_x = x_max - x_min;
  const double extent_y = y_max - y_min;

  // One uniform scale keeps the aspect ratio; degenerate extents fall back
  // to centering along that axis.
  double scale = std::numeric_limits<double>::infinity();
  if (extent_x > 0.0) scale = std::min(scale, (config.cols - 1) / extent_x);
  if (extent_y > 0.0) scale = std::min(scale, (config.rows - 1) / extent_y);
  if (!std::isfinite(scale)) scale = 1.0;
  const double offset_x = ((config.cols - 1) - extent_x * scale) / 2.0;
  const double offset_y = ((config.rows - 1) - extent_y * scale) / 2.0;

  std::vector<std::array<ResizedJoint, kUpperBodyJointCount>> out(segment.size());
  for (std::size_t f = 0; f < segment.size(); ++f)
    for (std::size_t j = 0; j < kUpperBodyJointCount; ++j) {
      const Keypoint& k = segment[f].keypoints[j];
      if (!k.visible()) {
        out[f][j] = ResizedJoint{};
        continue;
      }
      out[f][j] = ResizedJoint{(k.x - x_min) * scale + offset_x, (k.y - y_min) * scale + offset_y,
                               k.c};
    }
  return out;
}

namespace {

void render_joint(float* map, int rows, int cols, const ResizedJoint& joint, double sigma) {
  if (joint.c == 0.0) return;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int i = 0; i < rows; ++i) {
    const double dy = i - joint.y;
    float* row = map + static_cast<std::size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) {
      const double dx = j - joint.x;
      const double v = joint.c * std::exp(-(dx * dx + dy * dy) * inv);
      row[j] = std::max(row[j], static_cast<float>(v));
    }
  }
}

}  // namespace

std::vector<float> joint_heatmap(double x, double y, double c, const SamplerConfig& config) {
  std::vector<float> map(static_cast<std::size_t>(config.rows) * config.cols, 0.0f);
  render_joint(map.data(), config.rows, config.cols, ResizedJoint{x, y, c}, config.sigma);
  return map;
}

HeatmapVolume build_volume(const PoseSequence& segment, const SamplerConfig& config) {
  if (segment.empty()) throw Error(Errc::all_joints_missing, "empty segment");
  const auto normalized = normalize_coords(segment, config);
  const auto sampled = uniform_sample_frames(segment.size(), static_cast<std::size_t>(config.frames));

  HeatmapVolume volume;
  volume.channels = static_cast<int>(kUpperBodyJointCount);
  volume.frames = config.frames;
  volume.rows = config.rows;
  volume.cols = config.cols;
  volume.values.assign(static_cast<std::size_t>(volume.channels) * volume.frames * volume.rows *
                           volume.cols,
                       0.0f);
  const std::size_t plane = static_cast<std::size_t>(volume.rows) * volume.cols;
  for (int t = 0; t < volume.frames; ++t) {
    const auto& joints = normalized[sampled[static_cast<std::size_t>(t)]];
    for (std::size_t k = 0; k < kUpperBodyJointCount; ++k) {
      float* map = volume.values.data() + (k * volume.frames + static_cast<std::size_t>(t)) * plane;
      render_joint(map, volume.rows, volume.cols, joints[k], config.sigma);
    }
  }
  return volume;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "volume cache assumes a little-endian host");

constexpr char kMagic[4] = {'E', 'G', 'K', 'V'};
constexpr std::uint16_t kVersion = 1;

template <class T>
void write_raw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
bool read_raw(std::istream& in, T& value) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  return in.gcount() == static_cast<std::streamsize>(sizeof(T));
}

}  // namespace

void save_volume(const HeatmapVolume& volume, std::ostream& out) {
  out.write(kMagic, sizeof(kMagic));
  write_raw(out, kVersion);
  for (int dim : {volume.channels, volume.frames, volume.rows, volume.cols})
    write_raw(out, static_cast<std::uint32_t>(dim));
  out.write(reinterpret_cast<const char*>(volume.values.data()),
            static_cast<std::streamsize>(volume.values.size() * sizeof(float)));
}

void save_volume_file(const HeatmapVolume& volume, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path.string());
  save_volume(volume, out);
}

HeatmapVolume load_volume(std::istream& in) {
  char magic[4];
  in.read(magic, sizeof(magic));
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw Error(Errc::bad_magic, "not an EGKV volume");
  std::uint16_t version = 0;
  if (!read_raw(in, version)) throw Error(Errc::truncated_file, "volume header truncated");
  if (version != kVersion)
    throw Error(Errc::version_mismatch, "volume version " + std::to_string(version));
  std::uint32_t dims[4];
  for (auto& d : dims)
    if (!read_raw(in, d)) throw Error(Errc::truncated_file, "volume header truncated");
  HeatmapVolume volume;
  volume.channels = static_cast<int>(dims[0]);
  volume.frames = static_cast<int>(dims[1]);
  volume.rows = static_cast<int>(dims[2]);
  volume.cols = static_cast<int>(dims[3]);
  const std::size_t count =
      static_cast<std::size_t>(dims[0]) * dims[1] * dims[2] * dims[3];
  volume.values.resize(count);
  in.read(reinterpret_cast<char*>(volume.values.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(float)))
    throw Error(Errc::truncated_file, "volume payload truncated");
  return volume;
}

HeatmapVolume load_volume_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
  return load_volume(in);
}

}  // namespace engage::heatmap
