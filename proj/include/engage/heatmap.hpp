#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "engage/pose.hpp"

namespace engage::heatmap {

struct SamplerConfig {
  int frames = 16;       // T: temporally sampled frames
  int rows = 56;         // H
  int cols = 56;         // W
  double sigma = 0.6;    // Gaussian std in resized pixels
  double padding = 0.1;  // relative margin added to the union box per side
};

/// K x T x H x W stack of confidence-weighted joint Gaussians, K = 11.
/// Channel k at time t is identically zero iff joint k was undetected in
/// sampled frame t; all values lie in [0, 1].
struct HeatmapVolume {
  int channels = 0;
  int frames = 0;
  int rows = 0;
  int cols = 0;
  std::vector<float> values;  // row-major [k][t][i][j]

  float at(int k, int t, int i, int j) const {
    return values[((static_cast<std::size_t>(k) * frames + t) * rows + i) * cols + j];
  }
  std::size_t size() const { return values.size(); }
};

/// Indices floor((i + 0.5) * n / count) for i in [0, count): non-decreasing,
/// within [0, n-1]; repeats when n < count.
std::vector<std::size_t> uniform_sample_frames(std::size_t n, std::size_t count);

/// A pose sequence in temporal order (one entry per retained frame).
using PoseSequence = std::vector<UpperBodyPose>;

struct ResizedJoint {
  double x = 0.0;
  double y = 0.0;
  double c = 0.0;
};

/// Maps every pose onto the resized grid: the union box of all visible
/// joints over the whole segment, expanded by `padding` per side, goes to
/// [0, W-1] x [0, H-1] with one uniform scale; the slack dimension is
/// centered. Throws all_joints_missing when nothing is visible.
std::vector<std::array<ResizedJoint, kUpperBodyJointCount>> normalize_coords(
    const PoseSequence& segment, const SamplerConfig& config);

/// value(i, j) = c * exp(-((j-x)^2 + (i-y)^2) / (2 sigma^2)), an H x W map.
std::vector<float> joint_heatmap(double x, double y, double c, const SamplerConfig& config);

/// Samples `config.frames` poses, normalizes coordinates once per segment,
/// renders one Gaussian per joint per sampled frame.
HeatmapVolume build_volume(const PoseSequence& segment, const SamplerConfig& config = {});

// Binary cache format: magic "EGKV", version u16, K/T/H/W u32, float32
// payload, all little-endian.
void save_volume(const HeatmapVolume& volume, std::ostream& out);
void save_volume_file(const HeatmapVolume& volume, const std::filesystem::path& path);
HeatmapVolume load_volume(std::istream& in);
HeatmapVolume load_volume_file(const std::filesystem::path& path);

}  // namespace engage::heatmap
