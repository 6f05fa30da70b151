#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "engage/errors.hpp"
#include "engage/heatmap.hpp"
#include "engage/rng.hpp"
#include "oracles.hpp"

using namespace engage;
using heatmap::SamplerConfig;

namespace {

UpperBodyPose pose_with(std::initializer_list<std::pair<std::size_t, Keypoint>> joints) {
  UpperBodyPose pose;
  for (const auto& [j, k] : joints) pose.keypoints[j] = k;
  return pose;
}

/// Random segment on a dyadic grid (coordinates exactly representable) so
/// translation tests can demand bit identity.
heatmap::PoseSequence random_segment(Rng& rng, int frames = 6) {
  heatmap::PoseSequence seq(static_cast<std::size_t>(frames));
  for (auto& pose : seq)
    for (auto& k : pose.keypoints) {
      if (rng.uniform() < 0.2) continue;
      k.x = rng.uniform_int(0, 4096) / 16.0;
      k.y = rng.uniform_int(0, 4096) / 16.0;
      k.c = rng.uniform_int(1, 16) / 16.0;
    }
  // guarantee one visible joint
  if (!std::any_of(seq.begin(), seq.end(),
                   [](const UpperBodyPose& p) { return !p.empty(); }))
    seq[0].keypoints[0] = Keypoint{128.0, 64.0, 1.0};
  return seq;
}

}  // namespace

TEST_CASE("uniform_sample_frames follows the floor formula") {
  CHECK(heatmap::uniform_sample_frames(16, 16) ==
        std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15});
  CHECK(heatmap::uniform_sample_frames(1800, 16) ==
        std::vector<std::size_t>{56, 168, 281, 393, 506, 618, 731, 843, 956, 1068, 1181, 1293,
                                 1406, 1518, 1631, 1743});
  CHECK(heatmap::uniform_sample_frames(4, 8) ==
        std::vector<std::size_t>{0, 0, 1, 1, 2, 2, 3, 3});
}

TEST_CASE("sampled indices are non-decreasing and in range") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 2000));
    const auto t = static_cast<std::size_t>(rng.uniform_int(1, 64));
    const auto idx = heatmap::uniform_sample_frames(n, t);
    REQUIRE(idx.size() == t);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      CHECK(idx[i] < n);
      if (i > 0) CHECK(idx[i] >= idx[i - 1]);
    }
  }
}

TEST_CASE("normalize_coords maps the expanded box corners onto the grid corners") {
  SamplerConfig config;
  // two joints spanning a square box; padding expands it by 10% per side
  heatmap::PoseSequence seq{pose_with({{0, {100.0, 100.0, 1.0}}, {1, {200.0, 200.0, 1.0}}})};
  const auto normalized = heatmap::normalize_coords(seq, config);
  // expanded box is [90, 210]^2; scale = 55/120
  const double scale = (config.cols - 1) / 120.0;
  CHECK(normalized[0][0].x == doctest::Approx(10.0 * scale));
  CHECK(normalized[0][0].y == doctest::Approx(10.0 * scale));
  CHECK(normalized[0][1].x == doctest::Approx(110.0 * scale));
  CHECK(normalized[0][1].y == doctest::Approx(110.0 * scale));
}

TEST_CASE("a single stationary joint maps to the grid center") {
  SamplerConfig config;
  heatmap::PoseSequence seq{pose_with({{4, {777.0, 555.0, 0.8}}})};
  const auto normalized = heatmap::normalize_coords(seq, config);
  CHECK(normalized[0][4].x == doctest::Approx((config.cols - 1) / 2.0));
  CHECK(normalized[0][4].y == doctest::Approx((config.rows - 1) / 2.0));
  CHECK(normalized[0][4].c == doctest::Approx(0.8));
}

TEST_CASE("square boxes use the uniform scale (W-1) / (edge * 1.2)") {
  SamplerConfig config;
  heatmap::PoseSequence seq{pose_with({{0, {0.0, 0.0, 1.0}}, {1, {100.0, 100.0, 1.0}}}),
                            pose_with({{2, {50.0, 25.0, 1.0}}})};
  const auto normalized = heatmap::normalize_coords(seq, config);
  const double scale = (config.cols - 1) / 120.0;
  // joint (50, 25) sits (60, 35) from the expanded box corner (-10, -10)
  CHECK(normalized[1][2].x == doctest::Approx(60.0 * scale));
  CHECK(normalized[1][2].y == doctest::Approx(35.0 * scale));
}

TEST_CASE("normalize_coords without any visible joint raises") {
  heatmap::PoseSequence seq(3);
  CHECK_THROWS_AS(heatmap::normalize_coords(seq, {}), Error);
}

TEST_CASE("joint_heatmap peaks at confidence and decays by the Gaussian") {
  SamplerConfig config;
  const auto map = heatmap::joint_heatmap(20.0, 30.0, 1.0, config);
  CHECK(map[30 * config.cols + 20] == doctest::Approx(1.0));
  // one sigma away along x
  const double at_sigma =
      1.0 * std::exp(-(config.sigma * config.sigma) / (2 * config.sigma * config.sigma));
  CHECK(at_sigma == doctest::Approx(std::exp(-0.5)));
  // nearest grid evaluation of the same value
  const double direct = std::exp(-((20.6 - 20.0) * (20.6 - 20.0)) /
                                 (2 * config.sigma * config.sigma));
  CHECK(direct == doctest::Approx(std::exp(-0.5)));

  const auto zero = heatmap::joint_heatmap(20.0, 30.0, 0.0, config);
  for (float v : zero) CHECK(v == 0.0f);
}

TEST_CASE("heatmap values decrease monotonically with distance from the joint") {
  SamplerConfig config;
  const auto map = heatmap::joint_heatmap(28.0, 28.0, 1.0, config);
  for (int j = 29; j < config.cols; ++j)
    CHECK(map[28 * config.cols + j] <= map[28 * config.cols + j - 1]);
  for (int i = 29; i < config.rows; ++i)
    CHECK(map[i * config.cols + 28] <= map[(i - 1) * config.cols + 28]);
}

TEST_CASE("build_volume stacks 11 channels over sampled frames") {
  SamplerConfig config;
  config.rows = config.cols = 55;  // odd grid: the stationary joint maps onto a pixel
  heatmap::PoseSequence seq(16);
  for (auto& pose : seq) pose.keypoints[2] = Keypoint{100.0, 100.0, 1.0};
  const auto volume = heatmap::build_volume(seq, config);
  CHECK(volume.channels == 11);
  CHECK(volume.frames == config.frames);
  for (int t = 0; t < volume.frames; ++t) {
    double peak2 = 0.0;
    for (int i = 0; i < volume.rows; ++i)
      for (int j = 0; j < volume.cols; ++j) peak2 = std::max<double>(peak2, volume.at(2, t, i, j));
    CHECK(peak2 == doctest::Approx(1.0));  // stationary joint lands on the center pixel
    for (int k = 0; k < volume.channels; ++k) {
      if (k == 2) continue;
      for (int i = 0; i < volume.rows; ++i)
        for (int j = 0; j < volume.cols; ++j) CHECK(volume.at(k, t, i, j) == 0.0f);
    }
  }
}

TEST_CASE("a frame with all confidences zero leaves every channel zero at that time") {
  SamplerConfig config;
  config.frames = 4;
  heatmap::PoseSequence seq(4);
  for (std::size_t f = 0; f < seq.size(); ++f)
    if (f != 2) seq[f].keypoints[0] = Keypoint{50.0, 60.0, 0.9};
  const auto volume = heatmap::build_volume(seq, config);
  for (int k = 0; k < volume.channels; ++k)
    for (int i = 0; i < volume.rows; ++i)
      for (int j = 0; j < volume.cols; ++j) CHECK(volume.at(k, 2, i, j) == 0.0f);
  // and channel zero is non-zero at the other times
  for (int t : {0, 1, 3}) {
    double peak = 0.0;
    for (int i = 0; i < volume.rows; ++i)
      for (int j = 0; j < volume.cols; ++j) peak = std::max<double>(peak, volume.at(0, t, i, j));
    CHECK(peak > 0.0);
  }
}

TEST_CASE("channel is zero exactly when the joint is missing, values stay in [0,1]") {
  Rng rng(17);
  SamplerConfig config;
  config.frames = 4;
  for (int trial = 0; trial < 50; ++trial) {
    const auto seq = random_segment(rng);
    const auto volume = heatmap::build_volume(seq, config);
    const auto sampled = heatmap::uniform_sample_frames(seq.size(), 4);
    for (int k = 0; k < volume.channels; ++k)
      for (int t = 0; t < volume.frames; ++t) {
        float peak = 0.0f;
        for (int i = 0; i < volume.rows; ++i)
          for (int j = 0; j < volume.cols; ++j) {
            const float v = volume.at(k, t, i, j);
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
            peak = std::max(peak, v);
          }
        const bool visible =
            seq[sampled[static_cast<std::size_t>(t)]].keypoints[static_cast<std::size_t>(k)]
                .visible();
        CHECK((peak > 0.0f) == visible);
      }
  }
}

TEST_CASE("translating every joint yields a bit-identical volume") {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const auto seq = random_segment(rng);
    heatmap::PoseSequence moved = seq;
    const double dx = rng.uniform_int(-512, 2048) / 16.0;
    const double dy = rng.uniform_int(-512, 2048) / 16.0;
    for (auto& pose : moved)
      for (auto& k : pose.keypoints)
        if (k.visible()) {
          k.x += dx;
          k.y += dy;
        }
    SamplerConfig config;
    config.frames = 4;
    const auto a = heatmap::build_volume(seq, config);
    const auto b = heatmap::build_volume(moved, config);
    REQUIRE(a.values == b.values);
  }
}

TEST_CASE("uniform scaling changes the volume by at most 0.02") {
  Rng rng(29);
  SamplerConfig config;
  for (int trial = 0; trial < 30; ++trial) {
    const auto seq = random_segment(rng);
    const double s = rng.uniform(0.25, 4.0);
    const double cx = rng.uniform(-100.0, 100.0);
    const double cy = rng.uniform(-100.0, 100.0);
    heatmap::PoseSequence scaled = seq;
    for (auto& pose : scaled)
      for (auto& k : pose.keypoints)
        if (k.visible()) {
          k.x = cx + (k.x - cx) * s;
          k.y = cy + (k.y - cy) * s;
        }
    const auto a = heatmap::build_volume(seq, config);
    const auto b = heatmap::build_volume(scaled, config);
    REQUIRE(a.values.size() == b.values.size());
    float worst = 0.0f;
    for (std::size_t i = 0; i < a.values.size(); ++i)
      worst = std::max(worst, std::abs(a.values[i] - b.values[i]));
    CHECK(worst <= 0.02f);
  }
}

TEST_CASE("per-joint map mass stays within the closed-form Gaussian integral") {
  SamplerConfig config;
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const double x = rng.uniform(0.0, config.cols - 1.0);
    const double y = rng.uniform(0.0, config.rows - 1.0);
    const double c = rng.uniform(0.1, 1.0);
    const auto map = heatmap::joint_heatmap(x, y, c, config);
    double sum = 0.0;
    for (float v : map) sum += v;
    const double untruncated = c * 2.0 * std::numbers::pi * config.sigma * config.sigma;
    CHECK(sum <= untruncated * 1.01);
    // away from the border the grid sum matches the quadrature oracle;
    // near it, truncation and the midpoint rule diverge at percent level
    const double margin = 3.0 * config.sigma;
    if (x > margin && y > margin && x < config.cols - 1 - margin && y < config.rows - 1 - margin) {
      const double mass = oracles::gaussian_mass(x, y, c, config.sigma, config.rows, config.cols);
      CHECK(sum == doctest::Approx(mass).epsilon(0.02));
    }
  }
}

TEST_CASE("volume cache round-trips and rejects damage") {
  Rng rng(37);
  const auto volume = heatmap::build_volume(random_segment(rng), {});
  std::ostringstream out(std::ios::binary);
  heatmap::save_volume(volume, out);
  const std::string bytes = out.str();

  std::istringstream in(bytes, std::ios::binary);
  const auto round = heatmap::load_volume(in);
  CHECK(round.values == volume.values);
  CHECK(round.channels == volume.channels);

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::istringstream bad_in(bad_magic, std::ios::binary);
  try {
    heatmap::load_volume(bad_in);
    FAIL("expected BadMagic");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::bad_magic);
  }

  std::istringstream short_in(bytes.substr(0, bytes.size() / 2), std::ios::binary);
  try {
    heatmap::load_volume(short_in);
    FAIL("expected TruncatedFile");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::truncated_file);
  }

  std::string bad_version = bytes;
  bad_version[4] = 9;
  std::istringstream version_in(bad_version, std::ios::binary);
  try {
    heatmap::load_volume(version_in);
    FAIL("expected VersionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::version_mismatch);
  }
}
