#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace engage {

/// One detected joint: pixel position plus detector confidence.
/// c == 0 means "not detected"; consumers must then ignore (x, y).
struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double c = 0.0;

  bool visible() const noexcept { return c > 0.0; }
  bool operator==(const Keypoint&) const = default;
};

// COCO-17 keypoint order.
enum CocoJoint : std::size_t {
  kNose = 0,
  kLeftEye = 1,
  kRightEye = 2,
  kLeftEar = 3,
  kRightEar = 4,
  kLeftShoulder = 5,
  kRightShoulder = 6,
  kLeftElbow = 7,
  kRightElbow = 8,
  kLeftWrist = 9,
  kRightWrist = 10,
  kLeftHip = 11,
  kRightHip = 12,
  kLeftKnee = 13,
  kRightKnee = 14,
  kLeftAnkle = 15,
  kRightAnkle = 16,
};

inline constexpr std::size_t kCocoJointCount = 17;
inline constexpr std::size_t kUpperBodyJointCount = 11;

/// Full-body detection in COCO-17 order.
struct PersonPose {
  std::array<Keypoint, kCocoJointCount> keypoints{};

  bool operator==(const PersonPose&) const = default;
};

/// The 11-joint prefix of COCO order: nose, eyes, ears, shoulders, elbows,
/// wrists. Students sit behind desks, so the lower body carries no signal.
struct UpperBodyPose {
  std::array<Keypoint, kUpperBodyJointCount> keypoints{};

  bool empty() const noexcept {
    for (const auto& k : keypoints)
      if (k.visible()) return false;
    return true;
  }
  bool operator==(const UpperBodyPose&) const = default;
};

/// Copies the 11-joint prefix unchanged. Joints the detector missed keep c=0.
inline UpperBodyPose select_upper_body(const PersonPose& pose) {
  UpperBodyPose out;
  for (std::size_t j = 0; j < kUpperBodyJointCount; ++j) out.keypoints[j] = pose.keypoints[j];
  return out;
}

struct Frame {
  std::int64_t index = 0;
  std::vector<PersonPose> poses;  // may be empty: frames without detections are retained

  bool operator==(const Frame&) const = default;
};

/// A parsed multi-person skeleton stream. Immutable after construction;
/// frame indices are strictly increasing but may have gaps.
struct SessionStream {
  int frame_width = 0;
  int frame_height = 0;
  double fps = 15.0;
  std::vector<Frame> frames;

  bool operator==(const SessionStream&) const = default;
};

}  // namespace engage
