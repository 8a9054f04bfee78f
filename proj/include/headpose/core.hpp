#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace headpose {

/// Intrinsic Euler angles in degrees.
struct PoseAngles {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;

  bool operator==(const PoseAngles&) const = default;
};

/// A detected (or undetected) facial keypoint in source-image pixels.
/// `likelihood == 0` means undetected, in which case x and y are zero.
struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double likelihood = 0.0;

  bool detected() const noexcept { return likelihood > 0.0; }
  static Keypoint undetected() noexcept { return {}; }

  bool operator==(const Keypoint&) const = default;
};

struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  bool valid() const noexcept { return w > 0.0 && h > 0.0; }
  bool operator==(const BBox&) const = default;
};

inline constexpr std::size_t kNumKeypoints = 5;

enum class KeypointId : std::size_t { kNose = 0, kLeftEye, kRightEye, kLeftEar, kRightEar };

/// Canonical order used by every serializer, feature assembler and heatmap stack.
inline constexpr std::array<std::string_view, kNumKeypoints> kKeypointNames = {
    "nose", "left_eye", "right_eye", "left_ear", "right_ear"};

struct KeypointSet {
  std::array<Keypoint, kNumKeypoints> points{};
  BBox bbox{};

  Keypoint& operator[](KeypointId id) { return points[static_cast<std::size_t>(id)]; }
  const Keypoint& operator[](KeypointId id) const { return points[static_cast<std::size_t>(id)]; }

  std::size_t detected_count() const noexcept;
  bool operator==(const KeypointSet&) const = default;
};

/// Row-major 3x3 rotation matrix.
struct Rot3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  double operator()(int r, int c) const { return m[static_cast<std::size_t>(r * 3 + c)]; }
  std::array<double, 3> apply(const std::array<double, 3>& v) const;
  Rot3 transposed() const;
  double determinant() const;
  Rot3 operator*(const Rot3& rhs) const;
};

double deg_to_rad(double deg);

/// R = R_y(yaw) * R_x(pitch) * R_z(roll), right-handed with x right, y up, z toward camera.
Rot3 euler_to_rotation(const PoseAngles& angles);

inline constexpr std::size_t kMlpFeatureDim = 3 * kNumKeypoints;
using MlpFeatures = std::array<double, kMlpFeatureDim>;

/// Per keypoint in canonical order: ((x - bbox.x) / bbox.w, (y - bbox.y) / bbox.h, likelihood).
/// Undetected keypoints contribute an all-zero triple. Throws DataError on an invalid bbox.
MlpFeatures assemble_mlp_features(const KeypointSet& kps);

struct MaeReport {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
  double overall = 0.0;
};

/// Per-angle mean absolute error in degrees; `overall` is the mean of the three.
MaeReport mae_report(std::span<const PoseAngles> preds, std::span<const PoseAngles> gts);

}  // namespace headpose
