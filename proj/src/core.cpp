#include "headpose/core.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "headpose/error.hpp"

namespace headpose {

std::size_t KeypointSet::detected_count() const noexcept {
  std::size_t n = 0;
  for (const auto& kp : points) n += kp.detected() ? 1 : 0;
  return n;
}

std::array<double, 3> Rot3::apply(const std::array<double, 3>& v) const {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
          m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

Rot3 Rot3::transposed() const {
  return Rot3{{m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]}};
}

double Rot3::determinant() const {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Rot3 Rot3::operator*(const Rot3& rhs) const {
  Rot3 out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += (*this)(r, k) * rhs(k, c);
      out.m[static_cast<std::size_t>(r * 3 + c)] = acc;
    }
  }
  return out;
}

double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

Rot3 euler_to_rotation(const PoseAngles& angles) {
  const double y = deg_to_rad(angles.yaw);
  const double p = deg_to_rad(angles.pitch);
  const double r = deg_to_rad(angles.roll);
  const double cy = std::cos(y), sy = std::sin(y);
  const double cp = std::cos(p), sp = std::sin(p);
  const double cr = std::cos(r), sr = std::sin(r);
  const Rot3 ry{{cy, 0, sy, 0, 1, 0, -sy, 0, cy}};
  const Rot3 rx{{1, 0, 0, 0, cp, -sp, 0, sp, cp}};
  const Rot3 rz{{cr, -sr, 0, sr, cr, 0, 0, 0, 1}};
  return ry * rx * rz;
}

MlpFeatures assemble_mlp_features(const KeypointSet& kps) {
  if (!kps.bbox.valid()) {
    throw DataError("bbox must have positive width and height (got " + std::to_string(kps.bbox.w) +
                    "x" + std::to_string(kps.bbox.h) + ")");
  }
  MlpFeatures out{};
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    const Keypoint& kp = kps.points[i];
    if (!kp.detected()) continue;
    out[3 * i] = (kp.x - kps.bbox.x) / kps.bbox.w;
    out[3 * i + 1] = (kp.y - kps.bbox.y) / kps.bbox.h;
    out[3 * i + 2] = kp.likelihood;
  }
  return out;
}

MaeReport mae_report(std::span<const PoseAngles> preds, std::span<const PoseAngles> gts) {
  if (preds.empty()) throw DataError("mae_report: empty input");
  if (preds.size() != gts.size()) {
    throw DataError("mae_report: " + std::to_string(preds.size()) + " predictions vs " +
                    std::to_string(gts.size()) + " labels");
  }
  MaeReport rep;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    rep.yaw += std::abs(preds[i].yaw - gts[i].yaw);
    rep.pitch += std::abs(preds[i].pitch - gts[i].pitch);
    rep.roll += std::abs(preds[i].roll - gts[i].roll);
  }
  const auto n = static_cast<double>(preds.size());
  rep.yaw /= n;
  rep.pitch /= n;
  rep.roll /= n;
  rep.overall = (rep.yaw + rep.pitch + rep.roll) / 3.0;
  return rep;
}

}  // namespace headpose
