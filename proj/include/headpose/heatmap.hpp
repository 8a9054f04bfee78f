#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "headpose/core.hpp"

namespace headpose {

struct GridSize {
  std::size_t height = 64;
  std::size_t width = 64;

  std::size_t cells() const noexcept { return height * width; }
  bool operator==(const GridSize&) const = default;
};

inline constexpr GridSize kDefaultGrid{64, 64};
inline constexpr double kDefaultSigma = 2.0;

/// Five H x W localization maps in canonical keypoint order, stored
/// channel-major so a stack is directly one sample of a [5 x H x W] tensor.
class HeatmapStack {
 public:
  explicit HeatmapStack(GridSize grid);

  GridSize grid() const noexcept { return grid_; }
  std::span<const double> channel(std::size_t c) const;
  std::span<double> channel(std::size_t c);
  double at(std::size_t c, std::size_t row, std::size_t col) const;
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> mutable_data() noexcept { return data_; }

 private:
  GridSize grid_;
  std::vector<double> data_;
};

/// Where a keypoint lands on the grid: the bbox maps onto the full grid, so
/// col = W * (x - bbox.x) / bbox.w and row = H * (y - bbox.y) / bbox.h.
struct GridPoint {
  double col;
  double row;
};
GridPoint project_to_grid(const Keypoint& kp, const BBox& bbox, GridSize grid);

/// Renders each detected keypoint as likelihood * exp(-d^2 / (2 sigma^2)) around its
/// projected grid location; undetected keypoints leave their channel at zero.
/// Throws DataError for an invalid bbox, UsageError for sigma <= 0 or a grid under 8x8.
HeatmapStack render_stack(const KeypointSet& kps, GridSize grid = kDefaultGrid, double sigma = kDefaultSigma);

/// Writes `out` (channel-major, 5*H*W doubles) without allocating a HeatmapStack.
void render_stack_into(const KeypointSet& kps, GridSize grid, double sigma, std::span<double> out);

/// Writes one binary 8-bit PGM per channel, named <prefix>_<keypoint>.pgm, with
/// pixel = round(255 * cell). Returns the paths in canonical order.
std::array<std::filesystem::path, kNumKeypoints> write_pgm_stack(const HeatmapStack& stack,
                                                                  const std::string& prefix);

}  // namespace headpose
