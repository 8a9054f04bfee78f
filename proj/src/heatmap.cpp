#include "headpose/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "headpose/error.hpp"

namespace headpose {

HeatmapStack::HeatmapStack(GridSize grid) : grid_(grid), data_(kNumKeypoints * grid.cells(), 0.0) {}

std::span<const double> HeatmapStack::channel(std::size_t c) const {
  return std::span<const double>(data_).subspan(c * grid_.cells(), grid_.cells());
}

std::span<double> HeatmapStack::channel(std::size_t c) {
  return std::span<double>(data_).subspan(c * grid_.cells(), grid_.cells());
}

double HeatmapStack::at(std::size_t c, std::size_t row, std::size_t col) const {
  return data_[c * grid_.cells() + row * grid_.width + col];
}

GridPoint project_to_grid(const Keypoint& kp, const BBox& bbox, GridSize grid) {
  return {static_cast<double>(grid.width) * (kp.x - bbox.x) / bbox.w,
          static_cast<double>(grid.height) * (kp.y - bbox.y) / bbox.h};
}

void render_stack_into(const KeypointSet& kps, GridSize grid, double sigma, std::span<double> out) {
  if (!kps.bbox.valid()) throw DataError("render_stack: bbox must have positive width and height");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw UsageError("render_stack: sigma must be positive");
  if (grid.height < 8 || grid.width < 8) throw UsageError("render_stack: grid must be at least 8x8");
  if (out.size() != kNumKeypoints * grid.cells()) throw UsageError("render_stack: output buffer has wrong size");

  const double inv = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> gx(grid.width), gy(grid.height);
  for (std::size_t c = 0; c < kNumKeypoints; ++c) {
    auto channel = out.subspan(c * grid.cells(), grid.cells());
    const Keypoint& kp = kps.points[c];
    if (!kp.detected()) {
      std::fill(channel.begin(), channel.end(), 0.0);
      continue;
    }
    // exp(-(du^2 + dv^2) / 2s^2) factors into a row profile times a column profile.
    const GridPoint p = project_to_grid(kp, kps.bbox, grid);
    for (std::size_t u = 0; u < grid.width; ++u) {
      const double d = static_cast<double>(u) - p.col;
      gx[u] = std::exp(-d * d * inv);
    }
    for (std::size_t v = 0; v < grid.height; ++v) {
      const double d = static_cast<double>(v) - p.row;
      gy[v] = kp.likelihood * std::exp(-d * d * inv);
    }
    for (std::size_t v = 0; v < grid.height; ++v) {
      for (std::size_t u = 0; u < grid.width; ++u) channel[v * grid.width + u] = gy[v] * gx[u];
    }
  }
}

HeatmapStack render_stack(const KeypointSet& kps, GridSize grid, double sigma) {
  HeatmapStack stack(grid);
  render_stack_into(kps, grid, sigma, stack.mutable_data());
  return stack;
}

std::array<std::filesystem::path, kNumKeypoints> write_pgm_stack(const HeatmapStack& stack,
                                                                  const std::string& prefix) {
  std::array<std::filesystem::path, kNumKeypoints> paths;
  const GridSize g = stack.grid();
  for (std::size_t c = 0; c < kNumKeypoints; ++c) {
    paths[c] = prefix + "_" + std::string(kKeypointNames[c]) + ".pgm";
    std::ofstream out(paths[c], std::ios::binary);
    if (!out) throw UsageError("cannot open " + paths[c].string() + " for writing");
    out << "P5\n" << g.width << " " << g.height << "\n255\n";
    for (double cell : stack.channel(c)) {
      const double clamped = std::clamp(cell, 0.0, 1.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * clamped))));
    }
    if (!out) throw UsageError("failed writing " + paths[c].string());
  }
  return paths;
}

}  // namespace headpose
