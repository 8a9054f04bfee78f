#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "headpose/core.hpp"
#include "headpose/engine.hpp"
#include "headpose/heatmap.hpp"

namespace headpose {

// ---- layer specs -----------------------------------------------------------

struct DenseSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  bool operator==(const DenseSpec&) const = default;
};

struct Conv2dSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool operator==(const Conv2dSpec&) const = default;
};

struct ReluSpec {
  bool operator==(const ReluSpec&) const = default;
};

struct MaxPool2dSpec {
  std::size_t window = 2;
  bool operator==(const MaxPool2dSpec&) const = default;
};

struct FlattenSpec {
  bool operator==(const FlattenSpec&) const = default;
};

using LayerSpec = std::variant<DenseSpec, Conv2dSpec, ReluSpec, MaxPool2dSpec, FlattenSpec>;

/// e.g. "dense(15,30)", "conv2d(5,32,3,1,1)", "relu", "maxpool2d(2)", "flatten".
std::string to_string(const LayerSpec& spec);
LayerSpec parse_layer_spec(std::string_view text);
std::size_t parameter_count(const LayerSpec& spec);

/// A feed-forward stack of layers with owned parameters (weights then bias for
/// each parametric layer, in layer order).
class Network {
 public:
  /// Validates that the layers compose for per-sample input shape `sample_shape`.
  Network(std::vector<LayerSpec> layers, engine::Shape sample_shape);

  /// Weights ~ U(-a, a) with a = sqrt(6 / fan_in) (standard deviation sqrt(2 / fan_in)); biases zero.
  void initialize(std::uint64_t seed);

  engine::Tensor forward(const engine::Tensor& batch) const;

  std::span<engine::Tensor> parameters() noexcept { return params_; }
  std::span<const engine::Tensor> parameters() const noexcept { return params_; }
  /// Index of the layer owning each parameter tensor.
  const std::vector<std::size_t>& parameter_layers() const noexcept { return param_layer_; }
  std::size_t parameter_count() const;

  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const engine::Shape& sample_shape() const noexcept { return sample_shape_; }
  const engine::Shape& output_shape() const noexcept { return output_shape_; }

  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> flat);

  /// Deep copy: the clone shares no parameter storage with this network.
  Network clone() const;

 private:
  std::vector<LayerSpec> layers_;
  engine::Shape sample_shape_;
  engine::Shape output_shape_;
  std::vector<engine::Tensor> params_;
  std::vector<std::size_t> param_layer_;
};

// ---- pose models -------------------------------------------------------------

enum class ModelKind { kMlp, kCnn };
std::string_view model_kind_name(ModelKind kind);

class PoseModel {
 public:
  virtual ~PoseModel() = default;
  PoseModel(PoseModel&&) = default;
  PoseModel& operator=(PoseModel&&) = default;
  PoseModel(const PoseModel&) = delete;
  PoseModel& operator=(const PoseModel&) = delete;

  virtual ModelKind kind() const = 0;
  /// Network input batch for these keypoint sets.
  virtual engine::Tensor encode(std::span<const KeypointSet> batch) const = 0;
  /// Architecture description stored in checkpoints.
  virtual std::string descriptor() const = 0;
  virtual std::unique_ptr<PoseModel> clone() const = 0;

  Network& network() noexcept { return net_; }
  const Network& network() const noexcept { return net_; }

  /// Encodes and runs inference sample by sample without recording gradients, so
  /// each output is bit-identical however the inputs are batched.
  std::vector<PoseAngles> predict(std::span<const KeypointSet> batch) const;

 protected:
  explicit PoseModel(Network net) : net_(std::move(net)) {}
  std::vector<PoseAngles> run_chunked(std::size_t count, const std::function<engine::Tensor(std::size_t, std::size_t)>& make) const;

 private:
  Network net_;
};

/// [N x 3] network output -> poses.
std::vector<PoseAngles> poses_from_tensor(const engine::Tensor& out);
/// Poses -> [N x 3] target tensor.
engine::Tensor poses_to_tensor(std::span<const PoseAngles> poses);

/// dense(15,30)+relu, dense(30,30)+relu, dense(30,3).
class MlpModel final : public PoseModel {
 public:
  static constexpr std::size_t kHidden = 30;

  explicit MlpModel(std::uint64_t seed);

  ModelKind kind() const override { return ModelKind::kMlp; }
  engine::Tensor encode(std::span<const KeypointSet> batch) const override;
  std::string descriptor() const override;
  std::unique_ptr<PoseModel> clone() const override;

  static std::vector<LayerSpec> architecture();

 private:
  explicit MlpModel(Network net) : PoseModel(std::move(net)) {}
  friend MlpModel load_mlp_checkpoint(const std::filesystem::path&);
};

struct CnnWidths {
  std::size_t conv1 = 16;
  std::size_t conv2 = 32;
  std::size_t conv3 = 64;
  std::size_t fc1 = 128;
  bool operator==(const CnnWidths&) const = default;
};

/// Three conv(3x3, pad 1)+relu+maxpool(2) blocks, flatten, fc1+relu, fc2 -> 3.
/// Input is a [5 x H x W] heatmap stack; H and W must be multiples of 8.
class HeatmapCnnModel final : public PoseModel {
 public:
  HeatmapCnnModel(GridSize grid, double sigma, CnnWidths widths, std::uint64_t seed);

  ModelKind kind() const override { return ModelKind::kCnn; }
  engine::Tensor encode(std::span<const KeypointSet> batch) const override;
  std::string descriptor() const override;
  std::unique_ptr<PoseModel> clone() const override;

  GridSize grid() const noexcept { return grid_; }
  double sigma() const noexcept { return sigma_; }
  const CnnWidths& widths() const noexcept { return widths_; }

  /// Stacks pre-rendered maps into a batch; throws DataError on grid mismatch.
  engine::Tensor encode_stacks(std::span<const HeatmapStack> stacks) const;

  static std::vector<LayerSpec> architecture(GridSize grid, const CnnWidths& widths);

 private:
  HeatmapCnnModel(GridSize grid, double sigma, CnnWidths widths, Network net);
  friend HeatmapCnnModel load_cnn_checkpoint(const std::filesystem::path&);

  GridSize grid_;
  double sigma_;
  CnnWidths widths_;
};

std::vector<PoseAngles> mlp_predict(const MlpModel& model, std::span<const MlpFeatures> features);
std::vector<PoseAngles> cnn_predict(const HeatmapCnnModel& model, std::span<const HeatmapStack> stacks);

// ---- checkpoints -----------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "HPKT", u32 LE version, u32 LE descriptor length, UTF-8 descriptor, then
/// every parameter as a little-endian IEEE-754 double in descriptor order.
void save_checkpoint(const PoseModel& model, const std::filesystem::path& path);

/// Any architecture. Throws CheckpointError on bad magic/version, a malformed
/// descriptor, or a payload whose length disagrees with the descriptor.
std::unique_ptr<PoseModel> load_checkpoint(const std::filesystem::path& path);

/// As load_checkpoint, but also throws CheckpointError if the file holds another architecture.
MlpModel load_mlp_checkpoint(const std::filesystem::path& path);
HeatmapCnnModel load_cnn_checkpoint(const std::filesystem::path& path);

}  // namespace headpose
