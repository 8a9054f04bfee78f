#pragma once

// Reverse-mode automatic differentiation over dense 64-bit tensors, with the
// handful of layers, the loss and the optimizer the pose regressors need.
//
// A Tensor is a cheap handle onto a shared graph node. Ops record their
// inputs and a backward closure; backward() walks the record in reverse
// topological order. Gradients are overwritten (zeroed then accumulated) on
// every backward() call, never carried across calls.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

namespace headpose::engine {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);

namespace detail {

void* pool_allocate(std::size_t bytes);
void pool_deallocate(void* p, std::size_t bytes) noexcept;

/// Recycles freed buffers per thread by exact size, so the identical
/// activation shapes of successive batches reuse already-faulted memory.
/// Elements are default-initialized (left uninitialized for doubles).
template <class T>
struct PoolAllocator {
  using value_type = T;
  PoolAllocator() = default;
  template <class U>
  PoolAllocator(const PoolAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(pool_allocate(n * sizeof(T))); }
  void deallocate(T* p, std::size_t n) noexcept { pool_deallocate(p, n * sizeof(T)); }
  template <class U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
  template <class U>
  bool operator==(const PoolAllocator<U>&) const noexcept {
    return true;
  }
};

}  // namespace detail

using Buffer = std::vector<double, detail::PoolAllocator<double>>;

namespace detail {
struct Node {
  Shape shape;
  Buffer values;
  Buffer grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Propagates this node's grad into its inputs' grads.
  std::function<void(Node&)> backward;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::span<const double> values, bool requires_grad = false);
  Tensor(Shape shape, Buffer values, bool requires_grad = false);
  Tensor(Shape shape, std::initializer_list<double> values, bool requires_grad = false)
      : Tensor(std::move(shape), std::span<const double>(values.begin(), values.size()), requires_grad) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const { return node_->values.size(); }
  bool requires_grad() const;

  std::span<const double> values() const;
  /// Leaf tensors only; mutating an op output would desynchronize the graph.
  std::span<double> mutable_values();

  /// Empty until the tensor has taken part in a backward() call.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();

  double item() const;

  /// Deep copy of values and shape into a fresh leaf.
  Tensor clone() const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// While alive on a thread, ops on that thread record no backward graph
/// (outputs are plain leaves). Used for inference.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Throws NumericError naming `op` if any entry is NaN or infinite.
void check_finite(std::span<const double> values, std::string_view op);

// ---- ops -------------------------------------------------------------------

/// input [N x in], weights [out x in], bias [out] -> [N x out].
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Cross-correlation. input [N x Cin x H x W], kernels [Cout x Cin x k x k], bias [Cout].
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, Conv2dParams params);

Tensor relu(const Tensor& input);

/// Non-overlapping max pooling (stride == window). The window must divide H and W
/// exactly. Ties route the gradient to the first cell in row-major window order.
Tensor maxpool2d(const Tensor& input, std::size_t window);

/// [N x ...] -> [N x prod(...)].
Tensor flatten(const Tensor& input);

Tensor sum(const Tensor& input);

/// sum_i input_i * weights_i with constant weights (used for projecting a layer
/// output onto a random direction when checking gradients).
Tensor weighted_sum(const Tensor& input, std::span<const double> weights);

/// Mean over samples of the per-sample mean squared error across columns.
/// For [N x 3] pose batches this is (1/N) sum_n (1/3) sum_i (pred - target)^2.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

/// Overwrites the grads of every node reachable from `loss` and of every tensor
/// in `params`; params not reachable from the loss end up with an all-zero grad.
void backward(const Tensor& loss, std::span<const Tensor> params = {});

// ---- optimizer -------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Coupled L2: g <- g + weight_decay * theta before the moment updates.
  double weight_decay = 0.0;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

AdamState make_adam_state(std::span<const Tensor> params, const AdamConfig& config);

/// One bias-corrected Adam update using each parameter's current grad.
/// With lr == 0 the parameters are left bit-identical (moments still advance).
void adam_step(std::span<Tensor> params, AdamState& state);

// ---- gradient checking -----------------------------------------------------

enum class LayerKind { kDense, kConv2d, kRelu, kMaxPool2d, kMseLoss };

inline constexpr LayerKind kAllLayerKinds[] = {LayerKind::kDense, LayerKind::kConv2d, LayerKind::kRelu,
                                               LayerKind::kMaxPool2d, LayerKind::kMseLoss};

std::string_view layer_kind_name(LayerKind kind);

struct GradcheckOptions {
  double step = 1e-5;
  /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// Harness sanity hook: negate analytic gradients before comparing.
  bool flip_sign = false;
};

struct GradcheckResult {
  LayerKind kind;
  std::uint64_t seed;
  double max_rel_error;
  std::size_t entries_checked;
};

/// Builds a randomly shaped instance of `kind` from `seed`, projects its output
/// onto a random direction, and compares backprop against central differences
/// for every input and parameter entry.
GradcheckResult gradcheck(LayerKind kind, std::uint64_t seed, const GradcheckOptions& options = {});

}  // namespace headpose::engine
