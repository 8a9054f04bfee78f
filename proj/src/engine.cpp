#include "headpose/engine.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <cstdlib>
#include <new>
#include <unordered_map>
#include <unordered_set>

#include "headpose/error.hpp"

namespace headpose::engine {

namespace {

using detail::Node;
using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using ConstMapRM = Eigen::Map<const MatRM>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;
using MapVec = Eigen::Map<Eigen::VectorXd>;

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

thread_local bool g_grad_enabled = true;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

Tensor make_output(Shape shape, Buffer values, std::vector<std::shared_ptr<Node>> inputs,
                   std::function<void(Node&)> backward_fn, std::string_view op) {
  check_finite(values, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                                      [](const auto& in) { return in->requires_grad; });
  if (node->requires_grad) {
    node->inputs = std::move(inputs);
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void ensure_grad(Node& n) {
  if (n.grad.size() != n.values.size()) n.grad.assign(n.values.size(), 0.0);
}

// Output columns [lo, hi) whose input column ox * stride + kx - pad lies inside [0, w).
std::pair<std::size_t, std::size_t> valid_columns(std::size_t w, std::size_t kx, std::size_t stride, std::size_t pad,
                                                  std::size_t wo) {
  const auto first = static_cast<std::ptrdiff_t>(pad) - static_cast<std::ptrdiff_t>(kx);
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const std::ptrdiff_t lo = first <= 0 ? 0 : (first + s - 1) / s;
  const std::ptrdiff_t limit = static_cast<std::ptrdiff_t>(w) + first;  // ox * stride < limit
  std::ptrdiff_t hi = limit <= 0 ? 0 : (limit + s - 1) / s;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(wo));
  return {static_cast<std::size_t>(std::max<std::ptrdiff_t>(lo, 0)),
          static_cast<std::size_t>(std::max<std::ptrdiff_t>(hi, lo))};
}

// img [C x H x W] -> cols [(C*k*k) x (Ho*Wo)]
void im2col(const double* img, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, double* cols) {
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = cols + ((ch * k + ky) * k + kx) * ho * wo;
        const auto [lo, hi] = valid_columns(w, kx, stride, pad, wo);
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          double* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h) || lo >= hi) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = img + (ch * h + static_cast<std::size_t>(iy)) * w + (lo * stride + kx - pad);
          std::fill(dst, dst + lo, 0.0);
          if (stride == 1) {
            std::copy(src, src + (hi - lo), dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[(ox - lo) * stride];
          }
          std::fill(dst + hi, dst + wo, 0.0);
        }
      }
    }
  }
}

// Accumulating inverse of im2col.
void col2im(const double* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, double* img) {
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = cols + ((ch * k + ky) * k + kx) * ho * wo;
        const auto [lo, hi] = valid_columns(w, kx, stride, pad, wo);
        if (lo >= hi) continue;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          double* dst = img + (ch * h + static_cast<std::size_t>(iy)) * w + (lo * stride + kx - pad);
          const double* src = row + oy * wo;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[(ox - lo) * stride] += src[ox];
        }
      }
    }
  }
}

}  // namespace

namespace detail {

namespace {

// Cached bytes per thread beyond which freed buffers go back to the system.
constexpr std::size_t kPoolCapBytes = std::size_t{1} << 31;

struct BufferPool {
  std::unordered_map<std::size_t, std::vector<void*>> free_lists;
  std::size_t cached_bytes = 0;
  BufferPool();
  ~BufferPool();
};

enum class PoolState : unsigned char { kUnborn, kAlive, kDead };
thread_local PoolState t_pool_state = PoolState::kUnborn;
thread_local BufferPool t_pool;

BufferPool::BufferPool() { t_pool_state = PoolState::kAlive; }

BufferPool::~BufferPool() {
  t_pool_state = PoolState::kDead;
  for (auto& [bytes, list] : free_lists) {
    for (void* p : list) std::free(p);
  }
}

}  // namespace

void* pool_allocate(std::size_t bytes) {
  if (bytes == 0) bytes = 1;
  // Touching t_pool constructs it on first use; after thread-exit destruction fall back to malloc.
  if (t_pool_state != PoolState::kDead) {
    auto it = t_pool.free_lists.find(bytes);
    if (it != t_pool.free_lists.end() && !it->second.empty()) {
      void* ptr = it->second.back();
      it->second.pop_back();
      t_pool.cached_bytes -= bytes;
      return ptr;
    }
  }
  void* ptr = std::aligned_alloc(64, (bytes + 63) / 64 * 64);
  if (!ptr) throw std::bad_alloc();
  return ptr;
}

void pool_deallocate(void* ptr, std::size_t bytes) noexcept {
  if (!ptr) return;
  if (bytes == 0) bytes = 1;
  if (t_pool_state == PoolState::kAlive && t_pool.cached_bytes + bytes <= kPoolCapBytes) {
    try {
      t_pool.free_lists[bytes].push_back(ptr);
      t_pool.cached_bytes += bytes;
      return;
    } catch (...) {
    }
  }
  std::free(ptr);
}

}  // namespace detail

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_finite(std::span<const double> values, std::string_view op) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError("non-finite value in " + std::string(op) + " output at flat index " + std::to_string(i));
    }
  }
}

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, std::span<const double> values, bool requires_grad)
    : Tensor(std::move(shape), Buffer(values.begin(), values.end()), requires_grad) {}

Tensor::Tensor(Shape shape, Buffer values, bool requires_grad) : node_(std::make_shared<Node>()) {
  require(!shape.empty(), "tensor shape must have at least one extent");
  for (auto d : shape) require(d > 0, "tensor extents must be positive, got " + shape_str(shape));
  require(numel(shape) == values.size(), "tensor shape " + shape_str(shape) + " does not match " +
                                             std::to_string(values.size()) + " values");
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), Buffer(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }
bool Tensor::requires_grad() const { return node_->requires_grad; }
std::span<const double> Tensor::values() const { return node_->values; }

std::span<double> Tensor::mutable_values() {
  require(node_->inputs.empty() && !node_->backward, "mutable_values() on a non-leaf tensor");
  return node_->values;
}

std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() {
  ensure_grad(*node_);
  return node_->grad;
}

double Tensor::item() const {
  require(size() == 1, "item() on a tensor of shape " + shape_str(shape()));
  return node_->values[0];
}

Tensor Tensor::clone() const { return Tensor(node_->shape, node_->values, node_->requires_grad); }

// ---- ops -------------------------------------------------------------------

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require(input.shape().size() == 2 && weights.shape().size() == 2 && bias.shape().size() == 1,
          "dense expects input [N x in], weights [out x in], bias [out]");
  const std::size_t n = input.shape()[0], fin = input.shape()[1], fout = weights.shape()[0];
  require(weights.shape()[1] == fin && bias.shape()[0] == fout,
          "dense shape mismatch: input " + shape_str(input.shape()) + ", weights " + shape_str(weights.shape()) +
              ", bias " + shape_str(bias.shape()));
  Buffer out(n * fout);
  ConstMapRM x(input.values().data(), n, fin);
  ConstMapRM wt(weights.values().data(), fout, fin);
  ConstMapVec b(bias.values().data(), fout);
  MapRM y(out.data(), n, fout);
  y.noalias() = x * wt.transpose();
  y.rowwise() += b.transpose();

  auto backward_fn = [n, fin, fout](Node& self) {
    Node& xin = *self.inputs[0];
    Node& w = *self.inputs[1];
    Node& bn = *self.inputs[2];
    ConstMapRM dy(self.grad.data(), n, fout);
    if (xin.requires_grad) {
      ensure_grad(xin);
      MapRM(xin.grad.data(), n, fin).noalias() += dy * ConstMapRM(w.values.data(), fout, fin);
    }
    if (w.requires_grad) {
      ensure_grad(w);
      MapRM(w.grad.data(), fout, fin).noalias() += dy.transpose() * ConstMapRM(xin.values.data(), n, fin);
    }
    if (bn.requires_grad) {
      ensure_grad(bn);
      MapVec(bn.grad.data(), fout) += dy.colwise().sum().transpose();
    }
  };
  return make_output({n, fout}, std::move(out), {input.node(), weights.node(), bias.node()}, backward_fn, "dense");
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, Conv2dParams params) {
  require(input.shape().size() == 4 && kernels.shape().size() == 4 && bias.shape().size() == 1,
          "conv2d expects input [N x C x H x W], kernels [Cout x Cin x k x k], bias [Cout]");
  const auto& is = input.shape();
  const auto& ks = kernels.shape();
  const std::size_t n = is[0], cin = is[1], h = is[2], w = is[3];
  const std::size_t cout = ks[0], k = ks[2];
  require(ks[1] == cin && ks[3] == k && bias.shape()[0] == cout,
          "conv2d shape mismatch: input " + shape_str(is) + ", kernels " + shape_str(ks) + ", bias " +
              shape_str(bias.shape()));
  require(params.stride > 0, "conv2d stride must be positive");
  const std::size_t stride = params.stride, pad = params.padding;
  require(h + 2 * pad >= k && w + 2 * pad >= k && (h + 2 * pad - k) % stride == 0 && (w + 2 * pad - k) % stride == 0,
          "conv2d output extent is not a positive integer for input " + shape_str(is) + ", kernel " +
              std::to_string(k) + ", stride " + std::to_string(stride) + ", padding " + std::to_string(pad));
  const std::size_t ho = (h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (w + 2 * pad - k) / stride + 1;
  const std::size_t patch = cin * k * k;
  const std::size_t spatial = ho * wo;

  Buffer out(n * cout * spatial);
  // Columns are kept for the backward pass when a kernel gradient will be needed.
  const bool keep_cols = g_grad_enabled && kernels.requires_grad();
  auto cols = std::make_shared<Buffer>(patch * spatial * (keep_cols ? n : 1));
  ConstMapRM kmat(kernels.values().data(), cout, patch);
  ConstMapVec b(bias.values().data(), cout);
  for (std::size_t s = 0; s < n; ++s) {
    double* c = cols->data() + (keep_cols ? s * patch * spatial : 0);
    im2col(input.values().data() + s * cin * h * w, cin, h, w, k, stride, pad, ho, wo, c);
    MapRM y(out.data() + s * cout * spatial, cout, spatial);
    y.noalias() = kmat * ConstMapRM(c, patch, spatial);
    y.colwise() += b;
  }
  if (!keep_cols) cols.reset();

  auto backward_fn = [=](Node& self) {
    Node& xin = *self.inputs[0];
    Node& kn = *self.inputs[1];
    Node& bn = *self.inputs[2];
    Buffer col_buf;
    Buffer dcol_buf;
    if (kn.requires_grad) ensure_grad(kn);
    if (bn.requires_grad) ensure_grad(bn);
    if (xin.requires_grad) {
      ensure_grad(xin);
      dcol_buf.resize(patch * spatial);
    }
    ConstMapRM kv(kn.values.data(), cout, patch);
    for (std::size_t s = 0; s < n; ++s) {
      ConstMapRM dy(self.grad.data() + s * cout * spatial, cout, spatial);
      if (kn.requires_grad) {
        const double* c = nullptr;
        if (cols) {
          c = cols->data() + s * patch * spatial;
        } else {
          col_buf.resize(patch * spatial);
          im2col(xin.values.data() + s * cin * h * w, cin, h, w, k, stride, pad, ho, wo, col_buf.data());
          c = col_buf.data();
        }
        MapRM(kn.grad.data(), cout, patch).noalias() += dy * ConstMapRM(c, patch, spatial).transpose();
      }
      if (bn.requires_grad) MapVec(bn.grad.data(), cout) += dy.rowwise().sum();
      if (xin.requires_grad) {
        MapRM dcols(dcol_buf.data(), patch, spatial);
        dcols.noalias() = kv.transpose() * dy;
        col2im(dcol_buf.data(), cin, h, w, k, stride, pad, ho, wo, xin.grad.data() + s * cin * h * w);
      }
    }
  };
  return make_output({n, cout, ho, wo}, std::move(out), {input.node(), kernels.node(), bias.node()}, backward_fn,
                     "conv2d");
}

Tensor relu(const Tensor& input) {
  const auto in = input.values();
  Buffer out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  auto backward_fn = [](Node& self) {
    Node& xin = *self.inputs[0];
    ensure_grad(xin);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (xin.values[i] > 0.0) xin.grad[i] += self.grad[i];
    }
  };
  return make_output(input.shape(), std::move(out), {input.node()}, backward_fn, "relu");
}

Tensor maxpool2d(const Tensor& input, std::size_t window) {
  const auto& is = input.shape();
  require(is.size() == 4, "maxpool2d expects [N x C x H x W], got " + shape_str(is));
  require(window > 0 && is[2] % window == 0 && is[3] % window == 0,
          "maxpool2d window " + std::to_string(window) + " does not divide spatial extent of " + shape_str(is));
  const std::size_t planes = is[0] * is[1], h = is[2], w = is[3];
  const std::size_t ho = h / window, wo = w / window;
  Buffer out(planes * ho * wo);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto vals = input.values();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = p * h * w + (oy * window) * w + ox * window;
        for (std::size_t dy = 0; dy < window; ++dy) {
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = p * h * w + (oy * window + dy) * w + ox * window + dx;
            if (vals[idx] > vals[best]) best = idx;
          }
        }
        const std::size_t o = (p * ho + oy) * wo + ox;
        out[o] = vals[best];
        (*argmax)[o] = best;
      }
    }
  }
  auto backward_fn = [argmax](Node& self) {
    Node& xin = *self.inputs[0];
    ensure_grad(xin);
    for (std::size_t o = 0; o < self.grad.size(); ++o) xin.grad[(*argmax)[o]] += self.grad[o];
  };
  return make_output({is[0], is[1], ho, wo}, std::move(out), {input.node()}, backward_fn, "maxpool2d");
}

Tensor flatten(const Tensor& input) {
  const auto& is = input.shape();
  require(is.size() >= 2, "flatten expects a batched tensor, got " + shape_str(is));
  Buffer out(input.values().begin(), input.values().end());
  auto backward_fn = [](Node& self) {
    Node& xin = *self.inputs[0];
    ensure_grad(xin);
    for (std::size_t i = 0; i < self.grad.size(); ++i) xin.grad[i] += self.grad[i];
  };
  return make_output({is[0], input.size() / is[0]}, std::move(out), {input.node()}, backward_fn, "flatten");
}

Tensor sum(const Tensor& input) {
  const auto vals = input.values();
  const double total = std::accumulate(vals.begin(), vals.end(), 0.0);
  auto backward_fn = [](Node& self) {
    Node& xin = *self.inputs[0];
    ensure_grad(xin);
    for (double& g : xin.grad) g += self.grad[0];
  };
  return make_output({1}, Buffer{total}, {input.node()}, backward_fn, "sum");
}

Tensor weighted_sum(const Tensor& input, std::span<const double> weights) {
  require(weights.size() == input.size(), "weighted_sum: " + std::to_string(weights.size()) +
                                              " weights for tensor " + shape_str(input.shape()));
  const auto vals = input.values();
  double total = 0.0;
  for (std::size_t i = 0; i < vals.size(); ++i) total += vals[i] * weights[i];
  auto backward_fn = [w = std::vector<double>(weights.begin(), weights.end())](Node& self) {
    Node& xin = *self.inputs[0];
    ensure_grad(xin);
    for (std::size_t i = 0; i < w.size(); ++i) xin.grad[i] += self.grad[0] * w[i];
  };
  return make_output({1}, Buffer{total}, {input.node()}, backward_fn, "weighted_sum");
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require(pred.shape() == target.shape() && pred.shape().size() == 2,
          "mse_loss shape mismatch: pred " + shape_str(pred.shape()) + ", target " + shape_str(target.shape()));
  const std::size_t n = pred.shape()[0], d = pred.shape()[1];
  const auto p = pred.values();
  const auto t = target.values();
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double row = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = p[r * d + c] - t[r * d + c];
      row += diff * diff;
    }
    total += row / static_cast<double>(d);
  }
  total /= static_cast<double>(n);
  const double scale = 2.0 / static_cast<double>(n * d);
  auto backward_fn = [scale](Node& self) {
    Node& pn = *self.inputs[0];
    Node& tn = *self.inputs[1];
    const double g = self.grad[0] * scale;
    if (pn.requires_grad) {
      ensure_grad(pn);
      for (std::size_t i = 0; i < pn.values.size(); ++i) pn.grad[i] += g * (pn.values[i] - tn.values[i]);
    }
    if (tn.requires_grad) {
      ensure_grad(tn);
      for (std::size_t i = 0; i < tn.values.size(); ++i) tn.grad[i] -= g * (pn.values[i] - tn.values[i]);
    }
  };
  return make_output({1}, Buffer{total}, {pred.node(), target.node()}, backward_fn, "mse_loss");
}

void backward(const Tensor& loss, std::span<const Tensor> params) {
  require(loss.defined() && loss.size() == 1, "backward() needs a scalar loss");
  for (const Tensor& p : params) {
    auto& g = p.node()->grad;
    g.assign(p.size(), 0.0);
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; the record is a DAG because nodes only point at
  // nodes that existed when they were created.
  std::vector<Node*> order;
  std::unordered_set<Node*> done;
  std::unordered_set<Node*> on_stack;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  on_stack.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (!child->requires_grad || done.contains(child)) continue;
      if (on_stack.contains(child)) throw std::logic_error("cycle in computation record");
      on_stack.insert(child);
      stack.emplace_back(child, 0);
    } else {
      done.insert(node);
      on_stack.erase(node);
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* node : order) node->grad.assign(node->values.size(), 0.0);
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward) node->backward(*node);
  }
}

// ---- Adam ------------------------------------------------------------------

AdamState make_adam_state(std::span<const Tensor> params, const AdamConfig& config) {
  if (!(config.lr >= 0.0) || !std::isfinite(config.lr)) throw UsageError("Adam learning rate must be >= 0");
  if (!(config.beta1 >= 0.0 && config.beta1 < 1.0 && config.beta2 >= 0.0 && config.beta2 < 1.0)) {
    throw UsageError("Adam betas must lie in [0, 1)");
  }
  AdamState state;
  state.config = config;
  for (const Tensor& p : params) {
    state.first_moment.emplace_back(p.size(), 0.0);
    state.second_moment.emplace_back(p.size(), 0.0);
  }
  return state;
}

void adam_step(std::span<Tensor> params, AdamState& state) {
  require(params.size() == state.first_moment.size(), "adam_step: parameter count does not match optimizer state");
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    require(m.size() == p.size(), "adam_step: moment shape does not match parameter " + std::to_string(i));
    const auto grad = p.grad();
    require(grad.size() == p.size(), "adam_step: parameter " + std::to_string(i) + " has no gradient");
    auto theta = p.mutable_values();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = grad[j] + c.weight_decay * theta[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      if (c.lr != 0.0) theta[j] -= c.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.epsilon);
    }
  }
}

}  // namespace headpose::engine
