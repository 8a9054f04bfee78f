#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "headpose/engine.hpp"

namespace headpose::engine {

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool2d: return "maxpool2d";
    case LayerKind::kMseLoss: return "mse_loss";
  }
  return "?";
}

namespace {

struct Case {
  std::vector<Tensor> inputs;  // all checked
  std::function<Tensor(const std::vector<Tensor>&)> loss;
};

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor random_tensor(std::mt19937_64& rng, Shape shape) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

std::vector<double> random_direction(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(n);
  for (double& x : w) x = u(rng);
  return w;
}

// Keeps every value at least `margin` away from the relu kink.
Tensor away_from_zero(std::mt19937_64& rng, Shape shape, double margin) {
  std::uniform_real_distribution<double> mag(margin, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

// Resamples until every pooling window has a unique maximum by at least `gap`.
Tensor untied_pool_input(std::mt19937_64& rng, Shape shape, std::size_t window, double gap) {
  const std::size_t planes = shape[0] * shape[1], h = shape[2], w = shape[3];
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(numel(shape));
  for (;;) {
    for (double& x : v) x = u(rng);
    bool ok = true;
    for (std::size_t p = 0; p < planes && ok; ++p) {
      for (std::size_t oy = 0; oy < h / window && ok; ++oy) {
        for (std::size_t ox = 0; ox < w / window && ok; ++ox) {
          std::vector<double> cell;
          for (std::size_t dy = 0; dy < window; ++dy)
            for (std::size_t dx = 0; dx < window; ++dx)
              cell.push_back(v[p * h * w + (oy * window + dy) * w + ox * window + dx]);
          std::sort(cell.rbegin(), cell.rend());
          if (cell.size() > 1 && cell[0] - cell[1] < gap) ok = false;
        }
      }
    }
    if (ok) return Tensor(std::move(shape), std::move(v), true);
  }
}

Case make_case(LayerKind kind, std::mt19937_64& rng) {
  switch (kind) {
    case LayerKind::kDense: {
      const std::size_t n = pick(rng, 1, 4), fin = pick(rng, 1, 6), fout = pick(rng, 1, 5);
      auto dir = random_direction(rng, n * fout);
      return {{random_tensor(rng, {n, fin}), random_tensor(rng, {fout, fin}), random_tensor(rng, {fout})},
              [dir](const std::vector<Tensor>& t) { return weighted_sum(dense(t[0], t[1], t[2]), dir); }};
    }
    case LayerKind::kConv2d: {
      const std::size_t n = pick(rng, 1, 2), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
      const std::size_t k = pick(rng, 1, 3), stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
      const std::size_t ho = pick(rng, 1, 4), wo = pick(rng, 1, 4);
      // Smallest input with the chosen output extent; grow it until it is non-empty.
      std::size_t h = (ho - 1) * stride + k, w = (wo - 1) * stride + k;
      std::size_t p = std::min({pad, (h - 1) / 2, (w - 1) / 2});
      h -= 2 * p;
      w -= 2 * p;
      auto dir = random_direction(rng, n * cout * ho * wo);
      return {{random_tensor(rng, {n, cin, h, w}), random_tensor(rng, {cout, cin, k, k}), random_tensor(rng, {cout})},
              [dir, stride, p](const std::vector<Tensor>& t) {
                return weighted_sum(conv2d(t[0], t[1], t[2], {stride, p}), dir);
              }};
    }
    case LayerKind::kRelu: {
      Shape shape{pick(rng, 1, 3), pick(rng, 1, 6)};
      auto dir = random_direction(rng, numel(shape));
      return {{away_from_zero(rng, shape, 0.05)},
              [dir](const std::vector<Tensor>& t) { return weighted_sum(relu(t[0]), dir); }};
    }
    case LayerKind::kMaxPool2d: {
      const std::size_t window = pick(rng, 2, 3);
      Shape shape{pick(rng, 1, 2), pick(rng, 1, 2), window * pick(rng, 1, 3), window * pick(rng, 1, 3)};
      auto dir = random_direction(rng, shape[0] * shape[1] * (shape[2] / window) * (shape[3] / window));
      return {{untied_pool_input(rng, shape, window, 1e-3)},
              [dir, window](const std::vector<Tensor>& t) { return weighted_sum(maxpool2d(t[0], window), dir); }};
    }
    case LayerKind::kMseLoss: {
      Shape shape{pick(rng, 1, 4), 3};
      return {{random_tensor(rng, shape), random_tensor(rng, shape)},
              [](const std::vector<Tensor>& t) { return mse_loss(t[0], t[1]); }};
    }
  }
  return {};
}

}  // namespace

GradcheckResult gradcheck(LayerKind kind, std::uint64_t seed, const GradcheckOptions& options) {
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(kind) + 1)));
  Case c = make_case(kind, rng);

  Tensor loss = c.loss(c.inputs);
  backward(loss, c.inputs);
  std::vector<std::vector<double>> analytic;
  for (const Tensor& t : c.inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  GradcheckResult result{kind, seed, 0.0, 0};
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    auto vals = c.inputs[i].mutable_values();
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double orig = vals[j];
      vals[j] = orig + options.step;
      const double up = c.loss(c.inputs).item();
      vals[j] = orig - options.step;
      const double down = c.loss(c.inputs).item();
      vals[j] = orig;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = options.flip_sign ? -analytic[i][j] : analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
      ++result.entries_checked;
    }
  }
  return result;
}

}  // namespace headpose::engine
