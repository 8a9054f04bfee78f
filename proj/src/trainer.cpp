#include "headpose/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <thread>

#include "headpose/error.hpp"
#include "headpose/format.hpp"

namespace headpose {

using engine::Tensor;

TrainConfig TrainConfig::defaults(ModelKind kind) {
  TrainConfig c;
  c.model = kind;
  if (kind == ModelKind::kCnn) {
    c.epochs = 1200;
    c.batch_size = 32;
  }
  return c;
}

void TrainConfig::validate() const {
  if (!std::isfinite(lr) || lr < 0.0) throw UsageError("learning rate must be finite and >= 0");
  if (epochs < 1) throw UsageError("epochs must be >= 1");
  if (batch_size < 1) throw UsageError("batch size must be >= 1");
  if (!std::isfinite(weight_decay) || weight_decay < 0.0) throw UsageError("weight decay must be finite and >= 0");
  if (model == ModelKind::kCnn && !(sigma > 0.0)) throw UsageError("sigma must be positive");
}

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,train_loss,val_mae\n";
  for (std::size_t e = 0; e < train_loss.size(); ++e) {
    out += std::to_string(e + 1) + "," + format_double(train_loss[e]) + ",";
    if (e < val_mae.size() && val_mae[e]) out += format_double(*val_mae[e]);
    out += "\n";
  }
  return out;
}

std::unique_ptr<PoseModel> make_model(const TrainConfig& config) {
  const std::uint64_t init_seed = derive_seed(config.seed, 0x1417);
  if (config.model == ModelKind::kMlp) return std::make_unique<MlpModel>(init_seed);
  return std::make_unique<HeatmapCnnModel>(config.grid, config.sigma, config.widths, init_seed);
}

std::vector<PoseAngles> predict_dataset(const PoseModel& model, const Dataset& dataset) {
  std::vector<KeypointSet> kps;
  kps.reserve(dataset.size());
  for (const LabeledSample& s : dataset) kps.push_back(s.keypoints);
  return model.predict(kps);
}

MaeReport evaluate(const PoseModel& model, const Dataset& dataset) {
  std::vector<PoseAngles> gts;
  gts.reserve(dataset.size());
  for (const LabeledSample& s : dataset) gts.push_back(s.pose);
  return mae_report(predict_dataset(model, dataset), gts);
}

namespace {

void require_finite_parameters(const PoseModel& model, std::size_t epoch, double lr) {
  for (const Tensor& p : model.network().parameters()) {
    for (double v : p.values()) {
      if (!std::isfinite(v)) {
        throw NumericError("non-finite parameter after epoch " + std::to_string(epoch) + " (lr " + format_double(lr) + ")");
      }
    }
  }
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset* val_set,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw DataError("training set is empty");

  TrainResult result{make_model(config), {}};
  PoseModel& model = *result.model;
  auto params = model.network().parameters();
  engine::AdamState adam =
      engine::make_adam_state(params, {.lr = config.lr, .weight_decay = config.weight_decay});

  std::vector<std::size_t> order(train_set.size());
  std::vector<KeypointSet> batch_kps;
  std::vector<PoseAngles> batch_pose;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (config.shuffle) {
      std::mt19937_64 rng(derive_seed(config.seed, 0x5EED0000ULL + epoch));
      std::shuffle(order.begin(), order.end(), rng);
    }
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      batch_kps.clear();
      batch_pose.clear();
      for (std::size_t i = begin; i < end; ++i) {
        batch_kps.push_back(train_set[order[i]].keypoints);
        batch_pose.push_back(train_set[order[i]].pose);
      }
      try {
        const Tensor pred = model.network().forward(model.encode(batch_kps));
        const Tensor loss = engine::mse_loss(pred, poses_to_tensor(batch_pose));
        engine::backward(loss, params);
        engine::adam_step(params, adam);
        loss_sum += loss.item() * static_cast<double>(end - begin);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + " (lr " + format_double(config.lr) + "): " + e.what());
      }
    }
    const double mean_loss = loss_sum / static_cast<double>(train_set.size());
    if (!std::isfinite(mean_loss)) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + " (lr " + format_double(config.lr) +
                         "): non-finite loss");
    }
    require_finite_parameters(model, epoch, config.lr);
    result.history.train_loss.push_back(mean_loss);
    if (val_set && !val_set->empty()) {
      result.history.val_mae.emplace_back(evaluate(model, *val_set).overall);
    } else {
      result.history.val_mae.emplace_back(std::nullopt);
    }
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  return result;
}

// ---- protocols ---------------------------------------------------------------

std::string ProtocolReport::to_csv() const {
  auto row = [](const std::string& label, const MaeReport& m) {
    return label + "," + format_double(m.yaw) + "," + format_double(m.pitch) + "," + format_double(m.roll) + "," +
           format_double(m.overall) + "\n";
  };
  std::string out = "fold,yaw_mae,pitch_mae,roll_mae,overall\n";
  for (const FoldReport& f : folds) out += row(std::to_string(f.fold), f.mae);
  out += row("aggregate", aggregate);
  return out;
}

MaeReport aggregate_reports(const std::vector<FoldReport>& folds, Aggregation aggregation) {
  if (folds.empty()) throw DataError("no folds to aggregate");
  MaeReport agg;
  double total = 0.0;
  for (const FoldReport& f : folds) {
    const double w = aggregation == Aggregation::kSizeWeighted ? static_cast<double>(f.test_size) : 1.0;
    agg.yaw += w * f.mae.yaw;
    agg.pitch += w * f.mae.pitch;
    agg.roll += w * f.mae.roll;
    total += w;
  }
  agg.yaw /= total;
  agg.pitch /= total;
  agg.roll /= total;
  agg.overall = (agg.yaw + agg.pitch + agg.roll) / 3.0;
  return agg;
}

ProtocolReport run_protocol(const Dataset& dataset, const FoldPlan& plan, const FitFunction& fit,
                            const ProtocolOptions& options) {
  const std::vector<std::size_t> fold_of = plan.folds_of(dataset);
  const std::size_t n_tests = plan.test_folds.size();
  if (n_tests == 0) throw DataError("fold plan has no test folds");

  std::vector<FoldReport> reports(n_tests);
  std::vector<std::exception_ptr> errors(n_tests);
  auto run_one = [&](std::size_t t) {
    const std::size_t fold = plan.test_folds[t];
    try {
      Dataset train_split, test_split;
      for (std::size_t i = 0; i < dataset.size(); ++i) {
        (fold_of[i] == fold ? test_split : train_split).push_back(dataset[i]);
      }
      if (test_split.empty()) throw DataError("test fold is empty");
      if (train_split.empty()) throw DataError("training split is empty");
      const Predictor predictor = fit(train_split, fold);
      const std::vector<PoseAngles> preds = predictor(test_split);
      std::vector<PoseAngles> gts;
      gts.reserve(test_split.size());
      for (const LabeledSample& s : test_split) gts.push_back(s.pose);
      reports[t] = {fold, test_split.size(), mae_report(preds, gts)};
    } catch (const Error& e) {
      errors[t] = make_error(e.kind(), "fold " + std::to_string(fold) + ": " + e.what());
    } catch (...) {
      errors[t] = std::current_exception();
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(options.threads, 1, n_tests);
  if (workers == 1) {
    for (std::size_t t = 0; t < n_tests; ++t) run_one(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t t = next++; t < n_tests; t = next++) run_one(t);
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  ProtocolReport report;
  report.aggregate = aggregate_reports(reports, options.aggregation);
  report.folds = std::move(reports);
  return report;
}

ProtocolReport run_protocol(const Dataset& dataset, const FoldPlan& plan, const TrainConfig& config,
                            const ProtocolOptions& options) {
  config.validate();
  // Indexed by fold; each worker writes only its own slot.
  std::vector<TrainHistory> by_fold(plan.k);
  ProtocolReport report = run_protocol(
      dataset, plan,
      [&config, &by_fold](const Dataset& train_split, std::size_t fold) -> Predictor {
        TrainConfig fold_config = config;
        fold_config.seed = derive_seed(config.seed, 0xF0000000ULL + fold);
        TrainResult result = train(fold_config, train_split);
        by_fold.at(fold) = std::move(result.history);
        std::shared_ptr<PoseModel> model = std::move(result.model);
        return [model](const Dataset& test) { return predict_dataset(*model, test); };
      },
      options);
  for (std::size_t fold : plan.test_folds) report.histories.push_back(std::move(by_fold.at(fold)));
  return report;
}

}  // namespace headpose
