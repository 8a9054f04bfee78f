#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "headpose/core.hpp"
#include "headpose/data.hpp"
#include "headpose/heatmap.hpp"
#include "headpose/models.hpp"

namespace headpose {

struct TrainConfig {
  ModelKind model = ModelKind::kMlp;
  double lr = 1e-5;
  std::size_t epochs = 500;
  std::size_t batch_size = 64;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  GridSize grid = kDefaultGrid;
  double sigma = kDefaultSigma;
  CnnWidths widths{};
  bool shuffle = true;

  /// MLP: lr 1e-5, 500 epochs, batch 64, weight decay 1e-4.
  /// CNN: lr 1e-5, 1200 epochs, batch 32, weight decay 1e-4.
  static TrainConfig defaults(ModelKind kind);

  /// lr must be finite and >= 0 (0 is a valid null update); epochs, batch >= 1.
  void validate() const;
};

struct TrainHistory {
  std::vector<double> train_loss;                // mean per-sample loss of each epoch, deg^2
  std::vector<std::optional<double>> val_mae;    // overall MAE on the validation set, if any

  /// "epoch,train_loss,val_mae" with 1-based epochs; val_mae is blank without a validation set.
  std::string to_csv() const;
};

struct TrainResult {
  std::unique_ptr<PoseModel> model;
  TrainHistory history;
};

/// Fresh model for `config`, initialized from a seed derived from config.seed.
std::unique_ptr<PoseModel> make_model(const TrainConfig& config);

using EpochCallback = std::function<void(std::size_t epoch, double train_loss)>;

/// Mini-batch Adam on the mean-squared angle error. The shuffle order of each
/// epoch derives from (seed, epoch); the last partial batch is kept. Throws
/// NumericError with epoch, batch and lr when the loss or a parameter turns
/// non-finite.
TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset* val_set = nullptr,
                  const EpochCallback& on_epoch = {});

/// Inference over a whole dataset in dataset order.
std::vector<PoseAngles> predict_dataset(const PoseModel& model, const Dataset& dataset);
MaeReport evaluate(const PoseModel& model, const Dataset& dataset);

// ---- protocols ---------------------------------------------------------------

enum class Aggregation { kSizeWeighted, kUnweighted };

struct ProtocolOptions {
  Aggregation aggregation = Aggregation::kSizeWeighted;
  /// Folds trained concurrently; each fold owns its model, optimizer and seed.
  std::size_t threads = 1;
};

struct FoldReport {
  std::size_t fold = 0;
  std::size_t test_size = 0;
  MaeReport mae;
};

struct ProtocolReport {
  std::vector<FoldReport> folds;
  MaeReport aggregate;
  /// Training history per test fold, same order as `folds`. Only filled by the
  /// TrainConfig overload of run_protocol.
  std::vector<TrainHistory> histories;

  /// "fold,yaw_mae,pitch_mae,roll_mae,overall", one row per test fold, then "aggregate".
  std::string to_csv() const;
};

/// Maps a test set to one prediction per sample, in order.
using Predictor = std::function<std::vector<PoseAngles>(const Dataset& test)>;
/// Produces a predictor from a training split; `fold` is the held-out fold index.
using FitFunction = std::function<Predictor(const Dataset& train, std::size_t fold)>;

ProtocolReport run_protocol(const Dataset& dataset, const FoldPlan& plan, const FitFunction& fit,
                            const ProtocolOptions& options = {});

/// Trains a fresh model per test fold on its complement (seed derived from
/// config.seed and the fold index) and reports MAE on the fold.
ProtocolReport run_protocol(const Dataset& dataset, const FoldPlan& plan, const TrainConfig& config,
                            const ProtocolOptions& options = {});

MaeReport aggregate_reports(const std::vector<FoldReport>& folds, Aggregation aggregation);

}  // namespace headpose
