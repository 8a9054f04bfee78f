#include "headpose/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "headpose/data.hpp"
#include "headpose/engine.hpp"
#include "headpose/error.hpp"
#include "headpose/format.hpp"
#include "headpose/heatmap.hpp"
#include "headpose/models.hpp"
#include "headpose/trainer.hpp"

namespace headpose::cli {

namespace {

// ---- option overlay ----------------------------------------------------------

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto start = line.find_first_not_of(" \t");
    if (start == std::string::npos || line[start] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(n) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    while (!key.empty() && key.front() == '-') key.erase(key.begin());
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

bool has_flag(const std::vector<std::string>& args, const std::string& name) {
  const std::string flag = "--" + name;
  for (const std::string& a : args) {
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  }
  return false;
}

/// Removes `--config PATH` from args and returns PATH, if present.
std::optional<std::string> take_config_path(std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config requires a file path");
      std::string path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      return path;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      std::string path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      return path;
    }
  }
  return std::nullopt;
}

// ---- shared parsing helpers ------------------------------------------------

ModelKind parse_model_kind(const std::string& s) {
  if (s == "mlp") return ModelKind::kMlp;
  if (s == "cnn") return ModelKind::kCnn;
  throw UsageError("--model must be mlp or cnn, got '" + s + "'");
}

GridSize parse_grid_flag(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) {
      const auto n = static_cast<std::size_t>(std::stoul(s));
      return {n, n};
    }
    return {static_cast<std::size_t>(std::stoul(s.substr(0, x))), static_cast<std::size_t>(std::stoul(s.substr(x + 1)))};
  } catch (const std::exception&) {
    throw UsageError("--grid must be N or HxW, got '" + s + "'");
  }
}

CnnWidths parse_widths(const std::string& s) {
  std::vector<std::size_t> v;
  std::stringstream ss(s);
  std::string tok;
  try {
    while (std::getline(ss, tok, ',')) v.push_back(static_cast<std::size_t>(std::stoul(tok)));
  } catch (const std::exception&) {
    v.clear();
  }
  if (v.size() != 4 || std::find(v.begin(), v.end(), 0u) != v.end()) {
    throw UsageError("--widths must be four positive integers conv1,conv2,conv3,fc1; got '" + s + "'");
  }
  return {v[0], v[1], v[2], v[3]};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw UsageError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw UsageError("failed writing " + path);
}

std::string pose_json(const PoseAngles& p) {
  return "{\"yaw\":" + format_double(p.yaw) + ",\"pitch\":" + format_double(p.pitch) +
         ",\"roll\":" + format_double(p.roll) + "}";
}

Dataset load_dataset(const std::string& path, std::ostream& err) {
  std::vector<std::string> dropped;
  Dataset ds = load_annotations(path, &dropped);
  for (const std::string& id : dropped) err << "dropped sample '" << id << "': fewer than 2 detected keypoints\n";
  if (ds.empty()) throw DataError(path + ": no usable samples");
  return ds;
}

// Training flags shared by `train` and `eval --protocol`.
struct TrainFlags {
  std::string model = "mlp";
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch;
  std::optional<double> wd;
  std::optional<std::string> grid;
  std::optional<double> sigma;
  std::optional<std::string> widths;
  std::uint64_t seed = 0;

  void add_to(CLI::App& app) {
    app.add_option("--model", model, "Model: mlp or cnn")->check(CLI::IsMember({"mlp", "cnn"}));
    app.add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);
    app.add_option("--lr", lr, "Adam learning rate");
    app.add_option("--batch", batch, "Mini-batch size")->check(CLI::PositiveNumber);
    app.add_option("--wd", wd, "Weight decay (L2 added to the gradient)");
    app.add_option("--grid", grid, "Heatmap grid, N or HxW (cnn)");
    app.add_option("--sigma", sigma, "Heatmap Gaussian sigma in grid cells (cnn)");
    app.add_option("--widths", widths, "CNN widths conv1,conv2,conv3,fc1");
    app.add_option("--seed", seed, "Random seed");
  }

  TrainConfig resolve() const {
    TrainConfig c = TrainConfig::defaults(parse_model_kind(model));
    if (epochs) c.epochs = *epochs;
    if (lr) c.lr = *lr;
    if (batch) c.batch_size = *batch;
    if (wd) c.weight_decay = *wd;
    if (grid) c.grid = parse_grid_flag(*grid);
    if (sigma) c.sigma = *sigma;
    if (widths) c.widths = parse_widths(*widths);
    c.seed = seed;
    c.validate();
    return c;
  }
};

// ---- subcommands -------------------------------------------------------------

struct SynthFlags {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string out;
  SynthConfig cfg;
};

void cmd_synth(const SynthFlags& f, std::ostream& out) {
  SynthConfig cfg = f.cfg;
  cfg.seed = f.seed;
  cfg.validate();
  const Dataset ds = synth_dataset(cfg, f.n);
  write_annotations(ds, std::filesystem::path(f.out));
  out << "wrote " << ds.size() << " samples to " << f.out << "\n";
}

struct TrainCmdFlags {
  TrainFlags train;
  std::string data;
  std::string out_ckpt;
  std::optional<std::string> history;
  std::optional<std::string> val_data;
  std::size_t log_every = 0;
};

void cmd_train(const TrainCmdFlags& f, std::ostream& out, std::ostream& err) {
  const TrainConfig config = f.train.resolve();
  const Dataset ds = load_dataset(f.data, err);
  std::optional<Dataset> val;
  if (f.val_data) val = load_dataset(*f.val_data, err);
  EpochCallback log;
  if (f.log_every > 0) {
    log = [&](std::size_t epoch, double loss) {
      if (epoch % f.log_every == 0) err << "epoch " << epoch << " train_loss " << format_double(loss) << "\n";
    };
  }
  const TrainResult result = train(config, ds, val ? &*val : nullptr, log);
  save_checkpoint(*result.model, f.out_ckpt);
  if (f.history) write_text(*f.history, result.history.to_csv());
  out << "trained " << model_kind_name(config.model) << " for " << config.epochs << " epochs on " << ds.size()
      << " samples; final train_loss " << format_double(result.history.train_loss.back()) << "; checkpoint "
      << f.out_ckpt << "\n";
}

struct EvalFlags {
  TrainFlags train;
  std::string data;
  std::optional<std::string> ckpt;
  std::optional<std::string> protocol;
  std::optional<std::size_t> k;
  std::size_t test_count = 1000;
  std::optional<std::string> report;
  std::size_t threads = 1;
  std::string aggregation = "weighted";
};

void cmd_eval(const EvalFlags& f, std::ostream& out, std::ostream& err) {
  if (f.ckpt.has_value() == f.protocol.has_value()) throw UsageError("eval needs exactly one of --ckpt or --protocol");
  const Dataset ds = load_dataset(f.data, err);
  ProtocolReport report;
  if (f.ckpt) {
    const auto model = load_checkpoint(*f.ckpt);
    FoldReport all{0, ds.size(), evaluate(*model, ds)};
    report.folds = {all};
    report.aggregate = all.mae;
  } else {
    const TrainConfig config = f.train.resolve();
    FoldPlan plan;
    if (*f.protocol == "kfold-subject") {
      plan = make_folds(ds, f.k.value_or(8), FoldMode::kSubjectDisjoint, f.train.seed);
    } else if (*f.protocol == "kfold-random") {
      plan = make_folds(ds, f.k.value_or(5), FoldMode::kRandom, f.train.seed);
    } else {
      plan = make_folds(ds, 2, FoldMode::kFixedTestCount, f.train.seed, f.test_count);
    }
    ProtocolOptions options;
    options.threads = f.threads;
    options.aggregation = f.aggregation == "unweighted" ? Aggregation::kUnweighted : Aggregation::kSizeWeighted;
    report = run_protocol(ds, plan, config, options);
  }
  std::string csv = report.to_csv();
  if (f.ckpt) {
    // A single checkpoint evaluation has one "fold": the whole dataset.
    csv.replace(csv.find("\n0,") + 1, 1, "all");
  }
  if (f.report) {
    write_text(*f.report, csv);
  } else {
    out << csv;
  }
}

void cmd_predict(const std::string& ckpt, const std::string& keypoints, std::ostream& out) {
  const auto model = load_checkpoint(ckpt);
  const std::vector<KeypointSet> sets = load_keypoint_sets(keypoints);
  for (const PoseAngles& p : model->predict(sets)) out << pose_json(p) << "\n";
}

int cmd_gradcheck(std::uint64_t seed, std::size_t trials, const std::optional<std::string>& flip, std::ostream& out) {
  bool all_pass = true;
  out << "layer,max_rel_error,trials,status\n";
  for (engine::LayerKind kind : engine::kAllLayerKinds) {
    engine::GradcheckOptions options;
    options.flip_sign = flip && *flip == engine::layer_kind_name(kind);
    double worst = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      worst = std::max(worst, engine::gradcheck(kind, seed + t, options).max_rel_error);
    }
    const bool pass = worst < 1e-4;
    all_pass = all_pass && pass;
    out << engine::layer_kind_name(kind) << "," << format_double(worst) << "," << trials << ","
        << (pass ? "PASS" : "FAIL") << "\n";
  }
  return all_pass ? 0 : static_cast<int>(ErrorKind::kNumeric);
}

void cmd_render(const std::string& keypoints, const std::string& grid, double sigma, const std::string& prefix,
                std::ostream& out) {
  const std::vector<KeypointSet> sets = load_keypoint_sets(keypoints);
  if (sets.size() != 1) throw DataError(keypoints + ": render expects exactly one keypoint record");
  const HeatmapStack stack = render_stack(sets.front(), parse_grid_flag(grid), sigma);
  for (const auto& path : write_pgm_stack(stack, prefix)) out << path.string() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args = raw_args;

  CLI::App app{"Head pose regression from five facial keypoints"};
  app.require_subcommand(1);
  app.footer(
      "Every subcommand accepts --config FILE (key=value lines). Precedence: flags > config > HEADPOSE_SEED > "
      "defaults.");

  SynthFlags synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic annotations from the projective face model");
  synth_cmd->add_option("--n", synth.n, "Number of samples")->required()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth.seed, "Random seed");
  synth_cmd->add_option("--out", synth.out, "Output JSON-Lines path")->required();
  synth_cmd->add_option("--subjects", synth.cfg.subjects, "Number of distinct subjects");
  synth_cmd->add_option("--noise", synth.cfg.noise_px, "Pixel noise sigma");
  synth_cmd->add_option("--scale", synth.cfg.scale, "Weak-perspective scale, pixels per head unit");
  synth_cmd->add_option("--visibility", synth.cfg.visibility_threshold, "Likelihood below which a keypoint is dropped");
  synth_cmd->add_option("--yaw-range", synth.cfg.range.yaw, "Yaw drawn from [-r, r] degrees");
  synth_cmd->add_option("--pitch-range", synth.cfg.range.pitch, "Pitch drawn from [-r, r] degrees");
  synth_cmd->add_option("--roll-range", synth.cfg.range.roll, "Roll drawn from [-r, r] degrees");
  synth_cmd->add_option("--width", synth.cfg.image_width, "Image width in pixels");
  synth_cmd->add_option("--height", synth.cfg.image_height, "Image height in pixels");

  TrainCmdFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_flags.train.add_to(*train_cmd);
  train_cmd->add_option("--data", train_flags.data, "Training annotations (JSON Lines)")->required();
  train_cmd->add_option("--out-ckpt", train_flags.out_ckpt, "Checkpoint output path")->required();
  train_cmd->add_option("--history", train_flags.history, "Write per-epoch history CSV here");
  train_cmd->add_option("--val-data", train_flags.val_data, "Validation annotations for per-epoch MAE");
  train_cmd->add_option("--log-every", train_flags.log_every, "Log training loss to stderr every N epochs");

  EvalFlags eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint or run a cross-validation protocol");
  eval.train.add_to(*eval_cmd);
  eval_cmd->add_option("--data", eval.data, "Annotations (JSON Lines)")->required();
  eval_cmd->add_option("--ckpt", eval.ckpt, "Checkpoint to evaluate on the whole dataset");
  eval_cmd->add_option("--protocol", eval.protocol, "kfold-subject, kfold-random or fixed-test")
      ->check(CLI::IsMember({"kfold-subject", "kfold-random", "fixed-test"}));
  eval_cmd->add_option("--k", eval.k, "Fold count (default 8 subject-disjoint, 5 random)")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--test-count", eval.test_count, "Held-out size for fixed-test");
  eval_cmd->add_option("--report", eval.report, "Write the metrics CSV here instead of stdout");
  eval_cmd->add_option("--threads", eval.threads, "Folds trained concurrently")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--aggregation", eval.aggregation, "weighted (by fold size) or unweighted")
      ->check(CLI::IsMember({"weighted", "unweighted"}));

  std::string predict_ckpt, predict_kps;
  auto* predict_cmd = app.add_subcommand("predict", "Predict yaw/pitch/roll for keypoint records");
  predict_cmd->add_option("--ckpt", predict_ckpt, "Checkpoint")->required();
  predict_cmd->add_option("--keypoints-json", predict_kps, "JSON object (or JSON Lines) with bbox and keypoints")
      ->required();

  std::uint64_t gc_seed = 0;
  std::size_t gc_trials = 20;
  std::optional<std::string> gc_flip;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Check backprop against central finite differences per layer kind");
  gc_cmd->add_option("--seed", gc_seed, "First seed");
  gc_cmd->add_option("--trials", gc_trials, "Random instances per layer kind")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--inject-sign-flip", gc_flip, "Negate one layer's analytic gradient (harness self-test)")
      ->group("");

  std::string render_kps, render_grid = "64", render_prefix;
  double render_sigma = kDefaultSigma;
  auto* render_cmd = app.add_subcommand("render", "Write the five heatmap channels as PGM images");
  render_cmd->add_option("--keypoints-json", render_kps, "JSON object with bbox and keypoints")->required();
  render_cmd->add_option("--grid", render_grid, "Grid, N or HxW");
  render_cmd->add_option("--sigma", render_sigma, "Gaussian sigma in grid cells");
  render_cmd->add_option("--out-prefix", render_prefix, "Output prefix")->required();

  try {
    const auto config_path = take_config_path(args);
    const std::string sub_name = [&] {
      for (const std::string& a : args) {
        if (!a.empty() && a[0] != '-') return a;
      }
      return std::string();
    }();
    CLI::App* sub = nullptr;
    for (CLI::App* s : app.get_subcommands({})) {
      if (s->get_name() == sub_name) sub = s;
    }
    if (sub) {
      if (config_path) {
        for (const auto& [key, value] : read_config_file(*config_path)) {
          bool known = false;
          for (CLI::App* s : app.get_subcommands({})) known = known || s->get_option_no_throw("--" + key) != nullptr;
          if (!known) throw UsageError("config key '" + key + "' matches no option");
          if (sub->get_option_no_throw("--" + key) && !has_flag(args, key)) {
            args.push_back("--" + key);
            args.push_back(value);
          }
        }
      }
      if (sub->get_option_no_throw("--seed") && !has_flag(args, "seed")) {
        if (const char* env = std::getenv("HEADPOSE_SEED")) {
          args.push_back("--seed");
          args.push_back(env);
        }
      }
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
      app.parse(reversed);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? 0 : static_cast<int>(ErrorKind::kUsage);
    }

    if (*synth_cmd) {
      cmd_synth(synth, out);
    } else if (*train_cmd) {
      cmd_train(train_flags, out, err);
    } else if (*eval_cmd) {
      cmd_eval(eval, out, err);
    } else if (*predict_cmd) {
      cmd_predict(predict_ckpt, predict_kps, out);
    } else if (*gc_cmd) {
      return cmd_gradcheck(gc_seed, gc_trials, gc_flip, out);
    } else if (*render_cmd) {
      cmd_render(render_kps, render_grid, render_sigma, render_prefix, out);
    }
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kData);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace headpose::cli
