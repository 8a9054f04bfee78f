#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "headpose/core.hpp"

namespace headpose {

struct LabeledSample {
  std::string id;
  std::string subject;
  KeypointSet keypoints;
  PoseAngles pose;  // ground truth
  std::size_t image_width = 0;
  std::size_t image_height = 0;

  bool operator==(const LabeledSample&) const = default;
};

using Dataset = std::vector<LabeledSample>;

// ---- synthetic generator -----------------------------------------------------

using Vec3 = std::array<double, 3>;

/// Rigid five-point head model in head units: origin at the head center,
/// x right, y up, z toward the camera. Canonical keypoint order.
struct FaceTemplate {
  std::array<Vec3, kNumKeypoints> points;
  std::array<Vec3, kNumKeypoints> normals;

  static FaceTemplate standard();
};

struct SynthConfig {
  FaceTemplate face = FaceTemplate::standard();
  /// Weak-perspective scale in pixels per head unit.
  double scale = 1.5;
  std::size_t image_width = 640;
  std::size_t image_height = 480;
  /// Angles are drawn uniformly from [-range, +range] per axis.
  PoseAngles range{75.0, 60.0, 50.0};
  double noise_px = 1.0;
  double visibility_threshold = 0.15;
  std::size_t subjects = 24;
  std::uint64_t seed = 1;
  std::size_t max_retries = 64;

  /// Throws UsageError describing the first violated constraint.
  void validate() const;
};

/// Noise-free projection of the template at `pose`: pixel locations and
/// likelihood clamp01(0.5 + 0.5 * rotated normal z) for every keypoint, before
/// the visibility threshold is applied.
std::array<Keypoint, kNumKeypoints> project_template(const SynthConfig& cfg, const PoseAngles& pose);

/// Applies the visibility threshold, pixel noise and the padded tight bbox to a
/// projected template. Empty when fewer than two keypoints survive.
std::optional<KeypointSet> observe(const SynthConfig& cfg, const std::array<Keypoint, kNumKeypoints>& projected,
                    std::mt19937_64& rng);

/// Draws one sample; retries on fewer than two detected keypoints, then throws DataError.
LabeledSample synth_sample(std::mt19937_64& rng, const SynthConfig& cfg);

/// Sample `index` of the stream defined by cfg.seed. Its randomness depends only on
/// (seed, index), so any subset can be generated independently.
LabeledSample synth_indexed(const SynthConfig& cfg, std::size_t index);

Dataset synth_dataset(const SynthConfig& cfg, std::size_t count);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// ---- annotations (JSON Lines) ------------------------------------------------

/// One annotation line, without trailing newline.
std::string annotation_line(const LabeledSample& sample);

/// Parses one line; throws DataError prefixed with "line <n>: ".
LabeledSample parse_annotation_line(const std::string& line, std::size_t line_number);

/// Keypoints and bbox of one JSON object in the annotation schema; other fields
/// are ignored. Throws DataError prefixed with "line <n>: <field>: ".
KeypointSet parse_keypoint_set(const std::string& json_text, std::size_t line_number);

/// Either a single JSON document or JSON Lines, one keypoint set per record.
std::vector<KeypointSet> load_keypoint_sets(const std::filesystem::path& path);

/// Reads a JSON-Lines file. Samples with fewer than two detected keypoints are
/// dropped and their ids appended to `dropped` when given.
Dataset load_annotations(const std::filesystem::path& path, std::vector<std::string>* dropped = nullptr);
Dataset parse_annotations(std::istream& in, std::vector<std::string>* dropped = nullptr);

void write_annotations(const Dataset& dataset, const std::filesystem::path& path);
void write_annotations(const Dataset& dataset, std::ostream& out);

// ---- fold plans --------------------------------------------------------------

enum class FoldMode { kSubjectDisjoint, kRandom, kFixedTestCount };

struct FoldPlan {
  std::size_t k = 0;
  FoldMode mode = FoldMode::kRandom;
  std::map<std::string, std::size_t> assignment;  // sample id -> fold
  /// Folds evaluated as test sets: all of them for k-fold modes, only fold 0
  /// (the held-out set) for kFixedTestCount.
  std::vector<std::size_t> test_folds;

  /// Fold index of each sample of `dataset`, in dataset order.
  std::vector<std::size_t> folds_of(const Dataset& dataset) const;
};

/// Deterministic given `seed` and independent of dataset order (samples and
/// subjects are sorted before shuffling). kSubjectDisjoint deals whole subjects
/// round-robin so subject counts per fold differ by at most one. For
/// kFixedTestCount, `k` is ignored: fold 0 holds exactly `test_count` samples and
/// fold 1 the rest.
FoldPlan make_folds(const Dataset& dataset, std::size_t k, FoldMode mode, std::uint64_t seed,
                    std::size_t test_count = 0);

}  // namespace headpose
