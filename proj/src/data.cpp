#include "headpose/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include "json.hpp"
#include <set>
#include <sstream>

#include "headpose/error.hpp"

namespace headpose {

// ---- synthetic generator -----------------------------------------------------

FaceTemplate FaceTemplate::standard() {
  FaceTemplate t;
  t.points = {Vec3{0, -10, 65}, Vec3{-22, 28, 48}, Vec3{22, 28, 48}, Vec3{-62, 8, -8}, Vec3{62, 8, -8}};
  t.normals = {Vec3{0, 0, 1}, Vec3{0, 0, 1}, Vec3{0, 0, 1}, Vec3{-1, 0, 0}, Vec3{1, 0, 0}};
  return t;
}

void SynthConfig::validate() const {
  for (const Vec3& n : face.normals) {
    const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    if (std::abs(len - 1.0) > 1e-9) throw UsageError("template normals must be unit length");
  }
  if (!(scale > 0.0)) throw UsageError("projection scale must be positive");
  if (image_width == 0 || image_height == 0) throw UsageError("image extents must be positive");
  if (!(range.yaw > 0.0 && range.pitch > 0.0 && range.roll > 0.0)) throw UsageError("angle ranges must be positive");
  if (!(noise_px >= 0.0)) throw UsageError("pixel noise must be non-negative");
  if (!(visibility_threshold >= 0.0 && visibility_threshold <= 1.0)) {
    throw UsageError("visibility threshold must lie in [0, 1]");
  }
  if (subjects == 0) throw UsageError("subject count must be positive");
  if (max_retries == 0) throw UsageError("max_retries must be positive");
}

std::array<Keypoint, kNumKeypoints> project_template(const SynthConfig& cfg, const PoseAngles& pose) {
  const Rot3 r = euler_to_rotation(pose);
  const double cx = static_cast<double>(cfg.image_width) / 2.0;
  const double cy = static_cast<double>(cfg.image_height) / 2.0;
  std::array<Keypoint, kNumKeypoints> out;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    const Vec3 p = r.apply(cfg.face.points[i]);
    const Vec3 n = r.apply(cfg.face.normals[i]);
    out[i] = {cx + cfg.scale * p[0], cy - cfg.scale * p[1], std::clamp(0.5 + 0.5 * n[2], 0.0, 1.0)};
  }
  return out;
}

std::optional<KeypointSet> observe(const SynthConfig& cfg, const std::array<Keypoint, kNumKeypoints>& projected,
                                   std::mt19937_64& rng) {
  KeypointSet kps;
  std::normal_distribution<double> noise(0.0, 1.0);
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::size_t detected = 0;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    const Keypoint& p = projected[i];
    if (p.likelihood < cfg.visibility_threshold || p.likelihood <= 0.0) continue;
    Keypoint kp = p;
    if (cfg.noise_px > 0.0) {
      kp.x += cfg.noise_px * noise(rng);
      kp.y += cfg.noise_px * noise(rng);
    }
    kps.points[i] = kp;
    if (detected == 0) {
      x0 = x1 = kp.x;
      y0 = y1 = kp.y;
    } else {
      x0 = std::min(x0, kp.x);
      x1 = std::max(x1, kp.x);
      y0 = std::min(y0, kp.y);
      y1 = std::max(y1, kp.y);
    }
    ++detected;
  }
  if (detected < 2) return std::nullopt;
  // 10% of the larger extent on every side keeps the box non-degenerate when
  // the detected points happen to be collinear along one axis.
  const double margin = 0.1 * std::max(x1 - x0, y1 - y0);
  kps.bbox = {x0 - margin, y0 - margin, (x1 - x0) + 2 * margin, (y1 - y0) + 2 * margin};
  if (!kps.bbox.valid()) return std::nullopt;
  return kps;
}

LabeledSample synth_sample(std::mt19937_64& rng, const SynthConfig& cfg) {
  cfg.validate();
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (std::size_t attempt = 0; attempt < cfg.max_retries; ++attempt) {
    const PoseAngles pose{cfg.range.yaw * unit(rng), cfg.range.pitch * unit(rng), cfg.range.roll * unit(rng)};
    if (auto kps = observe(cfg, project_template(cfg, pose), rng)) {
      LabeledSample s;
      s.keypoints = *kps;
      s.pose = pose;
      s.image_width = cfg.image_width;
      s.image_height = cfg.image_height;
      return s;
    }
  }
  throw DataError("synthetic generator: no sample with two detected keypoints after " +
                  std::to_string(cfg.max_retries) + " attempts");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over a combined state.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

LabeledSample synth_indexed(const SynthConfig& cfg, std::size_t index) {
  std::mt19937_64 rng(derive_seed(cfg.seed, index));
  LabeledSample s = synth_sample(rng, cfg);
  char id[32];
  std::snprintf(id, sizeof id, "synth-%07zu", index);
  char subject[32];
  std::snprintf(subject, sizeof subject, "subject-%03zu", index % cfg.subjects);
  s.id = id;
  s.subject = subject;
  return s;
}

Dataset synth_dataset(const SynthConfig& cfg, std::size_t count) {
  cfg.validate();
  Dataset out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synth_indexed(cfg, i));
  return out;
}

// ---- annotations -------------------------------------------------------------

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

[[noreturn]] void fail(std::size_t line, const std::string& field, const std::string& msg) {
  throw DataError("line " + std::to_string(line) + ": " + field + ": " + msg);
}

double number_field(const json& obj, const std::string& key, std::size_t line, const std::string& path) {
  if (!obj.contains(key)) fail(line, path + key, "missing");
  const json& v = obj.at(key);
  if (!v.is_number()) fail(line, path + key, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) fail(line, path + key, "must be finite");
  return d;
}

std::string string_field(const json& obj, const std::string& key, std::size_t line) {
  if (!obj.contains(key) || !obj.at(key).is_string()) fail(line, key, "missing or not a string");
  std::string s = obj.at(key).get<std::string>();
  if (s.empty()) fail(line, key, "must be non-empty");
  return s;
}

std::size_t extent_field(const json& obj, const std::string& key, std::size_t line) {
  if (!obj.contains(key) || !obj.at(key).is_number_integer()) fail(line, key, "missing or not an integer");
  const auto v = obj.at(key).get<std::int64_t>();
  if (v <= 0) fail(line, key, "must be positive");
  return static_cast<std::size_t>(v);
}

double array_entry(const json& arr, std::size_t i, std::size_t line, const std::string& field) {
  if (!arr.at(i).is_number()) fail(line, field, "entry " + std::to_string(i) + " is not a number");
  const double d = arr.at(i).get<double>();
  if (!std::isfinite(d)) fail(line, field, "entry " + std::to_string(i) + " must be finite");
  return d;
}

KeypointSet keypoint_set_from_json(const json& j, std::size_t line) {
  KeypointSet out;
  if (!j.contains("bbox") || !j.at("bbox").is_array() || j.at("bbox").size() != 4) {
    fail(line, "bbox", "expected [x, y, w, h]");
  }
  const json& b = j.at("bbox");
  out.bbox = {array_entry(b, 0, line, "bbox"), array_entry(b, 1, line, "bbox"), array_entry(b, 2, line, "bbox"),
              array_entry(b, 3, line, "bbox")};
  if (!out.bbox.valid()) fail(line, "bbox", "width and height must be positive");

  if (!j.contains("keypoints") || !j.at("keypoints").is_object()) fail(line, "keypoints", "missing or not an object");
  const json& kps = j.at("keypoints");
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    const std::string name(kKeypointNames[i]);
    const std::string field = "keypoints." + name;
    if (!kps.contains(name) || kps.at(name).is_null()) continue;
    const json& kp = kps.at(name);
    if (!kp.is_array() || kp.size() != 3) fail(line, field, "expected [x, y, likelihood] or null");
    const double c = array_entry(kp, 2, line, field);
    if (c < 0.0 || c > 1.0) fail(line, field, "likelihood " + std::to_string(c) + " outside [0, 1]");
    if (c == 0.0) continue;
    out.points[i] = {array_entry(kp, 0, line, field), array_entry(kp, 1, line, field), c};
  }
  return out;
}

}  // namespace

std::string annotation_line(const LabeledSample& s) {
  ordered_json j;
  j["id"] = s.id;
  j["subject"] = s.subject;
  j["width"] = s.image_width;
  j["height"] = s.image_height;
  const BBox& b = s.keypoints.bbox;
  j["bbox"] = {b.x, b.y, b.w, b.h};
  ordered_json kps = ordered_json::object();
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    const Keypoint& kp = s.keypoints.points[i];
    const std::string name(kKeypointNames[i]);
    if (kp.detected()) {
      kps[name] = {kp.x, kp.y, kp.likelihood};
    } else {
      kps[name] = nullptr;
    }
  }
  j["keypoints"] = std::move(kps);
  j["pose"] = {{"yaw", s.pose.yaw}, {"pitch", s.pose.pitch}, {"roll", s.pose.roll}};
  return j.dump();
}

LabeledSample parse_annotation_line(const std::string& text, std::size_t line) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(line, "<json>", e.what());
  }
  if (!j.is_object()) fail(line, "<json>", "expected an object");

  LabeledSample s;
  s.id = string_field(j, "id", line);
  s.subject = string_field(j, "subject", line);
  s.image_width = extent_field(j, "width", line);
  s.image_height = extent_field(j, "height", line);

  s.keypoints = keypoint_set_from_json(j, line);

  if (!j.contains("pose") || !j.at("pose").is_object()) fail(line, "pose", "missing or not an object");
  const json& pose = j.at("pose");
  s.pose = {number_field(pose, "yaw", line, "pose."), number_field(pose, "pitch", line, "pose."),
            number_field(pose, "roll", line, "pose.")};
  return s;
}

KeypointSet parse_keypoint_set(const std::string& text, std::size_t line) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(line, "<json>", e.what());
  }
  if (!j.is_object()) fail(line, "<json>", "expected an object");
  return keypoint_set_from_json(j, line);
}

std::vector<KeypointSet> load_keypoint_sets(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open keypoints file " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (json::accept(text)) return {parse_keypoint_set(text, 1)};
  std::vector<KeypointSet> out;
  std::istringstream lines(text);
  std::string row;
  std::size_t line = 0;
  while (std::getline(lines, row)) {
    ++line;
    if (row.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_keypoint_set(row, line));
  }
  if (out.empty()) throw DataError(path.string() + ": no keypoint records");
  return out;
}

Dataset parse_annotations(std::istream& in, std::vector<std::string>* dropped) {
  Dataset out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    LabeledSample s = parse_annotation_line(text, line);
    if (s.keypoints.detected_count() < 2) {
      if (dropped) dropped->push_back(s.id);
      continue;
    }
    out.push_back(std::move(s));
  }
  return out;
}

Dataset load_annotations(const std::filesystem::path& path, std::vector<std::string>* dropped) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotations " + path.string());
  return parse_annotations(in, dropped);
}

void write_annotations(const Dataset& dataset, std::ostream& out) {
  for (const LabeledSample& s : dataset) out << annotation_line(s) << '\n';
}

void write_annotations(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot open " + path.string() + " for writing");
  write_annotations(dataset, out);
  if (!out) throw UsageError("failed writing " + path.string());
}

// ---- folds -------------------------------------------------------------------

std::vector<std::size_t> FoldPlan::folds_of(const Dataset& dataset) const {
  std::vector<std::size_t> out;
  out.reserve(dataset.size());
  for (const LabeledSample& s : dataset) {
    const auto it = assignment.find(s.id);
    if (it == assignment.end()) throw DataError("fold plan does not cover sample '" + s.id + "'");
    out.push_back(it->second);
  }
  return out;
}

FoldPlan make_folds(const Dataset& dataset, std::size_t k, FoldMode mode, std::uint64_t seed, std::size_t test_count) {
  std::vector<const LabeledSample*> sorted;
  sorted.reserve(dataset.size());
  for (const LabeledSample& s : dataset) sorted.push_back(&s);
  std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i]->id == sorted[i - 1]->id) throw DataError("duplicate sample id '" + sorted[i]->id + "'");
  }

  std::mt19937_64 rng(derive_seed(seed, 0xF01D));
  FoldPlan plan;
  plan.mode = mode;
  switch (mode) {
    case FoldMode::kSubjectDisjoint: {
      if (k < 2) throw UsageError("k-fold protocols need k >= 2");
      std::set<std::string> unique;
      for (const auto* s : sorted) unique.insert(s->subject);
      if (unique.size() < k) {
        throw DataError("subject-disjoint " + std::to_string(k) + "-fold split needs at least " + std::to_string(k) +
                        " subjects, dataset has " + std::to_string(unique.size()));
      }
      std::vector<std::string> subjects(unique.begin(), unique.end());
      std::shuffle(subjects.begin(), subjects.end(), rng);
      std::map<std::string, std::size_t> subject_fold;
      for (std::size_t i = 0; i < subjects.size(); ++i) subject_fold[subjects[i]] = i % k;
      for (const auto* s : sorted) plan.assignment[s->id] = subject_fold.at(s->subject);
      plan.k = k;
      break;
    }
    case FoldMode::kRandom: {
      if (k < 2) throw UsageError("k-fold protocols need k >= 2");
      if (sorted.size() < k) {
        throw DataError(std::to_string(k) + "-fold split needs at least " + std::to_string(k) + " samples");
      }
      std::shuffle(sorted.begin(), sorted.end(), rng);
      for (std::size_t i = 0; i < sorted.size(); ++i) plan.assignment[sorted[i]->id] = i % k;
      plan.k = k;
      break;
    }
    case FoldMode::kFixedTestCount: {
      if (test_count == 0 || test_count >= sorted.size()) {
        throw DataError("fixed test count " + std::to_string(test_count) + " must lie in [1, " +
                        std::to_string(sorted.size()) + ")");
      }
      std::shuffle(sorted.begin(), sorted.end(), rng);
      for (std::size_t i = 0; i < sorted.size(); ++i) plan.assignment[sorted[i]->id] = i < test_count ? 0 : 1;
      plan.k = 2;
      plan.test_folds = {0};
      return plan;
    }
  }
  for (std::size_t f = 0; f < plan.k; ++f) plan.test_folds.push_back(f);
  return plan;
}

}  // namespace headpose
