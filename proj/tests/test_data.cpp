#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "headpose/data.hpp"
#include "headpose/error.hpp"

namespace hp = headpose;

namespace {

hp::SynthConfig noiseless() {
  hp::SynthConfig cfg;
  cfg.noise_px = 0.0;
  return cfg;
}

std::string good_line() {
  return R"({"id":"a","subject":"s1","width":640,"height":480,"bbox":[10,20,100,120],)"
         R"("keypoints":{"nose":[50,60,0.9],"left_eye":[40,50,0.8],"right_eye":[60,50,0.8],)"
         R"("left_ear":null,"right_ear":[90,55,0.3]},"pose":{"yaw":10,"pitch":-5,"roll":2.5}})";
}

}  // namespace

TEST(Template, NormalsAreUnit) {
  const hp::FaceTemplate t = hp::FaceTemplate::standard();
  for (const auto& n : t.normals) EXPECT_NEAR(std::hypot(n[0], n[1], n[2]), 1.0, 1e-15);
}

TEST(Synth, FrontalPoseIsMirrorSymmetric) {
  const auto p = hp::project_template(noiseless(), {0, 0, 0});
  const auto& nose = p[0];
  const auto& le = p[1];
  const auto& re = p[2];
  EXPECT_NEAR(nose.x - le.x, re.x - nose.x, 1e-12);
  EXPECT_NEAR(le.y, re.y, 1e-12);
  EXPECT_LT(le.x, re.x);  // left is negative x
  EXPECT_NEAR(p[3].likelihood, p[4].likelihood, 1e-15);
}

TEST(Synth, Yaw75HidesTheFarEar) {
  const hp::SynthConfig cfg = noiseless();
  const auto p = hp::project_template(cfg, {75, 0, 0});
  // Positive yaw turns +x toward -z: the right ear faces away.
  EXPECT_LT(p[4].likelihood, cfg.visibility_threshold);
  EXPECT_GT(p[3].likelihood, cfg.visibility_threshold);
  std::mt19937_64 rng(1);
  const auto obs = hp::observe(cfg, p, rng);
  ASSERT_TRUE(obs.has_value());
  EXPECT_EQ((*obs)[hp::KeypointId::kRightEar], hp::Keypoint::undetected());
  EXPECT_TRUE((*obs)[hp::KeypointId::kLeftEar].detected());
}

TEST(Synth, ProjectionMatchesHandComputation) {
  const hp::SynthConfig cfg = noiseless();
  const hp::PoseAngles pose{20, -10, 5};
  const hp::Rot3 r = hp::euler_to_rotation(pose);
  const auto p = hp::project_template(cfg, pose);
  const hp::FaceTemplate t = hp::FaceTemplate::standard();
  for (std::size_t k = 0; k < hp::kNumKeypoints; ++k) {
    const auto x = r.apply(t.points[k]);
    const auto n = r.apply(t.normals[k]);
    EXPECT_NEAR(p[k].x, 320.0 + cfg.scale * x[0], 1e-12);
    EXPECT_NEAR(p[k].y, 240.0 - cfg.scale * x[1], 1e-12);
    EXPECT_NEAR(p[k].likelihood, std::clamp(0.5 + 0.5 * n[2], 0.0, 1.0), 1e-15);
  }
}

TEST(Synth, BBoxPadsDetectedPoints) {
  const hp::Dataset ds = hp::synth_dataset(noiseless(), 50);
  for (const auto& s : ds) {
    double x0 = 1e9, y0 = 1e9, x1 = -1e9, y1 = -1e9;
    for (const auto& k : s.keypoints.points) {
      if (!k.detected()) continue;
      x0 = std::min(x0, k.x), x1 = std::max(x1, k.x), y0 = std::min(y0, k.y), y1 = std::max(y1, k.y);
    }
    const double pad = 0.1 * std::max(x1 - x0, y1 - y0);
    EXPECT_NEAR(s.keypoints.bbox.x, x0 - pad, 1e-9);
    EXPECT_NEAR(s.keypoints.bbox.y, y0 - pad, 1e-9);
    EXPECT_NEAR(s.keypoints.bbox.w, x1 - x0 + 2 * pad, 1e-9);
    EXPECT_NEAR(s.keypoints.bbox.h, y1 - y0 + 2 * pad, 1e-9);
  }
}

TEST(Synth, LabelsWithinRangesAndAtLeastTwoDetected) {
  hp::SynthConfig cfg;
  const hp::Dataset ds = hp::synth_dataset(cfg, 2000);
  std::set<std::string> subjects;
  double max_yaw = 0, max_pitch = 0, max_roll = 0;
  for (const auto& s : ds) {
    EXPECT_LE(std::abs(s.pose.yaw), 75.0);
    EXPECT_LE(std::abs(s.pose.pitch), 60.0);
    EXPECT_LE(std::abs(s.pose.roll), 50.0);
    max_yaw = std::max(max_yaw, std::abs(s.pose.yaw));
    max_pitch = std::max(max_pitch, std::abs(s.pose.pitch));
    max_roll = std::max(max_roll, std::abs(s.pose.roll));
    EXPECT_GE(s.keypoints.detected_count(), 2u);
    subjects.insert(s.subject);
  }
  EXPECT_EQ(subjects.size(), 24u);
  // Histogram check: every tenth of each range is populated.
  for (auto [range, getter] : {std::pair{75.0, +[](const hp::PoseAngles& p) { return p.yaw; }},
                               std::pair{60.0, +[](const hp::PoseAngles& p) { return p.pitch; }},
                               std::pair{50.0, +[](const hp::PoseAngles& p) { return p.roll; }}}) {
    std::array<int, 10> bins{};
    for (const auto& s : ds) bins[std::min<std::size_t>(9, std::size_t((getter(s.pose) + range) / (0.2 * range)))]++;
    for (int b : bins) EXPECT_GT(b, 100);
  }
  EXPECT_GT(max_yaw, 74.0);
  EXPECT_GT(max_pitch, 59.0);
  EXPECT_GT(max_roll, 49.0);
}

TEST(Synth, DeterministicAndIndexAddressable) {
  hp::SynthConfig cfg;
  cfg.seed = 9;
  const hp::Dataset a = hp::synth_dataset(cfg, 30), b = hp::synth_dataset(cfg, 30);
  std::ostringstream sa, sb;
  hp::write_annotations(a, sa);
  hp::write_annotations(b, sb);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(hp::annotation_line(hp::synth_indexed(cfg, 17)), hp::annotation_line(a[17]));
  cfg.seed = 10;
  EXPECT_NE(hp::annotation_line(hp::synth_indexed(cfg, 17)), hp::annotation_line(a[17]));
}

TEST(Synth, RejectsInvalidConfig) {
  hp::SynthConfig cfg;
  cfg.range.yaw = 0;
  EXPECT_THROW(cfg.validate(), hp::UsageError);
  cfg = {};
  cfg.face.normals[0] = {0, 0, 2};
  EXPECT_THROW(cfg.validate(), hp::UsageError);
}

TEST(Annotations, NullKeypointIsUndetected) {
  const hp::LabeledSample s = hp::parse_annotation_line(good_line(), 1);
  EXPECT_EQ(s.keypoints[hp::KeypointId::kLeftEar], hp::Keypoint::undetected());
  EXPECT_EQ(s.keypoints[hp::KeypointId::kNose], (hp::Keypoint{50, 60, 0.9}));
  EXPECT_EQ(s.pose, (hp::PoseAngles{10, -5, 2.5}));
  EXPECT_EQ(s.subject, "s1");
  EXPECT_EQ(s.image_width, 640u);
}

TEST(Annotations, LikelihoodOutOfRangeRejected) {
  std::string line = good_line();
  line.replace(line.find("0.9"), 3, "1.2");
  try {
    hp::parse_annotation_line(line, 7);
    FAIL();
  } catch (const hp::DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 7"), std::string::npos) << msg;
    EXPECT_NE(msg.find("nose"), std::string::npos) << msg;
  }
}

TEST(Annotations, MissingPoseRejected) {
  std::string line = good_line();
  line = line.substr(0, line.find(",\"pose\"")) + "}";
  EXPECT_THROW(hp::parse_annotation_line(line, 1), hp::DataError);
  EXPECT_THROW(hp::parse_annotation_line("{not json", 1), hp::DataError);
}

TEST(Annotations, RoundTripIsExact) {
  hp::SynthConfig cfg;
  cfg.seed = 4;
  const hp::Dataset ds = hp::synth_dataset(cfg, 200);
  const auto path = std::filesystem::temp_directory_path() / "headpose_roundtrip.jsonl";
  hp::write_annotations(ds, path);
  const hp::Dataset back = hp::load_annotations(path);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back[i].keypoints, ds[i].keypoints);
    EXPECT_EQ(back[i].pose, ds[i].pose);
    EXPECT_EQ(back[i].id, ds[i].id);
  }
  std::ostringstream again;
  hp::write_annotations(back, again);
  std::ifstream in(path);
  EXPECT_EQ(again.str(), std::string((std::istreambuf_iterator<char>(in)), {}));
}

TEST(Annotations, DropsSamplesWithFewerThanTwoKeypoints) {
  std::string sparse = good_line();
  for (const char* name : {"\"left_eye\":[40,50,0.8]", "\"right_eye\":[60,50,0.8]", "\"right_ear\":[90,55,0.3]"}) {
    const std::string n(name);
    sparse.replace(sparse.find(n), n.size(), n.substr(0, n.find(':')) + ":null");
  }
  std::istringstream in(good_line() + "\n" + sparse + "\n\n");
  std::vector<std::string> dropped;
  const hp::Dataset ds = hp::parse_annotations(in, &dropped);
  EXPECT_EQ(ds.size(), 1u);
  EXPECT_EQ(dropped.size(), 1u);
}

TEST(Folds, PartitionProperty) {
  hp::SynthConfig cfg;
  cfg.seed = 2;
  const hp::Dataset ds = hp::synth_dataset(cfg, 301);
  for (auto mode : {hp::FoldMode::kRandom, hp::FoldMode::kSubjectDisjoint}) {
    const hp::FoldPlan plan = hp::make_folds(ds, 5, mode, 3);
    EXPECT_EQ(plan.assignment.size(), ds.size());
    std::vector<std::size_t> counts(5);
    for (std::size_t f : plan.folds_of(ds)) counts.at(f)++;
    for (std::size_t c : counts) EXPECT_GT(c, 0u);
    if (mode == hp::FoldMode::kRandom) {
      for (std::size_t c : counts) EXPECT_TRUE(c == 60 || c == 61);
    }
  }
}

TEST(Folds, SubjectDisjointBalancesSubjects) {
  hp::SynthConfig cfg;
  cfg.seed = 8;
  const hp::Dataset ds = hp::synth_dataset(cfg, 240);
  const hp::FoldPlan plan = hp::make_folds(ds, 8, hp::FoldMode::kSubjectDisjoint, 1);
  std::map<std::string, std::set<std::size_t>> subject_folds;
  std::vector<std::set<std::string>> fold_subjects(8);
  const auto folds = plan.folds_of(ds);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    subject_folds[ds[i].subject].insert(folds[i]);
    fold_subjects[folds[i]].insert(ds[i].subject);
  }
  for (const auto& [s, f] : subject_folds) EXPECT_EQ(f.size(), 1u) << s;
  for (const auto& f : fold_subjects) EXPECT_EQ(f.size(), 3u);
}

TEST(Folds, InvariantToInputOrderAndDeterministic) {
  hp::SynthConfig cfg;
  const hp::Dataset ds = hp::synth_dataset(cfg, 100);
  hp::Dataset shuffled = ds;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(5));
  for (auto mode : {hp::FoldMode::kRandom, hp::FoldMode::kSubjectDisjoint}) {
    EXPECT_EQ(hp::make_folds(ds, 4, mode, 11).assignment, hp::make_folds(shuffled, 4, mode, 11).assignment);
  }
  EXPECT_NE(hp::make_folds(ds, 4, hp::FoldMode::kRandom, 11).assignment,
            hp::make_folds(ds, 4, hp::FoldMode::kRandom, 12).assignment);
}

TEST(Folds, FixedTestCount) {
  hp::SynthConfig cfg;
  const hp::Dataset ds = hp::synth_dataset(cfg, 25000);
  const hp::FoldPlan plan = hp::make_folds(ds, 0, hp::FoldMode::kFixedTestCount, 1, 1000);
  std::size_t test = 0;
  for (std::size_t f : plan.folds_of(ds)) test += f == 0;
  EXPECT_EQ(test, 1000u);
  EXPECT_EQ(ds.size() - test, 24000u);
  EXPECT_EQ(plan.test_folds, std::vector<std::size_t>{0});
}

TEST(Folds, Errors) {
  hp::SynthConfig cfg;
  cfg.subjects = 3;
  const hp::Dataset ds = hp::synth_dataset(cfg, 30);
  EXPECT_THROW(hp::make_folds(ds, 4, hp::FoldMode::kSubjectDisjoint, 0), hp::DataError);
  EXPECT_THROW(hp::make_folds(ds, 31, hp::FoldMode::kRandom, 0), hp::DataError);
  EXPECT_THROW(hp::make_folds(ds, 1, hp::FoldMode::kRandom, 0), hp::UsageError);
  EXPECT_THROW(hp::make_folds(ds, 0, hp::FoldMode::kFixedTestCount, 0, 30), hp::DataError);
  hp::Dataset dup = ds;
  dup.push_back(ds[0]);
  EXPECT_THROW(hp::make_folds(dup, 2, hp::FoldMode::kRandom, 0), hp::DataError);
}
