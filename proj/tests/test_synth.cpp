#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "kinact/augment.hpp"
#include "kinact/camgeo.hpp"
#include "kinact/error.hpp"
#include "kinact/ik.hpp"
#include "kinact/synth.hpp"

using namespace kinact;
using namespace kinact::synth;

namespace {

const biomech::BiomechModel& model() { return biomech::default_model(); }

std::vector<camgeo::CameraParams> rig() {
  return camgeo::load_calibration(std::filesystem::path(KINACT_DATA_DIR) / "stereo_rig.json");
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kIo;
}

/// Joint angles recovered by the geometric chain: triangulation, fallback
/// markers, then IK.
std::vector<biomech::JointVector> recover(const std::vector<biomech::JointAngleFrame>& frames) {
  const auto cams = rig();
  const auto streams = render_keypoints(frames, model(), cams);
  ik::IkConfig config;
  config.time_budget_ms = 0.0;
  ik::IkSession session(model(), config);
  std::vector<biomech::JointVector> out;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    std::vector<camgeo::Keypoints2D> views;
    for (const auto& s : streams) views.push_back(s[f]);
    const auto jc = camgeo::triangulate_frame(cams, views);
    const auto markers = augment::geometric_fallback(model(), jc);
    out.push_back(session.step(markers).frame.q);
  }
  return out;
}

double rms(const biomech::JointVector& a, const biomech::JointVector& b) {
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

double rotation_angle(const Mat3& r) { return log_so3(r).norm(); }

}  // namespace

TEST_CASE("rest pose and gait construction") {
  const Eigen::Vector4d zero = Eigen::Vector4d::Zero();
  for (double t = 0.0; t < 10.0; t += 0.1) {
    CHECK(label_pose(label::kStanding, label::kIdle, t, zero).cwiseAbs().maxCoeff() <= 0.05);
    CHECK(label_pose(label::kStanding, label::kIdle, t, Eigen::Vector4d::Ones()).cwiseAbs().maxCoeff() <= 0.05);
  }
  const int r_hip = model().joint_index("r_hip_flexion");
  const int l_hip = model().joint_index("l_hip_flexion");
  for (double t = 0.0; t < 3.0; t += 0.05) {
    const auto now = label_pose(label::kWalking, label::kIdle, t, zero);
    const auto later = label_pose(label::kWalking, label::kIdle, t + 0.5, zero);
    CHECK(now[l_hip] == doctest::Approx(later[r_hip]).epsilon(1e-12));
  }
  const auto a = label_pose(label::kWalking, label::kIdle, 0.0, zero);
  const auto b = label_pose(label::kWalking, label::kIdle, 0.25, zero);
  CHECK(std::abs(a[r_hip] - b[r_hip]) > 0.1);
}

TEST_CASE("generated motions respect joint limits and reject bad labels") {
  for (int lower = 1; lower <= 7; ++lower) {
    for (int upper = 8; upper <= 17; ++upper) {
      const auto frames = generate_motion(lower, upper, 4.0, model(), 100 * lower + upper);
      CHECK(frames.size() == 40);
      for (const auto& f : frames) REQUIRE(model().within_limits(f.q));
    }
  }
  CHECK(code_of([] { generate_motion(8, 11, 1.0, model(), 1); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { generate_motion(1, 7, 1.0, model(), 1); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { generate_motion(1, 11, 0.0, model(), 1); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("OU noise has the configured spread") {
  MotionOptions options;
  options.noise_sigma = 0.02;
  const auto frames = generate_motion(1, 11, 2000.0, model(), 9, options);
  const auto clean = generate_motion(1, 11, 2000.0, model(), 9, [] {
    MotionOptions o;
    o.noise_sigma = 0.0;
    return o;
  }());
  double ss = 0.0, lag = 0.0;
  std::size_t n = 0;
  const int j = model().joint_index("r_elbow_pronation");
  for (std::size_t k = 1; k < frames.size(); ++k) {
    const double e = frames[k].q[j] - clean[k].q[j];
    const double e0 = frames[k - 1].q[j] - clean[k - 1].q[j];
    ss += e * e;
    lag += e * e0;
    ++n;
  }
  const double sigma = std::sqrt(ss / n);
  CHECK(sigma == doctest::Approx(0.02).epsilon(0.15));
  // Lag-one autocorrelation exp(-dt / tau) = exp(-0.1).
  CHECK(lag / ss == doctest::Approx(std::exp(-0.1)).epsilon(0.05));
}

TEST_CASE("transition labels") {
  CHECK(transition_label(3, 1) == 5);
  CHECK(transition_label(4, 2) == 5);
  CHECK(transition_label(1, 3) == 6);
  CHECK(transition_label(4, 3) == 6);
  CHECK(transition_label(2, 4) == 7);
  CHECK(transition_label(1, 2) == 2);
  CHECK(transition_label(3, 3) == 3);
}

TEST_CASE("scripts") {
  const auto scripts = make_scripts(10, 4);
  for (const auto& s : scripts) {
    CHECK(s.duration == 180.0);
    CHECK(s.cues.front().time == 0.0);
    for (std::size_t i = 1; i < s.cues.size(); ++i) {
      const double gap = s.cues[i].time - s.cues[i - 1].time;
      CHECK(gap >= 5.0);
      CHECK(gap <= 15.0);
    }
    for (const auto& c : s.cues) {
      CHECK(c.lower >= 1);
      CHECK(c.lower <= 4);
      CHECK(is_upper_label(c.upper));
    }
  }
  const auto again = make_scripts(10, 4);
  for (std::size_t i = 0; i < scripts.size(); ++i) {
    CHECK(scripts[i].seed == again[i].seed);
    CHECK(scripts[i].cues.size() == again[i].cues.size());
  }
  TrialScript bad;
  bad.cues = {{0.0, 5, 11}};
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kInvalidArgument);
  bad.cues = {{1.0, 1, 11}};
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("sitting to standing inserts a standing-up segment") {
  TrialScript script;
  script.duration = 20.0;
  script.cues = {{0.0, label::kSitting, label::kIdle}, {10.0, label::kStanding, label::kIdle}};
  const auto seq = generate_trial(script, model());
  REQUIRE(seq.frames.size() == 200);
  std::size_t standing_up = 0;
  for (std::size_t f = 0; f < 200; ++f) {
    if (f < 100) CHECK(seq.lower[f] == label::kSitting);
    if (f >= 100 && f < 110) CHECK(seq.lower[f] == label::kStandingUp);
    if (f >= 110) CHECK(seq.lower[f] == label::kStanding);
    standing_up += seq.lower[f] == label::kStandingUp;
    CHECK(seq.upper[f] == label::kIdle);
  }
  CHECK(standing_up == 10);
  // Knee flexion moves from the seated value towards zero across the segment.
  const int knee = model().joint_index("r_knee_flexion");
  CHECK(seq.frames[99].q[knee] > 1.2);
  CHECK(seq.frames[115].q[knee] < 0.15);
}

TEST_CASE("default batch: determinism, coverage, balance and limits") {
  const auto scripts = make_scripts(10, 1);
  std::map<int, std::size_t> frames;
  for (const auto& script : scripts) {
    const auto seq = generate_trial(script, model());
    seq.validate();
    CHECK(seq.frames.size() == 1800);
    for (std::size_t f = 0; f < seq.frames.size(); ++f) {
      ++frames[seq.lower[f]];
      ++frames[seq.upper[f]];
      REQUIRE(model().within_limits(seq.frames[f].q));
    }
  }
  for (int id = 1; id <= kNumLabels; ++id) CHECK(frames[id] > 0);

  const auto balanced = [&](int first, int last) {
    double mean = 0.0;
    for (int id = first; id <= last; ++id) mean += static_cast<double>(frames[id]);
    mean /= last - first + 1;
    for (int id = first; id <= last; ++id) {
      INFO("label " << id << " frames " << frames[id] << " mean " << mean);
      CHECK(std::abs(static_cast<double>(frames[id]) - mean) <= 0.2 * mean);
    }
  };
  balanced(1, 4);
  balanced(8, 17);

  const auto a = generate_trial(scripts[3], model());
  const auto b = generate_trial(scripts[3], model());
  CHECK(a.lower == b.lower);
  CHECK(a.upper == b.upper);
  bool same = true;
  for (std::size_t f = 0; f < a.frames.size(); ++f) same = same && a.frames[f].q == b.frames[f].q;
  CHECK(same);
}

TEST_CASE("rendering and the geometric round trip") {
  const auto cams = rig();
  auto frames = generate_motion(label::kWalking, label::kRightArmPicking, 2.0, model(), 5);
  const auto r1 = render_keypoints(frames, model(), cams);
  const auto r2 = render_keypoints(frames, model(), cams);
  REQUIRE(r1.size() == 2);
  REQUIRE(r1[0].size() == frames.size());
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t f = 0; f < frames.size(); ++f) {
      CHECK(r1[c][f].camera_id == cams[c].id);
      for (std::size_t j = 0; j < biomech::kNumKeypoints; ++j) {
        CHECK(r1[c][f].points[j].u == r2[c][f].points[j].u);
        CHECK(r1[c][f].points[j].confidence == 1.0);
      }
    }

  // Forearm pronation leaves every joint center in place, so it is only
  // checked on a motion that keeps it neutral.
  MotionOptions quiet;
  quiet.noise_sigma = 0.0;
  const auto plain = generate_motion(label::kWalking, label::kIdle, 2.0, model(), 5, quiet);
  const auto q_plain = recover(plain);
  double worst_plain = 0.0;
  for (std::size_t f = 0; f < plain.size(); ++f) worst_plain = std::max(worst_plain, rms(q_plain[f], plain[f].q));
  INFO("all joints, worst per-frame RMS " << worst_plain);
  CHECK(worst_plain < 0.05);

  const auto q = recover(frames);
  const int r_pron = model().joint_index("r_elbow_pronation");
  const int l_pron = model().joint_index("l_elbow_pronation");
  double worst = 0.0;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    biomech::JointVector e = q[f] - frames[f].q;
    e[r_pron] = e[l_pron] = 0.0;
    worst = std::max(worst, std::sqrt(e.squaredNorm() / (biomech::kNumDofs - 2)));
  }
  INFO("observable joints, worst per-frame RMS " << worst);
  CHECK(worst < 0.05);

  // Subject turned 90 degrees about the vertical axis.
  auto turned = frames;
  for (auto& f : turned) f.base.rotation = Vec3(0.0, std::numbers::pi / 2, 0.0);
  const auto q_turned = recover(turned);
  double diff = 0.0;
  for (std::size_t f = 0; f < frames.size(); ++f) diff = std::max(diff, (q[f] - q_turned[f]).cwiseAbs().maxCoeff());
  INFO("max angle change " << diff);
  CHECK(diff < 1e-3);
}

TEST_CASE("random rigid transforms") {
  const auto frames = generate_motion(label::kSquatting, label::kStopSign, 1.0, model(), 2);
  std::vector<camgeo::JointCenters3D> seq;
  for (const auto& f : frames) seq.push_back(augment::joint_centers_from_pose(model(), f.q, f.base, f.timestamp));

  const auto same = random_rigid_transform(seq, kIdentitySeed);
  for (std::size_t f = 0; f < seq.size(); ++f)
    for (std::size_t j = 0; j < biomech::kNumKeypoints; ++j) CHECK(same[f].points[j] == seq[f].points[j]);

  const auto moved = random_rigid_transform(seq, 3);
  double worst = 0.0;
  for (std::size_t f = 0; f < seq.size(); ++f)
    for (std::size_t i = 0; i < biomech::kNumKeypoints; ++i)
      for (std::size_t j = i + 1; j < biomech::kNumKeypoints; ++j)
        worst = std::max(worst, std::abs((moved[f].points[i] - moved[f].points[j]).norm() -
                                         (seq[f].points[i] - seq[f].points[j]).norm()));
  CHECK(worst < 1e-12);
  CHECK((moved[0].points[0] - seq[0].points[0]).norm() > 1e-3);

  std::vector<Mat3> rotations;
  for (std::uint64_t s = 1; s <= 4; ++s) {
    const Rigid t = rigid_for_seed(s);
    CHECK(t.translation().cwiseAbs().maxCoeff() <= 1.0);
    rotations.push_back(t.linear());
  }
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) CHECK(rotation_angle(rotations[i] * rotations[j].transpose()) > 0.1);
}

TEST_CASE("whole-trial splits") {
  const auto s = split_corpus(10, {0.7, 0.2, 0.1}, 8);
  CHECK(s.train.size() == 7);
  CHECK(s.val.size() == 2);
  CHECK(s.test.size() == 1);
  std::set<std::size_t> all;
  for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(part->begin(), part->end());
  CHECK(all.size() == 10);
  const auto again = split_corpus(10, {0.7, 0.2, 0.1}, 8);
  CHECK(again.train == s.train);
  CHECK(again.val == s.val);
  CHECK(again.test == s.test);
  CHECK(code_of([] { split_corpus(2, {0.7, 0.2, 0.1}, 1); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { split_corpus(10, {0.7, 0.2, 0.2}, 1); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("corpus files round trip") {
  CorpusOptions options;
  options.trials = 3;
  options.ratios = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  options.script.duration = 12.0;
  const auto corpus = generate_corpus(model(), options);
  const auto dir = std::filesystem::temp_directory_path() / "kinact_test_corpus";
  std::filesystem::remove_all(dir);
  write_corpus(dir, corpus);
  CHECK(std::filesystem::exists(dir / "manifest.json"));
  const auto back = read_corpus(dir);
  REQUIRE(back.trials.size() == 3);
  CHECK(back.seed == corpus.seed);
  CHECK(back.split.train == corpus.split.train);
  CHECK(back.split.test == corpus.split.test);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& a = corpus.trials[i].sequence;
    const auto& b = back.trials[i].sequence;
    REQUIRE(a.frames.size() == b.frames.size());
    CHECK(a.lower == b.lower);
    CHECK(a.upper == b.upper);
    for (std::size_t f = 0; f < a.frames.size(); ++f) {
      REQUIRE(a.frames[f].q == b.frames[f].q);
      REQUIRE(a.frames[f].timestamp == b.frames[f].timestamp);
    }
  }
  CHECK(back.subset(back.split.val).size() == 1);
  std::filesystem::remove(dir / corpus.trials[0].file);
  CHECK(code_of([&] { read_corpus(dir); }) == ErrorCode::kIo);
  std::filesystem::remove_all(dir);
}
