#include <doctest.h>

#include <cmath>
#include <random>

#include "kinact/biomech.hpp"
#include "kinact/error.hpp"
#include "test_support.hpp"

using namespace kinact;
using namespace kinact::biomech;

namespace {

ErrorCode error_of(const nlohmann::json& doc) {
  try {
    BiomechModel::from_json(doc);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kIo;  // sentinel: no error raised
}

// Neutral-pose marker position by summing scaled offsets up the chain.
Vec3 neutral_oracle(const BiomechModel& m, const Attachment& a) {
  Vec3 p = m.segments()[a.segment].scale * a.offset;
  for (int s = a.segment; m.segments()[s].parent >= 0; s = m.segments()[s].parent) {
    const int parent = m.segments()[s].parent;
    p += m.segments()[parent].scale * m.segments()[s].offset;
  }
  return p;
}

MarkerFrame perturbed_fk(const BiomechModel& m, const JointVector& q, const BasePose& base,
                         std::size_t column, double h) {
  Eigen::Matrix<double, 6, 1> db = Eigen::Matrix<double, 6, 1>::Zero();
  JointVector qq = q;
  if (column < kNumBaseDofs) {
    db[static_cast<Eigen::Index>(column)] = h;
  } else {
    qq[static_cast<Eigen::Index>(column - kNumBaseDofs)] += h;
  }
  return forward_kinematics(m, qq, retract_base(base, db));
}

}  // namespace

TEST_CASE("default template counts and masks") {
  const auto& m = default_model();
  CHECK(m.joints().size() == 22);
  CHECK(m.markers().size() == 29);
  CHECK(m.keypoints().size() == 26);
  CHECK(m.lower_mask().size() == 12);
  CHECK(m.upper_mask().size() == 18);
  std::vector<bool> covered(22, false);
  for (int i : m.lower_mask()) covered[i] = true;
  for (int i : m.upper_mask()) covered[i] = true;
  CHECK(std::all_of(covered.begin(), covered.end(), [](bool b) { return b; }));
}

TEST_CASE("model file loads from disk and round trips") {
  const auto m = load_model(std::filesystem::path(KINACT_DATA_DIR) / "default_model.json");
  const auto again = BiomechModel::from_json(m.to_json());
  CHECK(again.to_json() == m.to_json());
}

TEST_CASE("model validation errors") {
  const auto base = nlohmann::json::parse(default_model_json());
  auto doc = base;
  doc["joints"].erase(doc["joints"].size() - 1);
  CHECK(error_of(doc) == ErrorCode::kModelValidation);

  doc = base;
  doc["joints"][3]["axis"] = {2, 0, 0};
  CHECK(error_of(doc) == ErrorCode::kModelValidation);

  doc = base;
  doc["joints"][5]["lower"] = 1.0;
  doc["joints"][5]["upper"] = -1.0;
  CHECK(error_of(doc) == ErrorCode::kModelValidation);

  doc = base;
  doc["markers"].erase(0);
  CHECK(error_of(doc) != ErrorCode::kIo);

  doc = base;
  doc["masks"]["lower"].erase(0);
  CHECK(error_of(doc) == ErrorCode::kModelValidation);
}

TEST_CASE("zero pose reproduces the template's neutral positions") {
  const auto& m = default_model();
  const auto fk = forward_kinematics(m, JointVector::Zero(), BasePose{});
  for (std::size_t i = 0; i < kNumMarkers; ++i) {
    CHECK((fk.markers[i] - neutral_oracle(m, m.markers()[i])).norm() < 1e-15);
  }
  const auto kp = keypoint_positions(m, JointVector::Zero(), BasePose{});
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    CHECK((kp[i] - neutral_oracle(m, m.keypoints()[i])).norm() < 1e-15);
  }
}

TEST_CASE("elbow flexion moves only distal markers") {
  const auto& m = default_model();
  const int elbow = m.joint_index("r_elbow_flexion");
  REQUIRE(elbow >= 0);
  JointVector q = JointVector::Zero();
  const auto before = forward_kinematics(m, q, BasePose{});
  q[elbow] = M_PI / 2;
  const auto after = forward_kinematics(m, q, BasePose{});
  const int forearm = m.segment_index("r_forearm");
  for (std::size_t i = 0; i < kNumMarkers; ++i) {
    const bool distal = m.in_subtree(forearm, m.markers()[i].segment);
    if (distal) {
      CHECK((after.markers[i] - before.markers[i]).norm() > 1e-3);
    } else {
      CHECK(after.markers[i] == before.markers[i]);
    }
  }
}

TEST_CASE("base translation and rigid equivariance") {
  const auto& m = default_model();
  std::mt19937_64 rng(1);
  const JointVector q = testing::random_q(rng, m);
  const auto ref = forward_kinematics(m, q, BasePose{});
  BasePose shifted;
  shifted.translation = Vec3(1, 0, 0);
  const auto moved = forward_kinematics(m, q, shifted);
  for (std::size_t i = 0; i < kNumMarkers; ++i) {
    CHECK((moved.markers[i] - ref.markers[i] - Vec3(1, 0, 0)).norm() < 1e-15);
  }
  for (int trial = 0; trial < 10; ++trial) {
    const BasePose b = testing::random_base(rng);
    const Rigid t = random_rigid(rng, 1.0);
    const auto fk = forward_kinematics(m, q, b);
    const auto fk_t = forward_kinematics(m, q, BasePose::from_transform(t * b.transform()));
    for (std::size_t i = 0; i < kNumMarkers; ++i) {
      CHECK((fk_t.markers[i] - t * fk.markers[i]).norm() < 1e-12);
    }
  }
}

TEST_CASE("marker Jacobian matches central differences") {
  const auto& m = default_model();
  std::mt19937_64 rng(2);
  const double h = 1e-6;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const JointVector q = testing::random_q(rng, m);
    const BasePose b = testing::random_base(rng);
    const auto jac = marker_jacobian(m, q, b);
    for (std::size_t c = 0; c < kNumStateDofs; ++c) {
      const auto plus = perturbed_fk(m, q, b, c, h);
      const auto minus = perturbed_fk(m, q, b, c, -h);
      Eigen::VectorXd fd(3 * kNumMarkers);
      for (std::size_t i = 0; i < kNumMarkers; ++i) {
        fd.segment<3>(3 * i) = (plus.markers[i] - minus.markers[i]) / (2 * h);
      }
      const Eigen::VectorXd col = jac.col(static_cast<Eigen::Index>(c));
      const double rel = (fd - col).norm() / std::max(col.norm(), 1e-3);
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("Jacobian structure: locality and translation blocks") {
  const auto& m = default_model();
  std::mt19937_64 rng(3);
  const JointVector q = testing::random_q(rng, m);
  const BasePose b = testing::random_base(rng);
  const auto jac = marker_jacobian(m, q, b);
  for (std::size_t i = 0; i < kNumMarkers; ++i) {
    const auto rows = static_cast<Eigen::Index>(3 * i);
    CHECK(jac.block<3, 3>(rows, 0) == Mat3::Identity());
    for (std::size_t d = 0; d < kNumDofs; ++d) {
      if (!m.in_subtree(m.joints()[d].segment, m.markers()[i].segment)) {
        CHECK(jac.block<3, 1>(rows, static_cast<Eigen::Index>(kNumBaseDofs + d)).isZero(0.0));
      }
    }
  }
}

TEST_CASE("linearization error shrinks quadratically") {
  const auto& m = default_model();
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  const JointVector q = testing::random_q(rng, m, 0.5);
  const BasePose b = testing::random_base(rng);
  const auto jac = marker_jacobian(m, q, b);
  const auto f0 = forward_kinematics(m, q, b);
  Eigen::Matrix<double, kNumStateDofs, 1> dir;
  for (auto& v : dir) v = n(rng);
  dir.normalize();
  auto error_at = [&](double eps) {
    const Eigen::Matrix<double, kNumStateDofs, 1> d = eps * dir;
    const auto f = forward_kinematics(m, q + d.tail<kNumDofs>(), retract_base(b, d.head<6>()));
    Eigen::VectorXd diff(3 * kNumMarkers);
    for (std::size_t i = 0; i < kNumMarkers; ++i) diff.segment<3>(3 * i) = f.markers[i] - f0.markers[i];
    return (jac * d - diff).norm();
  };
  const double ratio = error_at(1e-3) / error_at(5e-4);
  CHECK(ratio == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("scaling from a standing frame") {
  const auto& m = default_model();
  const auto standing = forward_kinematics(m, JointVector::Zero(), BasePose{});
  for (double f : segment_scale_factors(m, standing)) CHECK(std::abs(f - 1.0) < 1e-9);
  const auto same = scale_model(m, standing);
  for (const auto& s : same.segments()) CHECK(std::abs(s.scale - 1.0) < 1e-9);

  // Uniform 1.1 about the pelvis (the pelvis origin is the world origin here).
  MarkerFrame bigger = standing;
  for (auto& p : bigger.markers) p *= 1.1;
  const auto scaled = scale_model(m, bigger);
  for (const auto& s : scaled.segments()) CHECK(std::abs(s.scale - 1.1) < 1e-6);

  // Scaling is idempotent on the scaled model's own output.
  const auto own = forward_kinematics(scaled, JointVector::Zero(), BasePose{});
  for (double f : segment_scale_factors(scaled, own)) CHECK(std::abs(f - 1.0) < 1e-9);

  // Arbitrary standing placement in the room does not matter.
  std::mt19937_64 rng(9);
  const auto placed = forward_kinematics(m, JointVector::Zero(), testing::random_base(rng));
  CHECK_NOTHROW(scale_model(m, placed));
}

TEST_CASE("deep squat is not a standing pose") {
  const auto& m = default_model();
  JointVector q = JointVector::Zero();
  q[m.joint_index("r_hip_flexion")] = 2.0;
  q[m.joint_index("l_hip_flexion")] = 2.0;
  q[m.joint_index("r_knee_flexion")] = 2.2;
  q[m.joint_index("l_knee_flexion")] = 2.2;
  const auto squat = forward_kinematics(m, q, BasePose{});
  try {
    scale_model(m, squat);
    FAIL("expected non-standing-pose error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonStandingPose);
  }
  MarkerFrame missing = forward_kinematics(m, JointVector::Zero(), BasePose{});
  missing.valid[3] = false;
  CHECK_THROWS_AS(scale_model(m, missing), Error);
}

TEST_CASE("marker and joint-angle records round trip") {
  const auto& m = default_model();
  std::mt19937_64 rng(5);
  JointAngleFrame f;
  f.timestamp = 1.25;
  f.q = testing::random_q(rng, m);
  f.base = testing::random_base(rng);
  const auto back = joint_angle_frame_from_json(joint_angle_frame_to_json(f, 0.001));
  CHECK(back.q == f.q);
  CHECK(back.base.translation == f.base.translation);
  CHECK(back.base.rotation == f.base.rotation);

  auto mf = forward_kinematics(m, f.q, f.base);
  mf.valid[7] = false;
  const auto mf2 = marker_frame_from_json(marker_frame_to_json(mf));
  CHECK(mf2.markers[3] == mf.markers[3]);
  CHECK_FALSE(mf2.valid[7]);
  CHECK(mf2.valid_count() == 28);
}
