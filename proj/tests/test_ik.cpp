#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "kinact/error.hpp"
#include "kinact/ik.hpp"
#include "test_support.hpp"

using namespace kinact;
using namespace kinact::biomech;
using namespace kinact::ik;

namespace {

IkConfig exact_config() {
  IkConfig cfg;
  cfg.max_iterations = 100;
  cfg.tolerance = 0.0;
  cfg.time_budget_ms = 0.0;
  return cfg;
}

double qp_objective(const Eigen::MatrixXd& h, const Eigen::VectorXd& g, const Eigen::VectorXd& x) {
  return 0.5 * x.dot(h * x) + g.dot(x);
}

// Reference: projected gradient descent with step 1/L.
Eigen::VectorXd projected_gradient(const Eigen::MatrixXd& h, const Eigen::VectorXd& g,
                                   const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  const double step = 1.0 / Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h).eigenvalues().maxCoeff();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(g.size()).cwiseMax(lo).cwiseMin(hi);
  for (int it = 0; it < 1000000; ++it) {
    const Eigen::VectorXd next = (x - step * (h * x + g)).cwiseMax(lo).cwiseMin(hi);
    if ((next - x).lpNorm<Eigen::Infinity>() == 0.0) break;
    x = next;
  }
  return x;
}

}  // namespace

TEST_CASE("box QP: unconstrained minimum") {
  const Eigen::MatrixXd h = Eigen::MatrixXd::Identity(28, 28);
  const Eigen::VectorXd g = -Eigen::VectorXd::Ones(28);
  const auto x = solve_box_qp(h, g, Eigen::VectorXd::Constant(28, -10), Eigen::VectorXd::Constant(28, 10));
  CHECK((x - Eigen::VectorXd::Ones(28)).norm() < 1e-14);
}

TEST_CASE("box QP: single active bound") {
  const Eigen::MatrixXd h = Eigen::MatrixXd::Identity(28, 28);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(28);
  g[0] = -5.0;
  const Eigen::VectorXd lo = Eigen::VectorXd::Constant(28, -1);
  const Eigen::VectorXd hi = Eigen::VectorXd::Constant(28, 1);
  const auto x = solve_box_qp(h, g, lo, hi);
  CHECK(x[0] == 1.0);
  CHECK(x.tail(27).isZero(0.0));
  CHECK(kkt_residual(h, g, lo, hi, x) < 1e-8);
}

TEST_CASE("box QP agrees with a projected-gradient oracle") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd a(40, 28);
    for (auto& v : a.reshaped()) v = n(rng);
    Eigen::MatrixXd h = a.transpose() * a / 40.0;
    h.diagonal().array() += 1e-2;
    Eigen::VectorXd g(28), lo(28), hi(28);
    for (int i = 0; i < 28; ++i) {
      g[i] = 2.0 * n(rng);
      lo[i] = -u(rng);
      hi[i] = u(rng);
    }
    const auto x = solve_box_qp(h, g, lo, hi);
    const auto ref = projected_gradient(h, g, lo, hi);
    CHECK((x.array() >= lo.array()).all());
    CHECK((x.array() <= hi.array()).all());
    CHECK(std::abs(qp_objective(h, g, x) - qp_objective(h, g, ref)) < 1e-8);
    CHECK(kkt_residual(h, g, lo, hi, x) < 1e-8);
  }
}

TEST_CASE("box QP rejects inconsistent bounds") {
  const Eigen::MatrixXd h = Eigen::MatrixXd::Identity(3, 3);
  const Eigen::VectorXd g = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd lo = Eigen::VectorXd::Zero(3), hi = Eigen::VectorXd::Ones(3);
  lo[1] = 2.0;
  CHECK_THROWS_AS(solve_box_qp(h, g, lo, hi), Error);
}

TEST_CASE("forward-kinematics round trip") {
  const auto& m = default_model();
  std::mt19937_64 rng(31);
  const auto cfg = exact_config();
  for (int trial = 0; trial < 20; ++trial) {
    const JointVector q = testing::away_from_gimbal_lock(m, testing::random_q(rng, m, 0.6));
    const BasePose b = testing::random_base(rng);
    MarkerFrame targets = forward_kinematics(m, q, b);
    JointAngleFrame warm;
    warm.q = testing::perturbed_q(rng, m, q, 0.3);
    warm.base = initial_base(m, targets);
    const auto sol = solve_frame(m, targets, warm, cfg);
    CHECK((sol.frame.q - q).lpNorm<Eigen::Infinity>() < 1e-4);
    CHECK(sol.residual_rms < 1e-6);
    CHECK(m.within_limits(sol.frame.q, 0.0));
  }
}

TEST_CASE("planar two-link arm matches the closed-form solution") {
  const auto& m = default_model();
  const int shoulder = m.joint_index("r_shoulder_flexion");
  const int elbow = m.joint_index("r_elbow_flexion");
  const int forearm = m.segment_index("r_forearm");
  const int wrist = m.marker_index("r_wrist_rad");
  REQUIRE(m.joints()[shoulder].axis == Vec3::UnitZ());
  REQUIRE(m.joints()[elbow].axis == Vec3::UnitZ());

  // Link vectors in the plane normal to z: shoulder->elbow and elbow->marker.
  const Eigen::Vector2d a = m.segments()[forearm].offset.head<2>();
  const Eigen::Vector2d c = m.markers()[wrist].offset.head<2>();
  const double theta1 = 0.7;
  const double theta2 = 1.1;
  auto rot = [](double t) { return Eigen::Rotation2Dd(t).toRotationMatrix(); };
  const Eigen::Vector2d target_rel = rot(theta1) * (a + rot(theta2) * c);

  // Closed form: |a + R(t2) c| = |p| fixes t2; the bearing then fixes t1.
  const double r2 = target_rel.squaredNorm();
  const double cos_phi = (r2 - a.squaredNorm() - c.squaredNorm()) / (2 * a.norm() * c.norm());
  const double base_angle = std::atan2(c.y(), c.x()) - std::atan2(a.y(), a.x());
  const double t2 = std::acos(std::clamp(cos_phi, -1.0, 1.0)) - base_angle;
  const Eigen::Vector2d reach = a + rot(t2) * c;
  const double t1 = std::atan2(target_rel.y(), target_rel.x()) - std::atan2(reach.y(), reach.x());

  JointVector q_true = JointVector::Zero();
  q_true[shoulder] = theta1;
  q_true[elbow] = theta2;
  const auto truth = forward_kinematics(m, q_true, BasePose{});

  // Targets: the fixed trunk markers and the two wrist markers only.
  MarkerFrame targets = truth;
  const int thorax = m.segment_index("thorax");
  for (std::size_t i = 0; i < kNumMarkers; ++i) {
    const int seg = m.markers()[i].segment;
    targets.valid[i] = seg == 0 || seg == thorax ||
                       (seg == forearm && m.markers()[i].name.find("wrist") != std::string::npos);
  }
  IkConfig cfg = exact_config();
  cfg.locked.fill(true);
  cfg.locked[kNumBaseDofs + shoulder] = false;
  cfg.locked[kNumBaseDofs + elbow] = false;
  JointAngleFrame warm;
  warm.q[shoulder] = 0.3;
  warm.q[elbow] = 0.5;
  const auto sol = solve_frame(m, targets, warm, cfg);
  CHECK(std::abs(sol.frame.q[shoulder] - t1) < 1e-6);
  CHECK(std::abs(sol.frame.q[elbow] - t2) < 1e-6);
  CHECK(std::abs(t1 - theta1) < 1e-9);
}

TEST_CASE("unreachable joint angle is pinned exactly at the limit") {
  const auto& m = default_model();
  const int elbow = m.joint_index("r_elbow_flexion");
  JointVector q = JointVector::Zero();
  q[elbow] = m.joints()[elbow].upper + 0.4;
  const auto targets = forward_kinematics(m, q, BasePose{});
  const auto sol = solve_frame(m, targets, JointAngleFrame{}, exact_config());
  CHECK(sol.frame.q[elbow] == m.joints()[elbow].upper);
  CHECK(sol.residual_rms > 0.0);
  CHECK(m.within_limits(sol.frame.q, 0.0));
}

TEST_CASE("residual is non-increasing across iterations") {
  const auto& m = default_model();
  std::mt19937_64 rng(41);
  const JointVector q = testing::random_q(rng, m, 0.8);
  const auto targets = forward_kinematics(m, q, BasePose{});
  IkConfig cfg = exact_config();
  double previous = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 12; ++k) {
    cfg.max_iterations = k;
    const auto sol = solve_frame(m, targets, JointAngleFrame{}, cfg);
    CHECK(sol.residual_rms <= previous);
    previous = sol.residual_rms;
  }
}

TEST_CASE("joint angles are viewpoint invariant") {
  const auto& m = default_model();
  std::mt19937_64 rng(51);
  IkConfig cfg = exact_config();
  cfg.max_iterations = 30;
  std::normal_distribution<double> noise(0.0, 0.005);
  for (int trial = 0; trial < 5; ++trial) {
    const JointVector q = testing::random_q(rng, m, 0.6);
    MarkerFrame targets = forward_kinematics(m, q, BasePose{});
    for (auto& p : targets.markers) p += Vec3(noise(rng), noise(rng), noise(rng));
    JointAngleFrame warm;
    warm.base = initial_base(m, targets);
    const auto ref = solve_frame(m, targets, warm, cfg);

    const Rigid t = random_rigid(rng, 1.0);
    MarkerFrame moved = targets;
    for (auto& p : moved.markers) p = t * p;
    JointAngleFrame warm_t = warm;
    warm_t.base = BasePose::from_transform(t * warm.base.transform());
    const auto sol = solve_frame(m, moved, warm_t, cfg);
    CHECK((sol.frame.q - ref.frame.q).lpNorm<Eigen::Infinity>() < 1e-6);
  }
}

TEST_CASE("identical inputs give bitwise identical outputs") {
  const auto& m = default_model();
  std::mt19937_64 rng(61);
  const auto targets = forward_kinematics(m, testing::random_q(rng, m, 0.5), testing::random_base(rng));
  JointAngleFrame warm;
  warm.base = initial_base(m, targets);
  const auto a = solve_frame(m, targets, warm, exact_config());
  const auto b = solve_frame(m, targets, warm, exact_config());
  CHECK(a.frame.q == b.frame.q);
  CHECK(a.frame.base.rotation == b.frame.base.rotation);
  CHECK(a.residual_rms == b.residual_rms);
}

TEST_CASE("precondition failures") {
  const auto& m = default_model();
  MarkerFrame targets = forward_kinematics(m, JointVector::Zero(), BasePose{});
  targets.valid.fill(false);
  for (int i = 0; i < 5; ++i) targets.valid[i] = true;
  try {
    solve_frame(m, targets, JointAngleFrame{});
    FAIL("expected under-determined");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kUnderDetermined);
  }
  targets.valid.fill(true);
  targets.markers[4].x() = std::nan("");
  try {
    solve_frame(m, targets, JointAngleFrame{});
    FAIL("expected non-finite");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonFinite);
  }
  targets.valid[4] = false;
  CHECK_NOTHROW(solve_frame(m, targets, JointAngleFrame{}));
  JointAngleFrame bad;
  bad.q[0] = 10.0;
  CHECK_THROWS_AS(solve_frame(m, targets, bad), Error);
}

TEST_CASE("session tracks a smooth motion with warm starts") {
  const auto& m = default_model();
  IkConfig cfg;
  cfg.time_budget_ms = 0.0;
  IkSession session(m, cfg);
  std::mt19937_64 rng(71);
  const JointVector q0 = testing::away_from_gimbal_lock(m, testing::random_q(rng, m, 0.3));
  const JointVector q1 = testing::away_from_gimbal_lock(m, testing::random_q(rng, m, 0.3));
  const BasePose b = testing::random_base(rng);
  for (int k = 0; k <= 20; ++k) {
    const JointVector q = q0 + (q1 - q0) * (k / 20.0);
    auto targets = forward_kinematics(m, q, b);
    targets.timestamp = 0.1 * k;
    const auto sol = session.step(targets);
    CHECK(sol.frame.timestamp == targets.timestamp);
    if (k > 0) CHECK(sol.residual_rms < 1e-4);
  }
}
