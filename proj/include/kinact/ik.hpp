#pragma once

// Box-constrained QP inverse kinematics: damped Gauss-Newton on the weighted
// marker residual, each step an active-set QP honoring joint limits.

#include <array>

#include <Eigen/Core>

#include "kinact/biomech.hpp"

namespace kinact::ik {

using biomech::kNumMarkers;
using biomech::kNumStateDofs;

struct IkConfig {
  double damping = 1e-3;
  int max_iterations = 10;
  /// Stop when the RMS residual changes by less than this (m).
  double tolerance = 1e-5;
  /// Per-frame wall-clock budget; <= 0 disables the check.
  double time_budget_ms = 15.0;
  std::array<double, kNumMarkers> marker_weights = filled_weights();
  /// State DoFs (3 base translation, 3 base rotation, 22 joints) held fixed.
  std::array<bool, kNumStateDofs> locked{};

  void validate() const;

 private:
  static std::array<double, kNumMarkers> filled_weights() {
    std::array<double, kNumMarkers> w{};
    w.fill(1.0);
    return w;
  }
};

struct IkSolution {
  biomech::JointAngleFrame frame;
  /// Weighted RMS marker distance (m) over markers with positive weight.
  double residual_rms = 0.0;
  int iterations_used = 0;
  bool converged = false;
};

struct QpOptions {
  int max_iterations = 500;
  double symmetry_tol = 1e-9;
};

/// Minimizes 0.5 x'Hx + g'x over lo <= x <= hi with a primal active-set
/// method. Infinite bounds are allowed. H must be positive definite on every
/// free subspace reached (guaranteed once damped).
Eigen::VectorXd solve_box_qp(const Eigen::MatrixXd& h, const Eigen::VectorXd& g,
                             const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                             const QpOptions& options = {});

/// Infinity norm of x - clamp(x - (Hx + g), lo, hi); zero exactly at a KKT point.
double kkt_residual(const Eigen::MatrixXd& h, const Eigen::VectorXd& g, const Eigen::VectorXd& lo,
                    const Eigen::VectorXd& hi, const Eigen::VectorXd& x);

/// Rigid pelvis pose aligning the neutral-pose root-segment markers with the
/// targets (Kabsch); falls back to all valid markers if fewer than three
/// root markers are valid.
biomech::BasePose initial_base(const biomech::BiomechModel& model,
                               const biomech::MarkerFrame& targets);

/// Throws kUnderDetermined (< 6 weighted valid markers), kNonFinite, or
/// kInvalidArgument (warm start outside the joint limits).
IkSolution solve_frame(const biomech::BiomechModel& model, const biomech::MarkerFrame& targets,
                       const biomech::JointAngleFrame& warm, const IkConfig& config = {});

/// Streaming solver carrying the warm start from frame to frame. The first
/// frame starts from the neutral pose at initial_base(). Single owner.
class IkSession {
 public:
  IkSession(const biomech::BiomechModel& model, IkConfig config = {});

  IkSolution step(const biomech::MarkerFrame& targets);
  void reset() { has_warm_ = false; }
  bool has_warm_start() const { return has_warm_; }

 private:
  const biomech::BiomechModel* model_;
  IkConfig config_;
  biomech::JointAngleFrame warm_;
  bool has_warm_ = false;
};

}  // namespace kinact::ik
