#include "kinact/ik.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Cholesky>

#include "kinact/error.hpp"
#include "kinact/log.hpp"

namespace kinact::ik {

using biomech::BasePose;
using biomech::JointVector;
using biomech::kNumBaseDofs;
using biomech::kNumDofs;
using biomech::MarkerFrame;

void IkConfig::validate() const {
  if (!(damping > 0.0)) fail(ErrorCode::kInvalidArgument, "IkConfig: damping must be positive");
  if (max_iterations < 1) fail(ErrorCode::kInvalidArgument, "IkConfig: iterations must be >= 1");
  if (!(tolerance >= 0.0)) fail(ErrorCode::kInvalidArgument, "IkConfig: tolerance must be >= 0");
  for (double w : marker_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      fail(ErrorCode::kInvalidArgument, "IkConfig: marker weights must be finite and >= 0");
    }
  }
}

namespace {

enum class Bound : unsigned char { kFree, kLower, kUpper, kFixed };

}  // namespace

Eigen::VectorXd solve_box_qp(const Eigen::MatrixXd& h, const Eigen::VectorXd& g,
                             const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                             const QpOptions& options) {
  const Eigen::Index n = g.size();
  if (h.rows() != n || h.cols() != n || lo.size() != n || hi.size() != n) {
    fail(ErrorCode::kShapeMismatch, "solve_box_qp: inconsistent dimensions");
  }
  if ((h - h.transpose()).cwiseAbs().maxCoeff() > options.symmetry_tol * (1.0 + h.cwiseAbs().maxCoeff())) {
    fail(ErrorCode::kInvalidArgument, "solve_box_qp: H is not symmetric");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(lo[i] <= hi[i])) fail(ErrorCode::kInvalidArgument, "solve_box_qp: inconsistent bounds (lo > hi)");
  }

  Eigen::VectorXd x(n);
  std::vector<Bound> state(static_cast<std::size_t>(n), Bound::kFree);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& s = state[static_cast<std::size_t>(i)];
    if (lo[i] == hi[i]) {
      x[i] = lo[i];
      s = Bound::kFixed;
    } else if (lo[i] >= 0.0) {
      x[i] = lo[i];
      s = Bound::kLower;
    } else if (hi[i] <= 0.0) {
      x[i] = hi[i];
      s = Bound::kUpper;
    } else {
      x[i] = 0.0;
    }
  }

  const double dual_tol = 1e-13 * (1.0 + g.cwiseAbs().maxCoeff());
  std::vector<Eigen::Index> free;
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    free.clear();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (state[static_cast<std::size_t>(i)] == Bound::kFree) free.push_back(i);
    }
    Eigen::VectorXd z = x;
    if (!free.empty()) {
      const auto m = static_cast<Eigen::Index>(free.size());
      Eigen::MatrixXd hff(m, m);
      Eigen::VectorXd rhs(m);
      for (Eigen::Index a = 0; a < m; ++a) {
        double r = g[free[a]];
        for (Eigen::Index j = 0; j < n; ++j) {
          if (state[static_cast<std::size_t>(j)] != Bound::kFree) r += h(free[a], j) * x[j];
        }
        rhs[a] = -r;
        for (Eigen::Index b = 0; b < m; ++b) hff(a, b) = h(free[a], free[b]);
      }
      const Eigen::VectorXd y = hff.ldlt().solve(rhs);
      for (Eigen::Index a = 0; a < m; ++a) z[free[a]] = y[a];
    }

    // Ratio test along x -> z.
    double alpha = 1.0;
    Eigen::Index blocking = -1;
    Bound blocking_side = Bound::kFree;
    for (Eigen::Index i : free) {
      const double d = z[i] - x[i];
      if (z[i] < lo[i] && d < 0.0) {
        const double t = (lo[i] - x[i]) / d;
        if (t < alpha) {
          alpha = t;
          blocking = i;
          blocking_side = Bound::kLower;
        }
      } else if (z[i] > hi[i] && d > 0.0) {
        const double t = (hi[i] - x[i]) / d;
        if (t < alpha) {
          alpha = t;
          blocking = i;
          blocking_side = Bound::kUpper;
        }
      }
    }
    if (blocking >= 0) {
      for (Eigen::Index i : free) x[i] += alpha * (z[i] - x[i]);
      x[blocking] = blocking_side == Bound::kLower ? lo[blocking] : hi[blocking];
      state[static_cast<std::size_t>(blocking)] = blocking_side;
      // Other coordinates that crossed their bound through rounding are pinned too.
      for (Eigen::Index i : free) {
        if (x[i] < lo[i]) {
          x[i] = lo[i];
          state[static_cast<std::size_t>(i)] = Bound::kLower;
        } else if (x[i] > hi[i]) {
          x[i] = hi[i];
          state[static_cast<std::size_t>(i)] = Bound::kUpper;
        }
      }
      continue;
    }
    x = z;

    const Eigen::VectorXd grad = h * x + g;
    double worst = dual_tol;
    Eigen::Index release = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Bound s = state[static_cast<std::size_t>(i)];
      const double violation = s == Bound::kLower ? -grad[i] : s == Bound::kUpper ? grad[i] : 0.0;
      if (violation > worst) {
        worst = violation;
        release = i;
      }
    }
    if (release < 0) return x;
    state[static_cast<std::size_t>(release)] = Bound::kFree;
  }
  spdlog::warn("solve_box_qp: active-set iteration cap reached");
  return x;
}

double kkt_residual(const Eigen::MatrixXd& h, const Eigen::VectorXd& g, const Eigen::VectorXd& lo,
                    const Eigen::VectorXd& hi, const Eigen::VectorXd& x) {
  const Eigen::VectorXd grad = h * x + g;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double projected = std::clamp(x[i] - grad[i], lo[i], hi[i]);
    worst = std::max(worst, std::abs(x[i] - projected));
  }
  return worst;
}

BasePose initial_base(const biomech::BiomechModel& model, const MarkerFrame& targets) {
  const MarkerFrame neutral = biomech::forward_kinematics(model, JointVector::Zero(), BasePose{});
  std::array<double, kNumMarkers> weights{};
  int root_count = 0;
  int any_count = 0;
  for (std::size_t m = 0; m < kNumMarkers; ++m) {
    if (!targets.valid[m]) continue;
    ++any_count;
    if (model.markers()[m].segment == 0) {
      weights[m] = 1.0;
      ++root_count;
    }
  }
  if (root_count < 3) {
    if (any_count < 3) return {};
    for (std::size_t m = 0; m < kNumMarkers; ++m) weights[m] = targets.valid[m] ? 1.0 : 0.0;
  }
  return BasePose::from_transform(fit_rigid(neutral.markers, targets.markers, weights));
}

namespace {

double weighted_cost(const MarkerFrame& fk, const MarkerFrame& targets,
                     const std::array<double, kNumMarkers>& w) {
  double cost = 0.0;
  for (std::size_t m = 0; m < kNumMarkers; ++m) {
    if (w[m] > 0.0) cost += w[m] * (targets.markers[m] - fk.markers[m]).squaredNorm();
  }
  return cost;
}

}  // namespace

IkSolution solve_frame(const biomech::BiomechModel& model, const MarkerFrame& targets,
                       const biomech::JointAngleFrame& warm, const IkConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();

  std::array<double, kNumMarkers> w{};
  double weight_sum = 0.0;
  int active = 0;
  for (std::size_t m = 0; m < kNumMarkers; ++m) {
    w[m] = targets.valid[m] ? config.marker_weights[m] : 0.0;
    if (w[m] > 0.0) {
      if (!targets.markers[m].allFinite()) {
        fail(ErrorCode::kNonFinite, "solve_frame: non-finite target for marker " + model.markers()[m].name);
      }
      weight_sum += w[m];
      ++active;
    }
  }
  if (active < 6) {
    fail(ErrorCode::kUnderDetermined,
         "solve_frame: " + std::to_string(active) + " weighted valid markers, need at least 6");
  }
  if (!model.within_limits(warm.q)) {
    fail(ErrorCode::kInvalidArgument, "solve_frame: warm start violates joint limits");
  }
  if (!warm.base.translation.allFinite() || !warm.base.rotation.allFinite()) {
    fail(ErrorCode::kNonFinite, "solve_frame: non-finite warm-start base pose");
  }

  const JointVector lower = model.lower_limits();
  const JointVector upper = model.upper_limits();
  JointVector q = warm.q.cwiseMax(lower).cwiseMin(upper);
  BasePose base = warm.base;
  double cost = weighted_cost(biomech::forward_kinematics(model, q, base), targets, w);
  double rms = std::sqrt(cost / weight_sum);

  constexpr auto kN = static_cast<Eigen::Index>(biomech::kNumStateDofs);
  constexpr double kInf = std::numeric_limits<double>::infinity();
  Eigen::VectorXd row_weight(3 * kNumMarkers);
  for (std::size_t m = 0; m < kNumMarkers; ++m) row_weight.segment<3>(3 * m).setConstant(w[m]);

  IkSolution out;
  for (int iter = 0; iter < config.max_iterations; ++iter) {
    const MarkerFrame fk = biomech::forward_kinematics(model, q, base);
    const biomech::MarkerJacobian jac = biomech::marker_jacobian(model, q, base);
    Eigen::VectorXd r(3 * kNumMarkers);
    for (std::size_t m = 0; m < kNumMarkers; ++m) {
      r.segment<3>(3 * m) = w[m] > 0.0 ? Vec3(targets.markers[m] - fk.markers[m]) : Vec3::Zero();
    }
    const Eigen::MatrixXd wj = row_weight.asDiagonal() * jac;
    Eigen::MatrixXd h = jac.transpose() * wj;
    h.diagonal().array() += config.damping;
    h = 0.5 * (h + h.transpose());
    const Eigen::VectorXd g = -(wj.transpose() * r);

    Eigen::VectorXd lo(kN), hi(kN);
    for (Eigen::Index i = 0; i < kN; ++i) {
      if (config.locked[static_cast<std::size_t>(i)]) {
        lo[i] = hi[i] = 0.0;
      } else if (i < static_cast<Eigen::Index>(kNumBaseDofs)) {
        lo[i] = -kInf;
        hi[i] = kInf;
      } else {
        const auto j = i - static_cast<Eigen::Index>(kNumBaseDofs);
        lo[i] = lower[j] - q[j];
        hi[i] = upper[j] - q[j];
      }
    }
    const Eigen::VectorXd delta = solve_box_qp(h, g, lo, hi);

    double step = 1.0;
    bool accepted = false;
    JointVector q_next;
    BasePose base_next;
    double cost_next = cost;
    for (int halving = 0; halving <= 5; ++halving, step *= 0.5) {
      for (std::size_t j = 0; j < kNumDofs; ++j) {
        const auto i = static_cast<Eigen::Index>(kNumBaseDofs + j);
        double v = q[j] + step * delta[i];
        if (step == 1.0 && delta[i] <= lo[i]) v = lower[j];
        if (step == 1.0 && delta[i] >= hi[i]) v = upper[j];
        q_next[j] = std::clamp(v, lower[j], upper[j]);
      }
      const Eigen::Matrix<double, 6, 1> db = step * delta.head<6>();
      base_next = biomech::retract_base(base, db);
      cost_next = weighted_cost(biomech::forward_kinematics(model, q_next, base_next), targets, w);
      if (cost_next <= cost) {
        accepted = true;
        break;
      }
    }
    out.iterations_used = iter + 1;
    if (!accepted) {
      // No descent along the constrained step: stationary to working precision.
      out.converged = delta.norm() < 1e-10 || rms < 1e-12;
      break;
    }
    q = q_next;
    base = base_next;
    cost = cost_next;
    const double rms_next = std::sqrt(cost / weight_sum);
    const double change = rms - rms_next;
    rms = rms_next;
    if (change < config.tolerance) {
      out.converged = true;
      break;
    }
    if (config.time_budget_ms > 0.0) {
      const double elapsed =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      if (elapsed > config.time_budget_ms) {
        spdlog::debug("solve_frame: time budget exhausted after {} iterations", iter + 1);
        break;
      }
    }
  }

  out.frame.timestamp = targets.timestamp;
  out.frame.q = q;
  out.frame.base = base;
  out.residual_rms = rms;
  return out;
}

IkSession::IkSession(const biomech::BiomechModel& model, IkConfig config)
    : model_(&model), config_(std::move(config)) {
  config_.validate();
}

IkSolution IkSession::step(const MarkerFrame& targets) {
  if (!has_warm_) {
    warm_ = {};
    warm_.base = initial_base(*model_, targets);
  }
  IkSolution sol = solve_frame(*model_, targets, warm_, config_);
  warm_ = sol.frame;
  has_warm_ = true;
  return sol;
}

}  // namespace kinact::ik
