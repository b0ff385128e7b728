#include <cmath>
#include <cstdlib>
#include <string>

#include <Eigen/SVD>
#include <spdlog/sinks/stdout_color_sinks.h>

#include "kinact/error.hpp"
#include "kinact/geometry.hpp"
#include "kinact/labels.hpp"
#include "kinact/log.hpp"

namespace kinact {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kNotOrthonormal: return "not-orthonormal";
    case ErrorCode::kBehindCamera: return "behind-camera";
    case ErrorCode::kInsufficientViews: return "insufficient-views";
    case ErrorCode::kDegenerateGeometry: return "degenerate-geometry";
    case ErrorCode::kTimestampMismatch: return "timestamp-mismatch";
    case ErrorCode::kModelValidation: return "model-validation";
    case ErrorCode::kNonStandingPose: return "non-standing-pose";
    case ErrorCode::kUnderDetermined: return "under-determined";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kMissingInput: return "missing-input";
    case ErrorCode::kEmptyInput: return "empty-input";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Mat3 exp_so3(const Vec3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
}

Vec3 log_so3(const Mat3& rotation) {
  const Eigen::AngleAxisd aa(rotation);
  return aa.angle() * aa.axis();
}

Rigid fit_rigid(std::span<const Vec3> from, std::span<const Vec3> to,
                std::span<const double> weights) {
  if (from.size() != to.size() || (!weights.empty() && weights.size() != from.size())) {
    fail(ErrorCode::kShapeMismatch, "fit_rigid: point sets differ in size");
  }
  double total = 0.0;
  Vec3 mean_from = Vec3::Zero();
  Vec3 mean_to = Vec3::Zero();
  for (std::size_t i = 0; i < from.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    total += w;
    mean_from += w * from[i];
    mean_to += w * to[i];
  }
  if (total <= 0.0) fail(ErrorCode::kInvalidArgument, "fit_rigid: no weighted points");
  mean_from /= total;
  mean_to /= total;
  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < from.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    cov += w * (to[i] - mean_to) * (from[i] - mean_from).transpose();
  }
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  Rigid out = Rigid::Identity();
  out.linear() = svd.matrixU() * d * svd.matrixV().transpose();
  out.translation() = mean_to - out.linear() * mean_from;
  return out;
}

bool is_rotation(const Mat3& r, double tol) {
  return (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

LabelCategory label_category(int id) {
  if (id >= 1 && id <= 4) return LabelCategory::kMotion;
  if (id >= 5 && id <= 7) return LabelCategory::kTransitory;
  if (id >= 8 && id <= 16) return LabelCategory::kOrdering;
  if (id == 17) return LabelCategory::kBackground;
  fail(ErrorCode::kInvalidArgument, "label id out of range: " + std::to_string(id));
}

std::string_view label_name(int id) {
  static constexpr std::array<std::string_view, 18> kNames = {
      "invalid",         "standing",          "walking",
      "sitting",         "squatting",         "standing up",
      "sitting down",    "squatting down",    "two arms picking",
      "right arm picking", "left arm picking", "idle",
      "two thumbs up",   "come sign by right arm", "come sign by left arm",
      "come sign by two arms", "stop sign",   "background"};
  if (id < 1 || id > 17) return kNames[0];
  return kNames[static_cast<std::size_t>(id)];
}

std::string_view category_name(LabelCategory category) {
  switch (category) {
    case LabelCategory::kMotion: return "motions";
    case LabelCategory::kTransitory: return "transitory";
    case LabelCategory::kOrdering: return "ordering";
    case LabelCategory::kBackground: return "background";
  }
  return "unknown";
}

void init_logging() {
  auto logger = spdlog::stderr_color_mt("kinact");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  const char* env = std::getenv("KINACT_LOG");
  const std::string level = env ? env : "warn";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "info") spdlog::set_level(spdlog::level::info);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else spdlog::set_level(spdlog::level::warn);
}

}  // namespace kinact
