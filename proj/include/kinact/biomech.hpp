#pragma once

// 22-DoF floating-base kinematic chain, its 29 virtual markers and 26
// keypoints (joint centers), forward kinematics, marker Jacobians and
// subject scaling from a standing calibration frame.

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "kinact/geometry.hpp"

namespace kinact::biomech {

inline constexpr std::size_t kNumDofs = 22;
inline constexpr std::size_t kNumMarkers = 29;
inline constexpr std::size_t kNumKeypoints = 26;
inline constexpr std::size_t kNumBaseDofs = 6;
inline constexpr std::size_t kNumStateDofs = kNumBaseDofs + kNumDofs;
inline constexpr std::size_t kLowerMaskSize = 12;
inline constexpr std::size_t kUpperMaskSize = 18;

using JointVector = Eigen::Matrix<double, kNumDofs, 1>;
using StateVector = Eigen::Matrix<double, kNumStateDofs, 1>;
/// Rows: 29 markers x (x, y, z). Columns: base translation (3), base
/// rotation as a local exponential increment (3), then the 22 joints.
using MarkerJacobian = Eigen::Matrix<double, 3 * kNumMarkers, kNumStateDofs>;

/// Floating-base pose of the pelvis: translation (m) and rotation vector (rad).
struct BasePose {
  Vec3 translation = Vec3::Zero();
  Vec3 rotation = Vec3::Zero();

  Rigid transform() const;
  static BasePose from_transform(const Rigid& t);
};

enum class Side { kCenter, kLeft, kRight };

struct Segment {
  std::string name;
  int parent = -1;
  /// Origin in the parent frame at unit parent scale.
  Vec3 offset = Vec3::Zero();
  double scale = 1.0;
  /// Joint indices rotating this segment, applied in order.
  std::vector<int> dofs;
};

struct Joint {
  std::string name;
  int segment = -1;
  /// Unit axis in the frame reached after the segment's preceding DoFs.
  Vec3 axis = Vec3::UnitZ();
  double lower = 0.0;
  double upper = 0.0;
  Side side = Side::kCenter;
};

/// A point rigidly attached to a segment (marker or keypoint).
struct Attachment {
  std::string name;
  int segment = -1;
  Vec3 offset = Vec3::Zero();
};

/// Marker as an affine combination of keypoints (weights sum to 1).
struct FallbackEntry {
  int marker = -1;
  std::vector<std::pair<int, double>> weights;
  /// Zero when exact for every pose; otherwise the length of the non-rigid
  /// offset part, exact only in the neutral pose.
  double max_offset = 0.0;
};

struct ScalingPair {
  int segment = -1;
  int marker_a = -1;
  int marker_b = -1;
};

/// Immutable after construction apart from segment scales set by scale_model.
class BiomechModel {
 public:
  /// Parses and validates (kModelValidation on any invariant failure).
  static BiomechModel from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;

  const std::string& name() const { return name_; }
  const std::vector<Segment>& segments() const { return segments_; }
  const std::vector<Joint>& joints() const { return joints_; }
  const std::vector<Attachment>& markers() const { return markers_; }
  const std::vector<Attachment>& keypoints() const { return keypoints_; }
  const std::vector<int>& lower_mask() const { return lower_mask_; }
  const std::vector<int>& upper_mask() const { return upper_mask_; }
  const std::vector<ScalingPair>& scaling_pairs() const { return scaling_pairs_; }
  const std::vector<FallbackEntry>& fallback() const { return fallback_; }

  int segment_index(std::string_view name) const;
  int joint_index(std::string_view name) const;
  int marker_index(std::string_view name) const;
  int keypoint_index(std::string_view name) const;

  /// True when `segment` is `ancestor` or lies below it in the chain.
  bool in_subtree(int ancestor, int segment) const {
    return subtree_[static_cast<std::size_t>(ancestor)][static_cast<std::size_t>(segment)];
  }

  JointVector lower_limits() const;
  JointVector upper_limits() const;
  bool within_limits(const JointVector& q, double tol = 1e-9) const;

  void set_scale(int segment, double scale);

 private:
  void validate_and_index();

  std::string name_;
  std::vector<Segment> segments_;
  std::vector<Joint> joints_;
  std::vector<Attachment> markers_;
  std::vector<Attachment> keypoints_;
  std::vector<int> lower_mask_;
  std::vector<int> upper_mask_;
  std::vector<ScalingPair> scaling_pairs_;
  std::vector<FallbackEntry> fallback_;
  std::vector<std::vector<bool>> subtree_;
};

BiomechModel load_model(const std::filesystem::path& path);
/// The template shipped in data/default_model.json, compiled in.
const BiomechModel& default_model();
std::string_view default_model_json();

struct JointAngleFrame {
  double timestamp = 0.0;
  JointVector q = JointVector::Zero();
  BasePose base;
};

struct MarkerFrame {
  double timestamp = 0.0;
  std::array<Vec3, kNumMarkers> markers{};
  std::array<bool, kNumMarkers> valid{};

  MarkerFrame() { valid.fill(true); }
  std::size_t valid_count() const;
};

/// World pose of every segment.
std::vector<Rigid> segment_poses(const BiomechModel& model, const JointVector& q,
                                 const BasePose& base);

MarkerFrame forward_kinematics(const BiomechModel& model, const JointVector& q,
                               const BasePose& base);
std::array<Vec3, kNumKeypoints> keypoint_positions(const BiomechModel& model,
                                                   const JointVector& q, const BasePose& base);

/// Analytic geometric Jacobian of all marker positions.
MarkerJacobian marker_jacobian(const BiomechModel& model, const JointVector& q,
                               const BasePose& base);

/// Applies the local exponential increment used by the Jacobian's base
/// columns: translation += d[0..2], rotation <- rotation * exp(d[3..5]).
BasePose retract_base(const BasePose& base, const Eigen::Ref<const Eigen::Matrix<double, 6, 1>>& d);

struct ScaleOptions {
  /// Per-segment RMS residual (m) above which the frame is not a standing pose.
  double max_residual = 0.05;
  double min_scale = 0.5;
  double max_scale = 2.0;
};

/// Per-segment ratio measured / model distance of the declared marker pairs
/// (1 for segments without a pair), relative to the model's current scales.
std::vector<double> segment_scale_factors(const BiomechModel& model, const MarkerFrame& standing);

/// Returns a model whose segment scales are multiplied by the factors above
/// (clamped to [min_scale, max_scale]). Throws kMissingInput for invalid
/// markers and kNonStandingPose when the rescaled neutral pose cannot be
/// rigidly aligned with the frame within max_residual per segment.
BiomechModel scale_model(const BiomechModel& model, const MarkerFrame& standing,
                         const ScaleOptions& options = {});

// Newline-delimited records.
nlohmann::json marker_frame_to_json(const MarkerFrame& frame);
MarkerFrame marker_frame_from_json(const nlohmann::json& record);
nlohmann::json joint_angle_frame_to_json(const JointAngleFrame& frame, double residual = -1.0);
JointAngleFrame joint_angle_frame_from_json(const nlohmann::json& record);

}  // namespace kinact::biomech
