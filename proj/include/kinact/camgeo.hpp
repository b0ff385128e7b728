#pragma once

// Pinhole cameras with radial/tangential distortion, calibration I/O and
// confidence-weighted multi-view triangulation of the 26 body keypoints.

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "kinact/geometry.hpp"

namespace kinact::camgeo {

inline constexpr std::size_t kNumKeypoints = 26;
/// Index of the mid-hip ("hip") keypoint used as the body anchor.
inline constexpr std::size_t kPelvisKeypoint = 19;

struct CameraParams {
  std::string id;
  Mat3 intrinsics = Mat3::Identity();
  /// World -> camera rigid transform [R | t].
  Eigen::Matrix<double, 3, 4> extrinsics = Eigen::Matrix<double, 3, 4>::Identity();
  /// k1, k2, k3, p1, p2.
  std::array<double, 5> distortion{};

  Mat3 rotation() const { return extrinsics.leftCols<3>(); }
  Vec3 translation() const { return extrinsics.col(3); }
  /// Camera center in world coordinates.
  Vec3 center() const { return -rotation().transpose() * translation(); }
  Rigid world_to_camera() const;
};

/// Throws kNotOrthonormal / kInvalidArgument when the invariants fail.
void validate(const CameraParams& cam, double rotation_tol = 1e-6);

std::vector<CameraParams> parse_calibration(const nlohmann::json& doc);
std::vector<CameraParams> load_calibration(const std::filesystem::path& path);
nlohmann::json calibration_to_json(std::span<const CameraParams> cams);

/// Applies lens distortion to normalized image coordinates.
Eigen::Vector2d distort(const std::array<double, 5>& dist, const Eigen::Vector2d& xy);
/// Inverts `distort` with five fixed-point iterations.
Eigen::Vector2d undistort(const std::array<double, 5>& dist, const Eigen::Vector2d& xy);

/// Pixel coordinates of a world point. Throws kBehindCamera for depth <= 1e-9.
Eigen::Vector2d project(const CameraParams& cam, const Vec3& point);

struct Observation {
  double u = 0.0;
  double v = 0.0;
  double confidence = 0.0;
};

struct TriangulationOptions {
  double confidence_threshold = 0.3;
  /// Rays closer than this to parallel (radians) are rejected.
  double min_ray_angle = 1e-6;
};

struct Triangulated {
  Vec3 point = Vec3::Zero();
  /// RMS pixel residual over contributing cameras.
  double reproj_error = 0.0;
  int views = 0;
};

/// Weighted DLT (smallest singular vector) followed by one Gauss-Newton step
/// on the confidence-weighted reprojection error. Observations below the
/// confidence threshold are ignored.
Triangulated triangulate(std::span<const CameraParams> cams, std::span<const Observation> obs,
                         const TriangulationOptions& options = {});

struct Keypoints2D {
  std::string camera_id;
  double timestamp = 0.0;
  std::array<Observation, kNumKeypoints> points{};
};

struct JointCenters3D {
  double timestamp = 0.0;
  std::array<Vec3, kNumKeypoints> points{};
  std::array<double, kNumKeypoints> reproj_error{};
  /// False when the point had fewer than two confident views (and was not
  /// forward-filled).
  std::array<bool, kNumKeypoints> valid{};
  /// True when the point was copied from an earlier frame.
  std::array<bool, kNumKeypoints> filled{};

  bool all_valid() const;
};

struct FrameOptions {
  TriangulationOptions triangulation;
  /// Camera frame rate; frames must agree within half a period.
  double rate_hz = 10.0;
};

/// Triangulates all 26 keypoints of one synchronized multi-camera frame.
/// `frames[i]` must come from `cams[i]`. Points without two confident views
/// (or with degenerate geometry) are flagged invalid instead of throwing.
JointCenters3D triangulate_frame(std::span<const CameraParams> cams,
                                 std::span<const Keypoints2D> frames,
                                 const FrameOptions& options = {});

/// Forward-fills missing keypoints from the last valid value for up to
/// `max_gap` consecutive frames. Single-owner stream state.
class GapFiller {
 public:
  explicit GapFiller(int max_gap = 3) : max_gap_(max_gap) {}
  JointCenters3D push(JointCenters3D frame);

 private:
  int max_gap_;
  std::array<std::optional<Vec3>, kNumKeypoints> last_{};
  std::array<int, kNumKeypoints> gap_{};
};

// Newline-delimited keypoint stream: {"cam", "t", "kp": 26 x [u, v, conf]}.
nlohmann::json keypoints_to_json(const Keypoints2D& frame);
Keypoints2D keypoints_from_json(const nlohmann::json& record);
std::vector<Keypoints2D> load_keypoint_stream(const std::filesystem::path& path);

nlohmann::json joint_centers_to_json(const JointCenters3D& frame);
JointCenters3D joint_centers_from_json(const nlohmann::json& record);

}  // namespace kinact::camgeo
