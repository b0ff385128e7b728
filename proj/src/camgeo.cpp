#include "kinact/camgeo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <Eigen/LU>
#include <Eigen/SVD>

#include "kinact/error.hpp"
#include "kinact/ndjson.hpp"

namespace kinact::camgeo {

Rigid CameraParams::world_to_camera() const {
  Rigid t = Rigid::Identity();
  t.linear() = rotation();
  t.translation() = translation();
  return t;
}

void validate(const CameraParams& cam, double rotation_tol) {
  const Mat3& k = cam.intrinsics;
  if (!(k(0, 0) > 0.0 && k(1, 1) > 0.0) || k(1, 0) != 0.0 || k(2, 0) != 0.0 ||
      k(2, 1) != 0.0 || k(2, 2) != 1.0) {
    fail(ErrorCode::kInvalidArgument,
         "camera " + cam.id + ": intrinsics must be upper-triangular with positive focal lengths");
  }
  if (!cam.extrinsics.allFinite()) {
    fail(ErrorCode::kInvalidArgument, "camera " + cam.id + ": non-finite extrinsics");
  }
  const Mat3 r = cam.rotation();
  const double ortho = (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = r.determinant();
  if (ortho > rotation_tol || std::abs(det - 1.0) > rotation_tol) {
    fail(ErrorCode::kNotOrthonormal,
         "camera " + cam.id + ": rotation is not a proper rotation (max |RR^T - I| = " +
             std::to_string(ortho) + ", det = " + std::to_string(det) + ")");
  }
}

namespace {

template <std::size_t N>
std::array<double, N> read_array(const nlohmann::json& j, const char* key, const std::string& id) {
  if (!j.contains(key) || !j[key].is_array() || j[key].size() != N) {
    fail(ErrorCode::kParse, "camera " + id + ": \"" + key + "\" must hold " +
                                std::to_string(N) + " numbers");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (!j[key][i].is_number()) fail(ErrorCode::kParse, "camera " + id + ": non-numeric " + key);
    out[i] = j[key][i].get<double>();
  }
  return out;
}

}  // namespace

std::vector<CameraParams> parse_calibration(const nlohmann::json& doc) {
  const nlohmann::json* list = &doc;
  nlohmann::json wrapped;
  if (doc.is_object()) {
    wrapped = nlohmann::json::array({doc});
    list = &wrapped;
  }
  if (!list->is_array() || list->empty()) {
    fail(ErrorCode::kParse, "calibration must be a camera object or a non-empty array");
  }
  std::vector<CameraParams> cams;
  for (const auto& j : *list) {
    CameraParams cam;
    if (!j.contains("id") || !j["id"].is_string()) fail(ErrorCode::kParse, "camera without id");
    cam.id = j["id"].get<std::string>();
    const auto k = read_array<9>(j, "K", cam.id);
    const auto r = read_array<9>(j, "R", cam.id);
    const auto t = read_array<3>(j, "t", cam.id);
    cam.distortion = read_array<5>(j, "dist", cam.id);
    for (int row = 0; row < 3; ++row) {
      for (int col = 0; col < 3; ++col) {
        cam.intrinsics(row, col) = k[row * 3 + col];
        cam.extrinsics(row, col) = r[row * 3 + col];
      }
      cam.extrinsics(row, 3) = t[row];
    }
    validate(cam);
    cams.push_back(std::move(cam));
  }
  return cams;
}

std::vector<CameraParams> load_calibration(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::kIo, "cannot open calibration " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  return parse_calibration(doc);
}

nlohmann::json calibration_to_json(std::span<const CameraParams> cams) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& cam : cams) {
    nlohmann::json j;
    j["id"] = cam.id;
    std::vector<double> k, r, t;
    for (int row = 0; row < 3; ++row) {
      for (int col = 0; col < 3; ++col) {
        k.push_back(cam.intrinsics(row, col));
        r.push_back(cam.extrinsics(row, col));
      }
      t.push_back(cam.extrinsics(row, 3));
    }
    j["K"] = k;
    j["R"] = r;
    j["t"] = t;
    j["dist"] = cam.distortion;
    out.push_back(std::move(j));
  }
  return out;
}

Eigen::Vector2d distort(const std::array<double, 5>& d, const Eigen::Vector2d& xy) {
  const double x = xy.x();
  const double y = xy.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + d[0] * r2 + d[1] * r2 * r2 + d[2] * r2 * r2 * r2;
  const double p1 = d[3];
  const double p2 = d[4];
  return {x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
          y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y};
}

Eigen::Vector2d undistort(const std::array<double, 5>& d, const Eigen::Vector2d& xy) {
  Eigen::Vector2d p = xy;
  for (int it = 0; it < 5; ++it) {
    const double x = p.x();
    const double y = p.y();
    const double r2 = x * x + y * y;
    const double radial = 1.0 + d[0] * r2 + d[1] * r2 * r2 + d[2] * r2 * r2 * r2;
    const double dx = 2.0 * d[3] * x * y + d[4] * (r2 + 2.0 * x * x);
    const double dy = d[3] * (r2 + 2.0 * y * y) + 2.0 * d[4] * x * y;
    p = {(xy.x() - dx) / radial, (xy.y() - dy) / radial};
  }
  return p;
}

namespace {

// d(distorted)/d(normalized) at xy.
Eigen::Matrix2d distortion_jacobian(const std::array<double, 5>& d, const Eigen::Vector2d& xy) {
  const double x = xy.x();
  const double y = xy.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + d[0] * r2 + d[1] * r2 * r2 + d[2] * r2 * r2 * r2;
  const double dradial_dr2 = d[0] + 2.0 * d[1] * r2 + 3.0 * d[2] * r2 * r2;
  const double p1 = d[3];
  const double p2 = d[4];
  Eigen::Matrix2d j;
  j(0, 0) = radial + x * dradial_dr2 * 2.0 * x + 2.0 * p1 * y + p2 * 6.0 * x;
  j(0, 1) = x * dradial_dr2 * 2.0 * y + 2.0 * p1 * x + p2 * 2.0 * y;
  j(1, 0) = y * dradial_dr2 * 2.0 * x + p1 * 2.0 * x + 2.0 * p2 * y;
  j(1, 1) = radial + y * dradial_dr2 * 2.0 * y + p1 * 6.0 * y + 2.0 * p2 * x;
  return j;
}

Vec3 to_camera(const CameraParams& cam, const Vec3& point) {
  return cam.rotation() * point + cam.translation();
}

Eigen::Vector2d pixel_from_normalized(const CameraParams& cam, const Eigen::Vector2d& n) {
  const Eigen::Vector2d dn = distort(cam.distortion, n);
  const Vec3 h = cam.intrinsics * Vec3(dn.x(), dn.y(), 1.0);
  return {h.x(), h.y()};
}

// Pixel projection and its 2x3 Jacobian with respect to the world point.
Eigen::Vector2d project_with_jacobian(const CameraParams& cam, const Vec3& point,
                                      Eigen::Matrix<double, 2, 3>& jac) {
  const Vec3 pc = to_camera(cam, point);
  if (!(pc.z() > 1e-9)) fail(ErrorCode::kBehindCamera, "point behind camera " + cam.id);
  const Eigen::Vector2d n(pc.x() / pc.z(), pc.y() / pc.z());
  Eigen::Matrix<double, 2, 3> dn_dpc;
  dn_dpc << 1.0 / pc.z(), 0.0, -pc.x() / (pc.z() * pc.z()),
            0.0, 1.0 / pc.z(), -pc.y() / (pc.z() * pc.z());
  const Eigen::Matrix2d kk = cam.intrinsics.topLeftCorner<2, 2>();
  jac = kk * distortion_jacobian(cam.distortion, n) * dn_dpc * cam.rotation();
  return pixel_from_normalized(cam, n);
}

}  // namespace

Eigen::Vector2d project(const CameraParams& cam, const Vec3& point) {
  const Vec3 pc = to_camera(cam, point);
  if (!(pc.z() > 1e-9)) {
    fail(ErrorCode::kBehindCamera, "point has non-positive depth in camera " + cam.id);
  }
  return pixel_from_normalized(cam, {pc.x() / pc.z(), pc.y() / pc.z()});
}

Triangulated triangulate(std::span<const CameraParams> cams, std::span<const Observation> obs,
                         const TriangulationOptions& options) {
  if (cams.size() != obs.size()) {
    fail(ErrorCode::kShapeMismatch, "triangulate: one observation per camera required");
  }
  std::vector<std::size_t> used;
  for (std::size_t i = 0; i < cams.size(); ++i) {
    if (obs[i].confidence >= options.confidence_threshold && obs[i].confidence > 0.0) {
      used.push_back(i);
    }
  }
  if (used.size() < 2) {
    fail(ErrorCode::kInsufficientViews,
         "triangulate: " + std::to_string(used.size()) + " confident view(s), need 2");
  }

  std::vector<Eigen::Vector2d> normalized(used.size());
  Eigen::MatrixXd a(2 * used.size(), 4);
  double max_angle = 0.0;
  std::vector<Vec3> rays(used.size());
  for (std::size_t k = 0; k < used.size(); ++k) {
    const CameraParams& cam = cams[used[k]];
    const Vec3 pix(obs[used[k]].u, obs[used[k]].v, 1.0);
    const Vec3 distorted = cam.intrinsics.inverse() * pix;
    normalized[k] = undistort(cam.distortion, distorted.head<2>());
    rays[k] = (cam.rotation().transpose() * Vec3(normalized[k].x(), normalized[k].y(), 1.0))
                  .normalized();
    const double w = obs[used[k]].confidence;
    const Eigen::Matrix<double, 3, 4>& p = cam.extrinsics;
    Eigen::RowVector4d r0 = normalized[k].x() * p.row(2) - p.row(0);
    Eigen::RowVector4d r1 = normalized[k].y() * p.row(2) - p.row(1);
    a.row(2 * k) = w * r0;
    a.row(2 * k + 1) = w * r1;
    for (std::size_t m = 0; m < k; ++m) {
      max_angle = std::max(max_angle, std::acos(std::clamp(rays[k].dot(rays[m]), -1.0, 1.0)));
    }
  }
  if (max_angle < options.min_ray_angle) {
    fail(ErrorCode::kDegenerateGeometry, "triangulate: viewing rays are parallel");
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-300) {
    fail(ErrorCode::kDegenerateGeometry, "triangulate: solution at infinity");
  }
  Vec3 x = h.head<3>() / h(3);

  auto residuals = [&](const Vec3& point, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    r.resize(2 * used.size());
    if (jac) jac->resize(2 * used.size(), 3);
    for (std::size_t k = 0; k < used.size(); ++k) {
      const CameraParams& cam = cams[used[k]];
      const double sw = std::sqrt(obs[used[k]].confidence);
      Eigen::Matrix<double, 2, 3> j;
      const Eigen::Vector2d uv = project_with_jacobian(cam, point, j);
      r.segment<2>(2 * k) = sw * (uv - Eigen::Vector2d(obs[used[k]].u, obs[used[k]].v));
      if (jac) jac->middleRows<2>(2 * k) = sw * j;
    }
  };

  Eigen::VectorXd r;
  Eigen::MatrixXd jac;
  residuals(x, r, &jac);
  const Mat3 normal = jac.transpose() * jac;
  const Vec3 step = normal.ldlt().solve(-jac.transpose() * r);
  if (step.allFinite()) {
    Eigen::VectorXd r_new;
    const Vec3 candidate = x + step;
    bool ok = true;
    try {
      residuals(candidate, r_new, nullptr);
    } catch (const Error&) {
      ok = false;
    }
    if (ok && r_new.squaredNorm() <= r.squaredNorm()) x = candidate;
  }

  Triangulated out;
  out.point = x;
  out.views = static_cast<int>(used.size());
  double sq = 0.0;
  for (std::size_t k = 0; k < used.size(); ++k) {
    const Eigen::Vector2d uv = project(cams[used[k]], x);
    sq += (uv - Eigen::Vector2d(obs[used[k]].u, obs[used[k]].v)).squaredNorm();
  }
  out.reproj_error = std::sqrt(sq / static_cast<double>(used.size()));
  return out;
}

bool JointCenters3D::all_valid() const {
  return std::all_of(valid.begin(), valid.end(), [](bool v) { return v; });
}

JointCenters3D triangulate_frame(std::span<const CameraParams> cams,
                                 std::span<const Keypoints2D> frames, const FrameOptions& options) {
  if (cams.size() != frames.size() || cams.empty()) {
    fail(ErrorCode::kShapeMismatch, "triangulate_frame: one keypoint frame per camera required");
  }
  const double tolerance = 0.5 / options.rate_hz;
  double t_min = frames[0].timestamp;
  double t_max = frames[0].timestamp;
  for (const auto& f : frames) {
    t_min = std::min(t_min, f.timestamp);
    t_max = std::max(t_max, f.timestamp);
  }
  // Small slack keeps exactly-half-period offsets from failing on rounding.
  if (t_max - t_min > tolerance + 1e-12) {
    fail(ErrorCode::kTimestampMismatch,
         "triangulate_frame: timestamps differ by " + std::to_string(t_max - t_min) +
             " s (tolerance " + std::to_string(tolerance) + " s)");
  }
  JointCenters3D out;
  out.timestamp = t_min;
  std::vector<Observation> obs(cams.size());
  for (std::size_t p = 0; p < kNumKeypoints; ++p) {
    for (std::size_t c = 0; c < cams.size(); ++c) obs[c] = frames[c].points[p];
    try {
      const Triangulated tri = triangulate(cams, obs, options.triangulation);
      out.points[p] = tri.point;
      out.reproj_error[p] = tri.reproj_error;
      out.valid[p] = tri.point.allFinite();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kInsufficientViews &&
          e.code() != ErrorCode::kDegenerateGeometry && e.code() != ErrorCode::kBehindCamera) {
        throw;
      }
      out.points[p] = Vec3::Zero();
      out.valid[p] = false;
    }
  }
  return out;
}

JointCenters3D GapFiller::push(JointCenters3D frame) {
  for (std::size_t p = 0; p < kNumKeypoints; ++p) {
    if (frame.valid[p]) {
      last_[p] = frame.points[p];
      gap_[p] = 0;
      frame.filled[p] = false;
      continue;
    }
    ++gap_[p];
    if (last_[p] && gap_[p] <= max_gap_) {
      frame.points[p] = *last_[p];
      frame.valid[p] = true;
      frame.filled[p] = true;
    }
  }
  return frame;
}

nlohmann::json keypoints_to_json(const Keypoints2D& frame) {
  nlohmann::json kp = nlohmann::json::array();
  for (const auto& o : frame.points) kp.push_back({o.u, o.v, o.confidence});
  return {{"cam", frame.camera_id}, {"t", frame.timestamp}, {"kp", kp}};
}

Keypoints2D keypoints_from_json(const nlohmann::json& j) {
  Keypoints2D out;
  try {
    out.camera_id = j.at("cam").get<std::string>();
    out.timestamp = j.at("t").get<double>();
    const auto& kp = j.at("kp");
    if (!kp.is_array() || kp.size() != kNumKeypoints) {
      fail(ErrorCode::kParse, "keypoint record must hold exactly 26 entries");
    }
    for (std::size_t p = 0; p < kNumKeypoints; ++p) {
      const auto& e = kp[p];
      if (!e.is_array() || e.size() != 3) fail(ErrorCode::kParse, "keypoint entry must be [u,v,conf]");
      out.points[p] = {e[0].get<double>(), e[1].get<double>(), e[2].get<double>()};
      if (out.points[p].confidence < 0.0 || out.points[p].confidence > 1.0) {
        fail(ErrorCode::kParse, "keypoint confidence outside [0,1]");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("keypoint record: ") + e.what());
  }
  return out;
}

std::vector<Keypoints2D> load_keypoint_stream(const std::filesystem::path& path) {
  std::vector<Keypoints2D> out;
  for (const auto& record : read_ndjson(path)) out.push_back(keypoints_from_json(record));
  return out;
}

nlohmann::json joint_centers_to_json(const JointCenters3D& frame) {
  nlohmann::json pts = nlohmann::json::array();
  nlohmann::json err = nlohmann::json::array();
  nlohmann::json valid = nlohmann::json::array();
  for (std::size_t p = 0; p < kNumKeypoints; ++p) {
    pts.push_back({frame.points[p].x(), frame.points[p].y(), frame.points[p].z()});
    err.push_back(frame.reproj_error[p]);
    valid.push_back(static_cast<bool>(frame.valid[p]));
  }
  return {{"t", frame.timestamp}, {"jc", pts}, {"err", err}, {"valid", valid}};
}

JointCenters3D joint_centers_from_json(const nlohmann::json& j) {
  JointCenters3D out;
  try {
    out.timestamp = j.at("t").get<double>();
    const auto& pts = j.at("jc");
    if (pts.size() != kNumKeypoints) fail(ErrorCode::kParse, "joint-center record needs 26 points");
    for (std::size_t p = 0; p < kNumKeypoints; ++p) {
      out.points[p] = Vec3(pts[p][0].get<double>(), pts[p][1].get<double>(), pts[p][2].get<double>());
      out.valid[p] = j.contains("valid") ? j["valid"][p].get<bool>() : true;
      out.reproj_error[p] = j.contains("err") ? j["err"][p].get<double>() : 0.0;
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("joint-center record: ") + e.what());
  }
  return out;
}

}  // namespace kinact::camgeo
