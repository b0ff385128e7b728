#pragma once

#include <span>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace kinact {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Rigid = Eigen::Isometry3d;

Mat3 skew(const Vec3& v);

/// Rotation matrix of an axis-angle (rotation) vector.
Mat3 exp_so3(const Vec3& omega);
Vec3 log_so3(const Mat3& rotation);

/// Least-squares rigid transform mapping `from` onto `to` (Kabsch). Entries
/// with zero weight are ignored; at least three non-collinear points with
/// positive weight are required for a unique rotation.
Rigid fit_rigid(std::span<const Vec3> from, std::span<const Vec3> to,
                std::span<const double> weights = {});

/// Uniform random rotation plus translation within +-max_translation per axis.
template <typename Rng>
Rigid random_rigid(Rng& rng, double max_translation);

bool is_rotation(const Mat3& r, double tol);

}  // namespace kinact

#include "kinact/detail/geometry_impl.hpp"
