#pragma once

#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "contraj/dynamics.hpp"

namespace contraj::orientation {

/// Unit quaternion, scalar-first storage, Hamilton product convention.
struct UnitQuaternion {
  double w = 1.0;
  Eigen::Vector3d xyz = Eigen::Vector3d::Zero();

  static UnitQuaternion identity() { return {}; }
  double norm() const { return std::sqrt(w * w + xyz.squaredNorm()); }
  Eigen::Vector4d as_vector() const { return {w, xyz[0], xyz[1], xyz[2]}; }
  UnitQuaternion negated() const { return {-w, -xyz}; }
  double dot(const UnitQuaternion& o) const { return w * o.w + xyz.dot(o.xyz); }
};

using RotationVector = Eigen::Vector3d;  // radians-scaled axis, norm < pi

UnitQuaternion quat_mul(const UnitQuaternion& a, const UnitQuaternion& b);
UnitQuaternion quat_conj(const UnitQuaternion& a);
UnitQuaternion normalized(const UnitQuaternion& q);

/// Tangent-space chart of the rotation from q_t to q_goal. The shorter
/// double-cover representative is taken, so the result has norm <= pi/2.
RotationVector log_map(const UnitQuaternion& q_t, const UnitQuaternion& q_goal);

/// Inverse chart: q_goal composed with the rotation encoded by r.
/// Throws DomainError when ||r|| >= pi.
UnitQuaternion exp_map(const RotationVector& r, const UnitQuaternion& q_goal);

/// Geodesic rotation angle between two orientations, sign-invariant,
/// in [0, pi].
double quat_error(const UnitQuaternion& q, const UnitQuaternion& q_hat);

/// Mean rotation angle over two equally long quaternion sequences.
double quat_trajectory_error(const std::vector<UnitQuaternion>& a,
                             const std::vector<UnitQuaternion>& b);

struct PoseTrajectory {
  Eigen::MatrixXd positions;  // T x 3
  std::vector<UnitQuaternion> quaternions;
  double dt = 0.0;

  int length() const { return static_cast<int>(positions.rows()); }
  void validate(double unit_tol = 1e-9) const;
};

/// Flips quaternions so consecutive entries have nonnegative dot product.
void enforce_sign_continuity(std::vector<UnitQuaternion>& quats);

/// 6-D training encoding: rows are (p_t - p_goal, scale * r_t) with the goal
/// taken from the final sample; the final row is exactly zero.
dynamics::Trajectory encode_pose(const PoseTrajectory& traj, double scale);

/// Inverse of encode_pose given the goal pose used for encoding.
PoseTrajectory decode_pose(const dynamics::Trajectory& x, const Eigen::Vector3d& p_goal,
                           const UnitQuaternion& q_goal, double scale);

}  // namespace contraj::orientation
