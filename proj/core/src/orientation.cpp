#include "contraj/orientation.hpp"

#include <cmath>

#include "contraj/errors.hpp"

namespace contraj::orientation {

namespace {

constexpr double kUnitTol = 1e-9;
constexpr double kTinyAxis = 1e-14;

void require_unit(const UnitQuaternion& q, const char* who) {
  if (std::abs(q.norm() - 1.0) > kUnitTol)
    throw ContractError(std::string(who) + ": quaternion is not unit norm");
}

}  // namespace

UnitQuaternion quat_mul(const UnitQuaternion& a, const UnitQuaternion& b) {
  UnitQuaternion out;
  out.w = a.w * b.w - a.xyz.dot(b.xyz);
  out.xyz = a.w * b.xyz + b.w * a.xyz + a.xyz.cross(b.xyz);
  return out;
}

UnitQuaternion quat_conj(const UnitQuaternion& a) { return {a.w, -a.xyz}; }

UnitQuaternion normalized(const UnitQuaternion& q) {
  const double n = q.norm();
  return {q.w / n, q.xyz / n};
}

RotationVector log_map(const UnitQuaternion& q_t, const UnitQuaternion& q_goal) {
  require_unit(q_t, "log_map");
  require_unit(q_goal, "log_map");
  // Tangent coordinate of q_t in the goal's frame; the exact inverse of
  // exp_map's q_goal * Exp(r) composition.
  UnitQuaternion d = quat_mul(quat_conj(q_goal), q_t);
  if (d.w < 0.0) d = d.negated();
  const double un = d.xyz.norm();
  if (un <= kTinyAxis) return RotationVector::Zero();
  const double angle = std::acos(std::clamp(d.w, -1.0, 1.0));
  return angle * d.xyz / un;
}

UnitQuaternion exp_map(const RotationVector& r, const UnitQuaternion& q_goal) {
  require_unit(q_goal, "exp_map");
  const double n = r.norm();
  if (n >= M_PI) throw DomainError("exp_map: rotation vector norm must be below pi");
  if (n <= kTinyAxis) return q_goal;
  UnitQuaternion e;
  e.w = std::cos(n);
  e.xyz = std::sin(n) * r / n;
  return quat_mul(q_goal, e);
}

double quat_error(const UnitQuaternion& q, const UnitQuaternion& q_hat) {
  require_unit(q, "quat_error");
  require_unit(q_hat, "quat_error");
  const UnitQuaternion d = quat_mul(q, quat_conj(q_hat));
  return 2.0 * std::atan2(d.xyz.norm(), std::abs(d.w));
}

double quat_trajectory_error(const std::vector<UnitQuaternion>& a,
                             const std::vector<UnitQuaternion>& b) {
  if (a.size() != b.size() || a.empty())
    throw ContractError("quat_trajectory_error: sequences must be nonempty and equally long");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += quat_error(a[i], b[i]);
  return total / static_cast<double>(a.size());
}

void PoseTrajectory::validate(double unit_tol) const {
  if (positions.rows() < 2) throw ContractError("PoseTrajectory: need at least 2 samples");
  if (static_cast<int>(quaternions.size()) != length())
    throw ContractError("PoseTrajectory: position/quaternion length mismatch");
  if (!positions.allFinite()) throw ContractError("PoseTrajectory: non-finite positions");
  for (const UnitQuaternion& q : quaternions)
    if (std::abs(q.norm() - 1.0) > unit_tol)
      throw DataError("PoseTrajectory: non-unit quaternion");
  for (std::size_t i = 1; i < quaternions.size(); ++i)
    if (quaternions[i - 1].dot(quaternions[i]) < 0.0)
      throw DataError("PoseTrajectory: sign discontinuity between consecutive quaternions");
}

void enforce_sign_continuity(std::vector<UnitQuaternion>& quats) {
  for (std::size_t i = 1; i < quats.size(); ++i)
    if (quats[i - 1].dot(quats[i]) < 0.0) quats[i] = quats[i].negated();
}

dynamics::Trajectory encode_pose(const PoseTrajectory& traj, double scale) {
  if (scale <= 0.0) throw ContractError("encode_pose: scale must be positive");
  traj.validate();
  const int T = traj.length();
  const Eigen::Vector3d p_goal = traj.positions.row(T - 1).transpose();
  const UnitQuaternion q_goal = traj.quaternions[T - 1];
  dynamics::Trajectory out;
  out.dt = traj.dt;
  out.points.resize(T, 6);
  for (int t = 0; t < T; ++t) {
    const RotationVector r = log_map(traj.quaternions[t], q_goal);
    if (r.norm() >= M_PI)
      throw DomainError("encode_pose: demonstration exceeds the tangent chart");
    out.points.row(t).head(3) = traj.positions.row(t) - p_goal.transpose();
    out.points.row(t).tail(3) = (scale * r).transpose();
  }
  return out;
}

PoseTrajectory decode_pose(const dynamics::Trajectory& x, const Eigen::Vector3d& p_goal,
                           const UnitQuaternion& q_goal, double scale) {
  if (x.dim() != 6) throw ContractError("decode_pose: need 6-D rows");
  if (scale <= 0.0) throw ContractError("decode_pose: scale must be positive");
  const int T = x.length();
  PoseTrajectory out;
  out.dt = x.dt;
  out.positions.resize(T, 3);
  out.quaternions.resize(T);
  for (int t = 0; t < T; ++t) {
    const RotationVector r = x.points.row(t).tail(3).transpose() / scale;
    if (r.norm() >= M_PI) throw DomainError("decode_pose: tangent norm outside the chart");
    out.positions.row(t) = x.points.row(t).head(3) + p_goal.transpose();
    out.quaternions[t] = exp_map(r, q_goal);
  }
  return out;
}

}  // namespace contraj::orientation
