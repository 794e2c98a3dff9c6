#pragma once

#include "model.hpp"

#include <vector>

namespace vlimb {

inline constexpr double kGravity = 9.81;

using PointJacobian = Eigen::Matrix<double, 3, kDof>;

struct FramePose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& local) const { return translation + rotation * local; }
};

struct JointPosture {
  JointVector q = JointVector::Zero();
  JointVector qd = JointVector::Zero();
  JointVector tau = JointVector::Zero();
};

// World pose of every link frame; the base link is fixed at the origin.
// Joint limits are not enforced.
std::vector<FramePose> forward_kinematics(const RobotModel& model, const JointVector& q);

Vec3 point_position(const std::vector<FramePose>& frames, int link, const Vec3& offset);

// dp/dq for a point fixed in `link`. Columns of joints outboard of the link are zero.
PointJacobian point_jacobian(const RobotModel& model, const std::vector<FramePose>& frames, int link,
                             const Vec3& offset);
// Throws std::invalid_argument for an unknown link name.
PointJacobian point_jacobian(const RobotModel& model, const JointVector& q, const std::string& link,
                             const Vec3& offset);

// Tip of the last link, (0, 0, length) in the hand frame.
Vec3 end_effector_position(const RobotModel& model, const std::vector<FramePose>& frames);
PointJacobian end_effector_jacobian(const RobotModel& model, const std::vector<FramePose>& frames);

// Torque the actuators must apply to hold q with zero velocity and
// acceleration, i.e. -sum_i J_ci^T m_i g with g = (0, 0, -gravity).
JointVector gravity_torque(const RobotModel& model, const JointVector& q, double gravity = kGravity);

// Recursive Newton-Euler inverse dynamics: M(q) qdd + C(q, qd) qd + tau_g(q).
JointVector inverse_dynamics(const RobotModel& model, const JointVector& q, const JointVector& qd,
                             const JointVector& qdd, double gravity = kGravity);

// Composite-rigid-body joint-space inertia, joint armature on the diagonal.
JointMatrix mass_matrix(const RobotModel& model, const JointVector& q);

// C(q, qd) qd + tau_g(q).
JointVector bias_forces(const RobotModel& model, const JointVector& q, const JointVector& qd,
                        double gravity = kGravity);

// Kinetic plus gravitational potential energy (zero potential at z = 0).
double mechanical_energy(const RobotModel& model, const JointVector& q, const JointVector& qd,
                         double gravity = kGravity);

}  // namespace vlimb
