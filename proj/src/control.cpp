#include "control.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vlimb {

JointVector Trajectory::position(double t) const {
  const double s = std::clamp((t - start_time) / duration, 0.0, 1.0);
  if (s >= 1.0) return q_des;
  return q0 + (q_des - q0) * (3.0 * s * s - 2.0 * s * s * s);
}

JointVector Trajectory::velocity(double t) const {
  const double s = std::clamp((t - start_time) / duration, 0.0, 1.0);
  return (q_des - q0) * ((6.0 * s - 6.0 * s * s) / duration);
}

ControlGains gains_from(const RobotModel& model) {
  ControlGains g;
  g.kp = model.controller.kp;
  g.kd = model.controller.kd;
  g.loop_rate = model.controller.loop_rate;
  g.tension_floor = model.controller.tension_floor;
  g.tension_cap = model.controller.tension_cap;
  return g;
}

bool MotorCommand::any_saturated() const {
  return std::any_of(saturated.begin(), saturated.end(), [](bool b) { return b; });
}

double spline_duration(const RobotModel& model, const JointVector& q_now, const JointVector& q_des,
                       double min_duration) {
  const double dq = (q_des - q_now).cwiseAbs().maxCoeff();
  return std::max(min_duration, 1.5 * dq / model.controller.max_joint_speed);
}

Trajectory plan_trajectory(const RobotModel& model, const JointVector& q_now, const JointVector& q_des, double T,
                           double start_time) {
  if (!(T > 0.0) || !std::isfinite(T)) throw CommandError("duration must be > 0");
  for (int j = 0; j < kDof; ++j) {
    const auto& jt = model.joints[static_cast<std::size_t>(j)];
    if (!std::isfinite(q_des[j]) || q_des[j] < jt.limit_lo || q_des[j] > jt.limit_hi) {
      std::ostringstream msg;
      msg << "joint limit: " << jt.name << " target " << q_des[j] << " outside [" << jt.limit_lo << ", "
          << jt.limit_hi << "]";
      throw CommandError(msg.str());
    }
  }
  return Trajectory{q_now, q_des, T, start_time};
}

JointVector compute_torque(const RobotModel& model, const JointVector& q, const JointVector& q_ref,
                           const ControlGains& gains, const JointVector& qd, const JointVector& qd_ref,
                           double payload_mass) {
  JointVector tau = gravity_torque(model, q) + gains.kp.cwiseProduct(q_ref - q) + gains.kd.cwiseProduct(qd_ref - qd);
  if (gains.payload_compensation && payload_mass > 0.0) {
    const auto frames = forward_kinematics(model, q);
    tau += end_effector_jacobian(model, frames).transpose() * Vec3(0.0, 0.0, payload_mass * kGravity);
  }
  return tau;
}

MotorCommand tension_to_current(const Eigen::VectorXd& tensions, const RobotModel& model) {
  MotorCommand cmd;
  cmd.currents = Eigen::VectorXd::Zero(tensions.size());
  cmd.saturated.assign(static_cast<std::size_t>(tensions.size()), false);
  for (Eigen::Index e = 0; e < tensions.size(); ++e) {
    const auto& el = model.elements[static_cast<std::size_t>(e)];
    const double i = pulley_torque(tensions[e], el.pulley_radius) / (el.motor.gear_ratio * el.motor.torque_constant);
    const double limit = el.motor.max_current;
    // Tolerate rounding right at the limit.
    if (std::abs(i) > limit * (1.0 + 1e-12)) cmd.saturated[static_cast<std::size_t>(e)] = true;
    cmd.currents[e] = std::clamp(i, -limit, limit);
  }
  return cmd;
}

ControlOutput allocate_and_convert(const RobotModel& model, const RoutingConfig& routing,
                                   const ControlSnapshot& snapshot, const JointVector& tau,
                                   const ControlGains& gains) {
  ControlOutput out;
  out.tau_cmd = tau;
  const auto G = muscle_jacobian(model, routing, snapshot.joints.q, snapshot.rings);
  const auto alloc = allocate_tensions(G, tau, element_kinds(model), gains);
  out.tensions_cmd = alloc.tensions;
  out.rank_deficient = alloc.rank_deficient;
  out.torque_residual = alloc.torque_residual;
  const auto motor = tension_to_current(alloc.tensions, model);
  out.currents_cmd = motor.currents;
  out.saturated = motor.any_saturated();
  return out;
}

ControlOutput control_step(const RobotModel& model, const RoutingConfig& routing, const ControlSnapshot& snapshot,
                           const Trajectory& trajectory, double t, const ControlGains& gains) {
  const JointVector q_ref = trajectory.position(t);
  const JointVector qd_ref = trajectory.velocity(t);
  const JointVector tau = compute_torque(model, snapshot.joints.q, q_ref, gains, snapshot.joints.qd, qd_ref,
                                         snapshot.payload_mass);
  auto out = allocate_and_convert(model, routing, snapshot, tau, gains);
  out.q_ref = q_ref;
  out.qd_ref = qd_ref;
  return out;
}

}  // namespace vlimb
