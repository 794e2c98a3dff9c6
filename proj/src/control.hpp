#pragma once

#include "tendon.hpp"

#include <stdexcept>
#include <vector>

namespace vlimb {

// A command the controller refuses, e.g. a target outside the joint limits.
class CommandError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Per-joint cubic blend q0 -> q_des over T seconds with zero end velocities.
struct Trajectory {
  JointVector q0 = JointVector::Zero();
  JointVector q_des = JointVector::Zero();
  double duration = 1.0;
  double start_time = 0.0;

  JointVector position(double t) const;
  JointVector velocity(double t) const;
  bool finished(double t) const { return t >= start_time + duration; }
};

struct ControlGains {
  JointVector kp = JointVector::Constant(80.0);
  JointVector kd = JointVector::Zero();
  double loop_rate = 1000.0;
  double tension_floor = 20.0;
  double tension_cap = 1500.0;
  // Add the end-effector payload to the gravity feedforward. Off by default:
  // the nominal controller does not know what the hand holds.
  bool payload_compensation = false;
};

ControlGains gains_from(const RobotModel& model);

struct Allocation {
  Eigen::VectorXd tensions;
  bool rank_deficient = false;
  double torque_residual = 0.0;  // ||-G^T f - tau||
  int iterations = 0;
};

struct MotorCommand {
  Eigen::VectorXd currents;
  std::vector<bool> saturated;
  bool any_saturated() const;
};

struct ControlSnapshot {
  JointPosture joints;
  WirePosture wire;
  RingState rings;
  double payload_mass = 0.0;
};

struct ControlOutput {
  JointVector q_ref = JointVector::Zero();
  JointVector qd_ref = JointVector::Zero();
  JointVector tau_cmd = JointVector::Zero();
  Eigen::VectorXd tensions_cmd;
  Eigen::VectorXd currents_cmd;
  bool rank_deficient = false;
  bool saturated = false;
  double torque_residual = 0.0;
};

// Duration for a move at the model's joint speed limit (peak speed of the
// cubic is 1.5 |dq| / T), never shorter than min_duration.
double spline_duration(const RobotModel& model, const JointVector& q_now, const JointVector& q_des,
                       double min_duration = 0.5);

// Throws CommandError when T <= 0 or q_des leaves the joint limits.
Trajectory plan_trajectory(const RobotModel& model, const JointVector& q_now, const JointVector& q_des, double T,
                           double start_time = 0.0);

// Gravity feedforward plus proportional feedback (plus optional kd term).
JointVector compute_torque(const RobotModel& model, const JointVector& q, const JointVector& q_ref,
                           const ControlGains& gains, const JointVector& qd = JointVector::Zero(),
                           const JointVector& qd_ref = JointVector::Zero(), double payload_mass = 0.0);

// minimize ||f - f_bias||^2 subject to -G^T f = tau and the tension box.
// When tau is not reachable inside the box the residual ||-G^T f - tau|| is
// minimised first. Wires live in [floor, cap], belts in [-cap, cap].
Allocation allocate_tensions(const TendonJacobian& G, const JointVector& tau, const std::vector<ElementKind>& kinds,
                             const ControlGains& gains);

std::vector<ElementKind> element_kinds(const RobotModel& model);

// Torque on the take-up pulley shaft for a given tension.
inline double pulley_torque(double tension, double pulley_radius) { return tension * pulley_radius; }

MotorCommand tension_to_current(const Eigen::VectorXd& tensions, const RobotModel& model);

// Trajectory sample -> torque -> tensions -> currents. Pure.
ControlOutput control_step(const RobotModel& model, const RoutingConfig& routing, const ControlSnapshot& snapshot,
                           const Trajectory& trajectory, double t, const ControlGains& gains);

// Tension-space tail of control_step for an already computed torque.
ControlOutput allocate_and_convert(const RobotModel& model, const RoutingConfig& routing,
                                   const ControlSnapshot& snapshot, const JointVector& tau,
                                   const ControlGains& gains);

}  // namespace vlimb
