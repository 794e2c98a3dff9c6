#pragma once

#include "kinematics.hpp"

#include <set>
#include <string>
#include <vector>

namespace vlimb {

using TendonJacobian = Eigen::Matrix<double, Eigen::Dynamic, kDof>;

// Effective routing of every element for one mode: waypoint_C points whose
// switch group is not engaged are dropped, everything else keeps its order.
struct RoutingConfig {
  std::string mode_name;
  std::set<std::string> engaged_groups;
  std::vector<std::vector<RoutingPointSpec>> routes;  // one per model element
};

struct WirePosture {
  Eigen::VectorXd lengths;
  Eigen::VectorXd length_rates;
  Eigen::VectorXd tensions;
};

// Passive ring angle per element, in [-pi, pi). Zero for elements without a ring.
struct RingState {
  Eigen::VectorXd angles;

  bool operator==(const RingState& o) const { return angles.size() == o.angles.size() && angles == o.angles; }
};

struct WrapViolation {
  int element = 0;
  int segment = 0;  // segment k joins effective routing points k and k+1
  int link = 0;
};

// Throws std::invalid_argument for an unknown mode.
RoutingConfig resolve_routing(const RobotModel& model, const std::string& mode_name);
RoutingConfig routing_with_groups(const RobotModel& model, const std::string& label,
                                  const std::set<std::string>& engaged);

// World position of the terminal attachment on a ring at angle phi.
Vec3 ring_point(const RobotModel& model, const std::vector<FramePose>& frames, const RingSpec& ring, double phi);

// Ring angle that minimises the element path length: coarse 64-sample grid,
// then golden-section refinement of the best bracket.
RingState solve_ring_angles(const RobotModel& model, const RoutingConfig& routing, const JointVector& q);
RingState solve_ring_angles(const RobotModel& model, const RoutingConfig& routing,
                            const std::vector<FramePose>& frames);
// All rings at the given angle (ring solver disabled).
RingState frozen_rings(const RobotModel& model, double phi = 0.0);

// World positions of the effective routing points of one element.
std::vector<Vec3> routing_positions(const RobotModel& model, const RoutingConfig& routing,
                                    const std::vector<FramePose>& frames, const RingState& rings, int element);

double element_length(const RobotModel& model, const RoutingConfig& routing, const std::vector<FramePose>& frames,
                      const RingState& rings, int element, const JointVector& q);
Eigen::VectorXd element_lengths(const RobotModel& model, const RoutingConfig& routing, const JointVector& q,
                                const RingState& rings);

// G = dl/dq with ring angles held at the supplied values. Joint torque from
// element tensions f is tau = -G^T f.
TendonJacobian muscle_jacobian(const RobotModel& model, const RoutingConfig& routing, const JointVector& q,
                               const RingState& rings);
// Re-solves the rings at q first.
TendonJacobian muscle_jacobian(const RobotModel& model, const RoutingConfig& routing, const JointVector& q);

// Signed moment arm, -dl_element/dq_joint.
double moment_arm(const RobotModel& model, const RoutingConfig& routing, const JointVector& q, int element,
                  int joint);

// Wire segments that pass closer than the link radius to a link axis. A
// segment is not checked against a link when one of its end points already
// lies inside that link's cylinder (a guide or anchor in the link body).
// Belts run inside the links and are not checked. Zero-length links have no
// collision cylinder.
std::vector<WrapViolation> detect_wrap(const RobotModel& model, const RoutingConfig& routing,
                                       const std::vector<FramePose>& frames, const RingState& rings);
std::vector<WrapViolation> detect_wrap(const RobotModel& model, const RoutingConfig& routing, const JointVector& q,
                                       const RingState& rings);

// Closest distance between segments [p0, p1] and [q0, q1].
double segment_distance(const Vec3& p0, const Vec3& p1, const Vec3& q0, const Vec3& q1);
double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b);

}  // namespace vlimb
