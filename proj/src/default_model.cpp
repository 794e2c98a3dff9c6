// Default Vlimb parameter set.
//
// Published values: 5 DOF, 1.3 m overall link length, 16.3 kg total mass,
// joint ranges, a 12 mm take-up pulley and a ~1500 N wire force ceiling.
// Everything else (individual link lengths, mass split, waypoint and ring
// placements, friction, armature, motor constants, gains) is an estimate and
// can be overridden in the model file.

#include "model.hpp"

namespace vlimb {

namespace {

constexpr double kTotalMass = 16.3;
constexpr double kTotalLength = 1.3;
constexpr double kBaseMassShare = 0.6;  // actuators aggregated at the root
constexpr double kLinkRadius = 0.03;

LinkSpec make_link(const char* name, double length, double mass) {
  LinkSpec l;
  l.name = name;
  l.length = length;
  l.mass = mass;
  l.com_offset = Vec3(0.0, 0.0, 0.5 * length);
  // Solid rod of radius kLinkRadius.
  const double transverse = mass * (length * length / 12.0 + kLinkRadius * kLinkRadius / 4.0);
  l.inertia_diag = Vec3(transverse, transverse, 0.5 * mass * kLinkRadius * kLinkRadius);
  return l;
}

JointSpec make_joint(const char* name, const Vec3& axis, double lo, double hi, double viscous, double coulomb,
                     double armature) {
  JointSpec j;
  j.name = name;
  j.axis = axis;
  j.limit_lo = lo;
  j.limit_hi = hi;
  j.viscous_friction = viscous;
  j.coulomb_friction = coulomb;
  j.armature = armature;
  return j;
}

RoutingPointSpec point(const char* link, double x, double y, double z, PointKind kind) {
  RoutingPointSpec p;
  p.link = link;
  p.offset = Vec3(x, y, z);
  p.kind = kind;
  return p;
}

RoutingPointSpec wrap_point(const char* link, double x, double y, double z, PointKind kind, const char* joint,
                            double radius) {
  auto p = point(link, x, y, z, kind);
  p.wrap = JointWrap{joint, radius};
  return p;
}

MotorSpec ak60_6() {
  // Torque constant and current limit chosen so that 15 A at 6:1 gives 9 N*m,
  // i.e. 1500 N on the 6 mm pulley.
  return MotorSpec{"AK60-6", 0.1, 15.0, 6.0};
}

ElementSpec make_element(const char* name, ElementKind kind, std::vector<RoutingPointSpec> routing) {
  ElementSpec e;
  e.name = name;
  e.kind = kind;
  e.motor = ak60_6();
  e.pulley_radius = 0.006;
  e.routing = std::move(routing);
  return e;
}

}  // namespace

RobotModel default_vlimb() {
  RobotModel m;
  m.name = "vlimb";
  m.link_radius = kLinkRadius;

  const double distal_mass = kTotalMass * (1.0 - kBaseMassShare);
  const auto share = [&](double length) { return distal_mass * length / kTotalLength; };
  m.links = {
      make_link("Shoulder", 0.0, kTotalMass * kBaseMassShare),
      make_link("ShoulderRoll", 0.1, share(0.1)),
      make_link("UpperArm", 0.4, share(0.4)),
      make_link("ElbowUpper", 0.4, share(0.4)),
      make_link("ElbowLower", 0.3, share(0.3)),
      make_link("Hand", 0.1, share(0.1)),
  };

  const Vec3 roll = Vec3::UnitZ();
  const Vec3 pitch = Vec3::UnitY();
  // Viscous terms above kp * transmission lag keep proportional control with
  // the lagged wires stable.
  m.joints = {
      make_joint("ShoulderRoll", roll, -3.14, 3.14, 6.0, 0.05, 0.05),
      make_joint("UpperArmPitch", pitch, -1.3, 1.3, 6.0, 0.05, 0.05),
      make_joint("ElbowUpPitch", pitch, -1.57, 1.8, 6.0, 0.05, 0.05),
      make_joint("ElbowLowPitch", pitch, -0.8, 2.8, 6.0, 0.05, 0.05),
      make_joint("WristRoll", roll, -3.14, 3.14, 6.0, 0.05, 0.05),
  };

  // Take-up pulleys sit in a row below the shoulder block; every element then
  // enters the ShoulderRoll link on its axis so the roll joint cannot wind it.
  const auto pulley = [](double x) { return point("Shoulder", x, 0.05, -0.12, PointKind::Pulley); };
  const auto shoulder_entry = [] { return point("ShoulderRoll", 0.0, 0.0, 0.03, PointKind::WaypointB); };
  const auto upperarm_center = [] { return point("ShoulderRoll", 0.0, 0.0, 0.1, PointKind::WaypointA); };
  const auto elbow_up_center = [] { return point("UpperArm", 0.0, 0.0, 0.4, PointKind::WaypointA); };
  const auto elbow_low_center = [] { return point("ElbowUpper", 0.0, 0.0, 0.4, PointKind::WaypointA); };

  m.elements.push_back(make_element(
      "belt_shoulder_roll", ElementKind::Belt,
      {pulley(-0.09),
       wrap_point("ShoulderRoll", 0.0, 0.0, 0.03, PointKind::WaypointB, "ShoulderRoll", 0.03),
       point("ShoulderRoll", 0.0, 0.0, 0.06, PointKind::End)}));

  m.elements.push_back(make_element(
      "wire_upperarm_flex", ElementKind::Wire,
      {pulley(-0.06), shoulder_entry(),
       wrap_point("ShoulderRoll", 0.0, 0.0, 0.1, PointKind::WaypointA, "UpperArmPitch", 0.05),
       point("UpperArm", 0.05, 0.0, 0.05, PointKind::End)}));

  m.elements.push_back(make_element(
      "wire_upperarm_ext", ElementKind::Wire,
      {pulley(-0.03), shoulder_entry(),
       wrap_point("ShoulderRoll", 0.0, 0.0, 0.1, PointKind::WaypointA, "UpperArmPitch", -0.05),
       point("UpperArm", -0.05, 0.0, 0.05, PointKind::End)}));

  // Power element. In Manipulation Mode it wraps small pulleys at both elbow
  // joints through the switchable waypoints; in Power Mode those are bypassed
  // and the wire spans the elbows as a straight chord.
  {
    auto bypass_up = wrap_point("UpperArm", 0.0, 0.0, 0.4, PointKind::WaypointC, "ElbowUpPitch", 0.015);
    bypass_up.switch_group = "elbow_waypoints";
    auto bypass_low = wrap_point("ElbowUpper", 0.0, 0.0, 0.4, PointKind::WaypointC, "ElbowLowPitch", 0.02);
    bypass_low.switch_group = "elbow_waypoints";
    auto power = make_element("wire_elbow_power", ElementKind::Wire,
                              {pulley(0.0), shoulder_entry(), upperarm_center(),
                               point("UpperArm", 0.06, 0.0, 0.02, PointKind::WaypointA), bypass_up, bypass_low,
                               point("ElbowLower", 0.06, 0.0, 0.28, PointKind::WaypointA),
                               point("Hand", 0.06, 0.0, 0.05, PointKind::End)});
    power.ring = RingSpec{"Hand", 0.05, 0.06};
    m.elements.push_back(std::move(power));
  }

  m.elements.push_back(make_element(
      "wire_elbowup_ext", ElementKind::Wire,
      {pulley(0.03), shoulder_entry(), upperarm_center(),
       wrap_point("UpperArm", 0.0, 0.0, 0.4, PointKind::WaypointA, "ElbowUpPitch", -0.03),
       point("ElbowUpper", -0.05, 0.0, 0.05, PointKind::End)}));

  m.elements.push_back(make_element(
      "wire_elbowlow_ext", ElementKind::Wire,
      {pulley(0.06), shoulder_entry(), upperarm_center(), elbow_up_center(),
       wrap_point("ElbowUpper", 0.0, 0.0, 0.4, PointKind::WaypointA, "ElbowLowPitch", -0.03),
       point("ElbowLower", -0.05, 0.0, 0.05, PointKind::End)}));

  m.elements.push_back(make_element(
      "belt_wrist_roll", ElementKind::Belt,
      {pulley(0.09), shoulder_entry(), upperarm_center(), elbow_up_center(), elbow_low_center(),
       wrap_point("ElbowLower", 0.0, 0.0, 0.3, PointKind::WaypointA, "WristRoll", 0.03),
       point("Hand", 0.0, 0.0, 0.03, PointKind::End)}));

  m.modes = {{"manipulation", {"elbow_waypoints"}}, {"power", {}}};
  m.default_mode = "manipulation";
  m.controller = ControllerDefaults{};
  return m;
}

}  // namespace vlimb
