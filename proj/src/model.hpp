#pragma once

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace vlimb {

inline constexpr int kDof = 5;
inline constexpr int kFormatVersion = 1;

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using JointVector = Eigen::Matrix<double, kDof, 1>;
using JointMatrix = Eigen::Matrix<double, kDof, kDof>;

// Raised when a model file cannot be read or is not well-formed JSON.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a model violates one of its invariants; the message names it.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LinkSpec {
  std::string name;
  double length = 0.0;  // along the local +z axis
  double mass = 0.0;
  Vec3 com_offset = Vec3::Zero();
  Vec3 inertia_diag = Vec3::Ones();  // about the COM, link-aligned axes

  bool operator==(const LinkSpec&) const = default;
};

enum class JointKind { Revolute };

// Joint j connects links[j] to links[j + 1]. It sits at the distal end of the
// parent link, (0, 0, parent.length), with its axis in the parent frame.
struct JointSpec {
  std::string name;
  JointKind kind = JointKind::Revolute;
  Vec3 axis = Vec3::UnitZ();
  double limit_lo = -1.0;
  double limit_hi = 1.0;
  double viscous_friction = 0.0;  // N*m*s/rad
  double coulomb_friction = 0.0;  // N*m
  double armature = 0.0;          // reflected actuator inertia, kg*m^2

  bool operator==(const JointSpec&) const = default;
};

enum class ElementKind { Wire, Belt };
enum class PointKind { Pulley, WaypointA, WaypointB, WaypointC, End };

// Idealised joint pulley: an element passing this point wraps a drum of the
// given signed radius on the joint, adding (|r| * pi - r * q) to its length.
struct JointWrap {
  std::string joint;
  double radius = 0.0;

  bool operator==(const JointWrap&) const = default;
};

struct RoutingPointSpec {
  std::string link;
  Vec3 offset = Vec3::Zero();
  PointKind kind = PointKind::WaypointA;
  std::optional<std::string> switch_group;  // waypoint_C only
  std::optional<JointWrap> wrap;

  bool operator==(const RoutingPointSpec&) const = default;
};

// Passive ring carrying the terminal attachment. The end point sits at
// (radius cos phi, radius sin phi, center_offset) in the ring link frame.
struct RingSpec {
  std::string link;
  double center_offset = 0.0;
  double radius = 0.0;

  bool operator==(const RingSpec&) const = default;
};

struct MotorSpec {
  std::string name;
  double torque_constant = 0.0;  // N*m/A
  double max_current = 0.0;      // A
  double gear_ratio = 1.0;

  bool operator==(const MotorSpec&) const = default;
};

struct ElementSpec {
  std::string name;
  ElementKind kind = ElementKind::Wire;
  MotorSpec motor;
  double pulley_radius = 0.0;
  std::vector<RoutingPointSpec> routing;
  std::optional<RingSpec> ring;

  bool operator==(const ElementSpec&) const = default;
};

struct ControllerDefaults {
  JointVector kp = JointVector::Constant(80.0);
  JointVector kd = JointVector::Zero();
  double loop_rate = 1000.0;       // Hz
  double max_joint_speed = 1.0;    // rad/s, sets spline durations
  double tension_floor = 20.0;     // N
  double tension_cap = 1500.0;     // N

  bool operator==(const ControllerDefaults&) const = default;
};

struct RobotModel {
  std::string name;
  std::vector<LinkSpec> links;
  std::vector<JointSpec> joints;
  std::vector<ElementSpec> elements;
  std::map<std::string, std::set<std::string>> modes;  // mode -> engaged switch groups
  std::string default_mode;
  ControllerDefaults controller;
  double link_radius = 0.03;  // collision cylinder radius for wrap tests

  bool operator==(const RobotModel&) const = default;

  int link_index(const std::string& link) const;    // -1 when absent
  int joint_index(const std::string& joint) const;  // -1 when absent
  int element_index(const std::string& element) const;
  double total_mass() const;
  double total_length() const;
  // Every switch group that appears on a waypoint_C point.
  std::set<std::string> switch_groups() const;
};

std::string to_string(ElementKind kind);
std::string to_string(PointKind kind);

// Throws ValidationError naming the first violated invariant.
void validate(const RobotModel& model);

RobotModel load_model(const std::string& path);
RobotModel parse_model(const std::string& json_text);
std::string write_model(const RobotModel& model);
void save_model(const RobotModel& model, const std::string& path);

// Built-in Vlimb description. Identical to data/vlimb_default.json.
RobotModel default_vlimb();

}  // namespace vlimb
