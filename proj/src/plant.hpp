#pragma once

#include "control.hpp"

#include <optional>
#include <stdexcept>
#include <string>

namespace vlimb {

// Rejected plant operation (grasp out of reach, mode switch while moving).
class PlantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Rubbing between the wrist belt and the power wire once the lower elbow is
// folded far enough. Modelled as extra Coulomb friction on that joint.
struct BeltWireContact {
  bool enabled = false;
  std::string joint = "ElbowLowPitch";
  double angle_threshold = 2.2;  // rad
  double extra_coulomb = 150.0;  // N*m
};

struct GraspParams {
  double stiffness = 2.0e5;        // N/m
  double damping = 500.0;          // N*s/m
  double engage_tolerance = 0.005; // m
};

struct PlantParams {
  double dt = 1e-3;
  double transmission_lag = 0.03;   // s, first-order, every element
  Eigen::VectorXd lag_per_element;  // overrides transmission_lag when sized to the element count
  BeltWireContact belt_wire_contact;
  double hard_stop_stiffness = 1e4;  // N*m/rad
  double hard_stop_damping = 20.0;   // N*m*s/rad, only while penetrating
  bool friction = true;
  bool solve_rings = true;
  bool check_wrap = true;
  double gravity = kGravity;
  GraspParams grasp;
  int coulomb_iterations = 30;
};

// Vertical carriage carrying the arm base and the lifted load. Height is the
// base's offset above its resting position; the ground holds it at >= 0.
struct Carriage {
  bool enabled = false;
  double mass = 0.0;  // load carried besides the arm
  double height = 0.0;
  double velocity = 0.0;
  double ground_force = 0.0;  // N, last step
};

struct SimState {
  double t = 0.0;
  std::string mode;
  RoutingConfig routing;
  JointPosture joints;
  RingState rings;
  WirePosture wire;               // tensions are the transmitted (lagged) ones
  Eigen::VectorXd rest_lengths;   // element lengths at the last mode switch
  Eigen::VectorXd currents;       // last motor command
  double payload_mass = 0.0;      // point mass at the hand tip
  bool gripper_closed = false;
  std::optional<Vec3> grasp_anchor;  // world point the hand holds
  Vec3 grasp_force = Vec3::Zero();   // force from the anchor on the hand
  Carriage carriage;
  bool saturated = false;
  bool wrap_violation = false;
  bool hard_stop = false;
  bool halted = false;
  std::string diagnostic;
};

// Rest state at q in the given mode: rings solved, lengths recorded, wire
// tensions at `initial_tensions` (zero when empty).
SimState make_state(const RobotModel& model, const std::string& mode, const JointVector& q,
                    const Eigen::VectorXd& initial_tensions = Eigen::VectorXd());

// Tensions the motors produce in steady state for a current command.
Eigen::VectorXd current_to_tension(const RobotModel& model, const Eigen::VectorXd& currents);

// World position of the hand tip, carriage included.
Vec3 hand_position(const RobotModel& model, const SimState& state);

// Advance by params.dt. A non-finite result halts the state with a diagnostic
// and later steps leave it unchanged.
SimState step(const RobotModel& model, const SimState& state, const Eigen::VectorXd& currents,
              const PlantParams& params);

// Device idle: the arm is held where it is (operator support) while the
// transmission relaxes towards zero tension. Advances t by params.dt.
SimState idle_step(const RobotModel& model, const SimState& state, const PlantParams& params);

// Throws PlantError when the hand is farther than the engage tolerance.
SimState apply_grasp(const RobotModel& model, const SimState& state, const Vec3& anchor, const PlantParams& params);
SimState release_grasp(const SimState& state);

// Throws PlantError("not stationary") unless the arm is still and the wires
// are slack (below twice the floor); std::invalid_argument for unknown modes.
SimState set_mode(const RobotModel& model, const SimState& state, const std::string& mode);

// Kinetic plus potential energy of arm, payload and carriage.
double total_energy(const RobotModel& model, const SimState& state, const PlantParams& params);

}  // namespace vlimb
