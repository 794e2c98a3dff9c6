#pragma once

#include "plant.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace vlimb {

struct ScenarioOptions {
  std::string data_dir;              // empty: default_data_dir()
  std::optional<std::string> mode;   // overrides the scenario's routing mode
  std::optional<double> payload_kg;  // overrides the scenario's payload
  double dt = 1e-3;
  std::optional<double> kp;          // uniform joint stiffness override, N*m/rad
  bool belt_wire_contact = false;    // lift: enable rubbing and winch the full stroke
  int log_every = 10;                // plant steps per logged sample
};

struct Sample {
  double t = 0.0;
  JointVector q = JointVector::Zero();
  JointVector q_ref = JointVector::Zero();
  JointVector tau_cmd = JointVector::Zero();
  Eigen::VectorXd tension;  // transmitted, per element
  Eigen::VectorXd current;  // commanded, per element
  double ee_height = 0.0;
  double lift_height = 0.0;
  double payload = 0.0;
};

struct Criterion {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ScenarioReport {
  std::string name;
  std::vector<std::string> joint_names;
  std::vector<std::string> element_names;
  std::vector<Sample> series;
  std::vector<Criterion> criteria;
  std::map<std::string, double> metrics;
  std::string diagnostic;  // set when the run aborted
  double runtime_s = 0.0;  // wall clock

  bool passed() const;
  const Criterion* find(const std::string& criterion) const;
};

// Compiled-in data directory unless VLIMB_DATA_DIR is set.
std::string default_data_dir();

// Joint targets at each range extreme (less a margin), each held and checked
// for steady-state error, then a full roll sweep checked for wire wrapping.
ScenarioReport run_reachability(const RobotModel& model, const ScenarioOptions& options = {});

// Reach behind, pick up the payload, bring it to the front and hold it there.
// Runs the same sequence without payload for comparison.
ScenarioReport run_manipulation(const RobotModel& model, double payload_kg, const ScenarioOptions& options = {});

// Hand on a ceiling bar, load on the arm base; the power element is wound in
// to raise the load.
ScenarioReport run_lift(const RobotModel& model, double payload_kg, const ScenarioOptions& options = {});

// Dispatch by name with the scenario's default payload. Throws
// std::invalid_argument for unknown names.
ScenarioReport run_scenario(const RobotModel& model, const std::string& name, const ScenarioOptions& options = {});

// Fixed column order: t_s, q_<joint>_rad, q_ref_<joint>_rad, tau_cmd_<joint>_Nm,
// tension_<element>_N, current_<element>_A, ee_height_m, lift_height_m,
// payload_kg. Numbers use 17 significant digits.
std::string report_csv(const ScenarioReport& report);
// Inverse of report_csv for the series and names. Throws std::runtime_error
// on malformed input.
ScenarioReport parse_report_csv(const std::string& text);

std::string report_summary(const ScenarioReport& report);

// Writes <name>.csv, <name>_summary.txt and <name>_plot.py into dir.
void write_report(const ScenarioReport& report, const std::string& dir);

// Posture used for the moment-arm comparison and as the lift start.
JointVector lift_posture(const std::string& data_dir = "");

}  // namespace vlimb
