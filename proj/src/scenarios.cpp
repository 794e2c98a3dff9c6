#include "scenarios.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#ifndef VLIMB_DEFAULT_DATA_DIR
#define VLIMB_DEFAULT_DATA_DIR "data"
#endif

namespace vlimb {

using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

// ---------------------------------------------------------------------------
// Data files

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed scenario file '" + path + "': " + e.what());
  }
}

json scenario_file(const ScenarioOptions& o, const std::string& name) {
  const std::string dir = o.data_dir.empty() ? default_data_dir() : o.data_dir;
  return read_json((std::filesystem::path(dir) / "scenarios" / (name + ".json")).string());
}

JointVector joint_vector(const json& j) {
  if (!j.is_array() || j.size() != kDof) throw std::runtime_error("scenario file: expected 5 joint values");
  JointVector q;
  for (int i = 0; i < kDof; ++i) q[i] = j.at(static_cast<std::size_t>(i)).get<double>();
  return q;
}

// ---------------------------------------------------------------------------
// Shared pieces

ControlGains scenario_gains(const RobotModel& model, const ScenarioOptions& o) {
  auto g = gains_from(model);
  if (o.kp) g.kp = JointVector::Constant(*o.kp);
  return g;
}

PlantParams scenario_params(const ScenarioOptions& o) {
  PlantParams p;
  p.dt = o.dt;
  return p;
}

int control_divider(const ControlGains& g, double dt) {
  return std::max(1, static_cast<int>(std::lround(1.0 / (g.loop_rate * dt))));
}

long steps_for(double seconds, double dt) { return std::max(0L, std::lround(seconds / dt)); }

Sample make_sample(const RobotModel& model, const SimState& s, const JointVector& q_ref, const JointVector& tau_cmd) {
  Sample x;
  x.t = s.t;
  x.q = s.joints.q;
  x.q_ref = q_ref;
  x.tau_cmd = tau_cmd;
  x.tension = s.wire.tensions;
  x.current = s.currents;
  x.ee_height = hand_position(model, s).z();
  x.lift_height = s.carriage.enabled ? s.carriage.height : 0.0;
  x.payload = s.payload_mass + (s.carriage.enabled ? s.carriage.mass : 0.0);
  return x;
}

ScenarioReport empty_report(const RobotModel& model, const std::string& name) {
  ScenarioReport r;
  r.name = name;
  for (const auto& j : model.joints) r.joint_names.push_back(j.name);
  for (const auto& e : model.elements) r.element_names.push_back(e.name);
  return r;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream ss;
  ss.precision(digits);
  ss << v;
  return ss.str();
}

void add(ScenarioReport& r, const std::string& name, bool passed, const std::string& detail) {
  r.criteria.push_back({name, passed, detail});
}

// Tensions that hold q statically in the given routing, used to start runs
// without an initial sag.
Eigen::VectorXd holding_tensions(const RobotModel& model, const RoutingConfig& routing, const JointVector& q,
                                 const ControlGains& gains) {
  const auto G = muscle_jacobian(model, routing, q);
  return allocate_tensions(G, gravity_torque(model, q), element_kinds(model), gains).tensions;
}

// ---------------------------------------------------------------------------
// Waypoint sequences under the nominal controller

struct Waypoint {
  std::string name;
  JointVector q = JointVector::Zero();
  double hold = 0.0;
  bool grasp = false;
};

struct WaypointResult {
  JointVector q_end = JointVector::Zero();     // at the end of the hold
  JointVector q_steady = JointVector::Zero();  // mean over the steady window
  JointVector tau_steady = JointVector::Zero();
};

struct SequenceResult {
  std::vector<WaypointResult> waypoints;
  std::vector<Sample> series;
  double tracking_rms = 0.0;  // RMS of ||q_ref - q|| over control ticks
  long wrap_steps = 0;
  long hard_stop_steps = 0;
  bool saturated = false;
  double max_wire_tension = 0.0;
  double max_abs_current = 0.0;
  std::string diagnostic;
  SimState final_state;
};

SequenceResult run_sequence(const RobotModel& model, const std::string& mode, const JointVector& home,
                            const std::vector<Waypoint>& waypoints, double payload, double steady_window,
                            const ControlGains& gains, const PlantParams& params, int log_every) {
  SequenceResult res;
  const auto routing = resolve_routing(model, mode);
  SimState s = make_state(model, mode, home, holding_tensions(model, routing, home, gains));
  const int divider = control_divider(gains, params.dt);
  long k = 0;
  double err2 = 0.0;
  long ticks = 0;
  ControlOutput out;
  out.currents_cmd = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.elements.size()));
  JointVector target = home;

  for (const auto& wp : waypoints) {
    const double T = spline_duration(model, target, wp.q);
    const double t0 = static_cast<double>(k) * params.dt;
    const auto traj = plan_trajectory(model, target, wp.q, T, t0);
    target = wp.q;
    const long move_steps = steps_for(T, params.dt);
    const long total = move_steps + steps_for(wp.hold, params.dt);
    const long window = std::min(total, steps_for(steady_window, params.dt));
    WaypointResult wr;
    long in_window = 0;
    for (long i = 0; i < total; ++i, ++k) {
      const double t = static_cast<double>(k) * params.dt;
      if (wp.grasp && i == move_steps && !s.gripper_closed) {
        s.payload_mass = payload;
        s.gripper_closed = true;
      }
      if (k % divider == 0) {
        ControlSnapshot snap{s.joints, s.wire, s.rings, s.payload_mass};
        out = control_step(model, s.routing, snap, traj, t, gains);
        err2 += (out.q_ref - s.joints.q).squaredNorm();
        ++ticks;
      }
      if (i >= total - window) {
        wr.q_steady += s.joints.q;
        wr.tau_steady += out.tau_cmd;
        ++in_window;
      }
      s = step(model, s, out.currents_cmd, params);
      if (s.halted) {
        res.diagnostic = s.diagnostic;
        res.final_state = s;
        return res;
      }
      res.wrap_steps += s.wrap_violation ? 1 : 0;
      res.hard_stop_steps += s.hard_stop ? 1 : 0;
      res.saturated = res.saturated || s.saturated;
      for (Eigen::Index e = 0; e < s.wire.tensions.size(); ++e)
        if (model.elements[static_cast<std::size_t>(e)].kind == ElementKind::Wire)
          res.max_wire_tension = std::max(res.max_wire_tension, s.wire.tensions[e]);
      res.max_abs_current = std::max(res.max_abs_current, s.currents.cwiseAbs().maxCoeff());
      if ((k + 1) % log_every == 0) res.series.push_back(make_sample(model, s, out.q_ref, out.tau_cmd));
    }
    wr.q_end = s.joints.q;
    if (in_window > 0) {
      wr.q_steady /= static_cast<double>(in_window);
      wr.tau_steady /= static_cast<double>(in_window);
    }
    res.waypoints.push_back(wr);
  }
  res.tracking_rms = ticks ? std::sqrt(err2 / static_cast<double>(ticks)) : 0.0;
  res.final_state = s;
  return res;
}

std::vector<Waypoint> read_waypoints(const json& list, double default_hold) {
  std::vector<Waypoint> out;
  for (const auto& w : list) {
    Waypoint wp;
    wp.name = w.at("name").get<std::string>();
    wp.q = joint_vector(w.at("q"));
    wp.hold = w.value("hold_s", default_hold);
    wp.grasp = w.value("grasp", false);
    out.push_back(wp);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

bool ScenarioReport::passed() const {
  if (criteria.empty()) return false;
  return std::all_of(criteria.begin(), criteria.end(), [](const Criterion& c) { return c.passed; });
}

const Criterion* ScenarioReport::find(const std::string& criterion) const {
  for (const auto& c : criteria)
    if (c.name == criterion) return &c;
  return nullptr;
}

std::string default_data_dir() {
  if (const char* env = std::getenv("VLIMB_DATA_DIR"); env && *env) return env;
  return VLIMB_DEFAULT_DATA_DIR;
}

JointVector lift_posture(const std::string& data_dir) {
  ScenarioOptions o;
  o.data_dir = data_dir;
  return joint_vector(scenario_file(o, "lift").at("posture"));
}

// ---------------------------------------------------------------------------
// Reachability

ScenarioReport run_reachability(const RobotModel& model, const ScenarioOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  const json cfg = scenario_file(options, "reachability");
  auto report = empty_report(model, "reachability");
  const std::string mode = options.mode.value_or(cfg.at("mode").get<std::string>());
  const JointVector home = joint_vector(cfg.at("home"));
  const double hold = cfg.at("hold_s").get<double>();
  const double margin = cfg.at("target_margin_rad").get<double>();
  const double tolerance = cfg.at("limit_tolerance_rad").get<double>();
  const double bound = cfg.at("steady_error_bound_rad").get<double>();
  const auto postures = read_waypoints(cfg.at("postures"), hold);

  const auto gains = scenario_gains(model, options);
  const auto params = scenario_params(options);
  const auto res = run_sequence(model, mode, home, postures, options.payload_kg.value_or(0.0), 0.5, gains, params,
                                options.log_every);
  report.series = res.series;
  report.metrics["tracking_rms_rad"] = res.tracking_rms;
  report.metrics["sim_time_s"] = res.final_state.t;
  report.metrics["max_wire_tension_N"] = res.max_wire_tension;
  if (!res.diagnostic.empty()) {
    report.diagnostic = res.diagnostic;
    add(report, "stable", false, res.diagnostic);
  } else {
    add(report, "stable", true, "no divergence");
  }

  // Which limits were exercised, and how closely.
  std::vector<bool> lo_hit(kDof, false), hi_hit(kDof, false);
  double worst_error = 0.0;
  bool all_reached = res.waypoints.size() == postures.size();
  for (std::size_t p = 0; p < res.waypoints.size(); ++p) {
    const JointVector err = (res.waypoints[p].q_end - postures[p].q).cwiseAbs();
    worst_error = std::max(worst_error, err.maxCoeff());
    if (err.maxCoeff() >= bound) all_reached = false;
    report.metrics["steady_error_rad." + postures[p].name] = err.maxCoeff();
    for (int j = 0; j < kDof; ++j) {
      const auto& jt = model.joints[static_cast<std::size_t>(j)];
      const double q = res.waypoints[p].q_end[j];
      if (std::abs(postures[p].q[j] - (jt.limit_lo + margin)) < 1e-9) {
        lo_hit[static_cast<std::size_t>(j)] = q - jt.limit_lo <= tolerance;
        report.metrics["limit_gap_rad." + jt.name + ".lo"] = q - jt.limit_lo;
      }
      if (std::abs(postures[p].q[j] - (jt.limit_hi - margin)) < 1e-9) {
        hi_hit[static_cast<std::size_t>(j)] = jt.limit_hi - q <= tolerance;
        report.metrics["limit_gap_rad." + jt.name + ".hi"] = jt.limit_hi - q;
      }
    }
  }
  std::string missing;
  for (int j = 0; j < kDof; ++j) {
    if (!lo_hit[static_cast<std::size_t>(j)]) missing += " " + model.joints[static_cast<std::size_t>(j)].name + ".lo";
    if (!hi_hit[static_cast<std::size_t>(j)]) missing += " " + model.joints[static_cast<std::size_t>(j)].name + ".hi";
  }
  report.metrics["worst_steady_error_rad"] = worst_error;
  add(report, "postures_reached", all_reached,
      "worst steady error " + fmt(worst_error) + " rad, bound " + fmt(bound) + " rad over " +
          std::to_string(res.waypoints.size()) + "/" + std::to_string(postures.size()) + " postures");
  add(report, "limits_exercised", missing.empty(),
      missing.empty() ? "every range extreme reached within " + fmt(tolerance) + " rad" : "missing:" + missing);
  add(report, "hard_stops_clear", res.hard_stop_steps == 0,
      std::to_string(res.hard_stop_steps) + " steps in a hard stop");
  add(report, "wrap_free_closed_loop", res.wrap_steps == 0,
      std::to_string(res.wrap_steps) + " steps with a wrap violation");

  // Geometric roll sweep over the full turn.
  const auto& sweep = cfg.at("roll_sweep");
  const JointVector base = joint_vector(sweep.at("posture"));
  const double step_deg = sweep.at("step_deg").get<double>();
  const auto routing = resolve_routing(model, mode);
  long checked = 0;
  long violations = 0;
  for (const auto& jn : sweep.at("joints")) {
    const int j = model.joint_index(jn.get<std::string>());
    if (j < 0) throw std::runtime_error("roll_sweep: unknown joint '" + jn.get<std::string>() + "'");
    const int n = static_cast<int>(std::lround(360.0 / step_deg));
    for (int k = 0; k <= n; ++k) {
      JointVector q = base;
      q[j] = -kPi + 2.0 * kPi * k / n;
      const auto frames = forward_kinematics(model, q);
      violations += static_cast<long>(detect_wrap(model, routing, frames, solve_ring_angles(model, routing, frames)).size());
      ++checked;
    }
  }
  report.metrics["roll_sweep_samples"] = static_cast<double>(checked);
  add(report, "roll_sweep_wrap_free", violations == 0,
      std::to_string(violations) + " violations over " + std::to_string(checked) + " roll samples in [-pi, pi]");

  report.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

// ---------------------------------------------------------------------------
// Manipulation

ScenarioReport run_manipulation(const RobotModel& model, double payload_kg, const ScenarioOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  const json cfg = scenario_file(options, "manipulation");
  auto report = empty_report(model, "manipulation");
  const std::string mode = options.mode.value_or(cfg.at("mode").get<std::string>());
  const JointVector home = joint_vector(cfg.at("home"));
  const auto waypoints = read_waypoints(cfg.at("waypoints"), 0.0);
  const double window = cfg.at("steady_window_s").get<double>();
  const double bound = cfg.at("steady_error_bound_rad").get<double>();
  const double tolerance = cfg.at("statics_tolerance").get<double>();
  const auto gains = scenario_gains(model, options);
  const auto params = scenario_params(options);

  const auto bare = run_sequence(model, mode, home, waypoints, 0.0, window, gains, params, options.log_every);
  const auto loaded = run_sequence(model, mode, home, waypoints, payload_kg, window, gains, params, options.log_every);
  report.series = loaded.series;
  report.metrics["payload_kg"] = payload_kg;
  report.metrics["sim_time_s"] = bare.final_state.t + loaded.final_state.t;
  report.metrics["tracking_rms_rad.unloaded"] = bare.tracking_rms;
  report.metrics["tracking_rms_rad.loaded"] = loaded.tracking_rms;
  report.metrics["max_wire_tension_N"] = std::max(bare.max_wire_tension, loaded.max_wire_tension);

  const bool stable = bare.diagnostic.empty() && loaded.diagnostic.empty();
  report.diagnostic = !bare.diagnostic.empty() ? bare.diagnostic : loaded.diagnostic;
  const bool complete = stable && loaded.waypoints.size() == waypoints.size() && bare.waypoints.size() == waypoints.size();
  add(report, "sequence_completed", complete,
      complete ? "all " + std::to_string(waypoints.size()) + " waypoints visited, back to front"
               : "aborted: " + report.diagnostic);
  if (!complete) {
    report.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
  }

  double worst_bare = 0.0;
  double worst_loaded = 0.0;
  for (std::size_t w = 0; w < waypoints.size(); ++w) {
    worst_bare = std::max(worst_bare, (bare.waypoints[w].q_end - waypoints[w].q).cwiseAbs().maxCoeff());
    worst_loaded = std::max(worst_loaded, (loaded.waypoints[w].q_end - waypoints[w].q).cwiseAbs().maxCoeff());
  }
  report.metrics["worst_steady_error_rad.unloaded"] = worst_bare;
  report.metrics["worst_steady_error_rad.loaded"] = worst_loaded;
  add(report, "unloaded_tracking_bound", worst_bare < bound,
      "worst steady error " + fmt(worst_bare) + " rad < " + fmt(bound) + " rad");
  add(report, "payload_degrades_tracking", loaded.tracking_rms > bare.tracking_rms,
      "rms error loaded " + fmt(loaded.tracking_rms, 6) + " rad vs unloaded " + fmt(bare.tracking_rms, 6) + " rad");

  // The feedback torque (commanded minus nominal gravity) picks up the
  // payload's weight at the final hold; compare with J^T m g there.
  const auto& lw = loaded.waypoints.back();
  const auto& bw = bare.waypoints.back();
  const JointVector fb_loaded = lw.tau_steady - gravity_torque(model, lw.q_steady);
  const JointVector fb_bare = bw.tau_steady - gravity_torque(model, bw.q_steady);
  const JointVector measured = fb_loaded - fb_bare;
  const auto frames = forward_kinematics(model, lw.q_steady);
  const JointVector oracle =
      end_effector_jacobian(model, frames).transpose() * Vec3(0.0, 0.0, payload_kg * params.gravity);
  const double rel = oracle.norm() > 0.0 ? (measured - oracle).norm() / oracle.norm() : measured.norm();
  report.metrics["payload_torque_rel_error"] = rel;
  for (int j = 0; j < kDof; ++j) {
    report.metrics["payload_torque_Nm." + model.joints[static_cast<std::size_t>(j)].name] = measured[j];
    report.metrics["payload_torque_oracle_Nm." + model.joints[static_cast<std::size_t>(j)].name] = oracle[j];
  }
  add(report, "payload_torque_statics", rel <= tolerance,
      "|dtau - J^T m g| / |J^T m g| = " + fmt(rel) + " (limit " + fmt(tolerance) + ")");
  add(report, "wrap_free", bare.wrap_steps + loaded.wrap_steps == 0,
      std::to_string(bare.wrap_steps + loaded.wrap_steps) + " steps with a wrap violation");
  add(report, "currents_within_limit", !bare.saturated && !loaded.saturated,
      "max |i| " + fmt(std::max(bare.max_abs_current, loaded.max_abs_current)) + " A");

  report.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

// ---------------------------------------------------------------------------
// Lift

namespace {

struct LiftPath {
  std::vector<double> height;
  std::vector<double> length;  // power element length
  std::vector<JointVector> q;
};

// Postures that keep the hand on the bar while the base rises, found by
// continuation in height with the non-elbow joints frozen. Stops at the
// lower elbow's upper limit or when the hand can no longer reach the bar.
LiftPath trace_lift_path(const RobotModel& model, const RoutingConfig& routing, const JointVector& start, int element,
                         double max_height) {
  LiftPath path;
  const int eu = model.joint_index("ElbowUpPitch");
  const int el = model.joint_index("ElbowLowPitch");
  const Vec3 anchor = end_effector_position(model, forward_kinematics(model, start));
  JointVector q = start;
  for (int k = 0;; ++k) {
    const double h = 1e-3 * k;
    if (h > max_height + 1e-12) break;
    const Vec3 target = anchor - Vec3(0.0, 0.0, h);
    bool ok = false;
    for (int it = 0; it < 50; ++it) {
      const auto frames = forward_kinematics(model, q);
      const Vec3 e = target - end_effector_position(model, frames);
      if (std::abs(e.x()) + std::abs(e.z()) < 1e-12) {
        ok = true;
        break;
      }
      const auto J = end_effector_jacobian(model, frames);
      Eigen::Matrix2d A;
      A << J(0, eu), J(0, el), J(2, eu), J(2, el);
      const Eigen::Vector2d d = A.fullPivLu().solve(Eigen::Vector2d(e.x(), e.z()));
      q[eu] += d[0];
      q[el] += d[1];
    }
    if (!ok || q[el] > model.joints[static_cast<std::size_t>(el)].limit_hi) break;
    const auto frames = forward_kinematics(model, q);
    path.height.push_back(h);
    path.q.push_back(q);
    path.length.push_back(
        element_length(model, routing, frames, solve_ring_angles(model, routing, frames), element, q));
  }
  return path;
}

// Power-element tension that balances the elbow joints when the bar carries
// `weight` and the other elbow-spanning wires pull `others`.
double static_power_tension(const RobotModel& model, const RoutingConfig& routing, const JointVector& q, int element,
                            const Eigen::VectorXd& others, double weight, double gravity) {
  const int eu = model.joint_index("ElbowUpPitch");
  const int el = model.joint_index("ElbowLowPitch");
  const auto frames = forward_kinematics(model, q);
  const auto G = muscle_jacobian(model, routing, q);
  const auto J = end_effector_jacobian(model, frames);
  const JointVector g = gravity_torque(model, q, gravity);
  const JointVector t_other = -G.transpose() * others;
  // -G_p f + J_x Fx = g - J_z W - t_other on both elbow rows.
  Eigen::Matrix2d A;
  A << -G(element, eu), J(0, eu), -G(element, el), J(0, el);
  const Eigen::Vector2d b(g[eu] - J(2, eu) * weight - t_other[eu], g[el] - J(2, el) * weight - t_other[el]);
  return A.fullPivLu().solve(b)[0];
}

}  // namespace

ScenarioReport run_lift(const RobotModel& model, double payload_kg, const ScenarioOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  const json cfg = scenario_file(options, "lift");
  const bool stall_run = options.belt_wire_contact;
  auto report = empty_report(model, stall_run ? "lift_contact" : "lift");
  const std::string mode = options.mode.value_or(cfg.at("mode").get<std::string>());
  const auto routing = resolve_routing(model, mode);
  const JointVector posture = joint_vector(cfg.at("posture"));
  const std::string power_name = cfg.at("power_element").get<std::string>();
  const int power = model.element_index(power_name);
  if (power < 0) throw std::runtime_error("lift: model has no element '" + power_name + "'");
  const double target = cfg.at("target_height_m").get<double>();
  const double required = cfg.at("required_height_m").get<double>();
  const double settle = cfg.at("settle_s").get<double>();
  const double wind = cfg.at("wind_s").get<double>();
  const double hold = cfg.at("hold_s").get<double>();
  const double hold_kp = options.kp.value_or(cfg.at("hold_kp_Nm_per_rad").get<double>());
  const double hold_kd = cfg.at("hold_kd_Nms_per_rad").get<double>();
  const double wkp = cfg.at("winch_kp_N_per_m").get<double>();
  const double wki = cfg.at("winch_ki_N_per_m_s").get<double>();
  const double wkd = cfg.at("winch_kd_N_s_per_m").get<double>();
  const double stall_window = cfg.at("stall_window_s").get<double>();
  const double stall_motion = cfg.at("stall_motion_m").get<double>();
  const double tolerance = cfg.at("statics_tolerance").get<double>();

  auto gains = gains_from(model);
  PlantParams params = scenario_params(options);
  params.belt_wire_contact.enabled = stall_run;
  const int el = model.joint_index("ElbowLowPitch");
  const int eu = model.joint_index("ElbowUpPitch");
  const double weight = (payload_kg + model.total_mass()) * params.gravity;

  // Reference stroke: to the target height, or as far as the elbow allows.
  const auto path = trace_lift_path(model, routing, posture, power, stall_run ? 10.0 : target);
  if (path.height.size() < 2) throw std::runtime_error("lift: the bar cannot be followed from the start posture");
  const double stroke = path.length.front() - path.length.back();
  const double wind_time = wind * stroke / std::max(1e-9, path.length.front() - [&] {
    for (std::size_t i = 0; i < path.height.size(); ++i)
      if (path.height[i] >= target - 1e-12) return path.length[i];
    return path.length.back();
  }());
  report.metrics["stroke_m"] = stroke;
  report.metrics["path_end_height_m"] = path.height.back();

  // Elements that act only on the non-elbow joints hold those joints.
  const auto G0 = muscle_jacobian(model, routing, posture);
  std::vector<int> support;
  for (int e = 0; e < static_cast<int>(model.elements.size()); ++e)
    if (e != power && G0(e, eu) == 0.0 && G0(e, el) == 0.0) support.push_back(e);
  std::vector<ElementKind> support_kinds;
  for (int e : support) support_kinds.push_back(model.elements[static_cast<std::size_t>(e)].kind);

  // Start: resting on the ground, hand on the bar, elbow wires at the floor.
  Eigen::VectorXd f0 = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(model.elements.size()), 0.0);
  for (std::size_t e = 0; e < model.elements.size(); ++e)
    if (model.elements[e].kind == ElementKind::Wire) f0[static_cast<Eigen::Index>(e)] = gains.tension_floor;
  SimState s = make_state(model, mode, posture, f0);
  s.carriage.enabled = true;
  s.carriage.mass = payload_kg;
  s = apply_grasp(model, s, hand_position(model, s), params);

  {
    Eigen::VectorXd others = f0;
    others[power] = 0.0;
    const double f_start = static_power_tension(model, routing, posture, power, others, weight, params.gravity);
    report.metrics["static_tension_start_N"] = f_start;
    report.metrics["transmission_ratio"] = weight / f_start;
    report.metrics["lifted_weight_N"] = weight;
  }

  const int divider = control_divider(gains, params.dt);
  const long total = steps_for(settle + wind_time + hold, params.dt);
  const long window = steps_for(stall_window, params.dt);
  double integral = gains.tension_floor;
  double max_wire = 0.0;
  double max_current = 0.0;
  double max_el = s.joints.q[el];
  bool saturated = false;
  long hard_stop_steps = 0;
  double hold_tension = 0.0;
  JointVector hold_q = JointVector::Zero();
  long hold_samples = 0;
  double height_window_start = 0.0;
  Eigen::VectorXd currents = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.elements.size()));
  JointVector q_ref = posture;
  JointVector tau_cmd = JointVector::Zero();
  const long hold_window = steps_for(std::min(1.0, hold), params.dt);

  for (long k = 0; k < total; ++k) {
    const double t = static_cast<double>(k) * params.dt;
    if (k % divider == 0) {
      // Winch reference along the traced path.
      const double sw = std::clamp((t - settle) / wind_time, 0.0, 1.0);
      const double blend = 3.0 * sw * sw - 2.0 * sw * sw * sw;
      const double l_ref = path.length.front() - blend * stroke;
      const double dblend = (t > settle && sw < 1.0) ? (6.0 * sw - 6.0 * sw * sw) / wind_time : 0.0;
      const double ldot_ref = -dblend * stroke;
      const double e = s.wire.lengths[power] - l_ref;
      const double edot = s.wire.length_rates[power] - ldot_ref;
      double f_power = integral + wkp * e + wkd * edot;
      const double clamped = std::clamp(f_power, gains.tension_floor, gains.tension_cap);
      // Integrate only while the output is not pinned at a bound.
      if (f_power == clamped || (f_power > clamped && e < 0.0) || (f_power < clamped && e > 0.0))
        integral = std::clamp(integral + wki * e * params.dt * divider, gains.tension_floor, gains.tension_cap);
      f_power = clamped;

      // Support joints: gravity feedforward plus a stiff damped hold.
      q_ref = posture;
      q_ref[eu] = s.joints.q[eu];
      q_ref[el] = s.joints.q[el];
      tau_cmd = gravity_torque(model, s.joints.q) + hold_kp * (q_ref - s.joints.q) - hold_kd * s.joints.qd;
      tau_cmd[eu] = 0.0;
      tau_cmd[el] = 0.0;
      TendonJacobian Gs(static_cast<Eigen::Index>(support.size()), kDof);
      const auto G = muscle_jacobian(model, s.routing, s.joints.q, s.rings);
      for (std::size_t i = 0; i < support.size(); ++i) Gs.row(static_cast<Eigen::Index>(i)) = G.row(support[i]);
      JointVector tau_support = tau_cmd;
      const auto alloc = allocate_tensions(Gs, tau_support, support_kinds, gains);

      Eigen::VectorXd f = f0;
      f[power] = f_power;
      for (std::size_t i = 0; i < support.size(); ++i) f[support[i]] = alloc.tensions[static_cast<Eigen::Index>(i)];
      tau_cmd = -G.transpose() * f;
      currents = tension_to_current(f, model).currents;
    }
    s = step(model, s, currents, params);
    if (s.halted) {
      report.diagnostic = s.diagnostic;
      break;
    }
    saturated = saturated || s.saturated;
    hard_stop_steps += s.hard_stop ? 1 : 0;
    max_el = std::max(max_el, s.joints.q[el]);
    max_current = std::max(max_current, s.currents.cwiseAbs().maxCoeff());
    for (Eigen::Index e = 0; e < s.wire.tensions.size(); ++e)
      if (model.elements[static_cast<std::size_t>(e)].kind == ElementKind::Wire)
        max_wire = std::max(max_wire, s.wire.tensions[e]);
    if (k == total - window) height_window_start = s.carriage.height;
    if (k >= total - hold_window) {
      hold_tension += s.wire.tensions[power];
      hold_q += s.joints.q;
      ++hold_samples;
    }
    if ((k + 1) % options.log_every == 0) report.series.push_back(make_sample(model, s, q_ref, tau_cmd));
  }

  const double final_height = s.carriage.height;
  report.metrics["lift_height_m"] = final_height;
  report.metrics["sim_time_s"] = s.t;
  report.metrics["max_wire_tension_N"] = max_wire;
  report.metrics["max_current_A"] = max_current;
  report.metrics["max_elbow_low_rad"] = max_el;
  add(report, "stable", report.diagnostic.empty(), report.diagnostic.empty() ? "no divergence" : report.diagnostic);
  add(report, "max_tension_N <= " + fmt(gains.tension_cap), max_wire <= gains.tension_cap + 1e-9,
      "peak wire tension " + fmt(max_wire, 6) + " N");
  const double i_max = model.elements[static_cast<std::size_t>(power)].motor.max_current;
  add(report, "current_within_max", !saturated && max_current <= i_max * (1.0 + 1e-12),
      "peak |i| " + fmt(max_current, 6) + " A, limit " + fmt(i_max) + " A");

  if (!stall_run) {
    add(report, "lift_height_m >= " + fmt(required), final_height >= required,
        "final height " + fmt(final_height, 6) + " m");
    if (hold_samples > 0 && report.diagnostic.empty()) {
      hold_tension /= static_cast<double>(hold_samples);
      hold_q /= static_cast<double>(hold_samples);
      Eigen::VectorXd others = s.wire.tensions;
      others[power] = 0.0;
      const double oracle = static_power_tension(model, routing, hold_q, power, others, weight, params.gravity);
      const double rel = std::abs(hold_tension - oracle) / oracle;
      report.metrics["hold_tension_N"] = hold_tension;
      report.metrics["hold_tension_statics_N"] = oracle;
      add(report, "quasi_static_tension", rel <= tolerance,
          "held " + fmt(hold_tension, 6) + " N vs statics " + fmt(oracle, 6) + " N (" + fmt(100.0 * rel, 3) + "%)");
    }
  } else {
    const double last_motion = final_height - height_window_start;
    const double el_limit = model.joints[static_cast<std::size_t>(el)].limit_hi;
    report.metrics["stall_window_motion_m"] = last_motion;
    add(report, "stalled", std::abs(last_motion) < stall_motion,
        "height change over the last " + fmt(stall_window) + " s: " + fmt(1000.0 * last_motion, 3) + " mm at " +
            fmt(final_height, 4) + " m");
    add(report, "halt_before_elbow_limit", max_el < el_limit && hard_stop_steps == 0,
        "max ElbowLowPitch " + fmt(max_el, 4) + " rad vs limit " + fmt(el_limit) + " rad");
  }

  report.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

ScenarioReport run_scenario(const RobotModel& model, const std::string& name, const ScenarioOptions& options) {
  if (name == "reachability") return run_reachability(model, options);
  if (name == "manipulation") {
    const double payload = options.payload_kg.value_or(scenario_file(options, "manipulation").at("payload_kg").get<double>());
    return run_manipulation(model, payload, options);
  }
  if (name == "lift") {
    const double payload = options.payload_kg.value_or(scenario_file(options, "lift").at("payload_kg").get<double>());
    return run_lift(model, payload, options);
  }
  throw std::invalid_argument("unknown scenario '" + name + "' (expected reachability, manipulation or lift)");
}

// ---------------------------------------------------------------------------
// Serialisation

namespace {

void put(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool strip(std::string& s, const std::string& prefix, const std::string& suffix) {
  if (s.size() < prefix.size() + suffix.size()) return false;
  if (s.compare(0, prefix.size(), prefix) != 0) return false;
  if (s.compare(s.size() - suffix.size(), suffix.size(), suffix) != 0) return false;
  s = s.substr(prefix.size(), s.size() - prefix.size() - suffix.size());
  return true;
}

}  // namespace

std::string report_csv(const ScenarioReport& r) {
  std::string out = "t_s";
  for (const auto& j : r.joint_names) out += ",q_" + j + "_rad";
  for (const auto& j : r.joint_names) out += ",q_ref_" + j + "_rad";
  for (const auto& j : r.joint_names) out += ",tau_cmd_" + j + "_Nm";
  for (const auto& e : r.element_names) out += ",tension_" + e + "_N";
  for (const auto& e : r.element_names) out += ",current_" + e + "_A";
  out += ",ee_height_m,lift_height_m,payload_kg\n";
  for (const auto& s : r.series) {
    put(out, s.t);
    const auto vec = [&](const auto& v) {
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        out += ',';
        put(out, v[i]);
      }
    };
    vec(s.q);
    vec(s.q_ref);
    vec(s.tau_cmd);
    vec(s.tension);
    vec(s.current);
    out += ',';
    put(out, s.ee_height);
    out += ',';
    put(out, s.lift_height);
    out += ',';
    put(out, s.payload);
    out += '\n';
  }
  return out;
}

ScenarioReport parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("report csv: empty input");
  const auto header = split(line);
  ScenarioReport r;
  if (header.empty() || header[0] != "t_s") throw std::runtime_error("report csv: first column must be t_s");
  std::size_t c = 1;
  for (; c < header.size(); ++c) {
    std::string h = header[c];
    if (h.rfind("q_ref_", 0) == 0 || !strip(h, "q_", "_rad")) break;
    r.joint_names.push_back(h);
  }
  const std::size_t nj = r.joint_names.size();
  if (nj != static_cast<std::size_t>(kDof)) throw std::runtime_error("report csv: expected 5 joint columns");
  c += 2 * nj;  // q_ref and tau_cmd mirror the joint names
  for (; c < header.size(); ++c) {
    std::string h = header[c];
    if (!strip(h, "tension_", "_N")) break;
    r.element_names.push_back(h);
  }
  const std::size_t ne = r.element_names.size();
  const std::size_t width = 1 + 3 * nj + 2 * ne + 3;
  if (header.size() != width) throw std::runtime_error("report csv: unexpected header width");
  for (std::size_t j = 0; j < nj; ++j) {
    if (header[1 + nj + j] != "q_ref_" + r.joint_names[j] + "_rad" ||
        header[1 + 2 * nj + j] != "tau_cmd_" + r.joint_names[j] + "_Nm")
      throw std::runtime_error("report csv: joint columns out of order");
  }
  for (std::size_t e = 0; e < ne; ++e)
    if (header[1 + 3 * nj + ne + e] != "current_" + r.element_names[e] + "_A")
      throw std::runtime_error("report csv: element columns out of order");

  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != width) throw std::runtime_error("report csv: row " + std::to_string(row) + " has wrong width");
    std::vector<double> v(width);
    for (std::size_t i = 0; i < width; ++i) {
      char* end = nullptr;
      v[i] = std::strtod(cells[i].c_str(), &end);
      if (end == cells[i].c_str() || *end != '\0')
        throw std::runtime_error("report csv: row " + std::to_string(row) + " has a non-numeric cell");
    }
    Sample s;
    std::size_t k = 0;
    s.t = v[k++];
    for (int j = 0; j < kDof; ++j) s.q[j] = v[k++];
    for (int j = 0; j < kDof; ++j) s.q_ref[j] = v[k++];
    for (int j = 0; j < kDof; ++j) s.tau_cmd[j] = v[k++];
    s.tension.resize(static_cast<Eigen::Index>(ne));
    s.current.resize(static_cast<Eigen::Index>(ne));
    for (std::size_t e = 0; e < ne; ++e) s.tension[static_cast<Eigen::Index>(e)] = v[k++];
    for (std::size_t e = 0; e < ne; ++e) s.current[static_cast<Eigen::Index>(e)] = v[k++];
    s.ee_height = v[k++];
    s.lift_height = v[k++];
    s.payload = v[k++];
    r.series.push_back(std::move(s));
  }
  return r;
}

std::string report_summary(const ScenarioReport& r) {
  std::ostringstream out;
  out << "scenario: " << r.name << "\n";
  for (const auto& c : r.criteria) out << c.name << ": " << (c.passed ? "PASS" : "FAIL") << " (" << c.detail << ")\n";
  for (const auto& [k, v] : r.metrics) out << "  " << k << " = " << fmt(v, 8) << "\n";
  if (!r.diagnostic.empty()) out << "diagnostic: " << r.diagnostic << "\n";
  out << "samples: " << r.series.size() << "\n";
  out << "runtime_s: " << fmt(r.runtime_s, 3) << "\n";
  out << "result: " << (r.passed() ? "PASS" : "FAIL") << "\n";
  return out.str();
}

void write_report(const ScenarioReport& r, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto base = std::filesystem::path(dir) / r.name;
  const auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
    out << text;
  };
  write(base.string() + ".csv", report_csv(r));
  write(base.string() + "_summary.txt", report_summary(r));
  std::string plot =
      "#!/usr/bin/env python3\n"
      "# Plots " + r.name + ".csv: joint tracking, wire tensions with the cap line, heights.\n"
      "import csv, sys\n"
      "import matplotlib.pyplot as plt\n\n"
      "path = sys.argv[1] if len(sys.argv) > 1 else '" + r.name + ".csv'\n"
      "rows = list(csv.DictReader(open(path)))\n"
      "cols = rows[0].keys()\n"
      "t = [float(r['t_s']) for r in rows]\n"
      "fig, ax = plt.subplots(3, 1, sharex=True, figsize=(9, 10))\n"
      "for c in cols:\n"
      "    if c.startswith('q_') and not c.startswith('q_ref_'):\n"
      "        name = c[2:-4]\n"
      "        line, = ax[0].plot(t, [float(r[c]) for r in rows], label=name)\n"
      "        ax[0].plot(t, [float(r['q_ref_' + name + '_rad']) for r in rows], '--', color=line.get_color())\n"
      "    if c.startswith('tension_'):\n"
      "        ax[1].plot(t, [float(r[c]) for r in rows], label=c[8:-2])\n"
      "ax[1].axhline(1500.0, color='k', linestyle=':', label='cap 1500 N')\n"
      "ax[2].plot(t, [float(r['ee_height_m']) for r in rows], label='hand height')\n"
      "ax[2].plot(t, [float(r['lift_height_m']) for r in rows], label='lift height')\n"
      "ax[0].set_ylabel('rad'); ax[1].set_ylabel('N'); ax[2].set_ylabel('m'); ax[2].set_xlabel('s')\n"
      "for a in ax: a.legend(fontsize='small')\n"
      "plt.tight_layout()\n"
      "plt.savefig(path.replace('.csv', '.png'))\n";
  write(base.string() + "_plot.py", plot);
}

}  // namespace vlimb
