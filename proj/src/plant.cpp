// Device simulation: lagged tendon transmission driving the rigid arm.
//
// Generalised coordinates are the five joints, plus the carriage height when
// the lift carriage is enabled. Each step is a linearly implicit Euler step:
// stiff terms (viscous friction, hard stops, grasp spring) are linearised and
// folded into the velocity solve, Coulomb friction is resolved afterwards as a
// bounded impulse per joint (projected Gauss-Seidel), and positions are
// advanced with the new velocities.

#include "plant.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vlimb {

namespace {

// Hand tip in base coordinates and its Jacobian.
struct HandKinematics {
  Vec3 position;
  PointJacobian jacobian;
};

HandKinematics hand_kinematics(const RobotModel& model, const std::vector<FramePose>& frames) {
  return {end_effector_position(model, frames), end_effector_jacobian(model, frames)};
}

int dof_count(const SimState& s) { return kDof + (s.carriage.enabled ? 1 : 0); }

double moving_mass(const RobotModel& model, const SimState& s) {
  return model.total_mass() + s.payload_mass + s.carriage.mass;
}

// Joint-space inertia with the payload point mass and, if present, the
// carriage row/column coupling base translation with arm motion.
Eigen::MatrixXd generalised_mass(const RobotModel& model, const SimState& s, const std::vector<FramePose>& frames,
                                 const HandKinematics& hand) {
  const int n = dof_count(s);
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
  M.topLeftCorner<kDof, kDof>() = mass_matrix(model, s.joints.q);
  if (s.payload_mass > 0.0) M.topLeftCorner<kDof, kDof>() += s.payload_mass * hand.jacobian.transpose() * hand.jacobian;
  if (s.carriage.enabled) {
    JointVector b = s.payload_mass * hand.jacobian.row(2).transpose();
    for (std::size_t i = 1; i < model.links.size(); ++i) {
      const auto J = point_jacobian(model, frames, static_cast<int>(i), model.links[i].com_offset);
      b += model.links[i].mass * J.row(2).transpose();
    }
    M.block<kDof, 1>(0, kDof) = b;
    M.block<1, kDof>(kDof, 0) = b.transpose();
    M(kDof, kDof) = moving_mass(model, s);
  }
  return M;
}

// 3 x n Jacobian of the hand tip in world coordinates.
Eigen::MatrixXd grasp_jacobian(const SimState& s, const HandKinematics& hand) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(3, dof_count(s));
  J.leftCols<kDof>() = hand.jacobian;
  if (s.carriage.enabled) J(2, kDof) = 1.0;
  return J;
}

Eigen::VectorXd velocities(const SimState& s) {
  Eigen::VectorXd v(dof_count(s));
  v.head<kDof>() = s.joints.qd;
  if (s.carriage.enabled) v[kDof] = s.carriage.velocity;
  return v;
}

Vec3 world_hand(const SimState& s, const Vec3& base_point) {
  return base_point + Vec3(0.0, 0.0, s.carriage.enabled ? s.carriage.height : 0.0);
}

double lag_for(const PlantParams& p, Eigen::Index e) {
  if (p.lag_per_element.size() > e) return p.lag_per_element[e];
  return p.transmission_lag;
}

bool all_finite(const SimState& s) {
  return s.joints.q.allFinite() && s.joints.qd.allFinite() && s.wire.tensions.allFinite() &&
         std::isfinite(s.carriage.height) && std::isfinite(s.carriage.velocity);
}

// Coulomb bound per joint for the current state.
JointVector coulomb_bounds(const RobotModel& model, const SimState& s, const PlantParams& p) {
  JointVector c = JointVector::Zero();
  if (!p.friction) return c;
  for (int j = 0; j < kDof; ++j) c[j] = model.joints[static_cast<std::size_t>(j)].coulomb_friction;
  const auto& contact = p.belt_wire_contact;
  if (contact.enabled) {
    const int j = model.joint_index(contact.joint);
    if (j >= 0 && s.joints.q[j] > contact.angle_threshold) c[j] += contact.extra_coulomb;
  }
  return c;
}

void refresh_wire(const RobotModel& model, SimState& s, const std::vector<FramePose>& frames,
                  const PlantParams& p) {
  if (p.solve_rings) s.rings = solve_ring_angles(model, s.routing, frames);
  const auto G = muscle_jacobian(model, s.routing, s.joints.q, s.rings);
  const auto m = static_cast<Eigen::Index>(model.elements.size());
  s.wire.lengths.resize(m);
  for (Eigen::Index e = 0; e < m; ++e)
    s.wire.lengths[e] = element_length(model, s.routing, frames, s.rings, static_cast<int>(e), s.joints.q);
  s.wire.length_rates = G * s.joints.qd;
}

}  // namespace

Eigen::VectorXd current_to_tension(const RobotModel& model, const Eigen::VectorXd& currents) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.elements.size()));
  for (Eigen::Index e = 0; e < f.size() && e < currents.size(); ++e) {
    const auto& el = model.elements[static_cast<std::size_t>(e)];
    f[e] = currents[e] * el.motor.torque_constant * el.motor.gear_ratio / el.pulley_radius;
  }
  return f;
}

SimState make_state(const RobotModel& model, const std::string& mode, const JointVector& q,
                    const Eigen::VectorXd& initial_tensions) {
  SimState s;
  s.mode = mode;
  s.routing = resolve_routing(model, mode);
  s.joints.q = q;
  const auto m = static_cast<Eigen::Index>(model.elements.size());
  s.wire.tensions = initial_tensions.size() == m ? initial_tensions : Eigen::VectorXd::Zero(m);
  s.currents = Eigen::VectorXd::Zero(m);
  s.rings = frozen_rings(model);
  refresh_wire(model, s, forward_kinematics(model, q), PlantParams{});
  s.rest_lengths = s.wire.lengths;
  return s;
}

Vec3 hand_position(const RobotModel& model, const SimState& state) {
  return world_hand(state, end_effector_position(model, forward_kinematics(model, state.joints.q)));
}

SimState step(const RobotModel& model, const SimState& state, const Eigen::VectorXd& currents,
              const PlantParams& params) {
  if (state.halted) return state;
  SimState s = state;
  const double dt = params.dt;
  const int n = dof_count(s);
  const auto m = static_cast<Eigen::Index>(model.elements.size());

  // Motor command -> transmitted tension, first-order lag.
  s.currents = currents;
  s.saturated = false;
  for (Eigen::Index e = 0; e < m && e < currents.size(); ++e)
    if (std::abs(currents[e]) > model.elements[static_cast<std::size_t>(e)].motor.max_current * (1.0 + 1e-12))
      s.saturated = true;
  const Eigen::VectorXd f_cmd = current_to_tension(model, currents);
  for (Eigen::Index e = 0; e < m; ++e) {
    const double a = dt / (lag_for(params, e) + dt);
    double f = s.wire.tensions[e] + a * (f_cmd[e] - s.wire.tensions[e]);
    if (model.elements[static_cast<std::size_t>(e)].kind == ElementKind::Wire) f = std::max(f, 0.0);
    s.wire.tensions[e] = f;
  }

  const JointVector& q = s.joints.q;
  const auto frames = forward_kinematics(model, q);
  const auto hand = hand_kinematics(model, frames);
  const auto G = muscle_jacobian(model, s.routing, q, s.rings);

  const Eigen::MatrixXd M = generalised_mass(model, s, frames, hand);
  const Eigen::VectorXd v = velocities(s);
  Eigen::VectorXd F = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);  // -dF/dv
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);  // -dF/dx

  JointVector tau_arm = -G.transpose() * s.wire.tensions;
  s.joints.tau = tau_arm;
  tau_arm -= bias_forces(model, q, s.joints.qd, params.gravity);
  if (s.payload_mass > 0.0)
    tau_arm -= hand.jacobian.transpose() * Vec3(0.0, 0.0, s.payload_mass * params.gravity);
  F.head<kDof>() = tau_arm;
  if (s.carriage.enabled) F[kDof] = -moving_mass(model, s) * params.gravity;
  // Centripetal terms of the arm's vertical momentum are neglected in the
  // carriage row; they are tiny at lifting speeds.

  if (params.friction)
    for (int j = 0; j < kDof; ++j) {
      const double b = model.joints[static_cast<std::size_t>(j)].viscous_friction;
      F[j] -= b * v[j];
      D(j, j) += b;
    }

  s.hard_stop = false;
  for (int j = 0; j < kDof; ++j) {
    const auto& jt = model.joints[static_cast<std::size_t>(j)];
    double pen = 0.0;
    if (q[j] > jt.limit_hi) pen = q[j] - jt.limit_hi;
    else if (q[j] < jt.limit_lo) pen = q[j] - jt.limit_lo;
    if (pen == 0.0) continue;
    s.hard_stop = true;
    F[j] -= params.hard_stop_stiffness * pen + params.hard_stop_damping * v[j];
    K(j, j) += params.hard_stop_stiffness;
    D(j, j) += params.hard_stop_damping;
  }

  if (s.grasp_anchor) {
    const Eigen::MatrixXd Jg = grasp_jacobian(s, hand);
    const Vec3 p = world_hand(s, hand.position);
    const Vec3 force = params.grasp.stiffness * (*s.grasp_anchor - p) - params.grasp.damping * (Jg * v);
    F += Jg.transpose() * force;
    K += params.grasp.stiffness * Jg.transpose() * Jg;
    D += params.grasp.damping * Jg.transpose() * Jg;
  }

  const Eigen::MatrixXd A = M + dt * D + dt * dt * K;
  const Eigen::VectorXd rhs = dt * (F - dt * K * v);

  // Velocity update; the ground pins the carriage when it would sink.
  std::vector<int> free;
  for (int i = 0; i < n; ++i) free.push_back(i);
  Eigen::VectorXd dv = A.ldlt().solve(rhs);
  s.carriage.ground_force = 0.0;
  if (s.carriage.enabled && s.carriage.height + dt * (v[kDof] + dv[kDof]) < 0.0) {
    const double vh = -s.carriage.height / dt;
    dv.setZero();
    dv[kDof] = vh - v[kDof];
    free.pop_back();
    const Eigen::MatrixXd Aff = A.topLeftCorner<kDof, kDof>();
    dv.head<kDof>() = Aff.ldlt().solve(rhs.head<kDof>() - A.block<kDof, 1>(0, kDof) * dv[kDof]);
    s.carriage.ground_force = (A.row(kDof).dot(dv) - rhs[kDof]) / dt;
  }
  Eigen::VectorXd v_new = v + dv;

  // Coulomb friction as bounded impulses on the free coordinates.
  const JointVector c = coulomb_bounds(model, s, params);
  if (c.maxCoeff() > 0.0) {
    const auto nf = static_cast<Eigen::Index>(free.size());
    Eigen::MatrixXd Aff(nf, nf);
    for (Eigen::Index a = 0; a < nf; ++a)
      for (Eigen::Index b = 0; b < nf; ++b) Aff(a, b) = A(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
    const Eigen::MatrixXd W = dt * Aff.inverse();
    Eigen::VectorXd vf(nf);
    for (Eigen::Index a = 0; a < nf; ++a) vf[a] = v_new[free[static_cast<std::size_t>(a)]];
    Eigen::VectorXd phi = Eigen::VectorXd::Zero(nf);
    for (int it = 0; it < params.coulomb_iterations; ++it) {
      for (int j = 0; j < kDof; ++j) {
        if (c[j] <= 0.0) continue;
        const double vj = vf[j] + W.row(j).dot(phi);
        phi[j] = std::clamp(phi[j] - vj / W(j, j), -c[j], c[j]);
      }
    }
    vf += W * phi;
    for (Eigen::Index a = 0; a < nf; ++a) v_new[free[static_cast<std::size_t>(a)]] = vf[a];
  }

  s.joints.qd = v_new.head<kDof>();
  s.joints.q += dt * s.joints.qd;
  if (s.carriage.enabled) {
    s.carriage.velocity = v_new[kDof];
    s.carriage.height += dt * s.carriage.velocity;
    if (s.carriage.height < 0.0) {
      s.carriage.height = 0.0;
      s.carriage.velocity = std::max(s.carriage.velocity, 0.0);
    }
  }
  s.t += dt;

  const auto new_frames = forward_kinematics(model, s.joints.q);
  refresh_wire(model, s, new_frames, params);
  if (s.grasp_anchor) {
    const auto nh = hand_kinematics(model, new_frames);
    const Vec3 p = world_hand(s, nh.position);
    s.grasp_force = params.grasp.stiffness * (*s.grasp_anchor - p) -
                    params.grasp.damping * (grasp_jacobian(s, nh) * velocities(s));
  } else {
    s.grasp_force.setZero();
  }
  if (params.check_wrap) s.wrap_violation = !detect_wrap(model, s.routing, new_frames, s.rings).empty();

  if (!all_finite(s)) {
    SimState h = state;
    h.halted = true;
    std::ostringstream msg;
    msg << "integration diverged at t = " << s.t << " s";
    h.diagnostic = msg.str();
    return h;
  }
  return s;
}

SimState idle_step(const RobotModel& model, const SimState& state, const PlantParams& params) {
  if (state.halted) return state;
  SimState s = state;
  const auto m = static_cast<Eigen::Index>(model.elements.size());
  s.currents = Eigen::VectorXd::Zero(m);
  s.saturated = false;
  for (Eigen::Index e = 0; e < m; ++e) s.wire.tensions[e] *= lag_for(params, e) / (lag_for(params, e) + params.dt);
  s.joints.qd.setZero();
  s.wire.length_rates.setZero();
  s.joints.tau = -muscle_jacobian(model, s.routing, s.joints.q, s.rings).transpose() * s.wire.tensions;
  if (s.carriage.enabled) s.carriage.velocity = 0.0;
  s.t += params.dt;
  return s;
}

SimState apply_grasp(const RobotModel& model, const SimState& state, const Vec3& anchor, const PlantParams& params) {
  const double gap = (hand_position(model, state) - anchor).norm();
  if (gap > params.grasp.engage_tolerance) {
    std::ostringstream msg;
    msg << "grasp: hand is " << gap * 1000.0 << " mm from the anchor (limit " << params.grasp.engage_tolerance * 1000.0
        << " mm)";
    throw PlantError(msg.str());
  }
  SimState s = state;
  s.grasp_anchor = anchor;
  s.gripper_closed = true;
  return s;
}

SimState release_grasp(const SimState& state) {
  SimState s = state;
  s.grasp_anchor.reset();
  s.grasp_force.setZero();
  s.gripper_closed = false;
  return s;
}

SimState set_mode(const RobotModel& model, const SimState& state, const std::string& mode) {
  auto routing = resolve_routing(model, mode);
  if (state.joints.qd.cwiseAbs().maxCoeff() >= 0.01) throw PlantError("not stationary");
  for (std::size_t e = 0; e < model.elements.size(); ++e) {
    if (model.elements[e].kind != ElementKind::Wire) continue;
    if (state.wire.tensions[static_cast<Eigen::Index>(e)] >= 2.0 * model.controller.tension_floor)
      throw PlantError("not stationary");
  }
  SimState s = state;
  s.mode = mode;
  s.routing = std::move(routing);
  refresh_wire(model, s, forward_kinematics(model, s.joints.q), PlantParams{});
  s.rest_lengths = s.wire.lengths;
  return s;
}

double total_energy(const RobotModel& model, const SimState& state, const PlantParams& params) {
  const auto frames = forward_kinematics(model, state.joints.q);
  const auto hand = hand_kinematics(model, frames);
  const Eigen::VectorXd v = velocities(state);
  const double kinetic = 0.5 * v.dot(generalised_mass(model, state, frames, hand) * v);
  const double h = state.carriage.enabled ? state.carriage.height : 0.0;
  double potential = 0.0;
  for (std::size_t i = 1; i < model.links.size(); ++i)
    potential += model.links[i].mass * params.gravity * (frames[i].apply(model.links[i].com_offset).z() + h);
  potential += state.payload_mass * params.gravity * (hand.position.z() + h);
  if (state.carriage.enabled) potential += (model.links[0].mass + state.carriage.mass) * params.gravity * h;
  if (state.grasp_anchor)
    potential += 0.5 * params.grasp.stiffness * (*state.grasp_anchor - world_hand(state, hand.position)).squaredNorm();
  return kinetic + potential;
}

}  // namespace vlimb
