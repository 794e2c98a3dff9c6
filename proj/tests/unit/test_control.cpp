#include "control.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace vlimb;

namespace {

ControlGains gains_with_floor(double floor, double cap = 1500.0) {
  ControlGains g;
  g.tension_floor = floor;
  g.tension_cap = cap;
  return g;
}

JointVector random_q(const RobotModel& m, oracle::Sampler& s) {
  JointVector q;
  for (int j = 0; j < kDof; ++j) q[j] = s.uniform(m.joints[j].limit_lo, m.joints[j].limit_hi);
  return q;
}

// Grid search with successive zoom over t in [lo, hi]^d, points mapped to
// tensions by f(t). Returns the best f under `cost`; infeasible points are
// those for which `cost` returns +inf.
template <class Map, class Cost>
Eigen::VectorXd zoom_search(int dims, Eigen::VectorXd lo, Eigen::VectorXd hi, Map&& map, Cost&& cost) {
  const int n = dims == 1 ? 2001 : 201;
  Eigen::VectorXd best_t = 0.5 * (lo + hi);
  double best = std::numeric_limits<double>::infinity();
  for (int round = 0; round < 30; ++round) {
    Eigen::VectorXd t(dims);
    const int total = dims == 1 ? n : n * n;
    for (int k = 0; k < total; ++k) {
      t[0] = lo[0] + (hi[0] - lo[0]) * (k % n) / (n - 1.0);
      if (dims == 2) t[1] = lo[1] + (hi[1] - lo[1]) * (k / n) / (n - 1.0);
      const double c = cost(map(t));
      if (c < best) {
        best = c;
        best_t = t;
      }
    }
    const Eigen::VectorXd half = (hi - lo) * (4.0 / (n - 1.0));
    lo = best_t - half;
    hi = best_t + half;
  }
  return map(best_t);
}

}  // namespace

TEST_CASE("cubic spline") {
  const auto m = default_vlimb();
  const JointVector q0(0.1, -0.2, 0.3, 0.0, 1.0);
  const JointVector q1(0.5, 0.4, -0.3, 1.2, -1.0);
  const auto traj = plan_trajectory(m, q0, q1, 2.0, 1.0);
  CHECK((traj.position(1.0) - q0).norm() == 0.0);
  CHECK((traj.position(3.0) - q1).norm() < 1e-15);
  CHECK((traj.position(2.0) - 0.5 * (q0 + q1)).norm() < 1e-15);
  CHECK(traj.velocity(1.0).norm() == 0.0);
  CHECK(traj.velocity(3.0).norm() < 1e-15);
  CHECK((traj.velocity(2.0) - 1.5 * (q1 - q0) / 2.0).norm() < 1e-14);
  CHECK((traj.position(0.0) - q0).norm() == 0.0);
  CHECK((traj.position(10.0) - q1).norm() == 0.0);
  CHECK(!traj.finished(2.9));
  CHECK(traj.finished(3.0));

  // Continuity and peak speed by sampling.
  double peak = 0.0;
  JointVector prev = traj.position(1.0);
  for (int k = 1; k <= 20000; ++k) {
    const double t = 1.0 + 2.0 * k / 20000.0;
    const JointVector p = traj.position(t);
    CHECK((p - prev).cwiseAbs().maxCoeff() < 1e-3);
    peak = std::max(peak, traj.velocity(t).cwiseAbs().maxCoeff());
    prev = p;
  }
  CHECK(peak == doctest::Approx(1.5 * (q1 - q0).cwiseAbs().maxCoeff() / 2.0).epsilon(1e-9));

  const auto hold = plan_trajectory(m, q0, q0, 1.0);
  CHECK((hold.position(0.37) - q0).norm() == 0.0);
}

TEST_CASE("spline rejects bad commands") {
  const auto m = default_vlimb();
  const JointVector q0 = JointVector::Zero();
  CHECK_THROWS_AS(plan_trajectory(m, q0, q0, 0.0), CommandError);
  CHECK_THROWS_AS(plan_trajectory(m, q0, q0, -1.0), CommandError);
  JointVector out = q0;
  out[3] = 2.9;
  CHECK_THROWS_AS(plan_trajectory(m, q0, out, 1.0), CommandError);
  try {
    plan_trajectory(m, q0, out, 1.0);
  } catch (const CommandError& e) {
    CHECK(std::string(e.what()).rfind("joint limit", 0) == 0);
  }
  out[3] = 2.8;
  CHECK_NOTHROW(plan_trajectory(m, q0, out, 1.0));
}

TEST_CASE("spline duration follows the speed limit") {
  const auto m = default_vlimb();
  const JointVector q0 = JointVector::Zero();
  JointVector q1 = q0;
  q1[2] = 1.2;
  CHECK(spline_duration(m, q0, q1) == doctest::Approx(1.8));
  CHECK(spline_duration(m, q0, q0) == doctest::Approx(0.5));
}

TEST_CASE("torque law") {
  const auto m = default_vlimb();
  const auto gains = gains_from(m);
  const JointVector q(0.1, 0.4, 0.6, 0.3, 0.2);
  CHECK((compute_torque(m, q, q, gains) - gravity_torque(m, q)).norm() == 0.0);

  auto massless = m;
  for (auto& l : massless.links) l.mass = 0.0;
  const JointVector q_ref(0.2, 0.3, 0.1, 0.0, -0.5);
  CHECK((compute_torque(massless, q, q_ref, gains) - gains.kp.cwiseProduct(q_ref - q)).norm() < 1e-14);

  // Payload compensation adds J^T m g at the hand tip.
  auto with_payload = gains;
  with_payload.payload_compensation = true;
  const JointVector extra = compute_torque(m, q, q, with_payload, JointVector::Zero(), JointVector::Zero(), 0.5) -
                            compute_torque(m, q, q, gains, JointVector::Zero(), JointVector::Zero(), 0.5);
  auto point = massless;
  point.links[5].mass = 0.5;
  point.links[5].com_offset = Vec3(0.0, 0.0, point.links[5].length);
  CHECK((extra - gravity_torque(point, q)).norm() < 1e-12);
}

TEST_CASE("motor sizing chain") {
  const auto m = default_vlimb();
  const int power = m.element_index("wire_elbow_power");
  const double r = m.elements[static_cast<std::size_t>(power)].pulley_radius;
  CHECK(std::abs(pulley_torque(600.0, r) - 3.6) < 1e-9);
  CHECK(std::abs(pulley_torque(1500.0, r) - 9.0) < 1e-9);

  Eigen::VectorXd f = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.elements.size()));
  f[power] = 600.0;
  auto cmd = tension_to_current(f, m);
  CHECK(std::abs(cmd.currents[power] - 6.0) < 1e-9);
  CHECK(!cmd.any_saturated());
  f[power] = 1500.0;
  cmd = tension_to_current(f, m);
  CHECK(std::abs(cmd.currents[power] - 15.0) < 1e-9);
  CHECK(!cmd.any_saturated());
  f[power] = 1600.0;
  f[0] = -2000.0;
  cmd = tension_to_current(f, m);
  CHECK(cmd.currents[power] == 15.0);
  CHECK(cmd.currents[0] == -15.0);
  CHECK(cmd.saturated[static_cast<std::size_t>(power)]);
  CHECK(cmd.saturated[0]);
  CHECK(tension_to_current(Eigen::VectorXd::Zero(f.size()), m).currents.isZero(0.0));
}

TEST_CASE("allocation: bias solution and antagonist pair") {
  TendonJacobian G = TendonJacobian::Zero(2, kDof);
  G(0, 0) = -0.01;  // moment arm +r
  G(1, 0) = 0.01;   // moment arm -r
  const std::vector<ElementKind> wires{ElementKind::Wire, ElementKind::Wire};
  const auto g = gains_with_floor(10.0);

  const auto zero = allocate_tensions(G, JointVector::Zero(), wires, g);
  CHECK(zero.tensions[0] == 10.0);
  CHECK(zero.tensions[1] == 10.0);

  JointVector tau = JointVector::Zero();
  tau[0] = 2.0;
  const auto a = allocate_tensions(G, tau, wires, g);
  CHECK(a.tensions[0] == doctest::Approx(210.0).epsilon(1e-12));
  CHECK(a.tensions[1] == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(a.rank_deficient);  // one joint actuated out of five
  CHECK(a.torque_residual < 1e-12);

  // Brute force along the 1-D feasible line f1 = f0 - 200.
  const auto line = [](const Eigen::VectorXd& t) { return Eigen::VectorXd(Eigen::Vector2d(t[0], t[0] - 200.0)); };
  const auto obj = [](const Eigen::VectorXd& f) {
    if (f.minCoeff() < 10.0 || f.maxCoeff() > 1500.0) return std::numeric_limits<double>::infinity();
    return (f.array() - 10.0).square().sum();
  };
  const Eigen::VectorXd best =
      zoom_search(1, Eigen::VectorXd::Constant(1, 10.0), Eigen::VectorXd::Constant(1, 1500.0), line, obj);
  CHECK((best - a.tensions).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("allocation matches a brute-force oracle on small instances") {
  oracle::Sampler s(61);
  int checked = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const int m = 2 + trial % 2;      // 2 or 3 elements
    const int active = m == 3 ? 1 + (trial / 2) % 2 : 1;  // joints driven
    TendonJacobian G = TendonJacobian::Zero(m, kDof);
    for (int e = 0; e < m; ++e)
      for (int j = 0; j < active; ++j) G(e, j) = s.uniform(-0.05, 0.05);
    std::vector<ElementKind> kinds(static_cast<std::size_t>(m), ElementKind::Wire);
    if (trial % 5 == 0) kinds[0] = ElementKind::Belt;
    const auto g = gains_with_floor(20.0, 1500.0);

    Eigen::VectorXd lo(m), hi(m), bias(m);
    for (int e = 0; e < m; ++e) {
      const bool wire = kinds[static_cast<std::size_t>(e)] == ElementKind::Wire;
      lo[e] = wire ? 20.0 : -1500.0;
      hi[e] = 1500.0;
      bias[e] = wire ? 20.0 : 0.0;
    }
    // Reachable demand from a random admissible tension vector.
    Eigen::VectorXd f0(m);
    for (int e = 0; e < m; ++e) f0[e] = s.uniform(lo[e], std::min(hi[e], lo[e] + 600.0));
    const JointVector tau = -G.transpose() * f0;
    const auto alloc = allocate_tensions(G, tau, kinds, g);
    CHECK(alloc.torque_residual < 1e-8);

    // Null space of G^T: f = f0 + N t.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(G.transpose()), Eigen::ComputeFullV);
    const int rank = static_cast<int>((svd.singularValues().array() > 1e-12).count());
    const int nd = m - rank;
    if (nd == 0) {
      CHECK((alloc.tensions - f0).norm() < 1e-6);
      continue;
    }
    REQUIRE(nd <= 2);
    const Eigen::MatrixXd N = svd.matrixV().rightCols(nd);
    const auto map = [&](const Eigen::VectorXd& t) { return Eigen::VectorXd(f0 + N * t); };
    const auto cost = [&](const Eigen::VectorXd& f) {
      for (int e = 0; e < m; ++e)
        if (f[e] < lo[e] || f[e] > hi[e]) return std::numeric_limits<double>::infinity();
      return (f - bias).squaredNorm();
    };
    const double span = 4000.0;
    const Eigen::VectorXd best = oracle::enumerate_active_sets(-G.transpose(), tau, lo, hi, bias);
    CHECK((best - alloc.tensions).cwiseAbs().maxCoeff() < 1e-3);

    // No random feasible point beats it.
    const double obj = (alloc.tensions - bias).squaredNorm();
    for (int k = 0; k < 20000; ++k) {
      Eigen::VectorXd t(nd);
      for (int d = 0; d < nd; ++d) t[d] = s.uniform(-span, span);
      CHECK_MESSAGE(cost(map(t)) >= obj - 1e-6, "random feasible point improves the objective");
    }
    ++checked;
  }
  CHECK(checked > 10);
}

TEST_CASE("allocation degrades to least squares when the demand is out of reach") {
  oracle::Sampler s(67);
  for (int trial = 0; trial < 10; ++trial) {
    TendonJacobian G = TendonJacobian::Zero(2, kDof);
    for (int j = 0; j < 2; ++j)
      for (int e = 0; e < 2; ++e) G(e, j) = s.uniform(-0.05, 0.05);
    JointVector tau = JointVector::Zero();
    tau[0] = s.uniform(-300.0, 300.0);
    tau[1] = s.uniform(-300.0, 300.0);
    tau[2] = 1.0;  // never reachable
    const std::vector<ElementKind> kinds{ElementKind::Wire, ElementKind::Wire};
    const auto alloc = allocate_tensions(G, tau, kinds, gains_with_floor(20.0));
    CHECK(alloc.rank_deficient);
    const auto residual = [&](const Eigen::VectorXd& f) {
      if (f.minCoeff() < 20.0 || f.maxCoeff() > 1500.0) return std::numeric_limits<double>::infinity();
      return (-G.transpose() * f - tau).squaredNorm();
    };
    const auto id = [](const Eigen::VectorXd& t) { return t; };
    const Eigen::VectorXd best =
        zoom_search(2, Eigen::VectorXd::Constant(2, 20.0), Eigen::VectorXd::Constant(2, 1500.0), id, residual);
    CHECK(std::abs(std::sqrt(residual(best)) - alloc.torque_residual) < 1e-6);
    CHECK((best - alloc.tensions).cwiseAbs().maxCoeff() < 1e-3);
  }
}

TEST_CASE("single element cannot span five joints") {
  TendonJacobian G = TendonJacobian::Zero(1, kDof);
  G.row(0) << -0.02, -0.05, 0.0, 0.01, 0.0;
  JointVector tau(1.0, -1.0, 2.0, 0.0, 1.0);
  const auto alloc = allocate_tensions(G, tau, {ElementKind::Wire}, ControlGains{});
  CHECK(alloc.rank_deficient);
  CHECK(alloc.torque_residual > 0.1);
  CHECK(alloc.tensions[0] >= 20.0);
}

TEST_CASE("manipulation mode reproduces demanded torque") {
  const auto m = default_vlimb();
  const auto r = resolve_routing(m, "manipulation");
  const auto gains = gains_from(m);
  oracle::Sampler s(71);
  int exact = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const JointVector q = random_q(m, s);
    const auto G = muscle_jacobian(m, r, q);
    JointVector tau;
    for (int j = 0; j < kDof; ++j) tau[j] = s.uniform(-8.0, 8.0);
    const auto alloc = allocate_tensions(G, tau, element_kinds(m), gains);
    CHECK(!alloc.rank_deficient);
    CHECK(alloc.tensions.maxCoeff() < gains.tension_cap);
    CHECK((-G.transpose() * alloc.tensions - tau).cwiseAbs().maxCoeff() < 1e-8);
    ++exact;
  }
  CHECK(exact == 200);
}

TEST_CASE("wire tensions respect floor and cap over many random steps") {
  const auto m = default_vlimb();
  const auto kinds = element_kinds(m);
  const auto gains = gains_from(m);
  oracle::Sampler s(73);
  bool ok = true;
  for (int step = 0; step < 100000; ++step) {
    const auto r = resolve_routing(m, step % 3 == 0 ? "power" : "manipulation");
    TendonJacobian G = muscle_jacobian(m, r, random_q(m, s), frozen_rings(m, s.uniform(-3.0, 3.0)));
    JointVector tau;
    for (int j = 0; j < kDof; ++j) tau[j] = s.uniform(-60.0, 60.0);
    const auto f = allocate_tensions(G, tau, kinds, gains).tensions;
    for (Eigen::Index e = 0; e < f.size(); ++e) {
      const bool wire = kinds[static_cast<std::size_t>(e)] == ElementKind::Wire;
      ok = ok && f[e] <= gains.tension_cap && f[e] >= (wire ? gains.tension_floor : -gains.tension_cap);
      ok = ok && std::isfinite(f[e]);
    }
  }
  CHECK(ok);
}

TEST_CASE("control step is a pure function") {
  const auto m = default_vlimb();
  const auto r = resolve_routing(m, "manipulation");
  ControlSnapshot snap;
  snap.joints.q = JointVector(0.1, 0.3, 0.5, 0.7, -0.2);
  snap.joints.qd = JointVector(0.0, 0.1, -0.1, 0.0, 0.2);
  snap.rings = solve_ring_angles(m, r, snap.joints.q);
  const auto traj = plan_trajectory(m, snap.joints.q, JointVector(0.0, 0.5, 0.5, 0.5, 0.0), 2.0);
  const auto gains = gains_from(m);
  const auto a = control_step(m, r, snap, traj, 0.7, gains);
  const auto b = control_step(m, r, snap, traj, 0.7, gains);
  CHECK(a.tensions_cmd == b.tensions_cmd);
  CHECK(a.currents_cmd == b.currents_cmd);
  CHECK(a.tau_cmd == b.tau_cmd);
  CHECK(a.q_ref == traj.position(0.7));

  // At the reference with the exact model the commanded torque is the gravity torque.
  const auto hold = plan_trajectory(m, snap.joints.q, snap.joints.q, 1.0);
  snap.joints.qd.setZero();
  const auto h = control_step(m, r, snap, hold, 0.5, gains);
  const auto G = muscle_jacobian(m, r, snap.joints.q, snap.rings);
  CHECK((-G.transpose() * h.tensions_cmd - gravity_torque(m, snap.joints.q)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(!h.saturated);
}
