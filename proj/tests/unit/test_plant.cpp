#include "oracles.hpp"

#include <doctest.h>
#include <plant.hpp>

#include <cmath>
#include <cstring>
#include <numbers>

using namespace vlimb;

namespace {

const JointVector kHome = (JointVector() << 0.0, 0.3, 0.5, 0.8, 0.0).finished();

Eigen::VectorXd zero_currents(const RobotModel& m) {
  return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.elements.size()));
}

Eigen::VectorXd holding_tensions(const RobotModel& m, const std::string& mode, const JointVector& q) {
  const auto routing = resolve_routing(m, mode);
  return allocate_tensions(muscle_jacobian(m, routing, q), gravity_torque(m, q), element_kinds(m), gains_from(m))
      .tensions;
}

// Only the upper arm carries mass; it swings about the upper-arm pitch axis.
RobotModel pendulum_model() {
  auto m = default_vlimb();
  for (std::size_t i = 0; i < m.links.size(); ++i) {
    if (i == 2) continue;
    m.links[i].mass = 0.0;
    m.links[i].inertia_diag.setZero();
  }
  for (auto& j : m.joints) {
    j.viscous_friction = 0.0;
    j.coulomb_friction = 0.0;
    j.limit_lo = -10.0;
    j.limit_hi = 10.0;
  }
  m.joints[1].armature = 0.0;
  return m;
}

PlantParams frictionless() {
  PlantParams p;
  p.friction = false;
  p.check_wrap = false;
  return p;
}

bool bit_equal(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

}  // namespace

TEST_CASE("transmission: first-order lag towards the motor tension") {
  const auto m = default_vlimb();
  auto s = make_state(m, "manipulation", kHome);
  PlantParams p;
  p.gravity = 0.0;
  auto i = zero_currents(m);
  i[1] = 5.0;  // 5 A -> 500 N on the wire
  CHECK(current_to_tension(m, i)[1] == doctest::Approx(500.0).epsilon(1e-12));
  const long n = std::lround(p.transmission_lag / p.dt);
  for (long k = 0; k < n; ++k) s = step(m, s, i, p);
  // After one time constant the continuous filter reaches 1 - 1/e.
  CHECK(s.wire.tensions[1] == doctest::Approx(500.0 * (1.0 - std::exp(-1.0))).epsilon(0.01));
  for (long k = 0; k < 10 * n; ++k) s = step(m, s, i, p);
  CHECK(s.wire.tensions[1] == doctest::Approx(500.0).epsilon(1e-3));
}

TEST_CASE("transmission: wires never push, belts do") {
  const auto m = default_vlimb();
  auto s = make_state(m, "manipulation", kHome);
  auto i = zero_currents(m);
  for (Eigen::Index e = 0; e < i.size(); ++e) i[e] = -3.0;
  for (int k = 0; k < 200; ++k) {
    s = step(m, s, i, PlantParams{});
    for (std::size_t e = 0; e < m.elements.size(); ++e)
      if (m.elements[e].kind == ElementKind::Wire) REQUIRE(s.wire.tensions[static_cast<Eigen::Index>(e)] >= 0.0);
  }
  CHECK(s.wire.tensions[m.element_index("belt_wrist_roll")] < -100.0);
}

TEST_CASE("plant: holding tensions keep the arm still") {
  const auto m = default_vlimb();
  const auto f = holding_tensions(m, "manipulation", kHome);
  auto s = make_state(m, "manipulation", kHome, f);
  const auto i = tension_to_current(f, m).currents;
  for (int k = 0; k < 2000; ++k) s = step(m, s, i, PlantParams{});
  CHECK((s.joints.q - kHome).cwiseAbs().maxCoeff() < 1e-3);
  CHECK(s.joints.qd.cwiseAbs().maxCoeff() < 1e-3);
  CHECK_FALSE(s.hard_stop);
  CHECK_FALSE(s.wrap_violation);
}

TEST_CASE("plant: small-oscillation period of a compound pendulum") {
  const auto m = pendulum_model();
  const auto& link = m.links[2];
  const double lc = link.com_offset.z();
  const double inertia = link.inertia_diag.y() + link.mass * lc * lc;
  const double period = 2.0 * std::numbers::pi * std::sqrt(inertia / (link.mass * kGravity * lc));

  JointVector q = JointVector::Zero();
  q[1] = std::numbers::pi + 0.02;  // hanging, slightly displaced
  auto s = make_state(m, "manipulation", q);
  const auto p = frictionless();
  std::vector<double> crossings;
  double prev = s.joints.q[1] - std::numbers::pi;
  while (crossings.size() < 6 && s.t < 20.0) {
    s = step(m, s, zero_currents(m), p);
    const double x = s.joints.q[1] - std::numbers::pi;
    if (prev < 0.0 && x >= 0.0) crossings.push_back(s.t - p.dt * x / (x - prev));
    prev = x;
  }
  REQUIRE(crossings.size() == 6);
  const double measured = (crossings.back() - crossings.front()) / 5.0;
  CHECK(std::abs(measured - period) / period < 0.01);
}

TEST_CASE("plant: unforced frictionless energy drift") {
  SUBCASE("pendulum") {
    const auto m = pendulum_model();
    JointVector q = JointVector::Zero();
    q[1] = std::numbers::pi + 0.5;
    auto s = make_state(m, "manipulation", q);
    const auto p = frictionless();
    const double e0 = total_energy(m, s, p);
    const double swing = m.links[2].mass * kGravity * m.links[2].com_offset.z() * (1.0 - std::cos(0.5));
    for (int k = 0; k < 5000; ++k) s = step(m, s, zero_currents(m), p);
    const double worst = std::abs(total_energy(m, s, p) - e0) / s.t;
    CHECK(worst / swing < 0.01);
  }
  SUBCASE("whole arm, wires slack") {
    auto m = default_vlimb();
    for (auto& j : m.joints) {
      j.limit_lo = -20.0;
      j.limit_hi = 20.0;
    }
    auto s = make_state(m, "manipulation", kHome);
    s.joints.qd << 0.5, -0.3, 0.4, 0.2, 1.0;
    const auto p = frictionless();
    const double e0 = total_energy(m, s, p);
    // Scale: the largest kinetic energy seen during the run.
    double scale = 0.0;
    double excursion = 0.0;
    for (int k = 0; k < 3000; ++k) {
      s = step(m, s, zero_currents(m), p);
      scale = std::max(scale, 0.5 * s.joints.qd.dot(mass_matrix(m, s.joints.q) * s.joints.qd));
      excursion = std::max(excursion, std::abs(total_energy(m, s, p) - e0));
    }
    const double drift = std::abs(total_energy(m, s, p) - e0) / s.t;
    REQUIRE(scale > 1.0);
    CHECK(drift / scale < 0.01);
    CHECK(excursion / scale < 0.02);
  }
}

TEST_CASE("plant: friction only removes energy") {
  const auto m = default_vlimb();
  auto s = make_state(m, "manipulation", kHome);
  s.joints.qd << 1.0, -0.5, 0.5, 0.5, 2.0;
  PlantParams p;
  p.gravity = 0.0;
  double e = total_energy(m, s, p);
  for (int k = 0; k < 3000; ++k) {
    s = step(m, s, zero_currents(m), p);
    const double e1 = total_energy(m, s, p);
    REQUIRE(e1 <= e + 1e-12);
    e = e1;
  }
  CHECK(s.joints.qd.cwiseAbs().maxCoeff() < 1e-3);  // Coulomb stiction catches it
}

TEST_CASE("plant: hard stops push back") {
  const auto m = default_vlimb();
  JointVector q = kHome;
  q[1] = m.joints[1].limit_hi + 0.05;
  auto s = make_state(m, "manipulation", q);
  PlantParams p;
  p.gravity = 0.0;
  s = step(m, s, zero_currents(m), p);
  CHECK(s.hard_stop);
  CHECK(s.joints.qd[1] < 0.0);
  for (int k = 0; k < 2000; ++k) s = step(m, s, zero_currents(m), p);
  CHECK(s.joints.q[1] <= m.joints[1].limit_hi + 1e-3);
}

TEST_CASE("plant: the anchor carries a payload held at the hand") {
  const auto m = default_vlimb();
  const auto f = holding_tensions(m, "manipulation", kHome);
  auto s = make_state(m, "manipulation", kHome, f);
  const PlantParams p;
  s = apply_grasp(m, s, hand_position(m, s), p);
  CHECK(s.gripper_closed);
  s.payload_mass = 5.0;
  const auto i = tension_to_current(f, m).currents;
  for (int k = 0; k < 3000; ++k) s = step(m, s, i, p);
  CHECK(s.joints.qd.cwiseAbs().maxCoeff() < 1e-3);
  CHECK((hand_position(m, s) - *s.grasp_anchor).norm() < 1e-3);
  const Vec3 weight(0.0, 0.0, 5.0 * kGravity);
  CHECK((s.grasp_force - weight).norm() / weight.norm() < 0.02);

  const auto r = release_grasp(s);
  CHECK_FALSE(r.grasp_anchor.has_value());
  CHECK_FALSE(r.gripper_closed);
  CHECK(r.grasp_force.norm() == 0.0);
}

TEST_CASE("plant: grasp engages only within tolerance") {
  const auto m = default_vlimb();
  const auto s = make_state(m, "manipulation", kHome);
  const PlantParams p;
  const Vec3 hand = hand_position(m, s);
  CHECK_NOTHROW(apply_grasp(m, s, hand + Vec3(0.004, 0.0, 0.0), p));
  CHECK_THROWS_AS(apply_grasp(m, s, hand + Vec3(0.0, 0.0, 0.006), p), PlantError);
}

TEST_CASE("plant: carriage rests on the ground") {
  const auto m = default_vlimb();
  const auto f = holding_tensions(m, "manipulation", kHome);
  auto s = make_state(m, "manipulation", kHome, f);
  s.carriage.enabled = true;
  s.carriage.mass = 10.0;
  const auto i = tension_to_current(f, m).currents;
  for (int k = 0; k < 500; ++k) s = step(m, s, i, PlantParams{});
  CHECK(s.carriage.height == 0.0);
  CHECK(s.carriage.ground_force == doctest::Approx((m.total_mass() + 10.0) * kGravity).epsilon(1e-3));
}

TEST_CASE("plant: payload weight loads the joints") {
  const auto m = default_vlimb();
  const auto f = holding_tensions(m, "manipulation", kHome);
  auto a = make_state(m, "manipulation", kHome, f);
  auto b = a;
  b.payload_mass = 1.0;
  const auto i = tension_to_current(f, m).currents;
  a = step(m, a, i, PlantParams{});
  b = step(m, b, i, PlantParams{});
  // Extra weight at the hand accelerates the joints along its generalised force.
  const JointVector extra = b.joints.qd - a.joints.qd;
  const auto frames = forward_kinematics(m, kHome);
  const JointVector load = -end_effector_jacobian(m, frames).transpose() * Vec3(0.0, 0.0, kGravity);
  CHECK(extra.dot(load) > 0.0);
}

TEST_CASE("plant: mode switch requires a still arm with slack wires") {
  const auto m = default_vlimb();
  auto s = make_state(m, "manipulation", kHome);
  const auto moving = [&] {
    auto x = s;
    x.joints.qd[2] = 0.05;
    return x;
  }();
  CHECK_THROWS_WITH_AS(set_mode(m, moving, "power"), "not stationary", PlantError);
  auto taut = s;
  taut.wire.tensions[1] = 2.0 * m.controller.tension_floor;
  CHECK_THROWS_WITH_AS(set_mode(m, taut, "power"), "not stationary", PlantError);
  CHECK_THROWS_AS(set_mode(m, s, "turbo"), std::invalid_argument);

  const auto p = set_mode(m, s, "power");
  CHECK(p.mode == "power");
  CHECK(p.routing.engaged_groups.empty());
  CHECK(p.rest_lengths[m.element_index("wire_elbow_power")] != s.rest_lengths[m.element_index("wire_elbow_power")]);
}

TEST_CASE("plant: stepping is deterministic") {
  const auto m = default_vlimb();
  const auto f = holding_tensions(m, "manipulation", kHome);
  auto a = make_state(m, "manipulation", kHome, f);
  a.joints.qd << 0.1, 0.2, -0.3, 0.1, 0.5;
  auto b = a;
  auto i = tension_to_current(f, m).currents;
  i[1] += 1.0;
  for (int k = 0; k < 300; ++k) {
    a = step(m, a, i, PlantParams{});
    b = step(m, b, i, PlantParams{});
  }
  CHECK(bit_equal(a.joints.q, b.joints.q));
  CHECK(bit_equal(a.joints.qd, b.joints.qd));
  CHECK(bit_equal(a.wire.tensions, b.wire.tensions));
  CHECK(bit_equal(a.rings.angles, b.rings.angles));
}

TEST_CASE("plant: non-finite input halts with a diagnostic") {
  const auto m = default_vlimb();
  const auto s0 = make_state(m, "manipulation", kHome);
  auto i = zero_currents(m);
  i[2] = std::nan("");
  const auto s1 = step(m, s0, i, PlantParams{});
  CHECK(s1.halted);
  CHECK_FALSE(s1.diagnostic.empty());
  CHECK(s1.joints.q == s0.joints.q);
  const auto s2 = step(m, s1, zero_currents(m), PlantParams{});
  CHECK(s2.t == s1.t);
  CHECK(s2.halted);
}

TEST_CASE("plant: over-current is flagged") {
  const auto m = default_vlimb();
  auto s = make_state(m, "manipulation", kHome);
  auto i = zero_currents(m);
  i[3] = 16.0;
  s = step(m, s, i, PlantParams{});
  CHECK(s.saturated);
}
