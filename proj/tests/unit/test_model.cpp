#include "model.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

using namespace vlimb;

namespace {

std::string default_model_path() { return std::string(VLIMB_DATA_DIR) + "/vlimb_default.json"; }

}  // namespace

TEST_CASE("default model matches the published figures") {
  const auto m = default_vlimb();
  CHECK_NOTHROW(validate(m));
  CHECK(m.joints.size() == 5);
  CHECK(m.total_mass() == doctest::Approx(16.3).epsilon(1e-12));
  CHECK(m.total_length() == doctest::Approx(1.3).epsilon(1e-12));

  const std::vector<std::string> order{"ShoulderRoll", "UpperArmPitch", "ElbowUpPitch", "ElbowLowPitch", "WristRoll"};
  for (std::size_t j = 0; j < order.size(); ++j) CHECK(m.joints[j].name == order[j]);

  const auto& sr = m.joints[static_cast<std::size_t>(m.joint_index("ShoulderRoll"))];
  CHECK(sr.limit_lo == -3.14);
  CHECK(sr.limit_hi == 3.14);
  const auto& el = m.joints[static_cast<std::size_t>(m.joint_index("ElbowLowPitch"))];
  CHECK(el.limit_lo == -0.8);
  CHECK(el.limit_hi == 2.8);

  const auto& power = m.elements[static_cast<std::size_t>(m.element_index("wire_elbow_power"))];
  CHECK(power.pulley_radius == 0.006);
  CHECK(power.kind == ElementKind::Wire);
}

TEST_CASE("shipped model file equals the built-in default") {
  const auto loaded = load_model(default_model_path());
  CHECK(loaded == default_vlimb());
}

TEST_CASE("write/parse round trip is exact") {
  auto m = default_vlimb();
  m.links[2].mass = 0.1 + 0.2;  // not representable exactly in short decimal
  m.joints[1].limit_lo = -1.0 / 3.0;
  m.elements[0].routing[0].offset.x() = 1e-17;
  const auto back = parse_model(write_model(m));
  CHECK(back == m);

  const auto path = std::filesystem::temp_directory_path() / "vlimb_roundtrip_test.json";
  save_model(m, path.string());
  CHECK(load_model(path.string()) == m);
  std::filesystem::remove(path);
}

TEST_CASE("validator rejects single-field mutations") {
  struct Mutation {
    const char* field;
    std::function<void(RobotModel&)> apply;
  };
  const std::vector<Mutation> mutations{
      {"limit", [](RobotModel& m) { std::swap(m.joints[1].limit_lo, m.joints[1].limit_hi); }},
      {"mass", [](RobotModel& m) { m.links[3].mass = 0.0; }},
      {"length", [](RobotModel& m) { m.links[2].length = -0.1; }},
      {"inertia", [](RobotModel& m) { m.links[2].inertia_diag.y() = 0.0; }},
      {"axis", [](RobotModel& m) { m.joints[0].axis = Vec3(0.0, 0.0, 2.0); }},
      {"viscous", [](RobotModel& m) { m.joints[2].viscous_friction = -1.0; }},
      {"coulomb", [](RobotModel& m) { m.joints[2].coulomb_friction = -1.0; }},
      {"armature", [](RobotModel& m) { m.joints[4].armature = -1.0; }},
      {"duplicate link", [](RobotModel& m) { m.links[2].name = m.links[1].name; }},
      {"duplicate joint", [](RobotModel& m) { m.joints[2].name = m.joints[1].name; }},
      {"joint count", [](RobotModel& m) { m.joints.pop_back(); }},
      {"link count", [](RobotModel& m) { m.links.pop_back(); }},
      {"pulley", [](RobotModel& m) { m.elements[1].pulley_radius = 0.0; }},
      {"kt", [](RobotModel& m) { m.elements[1].motor.torque_constant = 0.0; }},
      {"imax", [](RobotModel& m) { m.elements[1].motor.max_current = -1.0; }},
      {"gear", [](RobotModel& m) { m.elements[1].motor.gear_ratio = 0.0; }},
      {"first point", [](RobotModel& m) { m.elements[1].routing.front().kind = PointKind::WaypointA; }},
      {"last point", [](RobotModel& m) { m.elements[1].routing.back().kind = PointKind::WaypointA; }},
      {"unknown link", [](RobotModel& m) { m.elements[1].routing[1].link = "Tail"; }},
      {"short routing", [](RobotModel& m) { m.elements[1].routing.resize(1); }},
      {"wrap joint", [](RobotModel& m) {
         for (auto& p : m.elements[1].routing)
           if (p.wrap) p.wrap->joint = "Knee";
       }},
      {"ring radius", [](RobotModel& m) {
         for (auto& e : m.elements)
           if (e.ring) e.ring->radius = 0.0;
       }},
      {"mode group", [](RobotModel& m) { m.modes["manipulation"].insert("nonexistent"); }},
      {"default mode", [](RobotModel& m) { m.default_mode = "dance"; }},
      {"no modes", [](RobotModel& m) { m.modes.clear(); }},
      {"floor above cap", [](RobotModel& m) { m.controller.tension_floor = 2000.0; }},
      {"negative kp", [](RobotModel& m) { m.controller.kp[0] = -1.0; }},
      {"loop rate", [](RobotModel& m) { m.controller.loop_rate = 0.0; }},
      {"link radius", [](RobotModel& m) { m.link_radius = 0.0; }},
  };
  for (const auto& mu : mutations) {
    CAPTURE(mu.field);
    auto m = default_vlimb();
    mu.apply(m);
    CHECK_THROWS_AS(validate(m), ValidationError);
  }
}

TEST_CASE("validation errors name the field") {
  auto m = default_vlimb();
  m.joints[3].limit_lo = 3.0;
  try {
    validate(m);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("joints[3]") != std::string::npos);
  }
}

TEST_CASE("parse errors") {
  CHECK_THROWS_AS(parse_model("{ not json"), ParseError);
  CHECK_THROWS_AS(parse_model("[]"), ParseError);
  CHECK_THROWS_AS(load_model("/nonexistent/vlimb.json"), ParseError);

  std::string text = write_model(default_vlimb());
  const auto pos = text.find("\"mass_kg\"");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 9, "\"mass_lb\"");
  CHECK_THROWS_AS(parse_model(text), ParseError);

  std::string bad_limit = write_model(default_vlimb());
  const auto lo = bad_limit.find("\"limit_lo_rad\": -1.3");
  REQUIRE(lo != std::string::npos);
  bad_limit.replace(lo, 20, "\"limit_lo_rad\": 1.35");
  CHECK_THROWS_AS(parse_model(bad_limit), ValidationError);
}
