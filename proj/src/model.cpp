#include "model.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace vlimb {

using ordered_json = nlohmann::ordered_json;

int RobotModel::link_index(const std::string& link) const {
  for (std::size_t i = 0; i < links.size(); ++i)
    if (links[i].name == link) return static_cast<int>(i);
  return -1;
}

int RobotModel::joint_index(const std::string& joint) const {
  for (std::size_t i = 0; i < joints.size(); ++i)
    if (joints[i].name == joint) return static_cast<int>(i);
  return -1;
}

int RobotModel::element_index(const std::string& element) const {
  for (std::size_t i = 0; i < elements.size(); ++i)
    if (elements[i].name == element) return static_cast<int>(i);
  return -1;
}

double RobotModel::total_mass() const {
  double m = 0.0;
  for (const auto& l : links) m += l.mass;
  return m;
}

double RobotModel::total_length() const {
  double len = 0.0;
  for (const auto& l : links) len += l.length;
  return len;
}

std::set<std::string> RobotModel::switch_groups() const {
  std::set<std::string> groups;
  for (const auto& e : elements)
    for (const auto& p : e.routing)
      if (p.kind == PointKind::WaypointC && p.switch_group) groups.insert(*p.switch_group);
  return groups;
}

std::string to_string(ElementKind kind) {
  return kind == ElementKind::Wire ? "wire" : "belt";
}

std::string to_string(PointKind kind) {
  switch (kind) {
    case PointKind::Pulley: return "pulley";
    case PointKind::WaypointA: return "waypoint_A";
    case PointKind::WaypointB: return "waypoint_B";
    case PointKind::WaypointC: return "waypoint_C";
    case PointKind::End: return "end";
  }
  return "unknown";
}

namespace {

[[noreturn]] void fail(const std::string& what) { throw ValidationError(what); }

bool finite(const Vec3& v) { return v.allFinite(); }

void check_link_ref(const RobotModel& m, const std::string& link, const std::string& where) {
  if (m.link_index(link) < 0) fail(where + ": unknown link '" + link + "'");
}

}  // namespace

void validate(const RobotModel& m) {
  if (m.links.size() != kDof + 1)
    fail("links: expected " + std::to_string(kDof + 1) + " links, got " + std::to_string(m.links.size()));
  if (m.joints.size() != kDof)
    fail("joints: joint count must be " + std::to_string(kDof) + ", got " + std::to_string(m.joints.size()));

  std::set<std::string> names;
  for (std::size_t i = 0; i < m.links.size(); ++i) {
    const auto& l = m.links[i];
    const std::string where = "links[" + std::to_string(i) + "]";
    if (l.name.empty()) fail(where + ".name: must not be empty");
    if (!names.insert(l.name).second) fail(where + ".name: duplicate link name '" + l.name + "'");
    if (!(l.length >= 0.0) || !std::isfinite(l.length)) fail(where + ".length: length must be >= 0");
    if (!(l.mass > 0.0) || !std::isfinite(l.mass)) fail(where + ".mass: mass must be > 0");
    if (!finite(l.com_offset)) fail(where + ".com_offset: must be finite");
    if (!finite(l.inertia_diag) || !(l.inertia_diag.minCoeff() > 0.0))
      fail(where + ".inertia_diag: components must be > 0");
  }

  names.clear();
  for (std::size_t j = 0; j < m.joints.size(); ++j) {
    const auto& jt = m.joints[j];
    const std::string where = "joints[" + std::to_string(j) + "]";
    if (jt.name.empty()) fail(where + ".name: must not be empty");
    if (!names.insert(jt.name).second) fail(where + ".name: duplicate joint name '" + jt.name + "'");
    if (!finite(jt.axis) || std::abs(jt.axis.norm() - 1.0) > 1e-9) fail(where + ".axis: |axis| must be 1");
    if (!std::isfinite(jt.limit_lo) || !std::isfinite(jt.limit_hi) || !(jt.limit_lo < jt.limit_hi))
      fail(where + ".limits: limit_lo must be < limit_hi");
    if (!(jt.viscous_friction >= 0.0)) fail(where + ".viscous_friction: must be >= 0");
    if (!(jt.coulomb_friction >= 0.0)) fail(where + ".coulomb_friction: must be >= 0");
    if (!(jt.armature >= 0.0)) fail(where + ".armature: must be >= 0");
  }

  if (m.elements.empty()) fail("elements: at least one element required");
  names.clear();
  for (std::size_t e = 0; e < m.elements.size(); ++e) {
    const auto& el = m.elements[e];
    const std::string where = "elements[" + std::to_string(e) + "]";
    if (el.name.empty()) fail(where + ".name: must not be empty");
    if (!names.insert(el.name).second) fail(where + ".name: duplicate element name '" + el.name + "'");
    if (!(el.pulley_radius > 0.0)) fail(where + ".pulley_radius: must be > 0");
    if (!(el.motor.torque_constant > 0.0)) fail(where + ".motor.torque_constant: must be > 0");
    if (!(el.motor.max_current > 0.0)) fail(where + ".motor.max_current: must be > 0");
    if (!(el.motor.gear_ratio > 0.0)) fail(where + ".motor.gear_ratio: must be > 0");
    if (el.routing.size() < 2) fail(where + ".routing: needs at least 2 points");
    if (el.routing.front().kind != PointKind::Pulley) fail(where + ".routing: first point must be a pulley");
    if (el.routing.back().kind != PointKind::End) fail(where + ".routing: last point must be the end point");
    for (std::size_t p = 0; p < el.routing.size(); ++p) {
      const auto& pt = el.routing[p];
      const std::string pw = where + ".routing[" + std::to_string(p) + "]";
      check_link_ref(m, pt.link, pw);
      if (!finite(pt.offset)) fail(pw + ".offset: must be finite");
      if (pt.kind == PointKind::End && p + 1 != el.routing.size()) fail(pw + ": end point must be last");
      if (pt.kind == PointKind::WaypointC && (!pt.switch_group || pt.switch_group->empty()))
        fail(pw + ": waypoint_C needs a switch_group");
      if (pt.kind != PointKind::WaypointC && pt.switch_group)
        fail(pw + ": switch_group only allowed on waypoint_C");
      if (pt.wrap) {
        if (m.joint_index(pt.wrap->joint) < 0) fail(pw + ".wrap: unknown joint '" + pt.wrap->joint + "'");
        if (!std::isfinite(pt.wrap->radius) || pt.wrap->radius == 0.0) fail(pw + ".wrap.radius: must be non-zero");
      }
    }
    if (el.ring) {
      check_link_ref(m, el.ring->link, where + ".ring");
      if (!(el.ring->radius > 0.0)) fail(where + ".ring.radius: must be > 0");
      if (!std::isfinite(el.ring->center_offset)) fail(where + ".ring.center_offset: must be finite");
      if (el.ring->link != el.routing.back().link) fail(where + ".ring: ring link must carry the end point");
    }
  }

  if (m.modes.empty()) fail("modes: at least one mode required");
  const auto groups = m.switch_groups();
  for (const auto& [mode, engaged] : m.modes) {
    for (const auto& g : engaged)
      if (!groups.count(g)) fail("modes." + mode + ": unknown switch_group '" + g + "'");
  }
  if (!m.modes.count(m.default_mode)) fail("default_mode: '" + m.default_mode + "' is not a mode");

  const auto& c = m.controller;
  if (!c.kp.allFinite() || c.kp.minCoeff() < 0.0) fail("controller.kp: must be >= 0");
  if (!c.kd.allFinite() || c.kd.minCoeff() < 0.0) fail("controller.kd: must be >= 0");
  if (!(c.loop_rate > 0.0)) fail("controller.loop_rate: must be > 0");
  if (!(c.max_joint_speed > 0.0)) fail("controller.max_joint_speed: must be > 0");
  if (!(c.tension_floor >= 0.0 && c.tension_floor < c.tension_cap) || !std::isfinite(c.tension_cap))
    fail("controller.tension: need 0 <= tension_floor < tension_cap");
  if (!(m.link_radius > 0.0)) fail("link_radius: must be > 0");
}

// ---------------------------------------------------------------------------
// JSON (de)serialisation

namespace {

const ordered_json& require(const ordered_json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
  return j.at(key);
}

double num(const ordered_json& j, const char* key, const std::string& where) {
  const auto& v = require(j, key, where);
  if (!v.is_number()) throw ParseError(where + "." + key + ": expected a number");
  return v.get<double>();
}

std::string str(const ordered_json& j, const char* key, const std::string& where) {
  const auto& v = require(j, key, where);
  if (!v.is_string()) throw ParseError(where + "." + key + ": expected a string");
  return v.get<std::string>();
}

Vec3 vec3(const ordered_json& j, const char* key, const std::string& where) {
  const auto& v = require(j, key, where);
  if (!v.is_array() || v.size() != 3) throw ParseError(where + "." + key + ": expected 3 numbers");
  Vec3 out;
  for (int i = 0; i < 3; ++i) {
    if (!v[i].is_number()) throw ParseError(where + "." + key + ": expected 3 numbers");
    out[i] = v[i].get<double>();
  }
  return out;
}

JointVector jvec(const ordered_json& j, const char* key, const std::string& where) {
  const auto& v = require(j, key, where);
  if (!v.is_array() || v.size() != kDof)
    throw ParseError(where + "." + key + ": expected " + std::to_string(kDof) + " numbers");
  JointVector out;
  for (int i = 0; i < kDof; ++i) {
    if (!v[i].is_number()) throw ParseError(where + "." + key + ": expected numbers");
    out[i] = v[i].get<double>();
  }
  return out;
}

ordered_json to_json(const Vec3& v) { return ordered_json::array({v.x(), v.y(), v.z()}); }

ordered_json to_json(const JointVector& v) {
  ordered_json a = ordered_json::array();
  for (int i = 0; i < kDof; ++i) a.push_back(v[i]);
  return a;
}

PointKind point_kind(const std::string& s, const std::string& where) {
  if (s == "pulley") return PointKind::Pulley;
  if (s == "waypoint_A") return PointKind::WaypointA;
  if (s == "waypoint_B") return PointKind::WaypointB;
  if (s == "waypoint_C") return PointKind::WaypointC;
  if (s == "end") return PointKind::End;
  throw ParseError(where + ".kind: unknown routing point kind '" + s + "'");
}

}  // namespace

RobotModel parse_model(const std::string& text) {
  ordered_json root;
  try {
    root = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed model file: ") + e.what());
  }
  if (!root.is_object()) throw ParseError("model file: top level must be an object");
  const double version = num(root, "format_version", "model");
  if (version != kFormatVersion)
    throw ParseError("model.format_version: unsupported version " + std::to_string(static_cast<int>(version)));

  RobotModel m;
  m.name = str(root, "name", "model");
  m.link_radius = num(root, "link_radius_m", "model");
  m.default_mode = str(root, "default_mode", "model");

  const auto& links = require(root, "links", "model");
  if (!links.is_array()) throw ParseError("model.links: expected an array");
  for (std::size_t i = 0; i < links.size(); ++i) {
    const std::string w = "links[" + std::to_string(i) + "]";
    LinkSpec l;
    l.name = str(links[i], "name", w);
    l.length = num(links[i], "length_m", w);
    l.mass = num(links[i], "mass_kg", w);
    l.com_offset = vec3(links[i], "com_offset_m", w);
    l.inertia_diag = vec3(links[i], "inertia_diag_kgm2", w);
    m.links.push_back(std::move(l));
  }

  const auto& joints = require(root, "joints", "model");
  if (!joints.is_array()) throw ParseError("model.joints: expected an array");
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const std::string w = "joints[" + std::to_string(i) + "]";
    JointSpec jt;
    jt.name = str(joints[i], "name", w);
    if (str(joints[i], "kind", w) != "revolute") throw ParseError(w + ".kind: only 'revolute' is supported");
    jt.axis = vec3(joints[i], "axis", w);
    jt.limit_lo = num(joints[i], "limit_lo_rad", w);
    jt.limit_hi = num(joints[i], "limit_hi_rad", w);
    jt.viscous_friction = num(joints[i], "viscous_friction_Nms_per_rad", w);
    jt.coulomb_friction = num(joints[i], "coulomb_friction_Nm", w);
    jt.armature = num(joints[i], "armature_kgm2", w);
    m.joints.push_back(std::move(jt));
  }

  const auto& elements = require(root, "elements", "model");
  if (!elements.is_array()) throw ParseError("model.elements: expected an array");
  for (std::size_t i = 0; i < elements.size(); ++i) {
    const auto& je = elements[i];
    const std::string w = "elements[" + std::to_string(i) + "]";
    ElementSpec e;
    e.name = str(je, "name", w);
    const auto kind = str(je, "kind", w);
    if (kind == "wire") e.kind = ElementKind::Wire;
    else if (kind == "belt") e.kind = ElementKind::Belt;
    else throw ParseError(w + ".kind: expected 'wire' or 'belt'");
    e.pulley_radius = num(je, "pulley_radius_m", w);
    const auto& jm = require(je, "motor", w);
    e.motor.name = str(jm, "name", w + ".motor");
    e.motor.torque_constant = num(jm, "torque_constant_Nm_per_A", w + ".motor");
    e.motor.max_current = num(jm, "max_current_A", w + ".motor");
    e.motor.gear_ratio = num(jm, "gear_ratio", w + ".motor");
    const auto& routing = require(je, "routing", w);
    if (!routing.is_array()) throw ParseError(w + ".routing: expected an array");
    for (std::size_t p = 0; p < routing.size(); ++p) {
      const std::string pw = w + ".routing[" + std::to_string(p) + "]";
      RoutingPointSpec pt;
      pt.link = str(routing[p], "link", pw);
      pt.offset = vec3(routing[p], "offset_m", pw);
      pt.kind = point_kind(str(routing[p], "kind", pw), pw);
      if (routing[p].contains("switch_group")) pt.switch_group = str(routing[p], "switch_group", pw);
      if (routing[p].contains("wrap")) {
        const auto& jw = routing[p].at("wrap");
        pt.wrap = JointWrap{str(jw, "joint", pw + ".wrap"), num(jw, "radius_m", pw + ".wrap")};
      }
      e.routing.push_back(std::move(pt));
    }
    if (je.contains("ring")) {
      const auto& jr = je.at("ring");
      e.ring = RingSpec{str(jr, "link", w + ".ring"), num(jr, "center_offset_m", w + ".ring"),
                        num(jr, "radius_m", w + ".ring")};
    }
    m.elements.push_back(std::move(e));
  }

  const auto& modes = require(root, "modes", "model");
  if (!modes.is_object()) throw ParseError("model.modes: expected an object");
  for (const auto& [name, groups] : modes.items()) {
    if (!groups.is_array()) throw ParseError("modes." + name + ": expected an array of switch groups");
    auto& set = m.modes[name];
    for (const auto& g : groups) {
      if (!g.is_string()) throw ParseError("modes." + name + ": expected strings");
      set.insert(g.get<std::string>());
    }
  }

  const auto& jc = require(root, "controller", "model");
  m.controller.kp = jvec(jc, "kp_Nm_per_rad", "controller");
  m.controller.kd = jvec(jc, "kd_Nms_per_rad", "controller");
  m.controller.loop_rate = num(jc, "loop_rate_Hz", "controller");
  m.controller.max_joint_speed = num(jc, "max_joint_speed_rad_per_s", "controller");
  m.controller.tension_floor = num(jc, "tension_floor_N", "controller");
  m.controller.tension_cap = num(jc, "tension_cap_N", "controller");

  validate(m);
  return m;
}

namespace {

// Put purely numeric arrays on one line: [0.0, 0.0, 1.0].
std::string inline_number_arrays(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '[') {
      const std::size_t close = text.find(']', i);
      const std::string body = text.substr(i + 1, close == std::string::npos ? 0 : close - i - 1);
      const bool numeric = close != std::string::npos && !body.empty() &&
                           body.find_first_not_of("0123456789+-.eE, \n") == std::string::npos;
      if (numeric) {
        out += '[';
        bool space = false;
        for (char ch : body) {
          if (ch == ' ' || ch == '\n') {
            space = true;
            continue;
          }
          if (space && out.back() == ',') out += ' ';
          space = false;
          out += ch;
        }
        out += ']';
        i = close + 1;
        continue;
      }
    }
    out += text[i++];
  }
  return out;
}

}  // namespace

RobotModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open model file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

std::string write_model(const RobotModel& m) {
  ordered_json root;
  root["format_version"] = kFormatVersion;
  root["name"] = m.name;
  root["link_radius_m"] = m.link_radius;
  root["default_mode"] = m.default_mode;

  root["links"] = ordered_json::array();
  for (const auto& l : m.links) {
    ordered_json jl;
    jl["name"] = l.name;
    jl["length_m"] = l.length;
    jl["mass_kg"] = l.mass;
    jl["com_offset_m"] = to_json(l.com_offset);
    jl["inertia_diag_kgm2"] = to_json(l.inertia_diag);
    root["links"].push_back(std::move(jl));
  }

  root["joints"] = ordered_json::array();
  for (const auto& jt : m.joints) {
    ordered_json j;
    j["name"] = jt.name;
    j["kind"] = "revolute";
    j["axis"] = to_json(jt.axis);
    j["limit_lo_rad"] = jt.limit_lo;
    j["limit_hi_rad"] = jt.limit_hi;
    j["viscous_friction_Nms_per_rad"] = jt.viscous_friction;
    j["coulomb_friction_Nm"] = jt.coulomb_friction;
    j["armature_kgm2"] = jt.armature;
    root["joints"].push_back(std::move(j));
  }

  root["elements"] = ordered_json::array();
  for (const auto& e : m.elements) {
    ordered_json je;
    je["name"] = e.name;
    je["kind"] = to_string(e.kind);
    je["pulley_radius_m"] = e.pulley_radius;
    je["motor"] = {{"name", e.motor.name},
                   {"torque_constant_Nm_per_A", e.motor.torque_constant},
                   {"max_current_A", e.motor.max_current},
                   {"gear_ratio", e.motor.gear_ratio}};
    je["routing"] = ordered_json::array();
    for (const auto& p : e.routing) {
      ordered_json jp;
      jp["link"] = p.link;
      jp["offset_m"] = to_json(p.offset);
      jp["kind"] = to_string(p.kind);
      if (p.switch_group) jp["switch_group"] = *p.switch_group;
      if (p.wrap) jp["wrap"] = {{"joint", p.wrap->joint}, {"radius_m", p.wrap->radius}};
      je["routing"].push_back(std::move(jp));
    }
    if (e.ring)
      je["ring"] = {{"link", e.ring->link}, {"center_offset_m", e.ring->center_offset}, {"radius_m", e.ring->radius}};
    root["elements"].push_back(std::move(je));
  }

  root["modes"] = ordered_json::object();
  for (const auto& [name, groups] : m.modes) {
    ordered_json arr = ordered_json::array();
    for (const auto& g : groups) arr.push_back(g);
    root["modes"][name] = std::move(arr);
  }

  const auto& c = m.controller;
  root["controller"] = {{"kp_Nm_per_rad", to_json(c.kp)},
                        {"kd_Nms_per_rad", to_json(c.kd)},
                        {"loop_rate_Hz", c.loop_rate},
                        {"max_joint_speed_rad_per_s", c.max_joint_speed},
                        {"tension_floor_N", c.tension_floor},
                        {"tension_cap_N", c.tension_cap}};
  return inline_number_arrays(root.dump(2)) + "\n";
}

void save_model(const RobotModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write model file '" + path + "'");
  out << write_model(m);
}

}  // namespace vlimb
