#include "tendon.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vlimb {

namespace {

constexpr double kPi = std::numbers::pi;

double wrap_angle(double a) {
  double r = std::fmod(a + kPi, 2.0 * kPi);
  if (r < 0.0) r += 2.0 * kPi;
  return r - kPi;
}

}  // namespace

RoutingConfig routing_with_groups(const RobotModel& model, const std::string& label,
                                  const std::set<std::string>& engaged) {
  RoutingConfig cfg;
  cfg.mode_name = label;
  cfg.engaged_groups = engaged;
  cfg.routes.reserve(model.elements.size());
  for (const auto& e : model.elements) {
    std::vector<RoutingPointSpec> route;
    for (const auto& p : e.routing) {
      if (p.kind == PointKind::WaypointC && !engaged.count(p.switch_group.value_or(""))) continue;
      route.push_back(p);
    }
    cfg.routes.push_back(std::move(route));
  }
  return cfg;
}

RoutingConfig resolve_routing(const RobotModel& model, const std::string& mode_name) {
  const auto it = model.modes.find(mode_name);
  if (it == model.modes.end()) throw std::invalid_argument("unknown mode '" + mode_name + "'");
  return routing_with_groups(model, mode_name, it->second);
}

Vec3 ring_point(const RobotModel& model, const std::vector<FramePose>& frames, const RingSpec& ring, double phi) {
  const int link = model.link_index(ring.link);
  return point_position(frames, link,
                        Vec3(ring.radius * std::cos(phi), ring.radius * std::sin(phi), ring.center_offset));
}

RingState frozen_rings(const RobotModel& model, double phi) {
  RingState rs;
  rs.angles = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.elements.size()));
  for (std::size_t e = 0; e < model.elements.size(); ++e)
    if (model.elements[e].ring) rs.angles[static_cast<Eigen::Index>(e)] = wrap_angle(phi);
  return rs;
}

RingState solve_ring_angles(const RobotModel& model, const RoutingConfig& routing,
                            const std::vector<FramePose>& frames) {
  RingState rs = frozen_rings(model, 0.0);
  for (std::size_t e = 0; e < model.elements.size(); ++e) {
    const auto& ring = model.elements[e].ring;
    if (!ring) continue;
    const auto& route = routing.routes[e];
    const auto& prev = route[route.size() - 2];
    const Vec3 anchor = point_position(frames, model.link_index(prev.link), prev.offset);
    // Only the final segment depends on the ring angle.
    const auto cost = [&](double phi) { return (ring_point(model, frames, *ring, phi) - anchor).norm(); };

    constexpr int kGrid = 64;
    const double step = 2.0 * kPi / kGrid;
    int best = 0;
    double best_cost = cost(-kPi);
    for (int k = 1; k < kGrid; ++k) {
      const double c = cost(-kPi + k * step);
      if (c < best_cost) {
        best_cost = c;
        best = k;
      }
    }

    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = -kPi + (best - 1) * step;
    double b = -kPi + (best + 1) * step;
    double x1 = b - inv_phi * (b - a);
    double x2 = a + inv_phi * (b - a);
    double f1 = cost(x1);
    double f2 = cost(x2);
    while (b - a > 1e-12) {
      if (f1 <= f2) {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - inv_phi * (b - a);
        f1 = cost(x1);
      } else {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + inv_phi * (b - a);
        f2 = cost(x2);
      }
    }
    double phi = 0.5 * (a + b);
    if (cost(phi) > best_cost) phi = -kPi + best * step;
    rs.angles[static_cast<Eigen::Index>(e)] = wrap_angle(phi);
  }
  return rs;
}

RingState solve_ring_angles(const RobotModel& model, const RoutingConfig& routing, const JointVector& q) {
  return solve_ring_angles(model, routing, forward_kinematics(model, q));
}

std::vector<Vec3> routing_positions(const RobotModel& model, const RoutingConfig& routing,
                                    const std::vector<FramePose>& frames, const RingState& rings, int element) {
  const auto& spec = model.elements[static_cast<std::size_t>(element)];
  const auto& route = routing.routes[static_cast<std::size_t>(element)];
  std::vector<Vec3> pts;
  pts.reserve(route.size());
  for (std::size_t k = 0; k < route.size(); ++k) {
    if (k + 1 == route.size() && spec.ring) {
      pts.push_back(ring_point(model, frames, *spec.ring, rings.angles[element]));
    } else {
      pts.push_back(point_position(frames, model.link_index(route[k].link), route[k].offset));
    }
  }
  return pts;
}

namespace {

double wrap_length(const RobotModel& model, const std::vector<RoutingPointSpec>& route, const JointVector& q) {
  double len = 0.0;
  for (const auto& p : route) {
    if (!p.wrap) continue;
    const double r = p.wrap->radius;
    len += std::abs(r) * kPi - r * q[model.joint_index(p.wrap->joint)];
  }
  return len;
}

}  // namespace

double element_length(const RobotModel& model, const RoutingConfig& routing, const std::vector<FramePose>& frames,
                      const RingState& rings, int element, const JointVector& q) {
  const auto pts = routing_positions(model, routing, frames, rings, element);
  double len = 0.0;
  for (std::size_t k = 1; k < pts.size(); ++k) len += (pts[k] - pts[k - 1]).norm();
  return len + wrap_length(model, routing.routes[static_cast<std::size_t>(element)], q);
}

Eigen::VectorXd element_lengths(const RobotModel& model, const RoutingConfig& routing, const JointVector& q,
                                const RingState& rings) {
  const auto frames = forward_kinematics(model, q);
  Eigen::VectorXd out(static_cast<Eigen::Index>(model.elements.size()));
  for (Eigen::Index e = 0; e < out.size(); ++e)
    out[e] = element_length(model, routing, frames, rings, static_cast<int>(e), q);
  return out;
}

TendonJacobian muscle_jacobian(const RobotModel& model, const RoutingConfig& routing, const JointVector& q,
                               const RingState& rings) {
  const auto frames = forward_kinematics(model, q);
  TendonJacobian G = TendonJacobian::Zero(static_cast<Eigen::Index>(model.elements.size()), kDof);
  for (std::size_t e = 0; e < model.elements.size(); ++e) {
    const auto& spec = model.elements[e];
    const auto& route = routing.routes[e];
    std::vector<Vec3> pts;
    std::vector<PointJacobian> jacs;
    for (std::size_t k = 0; k < route.size(); ++k) {
      Vec3 offset = route[k].offset;
      int link = model.link_index(route[k].link);
      if (k + 1 == route.size() && spec.ring) {
        const double phi = rings.angles[static_cast<Eigen::Index>(e)];
        link = model.link_index(spec.ring->link);
        offset = Vec3(spec.ring->radius * std::cos(phi), spec.ring->radius * std::sin(phi), spec.ring->center_offset);
      }
      pts.push_back(point_position(frames, link, offset));
      jacs.push_back(point_jacobian(model, frames, link, offset));
    }
    const auto row = static_cast<Eigen::Index>(e);
    for (std::size_t k = 1; k < pts.size(); ++k) {
      const Vec3 d = pts[k] - pts[k - 1];
      const double n = d.norm();
      if (n < 1e-12) continue;
      G.row(row) += (d / n).transpose() * (jacs[k] - jacs[k - 1]);
    }
    for (const auto& p : route)
      if (p.wrap) G(row, model.joint_index(p.wrap->joint)) -= p.wrap->radius;
  }
  return G;
}

TendonJacobian muscle_jacobian(const RobotModel& model, const RoutingConfig& routing, const JointVector& q) {
  return muscle_jacobian(model, routing, q, solve_ring_angles(model, routing, q));
}

double moment_arm(const RobotModel& model, const RoutingConfig& routing, const JointVector& q, int element,
                  int joint) {
  return -muscle_jacobian(model, routing, q)(element, joint);
}

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 <= 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (a + t * ab - p).norm();
}

double segment_distance(const Vec3& p0, const Vec3& p1, const Vec3& q0, const Vec3& q1) {
  const Vec3 d1 = p1 - p0;
  const Vec3 d2 = q1 - q0;
  const Vec3 r = p0 - q0;
  const double a = d1.squaredNorm();
  const double e = d2.squaredNorm();
  const double f = d2.dot(r);
  constexpr double eps = 1e-18;
  double s = 0.0;
  double t = 0.0;
  if (a <= eps && e <= eps) return r.norm();
  if (a <= eps) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= eps) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double denom = a * e - b * b;
      s = denom > eps ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return ((p0 + d1 * s) - (q0 + d2 * t)).norm();
}

std::vector<WrapViolation> detect_wrap(const RobotModel& model, const RoutingConfig& routing,
                                       const std::vector<FramePose>& frames, const RingState& rings) {
  std::vector<WrapViolation> out;
  const double radius = model.link_radius;
  for (std::size_t e = 0; e < model.elements.size(); ++e) {
    if (model.elements[e].kind != ElementKind::Wire) continue;
    const auto pts = routing_positions(model, routing, frames, rings, static_cast<int>(e));
    for (std::size_t k = 1; k < pts.size(); ++k) {
      for (std::size_t l = 0; l < model.links.size(); ++l) {
        if (model.links[l].length <= 0.0) continue;
        const Vec3 a = frames[l].translation;
        const Vec3 b = frames[l].apply(Vec3(0.0, 0.0, model.links[l].length));
        if (point_segment_distance(pts[k - 1], a, b) < radius || point_segment_distance(pts[k], a, b) < radius)
          continue;
        if (segment_distance(pts[k - 1], pts[k], a, b) < radius)
          out.push_back({static_cast<int>(e), static_cast<int>(k - 1), static_cast<int>(l)});
      }
    }
  }
  return out;
}

std::vector<WrapViolation> detect_wrap(const RobotModel& model, const RoutingConfig& routing, const JointVector& q,
                                       const RingState& rings) {
  return detect_wrap(model, routing, forward_kinematics(model, q), rings);
}

}  // namespace vlimb
