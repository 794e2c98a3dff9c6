#include "kinematics.hpp"

#include <Eigen/Geometry>

#include <stdexcept>

namespace vlimb {

std::vector<FramePose> forward_kinematics(const RobotModel& model, const JointVector& q) {
  std::vector<FramePose> frames(model.links.size());
  for (std::size_t j = 0; j < model.joints.size(); ++j) {
    const auto& parent = frames[j];
    const auto& jt = model.joints[j];
    FramePose child;
    child.translation = parent.apply(Vec3(0.0, 0.0, model.links[j].length));
    child.rotation = parent.rotation * Eigen::AngleAxisd(q[static_cast<Eigen::Index>(j)], jt.axis).toRotationMatrix();
    frames[j + 1] = child;
  }
  return frames;
}

Vec3 point_position(const std::vector<FramePose>& frames, int link, const Vec3& offset) {
  return frames[static_cast<std::size_t>(link)].apply(offset);
}

PointJacobian point_jacobian(const RobotModel& model, const std::vector<FramePose>& frames, int link,
                             const Vec3& offset) {
  PointJacobian jac = PointJacobian::Zero();
  const Vec3 p = point_position(frames, link, offset);
  // Joint j moves link j+1 and everything beyond it.
  for (int j = 0; j < link && j < kDof; ++j) {
    const auto& child = frames[static_cast<std::size_t>(j + 1)];
    const Vec3 axis = child.rotation * model.joints[static_cast<std::size_t>(j)].axis;
    jac.col(j) = axis.cross(p - child.translation);
  }
  return jac;
}

PointJacobian point_jacobian(const RobotModel& model, const JointVector& q, const std::string& link,
                             const Vec3& offset) {
  const int idx = model.link_index(link);
  if (idx < 0) throw std::invalid_argument("unknown link '" + link + "'");
  return point_jacobian(model, forward_kinematics(model, q), idx, offset);
}

Vec3 end_effector_position(const RobotModel& model, const std::vector<FramePose>& frames) {
  return frames.back().apply(Vec3(0.0, 0.0, model.links.back().length));
}

PointJacobian end_effector_jacobian(const RobotModel& model, const std::vector<FramePose>& frames) {
  return point_jacobian(model, frames, static_cast<int>(model.links.size()) - 1,
                        Vec3(0.0, 0.0, model.links.back().length));
}

JointVector gravity_torque(const RobotModel& model, const JointVector& q, double gravity) {
  const auto frames = forward_kinematics(model, q);
  const Vec3 up_weight(0.0, 0.0, gravity);
  JointVector tau = JointVector::Zero();
  for (std::size_t i = 1; i < model.links.size(); ++i) {
    const auto& l = model.links[i];
    tau += point_jacobian(model, frames, static_cast<int>(i), l.com_offset).transpose() * (l.mass * up_weight);
  }
  return tau;
}

JointVector inverse_dynamics(const RobotModel& model, const JointVector& q, const JointVector& qd,
                             const JointVector& qdd, double gravity) {
  const auto frames = forward_kinematics(model, q);
  const std::size_t n = model.links.size();

  // Forward pass, world frame. The base accelerates upward to model gravity.
  std::vector<Vec3> omega(n, Vec3::Zero()), alpha(n, Vec3::Zero()), accel(n, Vec3::Zero());
  std::vector<Vec3> force(n, Vec3::Zero()), moment(n, Vec3::Zero()), com(n, Vec3::Zero());
  std::vector<Vec3> axis(n, Vec3::Zero());
  accel[0] = Vec3(0.0, 0.0, gravity);
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t j = i - 1;
    const auto ji = static_cast<Eigen::Index>(j);
    axis[i] = frames[i].rotation * model.joints[j].axis;
    const Vec3 r = frames[i].translation - frames[j].translation;
    accel[i] = accel[j] + alpha[j].cross(r) + omega[j].cross(omega[j].cross(r));
    omega[i] = omega[j] + axis[i] * qd[ji];
    alpha[i] = alpha[j] + axis[i] * qdd[ji] + omega[j].cross(axis[i] * qd[ji]);

    const auto& l = model.links[i];
    const Vec3 rc = frames[i].rotation * l.com_offset;
    com[i] = rc;
    const Vec3 ac = accel[i] + alpha[i].cross(rc) + omega[i].cross(omega[i].cross(rc));
    const Mat3 inertia = frames[i].rotation * l.inertia_diag.asDiagonal() * frames[i].rotation.transpose();
    force[i] = l.mass * ac;
    moment[i] = inertia * alpha[i] + omega[i].cross(inertia * omega[i]);
  }

  // Backward pass: net force f and moment n about each link origin.
  JointVector tau = JointVector::Zero();
  Vec3 f_child = Vec3::Zero();
  Vec3 n_child = Vec3::Zero();
  for (std::size_t i = n - 1; i >= 1; --i) {
    const Vec3 to_child =
        (i + 1 < n) ? Vec3(frames[i + 1].translation - frames[i].translation) : Vec3::Zero();
    const Vec3 f = force[i] + f_child;
    const Vec3 nm = moment[i] + n_child + com[i].cross(force[i]) + to_child.cross(f_child);
    const auto ji = static_cast<Eigen::Index>(i - 1);
    tau[ji] = axis[i].dot(nm) + model.joints[i - 1].armature * qdd[ji];
    f_child = f;
    n_child = nm;
  }
  return tau;
}

JointMatrix mass_matrix(const RobotModel& model, const JointVector& q) {
  const auto frames = forward_kinematics(model, q);
  const std::size_t n = model.links.size();

  // Composite body of links i..n-1: mass, world COM, inertia about that COM.
  std::vector<double> mass(n + 1, 0.0);
  std::vector<Vec3> com(n + 1, Vec3::Zero());
  std::vector<Mat3> inertia(n + 1, Mat3::Zero());
  for (std::size_t i = n - 1; i >= 1; --i) {
    const auto& l = model.links[i];
    const Vec3 c_i = frames[i].apply(l.com_offset);
    const Mat3 I_i = frames[i].rotation * l.inertia_diag.asDiagonal() * frames[i].rotation.transpose();
    const double m_out = mass[i + 1];
    const double m = m_out + l.mass;
    const Vec3 c = m > 0.0 ? Vec3((m_out * com[i + 1] + l.mass * c_i) / m) : c_i;
    const auto shift = [](double mm, const Vec3& d) {
      return Mat3(mm * (d.squaredNorm() * Mat3::Identity() - d * d.transpose()));
    };
    inertia[i] = I_i + shift(l.mass, c_i - c) + inertia[i + 1] + shift(m_out, com[i + 1] - c);
    mass[i] = m;
    com[i] = c;
  }

  JointMatrix M = JointMatrix::Zero();
  for (int j = 0; j < kDof; ++j) {
    const std::size_t body = static_cast<std::size_t>(j) + 1;
    const Vec3 o_j = frames[body].translation;
    const Vec3 z_j = frames[body].rotation * model.joints[static_cast<std::size_t>(j)].axis;
    // Momentum rate of the composite body for unit acceleration of joint j.
    const Vec3 lin = mass[body] * z_j.cross(com[body] - o_j);
    const Vec3 ang_c = inertia[body] * z_j;
    for (int k = 0; k <= j; ++k) {
      const std::size_t kb = static_cast<std::size_t>(k) + 1;
      const Vec3 o_k = frames[kb].translation;
      const Vec3 z_k = frames[kb].rotation * model.joints[static_cast<std::size_t>(k)].axis;
      const Vec3 about_k = ang_c + (com[body] - o_k).cross(lin);
      M(k, j) = z_k.dot(about_k);
      M(j, k) = M(k, j);
    }
    M(j, j) += model.joints[static_cast<std::size_t>(j)].armature;
  }
  return M;
}

JointVector bias_forces(const RobotModel& model, const JointVector& q, const JointVector& qd, double gravity) {
  return inverse_dynamics(model, q, qd, JointVector::Zero(), gravity);
}

double mechanical_energy(const RobotModel& model, const JointVector& q, const JointVector& qd, double gravity) {
  const auto frames = forward_kinematics(model, q);
  double potential = 0.0;
  for (std::size_t i = 1; i < model.links.size(); ++i)
    potential += model.links[i].mass * gravity * frames[i].apply(model.links[i].com_offset).z();
  return 0.5 * qd.dot(mass_matrix(model, q) * qd) + potential;
}

}  // namespace vlimb
