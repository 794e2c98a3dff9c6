// Tension allocation: a small box-constrained least-distance problem solved
// lexicographically. Phase 1 finds the torque closest to the demand that the
// tension box can realise (bounded least squares); phase 2 finds the tensions
// closest to the bias among those that realise it. Both phases are primal
// active-set iterations that pick the lowest element index on ties.

#include "control.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>

namespace vlimb {

namespace {

constexpr int kMaxIterations = 200;

enum class Bound { Free, Lower, Upper };

struct Box {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
};

std::vector<Eigen::Index> free_indices(const std::vector<Bound>& state) {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < state.size(); ++i)
    if (state[i] == Bound::Free) idx.push_back(static_cast<Eigen::Index>(i));
  return idx;
}

Eigen::MatrixXd columns(const Eigen::MatrixXd& A, const std::vector<Eigen::Index>& idx) {
  Eigen::MatrixXd out(A.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = A.col(idx[k]);
  return out;
}

Eigen::VectorXd pinv_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  if (A.cols() == 0 || A.rows() == 0) return Eigen::VectorXd::Zero(A.cols());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double smax = svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
  svd.setThreshold(smax > 0.0 ? 1e-11 : 1.0);
  return svd.solve(b);
}

std::vector<Bound> initial_bounds(const Eigen::VectorXd& f, const Box& box) {
  std::vector<Bound> state(static_cast<std::size_t>(f.size()), Bound::Free);
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    if (f[i] <= box.lo[i]) state[static_cast<std::size_t>(i)] = Bound::Lower;
    else if (f[i] >= box.hi[i]) state[static_cast<std::size_t>(i)] = Bound::Upper;
  }
  return state;
}

// Move f along p (defined on the free set) as far as the box allows. Returns
// true when a bound blocked the full step.
bool ratio_step(Eigen::VectorXd& f, const Eigen::VectorXd& p_free, const std::vector<Eigen::Index>& idx,
                const Box& box, std::vector<Bound>& state) {
  double alpha = 1.0;
  Eigen::Index blocking = -1;
  Bound blocking_bound = Bound::Free;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Eigen::Index i = idx[k];
    const double p = p_free[static_cast<Eigen::Index>(k)];
    double a = std::numeric_limits<double>::infinity();
    Bound b = Bound::Free;
    if (p < 0.0) {
      a = (box.lo[i] - f[i]) / p;
      b = Bound::Lower;
    } else if (p > 0.0) {
      a = (box.hi[i] - f[i]) / p;
      b = Bound::Upper;
    }
    a = std::max(a, 0.0);
    if (a < alpha) {  // strict: lowest index wins ties
      alpha = a;
      blocking = i;
      blocking_bound = b;
    }
  }
  for (std::size_t k = 0; k < idx.size(); ++k) f[idx[k]] += alpha * p_free[static_cast<Eigen::Index>(k)];
  if (blocking >= 0) {
    state[static_cast<std::size_t>(blocking)] = blocking_bound;
    f[blocking] = blocking_bound == Bound::Lower ? box.lo[blocking] : box.hi[blocking];
    return true;
  }
  return false;
}

// Release the fixed variable whose multiplier has the wrong sign by the
// largest margin. `mult[i]` is the derivative of the objective in the
// direction of increasing f_i.
bool release_worst(const Eigen::VectorXd& mult, std::vector<Bound>& state, double tol) {
  Eigen::Index worst = -1;
  double worst_val = tol;
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    double violation = 0.0;
    if (state[i] == Bound::Lower) violation = -mult[ii];
    else if (state[i] == Bound::Upper) violation = mult[ii];
    if (violation > worst_val) {
      worst_val = violation;
      worst = ii;
    }
  }
  if (worst < 0) return false;
  state[static_cast<std::size_t>(worst)] = Bound::Free;
  return true;
}

// Phase 1: min 0.5 ||A f - b||^2 over the box.
int bounded_least_squares(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Box& box, Eigen::VectorXd& f,
                          double tol) {
  auto state = initial_bounds(f, box);
  int it = 0;
  for (; it < kMaxIterations; ++it) {
    const auto idx = free_indices(state);
    const Eigen::MatrixXd AF = columns(A, idx);
    const Eigen::VectorXd r = b - A * f;
    const Eigen::VectorXd p = pinv_solve(AF, r);
    if ((AF * p).norm() <= tol) {
      const Eigen::VectorXd grad = A.transpose() * (A * f - b);
      if (!release_worst(grad, state, tol)) break;
      continue;
    }
    ratio_step(f, p, idx, box, state);
  }
  return it;
}

// Phase 2: min 0.5 ||f - bias||^2 subject to E f = E f_start over the box,
// starting from the feasible f.
int least_distance(const Eigen::MatrixXd& E, const Eigen::VectorXd& bias, const Box& box, Eigen::VectorXd& f,
                   double tol) {
  auto state = initial_bounds(f, box);
  int it = 0;
  for (; it < kMaxIterations; ++it) {
    const auto idx = free_indices(state);
    const Eigen::MatrixXd EF = columns(E, idx);
    Eigen::VectorXd g(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) g[static_cast<Eigen::Index>(k)] = f[idx[k]] - bias[idx[k]];
    // Project -g onto the null space of E_F.
    Eigen::VectorXd p = -g;
    if (EF.rows() > 0 && EF.cols() > 0) p += EF.transpose() * pinv_solve(EF * EF.transpose(), EF * g);
    if (p.norm() <= tol) {
      Eigen::VectorXd lambda = Eigen::VectorXd::Zero(E.rows());
      if (EF.cols() > 0) lambda = pinv_solve(EF.transpose(), -g);
      const Eigen::VectorXd mult = (f - bias) + E.transpose() * lambda;
      if (!release_worst(mult, state, tol)) break;
      continue;
    }
    ratio_step(f, p, idx, box, state);
  }
  return it;
}

}  // namespace

std::vector<ElementKind> element_kinds(const RobotModel& model) {
  std::vector<ElementKind> kinds;
  for (const auto& e : model.elements) kinds.push_back(e.kind);
  return kinds;
}

Allocation allocate_tensions(const TendonJacobian& G, const JointVector& tau, const std::vector<ElementKind>& kinds,
                             const ControlGains& gains) {
  const Eigen::Index m = G.rows();
  Box box{Eigen::VectorXd(m), Eigen::VectorXd(m)};
  Eigen::VectorXd bias(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const bool wire = kinds[static_cast<std::size_t>(i)] == ElementKind::Wire;
    box.lo[i] = wire ? gains.tension_floor : -gains.tension_cap;
    box.hi[i] = gains.tension_cap;
    bias[i] = wire ? gains.tension_floor : 0.0;
  }
  const Eigen::MatrixXd A = -G.transpose();
  const Eigen::VectorXd b = tau;

  Allocation out;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double smax = sv.size() ? sv[0] : 0.0;
  const double rank_tol = 1e-9 * std::max(1.0, smax);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > rank_tol) ++rank;
  out.rank_deficient = rank < kDof;

  const double scale = std::max(1.0, b.norm() + smax * gains.tension_cap);
  const double tol = 1e-13 * scale;

  Eigen::VectorXd f = bias;
  out.iterations = bounded_least_squares(A, b, box, f, tol);
  const Eigen::VectorXd reachable = A * f;

  // Equality rows reduced to the numerical range of A.
  const Eigen::MatrixXd E = svd.matrixU().leftCols(rank).transpose() * A;
  out.iterations += least_distance(E, bias, box, f, 1e-12 * std::max(1.0, f.norm()));

  // Remove rounding drift from the realised torque using the free elements.
  std::vector<Eigen::Index> free;
  for (Eigen::Index i = 0; i < m; ++i)
    if (f[i] > box.lo[i] && f[i] < box.hi[i]) free.push_back(i);
  if (!free.empty()) {
    const Eigen::VectorXd delta = pinv_solve(columns(A, free), reachable - A * f);
    Eigen::VectorXd polished = f;
    bool inside = true;
    for (std::size_t k = 0; k < free.size(); ++k) {
      const Eigen::Index i = free[k];
      polished[i] += delta[static_cast<Eigen::Index>(k)];
      inside = inside && polished[i] >= box.lo[i] && polished[i] <= box.hi[i];
    }
    if (inside && (A * polished - reachable).norm() < (A * f - reachable).norm()) f = polished;
  }

  out.tensions = f;
  out.torque_residual = (A * f - b).norm();
  return out;
}

}  // namespace vlimb
