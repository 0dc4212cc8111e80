#pragma once
// Independent reference computations used only by the test suites.

#include <cmath>
#include <functional>
#include <random>

#include "visifilter/common.hpp"
#include "visifilter/qp.hpp"

namespace visifilter::oracle {

/// Accelerated projected-gradient ascent on the QP dual
///   max_{y >= 0}  -0.5 (f + G'y)' H^-1 (f + G'y) - g'y,
/// returning the primal point u(y) = -H^-1 (f + G'y). The projection onto
/// y >= 0 is a clamp, so no inner solver is needed.
inline Vec projected_gradient_qp(const QpProblem& qp, long max_iter = 1'000'000, double stop_tol = 1e-12) {
  const Eigen::LLT<Mat> llt(qp.H);
  const auto p = qp.rows();
  if (p == 0) return -llt.solve(qp.f);
  const Mat hinv_gt = llt.solve(qp.G.transpose());
  const Vec hinv_f = llt.solve(qp.f);
  const Mat M = qp.G * hinv_gt;  // dual Hessian
  const double lip = std::max(M.operatorNorm(), 1e-12);
  const double step = 1.0 / lip;
  Vec y = Vec::Zero(p), y_prev = y, x = y;
  double t = 1.0;
  auto primal = [&](const Vec& yy) -> Vec { return -hinv_f - hinv_gt * yy; };
  for (long it = 0; it < max_iter; ++it) {
    // grad of dual = G u(x) - g
    const Vec grad = qp.G * primal(x) - qp.g;
    y_prev = y;
    y = (x + step * grad).cwiseMax(0.0);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    x = y + ((t - 1.0) / t_next) * (y - y_prev);
    t = t_next;
    if ((it & 255) == 0) {
      const Vec u = primal(y);
      const double viol = (qp.G * u - qp.g).cwiseMax(0.0).maxCoeff();
      const double dual_obj = qp.objective(u) + y.dot(qp.G * u - qp.g);
      // Gap between the primal objective at u(y) and the dual bound.
      const double gap = std::abs(qp.objective(u) - dual_obj);
      if (viol < stop_tol && gap < stop_tol) break;
    }
  }
  return primal(y);
}

/// Central finite-difference Jacobian of a vector function.
inline Mat finite_difference(const std::function<Vec(const Vec&)>& fn, const Vec& x, double h = 1e-6) {
  const Vec f0 = fn(x);
  Mat J(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    J.col(i) = (fn(xp) - fn(xm)) / (2.0 * h);
  }
  return J;
}

/// Random strictly convex QP with H = A'A + I and a strictly feasible point.
template <class Engine>
QpProblem random_qp(Engine& eng, int k, int p) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto randn = [&](int r, int c) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = n01(eng);
    return m;
  };
  QpProblem qp;
  const Mat A = randn(k, k);
  qp.H = A.transpose() * A + Mat::Identity(k, k);
  qp.f = randn(k, 1).col(0) * 3.0;
  qp.G = randn(p, k);
  const Vec interior = randn(k, 1).col(0) * 0.5;
  Vec slack(p);
  for (int i = 0; i < p; ++i) slack(i) = 0.1 + u01(eng);
  qp.g = qp.G * interior + slack;
  return qp;
}

}  // namespace visifilter::oracle
