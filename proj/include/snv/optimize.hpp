#pragma once

// Small dense nonlinear least squares: Levenberg-Marquardt with a central
// difference Jacobian, falling back to a Nelder-Mead simplex on the summed
// squares when the Jacobian cannot be evaluated (non-finite entries).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace snv::opt {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using ResidualFn = std::function<Vector(const Vector&)>;

struct Options {
  int max_iterations = 200;
  double relative_tolerance = 1e-12;  // on the objective change of an accepted step
  double gradient_tolerance = 1e-8;   // relative to the initial gradient norm
  double jacobian_step = 1e-6;        // relative central-difference step
  double residual_floor = 0.0;        // rms below which the fit counts as exact (data units)
  double orthogonality_tolerance = 1e-7;  // cosine between residual and Jacobian columns
  double step_tolerance = 1e-8;           // Gauss-Newton step relative to max(|x|, 1) at a stall
};

struct Result {
  Vector x;
  double cost = 0.0;  // 0.5 * sum r^2
  double initial_cost = 0.0;
  double gradient_norm = 0.0;
  double initial_gradient_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  bool used_fallback = false;
  std::size_t residual_count = 0;
  std::vector<double> cost_history;  // objective after each accepted step
  Matrix jacobian;                   // at x, empty after a simplex fallback
  std::string message;

  [[nodiscard]] double rms() const {
    return residual_count ? std::sqrt(2.0 * cost / static_cast<double>(residual_count)) : 0.0;
  }

  // Asymptotic covariance s^2 (J^T J)^-1 with s^2 = SSR / (m - n).
  [[nodiscard]] Matrix covariance() const {
    const auto n = x.size();
    if (jacobian.size() == 0 || static_cast<Eigen::Index>(residual_count) <= n)
      return Matrix::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
    const double s2 = 2.0 * cost / static_cast<double>(static_cast<Eigen::Index>(residual_count) - n);
    const Matrix jtj = jacobian.transpose() * jacobian;
    return s2 * jtj.completeOrthogonalDecomposition().pseudoInverse();
  }
};

namespace detail {

[[nodiscard]] inline double half_sq(const Vector& r) { return 0.5 * r.squaredNorm(); }

[[nodiscard]] inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// Largest cosine between the residual vector and a Jacobian column; zero at
// a stationary point whatever the residual size.
[[nodiscard]] inline double orthogonality(const Matrix& jac, const Vector& r) {
  const double rn = r.norm();
  if (rn == 0.0) return 0.0;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < jac.cols(); ++j) {
    const double cn = jac.col(j).norm();
    if (cn > 0.0) worst = std::max(worst, std::abs(jac.col(j).dot(r)) / (cn * rn));
  }
  return worst;
}

inline Matrix central_jacobian(const ResidualFn& f, const Vector& x, std::size_t m, double rel_step,
                               int& evaluations) {
  Matrix jac(static_cast<Eigen::Index>(m), x.size());
  Vector xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = rel_step * std::max(std::abs(x(j)), 1.0);
    xp(j) = x(j) + h;
    const Vector rp = f(xp);
    xp(j) = x(j) - h;
    const Vector rm = f(xp);
    xp(j) = x(j);
    evaluations += 2;
    if (rp.size() != static_cast<Eigen::Index>(m) || rm.size() != static_cast<Eigen::Index>(m)) {
      jac.col(j).setConstant(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    jac.col(j) = (rp - rm) / (2.0 * h);
  }
  return jac;
}

}  // namespace detail

// Minimizes 0.5 * sum f(x)^2 with a Nelder-Mead simplex.
inline Result nelder_mead(const ResidualFn& f, Vector x0, const Options& opt = {}) {
  const auto n = x0.size();
  Result res;
  auto cost_of = [&](const Vector& x) {
    ++res.evaluations;
    const Vector r = f(x);
    const double c = detail::half_sq(r);
    return std::isfinite(c) ? c : std::numeric_limits<double>::infinity();
  };
  std::vector<Vector> simplex(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> values(static_cast<std::size_t>(n + 1));
  for (Eigen::Index j = 0; j < n; ++j) {
    auto& v = simplex[static_cast<std::size_t>(j + 1)];
    v(j) += 0.05 * std::max(std::abs(v(j)), 0.1);
  }
  for (std::size_t i = 0; i < simplex.size(); ++i) values[i] = cost_of(simplex[i]);
  res.initial_cost = values[0];

  const int max_iter = opt.max_iterations * 20 * static_cast<int>(std::max<Eigen::Index>(n, 1));
  std::vector<std::size_t> order(simplex.size());
  int it = 0;
  for (; it < max_iter; ++it) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
    const double best = values[order.front()];
    const double worst = values[order.back()];
    if (std::abs(worst - best) <= opt.relative_tolerance * std::max(std::abs(best), 1e-300) ||
        worst <= 1e-300) {
      res.converged = true;
      break;
    }
    Vector centroid = Vector::Zero(n);
    for (std::size_t k = 0; k + 1 < order.size(); ++k) centroid += simplex[order[k]];
    centroid /= static_cast<double>(n);
    const auto w = order.back();
    const Vector xr = centroid + (centroid - simplex[w]);
    const double fr = cost_of(xr);
    if (fr < best) {
      const Vector xe = centroid + 2.0 * (centroid - simplex[w]);
      const double fe = cost_of(xe);
      if (fe < fr) {
        simplex[w] = xe;
        values[w] = fe;
      } else {
        simplex[w] = xr;
        values[w] = fr;
      }
    } else if (fr < values[order[order.size() - 2]]) {
      simplex[w] = xr;
      values[w] = fr;
    } else {
      const Vector xc = centroid + 0.5 * (simplex[w] - centroid);
      const double fc = cost_of(xc);
      if (fc < values[w]) {
        simplex[w] = xc;
        values[w] = fc;
      } else {
        const Vector& xb = simplex[order.front()];
        for (std::size_t k = 1; k < order.size(); ++k) {
          auto& v = simplex[order[k]];
          v = xb + 0.5 * (v - xb);
          values[order[k]] = cost_of(v);
        }
      }
    }
  }
  const auto best_it = std::min_element(values.begin(), values.end());
  res.x = simplex[static_cast<std::size_t>(best_it - values.begin())];
  res.cost = *best_it;
  res.iterations = it;
  res.used_fallback = true;
  res.residual_count = static_cast<std::size_t>(f(res.x).size());
  res.message = res.converged ? "simplex converged" : "simplex iteration limit reached";
  return res;
}

inline Result levenberg_marquardt(const ResidualFn& f, Vector x0, const Options& opt = {}) {
  Result res;
  Vector x = std::move(x0);
  Vector r = f(x);
  res.evaluations = 1;
  const auto m = static_cast<std::size_t>(r.size());
  res.residual_count = m;
  double cost = detail::half_sq(r);
  res.initial_cost = cost;
  if (!std::isfinite(cost)) {
    res.x = x;
    res.cost = cost;
    res.message = "objective is not finite at the starting point";
    return res;
  }

  Matrix jac = detail::central_jacobian(f, x, m, opt.jacobian_step, res.evaluations);
  if (!detail::all_finite(jac)) {
    Result nm = nelder_mead(f, x, opt);
    nm.initial_cost = cost;
    nm.message = "jacobian not finite; " + nm.message;
    return nm;
  }
  Vector grad = jac.transpose() * r;
  res.initial_gradient_norm = grad.norm();
  const double cost_floor = std::max(1e-28, 0.5 * opt.residual_floor * opt.residual_floor) *
                            std::max<double>(1.0, static_cast<double>(m));

  double mu = 1e-3;
  bool done = cost <= cost_floor || res.initial_gradient_norm == 0.0 ||
              detail::orthogonality(jac, r) <= opt.orthogonality_tolerance;
  res.converged = done;
  int it = 0;
  while (!done && it < opt.max_iterations) {
    ++it;
    const Matrix jtj = jac.transpose() * jac;
    Vector diag = jtj.diagonal();
    const double dmax = std::max(diag.maxCoeff(), 1e-300);
    for (Eigen::Index k = 0; k < diag.size(); ++k) diag(k) = std::max(diag(k), 1e-12 * dmax);

    bool accepted = false;
    while (!accepted) {
      Matrix a = jtj;
      a.diagonal() += mu * diag;
      const Vector step = a.ldlt().solve(-grad);
      const Vector xn = x + step;
      const Vector rn = f(xn);
      ++res.evaluations;
      const double cn = rn.size() == static_cast<Eigen::Index>(m) ? detail::half_sq(rn)
                                                                   : std::numeric_limits<double>::infinity();
      if (std::isfinite(cn) && cn < cost) {
        const double rel = (cost - cn) / std::max(cost, 1e-300);
        const double mu_used = mu;
        x = xn;
        r = rn;
        cost = cn;
        res.cost_history.push_back(cost);
        mu = std::max(mu / 3.0, 1e-12);
        accepted = true;
        jac = detail::central_jacobian(f, x, m, opt.jacobian_step, res.evaluations);
        if (!detail::all_finite(jac)) {
          Result nm = nelder_mead(f, x, opt);
          nm.initial_cost = res.initial_cost;
          nm.iterations += it;
          nm.message = "jacobian not finite; " + nm.message;
          return nm;
        }
        grad = jac.transpose() * r;
        const double gn = grad.norm();
        if (cost <= cost_floor || gn <= opt.gradient_tolerance * res.initial_gradient_norm ||
            detail::orthogonality(jac, r) <= opt.orthogonality_tolerance ||
            (rel < opt.relative_tolerance && mu_used < 1e3)) {
          res.converged = true;
          done = true;
        }
      } else {
        mu *= 4.0;
        if (mu > 1e20) {
          // No descent direction left at working precision.
          const Vector gn_step = (jtj + Matrix(1e-12 * diag.asDiagonal())).ldlt().solve(-grad);
          bool tiny_step = gn_step.allFinite();
          for (Eigen::Index k = 0; k < x.size() && tiny_step; ++k)
            tiny_step = std::abs(gn_step(k)) <= opt.step_tolerance * std::max(std::abs(x(k)), 1.0);
          res.converged = grad.norm() <= 1e-6 * res.initial_gradient_norm || cost <= cost_floor ||
                          detail::orthogonality(jac, r) <= 1e3 * opt.orthogonality_tolerance || tiny_step;
          done = true;
          break;
        }
      }
    }
  }
  res.x = x;
  res.cost = cost;
  res.iterations = it;
  res.jacobian = jac;
  res.gradient_norm = grad.norm();
  if (res.converged)
    res.message = "converged";
  else
    res.message = it >= opt.max_iterations ? "iteration limit reached" : "no further descent possible";
  return res;
}

}  // namespace snv::opt
