#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>

#include "epimsm/types.hpp"

namespace epimsm {

using Objective = std::function<double(const Eigen::VectorXd&)>;
using Gradient = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct BoxOptions {
  int max_iter = 5000;
  double obj_tol = 1e-8;     // relative objective-change stop
  double pg_tol = 1e-6;      // projected-gradient norm, relative to 1+|f|
  int memory = 8;            // L-BFGS pairs
  double fd_step = 1e-7;     // forward-difference step for the fallback gradient
};

struct BoxResult {
  Eigen::VectorXd x;
  double objective = 0.0;
  double pg_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline Eigen::VectorXd project_box(const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                                   const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

// gradient with bound-blocked components zeroed
inline Eigen::VectorXd projected_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                                          const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  Eigen::VectorXd pg = g;
  for (int i = 0; i < x.size(); ++i) {
    if (x(i) <= lo(i) && g(i) > 0.0) pg(i) = 0.0;
    if (x(i) >= hi(i) && g(i) < 0.0) pg(i) = 0.0;
  }
  return pg;
}

}  // namespace detail

// Bound-constrained quasi-Newton: limited-memory BFGS directions restricted
// to the free variables, projected backtracking line search. Falls back to
// a forward-difference gradient when none is supplied.
inline BoxResult minimize_box(const Objective& f, const Gradient& grad_opt, Eigen::VectorXd x0,
                              const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                              const BoxOptions& opts = {}) {
  const int n = static_cast<int>(x0.size());
  if (lo.size() != n || hi.size() != n) throw ParameterError("minimize_box: bound size mismatch");

  Gradient grad = grad_opt;
  if (!grad) {
    grad = [&f, &opts](const Eigen::VectorXd& x) {
      const double f0 = f(x);
      Eigen::VectorXd g(x.size());
      Eigen::VectorXd xp = x;
      for (int i = 0; i < x.size(); ++i) {
        const double h = opts.fd_step * std::max(1.0, std::abs(x(i)));
        xp(i) = x(i) + h;
        g(i) = (f(xp) - f0) / h;
        xp(i) = x(i);
      }
      return g;
    };
  }

  BoxResult res;
  res.x = detail::project_box(std::move(x0), lo, hi);
  double fx = f(res.x);
  Eigen::VectorXd g = grad(res.x);

  std::deque<Eigen::VectorXd> S, Y;
  std::deque<double> rho;
  int small_changes = 0;

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    res.iterations = iter + 1;
    const Eigen::VectorXd pg = detail::projected_gradient(res.x, g, lo, hi);
    res.pg_norm = pg.norm();
    if (res.pg_norm <= opts.pg_tol * (1.0 + std::abs(fx))) {
      res.converged = true;
      break;
    }

    // two-loop recursion on the full gradient, then block active coordinates
    Eigen::VectorXd q = g;
    std::vector<double> alpha(S.size());
    for (int i = static_cast<int>(S.size()) - 1; i >= 0; --i) {
      alpha[i] = rho[i] * S[i].dot(q);
      q -= alpha[i] * Y[i];
    }
    if (!S.empty()) {
      const double gamma = S.back().dot(Y.back()) / Y.back().squaredNorm();
      q *= gamma;
    }
    for (std::size_t i = 0; i < S.size(); ++i) {
      const double beta = rho[i] * Y[i].dot(q);
      q += (alpha[i] - beta) * S[i];
    }
    Eigen::VectorXd d = -q;
    for (int i = 0; i < n; ++i) {
      if ((res.x(i) <= lo(i) && g(i) > 0.0) || (res.x(i) >= hi(i) && g(i) < 0.0)) d(i) = 0.0;
    }
    if (d.dot(g) >= 0.0) d = -pg;  // not a descent direction; steepest descent restart

    double step = 1.0;
    const double slope = d.dot(g);
    Eigen::VectorXd x_new;
    double f_new = fx;
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls) {
      x_new = detail::project_box(res.x + step * d, lo, hi);
      f_new = f(x_new);
      if (f_new <= fx + 1e-4 * step * slope || f_new < fx - 1e-14 * (1.0 + std::abs(fx))) {
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved || (x_new - res.x).norm() == 0.0) break;  // no progress possible

    const Eigen::VectorXd g_new = grad(x_new);
    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      S.push_back(s);
      Y.push_back(y);
      rho.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > opts.memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }

    const double df = fx - f_new;
    res.x = x_new;
    g = g_new;
    fx = f_new;
    small_changes = (df >= 0.0 && df <= opts.obj_tol * (1.0 + std::abs(fx))) ? small_changes + 1 : 0;
    if (small_changes >= 3) break;
  }
  res.objective = fx;
  const Eigen::VectorXd pg_final = detail::projected_gradient(res.x, g, lo, hi);
  res.pg_norm = pg_final.norm();
  if (!res.converged) res.converged = res.pg_norm <= opts.pg_tol * (1.0 + std::abs(fx));
  return res;
}

}  // namespace epimsm
