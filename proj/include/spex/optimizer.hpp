#pragma once

// Maximizers used by the block fits: a derivative-free Nelder-Mead warm
// start and an L-BFGS refinement with backtracking line search. Objectives
// may return -inf outside the admissible region; the line search backs off.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace spex {

using ObjectiveFn = std::function<double(const Eigen::VectorXd&)>;
// fills grad and returns the value; grad need not be valid when value is -inf
using ObjectiveGradFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct OptimOptions {
  int max_iterations = 400;
  double grad_tol = 1e-6;   // inf-norm of the gradient
  double step_tol = 1e-11;  // inf-norm of the accepted step
  int lbfgs_memory = 8;
  int nelder_mead_evals = 0;  // warm-start budget (0 disables)
  double nelder_mead_scale = 0.1;
};

struct OptimResult {
  Eigen::VectorXd x;
  double f = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd grad;
  double grad_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  std::string message;
};

// Plain Nelder-Mead (maximization), budgeted by function evaluations.
inline Eigen::VectorXd nelder_mead_maximize(const ObjectiveFn& f, Eigen::VectorXd x0,
                                            int max_evals, double scale) {
  const int p = (int)x0.size();
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    double v = f(x);
    return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
  };
  std::vector<std::pair<double, Eigen::VectorXd>> simplex;
  simplex.reserve(p + 1);
  simplex.push_back({eval(x0), x0});
  for (int j = 0; j < p; ++j) {
    Eigen::VectorXd v = x0;
    v(j) += scale * (1.0 + std::abs(x0(j)));
    simplex.push_back({eval(v), v});
  }
  auto by_value = [](const auto& a, const auto& b) { return a.first > b.first; };
  std::sort(simplex.begin(), simplex.end(), by_value);
  while (evals < max_evals) {
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(p);
    for (int i = 0; i < p; ++i) centroid += simplex[i].second;
    centroid /= p;
    const auto& worst = simplex[p];
    Eigen::VectorXd xr = centroid + (centroid - worst.second);
    double fr = eval(xr);
    if (fr > simplex[0].first) {
      Eigen::VectorXd xe = centroid + 2.0 * (centroid - worst.second);
      double fe = eval(xe);
      simplex[p] = fe > fr ? std::make_pair(fe, xe) : std::make_pair(fr, xr);
    } else if (fr > simplex[p - 1].first) {
      simplex[p] = {fr, xr};
    } else {
      Eigen::VectorXd xc = centroid + 0.5 * (worst.second - centroid);
      double fc = eval(xc);
      if (fc > worst.first) {
        simplex[p] = {fc, xc};
      } else {
        for (int i = 1; i <= p; ++i) {
          simplex[i].second = simplex[0].second + 0.5 * (simplex[i].second - simplex[0].second);
          simplex[i].first = eval(simplex[i].second);
        }
      }
    }
    std::sort(simplex.begin(), simplex.end(), by_value);
    if (std::abs(simplex[0].first - simplex[p].first) <
        1e-10 * (1.0 + std::abs(simplex[0].first)))
      break;
  }
  return simplex[0].second;
}

// L-BFGS maximization with Armijo backtracking. Non-finite trial values
// shrink the step.
inline OptimResult lbfgs_maximize(const ObjectiveGradFn& fg, Eigen::VectorXd x0,
                                  const OptimOptions& opts = {}) {
  const int p = (int)x0.size();
  OptimResult res;
  Eigen::VectorXd g(p);
  double fx = fg(x0, g);
  if (!std::isfinite(fx)) {
    res.x = x0;
    res.message = "initial point inadmissible";
    return res;
  }
  std::vector<Eigen::VectorXd> s_hist, y_hist;
  std::vector<double> rho_hist;
  Eigen::VectorXd x = x0;
  double gamma = 1.0;
  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    res.iterations = iter;
    double gnorm = g.lpNorm<Eigen::Infinity>();
    if (gnorm <= opts.grad_tol) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      break;
    }
    // two-loop recursion on the ascent direction
    Eigen::VectorXd q = g;
    const int m = (int)s_hist.size();
    std::vector<double> alpha(m);
    for (int i = m - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    q *= gamma;
    for (int i = 0; i < m; ++i) {
      double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Eigen::VectorXd dir = q;
    double dg = dir.dot(g);
    if (!(dg > 0.0)) {
      dir = g;
      dg = g.squaredNorm();
    }
    // backtracking line search (Armijo on the ascent)
    double step = 1.0;
    double f_new = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new, g_new(p);
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      x_new = x + step * dir;
      f_new = fg(x_new, g_new);
      if (std::isfinite(f_new) && f_new >= fx + 1e-4 * step * dg) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // objective at its floating-point plateau: the gradient cannot be
      // resolved below ~eps*|f|, so judge it relative to the value
      res.converged = gnorm <= std::max(10.0 * opts.grad_tol,
                                        opts.grad_tol * (1.0 + std::abs(fx)));
      res.message = res.converged ? "objective plateau reached" : "line search failed";
      break;
    }
    Eigen::VectorXd s = x_new - x;
    Eigen::VectorXd yv = g_new - g;
    double sy = s.dot(yv);
    if (sy < -1e-12 * s.norm() * yv.norm()) {  // curvature ok for maximization: s.y < 0
      s_hist.push_back(s);
      y_hist.push_back(-yv);  // store as minimization pair
      rho_hist.push_back(-1.0 / sy);
      gamma = -sy / yv.squaredNorm();
      if ((int)s_hist.size() > opts.lbfgs_memory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
    }
    double step_norm = s.lpNorm<Eigen::Infinity>();
    x = x_new;
    fx = f_new;
    g = g_new;
    if (step_norm <= opts.step_tol * (1.0 + x.lpNorm<Eigen::Infinity>())) {
      res.converged = g.lpNorm<Eigen::Infinity>() <=
                      std::max(10.0 * opts.grad_tol, opts.grad_tol * (1.0 + std::abs(fx)));
      res.message = res.converged ? "step tolerance reached" : "stalled with large gradient";
      break;
    }
    if (iter + 1 == opts.max_iterations) res.message = "iteration limit";
  }
  res.x = x;
  res.f = fx;
  res.grad = g;
  res.grad_norm = g.lpNorm<Eigen::Infinity>();
  if (res.grad_norm <= opts.grad_tol) res.converged = true;
  return res;
}

}  // namespace spex
