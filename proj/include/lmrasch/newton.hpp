#pragma once

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lmrasch/errors.hpp"
#include "lmrasch/model_params.hpp"

// Box-constrained damped Newton ascent with step halving. A problem supplies
//   Eigen::Index dim() const;
//   double value(const VectorXd& x) const;
//   double evaluate(const VectorXd& x, VectorXd& grad, MatrixXd& hess) const;
//   VectorXd lower() const; VectorXd upper() const;
// Every accepted step strictly increases the objective.

namespace lmrasch {

struct NewtonOptions {
  int max_iter = 100;
  double grad_tol = 1e-7;
  int max_halvings = 30;
};

struct NewtonResult {
  VectorXd x;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  bool at_bound = false;
  bool moved = false;  // at least one step was accepted
};

// frozen[i] pins coordinate i at its starting value.
template <class Problem>
NewtonResult newton_maximize(const Problem& prob, VectorXd x, const NewtonOptions& opt,
                             const std::vector<bool>& frozen = {}) {
  const Eigen::Index n = prob.dim();
  const VectorXd lo = prob.lower();
  const VectorXd hi = prob.upper();
  auto is_frozen = [&](Eigen::Index i) { return !frozen.empty() && frozen[static_cast<std::size_t>(i)]; };
  for (Eigen::Index i = 0; i < n; ++i)
    if (!is_frozen(i)) x(i) = std::clamp(x(i), lo(i), hi(i));

  NewtonResult res;
  VectorXd g(n);
  MatrixXd h(n, n);
  double f = prob.evaluate(x, g, h);
  if (!std::isfinite(f)) throw MStepFailure("M-step objective is not finite at the starting point");

  for (res.iterations = 0; res.iterations < opt.max_iter; ++res.iterations) {
    // Coordinates that are pinned, or pressed against a bound by the
    // gradient, are removed from this iteration's system.
    std::vector<bool> active(static_cast<std::size_t>(n), true);
    res.at_bound = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool pushed = (x(i) <= lo(i) && g(i) < 0.0) || (x(i) >= hi(i) && g(i) > 0.0);
      if (pushed) res.at_bound = true;
      if (is_frozen(i) || pushed) active[i] = false;
    }
    res.grad_norm = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (active[i]) res.grad_norm = std::max(res.grad_norm, std::abs(g(i)));
    if (res.grad_norm <= opt.grad_tol) {
      res.converged = true;
      break;
    }

    MatrixXd neg_h = -h;
    VectorXd rhs = g;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!active[i]) {
        neg_h.row(i).setZero();
        neg_h.col(i).setZero();
        neg_h(i, i) = 1.0;
        rhs(i) = 0.0;
      }
    // Levenberg damping until the system is positive definite; large damping
    // degrades gracefully into a scaled gradient step.
    const double scale = std::max(1.0, neg_h.diagonal().cwiseAbs().maxCoeff());
    double mu = 0.0;
    VectorXd dir;
    for (int attempt = 0; attempt < 40; ++attempt) {
      Eigen::LLT<MatrixXd> llt(neg_h + mu * MatrixXd::Identity(n, n));
      if (llt.info() == Eigen::Success) {
        dir = llt.solve(rhs);
        if (dir.allFinite()) break;
      }
      dir.resize(0);
      mu = mu == 0.0 ? 1e-8 * scale : mu * 10.0;
    }
    if (dir.size() == 0) dir = rhs / scale;

    double step = 1.0;
    bool accepted = false;
    VectorXd trial(n);
    double f_trial = f;
    for (int k = 0; k <= opt.max_halvings; ++k, step *= 0.5) {
      trial = x + step * dir;
      for (Eigen::Index i = 0; i < n; ++i)
        if (!is_frozen(i)) trial(i) = std::clamp(trial(i), lo(i), hi(i));
      f_trial = prob.value(trial);
      if (std::isfinite(f_trial) && f_trial > f) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // No representable ascent left along the Newton direction.
      res.converged = res.grad_norm <= std::sqrt(opt.grad_tol);
      break;
    }
    x = trial;
    res.moved = true;
    f = prob.evaluate(x, g, h);
  }
  res.x = std::move(x);
  res.value = f;
  return res;
}

}  // namespace lmrasch
