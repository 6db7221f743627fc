#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "lmrasch/mstep.hpp"

namespace lmrasch {

struct FitConfig {
  int max_iters = 5000;
  double tol = 1e-8;  // relative log-likelihood change
  int n_random_starts = 9;
  std::uint64_t rng_seed = 20080101;
  int mstep_max_newton = 100;
  double mstep_tol = 1e-7;
  int threads = 1;
  // Sample size used in the BIC penalty; defaults to the number of subjects.
  std::optional<double> bic_n;

  void validate() const {
    if (!(tol > 0.0)) throw InvalidArgument("tol must be positive");
    if (max_iters < 1) throw InvalidArgument("max_iters must be at least 1");
    if (n_random_starts < 0) throw InvalidArgument("n_random_starts must be non-negative");
  }
};

struct FitResult {
  Parameters params;
  double loglik = 0.0;
  std::vector<double> trace;  // trace[0] is the starting value
  long n_params = 0;
  double bic = 0.0;
  bool converged = false;
  int start_id = 0;
  int iterations = 0;
  std::vector<std::string> warnings;
  std::vector<std::string> start_log;  // one line per start
};

inline double bic(double loglik, long r, double n) {
  if (n < 1.0) throw InvalidArgument("BIC sample size must be at least 1");
  return -2.0 * loglik + static_cast<double>(r) * std::log(n);
}

// ---------------------------------------------------------------------------
// Starting values

namespace detail {

// k equispaced points with spacing 2, centred at 0 and shifted to start at 0.
inline VectorXd zero_anchored_grid(int k) {
  VectorXd g(k);
  for (int i = 0; i < k; ++i) g(i) = (-k + 1 + 2.0 * i) + (k - 1);
  return g;
}

inline void sort_with_gap(VectorXd& v, bool descending, double min_gap) {
  std::sort(v.data(), v.data() + v.size());
  for (Eigen::Index i = 1; i < v.size(); ++i) v(i) = std::max(v(i), v(i - 1) + min_gap);
  if (descending) v.reverseInPlace();
}

}  // namespace detail

// start_id 0 is the deterministic start; larger ids perturb its intercepts.
inline Parameters initialize(const ItemDesign& design, const Dataset& data, int k1, int k2,
                             int start_id = 0, std::uint64_t seed = 0) {
  data.validate(design);
  const ModelShape shape = ModelShape::of(design, data, k1, k2);
  Parameters p = Parameters::zeros(shape);

  VectorXd trials = VectorXd::Zero(shape.difficulties);
  VectorXd correct = VectorXd::Zero(shape.difficulties);
  for (const auto& c : data.clusters)
    for (const auto& s : c.subjects)
      for (int t = 0; t < shape.occasions; ++t)
        for (int j = 0; j < design.items(t); ++j) {
          const auto y = s.responses[t][j];
          if (y == kMissing) continue;
          trials(design.difficulty(t, j)) += 1.0;
          correct(design.difficulty(t, j)) += y;
        }
  for (int d = 0; d < shape.difficulties; ++d) {
    if (trials(d) == 0.0)
      throw InvalidDesign("difficulty id " + std::to_string(d + 1) + " has no observed responses");
    p.beta(d) = -numeric::logit(std::clamp(correct(d) / trials(d), 0.01, 0.99));
  }

  p.theta = detail::zero_anchored_grid(k2);
  const VectorXd class_grid = detail::zero_anchored_grid(k1);
  p.gamma0.setZero();
  if (shape.has_chain()) {
    p.delta0 = class_grid.tail(k1 - 1);
    for (int m = 0; m < k2 - 1; ++m) p.delta1(m) = (k2 - 2) - 2.0 * m;
    for (int t = 1; t < shape.occasions; ++t) {
      p.eta0.row(t - 1) = class_grid.tail(k1 - 1).transpose();
      auto& cuts = p.eta1[static_cast<std::size_t>(t - 1)];
      for (int v0 = 0; v0 < k2; ++v0)
        for (int m = 0; m < k2 - 1; ++m) cuts(v0, m) = 2.0 * (v0 - m) - 1.0;
    }
  }
  if (start_id == 0) return p;

  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(start_id)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> noise(0.0, 0.5);
  auto jitter = [&](auto&& block) {
    for (Eigen::Index i = 0; i < block.size(); ++i) block.data()[i] += noise(rng);
  };
  VectorXd upper = p.theta.tail(k2 - 1);
  jitter(upper);
  p.theta.tail(k2 - 1) = upper;
  detail::sort_with_gap(p.theta, false, 0.1);
  p.theta.array() -= p.theta(0);
  jitter(p.gamma0);
  if (shape.has_chain()) {
    jitter(p.delta0);
    jitter(p.delta1);
    detail::sort_with_gap(p.delta1, true, 0.1);
    jitter(p.eta0);
    for (auto& cuts : p.eta1)
      for (int v0 = 0; v0 < k2; ++v0) {
        VectorXd row = cuts.row(v0).transpose();
        jitter(row);
        detail::sort_with_gap(row, true, 0.1);
        cuts.row(v0) = row.transpose();
      }
  }
  return p;
}

// ---------------------------------------------------------------------------
// EM

// One EM run from the given parameters. Parameters listed in `frozen` keep
// their starting values throughout.
inline FitResult fit_from(const ItemDesign& design, const Dataset& data, Parameters start,
                          const FitConfig& config, const std::vector<ParamRef>& frozen = {}) {
  config.validate();
  start.check_constraints();
  MStepOptions mopt;
  mopt.newton.max_iter = config.mstep_max_newton;
  mopt.newton.grad_tol = config.mstep_tol;
  mopt.frozen = frozen;

  FitResult res;
  res.params = std::move(start);
  PosteriorQuantities post = estep(res.params, design, data, config.threads);
  if (!std::isfinite(post.loglik))
    throw MStepFailure("log-likelihood is not finite at the starting values");
  res.trace.push_back(post.loglik);
  std::set<std::string> bounded;
  for (int it = 1; it <= config.max_iters; ++it) {
    const auto reports = mstep(post, design, data, res.params, mopt);
    for (const auto& r : reports)
      if (r.result.at_bound) bounded.insert(r.name);
    post = estep(res.params, design, data, config.threads);
    if (!std::isfinite(post.loglik))
      throw MStepFailure("log-likelihood became non-finite at iteration " + std::to_string(it));
    const double prev = res.trace.back();
    res.trace.push_back(post.loglik);
    res.iterations = it;
    if (std::abs(post.loglik - prev) / (std::abs(post.loglik) + 1.0) < config.tol) {
      res.converged = true;
      break;
    }
  }
  for (const auto& name : bounded)
    res.warnings.push_back(name + ": coefficients reached the bound |x| <= 50 (quasi-separation)");
  res.loglik = res.trace.back();
  res.n_params = count_parameters(res.params.shape) - static_cast<long>(frozen.size());
  res.bic = bic(res.loglik, res.n_params, config.bic_n.value_or(static_cast<double>(data.subject_count())));
  return res;
}

// Multi-start EM: the deterministic start plus config.n_random_starts
// perturbed ones; the highest final log-likelihood wins (lowest id on ties).
inline FitResult fit(const ItemDesign& design, const Dataset& data, int k1, int k2,
                     const FitConfig& config) {
  config.validate();
  std::optional<FitResult> best;
  std::vector<std::string> log;
  for (int s = 0; s <= config.n_random_starts; ++s) {
    try {
      FitResult r = fit_from(design, data, initialize(design, data, k1, k2, s, config.rng_seed), config);
      r.start_id = s;
      log.push_back("start " + std::to_string(s) + ": loglik " + std::to_string(r.loglik) + " after " +
                    std::to_string(r.iterations) + " iterations" +
                    (r.converged ? "" : " (not converged)"));
      if (!best || r.loglik > best->loglik) best = std::move(r);
    } catch (const InvalidDesign&) {
      throw;
    } catch (const std::exception& e) {
      log.push_back("start " + std::to_string(s) + ": failed: " + e.what());
    }
  }
  if (!best) throw FitFailure("all EM starts failed", log);
  best->start_log = std::move(log);
  return std::move(*best);
}

}  // namespace lmrasch
