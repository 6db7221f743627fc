#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lmrasch/em.hpp"
#include "lmrasch/parallel.hpp"

// Model selection (BIC grid over the numbers of latent classes/states),
// likelihood-ratio statistics and profile standard errors.

namespace lmrasch {

struct GridRow {
  int k1 = 1;
  int k2 = 1;
  double loglik = 0.0;
  long n_params = 0;
  double bic = 0.0;
  bool converged = false;
  bool best = false;
  std::string error;  // non-empty when the cell failed
};

struct GridResult {
  std::vector<GridRow> rows;

  const GridRow* best() const {
    for (const auto& r : rows)
      if (r.best) return &r;
    return nullptr;
  }
};

using IntRange = std::pair<int, int>;  // inclusive

// Marks the minimum-BIC row among converged cells; if no cell converged, the
// minimum among cells that did not fail.
inline void mark_best(GridResult& g) {
  auto pick = [&](bool need_converged) -> GridRow* {
    GridRow* best = nullptr;
    for (auto& r : g.rows) {
      if (!r.error.empty() || (need_converged && !r.converged)) continue;
      if (!best || r.bic < best->bic) best = &r;
    }
    return best;
  };
  for (auto& r : g.rows) r.best = false;
  GridRow* b = pick(true);
  if (!b) b = pick(false);
  if (b) b->best = true;
}

inline GridResult grid_search(const ItemDesign& design, const Dataset& data, IntRange k1_range,
                              IntRange k2_range, const FitConfig& config) {
  if (k1_range.first < 1 || k1_range.second < k1_range.first || k2_range.first < 1 ||
      k2_range.second < k2_range.first)
    throw InvalidArgument("grid ranges must be non-empty and start at 1 or above");
  GridResult g;
  for (int k1 = k1_range.first; k1 <= k1_range.second; ++k1)
    for (int k2 = k2_range.first; k2 <= k2_range.second; ++k2) {
      GridRow row;
      row.k1 = k1;
      row.k2 = k2;
      g.rows.push_back(row);
    }

  // Cells are the unit of parallelism; each fit then runs serially.
  FitConfig cell_config = config;
  if (g.rows.size() > 1) cell_config.threads = 1;
  parallel_for(g.rows.size(), config.threads, [&](std::size_t i) {
    GridRow& row = g.rows[i];
    try {
      const FitResult r = fit(design, data, row.k1, row.k2, cell_config);
      row.loglik = r.loglik;
      row.n_params = r.n_params;
      row.bic = r.bic;
      row.converged = r.converged;
    } catch (const InvalidDesign&) {
      throw;
    } catch (const std::exception& e) {
      row.error = e.what();
      row.n_params = count_parameters(ModelShape::of(design, data, row.k1, row.k2));
    }
  });
  mark_best(g);
  return g;
}

// D = -2 [l(constrained) - l(full)].
inline double lr_test(double loglik_full, double loglik_constrained) {
  const double d = -2.0 * (loglik_constrained - loglik_full);
  if (d < -1e-6)
    throw NonNestedOptimum("constrained fit exceeds the full fit by " + std::to_string(-d / 2.0) +
                           "; refit the full model");
  return d;
}

// Two-sided normal p-value of estimate / se.
inline double wald_p_value(double estimate, double se) {
  return 2.0 * numeric::normal_sf(std::abs(estimate / se));
}

inline std::string format_p_value(double p, int decimals = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, p);
  return buf;
}

struct StandardError {
  ParamRef param;
  double estimate = 0.0;
  double lr_statistic = 0.0;         // D_h
  std::optional<double> se;          // missing when D_h <= 0 or estimate == 0
  std::optional<double> wald_p;
  double constrained_loglik = 0.0;
  std::string note;
};

// Pins the parameter at zero, keeping the gaps of an ordered row intact when
// the parameter is the leading cut intercept of that row.
inline Parameters zero_constrained_start(const Parameters& fitted, const ParamRef& ref) {
  Parameters start = fitted;
  const double value = get(fitted, ref);
  if (ref.block == Block::Delta1) {
    start.delta1.array() -= value;
  } else if (ref.block == Block::Eta1) {
    start.eta1[static_cast<std::size_t>(ref.index[0] - 1)].row(ref.index[1]).array() -= value;
  }
  at(start, ref) = 0.0;
  return start;
}

// se = |estimate| / sqrt(D), with D the LR statistic for H0: parameter = 0.
// The refit is warm-started from the fitted values with a single start.
inline StandardError profile_se(const ItemDesign& design, const Dataset& data,
                                const FitResult& fitted, const ParamRef& ref,
                                const FitConfig& config) {
  if (!addresses(fitted.params.shape, ref))
    throw InvalidArgument("parameter " + name(ref) + " does not exist in this model");
  if (!profileable(ref)) throw InvalidArgument("parameter " + name(ref) + " cannot be profiled");
  StandardError out;
  out.param = ref;
  out.estimate = get(fitted.params, ref);
  if (out.estimate == 0.0) {
    out.note = "estimate is exactly zero";
    out.constrained_loglik = fitted.loglik;
    return out;
  }
  const FitResult refit = fit_from(design, data, zero_constrained_start(fitted.params, ref), config, {ref});
  out.constrained_loglik = refit.loglik;
  try {
    out.lr_statistic = lr_test(fitted.loglik, refit.loglik);
  } catch (const NonNestedOptimum& e) {
    out.lr_statistic = -2.0 * (refit.loglik - fitted.loglik);
    out.note = e.what();
    return out;
  }
  if (out.lr_statistic <= 0.0) {
    out.note = "likelihood ratio statistic is not positive";
    return out;
  }
  out.se = std::abs(out.estimate) / std::sqrt(out.lr_statistic);
  out.wald_p = wald_p_value(out.estimate, *out.se);
  return out;
}

inline std::vector<StandardError> profile_se_all(const ItemDesign& design, const Dataset& data,
                                                 const FitResult& fitted,
                                                 const std::vector<ParamRef>& refs,
                                                 const FitConfig& config) {
  std::vector<StandardError> out(refs.size());
  FitConfig task_config = config;
  if (refs.size() > 1) task_config.threads = 1;
  parallel_for(refs.size(), config.threads, [&](std::size_t i) {
    out[i] = profile_se(design, data, fitted, refs[i], task_config);
  });
  return out;
}

// Free parameters reported by default: everything except abilities,
// difficulties and the non-leading cut intercepts.
inline std::vector<ParamRef> default_se_parameters(const ModelShape& shape) {
  std::vector<ParamRef> out;
  for (const auto& r : free_parameters(shape))
    if (r.block != Block::Beta && profileable(r)) out.push_back(r);
  return out;
}

}  // namespace lmrasch
