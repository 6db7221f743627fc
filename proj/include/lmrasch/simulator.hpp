#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lmrasch/model_params.hpp"

namespace lmrasch {

struct CovariateGenerator {
  enum class Kind { Normal, Bernoulli, Constant };
  std::string name;
  Kind kind = Kind::Constant;
  double a = 0.0;  // mean | success probability | value
  double b = 1.0;  // standard deviation (normal only)

  static CovariateGenerator normal(std::string n, double mean, double sd) {
    return {std::move(n), Kind::Normal, mean, sd};
  }
  static CovariateGenerator bernoulli(std::string n, double p) {
    return {std::move(n), Kind::Bernoulli, p, 0.0};
  }
  static CovariateGenerator constant(std::string n, double v) {
    return {std::move(n), Kind::Constant, v, 0.0};
  }
};

struct SimSpec {
  ItemDesign design;
  Parameters truth;
  int clusters = 1;
  std::pair<int, int> cluster_size{1, 1};  // inclusive range
  std::vector<CovariateGenerator> cluster_covariates;
  std::vector<CovariateGenerator> subject_covariates;  // drawn afresh at each occasion
  double missing_rate = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    truth.check_constraints();
    const auto& s = truth.shape;
    if (s.occasions != design.occasions() || s.difficulties != design.difficulties())
      throw InvalidArgument("truth does not match the item design");
    if (s.cluster_covariates != static_cast<int>(cluster_covariates.size()) ||
        s.subject_covariates != static_cast<int>(subject_covariates.size()))
      throw InvalidArgument("covariate generators do not match the truth dimensions");
    if (clusters < 0 || cluster_size.first < 1 || cluster_size.second < cluster_size.first)
      throw InvalidArgument("invalid cluster count or size range");
    if (missing_rate < 0.0 || missing_rate >= 1.0)
      throw InvalidArgument("missing_rate must lie in [0, 1)");
  }
};

struct LatentTruth {
  std::vector<int> cluster_class;                     // [h]
  std::vector<std::vector<std::vector<int>>> states;  // [h][i][t]
};

namespace detail {

inline int draw_categorical(std::mt19937_64& rng, const VectorXd& probs) {
  const double r = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (Eigen::Index i = 0; i + 1 < probs.size(); ++i) {
    acc += probs(i);
    if (r < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size() - 1);
}

inline double draw_covariate(std::mt19937_64& rng, const CovariateGenerator& g) {
  switch (g.kind) {
    case CovariateGenerator::Kind::Normal:
      return std::normal_distribution<double>(g.a, g.b)(rng);
    case CovariateGenerator::Kind::Bernoulli:
      return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < g.a ? 1.0 : 0.0;
    case CovariateGenerator::Kind::Constant:
      return g.a;
  }
  return 0.0;
}

}  // namespace detail

// Draws a dataset from the generative model. Cluster ids are "1".."H" and
// subject ids "1".."n_h" within each cluster. Bit-reproducible for a given
// SimSpec on one standard library implementation.
inline std::pair<Dataset, LatentTruth> simulate(const SimSpec& spec) {
  spec.validate();
  const Parameters& p = spec.truth;
  const ItemDesign& design = spec.design;
  const int T = design.occasions();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> size_dist(spec.cluster_size.first, spec.cluster_size.second);

  Dataset data;
  for (const auto& g : spec.cluster_covariates) data.cluster_covariate_names.push_back(g.name);
  for (const auto& g : spec.subject_covariates) data.subject_covariate_names.push_back(g.name);
  LatentTruth truth;

  for (int h = 0; h < spec.clusters; ++h) {
    Cluster c;
    c.id = std::to_string(h + 1);
    c.covariates.resize(static_cast<Eigen::Index>(spec.cluster_covariates.size()));
    for (std::size_t k = 0; k < spec.cluster_covariates.size(); ++k)
      c.covariates(static_cast<Eigen::Index>(k)) = detail::draw_covariate(rng, spec.cluster_covariates[k]);
    const int u = detail::draw_categorical(rng, cluster_class_probs(p, c.covariates));
    truth.cluster_class.push_back(u);
    auto& paths = truth.states.emplace_back();
    const int n = size_dist(rng);
    for (int i = 0; i < n; ++i) {
      Subject s;
      s.id = std::to_string(i + 1);
      for (int t = 0; t < T; ++t) {
        VectorXd z(static_cast<Eigen::Index>(spec.subject_covariates.size()));
        for (std::size_t k = 0; k < spec.subject_covariates.size(); ++k)
          z(static_cast<Eigen::Index>(k)) = detail::draw_covariate(rng, spec.subject_covariates[k]);
        s.covariates.push_back(std::move(z));
      }
      auto& path = paths.emplace_back();
      path.push_back(detail::draw_categorical(rng, initial_probs(p, s.covariates[0], u)));
      for (int t = 1; t < T; ++t) {
        const MatrixXd pi = transition_matrix(p, s.covariates[t], u, t);
        path.push_back(detail::draw_categorical(rng, pi.row(path.back()).transpose()));
      }
      for (int t = 0; t < T; ++t) {
        auto& row = s.responses.emplace_back();
        const double theta = p.theta(path[t]);
        for (int j = 0; j < design.items(t); ++j) {
          const bool missing = spec.missing_rate > 0.0 && unif(rng) < spec.missing_rate;
          const bool correct = unif(rng) < rasch_prob(theta, p.beta(design.difficulty(t, j)));
          row.push_back(missing ? kMissing : static_cast<std::int8_t>(correct));
        }
      }
      c.subjects.push_back(std::move(s));
    }
    data.clusters.push_back(std::move(c));
  }
  return {std::move(data), std::move(truth)};
}

// Exact complete-data log-likelihood of a realised latent draw.
inline double latent_complete_loglik(const Parameters& p, const ItemDesign& design, const Dataset& data,
                                     const LatentTruth& truth) {
  double total = 0.0;
  for (std::size_t h = 0; h < data.clusters.size(); ++h) {
    const Cluster& c = data.clusters[h];
    const int u = truth.cluster_class[h];
    total += log_cluster_class_probs(p, c.covariates)(u);
    for (std::size_t i = 0; i < c.subjects.size(); ++i) {
      const Subject& s = c.subjects[i];
      const auto& path = truth.states[h][i];
      total += log_initial_probs(p, s.covariates[0], u)(path[0]);
      for (int t = 1; t < design.occasions(); ++t)
        total += log_transition_matrix(p, s.covariates[t], u, t)(path[t - 1], path[t]);
      for (int t = 0; t < design.occasions(); ++t)
        for (int j = 0; j < design.items(t); ++j) {
          const auto y = s.responses[t][j];
          if (y == kMissing) continue;
          const double x = p.theta(path[t]) - p.beta(design.difficulty(t, j));
          total += y == 1 ? numeric::log_expit(x) : numeric::log_expit(-x);
        }
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Empirical transitions between raw-score classes

enum class Breaks { Quantile, Width };

struct TransitionTable {
  std::string group;
  int from_occasion = 0;  // 0-based; the table describes from -> from + 1
  MatrixXd counts;        // n_classes x n_classes
  MatrixXd probs;         // row-normalised counts; empty rows stay zero
  std::vector<bool> empty_row;
};

// Number of correct (non-missing) responses per subject and occasion.
inline std::vector<std::vector<int>> raw_scores(const Dataset& data) {
  std::vector<std::vector<int>> out;
  for (const auto& c : data.clusters)
    for (const auto& s : c.subjects) {
      auto& row = out.emplace_back();
      for (const auto& resp : s.responses) {
        int score = 0;
        for (auto y : resp) score += (y == 1);
        row.push_back(score);
      }
    }
  return out;
}

// Score classes 0..n-1. Width: equal-width bins over [0, J_t] with the top
// score in the last class. Quantile: class = ceil(n * F(score)) - 1 with F the
// empirical CDF of the occasion's scores, so ties share a class.
inline std::vector<std::vector<int>> score_classes(const ItemDesign& design, const Dataset& data,
                                                   int n_classes, Breaks breaks) {
  if (n_classes < 2) throw InvalidArgument("n_classes must be at least 2");
  auto scores = raw_scores(data);
  const int T = design.occasions();
  std::vector<std::vector<int>> out(scores.size(), std::vector<int>(static_cast<std::size_t>(T)));
  for (int t = 0; t < T; ++t) {
    std::vector<int> col;
    for (const auto& s : scores) col.push_back(s[t]);
    std::vector<int> sorted = col;
    std::sort(sorted.begin(), sorted.end());
    const double N = static_cast<double>(col.size());
    const int J = design.items(t);
    for (std::size_t i = 0; i < col.size(); ++i) {
      int cls;
      if (breaks == Breaks::Width) {
        cls = std::min(static_cast<int>(std::floor(static_cast<double>(col[i]) * n_classes / J)), n_classes - 1);
      } else {
        const auto le = std::upper_bound(sorted.begin(), sorted.end(), col[i]) - sorted.begin();
        cls = static_cast<int>(std::ceil(n_classes * static_cast<double>(le) / N - 1e-12)) - 1;
        cls = std::clamp(cls, 0, n_classes - 1);
      }
      out[i][static_cast<std::size_t>(t)] = cls;
    }
  }
  return out;
}

// Tables per group and consecutive occasion pair. `split` names a cluster
// covariate; its distinct values (ascending) define the groups.
inline std::vector<TransitionTable> empirical_transitions(const ItemDesign& design, const Dataset& data,
                                                          int n_classes, Breaks breaks,
                                                          const std::optional<std::string>& split = {}) {
  const auto classes = score_classes(design, data, n_classes, breaks);
  int split_col = -1;
  if (split) {
    for (int k = 0; k < data.cluster_covariates(); ++k)
      if (data.cluster_covariate_names[static_cast<std::size_t>(k)] == *split) split_col = k;
    if (split_col < 0) throw InvalidArgument("unknown cluster covariate: " + *split);
  }
  std::map<double, std::size_t> group_of;
  std::vector<int> subject_group;
  for (const auto& c : data.clusters) {
    const double key = split_col >= 0 ? c.covariates(split_col) : 0.0;
    group_of.emplace(key, 0);
    for (std::size_t i = 0; i < c.subjects.size(); ++i) subject_group.push_back(0);
  }
  std::vector<std::string> labels;
  for (auto& [key, idx] : group_of) {
    idx = labels.size();
    if (split_col < 0) {
      labels.emplace_back("all");
    } else {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6g", key);
      labels.emplace_back(buf);
    }
  }
  {
    std::size_t n = 0;
    for (const auto& c : data.clusters) {
      const std::size_t g = group_of.at(split_col >= 0 ? c.covariates(split_col) : 0.0);
      for (std::size_t i = 0; i < c.subjects.size(); ++i) subject_group[n++] = static_cast<int>(g);
    }
  }

  std::vector<TransitionTable> out;
  for (std::size_t g = 0; g < labels.size(); ++g)
    for (int t = 0; t + 1 < design.occasions(); ++t) {
      TransitionTable tab;
      tab.group = labels[g];
      tab.from_occasion = t;
      tab.counts = MatrixXd::Zero(n_classes, n_classes);
      for (std::size_t i = 0; i < classes.size(); ++i)
        if (subject_group[i] == static_cast<int>(g)) tab.counts(classes[i][t], classes[i][t + 1]) += 1.0;
      tab.probs = MatrixXd::Zero(n_classes, n_classes);
      for (int r = 0; r < n_classes; ++r) {
        const double tot = tab.counts.row(r).sum();
        tab.empty_row.push_back(tot == 0.0);
        if (tot > 0.0) tab.probs.row(r) = tab.counts.row(r) / tot;
      }
      out.push_back(std::move(tab));
    }
  return out;
}

}  // namespace lmrasch
