#pragma once

#include <chrono>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lmrasch/io.hpp"

// Command-line front end: simulate | fit | grid | se | decode | describe.
// Exit status: 0 success, 1 usage, 2 data error, 3 numerical failure.

namespace lmrasch::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kNumericalFailure = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// "A" or "A..B".
inline IntRange parse_range(const std::string& s, const char* flag) {
  const auto dots = s.find("..");
  try {
    std::size_t used = 0;
    if (dots == std::string::npos) {
      const int v = std::stoi(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return {v, v};
    }
    const std::string a = s.substr(0, dots), b = s.substr(dots + 2);
    const int lo = std::stoi(a, &used);
    if (used != a.size()) throw std::invalid_argument(s);
    const int hi = std::stoi(b, &used);
    if (used != b.size() || lo > hi) throw std::invalid_argument(s);
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw UsageError(std::string(flag) + ": expected N or A..B, got '" + s + "'");
  }
}

// "name=normal(m,s)", "name=bernoulli(p)" or "name=constant(v)".
inline CovariateGenerator parse_generator(const std::string& s) {
  const auto eq = s.find('=');
  const auto open = s.find('(', eq);
  if (eq == std::string::npos || open == std::string::npos || s.back() != ')')
    throw UsageError("covariate generator must look like name=normal(0,1), got '" + s + "'");
  const std::string nm = s.substr(0, eq);
  const std::string kind = s.substr(eq + 1, open - eq - 1);
  std::vector<double> args;
  std::stringstream in(s.substr(open + 1, s.size() - open - 2));
  for (std::string tok; std::getline(in, tok, ',');) {
    try {
      args.push_back(std::stod(tok));
    } catch (const std::logic_error&) {
      throw UsageError("bad number '" + tok + "' in covariate generator '" + s + "'");
    }
  }
  if (kind == "normal" && args.size() == 2) return CovariateGenerator::normal(nm, args[0], args[1]);
  if (kind == "bernoulli" && args.size() == 1) return CovariateGenerator::bernoulli(nm, args[0]);
  if (kind == "constant" && args.size() == 1) return CovariateGenerator::constant(nm, args[0]);
  throw UsageError("unknown covariate generator '" + s + "'");
}

inline std::vector<ParamRef> parse_param_list(const std::string& list) {
  std::vector<ParamRef> out;
  std::string cur;
  int depth = 0;
  auto flush = [&] {
    if (cur.empty()) return;
    try {
      out.push_back(parse_param(cur));
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
    cur.clear();
  };
  for (char ch : list) {
    if (ch == '[') ++depth;
    if (ch == ']') --depth;
    if (ch == ',' && depth == 0) flush();
    else if (ch != ' ') cur += ch;
  }
  flush();
  return out;
}

struct Options {
  std::string data;
  std::string out = ".";
  std::string k1 = "1";
  std::string k2 = "1";
  int starts = 9;
  std::uint64_t seed = 20080101;
  double tol = 1e-8;
  int max_iters = 5000;
  int threads = 0;
  std::optional<double> bic_n;
  std::string breaks = "quantile";
  std::string split;
  std::string params;
  std::string model;
  std::string truth;
  int classes = 6;
  int clusters = 50;
  std::string cluster_size = "10..20";
  double missing_rate = 0.0;
  std::vector<std::string> cluster_generators;
  std::vector<std::string> subject_generators;
};

inline FitConfig fit_config(const Options& o) {
  FitConfig c;
  c.n_random_starts = o.starts;
  c.rng_seed = o.seed;
  c.tol = o.tol;
  c.max_iters = o.max_iters;
  c.threads = o.threads > 0 ? o.threads : default_threads();
  c.bic_n = o.bic_n;
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  return c;
}

// Loads the bundle; anything wrong with its content is a data error.
inline io::Bundle load_data(const std::string& dir) {
  if (dir.empty()) throw UsageError("--data is required");
  io::Bundle b;
  try {
    b = io::load_bundle(dir);
    b.data.validate(b.design);
  } catch (const LoadError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw LoadError(dir, 0, 0, e.what());
  }
  return b;
}

inline FitResult load_model(const std::string& path) {
  try {
    return io::fit_from_json(io::read_json(path));
  } catch (const InvalidArgument& e) {
    throw LoadError(path, 0, 0, e.what());
  } catch (const ConstraintViolation& e) {
    throw LoadError(path, 0, 0, e.what());
  }
}

class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& argv)
      : start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["argv"] = argv;
    doc_["version"] = kVersion;
    doc_["inputs"] = io::json::object();
    doc_["outputs"] = io::json::object();
  }

  void config(const Options& o) {
    doc_["seed"] = o.seed;
    doc_["config"] = {{"data", o.data},     {"out", o.out},         {"k1", o.k1},
                      {"k2", o.k2},         {"starts", o.starts},   {"seed", o.seed},
                      {"tol", o.tol},       {"max_iters", o.max_iters}, {"threads", o.threads},
                      {"breaks", o.breaks}, {"split", o.split},     {"params", o.params},
                      {"model", o.model},   {"truth", o.truth},     {"classes", o.classes}};
    if (o.bic_n) doc_["config"]["bic_n"] = *o.bic_n;
  }

  void input(const io::fs::path& p) { doc_["inputs"][p.string()] = io::file_digest(p); }
  void bundle_inputs(const std::string& dir) {
    for (const char* f : {"design.csv", "responses.csv", "cluster_covariates.csv", "subject_covariates.csv"})
      input(io::fs::path(dir) / f);
  }
  void output(const io::fs::path& p) { doc_["outputs"][p.filename().string()] = io::file_digest(p); }
  io::json& extra() { return doc_; }

  void write(const io::fs::path& dir) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    doc_["wall_time_seconds"] = secs;
    io::write_json(dir / "manifest.json", doc_);
  }

 private:
  io::json doc_;
  std::chrono::steady_clock::time_point start_;
};

inline void print_fit(std::ostream& os, const FitResult& r) {
  os << "k1=" << r.params.shape.k1 << " k2=" << r.params.shape.k2 << " loglik=" << io::fmt6(r.loglik)
     << " np=" << r.n_params << " bic=" << io::fmt6(r.bic) << " iterations=" << r.iterations
     << (r.converged ? "" : " (not converged)") << '\n';
  for (const auto& w : r.warnings) os << "warning: " << w << '\n';
}

// ---------------------------------------------------------------------------
// Commands

inline FitResult fit_single(const Options& o, const io::Bundle& b) {
  const IntRange k1 = parse_range(o.k1, "--k1"), k2 = parse_range(o.k2, "--k2");
  if (k1.first != k1.second || k2.first != k2.second)
    throw UsageError("--k1 and --k2 must be single values for this command");
  if (k1.first < 1 || k2.first < 1) throw UsageError("--k1 and --k2 must be at least 1");
  return fit(b.design, b.data, k1.first, k2.first, fit_config(o));
}

inline int cmd_fit(const Options& o, Manifest& m, std::ostream& os) {
  const io::Bundle b = load_data(o.data);
  m.bundle_inputs(o.data);
  const FitResult r = fit_single(o, b);
  const io::fs::path out(o.out);
  io::write_json(out / "model.json", io::fit_to_json(r, b.data.subject_count()));
  io::write_trace(out / "trace.csv", r.trace);
  m.output(out / "model.json");
  m.output(out / "trace.csv");
  print_fit(os, r);
  return kOk;
}

inline int cmd_grid(const Options& o, Manifest& m, std::ostream& os) {
  const io::Bundle b = load_data(o.data);
  m.bundle_inputs(o.data);
  const GridResult g =
      grid_search(b.design, b.data, parse_range(o.k1, "--k1"), parse_range(o.k2, "--k2"), fit_config(o));
  const io::fs::path out(o.out);
  io::write_grid(out / "grid.csv", g);
  m.output(out / "grid.csv");
  for (const auto& r : g.rows) {
    os << "k1=" << r.k1 << " k2=" << r.k2;
    if (r.error.empty())
      os << " loglik=" << io::fmt6(r.loglik) << " np=" << r.n_params << " bic=" << io::fmt6(r.bic)
         << (r.converged ? "" : " (not converged)") << (r.best ? " *" : "");
    else
      os << " failed: " << r.error;
    os << '\n';
  }
  if (const GridRow* best = g.best()) m.extra()["best"] = {{"k1", best->k1}, {"k2", best->k2}};
  return kOk;
}

inline FitResult model_or_fit(const Options& o, const io::Bundle& b, Manifest& m) {
  if (o.model.empty()) return fit_single(o, b);
  m.input(o.model);
  FitResult r = load_model(o.model);
  const ModelShape want = ModelShape::of(b.design, b.data, r.params.shape.k1, r.params.shape.k2);
  const ModelShape& have = r.params.shape;
  if (want.occasions != have.occasions || want.difficulties != have.difficulties ||
      want.cluster_covariates != have.cluster_covariates || want.subject_covariates != have.subject_covariates)
    throw LoadError(o.model, 0, 0, "model dimensions do not match the data bundle");
  // Re-evaluate at the stored parameters so D statistics compare like with like.
  r.loglik = total_loglik(r.params, b.design, b.data, fit_config(o).threads);
  return r;
}

inline int cmd_se(const Options& o, Manifest& m, std::ostream& os) {
  const io::Bundle b = load_data(o.data);
  m.bundle_inputs(o.data);
  const FitResult fitted = model_or_fit(o, b, m);
  std::vector<ParamRef> refs =
      o.params.empty() ? default_se_parameters(fitted.params.shape) : parse_param_list(o.params);
  for (const auto& r : refs) {
    if (!addresses(fitted.params.shape, r)) throw UsageError("parameter " + name(r) + " is not in the model");
    if (!profileable(r)) throw UsageError("parameter " + name(r) + " cannot be profiled");
  }
  FitConfig config = fit_config(o);
  const auto rows = profile_se_all(b.design, b.data, fitted, refs, config);
  const io::fs::path out(o.out);
  io::write_se_report(out / "se_report.csv", rows);
  m.output(out / "se_report.csv");
  for (const auto& r : rows) {
    os << name(r.param) << ' ' << io::fmt6(r.estimate);
    if (r.se) os << " se=" << io::fmt6(*r.se) << " p=" << format_p_value(*r.wald_p);
    else os << " se=- (" << r.note << ')';
    os << '\n';
  }
  return kOk;
}

inline int cmd_decode(const Options& o, Manifest& m, std::ostream& os) {
  const io::Bundle b = load_data(o.data);
  m.bundle_inputs(o.data);
  const FitResult fitted = model_or_fit(o, b, m);
  const Decoding d = decode(fitted.params, b.design, b.data, fit_config(o).threads);
  const io::fs::path out(o.out);
  io::write_decoding(out / "states.csv", out / "classes.csv", b.data, d);
  m.output(out / "states.csv");
  m.output(out / "classes.csv");
  os << "decoded " << b.data.clusters.size() << " clusters, " << b.data.subject_count() << " subjects\n";
  return kOk;
}

inline int cmd_describe(const Options& o, Manifest& m, std::ostream& os) {
  const io::Bundle b = load_data(o.data);
  m.bundle_inputs(o.data);
  if (o.classes < 2) throw UsageError("--classes must be at least 2");
  Breaks breaks;
  if (o.breaks == "quantile") breaks = Breaks::Quantile;
  else if (o.breaks == "width") breaks = Breaks::Width;
  else throw UsageError("--breaks must be quantile or width");
  std::optional<std::string> split;
  if (!o.split.empty()) {
    const auto& names = b.data.cluster_covariate_names;
    if (std::find(names.begin(), names.end(), o.split) == names.end())
      throw UsageError("--split: no cluster covariate named '" + o.split + "'");
    split = o.split;
  }
  const auto tables = empirical_transitions(b.design, b.data, o.classes, breaks, split);
  const io::fs::path out(o.out);
  io::write_transitions(out / "transitions.csv", tables);
  m.output(out / "transitions.csv");
  os << tables.size() << " transition tables\n";
  return kOk;
}

inline int cmd_simulate(const Options& o, Manifest& m, std::ostream& os) {
  if (o.data.empty()) throw UsageError("--data must name a directory holding design.csv");
  if (o.truth.empty()) throw UsageError("--truth (parameter JSON) is required");
  const io::fs::path design_path = io::fs::path(o.data) / "design.csv";
  SimSpec spec;
  spec.design = io::load_design(design_path);
  m.input(design_path);
  m.input(o.truth);
  try {
    spec.truth = io::params_from_json(io::read_json(o.truth));
  } catch (const std::logic_error& e) {
    throw LoadError(o.truth, 0, 0, e.what());
  }
  spec.clusters = o.clusters;
  spec.cluster_size = parse_range(o.cluster_size, "--cluster-size");
  spec.missing_rate = o.missing_rate;
  spec.seed = o.seed;
  for (const auto& g : o.cluster_generators) spec.cluster_covariates.push_back(parse_generator(g));
  for (const auto& g : o.subject_generators) spec.subject_covariates.push_back(parse_generator(g));
  // Unnamed covariates default to standard normal draws.
  for (int k = static_cast<int>(spec.cluster_covariates.size()); k < spec.truth.shape.cluster_covariates; ++k)
    spec.cluster_covariates.push_back(CovariateGenerator::normal("x" + std::to_string(k + 1), 0.0, 1.0));
  for (int k = static_cast<int>(spec.subject_covariates.size()); k < spec.truth.shape.subject_covariates; ++k)
    spec.subject_covariates.push_back(CovariateGenerator::normal("z" + std::to_string(k + 1), 0.0, 1.0));
  try {
    spec.validate();
  } catch (const std::logic_error& e) {
    throw UsageError(e.what());
  }
  const auto [data, truth] = simulate(spec);
  const io::fs::path out(o.out);
  io::write_bundle(out, spec.design, data);
  io::write_latent_truth(out / "latent_truth.csv", data, truth);
  for (const char* f : {"design.csv", "responses.csv", "cluster_covariates.csv", "subject_covariates.csv",
                        "latent_truth.csv"})
    m.output(out / f);
  os << "simulated " << data.clusters.size() << " clusters, " << data.subject_count() << " subjects\n";
  return kOk;
}

// ---------------------------------------------------------------------------

inline int run_command(int argc, const char* const* argv, std::ostream& os = std::cout,
                       std::ostream& err = std::cerr) {
  CLI::App app{"Multilevel latent Markov Rasch model: estimation, selection and simulation", "lmrasch"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "Read options from a key=value file");
  app.require_subcommand(1);
  Options o;

  auto add_data = [&](CLI::App* c, bool required) {
    auto* opt = c->add_option("--data", o.data, "Data bundle directory");
    if (required) opt->required();
    c->add_option("--out", o.out, "Output directory")->capture_default_str();
  };
  auto add_fit = [&](CLI::App* c) {
    c->add_option("--k1", o.k1, "Number of cluster classes (N or A..B)")->capture_default_str();
    c->add_option("--k2", o.k2, "Number of ability states (N or A..B)")->capture_default_str();
    c->add_option("--starts", o.starts, "Random starts besides the deterministic one")->capture_default_str();
    c->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    c->add_option("--tol", o.tol, "Relative log-likelihood change for convergence")->capture_default_str();
    c->add_option("--max-iters", o.max_iters, "Maximum EM iterations")->capture_default_str();
    c->add_option("--threads", o.threads, "Worker threads (0 = all cores)")->capture_default_str();
    c->add_option("--bic-n", o.bic_n, "Sample size in the BIC penalty (default: number of subjects)");
  };
  auto add_model = [&](CLI::App* c) {
    c->add_option("--model", o.model, "model.json from a previous fit (otherwise fit with --k1/--k2)");
  };

  auto* sim = app.add_subcommand("simulate", "Draw a data bundle from given parameters");
  add_data(sim, true);
  sim->add_option("--truth", o.truth, "Parameter JSON")->required();
  sim->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  sim->add_option("--clusters", o.clusters, "Number of clusters")->capture_default_str();
  sim->add_option("--cluster-size", o.cluster_size, "Subjects per cluster (N or A..B)")->capture_default_str();
  sim->add_option("--missing-rate", o.missing_rate, "Probability a response is missing")->capture_default_str();
  sim->add_option("--cluster-cov", o.cluster_generators, "name=normal(m,s)|bernoulli(p)|constant(v)");
  sim->add_option("--subject-cov", o.subject_generators, "name=normal(m,s)|bernoulli(p)|constant(v)");

  auto* fit_cmd = app.add_subcommand("fit", "Fit one model");
  add_data(fit_cmd, true);
  add_fit(fit_cmd);

  auto* grid_cmd = app.add_subcommand("grid", "Fit a grid of (k1, k2) and select by BIC");
  add_data(grid_cmd, true);
  add_fit(grid_cmd);

  auto* se_cmd = app.add_subcommand("se", "Profile-likelihood standard errors");
  add_data(se_cmd, true);
  add_fit(se_cmd);
  add_model(se_cmd);
  se_cmd->add_option("--params", o.params, "Comma-separated parameter names, e.g. gamma1[1,2],eta2[2,1]");

  auto* dec_cmd = app.add_subcommand("decode", "Posterior modal classes and states");
  add_data(dec_cmd, true);
  add_fit(dec_cmd);
  add_model(dec_cmd);

  auto* desc_cmd = app.add_subcommand("describe", "Empirical score-class transition tables");
  add_data(desc_cmd, true);
  desc_cmd->add_option("--classes", o.classes, "Number of score classes")->capture_default_str();
  desc_cmd->add_option("--breaks", o.breaks, "quantile or width")->capture_default_str();
  desc_cmd->add_option("--split", o.split, "Cluster covariate defining groups");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, os, err);
    return code == 0 ? kOk : kUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  Manifest manifest(command, std::vector<std::string>(argv, argv + argc));
  manifest.config(o);
  try {
    int code = kOk;
    if (command == "fit") code = cmd_fit(o, manifest, os);
    else if (command == "grid") code = cmd_grid(o, manifest, os);
    else if (command == "se") code = cmd_se(o, manifest, os);
    else if (command == "decode") code = cmd_decode(o, manifest, os);
    else if (command == "describe") code = cmd_describe(o, manifest, os);
    else code = cmd_simulate(o, manifest, os);
    manifest.write(o.out);
    return code;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const LoadError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const InvalidDesign& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const FitFailure& e) {
    err << "numerical failure: " << e.what() << '\n';
    for (const auto& d : e.diagnostics) err << "  " << d << '\n';
    return kNumericalFailure;
  } catch (const MStepFailure& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const NonNestedOptimum& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const ConstraintViolation& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
}

}  // namespace lmrasch::cli
