#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lmrasch/em.hpp"
#include "lmrasch/param_ref.hpp"
#include "lmrasch/posterior.hpp"
#include "lmrasch/selection.hpp"
#include "lmrasch/simulator.hpp"

// File formats. A data bundle is a directory with four CSV files:
//
//   design.csv              occasion,item,difficulty_id
//   cluster_covariates.csv  cluster_id[,<cluster covariate>...]
//   subject_covariates.csv  cluster_id,subject_id,occasion[,<covariate>...]
//   responses.csv           cluster_id,subject_id,occasion,item,response
//
// Occasions, items and difficulty ids are 1-based. A response is 0, 1 or an
// empty field (missing); absent response rows are missing as well. CSV
// dialect: comma separator, mandatory header, '.' decimal point, optional
// double quotes around fields.

namespace lmrasch::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Number formatting

// Report values: 6 significant digits, printf %g style.
inline std::string fmt6(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

// Shortest representation that parses back to the same double.
inline std::string fmt_exact(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line;  // source line of each row

  int column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& text, const std::string& path,
                                               std::size_t line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
    } else if (ch == '"' && field.empty() && !was_quoted) {
      quoted = was_quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(field));
      field.clear();
      was_quoted = false;
    } else {
      field += ch;
    }
  }
  if (quoted) throw LoadError(path, line, 0, "unterminated quoted field");
  out.push_back(std::move(field));
  return out;
}

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string(), 0, 0, "cannot open file");
  CsvTable t;
  t.path = path.string();
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (line == 1 && text.size() >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) text.erase(0, 3);
    if (text.empty()) continue;
    auto fields = split_csv_line(text, t.path, line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw LoadError(t.path, line, 0,
                      "expected " + std::to_string(t.header.size()) + " fields, found " +
                          std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.line.push_back(line);
  }
  if (t.header.empty()) throw LoadError(t.path, 0, 0, "missing header row");
  return t;
}

inline void require_columns(const CsvTable& t, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (i >= t.header.size() || t.header[i] != names[i])
      throw LoadError(t.path, 1, i + 1, "expected column '" + names[i] + "'");
}

inline long parse_int(const CsvTable& t, std::size_t row, std::size_t col) {
  const std::string& s = t.rows[row][col];
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw LoadError(t.path, t.line[row], col + 1, "expected an integer, found '" + s + "'");
  return v;
}

inline double parse_double(const CsvTable& t, std::size_t row, std::size_t col) {
  const std::string& s = t.rows[row][col];
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v))
    throw LoadError(t.path, t.line[row], col + 1, "expected a finite number, found '" + s + "'");
  return v;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError(path.string(), 0, 0, "cannot open for writing");
  return out;
}

// ---------------------------------------------------------------------------
// Data bundle

struct Bundle {
  ItemDesign design;
  Dataset data;
};

inline ItemDesign load_design(const fs::path& path) {
  const CsvTable t = read_csv(path);
  require_columns(t, {"occasion", "item", "difficulty_id"});
  std::map<std::pair<long, long>, long> cells;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const long occ = parse_int(t, r, 0);
    const long item = parse_int(t, r, 1);
    const long d = parse_int(t, r, 2);
    if (occ < 1) throw LoadError(t.path, t.line[r], 1, "occasion must be >= 1");
    if (item < 1) throw LoadError(t.path, t.line[r], 2, "item must be >= 1");
    if (d < 1) throw LoadError(t.path, t.line[r], 3, "difficulty_id must be >= 1");
    if (!cells.emplace(std::pair{occ, item}, d).second)
      throw LoadError(t.path, t.line[r], 0, "duplicate (occasion, item) pair");
  }
  std::vector<std::vector<int>> link;
  for (const auto& [key, d] : cells) {
    const auto [occ, item] = key;
    if (occ != static_cast<long>(link.size()) && occ != static_cast<long>(link.size()) + 1)
      throw LoadError(t.path, 0, 0, "occasions must be numbered 1..T without gaps");
    if (occ == static_cast<long>(link.size()) + 1) link.emplace_back();
    if (item != static_cast<long>(link.back().size()) + 1)
      throw LoadError(t.path, 0, 0,
                      "items of occasion " + std::to_string(occ) + " must be numbered 1..J without gaps");
    link.back().push_back(static_cast<int>(d - 1));
  }
  try {
    return ItemDesign(std::move(link));
  } catch (const InvalidDesign& e) {
    throw LoadError(t.path, 0, 0, e.what());
  }
}

inline Bundle load_bundle(const fs::path& dir) {
  Bundle b;
  b.design = load_design(dir / "design.csv");
  const int T = b.design.occasions();
  Dataset& data = b.data;

  const CsvTable cc = read_csv(dir / "cluster_covariates.csv");
  require_columns(cc, {"cluster_id"});
  data.cluster_covariate_names.assign(cc.header.begin() + 1, cc.header.end());
  std::map<std::string, std::size_t> cluster_index;
  for (std::size_t r = 0; r < cc.rows.size(); ++r) {
    Cluster c;
    c.id = cc.rows[r][0];
    if (c.id.empty()) throw LoadError(cc.path, cc.line[r], 1, "empty cluster_id");
    if (!cluster_index.emplace(c.id, data.clusters.size()).second)
      throw LoadError(cc.path, cc.line[r], 1, "duplicate cluster_id '" + c.id + "'");
    c.covariates.resize(static_cast<Eigen::Index>(cc.header.size() - 1));
    for (std::size_t k = 1; k < cc.header.size(); ++k)
      c.covariates(static_cast<Eigen::Index>(k - 1)) = parse_double(cc, r, k);
    data.clusters.push_back(std::move(c));
  }

  const CsvTable sc = read_csv(dir / "subject_covariates.csv");
  require_columns(sc, {"cluster_id", "subject_id", "occasion"});
  data.subject_covariate_names.assign(sc.header.begin() + 3, sc.header.end());
  const auto pi = static_cast<Eigen::Index>(data.subject_covariate_names.size());
  std::map<std::pair<std::string, std::string>, std::pair<std::size_t, std::size_t>> subject_index;
  std::vector<std::vector<std::vector<bool>>> seen;  // [h][i][t]
  seen.resize(data.clusters.size());
  for (std::size_t r = 0; r < sc.rows.size(); ++r) {
    const auto& row = sc.rows[r];
    const auto it = cluster_index.find(row[0]);
    if (it == cluster_index.end())
      throw LoadError(sc.path, sc.line[r], 1, "undeclared cluster_id '" + row[0] + "'");
    if (row[1].empty()) throw LoadError(sc.path, sc.line[r], 2, "empty subject_id");
    const long occ = parse_int(sc, r, 2);
    if (occ < 1 || occ > T)
      throw LoadError(sc.path, sc.line[r], 3, "occasion outside 1.." + std::to_string(T));
    const std::size_t h = it->second;
    auto [pos, inserted] = subject_index.try_emplace({row[0], row[1]}, h, data.clusters[h].subjects.size());
    if (inserted) {
      Subject s;
      s.id = row[1];
      s.covariates.assign(static_cast<std::size_t>(T), VectorXd::Zero(pi));
      s.responses.resize(static_cast<std::size_t>(T));
      for (int t = 0; t < T; ++t) s.responses[t].assign(static_cast<std::size_t>(b.design.items(t)), kMissing);
      data.clusters[h].subjects.push_back(std::move(s));
      seen[h].emplace_back(static_cast<std::size_t>(T), false);
    }
    const std::size_t i = pos->second.second;
    if (seen[h][i][static_cast<std::size_t>(occ - 1)])
      throw LoadError(sc.path, sc.line[r], 0, "duplicate covariate row for subject '" + row[1] + "'");
    seen[h][i][static_cast<std::size_t>(occ - 1)] = true;
    for (Eigen::Index k = 0; k < pi; ++k)
      data.clusters[h].subjects[i].covariates[static_cast<std::size_t>(occ - 1)](k) =
          parse_double(sc, r, static_cast<std::size_t>(3 + k));
  }
  for (std::size_t h = 0; h < data.clusters.size(); ++h)
    for (std::size_t i = 0; i < seen[h].size(); ++i)
      for (int t = 0; t < T; ++t)
        if (!seen[h][i][static_cast<std::size_t>(t)])
          throw LoadError(sc.path, 0, 0,
                          "subject '" + data.clusters[h].subjects[i].id + "' of cluster '" +
                              data.clusters[h].id + "' has no covariate row for occasion " +
                              std::to_string(t + 1));

  const CsvTable rt = read_csv(dir / "responses.csv");
  require_columns(rt, {"cluster_id", "subject_id", "occasion", "item", "response"});
  std::set<std::tuple<std::size_t, std::size_t, long, long>> answered;
  for (std::size_t r = 0; r < rt.rows.size(); ++r) {
    const auto& row = rt.rows[r];
    const auto it = subject_index.find({row[0], row[1]});
    if (it == subject_index.end())
      throw LoadError(rt.path, rt.line[r], 1,
                      "undeclared subject ('" + row[0] + "', '" + row[1] + "')");
    const long occ = parse_int(rt, r, 2);
    const long item = parse_int(rt, r, 3);
    if (occ < 1 || occ > T) throw LoadError(rt.path, rt.line[r], 3, "undeclared occasion");
    if (item < 1 || item > b.design.items(static_cast<int>(occ - 1)))
      throw LoadError(rt.path, rt.line[r], 4,
                      "undeclared item " + std::to_string(item) + " at occasion " + std::to_string(occ));
    const auto [h, i] = it->second;
    if (!answered.emplace(h, i, occ, item).second)
      throw LoadError(rt.path, rt.line[r], 0, "duplicate response row");
    const std::string& y = row[4];
    std::int8_t value;
    if (y.empty()) value = kMissing;
    else if (y == "0") value = 0;
    else if (y == "1") value = 1;
    else throw LoadError(rt.path, rt.line[r], 5, "response must be 0, 1 or empty, found '" + y + "'");
    data.clusters[h].subjects[i].responses[static_cast<std::size_t>(occ - 1)][static_cast<std::size_t>(item - 1)] = value;
  }
  for (const auto& c : data.clusters)
    if (c.subjects.empty())
      throw LoadError(sc.path, 0, 0, "cluster '" + c.id + "' has no subjects");
  return b;
}

inline void write_design(const fs::path& path, const ItemDesign& design) {
  auto out = open_out(path);
  out << "occasion,item,difficulty_id\n";
  for (int t = 0; t < design.occasions(); ++t)
    for (int j = 0; j < design.items(t); ++j)
      out << t + 1 << ',' << j + 1 << ',' << design.difficulty(t, j) + 1 << '\n';
}

inline void write_bundle(const fs::path& dir, const ItemDesign& design, const Dataset& data) {
  fs::create_directories(dir);
  write_design(dir / "design.csv", design);
  {
    auto out = open_out(dir / "cluster_covariates.csv");
    out << "cluster_id";
    for (const auto& n : data.cluster_covariate_names) out << ',' << csv_field(n);
    out << '\n';
    for (const auto& c : data.clusters) {
      out << csv_field(c.id);
      for (Eigen::Index k = 0; k < c.covariates.size(); ++k) out << ',' << fmt_exact(c.covariates(k));
      out << '\n';
    }
  }
  {
    auto out = open_out(dir / "subject_covariates.csv");
    out << "cluster_id,subject_id,occasion";
    for (const auto& n : data.subject_covariate_names) out << ',' << csv_field(n);
    out << '\n';
    for (const auto& c : data.clusters)
      for (const auto& s : c.subjects)
        for (std::size_t t = 0; t < s.covariates.size(); ++t) {
          out << csv_field(c.id) << ',' << csv_field(s.id) << ',' << t + 1;
          for (Eigen::Index k = 0; k < s.covariates[t].size(); ++k) out << ',' << fmt_exact(s.covariates[t](k));
          out << '\n';
        }
  }
  {
    auto out = open_out(dir / "responses.csv");
    out << "cluster_id,subject_id,occasion,item,response\n";
    for (const auto& c : data.clusters)
      for (const auto& s : c.subjects)
        for (std::size_t t = 0; t < s.responses.size(); ++t)
          for (std::size_t j = 0; j < s.responses[t].size(); ++j) {
            out << csv_field(c.id) << ',' << csv_field(s.id) << ',' << t + 1 << ',' << j + 1 << ',';
            if (s.responses[t][j] != kMissing) out << static_cast<int>(s.responses[t][j]);
            out << '\n';
          }
  }
}

inline void write_latent_truth(const fs::path& path, const Dataset& data, const LatentTruth& truth) {
  auto out = open_out(path);
  out << "cluster_id,subject_id,occasion,class,state\n";
  for (std::size_t h = 0; h < data.clusters.size(); ++h)
    for (std::size_t i = 0; i < data.clusters[h].subjects.size(); ++i)
      for (std::size_t t = 0; t < truth.states[h][i].size(); ++t)
        out << csv_field(data.clusters[h].id) << ',' << csv_field(data.clusters[h].subjects[i].id) << ','
            << t + 1 << ',' << truth.cluster_class[h] + 1 << ',' << truth.states[h][i][t] + 1 << '\n';
}

// ---------------------------------------------------------------------------
// Parameters as JSON: one array per block of {"index": [...], "value": x}
// entries, indices 1-based as in the printed parameter names.

inline json params_to_json(const Parameters& p) {
  const ModelShape& s = p.shape;
  json j = {{"k1", s.k1},
            {"k2", s.k2},
            {"occasions", s.occasions},
            {"difficulties", s.difficulties},
            {"cluster_covariates", s.cluster_covariates},
            {"subject_covariates", s.subject_covariates}};
  for (auto name : kBlockNames) j[std::string(name)] = json::array();
  std::vector<ParamRef> refs{{Block::Theta, {0, 0, 0}}};
  for (const auto& r : free_parameters(s)) refs.push_back(r);
  for (const auto& r : refs) {
    json idx = json::array();
    for (int i = 0; i < block_arity(r.block); ++i) idx.push_back(r.index[i] + 1);
    j[std::string(block_name(r.block))].push_back({{"index", idx}, {"value", get(p, r)}});
  }
  return j;
}

inline Parameters params_from_json(const json& j) {
  try {
    ModelShape s;
    s.k1 = j.at("k1").get<int>();
    s.k2 = j.at("k2").get<int>();
    s.occasions = j.at("occasions").get<int>();
    s.difficulties = j.at("difficulties").get<int>();
    s.cluster_covariates = j.value("cluster_covariates", 0);
    s.subject_covariates = j.value("subject_covariates", 0);
    if (s.k1 < 1 || s.k2 < 1 || s.occasions < 1 || s.difficulties < 1 || s.cluster_covariates < 0 ||
        s.subject_covariates < 0)
      throw InvalidArgument("invalid model dimensions in parameter document");
    Parameters p = Parameters::zeros(s);
    for (std::size_t b = 0; b < kBlockNames.size(); ++b) {
      const auto key = std::string(kBlockNames[b]);
      if (!j.contains(key)) continue;
      for (const auto& e : j.at(key)) {
        ParamRef r;
        r.block = static_cast<Block>(b);
        const auto& idx = e.at("index");
        if (static_cast<int>(idx.size()) != block_arity(r.block))
          throw InvalidArgument("wrong index arity in block " + key);
        for (int i = 0; i < block_arity(r.block); ++i) r.index[i] = idx.at(i).get<int>() - 1;
        if (!addresses(s, r)) throw InvalidArgument("index out of range: " + name(r));
        at(p, r) = e.at("value").get<double>();
      }
    }
    p.check_constraints();
    return p;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed parameter document: ") + e.what());
  }
}

inline json fit_to_json(const FitResult& r, std::size_t n_subjects) {
  return {{"k1", r.params.shape.k1},
          {"k2", r.params.shape.k2},
          {"loglik", r.loglik},
          {"n_params", r.n_params},
          {"bic", r.bic},
          {"n_subjects", n_subjects},
          {"converged", r.converged},
          {"start_id", r.start_id},
          {"iterations", r.iterations},
          {"warnings", r.warnings},
          {"starts", r.start_log},
          {"trace", r.trace},
          {"parameters", params_to_json(r.params)}};
}

inline FitResult fit_from_json(const json& j) {
  try {
    FitResult r;
    r.params = params_from_json(j.at("parameters"));
    r.loglik = j.at("loglik").get<double>();
    r.n_params = j.value("n_params", count_parameters(r.params.shape));
    r.bic = j.value("bic", 0.0);
    r.converged = j.value("converged", false);
    r.start_id = j.value("start_id", 0);
    r.iterations = j.value("iterations", 0);
    if (j.contains("trace")) r.trace = j.at("trace").get<std::vector<double>>();
    return r;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed model document: ") + e.what());
  }
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string(), 0, 0, "cannot open file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw LoadError(path.string(), 0, 0, e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Reports

inline void write_trace(const fs::path& path, const std::vector<double>& trace) {
  auto out = open_out(path);
  out << "iteration,loglik\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out << i << ',' << fmt6(trace[i]) << '\n';
}

inline void write_grid(const fs::path& path, const GridResult& g) {
  auto out = open_out(path);
  out << "k1,k2,loglik,bic,np\n";
  for (const auto& r : g.rows) {
    out << r.k1 << ',' << r.k2 << ',';
    if (r.error.empty()) out << fmt6(r.loglik) << ',' << fmt6(r.bic);
    else out << ',';
    out << ',' << r.n_params << '\n';
  }
}

inline void write_se_report(const fs::path& path, const std::vector<StandardError>& rows) {
  auto out = open_out(path);
  out << "param,estimate,se,wald_p\n";
  for (const auto& r : rows) {
    out << name(r.param) << ',' << fmt6(r.estimate) << ',';
    if (r.se) out << fmt6(*r.se);
    out << ',';
    if (r.wald_p) out << fmt6(*r.wald_p);
    out << '\n';
  }
}

inline void write_decoding(const fs::path& states_path, const fs::path& classes_path,
                           const Dataset& data, const Decoding& d) {
  {
    auto out = open_out(states_path);
    out << "cluster_id,subject_id,occasion,map_state\n";
    for (std::size_t h = 0; h < data.clusters.size(); ++h)
      for (std::size_t i = 0; i < data.clusters[h].subjects.size(); ++i)
        for (std::size_t t = 0; t < d.states[h][i].size(); ++t)
          out << csv_field(data.clusters[h].id) << ',' << csv_field(data.clusters[h].subjects[i].id) << ','
              << t + 1 << ',' << d.states[h][i][t] + 1 << '\n';
  }
  auto out = open_out(classes_path);
  out << "cluster_id,map_class\n";
  for (std::size_t h = 0; h < data.clusters.size(); ++h)
    out << csv_field(data.clusters[h].id) << ',' << d.cluster_class[h] + 1 << '\n';
}

inline void write_transitions(const fs::path& path, const std::vector<TransitionTable>& tables) {
  auto out = open_out(path);
  out << "group,from_occasion,to_occasion,from_class,to_class,count,probability,empty_row\n";
  for (const auto& tab : tables)
    for (Eigen::Index r = 0; r < tab.probs.rows(); ++r)
      for (Eigen::Index c = 0; c < tab.probs.cols(); ++c)
        out << csv_field(tab.group) << ',' << tab.from_occasion + 1 << ',' << tab.from_occasion + 2 << ','
            << r + 1 << ',' << c + 1 << ',' << fmt6(tab.counts(r, c)) << ',' << fmt6(tab.probs(r, c)) << ','
            << (tab.empty_row[static_cast<std::size_t>(r)] ? 1 : 0) << '\n';
}

// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
inline std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return "";
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace lmrasch::io
