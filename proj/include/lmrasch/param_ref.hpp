#pragma once

#include <array>
#include <charconv>
#include <string>
#include <string_view>
#include <vector>

#include "lmrasch/model_params.hpp"

// Addressing of individual scalar parameters. Indices are the 0-based
// mathematical indices (class u, state v, occasion t, covariate k); the
// printed names are 1-based, e.g. delta1[2] is the first free cut intercept
// and eta1[2,1,3] is the transition intercept into occasion 2 from state 1
// for the cut between states 2 and 3.

namespace lmrasch {

enum class Block { Theta, Beta, Gamma0, Gamma1, Delta0, Delta1, Delta2, Eta0, Eta1, Eta2 };

struct ParamRef {
  Block block = Block::Beta;
  std::array<int, 3> index{};

  bool operator==(const ParamRef&) const = default;
};

inline constexpr std::array<std::string_view, 10> kBlockNames = {
    "theta", "beta", "gamma0", "gamma1", "delta0", "delta1", "delta2", "eta0", "eta1", "eta2"};

inline int block_arity(Block b) {
  switch (b) {
    case Block::Gamma1:
    case Block::Eta0:
    case Block::Eta2:
      return 2;
    case Block::Eta1:
      return 3;
    default:
      return 1;
  }
}

inline std::string_view block_name(Block b) { return kBlockNames[static_cast<std::size_t>(b)]; }

inline std::string name(const ParamRef& r) {
  std::string out(block_name(r.block));
  out += '[';
  for (int i = 0; i < block_arity(r.block); ++i) {
    if (i) out += ',';
    out += std::to_string(r.index[i] + 1);
  }
  return out + ']';
}

// Whether the reference addresses an existing entry of a model with this shape.
inline bool addresses(const ModelShape& s, const ParamRef& r) {
  const auto [a, b, c] = r.index;
  const bool chain = s.has_chain();
  const bool t_ok = a >= 1 && a < s.occasions;
  switch (r.block) {
    case Block::Theta: return a >= 0 && a < s.k2;
    case Block::Beta: return a >= 0 && a < s.difficulties;
    case Block::Gamma0: return a >= 1 && a < s.k1;
    case Block::Gamma1: return a >= 1 && a < s.k1 && b >= 0 && b < s.cluster_covariates;
    case Block::Delta0: return chain && a >= 1 && a < s.k1;
    case Block::Delta1: return chain && a >= 1 && a < s.k2;
    case Block::Delta2: return chain && a >= 0 && a < s.subject_covariates;
    case Block::Eta0: return chain && t_ok && b >= 1 && b < s.k1;
    case Block::Eta1: return chain && t_ok && b >= 0 && b < s.k2 && c >= 1 && c < s.k2;
    case Block::Eta2: return chain && t_ok && b >= 0 && b < s.subject_covariates;
  }
  return false;
}

inline ParamRef parse_param(std::string_view text) {
  const auto open = text.find('[');
  if (open == std::string_view::npos || text.back() != ']')
    throw InvalidArgument("malformed parameter name: " + std::string(text));
  const auto head = text.substr(0, open);
  ParamRef r;
  bool found = false;
  for (std::size_t i = 0; i < kBlockNames.size(); ++i)
    if (kBlockNames[i] == head) {
      r.block = static_cast<Block>(i);
      found = true;
    }
  if (!found) throw InvalidArgument("unknown parameter block: " + std::string(head));
  auto body = text.substr(open + 1, text.size() - open - 2);
  int n = 0;
  while (!body.empty()) {
    const auto comma = body.find(',');
    const auto tok = body.substr(0, comma);
    int value = 0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size() || n >= 3)
      throw InvalidArgument("malformed parameter index: " + std::string(text));
    r.index[n++] = value - 1;
    body = comma == std::string_view::npos ? std::string_view{} : body.substr(comma + 1);
  }
  if (n != block_arity(r.block))
    throw InvalidArgument("wrong number of indices for " + std::string(head));
  return r;
}

inline double& at(Parameters& p, const ParamRef& r) {
  if (!addresses(p.shape, r)) throw InvalidArgument("parameter " + name(r) + " does not exist");
  const auto [a, b, c] = r.index;
  switch (r.block) {
    case Block::Theta: return p.theta(a);
    case Block::Beta: return p.beta(a);
    case Block::Gamma0: return p.gamma0(a - 1);
    case Block::Gamma1: return p.gamma1(a - 1, b);
    case Block::Delta0: return p.delta0(a - 1);
    case Block::Delta1: return p.delta1(a - 1);
    case Block::Delta2: return p.delta2(a);
    case Block::Eta0: return p.eta0(a - 1, b - 1);
    case Block::Eta1: return p.eta1[static_cast<std::size_t>(a - 1)](b, c - 1);
    case Block::Eta2: return p.eta2(a - 1, b);
  }
  throw InvalidArgument("unreachable parameter block");
}

inline double get(const Parameters& p, const ParamRef& r) {
  return at(const_cast<Parameters&>(p), r);
}

// Every free scalar of the model, in a fixed order; the size equals
// count_parameters(shape).
inline std::vector<ParamRef> free_parameters(const ModelShape& s) {
  std::vector<ParamRef> out;
  auto add = [&](Block b, int x, int y = 0, int z = 0) { out.push_back({b, {x, y, z}}); };
  for (int v = 1; v < s.k2; ++v) add(Block::Theta, v);
  for (int d = 0; d < s.difficulties; ++d) add(Block::Beta, d);
  for (int u = 1; u < s.k1; ++u) add(Block::Gamma0, u);
  for (int u = 1; u < s.k1; ++u)
    for (int k = 0; k < s.cluster_covariates; ++k) add(Block::Gamma1, u, k);
  if (!s.has_chain()) return out;
  for (int u = 1; u < s.k1; ++u) add(Block::Delta0, u);
  for (int v = 1; v < s.k2; ++v) add(Block::Delta1, v);
  for (int k = 0; k < s.subject_covariates; ++k) add(Block::Delta2, k);
  for (int t = 1; t < s.occasions; ++t)
    for (int u = 1; u < s.k1; ++u) add(Block::Eta0, t, u);
  for (int t = 1; t < s.occasions; ++t)
    for (int v0 = 0; v0 < s.k2; ++v0)
      for (int v1 = 1; v1 < s.k2; ++v1) add(Block::Eta1, t, v0, v1);
  for (int t = 1; t < s.occasions; ++t)
    for (int k = 0; k < s.subject_covariates; ++k) add(Block::Eta2, t, k);
  return out;
}

// Parameters that can be pinned at zero for a profile refit. Abilities and
// the non-leading cut intercepts are excluded: pinning them at zero would
// collide with the ordering constraints.
inline bool profileable(const ParamRef& r) {
  switch (r.block) {
    case Block::Theta: return false;
    case Block::Delta1: return r.index[0] == 1;
    case Block::Eta1: return r.index[2] == 1;
    default: return true;
  }
}

}  // namespace lmrasch
