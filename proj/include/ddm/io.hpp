#pragma once

// JSON and CSV persistence: lattices, drivers, representing pairs, deviation
// processes, payoffs and the reports. Doubles are written in shortest
// round-trip form so outputs are bit-stable.

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>

#include "json.hpp"

#include "ddm/deviation.hpp"
#include "ddm/drivers.hpp"
#include "ddm/errors.hpp"
#include "ddm/lattice.hpp"
#include "ddm/repr.hpp"
#include "ddm/sharing.hpp"

namespace ddm {

using json = nlohmann::ordered_json;

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Lattice

inline json noise_to_json(const NoiseModel& noise) {
  json j;
  j["brownian_dim"] = noise.brownian_dim;
  j["jumps"] = {{"marks", noise.jumps.marks}, {"intensities", noise.jumps.intensities}};
  return j;
}

inline json lattice_to_json(const Lattice& lat) {
  json j;
  j["grid"] = {{"times", lat.grid().times()}};
  j["noise"] = noise_to_json(lat.noise());
  j["branching"] = lat.branching();
  json nodes = json::array();
  json edges = json::array();
  for (std::size_t l = 0; l <= lat.steps(); ++l) {
    for (std::size_t k = 0; k < lat.level_size(l); ++k) {
      const NodeState st = lat.state(l, k);
      json node = {{"id", lat.node_id(l, k)}, {"level", l}, {"index", k}};
      node["parent"] = l == 0 ? json(nullptr) : json(lat.node_id(l - 1, lat.parent(k)));
      node["W"] = st.W;
      node["jumps"] = st.jumps;
      nodes.push_back(std::move(node));
      if (l == lat.steps()) continue;
      const auto& table = lat.outcomes(l);
      for (std::size_t c = 0; c < table.size(); ++c) {
        edges.push_back({{"from", lat.node_id(l, k)},
                         {"to", lat.node_id(l + 1, lat.child(k, c))},
                         {"prob", table[c].prob},
                         {"dW", table[c].dW},
                         {"jump", table[c].jump}});
      }
    }
  }
  j["nodes"] = std::move(nodes);
  j["edges"] = std::move(edges);
  return j;
}

// ---------------------------------------------------------------------------
// Drivers and solver settings

inline json solver_to_json(const SolverConfig& cfg) {
  const char* init = cfg.init == InitRule::Half ? "half" : cfg.init == InitRule::Zero ? "zero" : "full";
  return {{"tolerance", cfg.tolerance},
          {"step_tolerance", cfg.step_tolerance},
          {"max_iterations", cfg.max_iterations},
          {"window", cfg.window},
          {"init", init},
          {"closed_forms", cfg.closed_forms}};
}

inline SolverConfig solver_from_json(const json& j) {
  SolverConfig cfg;
  require(j.is_object(), "solver block must be an object");
  cfg.tolerance = j.value("tolerance", cfg.tolerance);
  cfg.step_tolerance = j.value("step_tolerance", cfg.step_tolerance);
  cfg.max_iterations = j.value("max_iterations", cfg.max_iterations);
  cfg.window = j.value("window", cfg.window);
  cfg.closed_forms = j.value("closed_forms", cfg.closed_forms);
  const std::string init = j.value("init", std::string("half"));
  if (init == "half") cfg.init = InitRule::Half;
  else if (init == "zero") cfg.init = InitRule::Zero;
  else if (init == "full") cfg.init = InitRule::Full;
  else throw ValidationError("unknown solver init rule '" + init + "'");
  cfg.validate();
  return cfg;
}

inline json driver_to_json(const DriverSpec& g) {
  if (auto* v = g.as<VarianceDriver>()) return {{"kind", "variance"}, {"alpha", v->alpha}};
  if (auto* v = g.as<NormCDDriver>()) return {{"kind", "norm_cd"}, {"c", v->c}, {"d", v->d}};
  if (auto* v = g.as<CVaRJumpDriver>()) return {{"kind", "cvar_jump"}, {"a", v->a}};
  if (auto* v = g.as<ScaledDriver>()) return {{"kind", "scaled"}, {"gamma", v->gamma}, {"base", driver_to_json(*v->base)}};
  if (auto* v = g.as<InfConvDriver>())
    return {{"kind", "infconv"}, {"a", driver_to_json(*v->a)}, {"b", driver_to_json(*v->b)},
            {"solver", solver_to_json(v->solver)}};
  throw ValidationError("custom drivers cannot be serialized");
}

namespace detail {

inline double number_field(const json& j, const char* key) {
  require(j.contains(key) && j.at(key).is_number(), std::string("driver field '") + key + "' must be a number");
  return j.at(key).get<double>();
}

}  // namespace detail

inline DriverSpec driver_from_json(const json& j) {
  require(j.is_object() && j.contains("kind") && j.at("kind").is_string(), "driver needs a string 'kind'");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "variance") return DriverSpec::variance(detail::number_field(j, "alpha"));
  if (kind == "norm_cd") return DriverSpec::norm_cd(detail::number_field(j, "c"), detail::number_field(j, "d"));
  if (kind == "cvar_jump") return DriverSpec::cvar_jump(detail::number_field(j, "a"));
  if (kind == "scaled") {
    require(j.contains("base"), "scaled driver needs a 'base'");
    return DriverSpec::scaled(detail::number_field(j, "gamma"), driver_from_json(j.at("base")));
  }
  if (kind == "infconv") {
    require(j.contains("a") && j.contains("b"), "infconv driver needs 'a' and 'b'");
    const SolverConfig cfg = j.contains("solver") ? solver_from_json(j.at("solver")) : SolverConfig{};
    return DriverSpec::infconv(driver_from_json(j.at("a")), driver_from_json(j.at("b")), cfg);
  }
  throw ValidationError("unknown driver kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Pairs, processes, payoffs

inline json pair_to_json(const Lattice& lat, const RepresentingPair& pair) {
  json j;
  j["mean"] = pair.mean;
  j["max_residual"] = pair.max_residual();
  j["singular_nodes"] = pair.singular_nodes;
  json nodes = json::array();
  for (std::size_t l = 0; l < pair.steps.size(); ++l) {
    for (std::size_t k = 0; k < pair.steps[l].size(); ++k) {
      nodes.push_back({{"node", lat.node_id(l, k)},
                       {"H", pair.steps[l][k].H},
                       {"Htilde", pair.steps[l][k].Htilde},
                       {"residual", pair.residuals[l][k]}});
    }
  }
  j["nodes"] = std::move(nodes);
  return j;
}

inline std::string process_csv(const Lattice& lat, const AdaptedProcess& p) {
  std::string out = "level,node,value\n";
  for (std::size_t l = 0; l < p.levels.size(); ++l)
    for (std::size_t k = 0; k < p.levels[l].size(); ++k)
      out += std::to_string(l) + "," + std::to_string(lat.node_id(l, k)) + "," + format_double(p.levels[l][k]) + "\n";
  return out;
}

inline std::string payoff_csv(const RandomVariable& X) {
  std::string out = "leaf,value\n";
  for (std::size_t i = 0; i < X.size(); ++i) out += std::to_string(i) + "," + format_double(X[i]) + "\n";
  return out;
}

/// Parse `leaf,value` rows; every leaf must appear exactly once.
inline RandomVariable payoff_from_csv(std::istream& in, std::size_t leaves) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "payoff CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "leaf,value", "payoff CSV header must be 'leaf,value'");
  RandomVariable X{Vec(leaves, 0.0)};
  std::vector<char> seen(leaves, 0);
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    require(comma != std::string::npos, "payoff CSV row " + std::to_string(row) + " lacks a comma");
    std::size_t leaf = 0;
    double value = 0.0;
    const char* b = line.data();
    auto r1 = std::from_chars(b, b + comma, leaf);
    auto r2 = std::from_chars(b + comma + 1, b + line.size(), value);
    require(r1.ec == std::errc() && r1.ptr == b + comma && r2.ec == std::errc() && r2.ptr == b + line.size(),
            "payoff CSV row " + std::to_string(row) + " is malformed");
    require(leaf < leaves, "payoff CSV leaf index out of range at row " + std::to_string(row));
    require(!seen[leaf], "payoff CSV repeats leaf " + std::to_string(leaf));
    require(std::isfinite(value), "payoff CSV value must be finite");
    seen[leaf] = 1;
    X.values[leaf] = value;
  }
  for (std::size_t i = 0; i < leaves; ++i) require(seen[i], "payoff CSV is missing leaf " + std::to_string(i));
  return X;
}

inline RandomVariable payoff_from_csv_file(const std::string& path, std::size_t leaves) {
  std::ifstream in(path);
  require(in.good(), "cannot open payoff file '" + path + "'");
  return payoff_from_csv(in, leaves);
}

// ---------------------------------------------------------------------------
// Reports

inline json check_to_json(const DriverCheck& c) {
  return {{"pass", c.pass}, {"witness", c.witness}, {"detail", c.detail}};
}

inline json validity_to_json(const ValidityReport& r) {
  return {{"nonnegativity", check_to_json(r.nonnegativity)},
          {"zero_iff_zero", check_to_json(r.zero_iff_zero)},
          {"convexity", check_to_json(r.convexity)},
          {"subgradient", check_to_json(r.subgradient)},
          {"samples", r.samples},
          {"all_pass", r.all_pass()}};
}

inline json axiom_to_json(const AxiomResult& r) {
  return {{"pass", r.pass}, {"worst", r.worst}, {"trials", r.trials}, {"witness", r.witness},
          {"witness_seed", r.witness_seed}};
}

inline json axioms_to_json(const AxiomReport& r) {
  return {{"D1", axiom_to_json(r.d1)},       {"D2", axiom_to_json(r.d2)},
          {"D2_only_if", axiom_to_json(r.d2_only_if)}, {"D3", axiom_to_json(r.d3)},
          {"D4_proxy", axiom_to_json(r.d4)}, {"D5", axiom_to_json(r.d5)},
          {"local", axiom_to_json(r.local)}, {"samples", r.samples},
          {"all_pass", r.all_pass()}};
}

inline json distribution_to_json(const Distribution& d) {
  json atoms = json::array();
  for (const Atom& a : d.atoms) atoms.push_back({a.value, a.prob});
  return atoms;
}

inline json law_probe_to_json(const LawProbeReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries) {
    json j = {{"label", e.label},     {"analytic", e.analytic}, {"continuum_only", e.continuum_only},
              {"D0_x", e.d0_x},       {"D0_y", e.d0_y},         {"gap", e.gap}};
    if (!e.analytic) {
      j["law_distance"] = e.law_distance;
      j["law_x"] = distribution_to_json(e.law_x);
      j["law_y"] = distribution_to_json(e.law_y);
    }
    entries.push_back(std::move(j));
  }
  json indep = json::array();
  for (const auto& e : r.independence) indep.push_back({{"label", e.label}, {"level", e.level}, {"spread", e.spread}});
  return {{"entries", entries}, {"independence", indep}, {"max_law_distance", r.max_law_distance},
          {"max_gap", r.max_gap}};
}

inline json sharing_to_json(const SharingSolution& s) {
  return {{"price", s.price},
          {"delta_UA", s.delta_ua},
          {"delta_UB", s.delta_ub},
          {"certificate_gap", s.certificate_gap},
          {"attained", s.attained},
          {"unattained_nodes", s.unattained_nodes},
          {"infconv_D0", s.infconv_D.d0()},
          {"DA0", s.d0_a},
          {"DB0", s.d0_b},
          {"residual", s.residual}};
}

inline std::string argmins_csv(const Lattice& lat, const SharingSolution& s) {
  std::string out = "level,node";
  const std::size_t d = lat.brownian_dim(), m = lat.jump_count();
  for (std::size_t i = 0; i < d; ++i) out += ",z" + std::to_string(i);
  for (std::size_t j = 0; j < m; ++j) out += ",ztilde" + std::to_string(j);
  out += ",value,gap\n";
  for (std::size_t l = 0; l < s.argmins.size(); ++l) {
    for (std::size_t k = 0; k < s.argmins[l].size(); ++k) {
      const auto& a = s.argmins[l][k];
      out += std::to_string(l) + "," + std::to_string(lat.node_id(l, k));
      for (double v : a.z) out += "," + format_double(v);
      for (double v : a.ztilde) out += "," + format_double(v);
      out += "," + format_double(a.value) + "," + format_double(a.gap) + "\n";
    }
  }
  return out;
}

inline json residual_to_json(const ResidualReport& r) {
  return {{"skipped", r.skipped},         {"premise_a", r.premise_a},     {"premise_b", r.premise_b},
          {"active_nodes", r.active_nodes}, {"interior_nodes", r.interior_nodes}, {"zero_nodes", r.zero_nodes},
          {"full_nodes", r.full_nodes},   {"pass", r.pass},               {"note", r.note}};
}

}  // namespace ddm
