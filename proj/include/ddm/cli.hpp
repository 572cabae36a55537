#pragma once

// Batch runner behind the `ddm` executable. A run loads and validates the whole
// JSON config, computes everything in memory and only then writes artifacts,
// so a rejected config leaves the output directory untouched.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ddm/deviation.hpp"
#include "ddm/drivers.hpp"
#include "ddm/errors.hpp"
#include "ddm/expression.hpp"
#include "ddm/io.hpp"
#include "ddm/lattice.hpp"
#include "ddm/repr.hpp"
#include "ddm/sharing.hpp"

namespace ddm::cli {

enum ExitCode { Ok = 0, Invalid = 1, NotConverged = 2, Internal = 3 };

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> names{"build", "deviation", "axioms", "law-probe", "share", "check-driver"};
  return names;
}

struct Artifact {
  std::string name;
  std::string contents;
};

struct RunResult {
  int exit_code = Ok;
  std::vector<Artifact> artifacts;
  std::string summary;  // the summary.json text, also among the artifacts
  std::string message;  // diagnostic for stderr
};

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

// ---------------------------------------------------------------------------
// Config loading

struct Payoff {
  RandomVariable values;
  std::optional<AnalyticPayoff> analytic;
};

struct Config {
  json raw;
  std::filesystem::path base_dir;
  std::optional<Lattice> lattice;
  std::map<std::string, Payoff> payoffs;
  std::map<std::string, DriverSpec> drivers;
  SolverConfig solver;
  std::uint64_t seed = 0;
  std::string output = "out";
};

namespace detail {

inline const json& field(const json& j, const std::string& key, const std::string& where) {
  require(j.is_object() && j.contains(key), where + " needs '" + key + "'");
  return j.at(key);
}

template <class T>
T get(const json& j, const std::string& key, const std::string& where) {
  const json& v = field(j, key, where);
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ValidationError(where + ": field '" + key + "' has the wrong type");
  }
}

inline std::vector<Vec> matrix(const json& j, const std::string& where) {
  require(j.is_array(), where + " must be an array of arrays");
  std::vector<Vec> out;
  for (const json& row : j) {
    require(row.is_array(), where + " must be an array of arrays");
    Vec r;
    for (const json& v : row) {
      require(v.is_number(), where + " must hold numbers");
      r.push_back(v.get<double>());
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline Lattice lattice_from_json(const json& j) {
  const std::string where = "lattice";
  require(j.is_object(), "lattice block must be an object");
  TimeGrid grid = TimeGrid::uniform(1.0, 1);
  if (j.contains("times")) {
    Vec t;
    for (const json& v : j.at("times")) {
      require(v.is_number(), "lattice times must be numbers");
      t.push_back(v.get<double>());
    }
    grid = TimeGrid(std::move(t));
  } else {
    const double T = get<double>(j, "horizon", where);
    const auto n = get<std::int64_t>(j, "steps", where);
    require(n >= 1, "lattice steps must be at least 1");
    grid = TimeGrid::uniform(T, static_cast<std::size_t>(n));
  }
  NoiseModel noise;
  const auto d = j.value("brownian_dim", std::int64_t{1});
  require(d >= 0, "brownian_dim must be nonnegative");
  noise.brownian_dim = static_cast<std::size_t>(d);
  if (j.contains("jumps")) {
    const json& jm = j.at("jumps");
    noise.jumps.marks = matrix(field(jm, "marks", "jumps"), "jump marks");
    for (const json& v : field(jm, "intensities", "jumps")) {
      require(v.is_number(), "jump intensities must be numbers");
      noise.jumps.intensities.push_back(v.get<double>());
    }
  }
  const auto max_nodes = j.value("max_nodes", std::int64_t{1} << 22);
  require(max_nodes >= 1, "max_nodes must be positive");
  return build_lattice(std::move(grid), std::move(noise), static_cast<std::size_t>(max_nodes));
}

inline Payoff payoff_from_json(const json& j, const std::string& name, const Lattice& lat,
                               const std::filesystem::path& base) {
  const std::string where = "payoff '" + name + "'";
  require(j.is_object(), where + " must be an object");
  const int sources = int(j.contains("csv")) + int(j.contains("expression")) + int(j.contains("analytic"));
  require(sources == 1, where + " needs exactly one of 'csv', 'expression', 'analytic'");
  Payoff p;
  if (j.contains("csv")) {
    std::filesystem::path path = get<std::string>(j, "csv", where);
    if (path.is_relative()) path = base / path;
    p.values = payoff_from_csv_file(path.string(), lat.leaf_count());
  } else if (j.contains("expression")) {
    p.values = payoff_from_expression(lat, get<std::string>(j, "expression", where));
  } else {
    const json& a = j.at("analytic");
    AnalyticPayoff ap{lat.grid(), matrix(field(a, "h", where), where + " h"), {}};
    if (a.contains("htilde")) {
      ap.htilde = matrix(a.at("htilde"), where + " htilde");
    } else {
      ap.htilde.assign(ap.h.size(), Vec(lat.jump_count(), 0.0));
    }
    RepresentingPair pair = lift_analytic(ap, lat);
    pair.mean = a.value("mean", 0.0);
    p.values = assemble(lat, pair);
    p.analytic = std::move(ap);
  }
  return p;
}

}  // namespace detail

inline Config load_config(const json& raw, const std::filesystem::path& base_dir, const RunOptions& opt) {
  require(raw.is_object(), "config must be a JSON object");
  Config cfg;
  cfg.raw = raw;
  cfg.base_dir = base_dir;
  if (raw.contains("seed")) {
    require(raw.at("seed").is_number_unsigned(), "seed must be a nonnegative integer");
    cfg.seed = raw.at("seed").get<std::uint64_t>();
  }
  if (opt.seed) cfg.seed = *opt.seed;
  if (raw.contains("output")) cfg.output = detail::get<std::string>(raw, "output", "config");
  if (opt.out_dir) cfg.output = *opt.out_dir;
  if (raw.contains("solver")) cfg.solver = solver_from_json(raw.at("solver"));

  cfg.lattice.emplace(detail::lattice_from_json(detail::field(raw, "lattice", "config")));
  if (raw.contains("payoffs")) {
    require(raw.at("payoffs").is_object(), "payoffs must be an object keyed by name");
    for (const auto& [name, j] : raw.at("payoffs").items())
      cfg.payoffs.emplace(name, detail::payoff_from_json(j, name, *cfg.lattice, base_dir));
  }
  if (raw.contains("drivers")) {
    require(raw.at("drivers").is_object(), "drivers must be an object keyed by name");
    for (const auto& [name, j] : raw.at("drivers").items()) {
      const DriverSpec g = driver_from_json(j);
      if (auto* c = g.as<CVaRJumpDriver>())
        require(c->a < cfg.lattice->jumps().total(), "driver '" + name + "': CVaR level must be below nu's mass");
      cfg.drivers.emplace(name, g);
    }
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Commands

namespace detail {

inline const json& command_block(const Config& cfg, const std::string& command) {
  static const json empty = json::object();
  if (!cfg.raw.contains("commands")) return empty;
  const json& c = cfg.raw.at("commands");
  require(c.is_object(), "commands must be an object keyed by command name");
  if (!c.contains(command)) return empty;
  require(c.at(command).is_object(), "command block '" + command + "' must be an object");
  return c.at(command);
}

inline const Payoff& payoff(const Config& cfg, const json& block, const std::string& key) {
  const auto name = get<std::string>(block, key, "command block");
  const auto it = cfg.payoffs.find(name);
  require(it != cfg.payoffs.end(), "unknown payoff '" + name + "'");
  return it->second;
}

inline const DriverSpec& driver(const Config& cfg, const json& block, const std::string& key) {
  const auto name = get<std::string>(block, key, "command block");
  const auto it = cfg.drivers.find(name);
  require(it != cfg.drivers.end(), "unknown driver '" + name + "'");
  return it->second;
}

inline std::size_t count(const json& block, const std::string& key, std::size_t fallback) {
  if (!block.contains(key)) return fallback;
  require(block.at(key).is_number_unsigned(), "'" + key + "' must be a nonnegative integer");
  return block.at(key).get<std::size_t>();
}

inline json check_json(const ProcessCheck& pc) {
  return {{"min_value", pc.min_value},
          {"max_terminal", pc.max_terminal},
          {"max_supermartingale_violation", pc.max_supermartingale_violation},
          {"ok", pc.ok()}};
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline RunResult finish(json summary, std::vector<Artifact> extra, int code = Ok) {
  RunResult r;
  r.exit_code = code;
  r.summary = dump(summary);
  r.artifacts = std::move(extra);
  r.artifacts.push_back({"summary.json", r.summary});
  return r;
}

inline RunResult run_build(const Config& cfg) {
  const Lattice& lat = *cfg.lattice;
  json summary = {{"command", "build"},
                  {"steps", lat.steps()},
                  {"branching", lat.branching()},
                  {"leaves", lat.leaf_count()},
                  {"nodes", lat.node_count()}};
  return finish(summary, {{"lattice.json", dump(lattice_to_json(lat))}});
}

inline RunResult run_deviation(const Config& cfg) {
  const Lattice& lat = *cfg.lattice;
  const json& block = command_block(cfg, "deviation");
  const Payoff& X = payoff(cfg, block, "payoff");
  const DriverSpec& g = driver(cfg, block, "driver");

  std::vector<std::vector<std::size_t>> partitions;
  if (block.contains("partitions")) {
    for (const json& p : block.at("partitions")) partitions.push_back(p.get<std::vector<std::size_t>>());
  } else {
    std::mt19937_64 rng(cfg.seed);
    for (std::size_t r = 0; r < count(block, "random_partitions", 3); ++r)
      partitions.push_back(random_partition(lat.steps(), rng));
  }
  for (const auto& p : partitions) check_partition(lat, p);

  const RepresentingPair pair = represent(lat, X.values);
  const DeviationProcess D = evaluate(lat, g, pair, block.at("payoff").get<std::string>());
  double gap = 0.0;
  json parts = json::array();
  for (const auto& p : partitions) {
    const auto Dr = evaluate_recursive(lat, g, X.values, p);
    double gp = 0.0;
    for (std::size_t l = 0; l <= lat.steps(); ++l)
      for (std::size_t k = 0; k < lat.level_size(l); ++k)
        gp = std::max(gp, std::abs(Dr.values.levels[l][k] - D.values.levels[l][k]));
    parts.push_back({{"partition", p}, {"D0", Dr.d0()}, {"max_gap", gp}});
    gap = std::max(gap, gp);
  }
  json summary = {{"command", "deviation"},
                  {"payoff", block.at("payoff")},
                  {"driver", driver_to_json(g)},
                  {"D0", D.d0()},
                  {"mean", pair.mean},
                  {"U0", pair.mean - D.d0()},
                  {"max_residual", pair.max_residual()},
                  {"recursion", parts},
                  {"recursion_max_gap", gap},
                  {"process_check", check_json(check_process(lat, D))}};
  return finish(summary, {{"deviation.csv", process_csv(lat, D.values)},
                          {"pair.json", dump(pair_to_json(lat, pair))}});
}

inline std::vector<RandomVariable> random_payoffs(const Lattice& lat, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<RandomVariable> out(n, RandomVariable{Vec(lat.leaf_count())});
  for (auto& X : out)
    for (double& v : X.values) v = normal(rng);
  return out;
}

inline RunResult run_axioms(const Config& cfg) {
  const Lattice& lat = *cfg.lattice;
  const json& block = command_block(cfg, "axioms");
  const DriverSpec& g = driver(cfg, block, "driver");
  std::vector<RandomVariable> samples;
  json names = json::array();
  if (block.contains("samples")) {
    for (const json& n : block.at("samples")) {
      const json one = {{"p", n}};
      samples.push_back(payoff(cfg, one, "p").values);
      names.push_back(n);
    }
  }
  const std::size_t extra = count(block, "random_samples", samples.empty() ? 4 : 0);
  for (auto& X : random_payoffs(lat, extra, cfg.seed ^ 0x9e3779b97f4a7c15ULL)) samples.push_back(std::move(X));
  AxiomOptions opt;
  opt.mixtures = count(block, "mixtures", opt.mixtures);
  opt.partitions = count(block, "partitions", opt.partitions);
  opt.local_splits = count(block, "local_splits", opt.local_splits);
  const AxiomReport rep = axiom_report(lat, g, samples, cfg.seed, opt);
  json summary = {{"command", "axioms"},
                  {"driver", driver_to_json(g)},
                  {"named_samples", names},
                  {"random_samples", extra},
                  {"seed", cfg.seed},
                  {"report", axioms_to_json(rep)}};
  return finish(summary, {{"axioms.json", dump(axioms_to_json(rep))}});
}

inline RunResult run_law_probe(const Config& cfg) {
  const Lattice& lat = *cfg.lattice;
  const json& block = command_block(cfg, "law-probe");
  const DriverSpec& g = driver(cfg, block, "driver");
  std::vector<LatticePair> pairs;
  std::vector<AnalyticPair> analytic;
  std::vector<std::pair<std::string, std::size_t>> independence;
  if (block.contains("pairs")) {
    for (const json& p : block.at("pairs")) {
      const std::string label = p.value("label", get<std::string>(p, "x", "pair") + "~" + get<std::string>(p, "y", "pair"));
      pairs.push_back({label, payoff(cfg, p, "x").values, payoff(cfg, p, "y").values});
    }
  }
  if (block.contains("permutations")) {
    std::mt19937_64 rng(cfg.seed);
    for (const json& p : block.at("permutations")) {
      const std::string name = get<std::string>(p, "payoff", "permutation");
      const Payoff& X = payoff(cfg, p, "payoff");
      for (std::size_t r = 0; r < count(p, "count", 1); ++r)
        pairs.push_back({name + " permuted #" + std::to_string(r), X.values, permute_paths(lat, X.values, rng())});
    }
  }
  if (block.contains("analytic_pairs")) {
    for (const json& p : block.at("analytic_pairs")) {
      const Payoff& x = payoff(cfg, p, "x");
      const Payoff& y = payoff(cfg, p, "y");
      require(x.analytic && y.analytic, "analytic pairs need payoffs given by 'analytic' integrands");
      const std::string label = p.value("label", p.at("x").get<std::string>() + "~" + p.at("y").get<std::string>());
      analytic.push_back({label, *x.analytic, *y.analytic});
    }
  }
  if (block.contains("independence")) {
    for (const json& p : block.at("independence")) {
      const std::size_t level = count(p, "level", 0);
      require(level <= lat.steps(), "independence level beyond the horizon");
      independence.emplace_back(get<std::string>(p, "payoff", "independence"), level);
    }
  }
  require(!pairs.empty() || !analytic.empty() || !independence.empty(), "law-probe needs at least one pair");
  LawProbeReport rep = law_probe(lat, g, pairs, analytic);
  for (const auto& [name, level] : independence) {
    const json one = {{"p", name}};
    rep.independence.push_back(independence_probe(lat, g, payoff(cfg, one, "p").values, level, name));
  }
  json summary = {{"command", "law-probe"}, {"driver", driver_to_json(g)}, {"report", law_probe_to_json(rep)}};
  return finish(summary, {{"law_probe.json", dump(law_probe_to_json(rep))}});
}

inline std::optional<double> share_factor(const DriverSpec& ga, const DriverSpec& gb) {
  const auto* sa = ga.as<ScaledDriver>();
  const auto* sb = gb.as<ScaledDriver>();
  if (!sa || !sb || !(*sa->base == *sb->base)) return std::nullopt;
  return sb->gamma / (sa->gamma + sb->gamma);
}

inline RunResult run_share(const Config& cfg) {
  const Lattice& lat = *cfg.lattice;
  const json& block = command_block(cfg, "share");
  SharingProblem prob;
  prob.xa = payoff(cfg, block, "xa").values;
  prob.xb = payoff(cfg, block, "xb").values;
  prob.ga = driver(cfg, block, "driver_a");
  prob.gb = driver(cfg, block, "driver_b");
  prob.solver = cfg.solver;
  if (block.contains("max_residual")) prob.max_residual = get<double>(block, "max_residual", "share");

  const SharingSolution sol = solve_sharing(lat, prob);
  json summary = {{"command", "share"},
                  {"driver_a", driver_to_json(prob.ga)},
                  {"driver_b", driver_to_json(prob.gb)},
                  {"solution", sharing_to_json(sol)}};
  if (const auto f = share_factor(prob.ga, prob.gb)) summary["share_factor"] = *f;
  if (sol.attained) summary["residual_check"] = residual_to_json(residual_check(lat, sol, prob));
  std::vector<Artifact> files{{"sharing.json", dump(sharing_to_json(sol))},
                              {"argmins.csv", argmins_csv(lat, sol)},
                              {"transfer.csv", payoff_csv(sol.y_tilde_star)}};
  RunResult r = finish(summary, std::move(files), sol.attained ? Ok : NotConverged);
  if (!sol.attained)
    r.message = std::to_string(sol.unattained_nodes) + " node(s) did not reach an attained inf-convolution";
  return r;
}

inline RunResult run_check_driver(const Config& cfg) {
  const Lattice& lat = *cfg.lattice;
  const json& block = command_block(cfg, "check-driver");
  const DriverSpec& g = driver(cfg, block, "driver");
  const std::size_t n = count(block, "samples", 1000);
  const ValidityReport rep = check_driver(g, lat.jumps(), lat.brownian_dim(), n, cfg.seed);
  json summary = {{"command", "check-driver"},
                  {"driver", driver_to_json(g)},
                  {"seed", cfg.seed},
                  {"report", validity_to_json(rep)}};
  return finish(summary, {{"validity.json", dump(validity_to_json(rep))}});
}

}  // namespace detail

/// Run one command against an already parsed config. No files are touched.
inline RunResult execute(const std::string& command, const Config& cfg) {
  if (command == "build") return detail::run_build(cfg);
  if (command == "deviation") return detail::run_deviation(cfg);
  if (command == "axioms") return detail::run_axioms(cfg);
  if (command == "law-probe") return detail::run_law_probe(cfg);
  if (command == "share") return detail::run_share(cfg);
  if (command == "check-driver") return detail::run_check_driver(cfg);
  throw ValidationError("unknown command '" + command + "'");
}

inline void write_artifacts(const std::filesystem::path& dir, const std::vector<Artifact>& files) {
  std::filesystem::create_directories(dir);
  for (const auto& a : files) {
    std::ofstream out(dir / a.name, std::ios::binary);
    out << a.contents;
    if (!out) throw std::runtime_error("cannot write " + (dir / a.name).string());
  }
}

/// Full run: read the config, execute, write artifacts. Errors map to exit codes.
inline RunResult run(const std::string& command, const std::string& config_path, const RunOptions& opt = {}) {
  RunResult r;
  try {
    std::ifstream in(config_path);
    require(in.good(), "cannot open config '" + config_path + "'");
    json raw;
    try {
      raw = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    const Config cfg = load_config(raw, std::filesystem::path(config_path).parent_path(), opt);
    r = execute(command, cfg);
    write_artifacts(cfg.output, r.artifacts);
  } catch (const ValidationError& e) {
    r = RunResult{Invalid, {}, {}, e.what()};
  } catch (const json::exception& e) {
    r = RunResult{Invalid, {}, {}, std::string("config: ") + e.what()};
  } catch (const ConvergenceError& e) {
    r = RunResult{NotConverged, {}, {}, e.what()};
  } catch (const std::exception& e) {
    r = RunResult{Internal, {}, {}, std::string("internal error: ") + e.what()};
  }
  return r;
}

}  // namespace ddm::cli
