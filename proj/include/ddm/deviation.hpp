#pragma once

// Driver-based deviation processes D_t(X) = E[ sum_{t_i >= t} g(t_i, H_i, H~_i) dt_i | F_t ]
// on a lattice, a block-recursive cross-check, utilities U_t = E[X|F_t] - D_t,
// and sampled test suites for the axioms and for law invariance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ddm/drivers.hpp"
#include "ddm/errors.hpp"
#include "ddm/lattice.hpp"
#include "ddm/repr.hpp"

namespace ddm {

struct DeviationProcess {
  AdaptedProcess values;
  DriverSpec driver = DriverSpec::variance(1.0);
  std::string source;

  double d0() const { return values.levels.front().front(); }
};

/// Driver rate g(t_l, H, H~) at every non-terminal node.
inline std::vector<Vec> driver_rates(const Lattice& lat, const DriverSpec& driver, const RepresentingPair& pair,
                                     std::size_t first, std::size_t last) {
  std::vector<Vec> rates(lat.steps());
  for (std::size_t l = first; l < last; ++l) {
    const auto& steps = pair.steps.at(l);
    rates[l].resize(steps.size());
    for (std::size_t k = 0; k < steps.size(); ++k)
      rates[l][k] = eval_driver(driver, lat.grid().time(l), steps[k].H, steps[k].Htilde, lat.jumps());
  }
  return rates;
}

/// value(node) = sum_children p * value(child) + rate(node) * dt, zero at `last`.
inline void accumulate_rates(const Lattice& lat, const std::vector<Vec>& rates, std::size_t first, std::size_t last,
                             AdaptedProcess& out) {
  out.levels.resize(lat.steps() + 1);
  out.levels[last].assign(lat.level_size(last), 0.0);
  for (std::size_t l = last; l-- > first;) {
    out.levels[l] = lat.average_down(l, out.levels[l + 1]);
    const double dt = lat.grid().dt(l);
    for (std::size_t k = 0; k < out.levels[l].size(); ++k) out.levels[l][k] += rates[l][k] * dt;
  }
}

inline DeviationProcess evaluate(const Lattice& lat, const DriverSpec& driver, const RepresentingPair& pair,
                                 std::string source = {}) {
  check_pair(lat, pair);
  DeviationProcess D{{}, driver, std::move(source)};
  accumulate_rates(lat, driver_rates(lat, driver, pair, 0, lat.steps()), 0, lat.steps(), D.values);
  return D;
}

inline DeviationProcess evaluate(const Lattice& lat, const DriverSpec& driver, const RandomVariable& X,
                                 std::string source = {}) {
  return evaluate(lat, driver, represent(lat, X), std::move(source));
}

inline void check_partition(const Lattice& lat, const std::vector<std::size_t>& partition) {
  require(partition.size() >= 2 && partition.front() == 0 && partition.back() == lat.steps(),
          "partition must start at 0 and end at the terminal level");
  for (std::size_t i = 0; i + 1 < partition.size(); ++i)
    require(partition[i] < partition[i + 1], "partition must be strictly increasing");
}

/// Block recursion over the partition p_0 = 0 < ... < p_K = n: on each cell the
/// block deviation of E[X | F_{p_{k+1}}] is added to E[D_{p_{k+1}} | F_t].
inline DeviationProcess evaluate_recursive(const Lattice& lat, const DriverSpec& driver, const RandomVariable& X,
                                           const std::vector<std::size_t>& partition, std::string source = {}) {
  check_payoff(lat, X);
  check_partition(lat, partition);
  DeviationProcess D{{}, driver, std::move(source)};
  D.values.levels.resize(lat.steps() + 1);
  D.values.levels.back().assign(lat.leaf_count(), 0.0);

  for (std::size_t cell = partition.size() - 1; cell-- > 0;) {
    const std::size_t lo = partition[cell];
    const std::size_t hi = partition[cell + 1];
    const Vec slice = cond_exp(lat, X, hi);
    const AdaptedProcess M = martingale(lat, slice, hi);
    RepresentingPair block;
    represent_levels(lat, M, lo, hi, block);
    AdaptedProcess B;
    accumulate_rates(lat, driver_rates(lat, driver, block, lo, hi), lo, hi, B);
    Vec tail = D.values.levels[hi];
    for (std::size_t l = hi; l-- > lo;) {
      tail = lat.average_down(l, tail);
      D.values.levels[l].resize(tail.size());
      for (std::size_t k = 0; k < tail.size(); ++k) D.values.levels[l][k] = B.levels[l][k] + tail[k];
    }
  }
  return D;
}

/// Recursion driven by a representing pair: the pair's forward sum is the payoff.
inline DeviationProcess evaluate_recursive(const Lattice& lat, const DriverSpec& driver, const RepresentingPair& pair,
                                           const std::vector<std::size_t>& partition, std::string source = {}) {
  return evaluate_recursive(lat, driver, assemble(lat, pair), partition, std::move(source));
}

/// sum_i g(t_i, h_i, h~_i) dt_i for deterministic integrands.
inline double deterministic_D0(const TimeGrid& grid, const DriverSpec& driver, const AnalyticPayoff& ap,
                               const JumpMeasure& nu) {
  require(ap.grid == grid, "analytic payoff grid differs from the requested grid");
  require(ap.h.size() == grid.steps() && ap.htilde.size() == grid.steps(),
          "analytic integrands must have one entry per step");
  double acc = 0.0;
  for (std::size_t i = 0; i < grid.steps(); ++i)
    acc += eval_driver(driver, grid.time(i), ap.h[i], ap.htilde[i], nu) * grid.dt(i);
  return acc;
}

/// U_t(X) = E[X | F_t] - D_t(X) at the nodes of `level`.
inline Vec utility(const Lattice& lat, const RandomVariable& X, const DeviationProcess& D, std::size_t level) {
  require(D.values.levels.size() == lat.steps() + 1 && D.values.levels.at(level).size() == lat.level_size(level),
          "deviation process does not match the lattice");
  Vec u = cond_exp(lat, X, level);
  for (std::size_t k = 0; k < u.size(); ++k) u[k] -= D.values.levels[level][k];
  return u;
}

struct ProcessCheck {
  double min_value = std::numeric_limits<double>::infinity();
  double max_terminal = 0.0;
  double max_supermartingale_violation = 0.0;  // max of E[D_s | F_t] - D_t over t <= s

  bool ok(double tol = 1e-12) const {
    return min_value >= 0.0 && max_terminal == 0.0 && max_supermartingale_violation <= tol;
  }
};

/// Positivity, terminal value and the supermartingale property over all pairs t <= s.
inline ProcessCheck check_process(const Lattice& lat, const DeviationProcess& D) {
  ProcessCheck pc;
  for (const Vec& lvl : D.values.levels)
    for (double v : lvl) pc.min_value = std::min(pc.min_value, v);
  for (double v : D.values.levels.back()) pc.max_terminal = std::max(pc.max_terminal, std::abs(v));
  for (std::size_t s = 1; s <= lat.steps(); ++s) {
    Vec cur = D.values.levels[s];
    for (std::size_t t = s; t-- > 0;) {
      cur = lat.average_down(t, cur);
      for (std::size_t k = 0; k < cur.size(); ++k)
        pc.max_supermartingale_violation =
            std::max(pc.max_supermartingale_violation, cur[k] - D.values.levels[t][k]);
    }
  }
  return pc;
}

// ---------------------------------------------------------------------------
// Axiom suite.

struct AxiomResult {
  bool pass = true;
  double worst = 0.0;       // largest violation (or discrepancy) observed
  std::size_t trials = 0;
  std::string witness;      // empty when passing
  std::uint64_t witness_seed = 0;
};

struct AxiomReport {
  AxiomResult d1, d2, d2_only_if, d3, d4, d5, local;
  std::string samples;

  bool all_pass() const {
    return d1.pass && d2.pass && d2_only_if.pass && d3.pass && d4.pass && d5.pass && local.pass;
  }
};

struct AxiomOptions {
  std::size_t mixtures = 50;
  std::size_t partitions = 5;
  std::size_t local_splits = 20;
  double tol = 1e-10;
};

/// One sampled conditional-convexity trial, reproducible from its seed.
struct MixtureTrial {
  std::size_t level = 0;
  RandomVariable x, y, lambda;  // lambda is F_level-measurable, broadcast to the leaves
  std::string description;
};

inline MixtureTrial make_mixture(const Lattice& lat, const std::vector<RandomVariable>& samples, std::uint64_t seed) {
  require(samples.size() >= 2, "mixtures need at least two sample payoffs");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  MixtureTrial tr;
  tr.level = std::uniform_int_distribution<std::size_t>(0, lat.steps() - 1)(rng);
  const std::size_t i = std::uniform_int_distribution<std::size_t>(0, samples.size() - 1)(rng);
  std::size_t j = std::uniform_int_distribution<std::size_t>(0, samples.size() - 2)(rng);
  if (j >= i) ++j;
  tr.x = samples[i];
  if (unit(rng) < 0.5) {
    // a point further out on the ray through X_i
    const double s = 2.0 + 2.0 * unit(rng);
    tr.y = samples[i];
    for (double& v : tr.y.values) v *= s;
    tr.description = "X" + std::to_string(i) + " vs " + std::to_string(s) + "*X" + std::to_string(i);
  } else {
    tr.y = samples[j];
    tr.description = "X" + std::to_string(i) + " vs X" + std::to_string(j);
  }
  Vec lam(lat.level_size(tr.level));
  for (double& v : lam) v = unit(rng);
  tr.lambda = extend_to_leaves(lat, lam, tr.level);
  tr.description += ", level " + std::to_string(tr.level);
  return tr;
}

/// Largest violation of D_t(lam X + (1-lam) Y) <= lam D_t(X) + (1-lam) D_t(Y) at the trial level.
inline double mixture_violation(const Lattice& lat, const DriverSpec& driver, const MixtureTrial& tr) {
  RandomVariable z{Vec(lat.leaf_count())};
  for (std::size_t i = 0; i < z.values.size(); ++i)
    z.values[i] = tr.lambda[i] * tr.x[i] + (1.0 - tr.lambda[i]) * tr.y[i];
  const auto Dz = evaluate(lat, driver, z);
  const auto Dx = evaluate(lat, driver, tr.x);
  const auto Dy = evaluate(lat, driver, tr.y);
  const Vec lam = cond_exp(lat, tr.lambda, tr.level);
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < lam.size(); ++k) {
    const double rhs = lam[k] * Dx.values.levels[tr.level][k] + (1.0 - lam[k]) * Dy.values.levels[tr.level][k];
    const double lhs = Dz.values.levels[tr.level][k];
    worst = std::max(worst, (lhs - rhs) / (1.0 + std::abs(rhs)));
  }
  return worst;
}

inline std::vector<std::size_t> random_partition(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> part{0};
  std::bernoulli_distribution keep(0.4);
  for (std::size_t l = 1; l < n; ++l)
    if (keep(rng)) part.push_back(l);
  part.push_back(n);
  return part;
}

namespace detail {

inline void record(AxiomResult& r, double violation, double tol, const std::string& witness, std::uint64_t seed = 0) {
  ++r.trials;
  r.worst = std::max(r.worst, violation);
  if (violation > tol && r.pass) {
    r.pass = false;
    r.witness = witness;
    r.witness_seed = seed;
  }
}

/// Whether the leaves below (level, node) carry more than one value.
inline bool subtree_varies(const Lattice& lat, const RandomVariable& X, std::size_t level, std::size_t node,
                           double tol) {
  const std::size_t block = lat.leaf_count() / lat.level_size(level);
  const auto first = X.values.begin() + static_cast<std::ptrdiff_t>(node * block);
  const auto [lo, hi] = std::minmax_element(first, first + static_cast<std::ptrdiff_t>(block));
  return *hi - *lo > tol;
}

}  // namespace detail

inline AxiomReport axiom_report(const Lattice& lat, const DriverSpec& driver, const std::vector<RandomVariable>& samples,
                                std::uint64_t seed, const AxiomOptions& opt = {}) {
  require(samples.size() >= 2, "axiom report needs at least two sample payoffs");
  for (const auto& X : samples) check_payoff(lat, X);
  require(lat.steps() >= 1, "axiom report needs at least one time step");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AxiomReport rep;
  rep.samples = std::to_string(samples.size()) + " payoffs on " + std::to_string(lat.leaf_count()) + " leaves";

  std::vector<DeviationProcess> D;
  for (const auto& X : samples) D.push_back(evaluate(lat, driver, X));

  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& X = samples[s];
    const std::string tag = "X" + std::to_string(s);

    // D1: a constant shift leaves every D_t unchanged.
    const double shift = std::floor(17.0 * unit(rng)) - 8.0;
    RandomVariable Xm = X;
    for (double& v : Xm.values) v += shift;
    const auto Dm = evaluate(lat, driver, Xm);
    double d1 = 0.0;
    for (std::size_t l = 0; l <= lat.steps(); ++l)
      for (std::size_t k = 0; k < lat.level_size(l); ++k)
        d1 = std::max(d1, std::abs(Dm.values.levels[l][k] - D[s].values.levels[l][k]) /
                              (1.0 + std::abs(D[s].values.levels[l][k])));
    detail::record(rep.d1, d1, 1e-12, tag + " + " + std::to_string(shift));

    // D2: positivity, zero on F_t-measurable payoffs, positive where X still varies.
    double neg = 0.0;
    for (const Vec& lvl : D[s].values.levels)
      for (double v : lvl) neg = std::max(neg, -v);
    detail::record(rep.d2, neg, 0.0, tag + ": negative deviation");
    const double scale = 1.0 + std::abs(*std::max_element(X.values.begin(), X.values.end(),
                                                           [](double a, double b) { return std::abs(a) < std::abs(b); }));
    for (std::size_t t = 0; t < lat.steps(); ++t) {
      const auto Dt = evaluate(lat, driver, extend_to_leaves(lat, cond_exp(lat, X, t), t));
      double worst = 0.0;
      for (std::size_t l = t; l <= lat.steps(); ++l)
        for (double v : Dt.values.levels[l]) worst = std::max(worst, std::abs(v));
      detail::record(rep.d2, worst, opt.tol * scale,
                     "E[" + tag + " | F_" + std::to_string(t) + "] has nonzero deviation at or after level " +
                         std::to_string(t));
      for (std::size_t k = 0; k < lat.level_size(t); ++k) {
        if (!detail::subtree_varies(lat, X, t, k, 1e-12 * scale)) continue;
        const double v = D[s].values.levels[t][k];
        detail::record(rep.d2_only_if, v > 0.0 ? 0.0 : 1.0, 0.0,
                       tag + " varies below level " + std::to_string(t) + " node " + std::to_string(k) +
                           " but D = 0");
      }
    }

    // D4 proxy: the response to a perturbation eps*Z shrinks at least linearly in eps.
    RandomVariable Z{Vec(lat.leaf_count())};
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : Z.values) v = normal(rng);
    double resp[3];
    const double eps[3] = {1e-2, 1e-3, 1e-4};
    // Both signs are probed so a linear and a quadratic term cannot cancel.
    for (int e = 0; e < 3; ++e) {
      resp[e] = 0.0;
      for (double sign : {1.0, -1.0}) {
        RandomVariable Xe = X;
        for (std::size_t i = 0; i < Xe.size(); ++i) Xe.values[i] += sign * eps[e] * Z[i];
        resp[e] = std::max(resp[e], std::abs(evaluate(lat, driver, Xe).d0() - D[s].d0()));
      }
    }
    const double bound = 2.0 * (eps[2] / eps[0]) * resp[0] + 1e-12 * (1.0 + D[s].d0());
    detail::record(rep.d4, resp[2] - bound, 0.0, tag + ": response to 1e-4 perturbation does not shrink");

    // D5: block recursion over random partitions reproduces D.
    for (std::size_t r = 0; r < opt.partitions; ++r) {
      const auto part = random_partition(lat.steps(), rng);
      const auto Dr = evaluate_recursive(lat, driver, X, part);
      double gap = 0.0;
      for (std::size_t l = 0; l <= lat.steps(); ++l)
        for (std::size_t k = 0; k < lat.level_size(l); ++k)
          gap = std::max(gap, std::abs(Dr.values.levels[l][k] - D[s].values.levels[l][k]) /
                                  std::max(1.0, std::abs(D[s].values.levels[l][k])));
      std::string ps;
      for (std::size_t q : part) ps += (ps.empty() ? "" : ",") + std::to_string(q);
      detail::record(rep.d5, gap, 1e-12, tag + " partition {" + ps + "}");
    }
  }

  // D3: conditional convexity under F_t-measurable weights.
  for (std::size_t m = 0; m < opt.mixtures; ++m) {
    const std::uint64_t trial_seed = rng();
    const MixtureTrial tr = make_mixture(lat, samples, trial_seed);
    detail::record(rep.d3, std::max(0.0, mixture_violation(lat, driver, tr)), opt.tol, tr.description, trial_seed);
  }

  // Local property: D_t(1_A X1 + 1_{A^c} X2) = 1_A D_t(X1) + 1_{A^c} D_t(X2) for A in F_t.
  for (std::size_t r = 0; r < opt.local_splits; ++r) {
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, lat.steps())(rng);
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, samples.size() - 1)(rng);
    std::size_t j = std::uniform_int_distribution<std::size_t>(0, samples.size() - 2)(rng);
    if (j >= i) ++j;
    std::vector<char> in_a(lat.level_size(t));
    for (auto& a : in_a) a = unit(rng) < 0.5;
    const std::size_t block = lat.leaf_count() / lat.level_size(t);
    RandomVariable mix{Vec(lat.leaf_count())};
    for (std::size_t leaf = 0; leaf < mix.size(); ++leaf)
      mix.values[leaf] = in_a[leaf / block] ? samples[i][leaf] : samples[j][leaf];
    const auto Dmix = evaluate(lat, driver, mix);
    double gap = 0.0;
    for (std::size_t l = t; l <= lat.steps(); ++l) {
      const std::size_t per = lat.level_size(l) / lat.level_size(t);
      for (std::size_t k = 0; k < lat.level_size(l); ++k) {
        const double want = in_a[k / per] ? D[i].values.levels[l][k] : D[j].values.levels[l][k];
        gap = std::max(gap, std::abs(Dmix.values.levels[l][k] - want) / (1.0 + std::abs(want)));
      }
    }
    detail::record(rep.local, gap, opt.tol,
                   "X" + std::to_string(i) + "/X" + std::to_string(j) + " split at level " + std::to_string(t));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Law-invariance probes.

struct LawProbeEntry {
  std::string label;
  bool analytic = false;
  bool continuum_only = false;  // equal in law only in the continuous-time limit
  double d0_x = 0.0;
  double d0_y = 0.0;
  double gap = 0.0;
  double law_distance = 0.0;
  Distribution law_x, law_y;
};

struct IndependenceEntry {
  std::string label;
  std::size_t level = 0;
  double spread = 0.0;  // max - min of D_t(Y) over the level's nodes
};

struct LawProbeReport {
  std::vector<LawProbeEntry> entries;
  std::vector<IndependenceEntry> independence;
  double max_law_distance = 0.0;
  double max_gap = 0.0;
};

struct LatticePair {
  std::string label;
  RandomVariable x, y;
};

struct AnalyticPair {
  std::string label;
  AnalyticPayoff x, y;
};

/// Shuffle leaves among those of identical probability; the law is unchanged.
inline RandomVariable permute_paths(const Lattice& lat, const RandomVariable& X, std::uint64_t seed) {
  check_payoff(lat, X);
  const Vec p = lat.leaf_probabilities();
  std::map<double, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < p.size(); ++i) groups[p[i]].push_back(i);
  std::mt19937_64 rng(seed);
  RandomVariable Y{Vec(X.size())};
  for (auto& [prob, idx] : groups) {
    std::vector<std::size_t> perm = idx;
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t q = 0; q < idx.size(); ++q) Y.values[idx[q]] = X[perm[q]];
  }
  return Y;
}

/// D_0 per payoff and the gap. Lattice pairs must agree in law within `law_tol`.
inline LawProbeReport law_probe(const Lattice& lat, const DriverSpec& driver, const std::vector<LatticePair>& pairs,
                                const std::vector<AnalyticPair>& analytic = {}, double law_tol = 1e-9) {
  LawProbeReport rep;
  for (const auto& pr : pairs) {
    LawProbeEntry e;
    e.label = pr.label;
    e.law_x = law(lat, pr.x);
    e.law_y = law(lat, pr.y);
    const double vtol = std::max(default_merge_tolerance(pr.x), default_merge_tolerance(pr.y));
    e.law_distance = law_distance(e.law_x, e.law_y, vtol);
    if (e.law_distance > law_tol)
      throw ValidationError("pair '" + pr.label + "' differs in law by " + std::to_string(e.law_distance));
    e.d0_x = evaluate(lat, driver, pr.x).d0();
    e.d0_y = evaluate(lat, driver, pr.y).d0();
    e.gap = std::abs(e.d0_x - e.d0_y);
    rep.max_law_distance = std::max(rep.max_law_distance, e.law_distance);
    rep.max_gap = std::max(rep.max_gap, e.gap);
    rep.entries.push_back(std::move(e));
  }
  for (const auto& pr : analytic) {
    LawProbeEntry e;
    e.label = pr.label;
    e.analytic = true;
    e.continuum_only = true;
    e.d0_x = deterministic_D0(pr.x.grid, driver, pr.x, lat.jumps());
    e.d0_y = deterministic_D0(pr.y.grid, driver, pr.y, lat.jumps());
    e.gap = std::abs(e.d0_x - e.d0_y);
    rep.max_gap = std::max(rep.max_gap, e.gap);
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

/// Spread of D_t(Y) across the nodes of `level`; zero when Y is independent of F_t
/// and the deviation is law invariant.
inline IndependenceEntry independence_probe(const Lattice& lat, const DriverSpec& driver, const RandomVariable& Y,
                                            std::size_t level, std::string label = {}) {
  const auto D = evaluate(lat, driver, Y);
  const Vec& v = D.values.levels.at(level);
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return {std::move(label), level, *hi - *lo};
}

}  // namespace ddm
