#pragma once

// Small-dimensional convex minimization for the inf-convolution solver, plus
// an exhaustive grid search used as an independent oracle in tests.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "ddm/errors.hpp"
#include "ddm/lattice.hpp"

namespace ddm {

/// Starting point of the inf-convolution search: z = h/2, z = 0 or z = h.
enum class InitRule { Half, Zero, Full };

struct SolverConfig {
  double tolerance = 1e-12;       // best-value stall threshold (relative to max(1, |f|))
  double step_tolerance = 1e-11;  // trust radius at which a stall counts as convergence
  std::size_t max_iterations = 200000;
  std::size_t window = 50;        // iterations per restart epoch
  InitRule init = InitRule::Half;
  bool closed_forms = true;       // use exact inf-convolutions where available
  bool record_history = false;

  void validate() const {
    require(tolerance > 0.0 && std::isfinite(tolerance), "solver tolerance must be positive");
    require(step_tolerance > 0.0 && std::isfinite(step_tolerance), "solver step tolerance must be positive");
    require(max_iterations > 0 && window > 0, "solver iteration limits must be positive");
  }
};

struct ObjectiveOracle {
  std::function<double(std::span<const double>)> value;
  std::function<Vec(std::span<const double>)> subgradient;
};

struct MinimizeResult {
  Vec argmin;
  double value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  double gap_estimate = 0.0;
  Vec best_history;  // best value after each iteration, when requested
};

namespace detail {

inline double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace detail

/// Restarted subgradient method. Each epoch takes `window` normalized steps of
/// length r/(1+k) from the best point so far; the radius r shrinks tenfold
/// whenever an epoch fails to improve the best value by more than the
/// tolerance, and the run converges once that happens with r below
/// step_tolerance. A subgradient of norm <= tolerance stops immediately.
inline MinimizeResult minimize(const ObjectiveOracle& obj, std::span<const double> init, const SolverConfig& cfg) {
  cfg.validate();
  require(obj.value && obj.subgradient, "objective oracle is incomplete");
  const std::size_t p = init.size();

  MinimizeResult res;
  Vec x(init.begin(), init.end());
  Vec best = x;
  double fbest = obj.value(x);
  require(std::isfinite(fbest), "objective is not finite at the initial point");
  double best_norm = detail::norm(best);

  auto consider = [&](const Vec& cand, double fc) {
    if (!std::isfinite(fc)) return;
    const double nc = detail::norm(cand);
    if (fc < fbest || (fc == fbest && nc < best_norm)) {
      best = cand;
      fbest = fc;
      best_norm = nc;
    }
  };

  Vec g = obj.subgradient(x);
  require(g.size() == p, "subgradient has the wrong dimension");
  double radius = std::max(1.0, detail::norm(x));
  bool stationary = detail::norm(g) <= cfg.tolerance;

  while (!stationary && res.iterations < cfg.max_iterations) {
    const double epoch_start = fbest;
    x = best;
    for (std::size_t k = 0; k < cfg.window && res.iterations < cfg.max_iterations; ++k) {
      g = obj.subgradient(x);
      const double gn = detail::norm(g);
      if (gn <= cfg.tolerance) {
        consider(x, obj.value(x));
        stationary = true;
        break;
      }
      const double step = radius / static_cast<double>(1 + k) / gn;
      for (std::size_t i = 0; i < p; ++i) x[i] -= step * g[i];
      consider(x, obj.value(x));
      ++res.iterations;
      if (cfg.record_history) res.best_history.push_back(fbest);
    }
    if (stationary) break;
    const double improvement = epoch_start - fbest;
    if (improvement <= cfg.tolerance * std::max(1.0, std::abs(fbest))) {
      if (radius <= cfg.step_tolerance * std::max(1.0, best_norm)) {
        res.converged = true;
        break;
      }
      radius *= 0.1;
    }
  }

  res.converged = res.converged || stationary;
  res.argmin = best;
  res.value = fbest;
  res.gap_estimate = detail::norm(obj.subgradient(best)) * (stationary ? 0.0 : radius);
  return res;
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct GridMinimum {
  Vec argmin;
  double value = std::numeric_limits<double>::infinity();
};

/// Exhaustive evaluation on the grid lo + i*step of a box (dimension <= 3).
inline GridMinimum brute_force_min(const std::function<double(std::span<const double>)>& f,
                                   std::span<const Interval> box, double step, double budget = 5e8) {
  require(!box.empty() && box.size() <= 3, "brute force needs dimension 1..3");
  require(step > 0.0 && std::isfinite(step), "grid step must be positive");
  std::vector<std::size_t> counts;
  double total = 1.0;
  for (const Interval& iv : box) {
    require(std::isfinite(iv.lo) && std::isfinite(iv.hi) && iv.lo <= iv.hi, "box interval is empty or inverted");
    const double c = std::floor((iv.hi - iv.lo) / step + 1e-9) + 1.0;
    total *= c;
    counts.push_back(static_cast<std::size_t>(c));
  }
  require(total <= budget, "brute-force grid exceeds the evaluation budget");

  GridMinimum out;
  double best_norm = std::numeric_limits<double>::infinity();
  Vec pt(box.size());
  std::vector<std::size_t> idx(box.size(), 0);
  while (true) {
    for (std::size_t i = 0; i < box.size(); ++i) pt[i] = box[i].lo + static_cast<double>(idx[i]) * step;
    const double v = f(pt);
    const double nv = detail::norm(pt);
    if (v < out.value || (v == out.value && nv < best_norm)) {
      out.value = v;
      out.argmin = pt;
      best_norm = nv;
    }
    std::size_t i = 0;
    while (i < idx.size() && ++idx[i] == counts[i]) idx[i++] = 0;
    if (i == idx.size()) break;
  }
  return out;
}

}  // namespace ddm
