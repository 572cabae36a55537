#pragma once

// Finite filtered probability spaces: a non-recombining event tree whose
// edges carry Bernoulli Brownian increments (+-sqrt(dt) per component) and at
// most one jump per step from a finite-support Levy measure.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ddm/errors.hpp"

namespace ddm {

using Vec = std::vector<double>;

class TimeGrid {
 public:
  TimeGrid() : times_{0.0} {}

  explicit TimeGrid(Vec times) : times_(std::move(times)) {
    require(!times_.empty(), "time grid is empty");
    require(times_.front() == 0.0, "time grid must start at 0");
    for (std::size_t i = 0; i + 1 < times_.size(); ++i) {
      require(std::isfinite(times_[i + 1]) && times_[i + 1] > times_[i],
              "time grid must be strictly increasing");
    }
  }

  static TimeGrid uniform(double horizon, std::size_t steps) {
    require(horizon > 0.0 && std::isfinite(horizon), "horizon must be positive");
    Vec t(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) {
      t[i] = horizon * static_cast<double>(i) / static_cast<double>(steps == 0 ? 1 : steps);
    }
    if (steps > 0) t.back() = horizon;
    return TimeGrid(std::move(t));
  }

  std::size_t steps() const { return times_.size() - 1; }
  double time(std::size_t i) const { return times_.at(i); }
  double dt(std::size_t i) const { return times_.at(i + 1) - times_.at(i); }
  double horizon() const { return times_.back(); }
  const Vec& times() const { return times_; }

  double max_dt() const {
    double m = 0.0;
    for (std::size_t i = 0; i < steps(); ++i) m = std::max(m, dt(i));
    return m;
  }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

 private:
  Vec times_;
};

/// Finite Levy measure: mark x_j in R^k with intensity nu_j.
struct JumpMeasure {
  std::vector<Vec> marks;
  Vec intensities;

  std::size_t size() const { return intensities.size(); }
  double total() const { return std::accumulate(intensities.begin(), intensities.end(), 0.0); }

  void validate() const {
    require(marks.size() == intensities.size(), "jump marks and intensities differ in length");
    for (std::size_t j = 0; j < marks.size(); ++j) {
      require(!marks[j].empty(), "jump mark must be a non-empty vector");
      require(marks[j].size() == marks[0].size(), "jump marks must share one dimension");
      require(std::all_of(marks[j].begin(), marks[j].end(), [](double x) { return std::isfinite(x); }),
              "jump mark must be finite");
      require(std::any_of(marks[j].begin(), marks[j].end(), [](double x) { return x != 0.0; }),
              "jump mark must be nonzero");
      require(std::isfinite(intensities[j]) && intensities[j] > 0.0, "jump intensity must be positive");
      for (std::size_t l = 0; l < j; ++l) require(marks[l] != marks[j], "jump marks must be distinct");
    }
  }

  friend bool operator==(const JumpMeasure&, const JumpMeasure&) = default;
};

struct NoiseModel {
  std::size_t brownian_dim = 1;
  JumpMeasure jumps;

  void validate() const {
    jumps.validate();
    require(brownian_dim + jumps.size() >= 1, "noise model needs a Brownian or jump component");
  }

  friend bool operator==(const NoiseModel&, const NoiseModel&) = default;
};

/// One child edge of a node. All nodes of a level share the same table.
struct Outcome {
  double prob = 0.0;
  Vec dW;               // Brownian increment per component, +-sqrt(dt)
  std::size_t jump = 0; // 0 = no jump, j >= 1 = mark j-1
};

/// Payoff on the terminal nodes (leaves), indexed by leaf position.
struct RandomVariable {
  Vec values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
};

/// Node values per level: levels[l][k] is the value at node k of level l.
struct AdaptedProcess {
  std::vector<Vec> levels;

  double at(std::size_t level, std::size_t node) const { return levels.at(level).at(node); }
};

struct Atom {
  double value = 0.0;
  double prob = 0.0;
};

struct Distribution {
  std::vector<Atom> atoms;
};

/// Cumulative Brownian path and jump counts at a node.
struct NodeState {
  Vec W;
  std::vector<std::size_t> jumps;
};

class Lattice {
 public:
  static constexpr std::size_t kDefaultMaxNodes = std::size_t{1} << 22;

  Lattice(TimeGrid grid, NoiseModel noise, std::size_t max_nodes = kDefaultMaxNodes)
      : grid_(std::move(grid)), noise_(std::move(noise)) {
    noise_.validate();
    const std::size_t d = noise_.brownian_dim;
    const std::size_t m = noise_.jumps.size();
    require(d < 31, "Brownian dimension too large");
    require(noise_.jumps.total() * grid_.max_dt() <= 0.5,
            "sum of jump intensities times the largest step exceeds 0.5");
    branching_ = (std::size_t{1} << d) * (m + 1);

    const std::size_t n = grid_.steps();
    level_size_.assign(n + 1, 1);
    offset_.assign(n + 2, 0);
    for (std::size_t l = 1; l <= n; ++l) {
      if (level_size_[l - 1] > max_nodes / branching_) {
        throw ValidationError("node budget exceeded: branching " + std::to_string(branching_) + "^" +
                              std::to_string(n) + " > " + std::to_string(max_nodes));
      }
      level_size_[l] = level_size_[l - 1] * branching_;
    }
    require(level_size_[n] <= max_nodes, "node budget exceeded");
    for (std::size_t l = 0; l <= n; ++l) offset_[l + 1] = offset_[l] + level_size_[l];

    const std::size_t signs = std::size_t{1} << d;
    outcomes_.resize(n);
    for (std::size_t l = 0; l < n; ++l) {
      const double dt = grid_.dt(l);
      const double sq = std::sqrt(dt);
      double p_jump_total = 0.0;
      for (double nu : noise_.jumps.intensities) p_jump_total += nu * dt;
      auto& table = outcomes_[l];
      table.reserve(branching_);
      for (std::size_t j = 0; j <= m; ++j) {
        const double pj = j == 0 ? 1.0 - p_jump_total : noise_.jumps.intensities[j - 1] * dt;
        for (std::size_t s = 0; s < signs; ++s) {
          Outcome o;
          o.prob = pj / static_cast<double>(signs);
          o.dW.resize(d);
          for (std::size_t i = 0; i < d; ++i) o.dW[i] = (s >> i) & 1u ? sq : -sq;
          o.jump = j;
          table.push_back(std::move(o));
        }
      }
    }
  }

  const TimeGrid& grid() const { return grid_; }
  const NoiseModel& noise() const { return noise_; }
  const JumpMeasure& jumps() const { return noise_.jumps; }
  std::size_t brownian_dim() const { return noise_.brownian_dim; }
  std::size_t jump_count() const { return noise_.jumps.size(); }
  std::size_t branching() const { return branching_; }
  std::size_t steps() const { return grid_.steps(); }
  std::size_t level_size(std::size_t level) const { return level_size_.at(level); }
  std::size_t leaf_count() const { return level_size_.back(); }
  std::size_t node_count() const { return offset_.back(); }
  std::size_t node_id(std::size_t level, std::size_t node) const { return offset_.at(level) + node; }

  /// Child edges for the step from `level` to `level + 1`.
  const std::vector<Outcome>& outcomes(std::size_t level) const { return outcomes_.at(level); }
  std::size_t child(std::size_t node, std::size_t outcome) const { return node * branching_ + outcome; }
  std::size_t parent(std::size_t node) const { return node / branching_; }

  /// Probability of jump mark j (0-based) over the step starting at `level`.
  double jump_prob(std::size_t level, std::size_t j) const {
    return noise_.jumps.intensities.at(j) * grid_.dt(level);
  }

  /// Compensated jump indicator 1{jump = j} - nu_j dt on an edge.
  double compensated(std::size_t level, const Outcome& o, std::size_t j) const {
    return (o.jump == j + 1 ? 1.0 : 0.0) - jump_prob(level, j);
  }

  /// E[next | node] for every node of `level`, given values at `level + 1`.
  Vec average_down(std::size_t level, std::span<const double> next) const {
    require(level < steps(), "cannot average below the terminal level");
    require(next.size() == level_size_[level + 1], "level size mismatch");
    const auto& table = outcomes_[level];
    Vec out(level_size_[level]);
    for (std::size_t k = 0; k < out.size(); ++k) {
      const std::size_t base = k * branching_;
      // centred on the first child so constants pass through exactly
      const double v0 = next[base];
      double acc = 0.0;
      for (std::size_t c = 1; c < branching_; ++c) acc += table[c].prob * (next[base + c] - v0);
      out[k] = v0 + acc;
    }
    return out;
  }

  NodeState state(std::size_t level, std::size_t node) const {
    NodeState st{Vec(brownian_dim(), 0.0), std::vector<std::size_t>(jump_count(), 0)};
    std::vector<std::size_t> digits(level);
    for (std::size_t l = level; l-- > 0;) {
      digits[l] = node % branching_;
      node /= branching_;
    }
    for (std::size_t l = 0; l < level; ++l) {
      const Outcome& o = outcomes_[l][digits[l]];
      for (std::size_t i = 0; i < st.W.size(); ++i) st.W[i] += o.dW[i];
      if (o.jump > 0) ++st.jumps[o.jump - 1];
    }
    return st;
  }

  /// Outcome index taken at `step` on the path to (level, node), step < level.
  std::size_t outcome_on_path(std::size_t level, std::size_t node, std::size_t step) const {
    for (std::size_t l = level; l > step + 1; --l) node /= branching_;
    return node % branching_;
  }

  /// Probability of every node at `level` (product of edge probabilities).
  Vec node_probabilities(std::size_t level) const {
    Vec p{1.0};
    for (std::size_t l = 0; l < level; ++l) {
      Vec next(level_size_[l + 1]);
      for (std::size_t k = 0; k < p.size(); ++k)
        for (std::size_t c = 0; c < branching_; ++c) next[k * branching_ + c] = p[k] * outcomes_[l][c].prob;
      p = std::move(next);
    }
    return p;
  }

  Vec leaf_probabilities() const { return node_probabilities(steps()); }

 private:
  TimeGrid grid_;
  NoiseModel noise_;
  std::size_t branching_ = 1;
  std::vector<std::size_t> level_size_;
  std::vector<std::size_t> offset_;
  std::vector<std::vector<Outcome>> outcomes_;
};

inline Lattice build_lattice(TimeGrid grid, NoiseModel noise,
                             std::size_t max_nodes = Lattice::kDefaultMaxNodes) {
  return Lattice(std::move(grid), std::move(noise), max_nodes);
}

inline void check_payoff(const Lattice& lat, const RandomVariable& X) {
  require(X.size() == lat.leaf_count(), "payoff has " + std::to_string(X.size()) + " values, lattice has " +
                                            std::to_string(lat.leaf_count()) + " leaves");
}

/// E[values at from_level | F_to_level] by successive per-level averaging.
inline Vec cond_exp(const Lattice& lat, std::span<const double> values, std::size_t from_level,
                    std::size_t to_level) {
  require(to_level <= from_level && from_level <= lat.steps(), "invalid conditioning levels");
  require(values.size() == lat.level_size(from_level), "values do not match the level size");
  Vec cur(values.begin(), values.end());
  for (std::size_t l = from_level; l > to_level; --l) cur = lat.average_down(l - 1, cur);
  return cur;
}

inline Vec cond_exp(const Lattice& lat, const RandomVariable& X, std::size_t level) {
  check_payoff(lat, X);
  require(level <= lat.steps(), "level beyond the horizon");
  return cond_exp(lat, X.values, lat.steps(), level);
}

/// The martingale E[X | F_l] at every node.
inline AdaptedProcess martingale(const Lattice& lat, const RandomVariable& X) {
  check_payoff(lat, X);
  AdaptedProcess M;
  M.levels.resize(lat.steps() + 1);
  M.levels.back() = X.values;
  for (std::size_t l = lat.steps(); l-- > 0;) M.levels[l] = lat.average_down(l, M.levels[l + 1]);
  return M;
}

/// Same, started from an F_level-measurable slice (levels above `level` are left empty).
inline AdaptedProcess martingale(const Lattice& lat, std::span<const double> values, std::size_t level) {
  require(level <= lat.steps() && values.size() == lat.level_size(level), "values do not match the level size");
  AdaptedProcess M;
  M.levels.resize(lat.steps() + 1);
  M.levels[level].assign(values.begin(), values.end());
  for (std::size_t l = level; l-- > 0;) M.levels[l] = lat.average_down(l, M.levels[l + 1]);
  return M;
}

/// Broadcast an F_level-measurable slice to the leaves.
inline RandomVariable extend_to_leaves(const Lattice& lat, std::span<const double> values, std::size_t level) {
  require(level <= lat.steps() && values.size() == lat.level_size(level), "values do not match the level size");
  const std::size_t block = lat.leaf_count() / lat.level_size(level);
  RandomVariable X{Vec(lat.leaf_count())};
  for (std::size_t i = 0; i < X.values.size(); ++i) X.values[i] = values[i / block];
  return X;
}

inline double mean(const Lattice& lat, const RandomVariable& X) { return cond_exp(lat, X, 0).front(); }

inline double variance(const Lattice& lat, const RandomVariable& X) {
  const double mu = mean(lat, X);
  RandomVariable sq{X.values};
  for (double& v : sq.values) v = (v - mu) * (v - mu);
  return mean(lat, sq);
}

/// Node-wise conditional variance Var(X | F_l) at every node.
inline AdaptedProcess conditional_variance(const Lattice& lat, const RandomVariable& X) {
  const AdaptedProcess M = martingale(lat, X);
  RandomVariable sq{X.values};
  for (double& v : sq.values) v *= v;
  AdaptedProcess S = martingale(lat, sq);
  for (std::size_t l = 0; l < S.levels.size(); ++l)
    for (std::size_t k = 0; k < S.levels[l].size(); ++k)
      S.levels[l][k] = std::max(0.0, S.levels[l][k] - M.levels[l][k] * M.levels[l][k]);
  return S;
}

inline double default_merge_tolerance(const RandomVariable& X) {
  if (X.values.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(X.values.begin(), X.values.end());
  return 1e-9 * (*hi - *lo);
}

/// Law of X: sorted atoms, values within merge_tol of a group's first value merged.
inline Distribution law(const Lattice& lat, const RandomVariable& X, double merge_tol) {
  check_payoff(lat, X);
  require(merge_tol >= 0.0, "merge tolerance must be nonnegative");
  const Vec p = lat.leaf_probabilities();
  std::vector<std::size_t> order(X.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return X[a] < X[b]; });
  Distribution dist;
  for (std::size_t i : order) {
    if (!dist.atoms.empty() && X[i] - dist.atoms.back().value <= merge_tol) {
      dist.atoms.back().prob += p[i];
    } else {
      dist.atoms.push_back({X[i], p[i]});
    }
  }
  return dist;
}

inline Distribution law(const Lattice& lat, const RandomVariable& X) {
  return law(lat, X, default_merge_tolerance(X));
}

/// Kolmogorov distance between two laws; atom values within value_tol count as equal.
inline double law_distance(const Distribution& a, const Distribution& b, double value_tol = 0.0) {
  std::size_t i = 0, j = 0;
  double Fa = 0.0, Fb = 0.0, dist = 0.0;
  while (i < a.atoms.size() || j < b.atoms.size()) {
    const double va = i < a.atoms.size() ? a.atoms[i].value : std::numeric_limits<double>::infinity();
    const double vb = j < b.atoms.size() ? b.atoms[j].value : std::numeric_limits<double>::infinity();
    const double v = std::min(va, vb);
    while (i < a.atoms.size() && a.atoms[i].value <= v + value_tol) Fa += a.atoms[i++].prob;
    while (j < b.atoms.size() && b.atoms[j].value <= v + value_tol) Fb += b.atoms[j++].prob;
    dist = std::max(dist, std::abs(Fa - Fb));
  }
  return dist;
}

}  // namespace ddm
