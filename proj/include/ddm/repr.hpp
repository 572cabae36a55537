#pragma once

// Martingale representation on the lattice. Per node, the one-step increment
// of E[X | F_t] is projected in conditional L2 onto the Brownian increments
// and the compensated jump indicators; whatever the projection misses is the
// node residual (identically zero on binomial lattices).

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ddm/errors.hpp"
#include "ddm/lattice.hpp"

namespace ddm {

struct IntegrandStep {
  Vec H;       // Brownian integrand, one entry per component
  Vec Htilde;  // jump integrand, entry j = h~(x_j)
};

struct RepresentingPair {
  double mean = 0.0;
  std::vector<std::vector<IntegrandStep>> steps;  // [level][node], level < n
  std::vector<Vec> residuals;                     // [level][node]
  std::vector<std::size_t> singular_nodes;        // global node ids with a singular Gram matrix

  double max_residual() const {
    double r = 0.0;
    for (const auto& lvl : residuals)
      for (double v : lvl) r = std::max(r, v);
    return r;
  }
};

/// A payoff given by deterministic per-step integrands; its representing pair is known exactly.
struct AnalyticPayoff {
  TimeGrid grid;
  std::vector<Vec> h;       // per step, length d
  std::vector<Vec> htilde;  // per step, length m
};

namespace detail {

/// Basis value q of outcome c: Brownian components first, then compensated jump indicators.
inline double basis(const Lattice& lat, std::size_t level, const Outcome& o, std::size_t q) {
  const std::size_t d = lat.brownian_dim();
  return q < d ? o.dW[q] : lat.compensated(level, o, q - d);
}

}  // namespace detail

/// Fill pair.steps / residuals for levels [first, last) from the martingale values in M.
inline void represent_levels(const Lattice& lat, const AdaptedProcess& M, std::size_t first, std::size_t last,
                             RepresentingPair& pair) {
  const std::size_t d = lat.brownian_dim();
  const std::size_t m = lat.jump_count();
  const std::size_t p = d + m;
  const std::size_t b = lat.branching();
  pair.steps.resize(lat.steps());
  pair.residuals.resize(lat.steps());

  for (std::size_t l = first; l < last; ++l) {
    const auto& table = lat.outcomes(l);
    Eigen::MatrixXd B(b, p);
    Eigen::VectorXd w(b);
    for (std::size_t c = 0; c < b; ++c) {
      w(c) = table[c].prob;
      for (std::size_t q = 0; q < p; ++q) B(c, q) = detail::basis(lat, l, table[c], q);
    }
    const Eigen::MatrixXd gram = B.transpose() * w.asDiagonal() * B;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    bool singular = ldlt.info() != Eigen::Success || !ldlt.isPositive();
    if (!singular) {
      const auto D = ldlt.vectorD();
      const double scale = gram.diagonal().cwiseAbs().maxCoeff();
      for (Eigen::Index i = 0; i < D.size(); ++i) singular = singular || D(i) <= 1e-14 * scale;
    }

    const Vec& now = M.levels[l];
    const Vec& next = M.levels[l + 1];
    auto& steps = pair.steps[l];
    auto& res = pair.residuals[l];
    steps.assign(now.size(), IntegrandStep{Vec(d, 0.0), Vec(m, 0.0)});
    res.assign(now.size(), 0.0);

    Eigen::VectorXd dM(b), rhs(p), coef(p);
    for (std::size_t k = 0; k < now.size(); ++k) {
      for (std::size_t c = 0; c < b; ++c) dM(c) = next[k * b + c] - now[k];
      if (singular) {
        pair.singular_nodes.push_back(lat.node_id(l, k));
        coef.setZero();
      } else {
        rhs = B.transpose() * w.cwiseProduct(dM);
        coef = ldlt.solve(rhs);
      }
      const Eigen::VectorXd err = dM - B * coef;
      res[k] = std::sqrt(std::max(0.0, err.cwiseProduct(err).dot(w)));
      for (std::size_t q = 0; q < d; ++q) steps[k].H[q] = coef(q);
      for (std::size_t j = 0; j < m; ++j) steps[k].Htilde[j] = coef(d + j);
    }
  }
}

inline RepresentingPair represent(const Lattice& lat, const RandomVariable& X) {
  const AdaptedProcess M = martingale(lat, X);
  RepresentingPair pair;
  pair.mean = M.levels[0][0];
  represent_levels(lat, M, 0, lat.steps(), pair);
  return pair;
}

inline void check_pair(const Lattice& lat, const RepresentingPair& pair) {
  require(pair.steps.size() == lat.steps(), "representing pair does not cover the lattice levels");
  for (std::size_t l = 0; l < lat.steps(); ++l) {
    require(pair.steps[l].size() == lat.level_size(l), "representing pair does not cover every node");
    for (const auto& s : pair.steps[l]) {
      require(s.H.size() == lat.brownian_dim() && s.Htilde.size() == lat.jump_count(),
              "integrand dimension does not match the noise model");
    }
  }
}

/// Forward stochastic sum: mean + sum over the path of H dW + sum_j H~_j (1{jump=j} - nu_j dt).
inline RandomVariable assemble(const Lattice& lat, const RepresentingPair& pair) {
  check_pair(lat, pair);
  const std::size_t b = lat.branching();
  Vec cur{pair.mean};
  for (std::size_t l = 0; l < lat.steps(); ++l) {
    const auto& table = lat.outcomes(l);
    Vec next(lat.level_size(l + 1));
    for (std::size_t k = 0; k < cur.size(); ++k) {
      const IntegrandStep& s = pair.steps[l][k];
      for (std::size_t c = 0; c < b; ++c) {
        double inc = 0.0;
        for (std::size_t i = 0; i < s.H.size(); ++i) inc += s.H[i] * table[c].dW[i];
        for (std::size_t j = 0; j < s.Htilde.size(); ++j) inc += s.Htilde[j] * lat.compensated(l, table[c], j);
        next[k * b + c] = cur[k] + inc;
      }
    }
    cur = std::move(next);
  }
  return RandomVariable{std::move(cur)};
}

inline void check_analytic(const AnalyticPayoff& ap, std::size_t d, std::size_t m) {
  const std::size_t n = ap.grid.steps();
  require(n > 0, "analytic payoff needs at least one step");
  require(ap.h.size() == n && ap.htilde.size() == n, "analytic integrands must have one entry per step");
  for (std::size_t i = 0; i < n; ++i) {
    require(ap.h[i].size() == d && ap.htilde[i].size() == m, "analytic integrand dimension mismatch");
    for (double v : ap.h[i]) require(std::isfinite(v), "analytic integrand must be finite");
    for (double v : ap.htilde[i]) require(std::isfinite(v), "analytic integrand must be finite");
  }
}

/// Broadcast deterministic integrands to every node of the matching lattice.
inline RepresentingPair lift_analytic(const AnalyticPayoff& ap, const Lattice& lat) {
  require(ap.grid == lat.grid(), "analytic payoff grid differs from the lattice grid");
  check_analytic(ap, lat.brownian_dim(), lat.jump_count());
  RepresentingPair pair;
  pair.steps.resize(lat.steps());
  pair.residuals.resize(lat.steps());
  for (std::size_t l = 0; l < lat.steps(); ++l) {
    pair.steps[l].assign(lat.level_size(l), IntegrandStep{ap.h[l], ap.htilde[l]});
    pair.residuals[l].assign(lat.level_size(l), 0.0);
  }
  return pair;
}

}  // namespace ddm
