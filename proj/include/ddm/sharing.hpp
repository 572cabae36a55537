#pragma once

// Two-agent risk sharing. The optimal transfer is built node by node from the
// inf-convolution argmins against the representing pair of X_A + X_B; the
// price comes from the participation constraint of agent B, bound at t = 0.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ddm/deviation.hpp"
#include "ddm/drivers.hpp"
#include "ddm/infconv.hpp"
#include "ddm/lattice.hpp"
#include "ddm/repr.hpp"

namespace ddm {

struct SharingProblem {
  RandomVariable xa, xb;
  DriverSpec ga = DriverSpec::variance(1.0);
  DriverSpec gb = DriverSpec::variance(1.0);
  SolverConfig solver;
  double max_residual = std::numeric_limits<double>::infinity();
};

struct NodeArgmin {
  Vec z, ztilde;
  double value = 0.0;
  bool attained = true;
  double gap = 0.0;
};

struct SharingSolution {
  std::vector<std::vector<NodeArgmin>> argmins;  // [level][node]
  RepresentingPair total_pair;                   // representing pair of X_A + X_B
  RandomVariable y_star;                         // zero-mean optimal Y
  RandomVariable y_tilde_star;                   // Y* - X_B
  double price = 0.0;
  DeviationProcess infconv_D;
  bool attained = true;
  std::size_t unattained_nodes = 0;
  double certificate_gap = 0.0;
  double delta_ua = 0.0;
  double delta_ub = 0.0;
  double residual = 0.0;  // largest representation residual of X_A + X_B
  double d0_a = 0.0;      // D^A_0(X_A)
  double d0_b = 0.0;      // D^B_0(X_B)
};

inline SharingSolution solve_sharing(const Lattice& lat, const SharingProblem& prob) {
  check_payoff(lat, prob.xa);
  check_payoff(lat, prob.xb);
  prob.solver.validate();

  SharingSolution sol;
  RandomVariable total{prob.xa.values};
  for (std::size_t i = 0; i < total.size(); ++i) total.values[i] += prob.xb[i];
  sol.total_pair = represent(lat, total);
  sol.residual = sol.total_pair.max_residual();
  if (sol.residual > prob.max_residual) {
    throw ValidationError("representation residual " + std::to_string(sol.residual) + " exceeds the threshold " +
                          std::to_string(prob.max_residual));
  }

  RepresentingPair opt;
  opt.mean = 0.0;
  opt.steps.resize(lat.steps());
  opt.residuals.resize(lat.steps());
  sol.argmins.resize(lat.steps());
  std::vector<Vec> rates(lat.steps());
  for (std::size_t l = 0; l < lat.steps(); ++l) {
    const auto& steps = sol.total_pair.steps[l];
    sol.argmins[l].resize(steps.size());
    opt.steps[l].resize(steps.size());
    opt.residuals[l].assign(steps.size(), 0.0);
    rates[l].resize(steps.size());
    for (std::size_t k = 0; k < steps.size(); ++k) {
      const InfConvResult r =
          infconv_value(prob.ga, prob.gb, lat.grid().time(l), steps[k].H, steps[k].Htilde, lat.jumps(), prob.solver);
      sol.argmins[l][k] = NodeArgmin{r.z, r.ztilde, r.value, r.attained, r.certificate_gap};
      opt.steps[l][k] = IntegrandStep{r.z, r.ztilde};
      rates[l][k] = r.value;
      sol.certificate_gap = std::max(sol.certificate_gap, r.certificate_gap);
      if (!r.attained) ++sol.unattained_nodes;
    }
  }
  sol.attained = sol.unattained_nodes == 0;

  sol.infconv_D.driver = DriverSpec::infconv(prob.ga, prob.gb, prob.solver);
  sol.infconv_D.source = "X_A + X_B";
  accumulate_rates(lat, rates, 0, lat.steps(), sol.infconv_D.values);

  sol.y_star = assemble(lat, opt);
  sol.y_tilde_star = sol.y_star;
  for (std::size_t i = 0; i < total.size(); ++i) sol.y_tilde_star.values[i] -= prob.xb[i];

  // pi = E[Y'] - D^B_0(X_B + Y') + D^B_0(X_B) with Y' = Y~*.
  const auto DB_before = evaluate(lat, prob.gb, prob.xb);
  const auto DA_before = evaluate(lat, prob.ga, prob.xa);
  sol.d0_a = DA_before.d0();
  sol.d0_b = DB_before.d0();
  const double DB_after = evaluate(lat, prob.gb, sol.y_star).d0();
  sol.price = mean(lat, sol.y_tilde_star) - DB_after + sol.d0_b;

  RandomVariable b_after = sol.y_tilde_star;
  RandomVariable a_after = prob.xa;
  for (std::size_t i = 0; i < total.size(); ++i) {
    b_after.values[i] += prob.xb[i] - sol.price;
    a_after.values[i] -= sol.y_tilde_star[i] - sol.price;
  }
  sol.delta_ub = utility(lat, b_after, evaluate(lat, prob.gb, b_after), 0).front() -
                 utility(lat, prob.xb, DB_before, 0).front();
  sol.delta_ua = utility(lat, a_after, evaluate(lat, prob.ga, a_after), 0).front() -
                 utility(lat, prob.xa, DA_before, 0).front();
  return sol;
}

/// Y~* = gB/(gA+gB) X_A - gA/(gA+gB) X_B for drivers gamma * g(./gamma) of a common base.
inline RandomVariable proportional_transfer(double gamma_a, double gamma_b, const RandomVariable& xa,
                                            const RandomVariable& xb) {
  require(gamma_a > 0.0 && gamma_b > 0.0 && std::isfinite(gamma_a) && std::isfinite(gamma_b),
          "risk tolerances must be positive");
  require(xa.size() == xb.size(), "payoffs differ in size");
  const double wa = gamma_b / (gamma_a + gamma_b);
  const double wb = gamma_a / (gamma_a + gamma_b);
  RandomVariable y{Vec(xa.size())};
  for (std::size_t i = 0; i < y.size(); ++i) y.values[i] = wa * xa[i] - wb * xb[i];
  return y;
}

/// Whether g is differentiable at the origin, judged from directional slopes
/// g(eps e)/eps along the coordinate axes shrinking with eps.
inline bool differentiable_at_origin(const DriverSpec& g, std::size_t brownian_dim, const JumpMeasure& nu) {
  const std::size_t p = brownian_dim + nu.size();
  auto slope = [&](double eps) {
    double s = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      for (double sign : {1.0, -1.0}) {
        Vec x(p, 0.0);
        x[i] = sign * eps;
        const double v = eval_driver(g, 0.0, std::span(x).subspan(0, brownian_dim),
                                     std::span(x).subspan(brownian_dim), nu);
        s = std::max(s, v / eps);
      }
    }
    return s;
  };
  const double coarse = slope(1e-2);
  const double fine = slope(1e-6);
  return fine <= 1e-2 * coarse + 1e-12;
}

struct ResidualReport {
  bool skipped = false;
  bool premise_a = false;  // agent A's driver is differentiable at the origin
  bool premise_b = false;
  std::size_t active_nodes = 0;    // nodes with (h, h~) != 0
  std::size_t interior_nodes = 0;  // z* not in {0, (h, h~)}
  std::size_t zero_nodes = 0;      // z* = 0: all risk stays with A
  std::size_t full_nodes = 0;      // z* = (h, h~): all risk goes to B
  bool pass = true;
  std::string note;
};

inline ResidualReport residual_check(const Lattice& lat, const SharingSolution& sol, const SharingProblem& prob,
                                     double tol = 1e-8) {
  require(sol.attained, "residual check needs an attained solution");
  ResidualReport rep;
  RandomVariable total{prob.xa.values};
  for (std::size_t i = 0; i < total.size(); ++i) total.values[i] += prob.xb[i];
  const auto [lo, hi] = std::minmax_element(total.values.begin(), total.values.end());
  if (*hi - *lo <= 1e-12 * (1.0 + std::abs(*hi))) {
    rep.skipped = true;
    rep.note = "X_A + X_B is constant; premise fails";
    return rep;
  }
  rep.premise_a = differentiable_at_origin(prob.ga, lat.brownian_dim(), lat.jumps());
  rep.premise_b = differentiable_at_origin(prob.gb, lat.brownian_dim(), lat.jumps());

  for (std::size_t l = 0; l < lat.steps(); ++l) {
    for (std::size_t k = 0; k < lat.level_size(l); ++k) {
      const auto& st = sol.total_pair.steps[l][k];
      const auto& am = sol.argmins[l][k];
      double hn = 0.0, zn = 0.0, rn = 0.0;
      for (std::size_t i = 0; i < st.H.size(); ++i) {
        hn += st.H[i] * st.H[i];
        zn += am.z[i] * am.z[i];
        rn += (st.H[i] - am.z[i]) * (st.H[i] - am.z[i]);
      }
      for (std::size_t j = 0; j < st.Htilde.size(); ++j) {
        hn += st.Htilde[j] * st.Htilde[j];
        zn += am.ztilde[j] * am.ztilde[j];
        rn += (st.Htilde[j] - am.ztilde[j]) * (st.Htilde[j] - am.ztilde[j]);
      }
      if (std::sqrt(hn) <= 1e-12) continue;
      ++rep.active_nodes;
      const bool zero = std::sqrt(zn) <= tol;
      const bool full = std::sqrt(rn) <= tol;
      if (zero) ++rep.zero_nodes;
      if (full) ++rep.full_nodes;
      if (!zero && !full) ++rep.interior_nodes;
    }
  }
  // A keeps risk iff some node has z != h; B keeps risk iff some node has z != 0.
  const bool a_keeps = rep.full_nodes < rep.active_nodes;
  const bool b_keeps = rep.zero_nodes < rep.active_nodes;
  rep.pass = (!rep.premise_a || a_keeps) && (!rep.premise_b || b_keeps);
  if (!rep.premise_a && !rep.premise_b) {
    rep.note = "premise not met: neither driver is differentiable at the origin; corner solutions permitted";
  } else if (!rep.pass) {
    rep.note = "an agent with a driver differentiable at the origin holds no residual risk";
  } else {
    rep.note = "residual risk retained as required";
  }
  return rep;
}

}  // namespace ddm
