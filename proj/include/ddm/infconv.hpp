#pragma once

// Pointwise inf-convolution of two drivers. Closed forms cover two quadratic
// drivers and two rescalings gamma * g(./gamma) of a common base; everything
// else goes through the subgradient solver, followed by a snap onto nearby
// kinks (a block of z or h - z set exactly to zero) when that does not raise
// the objective.

#include <cmath>
#include <span>
#include <vector>

#include "ddm/drivers.hpp"
#include "ddm/optim.hpp"

namespace ddm {


namespace detail {

struct ScaledView {
  double gamma;
  const DriverSpec* base;
};

inline ScaledView scaled_view(const DriverSpec& g) {
  if (auto* s = g.as<ScaledDriver>()) return {s->gamma, s->base.get()};
  return {1.0, &g};
}

/// min over the two subgradient selections v of dist(v, other subdifferential).
inline double certificate_gap(const DriverSpec& ga, const DriverSpec& gb, double t, std::span<const double> h,
                              std::span<const double> ht, const JumpMeasure& nu, std::span<const double> z,
                              std::span<const double> zt) {
  Vec ra(h.begin(), h.end()), rta(ht.begin(), ht.end());
  for (std::size_t i = 0; i < ra.size(); ++i) ra[i] -= z[i];
  for (std::size_t j = 0; j < rta.size(); ++j) rta[j] -= zt[j];
  const Vec va = subgradient(ga, t, ra, rta, nu);
  const Vec vb = subgradient(gb, t, z, zt, nu);
  return std::min(subdiff_distance(gb, t, z, zt, nu, va), subdiff_distance(ga, t, ra, rta, nu, vb));
}

}  // namespace detail

inline InfConvResult infconv_value(const DriverSpec& ga, const DriverSpec& gb, double t, std::span<const double> h,
                                   std::span<const double> htilde, const JumpMeasure& nu, const SolverConfig& cfg) {
  require(htilde.size() == nu.size(), "jump integrand length differs from the number of marks");
  const std::size_t d = h.size();
  const std::size_t p = d + htilde.size();

  auto objective = [&](std::span<const double> z) {
    Vec ra(h.begin(), h.end()), rta(htilde.begin(), htilde.end());
    for (std::size_t i = 0; i < d; ++i) ra[i] -= z[i];
    for (std::size_t j = 0; j < rta.size(); ++j) rta[j] -= z[d + j];
    return eval_driver(ga, t, ra, rta, nu) + eval_driver(gb, t, z.subspan(0, d), z.subspan(d), nu);
  };
  auto finish = [&](InfConvResult& r, const Vec& zfull) {
    r.z.assign(zfull.begin(), zfull.begin() + static_cast<std::ptrdiff_t>(d));
    r.ztilde.assign(zfull.begin() + static_cast<std::ptrdiff_t>(d), zfull.end());
    r.value = objective(zfull);
    r.certificate_gap = detail::certificate_gap(ga, gb, t, h, htilde, nu, r.z, r.ztilde);
  };

  Vec hfull(h.begin(), h.end());
  hfull.insert(hfull.end(), htilde.begin(), htilde.end());

  if (cfg.closed_forms) {
    const auto* va = ga.as<VarianceDriver>();
    const auto* vb = gb.as<VarianceDriver>();
    const auto sa = detail::scaled_view(ga);
    const auto sb = detail::scaled_view(gb);
    double share = -1.0;
    if (va && vb) {
      share = va->alpha / (va->alpha + vb->alpha);
    } else if ((ga.as<ScaledDriver>() || gb.as<ScaledDriver>()) && *sa.base == *sb.base) {
      share = sb.gamma / (sa.gamma + sb.gamma);
    }
    if (share >= 0.0) {
      InfConvResult r;
      Vec z = hfull;
      for (double& x : z) x *= share;
      finish(r, z);
      if (va && vb) {
        r.value = va->alpha * vb->alpha / (va->alpha + vb->alpha) *
                  (detail::sq_norm(h) + detail::nu_sq_norm(htilde, nu));
      }
      r.attained = true;
      r.closed_form = true;
      return r;
    }
  }

  Vec init(p, 0.0);
  if (cfg.init == InitRule::Half)
    for (std::size_t i = 0; i < p; ++i) init[i] = 0.5 * hfull[i];
  if (cfg.init == InitRule::Full) init = hfull;

  ObjectiveOracle obj;
  obj.value = objective;
  obj.subgradient = [&](std::span<const double> z) {
    Vec ra(h.begin(), h.end()), rta(htilde.begin(), htilde.end());
    for (std::size_t i = 0; i < d; ++i) ra[i] -= z[i];
    for (std::size_t j = 0; j < rta.size(); ++j) rta[j] -= z[d + j];
    const Vec sa = subgradient(ga, t, ra, rta, nu);
    Vec s = subgradient(gb, t, z.subspan(0, d), z.subspan(d), nu);
    for (std::size_t i = 0; i < p; ++i) s[i] -= sa[i];
    return s;
  };
  const MinimizeResult mr = minimize(obj, init, cfg);

  InfConvResult best;
  finish(best, mr.argmin);
  best.iterations = mr.iterations;

  // Kink snapping: per block (Brownian, jump), optionally set z or h - z to zero.
  const double snap = 1e-3 * std::max(1.0, detail::norm(hfull));
  const std::size_t blocks[3] = {0, d, p};
  for (int mask = 1; mask < 16; ++mask) {
    Vec z = mr.argmin;
    bool feasible = true;
    std::vector<std::size_t> free;
    for (int blk = 0; blk < 2 && feasible; ++blk) {
      const int choice = (mask >> (2 * blk)) & 3;  // 0 keep, 1 z = 0, 2 z = h, 3 invalid
      if (choice == 0) {
        for (std::size_t i = blocks[blk]; i < blocks[blk + 1]; ++i) free.push_back(i);
        continue;
      }
      if (choice == 3 || blocks[blk] == blocks[blk + 1]) {
        feasible = false;
        break;
      }
      for (std::size_t i = blocks[blk]; i < blocks[blk + 1]; ++i) {
        const double target = choice == 1 ? 0.0 : hfull[i];
        if (std::abs(z[i] - target) > snap) feasible = false;
        z[i] = target;
      }
    }
    if (!feasible) continue;
    // Re-minimize the unsnapped block with the snapped one held fixed.
    if (!free.empty()) {
      auto embed = [&](std::span<const double> x) {
        Vec full = z;
        for (std::size_t i = 0; i < free.size(); ++i) full[free[i]] = x[i];
        return full;
      };
      ObjectiveOracle sub;
      sub.value = [&](std::span<const double> x) { return objective(embed(x)); };
      sub.subgradient = [&](std::span<const double> x) {
        const Vec g = obj.subgradient(embed(x));
        Vec r(free.size());
        for (std::size_t i = 0; i < free.size(); ++i) r[i] = g[free[i]];
        return r;
      };
      Vec x0(free.size());
      for (std::size_t i = 0; i < free.size(); ++i) x0[i] = z[free[i]];
      const MinimizeResult pr = minimize(sub, x0, cfg);
      if (pr.value < objective(z)) z = embed(pr.argmin);
    }
    const double v = objective(z);
    if (v > mr.value + cfg.tolerance * std::max(1.0, std::abs(mr.value))) continue;
    InfConvResult cand;
    finish(cand, z);
    cand.iterations = mr.iterations;
    if (cand.certificate_gap < best.certificate_gap ||
        (cand.certificate_gap == best.certificate_gap && cand.value < best.value))
      best = cand;
  }

  const double attain_tol = std::sqrt(cfg.step_tolerance);
  best.attained = mr.converged && best.certificate_gap <= attain_tol;
  return best;
}

}  // namespace ddm
