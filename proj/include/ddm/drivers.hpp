#pragma once

// Driver functions g(t, h, h~): convex, nonnegative penalties on the
// Brownian integrand h in R^d and the jump integrand h~ in R^m (one value per
// mark of the Levy measure). A driver generates a deviation measure through
// D_t(X) = E[ sum_{s >= t} g(s, H_s, H~_s) ds | F_t ].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ddm/errors.hpp"
#include "ddm/lattice.hpp"
#include "ddm/optim.hpp"

namespace ddm {

class DriverSpec;

/// alpha * (|h|^2 + sum_j nu_j h~_j^2)
struct VarianceDriver {
  double alpha = 1.0;
};

/// c |h| + d sqrt(sum_j nu_j h~_j^2)
struct NormCDDriver {
  double c = 1.0;
  double d = 0.0;
};

/// CVaR at level a of h~ under nu (tail average of the left-quantiles).
struct CVaRJumpDriver {
  double a = 0.5;
};

/// gamma * g(h / gamma, h~ / gamma)
struct ScaledDriver {
  double gamma = 1.0;
  std::shared_ptr<const DriverSpec> base;
};

/// Pointwise inf-convolution (gA [] gB)(h, h~) = inf_z gA(h - z, h~ - z~) + gB(z, z~).
struct InfConvDriver {
  std::shared_ptr<const DriverSpec> a;
  std::shared_ptr<const DriverSpec> b;
  SolverConfig solver;
};

/// User-supplied oracles. The subgradient oracle may be left empty.
struct CustomDriver {
  using EvalFn = std::function<double(double t, std::span<const double> h, std::span<const double> htilde,
                                      const JumpMeasure& nu)>;
  using SubgradFn = std::function<Vec(double t, std::span<const double> h, std::span<const double> htilde,
                                      const JumpMeasure& nu)>;
  std::string name;
  EvalFn eval;
  SubgradFn subgradient;
};

class DriverSpec {
 public:
  using Kind = std::variant<VarianceDriver, NormCDDriver, CVaRJumpDriver, ScaledDriver, InfConvDriver,
                            std::shared_ptr<const CustomDriver>>;

  static DriverSpec variance(double alpha) {
    require(std::isfinite(alpha) && alpha > 0.0, "variance driver needs alpha > 0");
    return DriverSpec(VarianceDriver{alpha});
  }

  static DriverSpec norm_cd(double c, double d) {
    require(std::isfinite(c) && std::isfinite(d) && c >= 0.0 && d >= 0.0, "norm driver needs c, d >= 0");
    require(c > 0.0 || d > 0.0, "norm driver needs c or d positive");
    return DriverSpec(NormCDDriver{c, d});
  }

  static DriverSpec cvar_jump(double a) {
    require(std::isfinite(a) && a > 0.0, "CVaR driver needs a > 0");
    return DriverSpec(CVaRJumpDriver{a});
  }

  static DriverSpec scaled(double gamma, DriverSpec base) {
    require(std::isfinite(gamma) && gamma > 0.0, "scaled driver needs gamma > 0");
    return DriverSpec(ScaledDriver{gamma, std::make_shared<const DriverSpec>(std::move(base))});
  }

  static DriverSpec infconv(DriverSpec a, DriverSpec b, SolverConfig solver = {}) {
    solver.validate();
    return DriverSpec(InfConvDriver{std::make_shared<const DriverSpec>(std::move(a)),
                                    std::make_shared<const DriverSpec>(std::move(b)), solver});
  }

  static DriverSpec custom(std::string name, CustomDriver::EvalFn eval, CustomDriver::SubgradFn subgrad = {}) {
    require(static_cast<bool>(eval), "custom driver needs an evaluation oracle");
    return DriverSpec(std::make_shared<const CustomDriver>(CustomDriver{std::move(name), std::move(eval),
                                                                        std::move(subgrad)}));
  }

  const Kind& kind() const { return kind_; }

  template <class T>
  const T* as() const {
    return std::get_if<T>(&kind_);
  }

  std::string name() const {
    struct Visitor {
      std::string operator()(const VarianceDriver&) const { return "variance"; }
      std::string operator()(const NormCDDriver&) const { return "norm_cd"; }
      std::string operator()(const CVaRJumpDriver&) const { return "cvar_jump"; }
      std::string operator()(const ScaledDriver&) const { return "scaled"; }
      std::string operator()(const InfConvDriver&) const { return "infconv"; }
      std::string operator()(const std::shared_ptr<const CustomDriver>& c) const { return "custom:" + c->name; }
    };
    return std::visit(Visitor{}, kind_);
  }

  /// Structural equality; custom drivers compare by identity.
  friend bool operator==(const DriverSpec& x, const DriverSpec& y) {
    if (x.kind_.index() != y.kind_.index()) return false;
    if (auto* v = x.as<VarianceDriver>()) return v->alpha == y.as<VarianceDriver>()->alpha;
    if (auto* v = x.as<NormCDDriver>()) return v->c == y.as<NormCDDriver>()->c && v->d == y.as<NormCDDriver>()->d;
    if (auto* v = x.as<CVaRJumpDriver>()) return v->a == y.as<CVaRJumpDriver>()->a;
    if (auto* v = x.as<ScaledDriver>()) {
      const auto* w = y.as<ScaledDriver>();
      return v->gamma == w->gamma && *v->base == *w->base;
    }
    if (auto* v = x.as<InfConvDriver>()) {
      const auto* w = y.as<InfConvDriver>();
      return *v->a == *w->a && *v->b == *w->b;
    }
    return *x.as<std::shared_ptr<const CustomDriver>>() == *y.as<std::shared_ptr<const CustomDriver>>();
  }

 private:
  explicit DriverSpec(Kind k) : kind_(std::move(k)) {}
  Kind kind_;
};

// ---------------------------------------------------------------------------
// Quantiles of jump integrands under a finite Levy measure.

namespace detail {

inline void check_quantile_args(double a, std::span<const double> htilde, const JumpMeasure& nu) {
  require(nu.size() >= 1, "quantiles under nu need at least one jump mark");
  require(htilde.size() == nu.size(), "jump integrand length differs from the number of marks");
  require(a > 0.0 && a < nu.total(), "quantile level must lie in (0, nu total mass)");
}

/// Indices of the marks ordered by loss u_j = -h~_j, largest first (stable).
inline std::vector<std::size_t> loss_order(std::span<const double> htilde) {
  std::vector<std::size_t> idx(htilde.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return -htilde[i] > -htilde[j]; });
  return idx;
}

}  // namespace detail

/// Left-quantile inf{ y : nu({h~ < -y}) <= a }.
inline double var_nu(double a, std::span<const double> htilde, const JumpMeasure& nu) {
  detail::check_quantile_args(a, htilde, nu);
  const auto order = detail::loss_order(htilde);
  double above = 0.0;  // nu-mass of strictly larger losses
  double result = -htilde[order.front()];
  std::size_t i = 0;
  while (i < order.size()) {
    const double u = -htilde[order[i]];
    if (above > a) break;
    result = u;
    while (i < order.size() && -htilde[order[i]] == u) above += nu.intensities[order[i++]];
  }
  return result;
}

/// Per-mark weights w_j with CVaR_a(h~) = (1/a) sum_j w_j (-h~_j).
inline Vec cvar_weights(double a, std::span<const double> htilde, const JumpMeasure& nu) {
  detail::check_quantile_args(a, htilde, nu);
  Vec w(htilde.size(), 0.0);
  double cum = 0.0;
  for (std::size_t j : detail::loss_order(htilde)) {
    const double next = cum + nu.intensities[j];
    w[j] = std::max(0.0, std::min(next, a) - cum);
    cum = next;
    if (cum >= a) break;
  }
  return w;
}

/// (1/a) * integral_0^a var_nu(b) db, exact over the quantile's step structure.
inline double cvar_nu(double a, std::span<const double> htilde, const JumpMeasure& nu) {
  const Vec w = cvar_weights(a, htilde, nu);
  double acc = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j)
    if (w[j] > 0.0) acc += w[j] * -htilde[j];
  return acc / a;
}

// ---------------------------------------------------------------------------
// Evaluation and subgradients.

struct InfConvResult {
  double value = 0.0;
  Vec z;        // Brownian part of the argmin (the share carried by B)
  Vec ztilde;   // jump part of the argmin
  bool attained = false;
  bool closed_form = false;
  double certificate_gap = 0.0;  // distance between dgA(h - z) and dgB(z), bounded above
  std::size_t iterations = 0;
};

inline InfConvResult infconv_value(const DriverSpec& ga, const DriverSpec& gb, double t, std::span<const double> h,
                            std::span<const double> htilde, const JumpMeasure& nu, const SolverConfig& cfg);

namespace detail {

inline double sq_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

inline double nu_sq_norm(std::span<const double> ht, const JumpMeasure& nu) {
  double s = 0.0;
  for (std::size_t j = 0; j < ht.size(); ++j) s += nu.intensities[j] * ht[j] * ht[j];
  return s;
}

inline Vec scaled_copy(std::span<const double> v, double f) {
  Vec out(v.begin(), v.end());
  for (double& x : out) x *= f;
  return out;
}

}  // namespace detail

inline double eval_driver(const DriverSpec& spec, double t, std::span<const double> h, std::span<const double> htilde,
                          const JumpMeasure& nu) {
  require(htilde.size() == nu.size(), "jump integrand length differs from the number of marks");
  if (auto* v = spec.as<VarianceDriver>()) return v->alpha * (detail::sq_norm(h) + detail::nu_sq_norm(htilde, nu));
  if (auto* v = spec.as<NormCDDriver>()) {
    return v->c * std::sqrt(detail::sq_norm(h)) + v->d * std::sqrt(detail::nu_sq_norm(htilde, nu));
  }
  if (auto* v = spec.as<CVaRJumpDriver>()) return cvar_nu(v->a, htilde, nu);
  if (auto* v = spec.as<ScaledDriver>()) {
    return v->gamma * eval_driver(*v->base, t, detail::scaled_copy(h, 1.0 / v->gamma),
                                  detail::scaled_copy(htilde, 1.0 / v->gamma), nu);
  }
  if (auto* v = spec.as<InfConvDriver>()) return infconv_value(*v->a, *v->b, t, h, htilde, nu, v->solver).value;
  const auto& c = *spec.as<std::shared_ptr<const CustomDriver>>();
  return c->eval(t, h, htilde, nu);
}

/// One element of the subdifferential at (h, h~), returned as (dh, dh~).
inline Vec subgradient(const DriverSpec& spec, double t, std::span<const double> h, std::span<const double> htilde,
                       const JumpMeasure& nu);

/// Euclidean distance from v to the subdifferential at (h, h~). Exact for the
/// variance, norm and scaled drivers; otherwise the distance to the selected
/// subgradient, which bounds it from above.
inline double subdiff_distance(const DriverSpec& spec, double t, std::span<const double> h,
                               std::span<const double> htilde, const JumpMeasure& nu, std::span<const double> v);

}  // namespace ddm

#include "ddm/infconv.hpp"

namespace ddm {

inline Vec subgradient(const DriverSpec& spec, double t, std::span<const double> h, std::span<const double> htilde,
                       const JumpMeasure& nu) {
  require(htilde.size() == nu.size(), "jump integrand length differs from the number of marks");
  const std::size_t d = h.size();
  Vec g(d + htilde.size(), 0.0);
  if (auto* v = spec.as<VarianceDriver>()) {
    for (std::size_t i = 0; i < d; ++i) g[i] = 2.0 * v->alpha * h[i];
    for (std::size_t j = 0; j < htilde.size(); ++j) g[d + j] = 2.0 * v->alpha * nu.intensities[j] * htilde[j];
    return g;
  }
  if (auto* v = spec.as<NormCDDriver>()) {
    const double hn = std::sqrt(detail::sq_norm(h));
    if (hn > 0.0)
      for (std::size_t i = 0; i < d; ++i) g[i] = v->c * h[i] / hn;
    const double q = std::sqrt(detail::nu_sq_norm(htilde, nu));
    if (q > 0.0)
      for (std::size_t j = 0; j < htilde.size(); ++j) g[d + j] = v->d * nu.intensities[j] * htilde[j] / q;
    return g;
  }
  if (auto* v = spec.as<CVaRJumpDriver>()) {
    const Vec w = cvar_weights(v->a, htilde, nu);
    for (std::size_t j = 0; j < w.size(); ++j) g[d + j] = -w[j] / v->a;
    return g;
  }
  if (auto* v = spec.as<ScaledDriver>()) {
    return subgradient(*v->base, t, detail::scaled_copy(h, 1.0 / v->gamma),
                       detail::scaled_copy(htilde, 1.0 / v->gamma), nu);
  }
  if (auto* v = spec.as<InfConvDriver>()) {
    const InfConvResult r = infconv_value(*v->a, *v->b, t, h, htilde, nu, v->solver);
    Vec ra(h.begin(), h.end()), rta(htilde.begin(), htilde.end());
    for (std::size_t i = 0; i < d; ++i) ra[i] -= r.z[i];
    for (std::size_t j = 0; j < rta.size(); ++j) rta[j] -= r.ztilde[j];
    if (detail::sq_norm(ra) + detail::sq_norm(rta) > 0.0) return subgradient(*v->a, t, ra, rta, nu);
    return subgradient(*v->b, t, r.z, r.ztilde, nu);
  }
  const auto& c = *spec.as<std::shared_ptr<const CustomDriver>>();
  if (!c->subgradient) throw ValidationError("custom driver '" + c->name + "' has no subgradient oracle");
  Vec out = c->subgradient(t, h, htilde, nu);
  require(out.size() == g.size(), "custom subgradient has the wrong dimension");
  return out;
}

namespace detail {

/// Distance from v to the ellipsoid { w : sum_j w_j^2 / nu_j <= r^2 }.
inline double ellipsoid_distance(std::span<const double> v, const JumpMeasure& nu, double r) {
  double inside = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) inside += v[j] * v[j] / nu.intensities[j];
  if (inside <= r * r) return 0.0;
  auto constraint = [&](double lam) {
    double s = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double w = v[j] * nu.intensities[j] / (nu.intensities[j] + lam);
      s += w * w / nu.intensities[j];
    }
    return s;
  };
  double lo = 0.0, hi = 1.0;
  while (constraint(hi) > r * r) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (constraint(mid) > r * r ? lo : hi) = mid;
  }
  double dist = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) {
    const double w = v[j] * nu.intensities[j] / (nu.intensities[j] + hi);
    dist += (v[j] - w) * (v[j] - w);
  }
  return std::sqrt(dist);
}

}  // namespace detail

inline double subdiff_distance(const DriverSpec& spec, double t, std::span<const double> h,
                               std::span<const double> htilde, const JumpMeasure& nu, std::span<const double> v) {
  const std::size_t d = h.size();
  require(v.size() == d + htilde.size(), "subgradient candidate has the wrong dimension");
  if (auto* n = spec.as<NormCDDriver>()) {
    const auto vh = v.subspan(0, d);
    const auto vj = v.subspan(d);
    double bh = 0.0;
    const double hn = std::sqrt(detail::sq_norm(h));
    if (n->c == 0.0) {
      bh = std::sqrt(detail::sq_norm(vh));
    } else if (hn > 0.0) {
      for (std::size_t i = 0; i < d; ++i) bh += std::pow(vh[i] - n->c * h[i] / hn, 2);
      bh = std::sqrt(bh);
    } else {
      bh = std::max(0.0, std::sqrt(detail::sq_norm(vh)) - n->c);
    }
    double bj = 0.0;
    const double q = std::sqrt(detail::nu_sq_norm(htilde, nu));
    if (n->d == 0.0) {
      bj = std::sqrt(detail::sq_norm(vj));
    } else if (q > 0.0) {
      for (std::size_t j = 0; j < htilde.size(); ++j)
        bj += std::pow(vj[j] - n->d * nu.intensities[j] * htilde[j] / q, 2);
      bj = std::sqrt(bj);
    } else {
      bj = detail::ellipsoid_distance(vj, nu, n->d);
    }
    return std::sqrt(bh * bh + bj * bj);
  }
  if (auto* s = spec.as<ScaledDriver>()) {
    return subdiff_distance(*s->base, t, detail::scaled_copy(h, 1.0 / s->gamma),
                            detail::scaled_copy(htilde, 1.0 / s->gamma), nu, v);
  }
  const Vec g = subgradient(spec, t, h, htilde, nu);
  double dist = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) dist += (v[i] - g[i]) * (v[i] - g[i]);
  return std::sqrt(dist);
}

// ---------------------------------------------------------------------------
// Sampled validity checks.

struct DriverCheck {
  bool pass = true;
  std::vector<Vec> witness;  // points (h concatenated with h~) reproducing the failure
  std::string detail;
};

struct ValidityReport {
  DriverCheck nonnegativity;
  DriverCheck zero_iff_zero;
  DriverCheck convexity;
  DriverCheck subgradient;
  std::size_t samples = 0;

  bool all_pass() const {
    return nonnegativity.pass && zero_iff_zero.pass && convexity.pass && subgradient.pass;
  }
};

inline ValidityReport check_driver(const DriverSpec& spec, const JumpMeasure& nu, std::size_t brownian_dim,
                                   std::size_t sample_count, std::uint64_t seed) {
  require(sample_count >= 1, "check_driver needs at least one sample");
  const std::size_t d = brownian_dim;
  const std::size_t p = d + nu.size();
  require(p >= 1, "driver check needs a Brownian or jump dimension");

  auto g = [&](const Vec& x) {
    return eval_driver(spec, 0.0, std::span(x).subspan(0, d), std::span(x).subspan(d), nu);
  };
  auto fail = [](DriverCheck& c, std::vector<Vec> w, std::string why) {
    if (!c.pass) return;
    c.pass = false;
    c.witness = std::move(w);
    c.detail = std::move(why);
  };

  ValidityReport rep;
  const Vec origin(p, 0.0);
  const double g0 = g(origin);
  if (std::abs(g0) > 1e-12) fail(rep.zero_iff_zero, {origin}, "g(0) != 0");

  // Deterministic probes first: the identity jump integrand h~_j = x_j (first
  // mark coordinate), its negation, and the coordinate axes.
  std::vector<Vec> probes;
  if (!nu.marks.empty()) {
    Vec id(p, 0.0);
    for (std::size_t j = 0; j < nu.size(); ++j) id[d + j] = nu.marks[j].front();
    probes.push_back(id);
    for (double& x : id) x = -x;
    probes.push_back(id);
  }
  for (std::size_t i = 0; i < p; ++i) {
    Vec e(p, 0.0);
    e[i] = 1.0;
    probes.push_back(e);
    e[i] = -1.0;
    probes.push_back(e);
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto random_point = [&]() {
    Vec x(p);
    const double scale = std::pow(10.0, -2.0 + 4.0 * unit(rng));
    for (double& v : x) v = scale * normal(rng);
    const double r = unit(rng);
    if (r < 0.15 && d > 0) std::fill(x.begin() + static_cast<std::ptrdiff_t>(d), x.end(), 0.0);
    if (r > 0.85 && p > d) std::fill(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(d), 0.0);
    return x;
  };

  bool subgradient_available = true;
  auto point_checks = [&](const Vec& x, double gx) {
    if (!(gx >= -1e-12)) fail(rep.nonnegativity, {x}, "g < 0");
    if (detail::sq_norm(x) > 0.0 && !(gx > 0.0)) fail(rep.zero_iff_zero, {x}, "g = 0 away from the origin");
  };
  for (const Vec& x : probes) point_checks(x, g(x));

  for (std::size_t s = 0; s < sample_count; ++s) {
    const Vec x = random_point();
    const Vec y = random_point();
    Vec mid(p);
    for (std::size_t i = 0; i < p; ++i) mid[i] = 0.5 * (x[i] + y[i]);
    const double gx = g(x), gy = g(y), gm = g(mid);
    point_checks(x, gx);
    point_checks(y, gy);
    if (gm > 0.5 * (gx + gy) + 1e-10 * (1.0 + std::abs(gx) + std::abs(gy)))
      fail(rep.convexity, {x, y}, "midpoint value exceeds the chord");
    if (subgradient_available) {
      try {
        const Vec sx = subgradient(spec, 0.0, std::span(x).subspan(0, d), std::span(x).subspan(d), nu);
        double lin = gx;
        for (std::size_t i = 0; i < p; ++i) lin += sx[i] * (y[i] - x[i]);
        if (gy < lin - 1e-8 * std::max({1.0, std::abs(gx), std::abs(gy)}))
          fail(rep.subgradient, {x, y}, "subgradient inequality violated");
      } catch (const ValidationError&) {
        subgradient_available = false;
        rep.subgradient.detail = "no subgradient oracle";
      }
    }
  }
  rep.samples = sample_count;
  return rep;
}

}  // namespace ddm
