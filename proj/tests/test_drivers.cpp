#include <gtest/gtest.h>

#include <cmath>

#include "ddm/drivers.hpp"
#include "ddm/infconv.hpp"
#include "oracle.hpp"

using namespace ddm;

namespace {

const JumpMeasure kTwoAtoms{{{-1.0}, {2.0}}, {0.3, 0.7}};
const Vec kIdentity{-1.0, 2.0};

Vec finite_difference(const DriverSpec& g, const Vec& h, const Vec& ht, const JumpMeasure& nu, double step) {
  Vec x = h;
  x.insert(x.end(), ht.begin(), ht.end());
  const std::size_t d = h.size();
  Vec grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Vec up = x, dn = x;
    up[i] += step;
    dn[i] -= step;
    const double fu = eval_driver(g, 0.0, std::span(up).subspan(0, d), std::span(up).subspan(d), nu);
    const double fd = eval_driver(g, 0.0, std::span(dn).subspan(0, d), std::span(dn).subspan(d), nu);
    grad[i] = (fu - fd) / (2.0 * step);
  }
  return grad;
}

std::vector<DriverSpec> valid_drivers() {
  return {DriverSpec::variance(1.0),
          DriverSpec::variance(0.25),
          DriverSpec::norm_cd(1.0, 1.0),
          DriverSpec::norm_cd(2.0, 0.5),
          DriverSpec::scaled(3.0, DriverSpec::norm_cd(1.0, 2.0)),
          DriverSpec::scaled(0.5, DriverSpec::variance(2.0))};
}

}  // namespace

TEST(EvalDriver, Examples) {
  EXPECT_EQ(eval_driver(DriverSpec::variance(2.0), 0.0, Vec{1.0}, Vec{}, JumpMeasure{}), 2.0);
  const JumpMeasure one{{{1.0}}, {1.0}};
  EXPECT_EQ(eval_driver(DriverSpec::norm_cd(1.0, 2.0), 0.0, Vec{3.0, 4.0}, Vec{3.0}, one), 11.0);
  for (const auto& g : valid_drivers()) EXPECT_EQ(eval_driver(g, 0.0, Vec{0.0}, Vec{0.0, 0.0}, kTwoAtoms), 0.0);
  EXPECT_EQ(eval_driver(DriverSpec::cvar_jump(0.5), 0.0, Vec{}, Vec{0.0, 0.0}, kTwoAtoms), 0.0);
}

TEST(EvalDriver, Errors) {
  EXPECT_THROW(eval_driver(DriverSpec::variance(1.0), 0.0, Vec{1.0}, Vec{1.0}, JumpMeasure{}), ValidationError);
  EXPECT_THROW(eval_driver(DriverSpec::cvar_jump(1.0), 0.0, Vec{}, kIdentity, kTwoAtoms), ValidationError);
  EXPECT_THROW(DriverSpec::variance(0.0), ValidationError);
  EXPECT_THROW(DriverSpec::variance(-1.0), ValidationError);
  EXPECT_THROW(DriverSpec::norm_cd(0.0, 0.0), ValidationError);
  EXPECT_THROW(DriverSpec::norm_cd(-1.0, 1.0), ValidationError);
  EXPECT_THROW(DriverSpec::cvar_jump(0.0), ValidationError);
  EXPECT_THROW(DriverSpec::scaled(0.0, DriverSpec::variance(1.0)), ValidationError);
}

TEST(Quantiles, VarExamples) {
  EXPECT_EQ(var_nu(0.5, Vec{0.0, 0.0}, kTwoAtoms), 0.0);
  EXPECT_EQ(var_nu(0.9, Vec{0.0, 0.0}, kTwoAtoms), 0.0);
  EXPECT_EQ(var_nu(0.2, kIdentity, kTwoAtoms), 1.0);
  EXPECT_EQ(var_nu(0.4, kIdentity, kTwoAtoms), -2.0);
}

TEST(Quantiles, CVaRExamples) {
  EXPECT_EQ(cvar_nu(0.5, Vec{0.0, 0.0}, kTwoAtoms), 0.0);
  EXPECT_NEAR(cvar_nu(0.5, kIdentity, kTwoAtoms), -0.2, 1e-15);
  EXPECT_EQ(cvar_nu(0.5, Vec{5.0}, JumpMeasure{{{1.0}}, {1.0}}), -5.0);
}

TEST(Quantiles, LevelOutOfRange) {
  EXPECT_THROW(var_nu(0.0, kIdentity, kTwoAtoms), ValidationError);
  EXPECT_THROW(var_nu(1.0, kIdentity, kTwoAtoms), ValidationError);
  EXPECT_THROW(cvar_nu(1.5, kIdentity, kTwoAtoms), ValidationError);
  EXPECT_THROW(cvar_nu(0.5, Vec{1.0}, kTwoAtoms), ValidationError);
}

TEST(Quantiles, MatchBruteForceOracle) {
  oracle::Gen gen(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = gen.index(1, 6);
    JumpMeasure nu;
    Vec ht(m);
    for (std::size_t j = 0; j < m; ++j) {
      nu.marks.push_back({double(j + 1)});
      nu.intensities.push_back(double(gen.index(1, 16)) / 16.0);
      ht[j] = double(int(gen.index(0, 16)) - 8) / 4.0;  // ties are common
    }
    const double total = nu.total();
    const double a = double(gen.index(1, std::size_t(total * 32.0) - 1)) / 32.0;
    EXPECT_EQ(var_nu(a, ht, nu), oracle::var_nu(a, ht, nu.intensities)) << "trial " << trial;
    EXPECT_EQ(cvar_nu(a, ht, nu), oracle::cvar_nu(a, ht, nu.intensities)) << "trial " << trial;
  }
}

TEST(Subgradient, Examples) {
  const Vec z = subgradient(DriverSpec::variance(1.0), 0.0, Vec{0.0}, Vec{}, JumpMeasure{});
  EXPECT_EQ(z, Vec{0.0});

  const JumpMeasure half{{{1.0}}, {0.5}};
  const DriverSpec var1 = DriverSpec::variance(1.0);
  const Vec g = subgradient(var1, 0.0, Vec{2.0}, Vec{4.0}, half);
  const Vec fd = finite_difference(var1, {2.0}, {4.0}, half, 1e-6);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0], 4.0);
  EXPECT_EQ(g[1], 4.0);
  EXPECT_NEAR(fd[0], 4.0, 1e-6);
  EXPECT_NEAR(fd[1], 4.0, 1e-6);

  const DriverSpec norm = DriverSpec::norm_cd(1.0, 0.0);
  const Vec n = subgradient(norm, 0.0, Vec{3.0, 4.0}, Vec{}, JumpMeasure{});
  const Vec nfd = finite_difference(norm, {3.0, 4.0}, {}, JumpMeasure{}, 1e-6);
  EXPECT_NEAR(n[0], 0.6, 1e-15);
  EXPECT_NEAR(n[1], 0.8, 1e-15);
  EXPECT_NEAR(nfd[0], 0.6, 1e-6);
  EXPECT_NEAR(nfd[1], 0.8, 1e-6);
}

TEST(Subgradient, KinkReturnsZeroElement) {
  const DriverSpec norm = DriverSpec::norm_cd(1.0, 1.0);
  const Vec g = subgradient(norm, 0.0, Vec{0.0, 0.0}, Vec{0.0}, JumpMeasure{{{1.0}}, {0.5}});
  for (double v : g) EXPECT_EQ(v, 0.0);
  const Vec partial = subgradient(norm, 0.0, Vec{3.0, 4.0}, Vec{0.0}, JumpMeasure{{{1.0}}, {0.5}});
  EXPECT_NEAR(partial[0], 0.6, 1e-15);
  EXPECT_EQ(partial[2], 0.0);
}

TEST(Subgradient, ScaledUsesBaseAtScaledPoint) {
  const DriverSpec base = DriverSpec::variance(1.0);
  const DriverSpec s = DriverSpec::scaled(2.0, base);
  const Vec g = subgradient(s, 0.0, Vec{4.0}, Vec{}, JumpMeasure{});
  EXPECT_EQ(g, subgradient(base, 0.0, Vec{2.0}, Vec{}, JumpMeasure{}));
  const Vec fd = finite_difference(s, {4.0}, {}, JumpMeasure{}, 1e-6);
  EXPECT_NEAR(fd[0], g[0], 1e-6);
}

TEST(Subgradient, CustomWithoutOracle) {
  const DriverSpec c = DriverSpec::custom("abs", [](double, std::span<const double> h, std::span<const double>,
                                                     const JumpMeasure&) { return std::abs(h[0]); });
  EXPECT_EQ(eval_driver(c, 0.0, Vec{-2.0}, Vec{}, JumpMeasure{}), 2.0);
  EXPECT_THROW(subgradient(c, 0.0, Vec{1.0}, Vec{}, JumpMeasure{}), ValidationError);
}

TEST(CheckDriver, ValidDriversPass) {
  const JumpMeasure nu{{{1.0}, {-0.5}}, {0.4, 0.2}};
  for (const auto& g : valid_drivers()) {
    const ValidityReport r = check_driver(g, nu, 2, 500, 17);
    EXPECT_TRUE(r.all_pass()) << g.name() << ": " << r.nonnegativity.detail << r.zero_iff_zero.detail
                              << r.convexity.detail << r.subgradient.detail;
    EXPECT_EQ(r.samples, 500u);
  }
}

TEST(CheckDriver, CVaRNegativityWitness) {
  const DriverSpec g = DriverSpec::cvar_jump(0.5);
  const ValidityReport r = check_driver(g, kTwoAtoms, 0, 200, 3);
  EXPECT_FALSE(r.nonnegativity.pass);
  ASSERT_EQ(r.nonnegativity.witness.size(), 1u);
  const Vec& w = r.nonnegativity.witness.front();
  EXPECT_EQ(w, kIdentity);
  EXPECT_NEAR(eval_driver(g, 0.0, Vec{}, w, kTwoAtoms), -0.2, 1e-15);
}

TEST(CheckDriver, ConcaveCustomFailsConvexity) {
  const DriverSpec g = DriverSpec::custom(
      "sqrt-abs",
      [](double, std::span<const double> h, std::span<const double>, const JumpMeasure&) {
        return std::sqrt(std::abs(h[0]));
      });
  const ValidityReport r = check_driver(g, JumpMeasure{}, 1, 300, 5);
  EXPECT_FALSE(r.convexity.pass);
  ASSERT_EQ(r.convexity.witness.size(), 2u);
  const Vec& x = r.convexity.witness[0];
  const Vec& y = r.convexity.witness[1];
  const Vec mid{0.5 * (x[0] + y[0])};
  auto f = [&](const Vec& v) { return eval_driver(g, 0.0, v, Vec{}, JumpMeasure{}); };
  EXPECT_GT(f(mid), 0.5 * (f(x) + f(y)));
}

// ---------------------------------------------------------------------------
// Properties.

TEST(DriverProperty, NormHomogeneity) {
  oracle::Gen gen(41);
  const JumpMeasure nu{{{1.0}, {2.0}}, {0.3, 0.6}};
  for (int trial = 0; trial < 200; ++trial) {
    const DriverSpec g = DriverSpec::norm_cd(gen.uniform(0.0, 3.0), gen.uniform(0.1, 3.0));
    const Vec h = gen.normals(2), ht = gen.normals(2);
    const double lam = gen.uniform(0.0, 10.0);
    Vec lh = h, lht = ht;
    for (double& v : lh) v *= lam;
    for (double& v : lht) v *= lam;
    const double base = eval_driver(g, 0.0, h, ht, nu);
    EXPECT_NEAR(eval_driver(g, 0.0, lh, lht, nu), lam * base, 1e-12 * (1.0 + lam * base));
  }
}

TEST(DriverProperty, VarianceQuadraticScaling) {
  oracle::Gen gen(42);
  const JumpMeasure nu{{{1.0}, {2.0}}, {0.3, 0.6}};
  for (int trial = 0; trial < 200; ++trial) {
    const DriverSpec g = DriverSpec::variance(gen.uniform(0.1, 3.0));
    const Vec h = gen.normals(3), ht = gen.normals(2);
    const double lam = gen.uniform(-5.0, 5.0);
    Vec lh = h, lht = ht;
    for (double& v : lh) v *= lam;
    for (double& v : lht) v *= lam;
    const double base = eval_driver(g, 0.0, h, ht, nu);
    EXPECT_NEAR(eval_driver(g, 0.0, lh, lht, nu), lam * lam * base, 1e-12 * (1.0 + lam * lam * base));
  }
}

TEST(DriverProperty, SubgradientInequality) {
  oracle::Gen gen(43);
  const JumpMeasure nu{{{1.0}, {2.0}}, {0.3, 0.6}};
  for (const auto& g : valid_drivers()) {
    for (int trial = 0; trial < 100; ++trial) {
      Vec h = gen.normals(2, 2.0), ht = gen.normals(2, 2.0);
      if (trial % 10 == 0) std::fill(ht.begin(), ht.end(), 0.0);
      if (trial % 10 == 1) std::fill(h.begin(), h.end(), 0.0);
      const Vec yh = gen.normals(2, 2.0), yht = gen.normals(2, 2.0);
      const Vec s = subgradient(g, 0.0, h, ht, nu);
      double lin = eval_driver(g, 0.0, h, ht, nu);
      for (std::size_t i = 0; i < 2; ++i) lin += s[i] * (yh[i] - h[i]) + s[2 + i] * (yht[i] - ht[i]);
      EXPECT_GE(eval_driver(g, 0.0, yh, yht, nu), lin - 1e-8) << g.name();
    }
  }
}

TEST(DriverProperty, ScaledIdentity) {
  oracle::Gen gen(44);
  const JumpMeasure nu{{{1.0}, {2.0}}, {0.3, 0.6}};
  for (const auto& base : valid_drivers()) {
    for (int trial = 0; trial < 50; ++trial) {
      const double gamma = gen.uniform(0.1, 5.0);
      const Vec h = gen.normals(2), ht = gen.normals(2);
      Vec sh = h, sht = ht;
      for (double& v : sh) v /= gamma;
      for (double& v : sht) v /= gamma;
      const double want = gamma * eval_driver(base, 0.0, sh, sht, nu);
      EXPECT_NEAR(eval_driver(DriverSpec::scaled(gamma, base), 0.0, h, ht, nu), want, 1e-12 * (1.0 + want));
    }
  }
}

TEST(DriverProperty, ScaledVarianceIsVariance) {
  // gamma * alpha |h / gamma|^2 = (alpha / gamma) |h|^2
  const JumpMeasure nu{{{1.0}}, {0.5}};
  const DriverSpec s = DriverSpec::scaled(4.0, DriverSpec::variance(2.0));
  EXPECT_DOUBLE_EQ(eval_driver(s, 0.0, Vec{2.0}, Vec{2.0}, nu),
                   eval_driver(DriverSpec::variance(0.5), 0.0, Vec{2.0}, Vec{2.0}, nu));
}

TEST(DriverSpecTest, StructuralEquality) {
  EXPECT_EQ(DriverSpec::variance(1.0), DriverSpec::variance(1.0));
  EXPECT_FALSE(DriverSpec::variance(1.0) == DriverSpec::variance(2.0));
  EXPECT_EQ(DriverSpec::scaled(2.0, DriverSpec::norm_cd(1, 0)), DriverSpec::scaled(2.0, DriverSpec::norm_cd(1, 0)));
  EXPECT_FALSE(DriverSpec::norm_cd(1, 0) == DriverSpec::variance(1.0));
  EXPECT_EQ(DriverSpec::variance(1.0).name(), "variance");
}
