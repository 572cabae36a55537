#include <gtest/gtest.h>

#include <cmath>

#include "ddm/deviation.hpp"
#include "ddm/expression.hpp"
#include "oracle.hpp"

using namespace ddm;

namespace {

double max_gap(const AdaptedProcess& a, const AdaptedProcess& b) {
  double r = 0.0;
  for (std::size_t l = 0; l < a.levels.size(); ++l) r = std::max(r, oracle::max_abs_diff(a.levels[l], b.levels[l]));
  return r;
}

RandomVariable scaled(const RandomVariable& X, double s) {
  RandomVariable Y = X;
  for (double& v : Y.values) v *= s;
  return Y;
}

const DriverSpec kVar = DriverSpec::variance(1.0);
const DriverSpec kNorm10 = DriverSpec::norm_cd(1.0, 0.0);
const DriverSpec kNorm11 = DriverSpec::norm_cd(1.0, 1.0);

}  // namespace

TEST(Evaluate, VarianceOfTerminalBrownian) {
  const Lattice lat = oracle::binomial(4);
  EXPECT_EQ(evaluate(lat, kVar, payoff_from_expression(lat, "W")).d0(), 1.0);
}

TEST(Evaluate, ConstantPayoff) {
  const Lattice lat(TimeGrid::uniform(1.0, 3), NoiseModel{1, {{{1.0}}, {0.5}}});
  for (const auto& g : {kVar, kNorm11}) {
    const auto D = evaluate(lat, g, RandomVariable{Vec(lat.leaf_count(), -2.5)});
    for (const auto& lvl : D.values.levels)
      for (double v : lvl) EXPECT_EQ(v, 0.0);
  }
}

TEST(Evaluate, NormOfTerminalBrownian) {
  const Lattice lat = oracle::binomial(4);
  EXPECT_EQ(evaluate(lat, kNorm10, payoff_from_expression(lat, "W")).d0(), 1.0);
}

TEST(Evaluate, DriverDimensionMismatch) {
  const Lattice lat = oracle::binomial(2);
  RepresentingPair p = represent(lat, payoff_from_expression(lat, "W"));
  p.steps[0][0].Htilde = {1.0};
  EXPECT_THROW(evaluate(lat, kVar, p), ValidationError);
}

TEST(EvaluateRecursive, SingleBlockIsEvaluate) {
  oracle::Gen gen(61);
  const Lattice lat(TimeGrid::uniform(1.0, 3), NoiseModel{1, {{{1.0}}, {0.5}}});
  const RandomVariable X = gen.payoff(lat);
  for (const auto& g : {kVar, kNorm11}) {
    const auto D = evaluate(lat, g, X);
    const auto R = evaluate_recursive(lat, g, X, {0, 3});
    EXPECT_EQ(max_gap(D.values, R.values), 0.0);
  }
}

TEST(EvaluateRecursive, FinestPartition) {
  const Lattice lat = oracle::binomial(4);
  const auto R = evaluate_recursive(lat, kVar, payoff_from_expression(lat, "W"), {0, 1, 2, 3, 4});
  EXPECT_EQ(R.d0(), 1.0);
}

TEST(EvaluateRecursive, InvalidPartition) {
  const Lattice lat = oracle::binomial(3);
  const RandomVariable X{Vec(8, 0.0)};
  EXPECT_THROW(evaluate_recursive(lat, kVar, X, {0}), ValidationError);
  EXPECT_THROW(evaluate_recursive(lat, kVar, X, {1, 3}), ValidationError);
  EXPECT_THROW(evaluate_recursive(lat, kVar, X, {0, 2}), ValidationError);
  EXPECT_THROW(evaluate_recursive(lat, kVar, X, {0, 2, 2, 3}), ValidationError);
}

TEST(DeterministicD0, Examples) {
  const TimeGrid grid = TimeGrid::uniform(1.0, 4);
  const AnalyticPayoff flat{grid, {{1.0}, {1.0}, {1.0}, {1.0}}, {{}, {}, {}, {}}};
  const double r2 = std::sqrt(2.0);
  const AnalyticPayoff front{grid, {{r2}, {r2}, {0.0}, {0.0}}, {{}, {}, {}, {}}};
  const AnalyticPayoff zero{grid, {{0.0}, {0.0}, {0.0}, {0.0}}, {{}, {}, {}, {}}};
  EXPECT_EQ(deterministic_D0(grid, kNorm10, flat, JumpMeasure{}), 1.0);
  EXPECT_NEAR(deterministic_D0(grid, kNorm10, front, JumpMeasure{}), 0.70710678118654752, 1e-15);
  EXPECT_EQ(deterministic_D0(grid, kNorm10, zero, JumpMeasure{}), 0.0);
  EXPECT_THROW(deterministic_D0(TimeGrid::uniform(1.0, 2), kNorm10, flat, JumpMeasure{}), ValidationError);
}

TEST(Utility, Examples) {
  const Lattice lat = oracle::binomial(4);
  const RandomVariable c{Vec(lat.leaf_count(), 4.0)};
  for (double u : utility(lat, c, evaluate(lat, kVar, c), 2)) EXPECT_EQ(u, 4.0);
  const RandomVariable W = payoff_from_expression(lat, "W");
  EXPECT_EQ(utility(lat, W, evaluate(lat, kVar, W), 0).front(), -1.0);
  RandomVariable Wm = W;
  for (double& v : Wm.values) v += 2.5;
  EXPECT_EQ(utility(lat, Wm, evaluate(lat, kVar, Wm), 0).front(), -1.0 + 2.5);
  EXPECT_THROW(utility(lat, W, evaluate(lat, kVar, W), 5), std::exception);
}

TEST(AxiomReportTest, VariancePasses) {
  oracle::Gen gen(62);
  const Lattice lat = oracle::binomial(4);
  std::vector<RandomVariable> samples;
  for (int i = 0; i < 4; ++i) samples.push_back(gen.payoff(lat));
  const AxiomReport r = axiom_report(lat, kVar, samples, 99);
  EXPECT_TRUE(r.all_pass()) << r.d1.witness << r.d2.witness << r.d3.witness << r.d4.witness << r.d5.witness
                            << r.local.witness;
  EXPECT_EQ(r.d3.trials, 50u);
}

TEST(AxiomReportTest, NormWithJumpsPasses) {
  oracle::Gen gen(63);
  const Lattice lat(TimeGrid::uniform(1.0, 3), NoiseModel{1, {{{1.0}, {-1.0}}, {0.4, 0.3}}});
  std::vector<RandomVariable> samples;
  for (int i = 0; i < 4; ++i) samples.push_back(gen.payoff(lat));
  const AxiomReport r = axiom_report(lat, kNorm11, samples, 7);
  EXPECT_TRUE(r.d1.pass);
  EXPECT_TRUE(r.d2.pass) << r.d2.witness;
  EXPECT_TRUE(r.d3.pass) << r.d3.witness;
  EXPECT_TRUE(r.d4.pass) << r.d4.witness;
  EXPECT_TRUE(r.d5.pass) << r.d5.witness;
  EXPECT_TRUE(r.local.pass) << r.local.witness;
}

TEST(AxiomReportTest, ConcaveDriverFailsConvexity) {
  oracle::Gen gen(64);
  const Lattice lat = oracle::binomial(4);
  const DriverSpec concave = DriverSpec::custom(
      "sqrt-abs", [](double, std::span<const double> h, std::span<const double>, const JumpMeasure&) {
        return std::sqrt(std::abs(h[0]));
      });
  std::vector<RandomVariable> samples;
  for (int i = 0; i < 4; ++i) samples.push_back(gen.payoff(lat));
  const AxiomReport r = axiom_report(lat, concave, samples, 5);
  EXPECT_FALSE(r.d3.pass);
  EXPECT_FALSE(r.d3.witness.empty());
  // The witness seed reproduces the failing mixture.
  const MixtureTrial tr = make_mixture(lat, samples, r.d3.witness_seed);
  EXPECT_GT(mixture_violation(lat, concave, tr), 1e-10);
}

TEST(AxiomReportTest, NeedsTwoSamples) {
  const Lattice lat = oracle::binomial(2);
  EXPECT_THROW(axiom_report(lat, kVar, {RandomVariable{Vec(4, 1.0)}}, 1), ValidationError);
}

TEST(LawProbe, VariancePermutationPairs) {
  oracle::Gen gen(65);
  const Lattice lat = oracle::binomial(6);
  std::vector<LatticePair> pairs;
  for (int i = 0; i < 5; ++i) {
    const RandomVariable X = gen.payoff(lat);
    pairs.push_back({"perm" + std::to_string(i), X, permute_paths(lat, X, 100 + i)});
  }
  const LawProbeReport r = law_probe(lat, kVar, pairs);
  EXPECT_LE(r.max_gap, 1e-10);
  EXPECT_EQ(r.max_law_distance, 0.0);
}

TEST(LawProbe, NormAnalyticCounterexample) {
  const Lattice lat = oracle::binomial(4);
  const double r2 = std::sqrt(2.0);
  const AnalyticPair pr{"flat vs front", AnalyticPayoff{lat.grid(), {{1.0}, {1.0}, {1.0}, {1.0}}, {{}, {}, {}, {}}},
                        AnalyticPayoff{lat.grid(), {{r2}, {r2}, {0.0}, {0.0}}, {{}, {}, {}, {}}}};
  const LawProbeReport r = law_probe(lat, kNorm10, {}, {pr});
  ASSERT_EQ(r.entries.size(), 1u);
  EXPECT_TRUE(r.entries[0].continuum_only);
  EXPECT_EQ(r.entries[0].d0_x, 1.0);
  EXPECT_NEAR(r.entries[0].d0_y, 0.70710678, 1e-8);
  EXPECT_NEAR(r.entries[0].gap, 0.29289322, 1e-8);
}

TEST(LawProbe, LawMismatchRejected) {
  const Lattice lat = oracle::binomial(2);
  const RandomVariable X = payoff_from_expression(lat, "W");
  EXPECT_THROW(law_probe(lat, kVar, {{"bad", X, scaled(X, 2.0)}}), ValidationError);
}

TEST(LawProbe, IndependentOfPast) {
  // Y depends only on increments after level 2, so D_2(Y) is the same at every level-2 node.
  oracle::Gen gen(66);
  const Lattice lat = oracle::binomial(5);
  const std::size_t block = lat.leaf_count() / lat.level_size(2);
  const Vec tail = gen.normals(block);
  RandomVariable Y{Vec(lat.leaf_count())};
  for (std::size_t i = 0; i < Y.size(); ++i) Y.values[i] = tail[i % block];
  EXPECT_LE(independence_probe(lat, kVar, Y, 2).spread, 1e-10);
}

// ---------------------------------------------------------------------------
// Properties.

TEST(DeviationProperty, RecursionMatchesEvaluate) {
  oracle::Gen gen(71);
  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 25; ++trial) {
    const Lattice lat = gen.lattice();
    const RandomVariable X = gen.payoff(lat);
    for (const auto& g : {kVar, kNorm11, DriverSpec::scaled(2.0, kNorm10)}) {
      const auto D = evaluate(lat, g, X);
      for (int r = 0; r < 3; ++r) {
        const auto part = random_partition(lat.steps(), rng);
        EXPECT_LE(max_gap(D.values, evaluate_recursive(lat, g, X, part).values), 1e-12);
      }
    }
  }
}

TEST(DeviationProperty, SupermartingaleAndPositivity) {
  oracle::Gen gen(72);
  for (int trial = 0; trial < 25; ++trial) {
    const Lattice lat = gen.lattice();
    const RandomVariable X = gen.payoff(lat);
    for (const auto& g : {kVar, kNorm11}) {
      const ProcessCheck pc = check_process(lat, evaluate(lat, g, X));
      EXPECT_TRUE(pc.ok()) << pc.min_value << " " << pc.max_supermartingale_violation;
    }
  }
}

TEST(DeviationProperty, TranslationInvariance) {
  oracle::Gen gen(73);
  for (int trial = 0; trial < 20; ++trial) {
    const Lattice lat = oracle::binomial(gen.index(1, 6));
    const RandomVariable X{gen.dyadic(lat.leaf_count())};
    RandomVariable Y = X;
    const double m = double(int(gen.index(0, 40)) - 20) / 4.0;
    for (double& v : Y.values) v += m;
    for (const auto& g : {kVar, kNorm10}) EXPECT_EQ(max_gap(evaluate(lat, g, X).values, evaluate(lat, g, Y).values), 0.0);
  }
  for (int trial = 0; trial < 20; ++trial) {
    const Lattice lat = gen.lattice();
    const RandomVariable X = gen.payoff(lat);
    RandomVariable Y = X;
    for (double& v : Y.values) v += 3.7;
    EXPECT_LE(max_gap(evaluate(lat, kNorm11, X).values, evaluate(lat, kNorm11, Y).values), 1e-12);
  }
}

TEST(DeviationProperty, Homogeneity) {
  oracle::Gen gen(74);
  for (int trial = 0; trial < 20; ++trial) {
    const Lattice lat = gen.lattice();
    const RandomVariable X = gen.payoff(lat);
    const double dv = evaluate(lat, kVar, X).d0(), dn = evaluate(lat, kNorm11, X).d0();
    for (double lam : {0.0, 0.5, 2.0, 7.0}) {
      EXPECT_NEAR(evaluate(lat, kVar, scaled(X, lam)).d0(), lam * lam * dv, 1e-10 * (1.0 + lam * lam * dv));
      EXPECT_NEAR(evaluate(lat, kNorm11, scaled(X, lam)).d0(), lam * dn, 1e-10 * (1.0 + lam * dn));
    }
  }
}

TEST(DeviationProperty, VarianceIdentityOnBinomial) {
  oracle::Gen gen(75);
  for (int trial = 0; trial < 20; ++trial) {
    const Lattice lat = oracle::binomial(gen.index(1, 8), gen.uniform(0.5, 2.0));
    const auto paths = oracle::enumerate(lat.grid(), lat.noise());
    const RandomVariable X = gen.payoff(lat);
    const double alpha = gen.uniform(0.2, 3.0);
    const auto D = evaluate(lat, DriverSpec::variance(alpha), X);
    for (std::size_t l = 0; l <= lat.steps(); ++l) {
      Vec want = oracle::cond_var(paths, 2, lat.steps(), X.values, l);
      for (double& v : want) v *= alpha;
      EXPECT_LE(oracle::max_abs_diff(D.values.levels[l], want), 1e-10);
    }
  }
}

TEST(DeviationProperty, JumpVarianceErrorHalves) {
  // X = compensated jump count: D_0 = nu T while Var(X) = nu T (1 - nu dt).
  double prev = 0.0;
  for (std::size_t n : {2u, 4u, 8u}) {
    const Lattice lat(TimeGrid::uniform(1.0, n), NoiseModel{1, {{{1.0}}, {0.5}}});
    const RandomVariable X = payoff_from_expression(lat, "Nc0");
    const double err = std::abs(evaluate(lat, kVar, X).d0() - variance(lat, X));
    EXPECT_NEAR(err, 0.25 / double(n), 1e-12);
    if (prev > 0.0) {
      EXPECT_GE(err / prev, 0.35);
      EXPECT_LE(err / prev, 0.65);
    }
    prev = err;
  }
}

TEST(DeviationProperty, LocalProperty) {
  oracle::Gen gen(76);
  for (int trial = 0; trial < 20; ++trial) {
    const Lattice lat = gen.lattice();
    const RandomVariable X1 = gen.payoff(lat), X2 = gen.payoff(lat);
    const std::size_t t = gen.index(0, lat.steps());
    std::vector<char> in_a(lat.level_size(t));
    for (auto& a : in_a) a = gen.coin();
    const std::size_t block = lat.leaf_count() / lat.level_size(t);
    RandomVariable mix{Vec(lat.leaf_count())};
    for (std::size_t i = 0; i < mix.size(); ++i) mix.values[i] = in_a[i / block] ? X1[i] : X2[i];
    for (const auto& g : {kVar, kNorm11}) {
      const auto D1 = evaluate(lat, g, X1), D2 = evaluate(lat, g, X2), Dm = evaluate(lat, g, mix);
      for (std::size_t k = 0; k < lat.level_size(t); ++k)
        EXPECT_NEAR(Dm.values.levels[t][k], in_a[k] ? D1.values.levels[t][k] : D2.values.levels[t][k], 1e-10);
    }
  }
}
