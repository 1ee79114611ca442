#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <memory>

#include "oracles/oracles.hpp"
#include "spreadarray/decomp.hpp"
#include "spreadarray/errors.hpp"

using namespace spreadarray;

namespace {

oracle::FunctionModel product_d2() {
  oracle::FunctionModel f;
  f.d = 2;
  f.seed_weights = {0.5, 0.5};
  f.coord_weights = {0.3, 0.7};
  f.table = {0, 1, 1, 0, 0, 0, 0, 1};
  f.values = {-1.0, 1.0};
  return f;
}

oracle::FunctionModel product_d1() {
  oracle::FunctionModel f;
  f.d = 1;
  f.seed_weights = {0.4, 0.6};
  f.coord_weights = {0.5, 0.2, 0.3};
  f.table = {0, 1, 1, 1, 0, 1};
  f.values = {-1.0, 1.0};
  return f;
}

ArrayModel to_model(const oracle::FunctionModel& f, Index n) {
  return ArrayModel::function(n, FunctionArray{f.seed_weights, f.coord_weights, f.d, f.table},
                              Alphabet::from_values(f.values));
}

double oracle_form_mean(const oracle::FunctionModel& f, const EntryMoments& mom, const LinearForm& g) {
  double s = 0.0;
  for (const auto& [i, c] : g.coef) s += c * oracle::mean(f, mom.entry(i));
  return s;
}

double oracle_form_inner(const oracle::FunctionModel& f, const EntryMoments& mom, const LinearForm& g,
                         const LinearForm& h) {
  double s = 0.0;
  for (const auto& [i, a] : g.coef)
    for (const auto& [j, b] : h.coef) s += a * b * oracle::pair_moment(f, mom.entry(i), mom.entry(j));
  return s;
}

PartialIncrMap full_map(const DSubset& s) {
  std::vector<PartialIncrMap::Pair> pairs;
  for (std::size_t j = 0; j < s.size(); ++j) pairs.emplace_back(static_cast<int>(j) + 1, s[j]);
  return PartialIncrMap(pairs);
}

// uniform atoms, +-1 entries, d = 1
ArrayModel random_atomic(SeededRng& rng, Index n, std::size_t atoms) {
  AtomicArray arr;
  arr.n = n;
  arr.d = 1;
  arr.space = std::make_shared<FiniteProbSpace>(FiniteProbSpace::uniform(atoms));
  arr.entries.assign(static_cast<std::size_t>(n), std::vector<int>(atoms));
  for (auto& col : arr.entries)
    for (int& x : col) x = static_cast<int>(rng.next() % 2);
  return ArrayModel::atomic(std::move(arr), Alphabet::from_values({-1.0, 1.0}));
}

}  // namespace

TEST(Plan, MinimalSizeAndGamma) {
  EXPECT_EQ(minimal_plan_n(2, 2, 3), 1024);
  EXPECT_EQ(minimal_plan_n(1, 3, 2), 2 * 9 * 1 * 9);
  EXPECT_NEAR(plan_gamma(1024, 2, 2), std::sqrt(0.5 + 32.0 / 32.0), 1e-15);
  EXPECT_THROW(build_plan(1023, 2, 2, 3), Infeasible);
  EXPECT_THROW(build_plan(1024, 2, 1, 3), Infeasible);
}

TEST(Plan, InvariantsHold) {
  for (int d : {1, 2})
    for (Index kappa : {2, 3})
      for (Index k : {2, 3}) {
        const Index n = minimal_plan_n(d, kappa, k);
        const auto plan = build_plan(n, d, kappa, k);
        EXPECT_EQ(plan.check_invariants(), "") << d << " " << kappa << " " << k;
        EXPECT_EQ(plan.N.size(), static_cast<std::size_t>(k));
        EXPECT_EQ(plan.L.size(), static_cast<std::size_t>(k));
        EXPECT_EQ(plan.D.size(), static_cast<std::size_t>(k + 1));
        EXPECT_EQ(plan.maps.size(), oracle::count_partial_maps(d, static_cast<std::size_t>(k)));
        for (std::size_t i = 0; i < plan.L.size(); ++i) {
          EXPECT_EQ(plan.L[i].size(), kappa);
          EXPECT_EQ(plan.N[i], plan.L[i].min());
        }
        for (const auto& p : plan.maps) {
          const auto& O = plan.O(p);
          ASSERT_FALSE(O.empty());
          for (const auto& t : O) {
            // t agrees with p on its domain and avoids N elsewhere
            for (int j = 1; j <= d; ++j) {
              const Index x = t[static_cast<std::size_t>(j - 1)];
              if (p.defined_at(j)) {
                EXPECT_EQ(x, p(j));
              } else {
                EXPECT_FALSE(std::binary_search(plan.N.begin(), plan.N.end(), x));
              }
            }
            EXPECT_EQ(plan.owner(t), p);
          }
          if (static_cast<int>(p.size()) == d) {
            EXPECT_EQ(O, (std::vector<DSubset>{p.image()}));
          }
        }
        EXPECT_DOUBLE_EQ(plan.gamma, plan_gamma(n, d, kappa));
      }
}

TEST(Plan, Theorem16Parameters) {
  const auto t = theorem16_parameters(2, 4.0);
  EXPECT_EQ(t.kappa, 512);
  EXPECT_NEAR(t.c, std::ldexp(1.0, -16) * std::pow(4.0, 4.0 / 3.0), 1e-18);
  EXPECT_NEAR(t.log10_n0, 180.0 * std::log10(2.0) - 7.0 * std::log10(4.0), 1e-9);
  EXPECT_EQ(theorem16_parameters(1, 1.0).kappa, 512);
  EXPECT_THROW(theorem16_parameters(2, 0.0), InvalidArgument);
}

TEST(Decompose, InclusionExclusionAndIdentity) {
  const auto f = product_d2();
  const auto model = to_model(f, 432);
  const auto plan = build_plan(432, 2, 2, 2);
  auto mom = std::make_shared<EntryMoments>(model);
  const auto dp = decompose(mom, plan);
  for (const auto& p : plan.maps) {
    // Y is the uniform average over the orbit
    const auto& O = plan.O(p);
    const auto& y = dp.y(p);
    EXPECT_EQ(y.coef.size(), O.size());
    for (const auto& t : O) EXPECT_NEAR(y.coef.at(mom->id(t)), 1.0 / static_cast<double>(O.size()), 1e-15);
  }
  for (const auto& s : choose(plan.N, 2)) {
    // summing Delta over every restriction of the identity map gives back X_s
    const auto I = full_map(s);
    LinearForm sum;
    for (const auto& G : std::vector<std::vector<int>>{{}, {1}, {2}, {1, 2}}) sum.add(dp.delta(I.restrict_to(G)));
    sum.add(LinearForm::single(mom->id(s)), -1.0);
    EXPECT_LE(sum.max_abs(), 1e-12);
    const auto [coef, l2] = dp.identity_residual(s);
    EXPECT_LE(coef, 1e-12);
    EXPECT_LE(l2, 1e-6);
  }
}

TEST(Decompose, MomentsMatchOracle) {
  const auto f = product_d2();
  const auto model = to_model(f, 432);
  const auto plan = build_plan(432, 2, 2, 2);
  auto mom = std::make_shared<EntryMoments>(model);
  const auto dp = decompose(mom, plan);
  std::size_t checked = 0;
  for (const auto& p1 : plan.maps) {
    EXPECT_NEAR(form_mean(*mom, dp.delta(p1)), oracle_form_mean(f, *mom, dp.delta(p1)), 1e-12);
    for (const auto& p2 : plan.maps) {
      if (p1 == p2 || !align(p1, p2).aligned || dp.delta(p1).coef.size() * dp.delta(p2).coef.size() > 400) continue;
      EXPECT_NEAR(form_inner(*mom, dp.delta(p1), dp.delta(p2)),
                  oracle_form_inner(f, *mom, dp.delta(p1), dp.delta(p2)), 1e-12);
      ++checked;
    }
  }
  EXPECT_GT(checked, 10U);
}

TEST(Decompose, AnalysisMeetsBounds) {
  const auto model = to_model(product_d2(), 432);
  const auto plan = build_plan(432, 2, 2, 2);
  const auto dp = decompose(std::make_shared<EntryMoments>(model), plan);
  const auto rep = analyze_decomposition(dp);
  EXPECT_LE(rep.identity_residual, 1e-12);
  EXPECT_LE(rep.worst_mean, rep.mean_bound);
  EXPECT_LE(rep.worst_cross, rep.cross_bound);
  EXPECT_NEAR(rep.mean_bound, 4.0 * plan.gamma, 1e-12);
  EXPECT_NEAR(rep.cross_bound, 64.0 * plan.gamma, 1e-12);
  EXPECT_GT(rep.aligned_pairs, 0U);
  EXPECT_EQ(rep.violations, 0U);
  EXPECT_FALSE(rep.identity_pointwise.has_value());
}

TEST(Decompose, PointwiseIdentityOnAtomicModel) {
  const auto plan = build_plan(72, 1, 2, 2);
  SeededRng rng(11);
  const auto dp = decompose(std::make_shared<EntryMoments>(random_atomic(rng, 72, 20)), plan);
  for (Index x : plan.N) {
    const auto r = pointwise_identity_residual(dp, {x});
    ASSERT_TRUE(r.has_value());
    EXPECT_LE(*r, 1e-12);
  }
}

TEST(Decompose, LatticeOnAlignedPairs) {
  const auto model = to_model(product_d1(), 72);
  const auto plan = build_plan(72, 1, 2, 2);
  const auto dp = decompose(std::make_shared<EntryMoments>(model), plan);
  for (const auto& p1 : plan.maps)
    for (const auto& p2 : plan.maps) {
      if (p1 == p2 || !align(p1, p2).aligned) continue;
      const auto r = verify_lattice(dp, p1, p2, false);
      EXPECT_TRUE(r.holds);
      EXPECT_LE(r.correlation_gap, r.correlation_bound);
      EXPECT_NEAR(r.bound, 2.0 * plan.gamma, 1e-15);
    }
}

TEST(Orbit, DefectAndUniversality) {
  const std::vector<std::vector<double>> g{{1.0, 0.3, 0.3}, {0.3, 1.0, 0.3}, {0.3, 0.3, 1.0}};
  const auto fam = OrbitFamily::from_gram({"a", "b", "c"}, g);
  EXPECT_NEAR(orbit_defect(fam), 0.0, 1e-15);
  EXPECT_NEAR(universality_check(fam, {0, 1}, {0, 1}).lhs, 0.0, 1e-12);
  const auto r = universality_check(fam, {0, 1}, {1, 2});
  // ||(X0 - X2)/2|| = sqrt((2 - 2 * 0.3) / 4)
  EXPECT_NEAR(r.lhs, std::sqrt(1.4 / 4.0), 1e-12);
  EXPECT_TRUE(r.holds);
  EXPECT_THROW(universality_check(fam, {0, 0}, {1, 2}), InvalidArgument);
  EXPECT_THROW(OrbitFamily::from_gram({"a", "b"}, {{1.0, 0.0}, {0.0, 2.0}}), InvalidArgument);

  SeededRng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    auto sp = std::make_shared<FiniteProbSpace>(FiniteProbSpace::uniform(8));
    std::vector<RandomVariable> xs;
    for (int i = 0; i < 5; ++i) {
      std::vector<double> v(8);
      for (double& x : v) x = 2.0 * rng.uniform() - 1.0;
      RandomVariable X(sp, v);
      xs.push_back(X * (1.0 / l2_norm(X)));
    }
    const auto ff = OrbitFamily::from_variables(xs);
    const auto u = universality_check(ff, {0, 1, 2}, {3, 4});
    EXPECT_NEAR(u.eta, orbit_defect(ff), 1e-15);
    EXPECT_TRUE(u.holds) << u.lhs << " > " << u.bound;
  }
}

TEST(TwoPoint, ProductModelHasNoGap) {
  const auto model = to_model(product_d2(), 100);
  EntryMoments mom(model);
  const auto g = two_point_gap(mom, {1, 5}, {2, 5}, {10, 40}, {20, 40});
  EXPECT_NEAR(g.gap, 0.0, 1e-15);
  EXPECT_EQ(g.root, (std::vector<int>{2}));
  EXPECT_NEAR(g.bound, 32.0 / 10.0, 1e-15);
  ASSERT_TRUE(g.d2_bound.has_value());
  EXPECT_NEAR(*g.d2_bound, 0.6, 1e-15);
  EXPECT_THROW(two_point_gap(mom, {1, 5}, {2, 5}, {10, 40}, {10, 41}), InvalidArgument);
}

TEST(TwoPoint, AtomicGapIsTheMomentDifference) {
  SeededRng rng(13);
  const auto model = random_atomic(rng, 6, 6);
  EntryMoments mom(model);
  const auto g = two_point_gap(mom, {1}, {2}, {3}, {6});
  EXPECT_NEAR(g.gap, std::abs(pair_moment(model, {1}, {2}) - pair_moment(model, {3}, {6})), 1e-15);
}

TEST(Uniqueness, SameProcessAndShiftedOrbits) {
  const Index n = minimal_plan_n(1, 2, 6);
  const auto model = to_model(product_d1(), n);
  const auto plan = build_plan(n, 1, 2, 6);
  const auto shifted = build_plan(n, 1, 2, 6, 1);
  ASSERT_EQ(plan.N, shifted.N);
  auto mom = std::make_shared<EntryMoments>(model);
  const auto dp = decompose(mom, plan);
  const auto z = decompose(mom, shifted);
  EXPECT_EQ(uniqueness_ell(1, 1.0), 5);
  EXPECT_EQ(uniqueness_ell(2, 1.0), 17);
  const auto same = uniqueness_check(dp, dp, 1.0);
  EXPECT_NEAR(same.worst_diff, 0.0, 1e-12);
  const auto r = uniqueness_check(dp, z, 1.0);
  EXPECT_LE(r.worst_diff, r.theorem_bound);
  EXPECT_NEAR(r.theorem_bound, 8.0 * std::sqrt(2.0), 1e-12);
  EXPECT_EQ(r.violations, 0U);
  // two points of N leave no room for the witnesses
  const auto small_model = to_model(product_d1(), 72);
  const auto small = build_plan(72, 1, 2, 2);
  const auto dp_small = decompose(std::make_shared<EntryMoments>(small_model), small);
  EXPECT_THROW(uniqueness_check(dp_small, dp_small, 1.0), Infeasible);
}
