#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "oracles/oracles.hpp"
#include "spreadarray/errors.hpp"
#include "spreadarray/models.hpp"
#include "spreadarray/probspace.hpp"

using namespace spreadarray;

namespace {

SpacePtr random_space(SeededRng& rng, std::size_t atoms) {
  std::vector<double> w(atoms);
  double total = 0.0;
  for (double& x : w) total += (x = 0.1 + rng.uniform());
  for (double& x : w) x /= total;
  return std::make_shared<FiniteProbSpace>(w);
}

RandomVariable random_variable(SeededRng& rng, const SpacePtr& space, int levels = 0) {
  std::vector<double> v(space->size());
  for (double& x : v) x = levels > 0 ? static_cast<double>(rng.next() % static_cast<std::uint64_t>(levels))
                                     : 2.0 * rng.uniform() - 1.0;
  return RandomVariable(space, v);
}

}  // namespace

TEST(FiniteProbSpace, RejectsBadWeights) {
  EXPECT_THROW(FiniteProbSpace({0.5, 0.6}), InvalidArgument);
  EXPECT_THROW(FiniteProbSpace({1.0, 0.0}), InvalidArgument);
  EXPECT_THROW(FiniteProbSpace(std::vector<double>{}), InvalidArgument);
  EXPECT_NO_THROW(FiniteProbSpace({0.25, 0.75}));
}

TEST(Expect, Examples) {
  auto uni = std::make_shared<FiniteProbSpace>(FiniteProbSpace::uniform(2));
  EXPECT_DOUBLE_EQ(expect(RandomVariable::constant(uni, 3.5)), 3.5);
  EXPECT_DOUBLE_EQ(expect(RandomVariable(uni, {1.0, -1.0})), 0.0);
  auto sp = std::make_shared<FiniteProbSpace>(std::vector<double>{0.5, 0.25, 0.25});
  EXPECT_DOUBLE_EQ(expect(RandomVariable(sp, {1.0, 2.0, 3.0})), 1.75);
}

TEST(Inner, PropertiesOnRandomInstances) {
  SeededRng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    auto sp = random_space(rng, 2 + rng.next() % 10);
    const auto X = random_variable(rng, sp), Y = random_variable(rng, sp), Z = random_variable(rng, sp);
    EXPECT_GE(inner(X, X), 0.0);
    EXPECT_NEAR(inner(X, X), l2_norm(X) * l2_norm(X), 1e-12);
    EXPECT_LE(std::abs(inner(X, Y)), l2_norm(X) * l2_norm(Y) + 1e-12);
    EXPECT_NEAR(inner(X, Y), inner(Y, X), 1e-15);
    EXPECT_NEAR(inner(X * 2.0 + Z, Y), 2.0 * inner(X, Y) + inner(Z, Y), 1e-12);
  }
  auto uni = std::make_shared<FiniteProbSpace>(FiniteProbSpace::uniform(4));
  EXPECT_DOUBLE_EQ(inner(RandomVariable(uni, {1, 1, 0, 0}), RandomVariable(uni, {0, 0, 1, 0})), 0.0);
  auto other = std::make_shared<FiniteProbSpace>(std::vector<double>{0.1, 0.2, 0.3, 0.4});
  EXPECT_THROW((void)inner(RandomVariable(uni, {1, 1, 1, 1}), RandomVariable(other, {1, 1, 1, 1})), InvalidArgument);
}

TEST(SigmaPartition, Examples) {
  auto sp = std::make_shared<FiniteProbSpace>(FiniteProbSpace::uniform(5));
  EXPECT_EQ(sigma_partition(*sp, {}).num_blocks, 1U);
  EXPECT_EQ(sigma_partition(*sp, {RandomVariable(sp, {4, 1, 3, 0, 2})}).num_blocks, 5U);
}

TEST(SigmaPartition, CommonRefinementMatchesBruteForce) {
  SeededRng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    auto sp = random_space(rng, 3 + rng.next() % 12);
    const auto A = random_variable(rng, sp, 3), B = random_variable(rng, sp, 2);
    const auto pa = sigma_partition(*sp, {A}), pb = sigma_partition(*sp, {B});
    const auto pab = sigma_partition(*sp, {A, B});
    EXPECT_TRUE(pab.refines(pa));
    EXPECT_TRUE(pab.refines(pb));
    const auto j = join(pa, pb);
    EXPECT_EQ(j.num_blocks, pab.num_blocks);
    for (std::size_t x = 0; x < sp->size(); ++x)
      for (std::size_t y = 0; y < sp->size(); ++y) {
        const bool same = A[x] == A[y] && B[x] == B[y];
        EXPECT_EQ(pab.block_of[x] == pab.block_of[y], same);
      }
  }
}

TEST(CondExpect, MatchesBruteForceAndProperties) {
  SeededRng rng(29);
  for (int trial = 0; trial < 60; ++trial) {
    auto sp = random_space(rng, 4 + rng.next() % 12);
    const auto X = random_variable(rng, sp);
    const auto G1 = random_variable(rng, sp, 2), G2 = random_variable(rng, sp, 3);
    const auto coarse = sigma_partition(*sp, {G1});
    const auto fine = sigma_partition(*sp, {G1, G2});
    const auto E = cond_expect(X, fine);
    const auto ref = oracle::cond_expect(sp->weights(), X.values(), {G1.values(), G2.values()});
    for (std::size_t a = 0; a < sp->size(); ++a) EXPECT_NEAR(E[a], ref[a], 1e-12);
    // tower, contraction, idempotence, mean preservation
    const auto tower = cond_expect(E, coarse);
    const auto direct = cond_expect(X, coarse);
    for (std::size_t a = 0; a < sp->size(); ++a) EXPECT_NEAR(tower[a], direct[a], 1e-12);
    EXPECT_LE(l2_norm(E), l2_norm(X) + 1e-12);
    const auto again = cond_expect(E, fine);
    for (std::size_t a = 0; a < sp->size(); ++a) EXPECT_NEAR(again[a], E[a], 1e-14);
    EXPECT_NEAR(expect(E), expect(X), 1e-12);
  }
}

TEST(CondExpect, TrivialAndDiscrete) {
  auto sp = std::make_shared<FiniteProbSpace>(std::vector<double>{0.2, 0.3, 0.5});
  const RandomVariable X(sp, {1.0, 4.0, -2.0});
  const auto t = cond_expect(X, AtomPartition::trivial(3));
  for (std::size_t a = 0; a < 3; ++a) EXPECT_NEAR(t[a], expect(X), 1e-15);
  const auto s = cond_expect(X, sigma_partition(*sp, {X}));
  for (std::size_t a = 0; a < 3; ++a) EXPECT_DOUBLE_EQ(s[a], X[a]);
}

TEST(MartingaleIncrements, PythagorasAndOrthogonality) {
  SeededRng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    auto sp = random_space(rng, 6 + rng.next() % 10);
    const auto X = random_variable(rng, sp);
    std::vector<RandomVariable> gens;
    std::vector<AtomPartition> chain{AtomPartition::trivial(sp->size())};
    for (int r = 0; r < 4; ++r) {
      gens.push_back(random_variable(rng, sp, 2));
      chain.push_back(sigma_partition(*sp, gens));
    }
    const auto D = martingale_increments(X, chain);
    ASSERT_EQ(D.size(), 4U);
    double energy = 0.0;
    for (const auto& d : D) energy += inner(d, d);
    EXPECT_LE(energy, inner(X, X) + 1e-12);
    for (std::size_t i = 0; i < D.size(); ++i)
      for (std::size_t j = i + 1; j < D.size(); ++j) EXPECT_NEAR(inner(D[i], D[j]), 0.0, 1e-12);
  }
}

TEST(MartingaleIncrements, ConstantAndNonNested) {
  auto sp = std::make_shared<FiniteProbSpace>(FiniteProbSpace::uniform(4));
  const RandomVariable c = RandomVariable::constant(sp, 2.0);
  const auto fine = sigma_partition(*sp, {RandomVariable(sp, {0, 1, 2, 3})});
  for (const auto& d : martingale_increments(c, {AtomPartition::trivial(4), fine}))
    for (double v : d.values()) EXPECT_NEAR(v, 0.0, 1e-15);
  const auto a = sigma_partition(*sp, {RandomVariable(sp, {0, 0, 1, 1})});
  const auto b = sigma_partition(*sp, {RandomVariable(sp, {0, 1, 0, 1})});
  EXPECT_THROW(martingale_increments(c, {a, b}), InvalidArgument);
}

TEST(CompensatedSum, FixedOrderIsExactOnCancellation) {
  EXPECT_DOUBLE_EQ(compensated_sum({1e16, 1.0, -1e16}), 1.0);
}
