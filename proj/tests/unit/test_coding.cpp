#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles/oracles.hpp"
#include "spreadarray/coding.hpp"
#include "spreadarray/errors.hpp"

using namespace spreadarray;

namespace {

CodingOptions lenient(int retries = 3) {
  CodingOptions o;
  o.max_retries = retries;
  o.strict = false;
  return o;
}

std::size_t upow(std::size_t b, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

}  // namespace

TEST(SymmetricPartition, RejectsDegenerateInput) {
  EXPECT_THROW(random_symmetric_partition(8, 2, {1.0}, 0.5, 1), InvalidArgument);
  EXPECT_THROW(random_symmetric_partition(8, 1, {0.5, 0.5}, 0.5, 1), InvalidArgument);
  EXPECT_THROW(random_symmetric_partition(8, 2, {0.0, 1.0}, 0.5, 1), InvalidArgument);
  EXPECT_THROW(random_symmetric_partition(8, 2, {0.6, 0.6}, 0.5, 1), InvalidArgument);
}

TEST(SymmetricPartition, ExactSymmetricNonemptyCover) {
  for (int d : {2, 3})
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
      const std::size_t v = d == 2 ? 9 : 5;
      const auto r = random_symmetric_partition(v, d, {0.2, 0.3, 0.5}, 1.0, seed, lenient());
      const auto labels = r.partition.cell_labels();
      ASSERT_EQ(labels.size(), upow(v, d));
      std::vector<std::size_t> count(3, 0);
      for (std::size_t c = 0; c < labels.size(); ++c) {
        ASSERT_GE(labels[c], 0);
        ASSERT_LT(labels[c], 3);
        ++count[static_cast<std::size_t>(labels[c])];
        std::vector<std::size_t> x(static_cast<std::size_t>(d));
        std::size_t rest = c;
        for (int i = d - 1; i >= 0; --i) {
          x[static_cast<std::size_t>(i)] = rest % v;
          rest /= v;
        }
        std::sort(x.begin(), x.end());
        do {
          EXPECT_EQ(labels[oracle::cell_of(x, v)], labels[c]);
        } while (std::next_permutation(x.begin(), x.end()));
      }
      for (std::size_t j = 0; j < 3; ++j) EXPECT_GT(count[j], 0U);
    }
}

TEST(SymmetricPartition, DeterministicAndDeviationsRecompute) {
  const std::vector<double> lambda{0.5, 0.5};
  const auto a = random_symmetric_partition(16, 2, lambda, 0.5, 42, lenient());
  const auto b = random_symmetric_partition(16, 2, lambda, 0.5, 42, lenient());
  EXPECT_EQ(a.partition.class_labels(), b.partition.class_labels());
  EXPECT_EQ(partition_to_json(a, lambda, 0.5), partition_to_json(b, lambda, 0.5));
  for (int j = 0; j < 2; ++j) {
    const auto ind = a.partition.indicator(j);
    const double ref = oracle::box_norm(ind.base, 2, ind.shifted(lambda[static_cast<std::size_t>(j)]).values);
    EXPECT_NEAR(a.deviations[static_cast<std::size_t>(j)], ref, 1e-12);
  }
  EXPECT_NEAR(a.max_deviation, *std::max_element(a.deviations.begin(), a.deviations.end()), 0.0);
}

TEST(SymmetricPartition, LabelFrequenciesFollowLambda) {
  const auto r = random_symmetric_partition(40, 2, {0.3, 0.7}, 1.0, 7, lenient(1));
  const auto& labels = r.partition.class_labels();
  const double n = static_cast<double>(labels.size());
  const double zeros = static_cast<double>(std::count(labels.begin(), labels.end(), 0));
  EXPECT_LE(std::abs(zeros / n - 0.3), 4.0 * std::sqrt(0.3 * 0.7 / n) + 2.0 / n);
}

TEST(SymmetricPartition, StrictModeThrowsWhenUnreachable) {
  EXPECT_THROW(random_symmetric_partition(6, 2, {0.5, 0.5}, 1e-6, 1, CodingOptions{2, true, kBoxStreamingCap}),
               RandomizedFailure);
}

TEST(ExpectedDeviationBound, Examples) {
  const auto b = expected_deviation_bound(80, 2, 2, 1.0);
  EXPECT_NEAR(b.n0, 80.0, 1e-9);
  EXPECT_TRUE(b.feasible);
  EXPECT_FALSE(expected_deviation_bound(79, 2, 2, 1.0).feasible);
  EXPECT_NEAR(expected_deviation_bound(1, 2, 2, 0.5).n0 / b.n0, 256.0, 1e-9);
  bool prev = false;
  for (std::size_t v = 1; v < 200; ++v) {
    const bool f = expected_deviation_bound(v, 2, 2, 1.0).feasible;
    EXPECT_TRUE(!prev || f);
    prev = f;
  }
}

TEST(Lift, SizeBound) {
  for (int d : {2, 3})
    for (int kappa0 : {1, 2}) {
      const double e = std::pow(2.0, d + 1);
      const double fact = d == 2 ? 2.0 : 6.0;
      const double u0 = 5.0 * d * d * fact * 3 * std::pow(kappa0, e) * std::pow(0.5, -e);
      EXPECT_NEAR(lift_size_bound(d, 3, kappa0, 0.5), u0, 1e-9 * u0);
    }
}

TEST(Lift, ZeroOneValuedIsExact) {
  PartitionOfUnity H;
  H.base = {0.5, 0.5};
  H.d = 2;
  H.funcs = {{1, 0, 0, 1}, {0, 1, 1, 0}};
  const auto E = lift_partition_of_unity(H, 2, 0.5, 4, 9);
  EXPECT_EQ(E.max_deviation, 0.0);
  EXPECT_TRUE(E.verified);
  for (const auto& F : std::vector<std::vector<DSubset>>{{{1, 2}}, {{1, 2}, {2, 3}}, {{1, 2}, {3, 4}}})
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        std::vector<int> asg{a, b};
        asg.resize(F.size());
        EXPECT_NEAR(verify_coding_law(H, E, F, asg).diff, 0.0, 1e-15);
      }
  EXPECT_THROW(verify_coding_law(H, E, {}, {}), InvalidArgument);
}

TEST(Lift, BothSidesMatchOracles) {
  PartitionOfUnity H;
  H.base = {0.4, 0.6};
  H.d = 2;
  H.funcs = {{0.3, 0.5, 0.5, 0.8}, {0.7, 0.5, 0.5, 0.2}};
  const auto E = lift_partition_of_unity(H, 2, 1.0, 5, 3, LiftOptions{5, false, kBoxStreamingCap});
  const oracle::PouModel pou{H.base, 2, H.funcs};
  const std::vector<std::vector<DSubset>> fams{{{1, 2}}, {{1, 2}, {1, 3}}, {{1, 3}, {2, 4}}, {{1, 2}, {3, 4}}};
  double worst = 0.0;
  for (const auto& F : fams)
    for (int mask = 0; mask < (1 << F.size()); ++mask) {
      std::vector<int> asg;
      for (std::size_t i = 0; i < F.size(); ++i) asg.push_back((mask >> i) & 1);
      const std::vector<oracle::Set> ent(F.begin(), F.end());
      const auto r = verify_coding_law(H, E, F, asg);
      EXPECT_NEAR(r.lhs, oracle::event_probability(pou, ent, asg), 1e-12);
      EXPECT_NEAR(r.rhs, oracle::lifted_event_probability(E.y_weights, E.u, E.labels, ent, asg), 1e-12);
      worst = std::max(worst, r.diff);
    }
  // single entries: the gap is a weighted average of per-cell density gaps
  for (int a = 0; a < 2; ++a) {
    const auto r = verify_coding_law(H, E, {{1, 2}}, {a});
    double bound = 0.0;
    for (std::size_t c = 0; c < 4; ++c) bound += H.base[c / 2] * H.base[c % 2] * E.deviations[c][static_cast<std::size_t>(a)];
    EXPECT_LE(r.diff, bound + 1e-12);
  }
  EXPECT_LE(worst, 1.0);
}

TEST(Lift, SubSeedsMakeLiftDeterministic) {
  PartitionOfUnity H;
  H.base = {0.5, 0.5};
  H.d = 2;
  H.funcs = {{0.3, 0.5, 0.5, 0.8}, {0.7, 0.5, 0.5, 0.2}};
  const LiftOptions opts{3, false, kBoxStreamingCap};
  const auto a = lift_partition_of_unity(H, 2, 1.0, 6, 11, opts);
  const auto b = lift_partition_of_unity(H, 2, 1.0, 6, 11, opts);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.deviations, b.deviations);
}
