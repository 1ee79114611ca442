#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <memory>

#include "oracles/oracles.hpp"
#include "spreadarray/errors.hpp"
#include "spreadarray/models.hpp"

using namespace spreadarray;

namespace {

ArrayModel iid_mixture(Index n, int d, std::vector<double> q) {
  PartitionOfUnity h;
  h.base = {1.0};
  h.d = d;
  for (double x : q) h.funcs.push_back({x});
  return ArrayModel::mixture(n, MixtureModel{{1.0}, {h}}, Alphabet::numeric(static_cast<int>(q.size())));
}

// Point mass on symbol a0 everywhere.
PartitionOfUnity point_mass(int d, int m, int a0) {
  PartitionOfUnity h;
  h.base = {1.0};
  h.d = d;
  for (int a = 0; a < m; ++a) h.funcs.push_back({a == a0 ? 1.0 : 0.0});
  return h;
}

oracle::FunctionModel random_function(SeededRng& rng, int d, std::size_t q, std::size_t seeds, int m) {
  oracle::FunctionModel f;
  f.d = d;
  const auto weights = [&](std::size_t k) {
    std::vector<double> w(k);
    double t = 0.0;
    for (double& x : w) t += (x = 0.2 + rng.uniform());
    for (double& x : w) x /= t;
    return w;
  };
  f.seed_weights = weights(seeds);
  f.coord_weights = weights(q);
  std::size_t cells = 1;
  for (int i = 0; i < d; ++i) cells *= q;
  f.table.resize(seeds * cells);
  for (int& v : f.table) v = static_cast<int>(rng.next() % static_cast<std::uint64_t>(m));
  for (int a = 0; a < m; ++a) f.values.push_back(2.0 * rng.uniform() - 1.0);
  return f;
}

ArrayModel to_model(const oracle::FunctionModel& f, Index n) {
  return ArrayModel::function(n, FunctionArray{f.seed_weights, f.coord_weights, f.d, f.table},
                              Alphabet::from_values(f.values));
}

}  // namespace

TEST(LawOfSubarray, PointMassAndIid) {
  const auto pm = ArrayModel::mixture(4, MixtureModel{{1.0}, {point_mass(2, 3, 1)}}, Alphabet::numeric(3));
  const auto law = law_of_subarray(pm, {1, 2, 3});
  ASSERT_EQ(law.entries.size(), 3U);
  // all-1 configuration in base 3 with 3 digits
  for (std::size_t c = 0; c < law.pmf.size(); ++c) EXPECT_DOUBLE_EQ(law.pmf[c], c == 13 ? 1.0 : 0.0);

  const auto iid = iid_mixture(4, 2, {0.3, 0.7});
  const auto l2 = law_of_subarray(iid, {1, 2, 4});
  for (std::size_t c = 0; c < l2.pmf.size(); ++c) {
    double p = 1.0;
    for (int e = 0; e < 3; ++e) p *= ((c >> (2 - e)) & 1U) ? 0.7 : 0.3;
    EXPECT_NEAR(l2.pmf[c], p, 1e-15);
  }
}

TEST(LawOfSubarray, MixtureBlendsPointMasses) {
  const auto m = ArrayModel::mixture(3, MixtureModel{{0.25, 0.75}, {point_mass(1, 2, 0), point_mass(1, 2, 1)}},
                                     Alphabet::numeric(2));
  const auto law = law_of_subarray(m, {1, 2, 3});
  EXPECT_NEAR(law.pmf[0], 0.25, 1e-15);
  EXPECT_NEAR(law.pmf[7], 0.75, 1e-15);
}

TEST(LawOfSubarray, FunctionArrayMatchesOracle) {
  SeededRng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 1 + static_cast<int>(rng.next() % 2);
    const auto f = random_function(rng, d, 2 + rng.next() % 2, 1 + rng.next() % 2, 2 + static_cast<int>(rng.next() % 2));
    const auto model = to_model(f, 5);
    const IndexSet J = d == 1 ? IndexSet{1, 3, 4} : IndexSet{1, 2, 4, 5};
    const auto law = law_of_subarray(model, J);
    std::vector<oracle::Set> entries(law.entries.begin(), law.entries.end());
    const auto ref = oracle::joint_law(f, entries);
    const int m = static_cast<int>(f.values.size());
    for (std::size_t c = 0; c < law.pmf.size(); ++c) {
      std::vector<int> cfg(entries.size());
      std::size_t r = c;
      for (std::size_t e = entries.size(); e-- > 0;) {
        cfg[e] = static_cast<int>(r % static_cast<std::size_t>(m));
        r /= static_cast<std::size_t>(m);
      }
      const auto it = ref.find(cfg);
      EXPECT_NEAR(law.pmf[c], it == ref.end() ? 0.0 : it->second, 1e-12);
    }
  }
}

TEST(LawOfSubarray, MarginalizationCoherence) {
  SeededRng rng(43);
  const auto f = random_function(rng, 2, 2, 2, 2);
  const auto model = to_model(f, 5);
  const auto big = law_of_subarray(model, {1, 2, 3, 5});  // entries 12 13 15 23 25 35
  const auto small = law_of_subarray(model, {1, 3, 5});   // entries 13 15 35
  std::vector<double> marg(small.pmf.size(), 0.0);
  for (std::size_t c = 0; c < big.pmf.size(); ++c) {
    const auto bit = [&](int e) { return (c >> (5 - e)) & 1U; };
    marg[(bit(1) << 2) | (bit(2) << 1) | bit(5)] += big.pmf[c];
  }
  for (std::size_t c = 0; c < marg.size(); ++c) EXPECT_NEAR(marg[c], small.pmf[c], 1e-12);
}

TEST(TvDistance, Examples) {
  SubarrayLaw P{{1}, {{1}}, 2, {0.5, 0.5}};
  SubarrayLaw Q{{1}, {{1}}, 2, {0.75, 0.25}};
  EXPECT_DOUBLE_EQ(tv_distance(P, P), 0.0);
  EXPECT_DOUBLE_EQ(tv_distance(P, Q), 0.25);
  EXPECT_DOUBLE_EQ(tv_distance(SubarrayLaw{{1}, {{1}}, 2, {1.0, 0.0}}, SubarrayLaw{{1}, {{1}}, 2, {0.0, 1.0}}), 1.0);
  EXPECT_THROW((void)tv_distance(P, SubarrayLaw{{1}, {{1}}, 3, {1.0, 0.0, 0.0}}), InvalidArgument);
}

TEST(TvDistance, TriangleInequality) {
  SeededRng rng(47);
  const auto random_law = [&] {
    SubarrayLaw L{{1, 2}, {{1, 2}}, 3, std::vector<double>(3)};
    double t = 0.0;
    for (double& x : L.pmf) t += (x = rng.uniform());
    for (double& x : L.pmf) x /= t;
    return L;
  };
  for (int i = 0; i < 200; ++i) {
    const auto a = random_law(), b = random_law(), c = random_law();
    EXPECT_LE(tv_distance(a, c), tv_distance(a, b) + tv_distance(b, c) + 1e-15);
  }
}

TEST(Spreadability, GenerativeModelsAreExact) {
  SeededRng rng(53);
  for (int trial = 0; trial < 5; ++trial) {
    const auto f = random_function(rng, 2, 2, 2, 2);
    const auto model = to_model(f, 5);
    for (int k = 2; k <= 5; ++k) EXPECT_LE(spreadability_defect(model, k).defect, 1e-10);
  }
  EXPECT_LE(spreadability_defect(iid_mixture(6, 1, {0.2, 0.8}), 3).defect, 1e-10);
}

TEST(Spreadability, PerturbedAtomicIsPositiveAndFullWindowIsZero) {
  AtomicArray a;
  a.n = 3;
  a.d = 1;
  a.space = std::make_shared<FiniteProbSpace>(FiniteProbSpace::uniform(2));
  a.entries = {{0, 1}, {0, 1}, {0, 0}};
  const auto model = ArrayModel::atomic(a, Alphabet::numeric(2));
  const auto r = spreadability_defect(model, 1);
  EXPECT_NEAR(r.defect, 0.5, 1e-15);
  EXPECT_DOUBLE_EQ(spreadability_defect(model, 3).defect, 0.0);
}

TEST(FindSpreadableSubarray, Examples) {
  const auto iid = iid_mixture(6, 1, {0.5, 0.5});
  EXPECT_EQ(find_spreadable_subarray(iid, 3, 0.0), (IndexSet{1, 2, 3}));

  AtomicArray a;
  a.n = 4;
  a.d = 1;
  a.space = std::make_shared<FiniteProbSpace>(FiniteProbSpace::uniform(4));
  a.entries = {{1, 0, 0, 0}, {1, 1, 0, 0}, {1, 1, 1, 0}, {1, 1, 1, 1}};
  const auto model = ArrayModel::atomic(a, Alphabet::numeric(2));
  EXPECT_FALSE(find_spreadable_subarray(model, 2, 0.01).has_value());
  EXPECT_EQ(find_spreadable_subarray(model, 2, 1.0), (IndexSet{1, 2}));
}

TEST(Sample, DeterministicAndMatchesLaw) {
  const auto pm = ArrayModel::mixture(4, MixtureModel{{1.0}, {point_mass(2, 2, 1)}}, Alphabet::numeric(2));
  for (int s : sample(pm, 3)) EXPECT_EQ(s, 1);

  SeededRng rng(59);
  const auto f = random_function(rng, 2, 2, 2, 2);
  const auto model = to_model(f, 3);
  EXPECT_EQ(sample(model, 99), sample(model, 99));
  const auto law = law_of_subarray(model, {1, 2, 3});
  const int draws = 100000;
  std::vector<double> freq(law.pmf.size(), 0.0);
  for (int i = 0; i < draws; ++i) {
    const auto x = sample(model, static_cast<std::uint64_t>(i));
    freq[static_cast<std::size_t>(x[0] * 4 + x[1] * 2 + x[2])] += 1.0;
  }
  for (std::size_t c = 0; c < freq.size(); ++c) {
    const double p = law.pmf[c];
    const double sigma = std::sqrt(p * (1.0 - p) / draws);
    EXPECT_LE(std::abs(freq[c] / draws - p), 4.0 * sigma + 1e-12) << "config " << c;
  }
}

TEST(PairMoment, MatchesOracleAndSymmetry) {
  SeededRng rng(61);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 1 + static_cast<int>(rng.next() % 3);
    const auto f = random_function(rng, d, 2, 1 + rng.next() % 2, 3);
    const auto model = to_model(f, 7);
    const auto all = choose(interval(1, 7), d);
    PairMomentTable table(model);
    for (int k = 0; k < 10; ++k) {
      const auto& s = all[rng.next() % all.size()];
      const auto& t = all[rng.next() % all.size()];
      const double ref = oracle::pair_moment(f, s, t);
      EXPECT_NEAR(pair_moment(model, s, t), ref, 1e-12);
      EXPECT_NEAR(pair_moment(model, t, s), ref, 1e-12);
      EXPECT_NEAR(table(s, t), ref, 1e-12);
      EXPECT_NEAR(entry_mean(model, s), oracle::mean(f, s), 1e-12);
    }
    const auto& s = all.front();
    double sq = 0.0;
    for (const auto& [cfg, p] : oracle::joint_law(f, {s})) sq += p * f.values[cfg[0]] * f.values[cfg[0]];
    EXPECT_NEAR(pair_moment(model, s, s), sq, 1e-12);
  }
}

TEST(PairMoment, ProductModelAgreesWithFullEnumeration) {
  // h(x, y) = f(x) g(y) as a partition of unity on a two-point base.
  PartitionOfUnity h;
  h.base = {0.4, 0.6};
  h.d = 2;
  const double f[2] = {0.2, 0.9}, g[2] = {0.5, 0.3};
  h.funcs.assign(2, std::vector<double>(4));
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y) {
      h.funcs[1][static_cast<std::size_t>(x * 2 + y)] = f[x] * g[y];
      h.funcs[0][static_cast<std::size_t>(x * 2 + y)] = 1.0 - f[x] * g[y];
    }
  const auto model = ArrayModel::mixture(4, MixtureModel{{1.0}, {h}}, Alphabet::from_values({-1.0, 1.0}));
  const auto atoms = to_atomic(model);
  const auto all = choose(interval(1, 4), 2);
  for (const auto& s : all)
    for (const auto& t : all) {
      const auto& cs = atoms.column(s);
      const auto& ct = atoms.column(t);
      double ref = 0.0;
      for (std::size_t a = 0; a < cs.size(); ++a)
        ref += atoms.space->weight(a) * (cs[a] ? 1.0 : -1.0) * (ct[a] ? 1.0 : -1.0);
      EXPECT_NEAR(pair_moment(model, s, t), ref, 1e-12);
    }
}

TEST(PairMoment, IndependentZeroMeanEntries) {
  const auto iid = ArrayModel::mixture(
      6, MixtureModel{{1.0}, {[] {
                        PartitionOfUnity h;
                        h.base = {1.0};
                        h.d = 2;
                        h.funcs = {{0.5}, {0.5}};
                        return h;
                      }()}},
      Alphabet::from_values({-1.0, 1.0}));
  EXPECT_NEAR(pair_moment(iid, {1, 2}, {3, 4}), 0.0, 1e-15);
  EXPECT_NEAR(pair_moment(iid, {1, 2}, {1, 2}), 1.0, 1e-15);
}

TEST(Caps, MarginalizationCapIsEnforced) {
  SeededRng rng(67);
  const auto f = random_function(rng, 2, 4, 1, 2);
  const auto model = to_model(f, 12);
  Caps tiny;
  tiny.max_terms = 10;
  EXPECT_THROW(law_of_subarray(model, {1, 2, 3, 4}, tiny), CapExceeded);
}
