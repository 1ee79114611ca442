#include <gtest/gtest.h>

#include <cmath>

#include "oracles/oracles.hpp"
#include "spreadarray/boxnorm.hpp"
#include "spreadarray/errors.hpp"

using namespace spreadarray;

namespace {

std::vector<double> random_base(SeededRng& rng, std::size_t q) {
  std::vector<double> w(q);
  double t = 0.0;
  for (double& x : w) t += (x = 0.2 + rng.uniform());
  for (double& x : w) x /= t;
  return w;
}

BoxFunction random_function(SeededRng& rng, std::vector<double> base, int d, double lo = -1.0, double hi = 1.0) {
  BoxFunction h;
  h.base = std::move(base);
  h.d = d;
  h.values.resize(h.cells());
  for (double& v : h.values) v = lo + (hi - lo) * rng.uniform();
  return h;
}

ArrayModel mixture_model(Index n, std::vector<double> weights, std::vector<PartitionOfUnity> comps) {
  const int m = static_cast<int>(comps.front().funcs.size());
  return ArrayModel::mixture(n, MixtureModel{std::move(weights), std::move(comps)}, Alphabet::numeric(m));
}

PartitionOfUnity constant_pou(int d, std::vector<double> q) {
  PartitionOfUnity h;
  h.base = {1.0};
  h.d = d;
  for (double x : q) h.funcs.push_back({x});
  return h;
}

}  // namespace

TEST(BoxNorm, Examples) {
  EXPECT_NEAR(box_norm(BoxFunction::constant({0.5, 0.5}, 2, 0.7)), 0.7, 1e-12);
  BoxFunction h;
  h.base = {0.5, 0.5};
  h.d = 2;
  h.values = {1.0, 0.0, 0.0, 0.0};
  EXPECT_NEAR(box_norm(h), 0.5, 1e-12);
  EXPECT_NEAR(box_norm(h), oracle::box_norm(h.base, 2, h.values), 1e-12);
  EXPECT_THROW(box_norm(BoxFunction::constant({1.0}, 1, 1.0)), InvalidArgument);
}

TEST(BoxNorm, MatchesBruteForceAndSupBound) {
  SeededRng rng(71);
  for (int trial = 0; trial < 40; ++trial) {
    const int d = 2 + static_cast<int>(rng.next() % 2);
    const std::size_t q = 2 + rng.next() % (d == 2 ? 5 : 3);
    const auto h = random_function(rng, random_base(rng, q), d);
    const double ref = oracle::box_norm(h.base, d, h.values);
    EXPECT_NEAR(box_norm(h), ref, 1e-9 * std::max(1.0, ref));
    double sup = 0.0;
    for (double v : h.values) sup = std::max(sup, std::abs(v));
    EXPECT_LE(box_norm(h), sup + 1e-12);
  }
}

TEST(BoxNorm, IsANorm) {
  SeededRng rng(73);
  for (int trial = 0; trial < 30; ++trial) {
    const auto base = random_base(rng, 3);
    const auto f = random_function(rng, base, 2), g = random_function(rng, base, 2);
    BoxFunction sum = f;
    for (std::size_t i = 0; i < sum.values.size(); ++i) sum.values[i] += g.values[i];
    EXPECT_LE(box_norm(sum), box_norm(f) + box_norm(g) + 1e-12);
    BoxFunction scaled = f;
    for (double& v : scaled.values) v *= -2.5;
    EXPECT_NEAR(box_norm(scaled), 2.5 * box_norm(f), 1e-12);
  }
}

TEST(BoxNorm, ProductIdentity) {
  SeededRng rng(79);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 2 + static_cast<int>(rng.next() % 2);
    const std::size_t q = 3;
    const auto base = random_base(rng, q);
    // each factor shows up 2^(d-1) times per side, so the norm is L^(2^(d-1)); L2 at d = 2
    const double p = std::pow(2.0, d - 1);
    std::vector<std::vector<double>> f(static_cast<std::size_t>(d), std::vector<double>(q));
    double expected = 1.0;
    for (auto& fi : f) {
      double mom = 0.0;
      for (std::size_t x = 0; x < q; ++x) {
        fi[x] = 2.0 * rng.uniform() - 1.0;
        mom += base[x] * std::pow(std::abs(fi[x]), p);
      }
      expected *= std::pow(mom, 1.0 / p);
    }
    BoxFunction h;
    h.base = base;
    h.d = d;
    h.values.assign(h.cells(), 1.0);
    for (std::size_t c = 0; c < h.cells(); ++c) {
      std::size_t r = c;
      for (int i = d - 1; i >= 0; --i) {
        h.values[c] *= f[static_cast<std::size_t>(i)][r % q];
        r /= q;
      }
    }
    EXPECT_NEAR(box_norm(h), expected, 1e-9);
  }
}

TEST(GcsDefect, Examples) {
  SeededRng rng(83);
  const auto base = random_base(rng, 3);
  const auto h = random_function(rng, base, 2);
  EXPECT_NEAR(gcs_defect(std::vector<BoxFunction>(4, h)), 0.0, 1e-12);
  std::vector<BoxFunction> fam{h, h, BoxFunction::constant(base, 2, 0.0), h};
  EXPECT_NEAR(gcs_defect(fam), 0.0, 1e-15);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<BoxFunction> f;
    std::vector<std::vector<double>> vals;
    for (int e = 0; e < 4; ++e) {
      f.push_back(random_function(rng, base, 2));
      vals.push_back(f.back().values);
    }
    EXPECT_GE(gcs_defect(f), -1e-9);
    EXPECT_NEAR(cube_integral(f), oracle::cube_integral(base, 2, vals), 1e-12);
  }
  EXPECT_THROW(gcs_defect({h, h}), InvalidArgument);
}

TEST(BoxUniformity, Examples) {
  EXPECT_NEAR(box_uniformity(BoxFunction::constant({0.3, 0.7}, 2, 0.4)), 0.0, 1e-12);
  // h(x, y) = f(x) with E f = 0: the uniformity norm is the L2 norm of f.
  BoxFunction h;
  h.base = {0.25, 0.25, 0.5};
  h.d = 2;
  const double f[3] = {1.0, 1.0, -1.0};
  for (int x = 0; x < 3; ++x)
    for (int y = 0; y < 3; ++y) h.values.push_back(f[x]);
  EXPECT_NEAR(box_uniformity(h), 1.0, 1e-12);
  EXPECT_NEAR(box_uniformity(h), oracle::box_norm(h.base, 2, h.values), 1e-12);
}

TEST(ReplacementBound, Examples) {
  SeededRng rng(89);
  const auto base = random_base(rng, 3);
  const auto f = random_function(rng, base, 2);
  const auto g = random_function(rng, base, 2);
  const auto same = replacement_bound_check(f, f, {}, {1, 2}, {});
  EXPECT_NEAR(same.lhs, 0.0, 1e-15);
  const auto k0 = replacement_bound_check(f, g, {}, {1, 2}, {});
  EXPECT_NEAR(k0.lhs, std::abs(f.mean() - g.mean()), 1e-12);
  EXPECT_TRUE(k0.holds);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_function(rng, base, 2), b = random_function(rng, base, 2);
    const auto h1 = random_function(rng, base, 2), h2 = random_function(rng, base, 2);
    const auto r = replacement_bound_check(a, b, {h1, h2}, {1, 2}, {{1, 3}, {2, 3}});
    EXPECT_TRUE(r.holds) << r.lhs << " > " << r.rhs;
    EXPECT_NEAR(r.rhs, box_norm(a - b), 1e-12);
  }
  auto wild = f;
  wild.values[0] = 3.0;
  EXPECT_THROW(replacement_bound_check(wild, g, {}, {1, 2}, {}), InvalidArgument);
}

TEST(EnumerateBoxes, CountsAndMembers) {
  for (int d = 1; d <= 3; ++d)
    for (Index n = 2 * d; n <= 2 * d + 4; ++n) {
      const auto boxes = enumerate_boxes(n, d);
      // brute force: every choice of 2d points split into consecutive pairs
      EXPECT_EQ(boxes.size(), choose(interval(1, n), 2 * d).size());
      for (const auto& b : boxes) {
        const auto mem = b.members();
        EXPECT_EQ(mem.size(), std::size_t{1} << d);
        for (int i = 0; i + 1 < d; ++i) EXPECT_LT(b.blocks[i].second, b.blocks[i + 1].first);
      }
    }
  const auto one = enumerate_boxes(4, 2);
  ASSERT_EQ(one.size(), 1U);
  EXPECT_EQ(one[0].members(), (std::vector<DSubset>{{1, 3}, {1, 4}, {2, 3}, {2, 4}}));
  EXPECT_THROW(enumerate_boxes(3, 2), InvalidArgument);
}

TEST(BoxIndependence, IidIsZero) {
  const auto m = mixture_model(6, {1.0}, {constant_pou(2, {0.3, 0.7})});
  EXPECT_LE(box_independence_defect(m, {1}).defect, 1e-10);
  EXPECT_LE(least_box_independence(m).first.defect, 1e-10);
}

TEST(BoxIndependence, BooleanCaseMatchesFourPointDisplay) {
  oracle::FunctionModel f;
  f.d = 2;
  f.seed_weights = {0.3, 0.7};
  f.coord_weights = {0.5, 0.5};
  f.table = {0, 1, 1, 0, 1, 1, 0, 1};
  f.values = {0.0, 1.0};
  const auto model = ArrayModel::function(5, FunctionArray{f.seed_weights, f.coord_weights, 2, f.table},
                                          Alphabet::from_values(f.values));
  // generative models check one box; the direct display is evaluated on every i<j<k<l
  double worst = 0.0;
  for (const auto& q : choose(interval(1, 5), 4)) {
    const std::vector<oracle::Set> B{{q[0], q[2]}, {q[0], q[3]}, {q[1], q[2]}, {q[1], q[3]}};
    double joint = 0.0;
    for (const auto& [cfg, p] : oracle::joint_law(f, B))
      if (cfg == std::vector<int>{1, 1, 1, 1}) joint += p;
    double prod = 1.0;
    for (const auto& s : B) prod *= oracle::mean(f, s);
    worst = std::max(worst, std::abs(joint - prod));
  }
  EXPECT_GT(worst, 1e-6);
  EXPECT_NEAR(box_independence_defect(model, {1}).defect, worst, 1e-12);
}

TEST(BoxIndependence, FarApartComponentsArePositive) {
  const auto m = mixture_model(4, {0.5, 0.5}, {constant_pou(2, {0.9, 0.1}), constant_pou(2, {0.1, 0.9})});
  EXPECT_GT(least_box_independence(m).first.defect, 0.01);
}

TEST(BoxSelection, ThetaConstant) {
  for (int d : {2, 3})
    for (int m : {2, 3})
      for (double eps : {0.01, 0.2})
        for (double th : {0.0, 0.05}) {
          const double expected = 100.0 * std::pow(2.0, 2 * d) * std::pow(m, std::pow(2.0, d)) *
                                  (2.0 * std::pow(eps, 1.0 / std::pow(4.0, d)) + std::pow(th, 1.0 / std::pow(4.0, d)));
          EXPECT_NEAR(box_theta_constant(d, m, eps, th), expected, 1e-9 * expected);
        }
}

TEST(BoxSelection, IdenticalIidComponentsAreAllSelected) {
  const auto h = constant_pou(2, {0.4, 0.6});
  const auto m = mixture_model(4, {0.2, 0.3, 0.5}, {h, h, h});
  const auto r = characterize_box_independence(m, {0.0, 0.0, -1.0, -1.0});
  EXPECT_EQ(r.selected, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_NEAR(r.inherited_defect, 0.0, 1e-12);
  const auto fw = forward_box_independence(m, r.selected, 0.0);
  EXPECT_NEAR(fw.measured, 0.0, 1e-12);
  EXPECT_TRUE(fw.holds);
}
