#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles/oracles.hpp"
#include "spreadarray/errors.hpp"
#include "spreadarray/extraction.hpp"

using namespace spreadarray;

namespace {

ArrayModel iid_model(Index n, int d, std::vector<double> q) {
  PartitionOfUnity h;
  h.base = {1.0};
  h.d = d;
  for (double x : q) h.funcs.push_back({x});
  return ArrayModel::mixture(n, MixtureModel{{1.0}, {h}}, Alphabet::numeric(static_cast<int>(q.size())));
}

// exchangeable but not iid: the seed shifts the symbol frequencies
oracle::FunctionModel mixed_d1() {
  oracle::FunctionModel f;
  f.d = 1;
  f.seed_weights = {0.4, 0.6};
  f.coord_weights = {0.2, 0.5, 0.3};
  f.table = {0, 0, 1, 0, 1, 1};
  f.values = {0.0, 1.0};
  return f;
}

ArrayModel to_model(const oracle::FunctionModel& f, Index n) {
  return ArrayModel::function(n, FunctionArray{f.seed_weights, f.coord_weights, f.d, f.table},
                              Alphabet::from_values(f.values));
}

double oracle_event(const oracle::FunctionModel& f, const std::vector<DSubset>& F, const std::vector<int>& asg) {
  const std::vector<oracle::Set> ent(F.begin(), F.end());
  double p = 0.0;
  for (const auto& [cfg, w] : oracle::joint_law(f, ent))
    if (cfg == asg) p += w;
  return p;
}

}  // namespace

TEST(SelectLevel, IidStopsAtFirstLevel) {
  const auto m = iid_model(12, 1, {0.3, 0.7});
  const auto r = select_level(m, {4}, 2, 0.01, 2);
  EXPECT_TRUE(r.found);
  EXPECT_EQ(r.ell, 1);
  EXPECT_EQ(r.levels, (std::vector<Index>{1, 2}));
  EXPECT_EQ(r.exceeding_levels, 0U);
  for (const auto& inc : r.increments)
    for (double v : inc) EXPECT_NEAR(v, 0.0, 1e-12);
  EXPECT_NEAR(r.indicator_energy[0], 0.3, 1e-12);
  EXPECT_THROW(select_level(m, {1}, 2, 0.01, 2), InvalidArgument);
}

TEST(SelectLevel, IncrementEnergyIsBoundedByIndicatorEnergy) {
  const auto m = to_model(mixed_d1(), 12);
  const auto r = select_level(m, {4}, 2, 1e-6, 2);
  for (int a = 0; a < 2; ++a) EXPECT_LE(r.increment_energy[a], r.indicator_energy[a] + 1e-12);
  EXPECT_GT(r.increment_energy[1], 0.0);
  // tiny theta: nothing certifies, the fallback is still one of the candidates
  EXPECT_FALSE(r.found);
  EXPECT_NE(std::find(r.levels.begin(), r.levels.end(), r.ell), r.levels.end());
}

TEST(ShiftInvariance, SpreadableModelHasNoDefect) {
  const auto m = to_model(mixed_d1(), 10);
  for (int a = 0; a < 2; ++a) {
    EXPECT_LE(shift_invariance_defect(m, {2}, {{5}, {6}}, {3}, {{7}, {9}}, a), 1e-10);
    EXPECT_LE(shift_invariance_defect(m, {4}, {{1}, {8}}, {2}, {{1}, {10}}, a), 1e-10);
  }
  EXPECT_THROW(shift_invariance_defect(m, {2}, {{5}, {6}}, {3}, {{1}, {9}}, 0), InvalidArgument);
}

TEST(TransportProjection, SelfTransportIsExact) {
  const auto m = to_model(mixed_d1(), 10);
  const auto r = transport_projection(m, {3}, {3}, 2);
  EXPECT_NEAR(r.max_defect, 0.0, 1e-12);
  const auto moved = transport_projection(m, {3}, {5}, 2);
  EXPECT_NEAR(moved.max_defect, 0.0, 1e-10);
  EXPECT_EQ(transport_bound(1, 2, 1, 0.0), 0.0);
}

TEST(ProjectApproximation, IidIsExact) {
  const auto m = iid_model(8, 1, {0.4, 0.6});
  const auto r = project_approximation(m, {2, 4}, 2, 0.25, 1);
  EXPECT_EQ(r.ell, 1);
  EXPECT_NEAR(r.worst, 0.0, 1e-12);
  EXPECT_NEAR(r.absorption, 0.0, 1e-12);
  EXPECT_TRUE(r.inclusions_hold);
  EXPECT_TRUE(r.chain_holds);
  EXPECT_FALSE(r.sampled);
  // every partial assignment of both points: 3 * 3 - 1
  EXPECT_EQ(r.rows.size(), 8U);
}

TEST(ProjectApproximation, RowsMatchOracleAndTelescope) {
  const auto f = mixed_d1();
  const auto m = to_model(f, 12);
  const auto r = project_approximation(m, {4, 8}, 2, 0.25, 2);
  EXPECT_TRUE(r.inclusions_hold);
  EXPECT_TRUE(r.chain_holds);
  EXPECT_LE(r.telescoping_residual, 1e-12);
  for (const auto& row : r.rows) {
    EXPECT_NEAR(row.exact, oracle_event(f, row.F, row.assignment), 1e-12);
    EXPECT_LE(row.diff, r.worst + 1e-15);
  }
  EXPECT_THROW(project_approximation(m, {4, 6}, 2, 0.25, 2), InvalidArgument);
}

TEST(ProjectApproximation, SamplingIsFlagged) {
  const auto m = iid_model(8, 1, {0.4, 0.6});
  ProjectionOptions o;
  o.max_evaluations = 3;
  const auto r = project_approximation(m, {2, 4}, 2, 0.25, 1, o);
  EXPECT_TRUE(r.sampled);
  EXPECT_EQ(r.rows.size(), 3U);
}

TEST(ExtractionConstants, Formulas) {
  const auto c = extraction_constants(1, 2, 2, 0.5);
  EXPECT_NEAR(c.theta, 0.25 / (128.0 * 4.0), 1e-15);
  EXPECT_NEAR(c.pigeonhole_levels, 2.0 * 2048.0, 1e-9);
  EXPECT_NEAR(c.log10_ell0, 4096.0 * std::log10(2.0), 1e-6);
  EXPECT_EQ(minimal_extraction_n(1, 2, 1), 6);
  EXPECT_EQ(minimal_extraction_n(2, 2, 1), 14);
  EXPECT_EQ(minimal_extraction_n(1, 3, 2), 24);
  EXPECT_THROW(extraction_constants(1, 1, 2, 0.5), InvalidArgument);
}

TEST(ExtractD1, IidModelIsReproduced) {
  const auto m = iid_model(6, 1, {0.3, 0.7});
  ExtractParams p;
  p.k = 2;
  p.ell0 = 1;
  p.u = 4;
  p.seed = 5;
  const auto out = extract_d1(m, p);
  EXPECT_EQ(out.L, (IndexSet{2, 4}));
  EXPECT_EQ(out.support_size, 2U);
  EXPECT_LE(out.unity_residual, 1e-12);
  EXPECT_FALSE(out.rows.empty());
  EXPECT_LE(out.worst_total, out.coding_budget + 1e-9);
  for (const auto& row : out.rows) {
    double telescoped = 0.0;
    for (double t : row.terms) telescoped += t;
    EXPECT_LE(row.total, telescoped + 1e-12);
  }
  EXPECT_THROW(extract_d1(iid_model(5, 1, {0.3, 0.7}), p), Infeasible);
}

TEST(ExtractD1, RowsMatchOracleOnBothSides) {
  const auto f = mixed_d1();
  const auto m = to_model(f, 6);
  ExtractParams p;
  p.k = 2;
  p.ell0 = 1;
  p.u = 4;
  p.seed = 9;
  const auto out = extract_d1(m, p);
  oracle::FunctionModel coded;
  coded.d = 1;
  coded.seed_weights = out.array.seed_weights;
  coded.coord_weights = out.array.coord_weights;
  coded.table = out.array.table;
  coded.values = f.values;
  for (const auto& row : out.rows) {
    EXPECT_NEAR(row.exact, oracle_event(f, row.F, row.assignment), 1e-12);
    // coded array lives on positions 1..k in the order of L
    std::vector<DSubset> moved;
    for (const auto& s : row.F) moved.push_back({s[0] / 2});
    EXPECT_NEAR(row.coded, oracle_event(coded, moved, row.assignment), 1e-12);
  }
  const auto again = extract_d1(m, p);
  EXPECT_EQ(out.to_json(), again.to_json());
}

TEST(ExtractStep, IidPlaneIsReproduced) {
  const auto m = iid_model(14, 2, {0.4, 0.6});
  ExtractParams p;
  p.k = 2;
  p.ell0 = 1;
  p.u = 3;
  p.seed = 3;
  const auto out = extract(m, p);
  EXPECT_EQ(out.d, 2);
  EXPECT_FALSE(out.rows.empty());
  EXPECT_EQ(out.compatibility_violations, 0U);
  EXPECT_LE(out.worst_total, out.coding_budget + 1e-9);
  ASSERT_NE(out.inner, nullptr);
  EXPECT_EQ(out.inner->d, 1);
  p.max_depth = 0;
  EXPECT_THROW(extract(m, p), InvalidArgument);
}
