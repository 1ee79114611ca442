#pragma once

// Orbits, two-point correlation comparison, and the interval/orbit-average
// decomposition of real-valued spreadable arrays into increments over partial maps.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "spreadarray/combin.hpp"
#include "spreadarray/models.hpp"
#include "spreadarray/probspace.hpp"

namespace spreadarray {

inline constexpr double kUnitNormTolerance = 1e-9;

// ---------------------------------------------------------------- moments

// Exact first and second moments of the real-valued entries of a model, fetched
// lazily per entry. With normalize set, entries are rescaled to unit L2 norm;
// otherwise any entry whose norm is off by more than kUnitNormTolerance is rejected.
// Not thread safe (memoizes).
class EntryMoments {
 public:
  EntryMoments(const ArrayModel& model, bool normalize = false, Caps caps = {});

  const ArrayModel& model() const { return model_; }
  bool normalized() const { return normalize_; }
  const Caps& caps() const { return caps_; }

  std::size_t id(const DSubset& s);
  const DSubset& entry(std::size_t id) const { return entries_[id]; }
  std::size_t size() const { return entries_.size(); }
  double scale(std::size_t id) const { return scale_[id]; }

  double mean(std::size_t i);
  double moment(std::size_t i, std::size_t j);  // E[X_i X_j] after scaling
  double moment(const DSubset& s, const DSubset& t) { return moment(id(s), id(t)); }
  std::size_t evaluations() const { return table_.evaluations(); }

 private:
  const ArrayModel& model_;
  bool normalize_;
  Caps caps_;
  PairMomentTable table_;
  std::map<DSubset, std::size_t> ids_;
  std::vector<DSubset> entries_;
  std::vector<double> scale_;
  std::vector<double> means_;  // NaN until computed
  std::unordered_map<std::uint64_t, double> gram_;
};

// Finite real combination of entries.
struct LinearForm {
  std::map<std::size_t, double> coef;  // entry id -> coefficient

  LinearForm& add(const LinearForm& o, double c = 1.0);
  static LinearForm single(std::size_t id);
  // Largest |coefficient| after dropping exact zeros.
  double max_abs() const;
};

double form_mean(EntryMoments& mom, const LinearForm& f);
double form_inner(EntryMoments& mom, const LinearForm& f, const LinearForm& g);
double form_norm(EntryMoments& mom, const LinearForm& f);  // clamps tiny negative rounding

// ---------------------------------------------------------------- orbits

// Unit-norm family with its Gram matrix.
struct OrbitFamily {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> gram;

  std::size_t size() const { return gram.size(); }

  static OrbitFamily from_gram(std::vector<std::string> labels, std::vector<std::vector<double>> gram);
  static OrbitFamily from_variables(const std::vector<RandomVariable>& xs);
  static OrbitFamily from_entries(EntryMoments& mom, const std::vector<DSubset>& entries);
};

// Spread of the off-diagonal correlations: the least eta making the family an eta-orbit.
double orbit_defect(const OrbitFamily& family);

struct UniversalityResult {
  double lhs = 0.0;    // ||Z_F - Z_G||
  double eta = 0.0;
  double bound = 0.0;  // 2 (1/min(|F|,|G|) + eta)^(1/2)
  bool holds = true;   // lhs <= bound + 1e-9
};

// F, G index positions in the family (duplicates rejected).
UniversalityResult universality_check(const OrbitFamily& family, const std::vector<std::size_t>& F,
                                      const std::vector<std::size_t>& G);

// ---------------------------------------------------------------- two-point correlations

struct TwoPointGap {
  double gap = 0.0;
  double bound = 0.0;               // 8 d^2 / sqrt(n)
  std::optional<double> d2_bound;   // 6 / sqrt(n), d = 2 and n >= 10
  std::vector<int> root;
  bool holds = true;
};

TwoPointGap two_point_gap(EntryMoments& mom, const DSubset& s1, const DSubset& s2, const DSubset& t1,
                          const DSubset& t2);

// ---------------------------------------------------------------- plan

struct Interval {
  Index lo = 0;
  Index hi = -1;
  Index size() const { return hi - lo + 1; }
  Index min() const { return lo; }
  bool contains(Index x) const { return lo <= x && x <= hi; }
};

Index minimal_plan_n(int d, Index kappa, Index k);  // 2 kappa^2 d (k+1)^(d+1)
double plan_gamma(Index n, int d, Index kappa);     // (1/kappa + 8 d^2 / sqrt n)^(1/2)

struct DecompPlan {
  Index n = 0;
  int d = 0;
  Index kappa = 0;
  Index k = 0;
  Index orbit_offset = 0;  // 0: orbit points at the left end of each H block
  double gamma = 0.0;

  IndexSet N;
  std::vector<Interval> L;  // k blocks of size kappa; N = their minima
  std::vector<Interval> D;  // k+1 blocks
  std::vector<PartialIncrMap> maps;  // PartIncr([d], N)
  std::map<PartialIncrMap, std::size_t> map_index;
  std::map<PartialIncrMap, std::vector<DSubset>> orbit;  // O_p, sorted
  std::map<DSubset, PartialIncrMap> owners;              // s -> the p with s in O_p

  Index gamma_len() const;  // d kappa^2
  // i in 1..k+1, j in 1..d, r in 1..kappa
  Interval Gamma(Index i, const PartialIncrMap& p) const;
  Interval Theta(Index i, const PartialIncrMap& p, int j) const;
  Interval H(Index i, const PartialIncrMap& p, int j, Index r) const;

  const std::vector<DSubset>& O(const PartialIncrMap& p) const;
  // Union of O_{p|G} over G inside dom(p); sorted unique.
  std::vector<DSubset> G_family(const PartialIncrMap& p) const;
  // s in O_p, G inside dom(p); members t_{s,G,r} for r = 1..kappa.
  std::vector<DSubset> O_prime(const DSubset& s, const std::vector<int>& G) const;
  // The unique p with s in O_p, if any.
  std::optional<PartialIncrMap> owner(const DSubset& s) const;

  // Re-verifies the interval and orbit invariants; returns the first failure, empty if none.
  std::string check_invariants() const;
  std::string to_json(std::size_t max_gamma_rows = 4096) const;
};

// Leftmost-greedy packing. Throws Infeasible (with the minimal n) when n is too small.
DecompPlan build_plan(Index n, int d, Index kappa, Index k, Index orbit_offset = 0);

struct Theorem16Parameters {
  Index kappa = 0;
  double c = 0.0;
  double log10_n0 = 0.0;
  double n0 = 0.0;      // inf when it overflows
  double k = 0.0;       // at the given n (n0 when none given), as a real
  double log10_k = 0.0;
};

Theorem16Parameters theorem16_parameters(int d, double epsilon, double n = 0.0);

// ---------------------------------------------------------------- decomposition

struct DeltaProcess {
  std::shared_ptr<EntryMoments> moments;
  const DecompPlan* plan = nullptr;
  std::map<PartialIncrMap, LinearForm> Y;
  std::map<PartialIncrMap, LinearForm> Delta;

  const LinearForm& delta(const PartialIncrMap& p) const;
  const LinearForm& y(const PartialIncrMap& p) const;
  // X_s minus the sum of Delta over restrictions of I_s: coefficient residual and L2 residual.
  std::pair<double, double> identity_residual(const DSubset& s) const;
};

// Builds Y and Delta for every p in PartIncr([d], N). The plan must outlive the result.
DeltaProcess decompose(std::shared_ptr<EntryMoments> moments, const DecompPlan& plan);

// Largest |X_s - sum Delta| over atoms, for atomic models (nullopt otherwise).
std::optional<double> pointwise_identity_residual(const DeltaProcess& delta, const DSubset& s);

struct LatticeResult {
  std::vector<int> root;
  PartialIncrMap meet;
  double bound = 0.0;               // 2 gamma
  double correlation_gap = 0.0;     // |E[Y1 Y2] - E[Y_meet^2]|
  double correlation_bound = 0.0;   // 4 gamma
  double orbit_defect = 0.0;        // worst over s in O_p1 of the P2 family; 0 if root = dom(p1)
  double orbit_bound = 0.0;         // 8 d^2 / sqrt n
  bool conditional_computed = false;
  std::string skipped_reason;
  double defect = 0.0;              // ||E[Y_p1 | A_p2] - Y_meet||
  double transfer_defect = 0.0;     // worst ||E[X_s' | A_p2] - E[X_s | A_p2]||, s' in O'_{s,root}
  bool holds = true;
};

LatticeResult verify_lattice(const DeltaProcess& delta, const PartialIncrMap& p1, const PartialIncrMap& p2,
                             bool conditional = true);

struct DecompositionReport {
  double gamma = 0.0;
  double identity_residual = 0.0;          // coefficient form, max over s in (N choose d)
  double identity_l2_residual = 0.0;
  std::optional<double> identity_pointwise;
  struct MeanRow {
    PartialIncrMap p;
    double mean = 0.0;
  };
  std::vector<MeanRow> means;
  double mean_bound = 0.0;                 // 2^d gamma
  double worst_mean = 0.0;
  std::size_t aligned_pairs = 0;
  double worst_cross = 0.0;
  PartialIncrMap worst_p1, worst_p2;
  double cross_bound = 0.0;                // 2^(2d+2) gamma
  double worst_correlation_gap = 0.0;      // lattice correlation form
  double worst_orbit_defect = 0.0;         // over every O_p with at least 2 members
  std::size_t violations = 0;
  std::size_t moment_evaluations = 0;

  std::string to_json(const DecompPlan& plan) const;
};

DecompositionReport analyze_decomposition(const DeltaProcess& delta);

// ---------------------------------------------------------------- uniqueness

Index uniqueness_ell(int d, double epsilon);  // ceil(1/epsilon + 4^d)

struct UniquenessRow {
  PartialIncrMap p;
  double diff = 0.0;    // ||Delta_p - Z_p||
  double bound = 0.0;   // 2^(C(|dom p|+1, 2) + d + 1) sqrt(2 eps)
  std::vector<DSubset> witnesses;
  double witness_average_residual = 0.0;  // restrictions inside dom(p): averages reproduce Delta/Z exactly
  double off_domain_average = 0.0;        // worst norm of witness averages for F leaving dom(p)
};

struct UniquenessReport {
  double epsilon = 0.0;
  Index ell = 0;
  Index k0 = 0;
  IndexSet L;
  std::vector<UniquenessRow> rows;
  double theorem_bound = 0.0;      // 2^(C(d+2,2)) sqrt(2 eps)
  double worst_diff = 0.0;
  double worst_cross_delta = 0.0;  // over the aligned pairs the argument uses
  double worst_cross_z = 0.0;
  double worst_identity_z = 0.0;
  double worst_norm_sq = 0.0;      // ||Delta_{I_s|F}||^2 and ||Z_{I_s|F}||^2
  double norm_sq_bound = 0.0;      // 1 + 4^d eps
  double average_bound = 0.0;      // sqrt(2 eps)
  std::size_t violations = 0;

  std::string to_json() const;
};

// Witness d-sets inside N whose pairwise meets are exactly p (full-domain p: the image alone).
std::vector<DSubset> uniqueness_witnesses(const PartialIncrMap& p, const IndexSet& N, int d, Index ell);

// Delta and Z must come from plans with the same N and the same moments object.
// Throws InvalidArgument when either process fails the identity or the eps cross bound
// on the pairs the argument uses, and Infeasible when L comes out empty.
UniquenessReport uniqueness_check(const DeltaProcess& delta, const DeltaProcess& Z, double epsilon);

std::string to_json_string(const PartialIncrMap& p);

}  // namespace spreadarray
