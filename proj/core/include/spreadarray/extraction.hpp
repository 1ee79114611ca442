#pragma once

// Projection approximation of spreadable arrays by lower-complexity sigma-algebras,
// and extraction of a partition generating approximately the same finite laws.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "spreadarray/coding.hpp"
#include "spreadarray/combin.hpp"
#include "spreadarray/models.hpp"

namespace spreadarray {

struct LevelSelection {
  Index ell = 0;
  bool found = false;          // some level met the threshold
  double threshold = 0.0;      // sqrt(theta)
  std::vector<Index> levels;   // candidate levels k^0, k^1, ... up to ell0
  std::vector<std::vector<double>> increments;  // [r][a] ||E[1|G_{k l_r}] - E[1|G_{l_r}]||
  std::size_t exceeding_levels = 0;              // levels with some increment above the threshold
  std::vector<double> increment_energy;          // [a] sum_r increments^2
  std::vector<double> indicator_energy;          // [a] ||1_{[X_t=a]}||^2
};

LevelSelection select_level(const ArrayModel& model, const DSubset& t, int k, double theta, Index ell0,
                            const Caps& caps = {});

// | ||E[1_{X_s=a} | F-family]||^2 - ||E[1_{X_t=a} | G-family]||^2 |, with the G side
// required to be the order transport of the F side.
double shift_invariance_defect(const ArrayModel& model, const DSubset& s, const std::vector<DSubset>& F_family,
                               const DSubset& t, const std::vector<DSubset>& G_family, int a,
                               const Caps& caps = {});

struct TransportResult {
  std::vector<double> defect;  // [a]
  double max_defect = 0.0;
};

// Conditional probabilities of t's family moved onto s's events, against the true projection.
TransportResult transport_projection(const ArrayModel& model, const DSubset& s, const DSubset& t, Index ell,
                                     const Caps& caps = {});
double transport_bound(int d, int m, Index ell, double eta);

struct ProjectionRow {
  std::vector<DSubset> F;
  std::vector<int> assignment;
  double exact = 0.0;
  double estimate = 0.0;
  double diff = 0.0;
};

struct ProjectionOptions {
  double eta = 0.0;  // only enters the displayed bound
  std::uint64_t max_evaluations = 100'000;
  std::uint64_t seed = 0;
  bool check_chain = true;
};

struct ProjectionReport {
  Index ell = 0;
  LevelSelection level;
  std::vector<ProjectionRow> rows;
  double worst = 0.0;
  bool sampled = false;          // worst is then a lower bound
  double paper_bound = 0.0;
  double absorption = 0.0;       // max_s,a ||E[1|G^{s,L}] - E[1|G^s]||
  double telescoping_residual = 0.0;
  bool inclusions_hold = true;   // both inclusions relating the two family types
  bool chain_holds = true;       // G^s_l <= shifted <= G^s_{kl}, as sets and as partitions
};

ProjectionReport project_approximation(const ArrayModel& model, const IndexSet& L, int k, double theta, Index ell0,
                                       const ProjectionOptions& opts = {}, const Caps& caps = {});

struct ExtractParams {
  int k = 2;
  double theta = 0.25;
  Index ell0 = 1;                // level cap
  std::size_t u = 6;             // lift block size
  double coding_epsilon = 0.5;   // lift target before division by kappa0
  int max_retries = 20;
  std::uint64_t seed = 0;
  std::size_t q_size = 0;        // 0: minimal for the recursion
  std::uint64_t max_alphabet = 4096;
  std::uint64_t max_evaluations = 100'000;
  int max_depth = 2;
  double epsilon = 0.5;          // only used for the displayed constants
};

// The theorem-level constants, as log10 where they overflow.
struct ExtractionConstants {
  double theta = 0.0;
  double pigeonhole_levels = 0.0;
  double log10_ell0 = 0.0;
  double log10_eta = 0.0;
  double log10_n0 = 0.0;
  double log10_space = 0.0;
};

ExtractionConstants extraction_constants(int d, int m, int k, double epsilon);

// Smallest n on which the desk-scale extraction fits.
Index minimal_extraction_n(int d, int k, Index ell0);

struct LawRow {
  std::vector<DSubset> F;
  std::vector<int> assignment;
  double exact = 0.0;
  double coded = 0.0;
  std::vector<double> terms;  // telescoped error pieces, see term_names
  double total = 0.0;
};

struct ExtractionOutput {
  int d = 0;
  Index n = 0;
  IndexSet L;
  IndexSet Q;  // empty for d = 1
  Index ell = 0;
  bool level_certified = false;
  FunctionArray array;  // seed coordinate plays the role of coordinate 0
  Alphabet alphabet;
  double coding_max_deviation = 0.0;
  double coding_budget = 0.0;
  bool coding_verified = false;
  int kappa0 = 0;
  std::vector<std::string> term_names;
  std::vector<LawRow> rows;
  double worst_total = 0.0;
  std::vector<double> worst_terms;
  bool sampled = false;
  std::size_t support_size = 0;          // |Y| after dropping null configurations
  std::size_t compatibility_violations = 0;
  std::size_t incompatible_tuples = 0;   // tuples outside the compatible set, filled with marginals
  double unity_residual = 0.0;
  std::shared_ptr<const ExtractionOutput> inner;
  ExtractionConstants constants;

  ArrayModel model() const;
  std::string to_json() const;
};

ExtractionOutput extract_d1(const ArrayModel& model, const ExtractParams& params, const Caps& caps = {});
ExtractionOutput extract_step(const ArrayModel& model, const ExtractParams& params, const Caps& caps = {});
// Dispatches on d.
ExtractionOutput extract(const ArrayModel& model, const ExtractParams& params, const Caps& caps = {});

}  // namespace spreadarray
