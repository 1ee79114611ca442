#pragma once

// Box norms on Omega^d, boxes of [n] and the box independence condition.

#include <cstdint>
#include <vector>

#include "spreadarray/combin.hpp"
#include "spreadarray/models.hpp"

namespace spreadarray {

// Real function on Omega^d; values[cell], first coordinate most significant.
struct BoxFunction {
  std::vector<double> base;
  int d = 0;
  std::vector<double> values;

  static BoxFunction constant(std::vector<double> base, int d, double c);
  std::size_t q() const { return base.size(); }
  std::size_t cells() const;
  double mean() const;
  BoxFunction shifted(double c) const;  // h - c
  void validate() const;
};

BoxFunction operator-(const BoxFunction& a, const BoxFunction& b);

inline constexpr std::uint64_t kBoxStreamingCap = 500'000'000;

// Integral of prod_eps h_eps(omega_eps) over Omega^{2d}; the family is indexed by
// eps = (eps_1..eps_d) read as a binary number with eps_1 most significant.
double cube_integral(const std::vector<BoxFunction>& family, std::uint64_t cap = kBoxStreamingCap);

double box_norm(const BoxFunction& h, std::uint64_t cap = kBoxStreamingCap);
double gcs_defect(const std::vector<BoxFunction>& family);
double box_uniformity(const BoxFunction& h);

// Integral of prod_i f_i(omega_{s_i}) over the product of the coordinates in the union of the s_i.
double product_integral(const std::vector<const BoxFunction*>& factors, const std::vector<IndexSet>& coords,
                        std::uint64_t cap = 10'000'000);

struct ReplacementCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

ReplacementCheck replacement_bound_check(const BoxFunction& f, const BoxFunction& g,
                                         const std::vector<BoxFunction>& hs, const DSubset& s0,
                                         const std::vector<DSubset>& ss);

struct DBox {
  std::vector<std::pair<Index, Index>> blocks;  // H_1..H_d
  std::vector<DSubset> members() const;         // the 2^d transversals, lex order
};

std::vector<DBox> enumerate_boxes(Index n, int d, std::uint64_t limit = kDefaultSubsetLimit);

struct BoxIndependenceResult {
  double defect = 0.0;
  DBox worst_box;
  int worst_symbol = -1;
};

BoxIndependenceResult box_independence_defect(const ArrayModel& model, const std::vector<int>& S,
                                              const Caps& caps = {});
// Least defect over all S with |S| = m-1, and the omitted symbol achieving it.
std::pair<BoxIndependenceResult, int> least_box_independence(const ArrayModel& model, const Caps& caps = {});

struct BoxSelectionParams {
  double epsilon = 0.0;  // law distance between the array and the mixture
  double vartheta = 0.0;
  double mean_threshold = -1.0;  // negative: use rho_1
  double box_threshold = -1.0;   // negative: use rho
};

struct BoxSelectionReport {
  double Theta = 0.0;
  double rho1 = 0.0;
  double rho = 0.0;
  double mean_threshold = 0.0;
  double box_threshold = 0.0;
  std::vector<double> delta;                      // [a]
  std::vector<std::vector<double>> means;         // [j][a]
  std::vector<double> second_moment;              // [a] sum_j lambda_j E[h_j^a]^2
  std::vector<std::vector<double>> uniformity;    // [j][a]
  double delta_sq_gap = 0.0;                      // max_a |delta_a^2 - second_moment[a]|
  std::vector<std::size_t> first_stage;           // G_1
  std::vector<std::size_t> selected;              // G
  double selected_mass = 0.0;
  std::vector<double> markov_sum;                 // [a] over G_1
  double markov_bound = 0.0;
  // Largest left side of the subset-of-box inequality over boxes, subsets and symbols.
  double inherited_defect = 0.0;
};

BoxSelectionReport characterize_box_independence(const ArrayModel& mixture, const BoxSelectionParams& params,
                                                 const Caps& caps = {});

struct ForwardCheck {
  double rho = 0.0;          // measured: max of mass deficit, mean deviation, box uniformity over G
  double bound = 0.0;        // 2^d (2 eps + 4 rho)
  double measured = 0.0;     // least box independence defect of the model
  bool holds = false;
};

ForwardCheck forward_box_independence(const ArrayModel& mixture, const std::vector<std::size_t>& G, double epsilon,
                                      const Caps& caps = {});

double box_theta_constant(int d, int m, double epsilon, double vartheta);
double box_rho_constant(int d, int m, double epsilon, double vartheta);

}  // namespace spreadarray
