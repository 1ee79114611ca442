#pragma once

// Randomized symmetric partitions of V^d with small box-norm deviations, and
// the lift of a partition of unity to a genuine partition.

#include <cstdint>
#include <string>
#include <vector>

#include "spreadarray/boxnorm.hpp"
#include "spreadarray/models.hpp"

namespace spreadarray {

// Partition of V^d (V = {0..v-1}, uniform) into m symmetric parts, stored as one
// label per multiset class. Classes are the sorted d-tuples in lex order.
class SymmetricPartition {
 public:
  SymmetricPartition(std::size_t v, int d, int m, std::vector<int> class_labels);

  std::size_t ground_size() const { return v_; }
  int d() const { return d_; }
  int m() const { return m_; }
  const std::vector<int>& class_labels() const { return labels_; }
  std::size_t num_classes() const { return labels_.size(); }

  // Label of every point of V^d, first coordinate most significant.
  std::vector<int> cell_labels() const;
  std::vector<std::vector<std::size_t>> classes() const;  // sorted tuples
  std::vector<std::size_t> part_sizes() const;              // in classes
  BoxFunction indicator(int j) const;

  static std::vector<std::vector<std::size_t>> enumerate_classes(std::size_t v, int d, std::uint64_t cap);

 private:
  std::size_t v_;
  int d_;
  int m_;
  std::vector<int> labels_;
};

struct CodingOptions {
  int max_retries = 20;
  bool strict = true;  // throw RandomizedFailure when retries run out
  std::uint64_t cap = kBoxStreamingCap;
};

struct CodingResult {
  SymmetricPartition partition;
  std::vector<double> deviations;  // ||1_{E_j} - lambda_j||_box
  double max_deviation = 0.0;
  int attempts = 0;
  std::uint64_t attempt_seed = 0;
  bool verified = false;  // max_deviation <= epsilon
};

CodingResult random_symmetric_partition(std::size_t v, int d, const std::vector<double>& lambda, double epsilon,
                                        std::uint64_t seed, const CodingOptions& opts = {});

struct DeviationBound {
  double n0 = 0.0;
  bool feasible = false;
};

DeviationBound expected_deviation_bound(std::size_t v, int d, int m, double epsilon);
// Size of [u] for the lift when up to kappa0 entries are controlled.
double lift_size_bound(int d, int m, int kappa0, double epsilon);
// Same for control of every subarray on at most k indices.
double subarray_lift_size_bound(int d, int m, int k, double epsilon);

// Partition of ((seed) x (Y x [u])^d) obtained from a seeded kernel cell by cell.
struct LiftedPartition {
  std::vector<double> seed_weights;
  std::vector<double> y_weights;
  std::size_t u = 0;
  int d = 0;
  int m = 0;
  // per (z * |Y|^d + ycell): label of every point of [u]^d
  std::vector<std::vector<int>> labels;
  // per (z * |Y|^d + ycell): achieved deviation per symbol (0 for symbols with h = 0)
  std::vector<std::vector<double>> deviations;
  double max_deviation = 0.0;
  bool verified = false;

  // Coordinates of the lifted space are y * u + t.
  FunctionArray to_function_array() const;
};

struct LiftOptions {
  int max_retries = 20;
  bool strict = true;
  std::uint64_t cap = kBoxStreamingCap;
};

LiftedPartition lift_partition_of_unity(const PartitionOfUnity& H, int kappa0, double epsilon, std::size_t u,
                                        std::uint64_t seed, const LiftOptions& opts = {});
LiftedPartition lift_kernel(const SeededKernel& kernel, int kappa0, double epsilon, std::size_t u,
                            std::uint64_t seed, const LiftOptions& opts = {});

struct CodingLawCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double diff = 0.0;
};

CodingLawCheck verify_coding_law(const PartitionOfUnity& H, const LiftedPartition& E, const std::vector<DSubset>& F,
                                 const std::vector<int>& assignment, const Caps& caps = {});

std::string partition_to_json(const CodingResult& r, const std::vector<double>& lambda, double epsilon);

}  // namespace spreadarray
