#pragma once

// Exact finite probability spaces. Atoms are identified by their position.

#include <cstddef>
#include <memory>
#include <vector>

namespace spreadarray {

inline constexpr double kWeightTolerance = 1e-12;

// Neumaier-compensated running sum. Callers add terms in a fixed order.
class CompensatedSum {
 public:
  void add(double x);
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double compensated_sum(const std::vector<double>& xs);

class FiniteProbSpace {
 public:
  explicit FiniteProbSpace(std::vector<double> weights);
  static FiniteProbSpace uniform(std::size_t q);

  std::size_t size() const { return weights_.size(); }
  const std::vector<double>& weights() const { return weights_; }
  double weight(std::size_t atom) const { return weights_[atom]; }

 private:
  std::vector<double> weights_;
};

using SpacePtr = std::shared_ptr<const FiniteProbSpace>;

class RandomVariable {
 public:
  RandomVariable(SpacePtr space, std::vector<double> values);
  static RandomVariable constant(SpacePtr space, double c);

  const SpacePtr& space() const { return space_; }
  const std::vector<double>& values() const { return values_; }
  double operator[](std::size_t atom) const { return values_[atom]; }
  std::size_t size() const { return values_.size(); }

  RandomVariable& operator+=(const RandomVariable& o);
  RandomVariable& operator-=(const RandomVariable& o);
  RandomVariable& operator*=(double c);

 private:
  SpacePtr space_;
  std::vector<double> values_;
};

RandomVariable operator+(RandomVariable a, const RandomVariable& b);
RandomVariable operator-(RandomVariable a, const RandomVariable& b);
RandomVariable operator*(RandomVariable a, double c);
RandomVariable product(const RandomVariable& a, const RandomVariable& b);

// Blocks are numbered by first appearance in atom order.
struct AtomPartition {
  std::vector<std::size_t> block_of;
  std::size_t num_blocks = 0;

  static AtomPartition trivial(std::size_t atoms);
  // True if every block of *this lies inside one block of coarser.
  bool refines(const AtomPartition& coarser) const;
  std::vector<std::vector<std::size_t>> blocks() const;
};

double expect(const RandomVariable& X);
double inner(const RandomVariable& X, const RandomVariable& Y);
double l2_norm(const RandomVariable& X);

AtomPartition sigma_partition(const FiniteProbSpace& space, const std::vector<RandomVariable>& generators);
// Common refinement of two partitions of the same atoms.
AtomPartition join(const AtomPartition& a, const AtomPartition& b);

RandomVariable cond_expect(const RandomVariable& X, const AtomPartition& P);

// D_r = E[X|chain[r]] - E[X|chain[r-1]] for r = 1..chain.size()-1.
std::vector<RandomVariable> martingale_increments(const RandomVariable& X,
                                                  const std::vector<AtomPartition>& chain);

}  // namespace spreadarray
