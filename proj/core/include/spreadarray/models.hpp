#pragma once

// Random arrays on [n]: tabular atomic arrays and product-form generative
// arrays, with exact subarray laws, total variation and spreadability checks.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "spreadarray/combin.hpp"
#include "spreadarray/probspace.hpp"

namespace spreadarray {

struct Caps {
  std::uint64_t max_terms = 10'000'000;       // summation terms per exact marginalization
  std::uint64_t max_subsets = kDefaultSubsetLimit;
};

// Symbols are 0..m-1. Each symbol has a display label and a real value used by
// real-valued operations (pair moments, decomposition).
struct Alphabet {
  std::vector<std::string> labels;
  std::vector<double> values;

  static Alphabet numeric(int m);  // labels "0".."m-1", values 0..m-1
  static Alphabet from_values(std::vector<double> values);
  int size() const { return static_cast<int>(labels.size()); }
};

// Entries are deterministic functions of an atom: entries[lex_rank(s)][atom] = symbol.
struct AtomicArray {
  Index n = 0;
  int d = 0;
  SpacePtr space;
  std::vector<std::vector<int>> entries;

  int symbol(const DSubset& s, std::size_t atom) const;
  const std::vector<int>& column(const DSubset& s) const;
};

// Functions h^a on Omega^d; funcs[a][cell] with cell = sum x_i q^(d-i) (first coordinate most significant).
struct PartitionOfUnity {
  std::vector<double> base;  // weights of Omega
  int d = 0;
  std::vector<std::vector<double>> funcs;

  std::size_t cells() const;
  void validate() const;
};

struct MixtureModel {
  std::vector<double> weights;
  std::vector<PartitionOfUnity> components;
};

// X_s = f(zeta, xi_{i_1},...,xi_{i_d}); table[z * q^d + cell] = symbol.
struct FunctionArray {
  std::vector<double> seed_weights;
  std::vector<double> coord_weights;
  int d = 0;
  std::vector<int> table;

  std::size_t cells() const;
};

// Generative unit shared by mixtures and function arrays:
// P(X_s = a | zeta = z, xi) = h[(z * q^d + cell(xi_s)) * m + a], entries conditionally independent.
struct SeededKernel {
  std::vector<double> seed_weights;
  std::vector<double> coord_weights;
  int d = 0;
  int m = 0;
  std::vector<double> h;

  std::size_t q() const { return coord_weights.size(); }
  std::size_t cells() const;
  bool deterministic() const;
};

struct WeightedKernel {
  double weight;
  SeededKernel kernel;
};

class ArrayModel {
 public:
  enum class Kind { Atomic, Mixture, Function };

  static ArrayModel atomic(AtomicArray array, Alphabet alphabet);
  static ArrayModel mixture(Index n, MixtureModel mixture, Alphabet alphabet);
  static ArrayModel function(Index n, FunctionArray f, Alphabet alphabet);

  Kind kind() const { return kind_; }
  Index n() const { return n_; }
  int d() const { return d_; }
  int m() const { return alphabet_.size(); }
  const Alphabet& alphabet() const { return alphabet_; }
  bool generative() const { return kind_ != Kind::Atomic; }

  const AtomicArray& as_atomic() const;
  const MixtureModel& as_mixture() const;
  const FunctionArray& as_function() const;
  const std::vector<WeightedKernel>& kernels() const { return kernels_; }

  // The subarray on J, relabelled onto [|J|].
  ArrayModel restrict_to(const IndexSet& J) const;
  // Same law with different real values attached to the symbols.
  ArrayModel with_values(std::vector<double> values) const;

 private:
  Kind kind_ = Kind::Atomic;
  Index n_ = 0;
  int d_ = 0;
  Alphabet alphabet_;
  std::variant<AtomicArray, MixtureModel, FunctionArray> payload_;
  std::vector<WeightedKernel> kernels_;
};

// Joint law of a list of entries. Configuration index: entry 0 is the most significant digit base m.
struct SubarrayLaw {
  IndexSet window;              // J
  std::vector<DSubset> entries;  // (J choose d) in lex order
  int m = 0;
  std::vector<double> pmf;
};

double event_probability(const ArrayModel& model, const std::vector<DSubset>& entries,
                         const std::vector<int>& symbols, const Caps& caps = {});

std::vector<double> joint_law(const ArrayModel& model, const std::vector<DSubset>& entries,
                              const Caps& caps = {});

SubarrayLaw law_of_subarray(const ArrayModel& model, const IndexSet& J, const Caps& caps = {});

double tv_distance(const SubarrayLaw& P, const SubarrayLaw& Q);

struct SpreadabilityResult {
  double defect = 0.0;
  IndexSet worst_J;
  IndexSet worst_K;
};

SpreadabilityResult spreadability_defect(const ArrayModel& model, int k, const Caps& caps = {});

// Lex-least J of size target_n whose subarray is eta-spreadable at every window size, if any.
std::optional<IndexSet> find_spreadable_subarray(const ArrayModel& model, int target_n, double eta,
                                                 const Caps& caps = {});

// One draw of every entry, in lex order of ([n] choose d).
std::vector<int> sample(const ArrayModel& model, std::uint64_t seed);

double entry_mean(const ArrayModel& model, const DSubset& s, const Caps& caps = {});
double pair_moment(const ArrayModel& model, const DSubset& s, const DSubset& t, const Caps& caps = {});

// Pair moments with memoization. Generative models are keyed by the relative
// order pattern of (s, t), which determines the moment exactly.
class PairMomentTable {
 public:
  explicit PairMomentTable(const ArrayModel& model, Caps caps = {});
  double operator()(const DSubset& s, const DSubset& t);
  double mean(const DSubset& s);
  std::size_t evaluations() const { return evaluations_; }

 private:
  const ArrayModel& model_;
  Caps caps_;
  std::map<std::vector<int>, double> cache_;
  std::map<std::vector<int>, double> mean_cache_;
  std::size_t evaluations_ = 0;
};

// Exact atomic representation of the listed entries.
struct LocalAtoms {
  SpacePtr space;
  std::vector<DSubset> entries;
  std::vector<std::vector<int>> symbols;  // symbols[e][atom]

  RandomVariable indicator(std::size_t e, int a) const;
  RandomVariable value(std::size_t e, const Alphabet& alphabet) const;
  std::size_t find(const DSubset& s) const;
};

LocalAtoms materialize(const ArrayModel& model, const std::vector<DSubset>& entries, const Caps& caps = {});
AtomicArray to_atomic(const ArrayModel& model, const Caps& caps = {});

// Uniform on [0,1) from the raw 64-bit Mersenne Twister stream (stable across platforms).
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);
  double uniform();
  std::uint64_t next();
  std::size_t categorical(const std::vector<double>& probs);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace spreadarray
