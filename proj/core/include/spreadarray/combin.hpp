#pragma once

// Index combinatorics. All indices are 1-based: [n] = {1,...,n}.

#include <compare>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace spreadarray {

using Index = std::int64_t;

// Strictly increasing list of positive integers. A d-subset is an IndexSet of length d.
using IndexSet = std::vector<Index>;
using DSubset = IndexSet;

// Guard on any materialized (I choose d).
inline constexpr std::uint64_t kDefaultSubsetLimit = 1'000'000;

std::uint64_t binomial(std::uint64_t n, std::uint64_t k);  // saturates at UINT64_MAX

bool is_strictly_increasing(const IndexSet& s);
IndexSet interval(Index lo, Index hi);  // {lo,...,hi}, empty if hi < lo
IndexSet set_union(const IndexSet& a, const IndexSet& b);
IndexSet set_intersection(const IndexSet& a, const IndexSet& b);
IndexSet set_difference(const IndexSet& a, const IndexSet& b);
bool is_subset(const IndexSet& a, const IndexSet& b);

// All members of (I choose d) in lexicographic order.
std::vector<DSubset> choose(const IndexSet& I, int d,
                            std::uint64_t limit = kDefaultSubsetLimit);

// Position of s in the lexicographic enumeration of ([n] choose |s|).
std::uint64_t lex_rank(const DSubset& s, Index n);

std::strong_ordering lex_compare(const DSubset& s, const DSubset& t);

class PartialIncrMap {
 public:
  using Pair = std::pair<int, Index>;

  PartialIncrMap() = default;
  explicit PartialIncrMap(std::vector<Pair> pairs);

  const std::vector<Pair>& pairs() const { return pairs_; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }

  std::vector<int> domain() const;
  IndexSet image() const;
  bool defined_at(int x) const;
  Index operator()(int x) const;

  // p restricted to G (G need not lie inside the domain; points outside are dropped).
  PartialIncrMap restrict_to(const std::vector<int>& G) const;

  std::string to_string() const;

  friend bool operator==(const PartialIncrMap&, const PartialIncrMap&) = default;
  friend auto operator<=>(const PartialIncrMap&, const PartialIncrMap&) = default;

 private:
  std::vector<Pair> pairs_;
};

struct AlignmentResult {
  bool aligned = false;
  std::vector<int> root;
  PartialIncrMap meet;
};

// I_L : [|L|] -> L.
PartialIncrMap canonical_iso(const IndexSet& L);

// The order isomorphism F -> G.
class IndexTransport {
 public:
  IndexTransport(IndexSet from, IndexSet to);
  Index operator()(Index x) const;
  IndexSet operator()(const IndexSet& s) const;
  const IndexSet& from() const { return from_; }
  const IndexSet& to() const { return to_; }

 private:
  IndexSet from_;
  IndexSet to_;
};

IndexTransport index_transport(const IndexSet& F, const IndexSet& G);

AlignmentResult align(const PartialIncrMap& p1, const PartialIncrMap& p2);
AlignmentResult align_sets(const DSubset& s1, const DSubset& s2);

bool is_sparse(const IndexSet& F, Index ell, Index n);

// The family G^s_ell; sorted lexicographically.
std::vector<DSubset> projection_family(const DSubset& s, Index ell, Index n);

// The d-subsets making up G^{s,L}_ell; sorted lexicographically.
std::vector<DSubset> absorbing_family(const DSubset& s, const IndexSet& L, Index ell, Index n);

// Intervals Delta, R_1..R_d sitting at n and at the points of s with the
// block sizes of the absorbing family; returns the family built from them.
std::vector<DSubset> shifted_absorbing_family(const DSubset& s, const IndexSet& L, Index ell,
                                              Index n);

// PartIncr([d], N) ordered by domain size, then domain, then image.
std::vector<PartialIncrMap> enumerate_partial_maps(int d, const IndexSet& N);
std::uint64_t count_partial_maps(int d, std::uint64_t n_size);

// Subsets of [d] as sorted vectors, ordered by bitmask.
std::vector<std::vector<int>> subsets_of_range(int d);

std::string to_string(const IndexSet& s);

}  // namespace spreadarray
