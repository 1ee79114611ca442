#include "spreadarray/combin.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <sstream>

#include "spreadarray/errors.hpp"

namespace spreadarray {

std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    r = r * (n - k + i) / i;
    if (r > std::numeric_limits<std::uint64_t>::max()) return std::numeric_limits<std::uint64_t>::max();
  }
  return static_cast<std::uint64_t>(r);
}

bool is_strictly_increasing(const IndexSet& s) {
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] <= s[i - 1]) return false;
  return true;
}

IndexSet interval(Index lo, Index hi) {
  IndexSet out;
  for (Index i = lo; i <= hi; ++i) out.push_back(i);
  return out;
}

IndexSet set_union(const IndexSet& a, const IndexSet& b) {
  IndexSet out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

IndexSet set_intersection(const IndexSet& a, const IndexSet& b) {
  IndexSet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

IndexSet set_difference(const IndexSet& a, const IndexSet& b) {
  IndexSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

bool is_subset(const IndexSet& a, const IndexSet& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

std::vector<DSubset> choose(const IndexSet& I, int d, std::uint64_t limit) {
  if (d < 0) throw InvalidArgument("choose: negative size");
  const auto n = static_cast<std::uint64_t>(I.size());
  const std::uint64_t total = binomial(n, static_cast<std::uint64_t>(d));
  if (total > limit)
    throw CapExceeded("choose: C(" + std::to_string(n) + "," + std::to_string(d) +
                      ") exceeds the subset limit " + std::to_string(limit));
  std::vector<DSubset> out;
  if (static_cast<std::uint64_t>(d) > n) return out;
  out.reserve(total);
  std::vector<std::size_t> pos(d);
  for (int i = 0; i < d; ++i) pos[i] = i;
  while (true) {
    DSubset s(d);
    for (int i = 0; i < d; ++i) s[i] = I[pos[i]];
    out.push_back(std::move(s));
    int i = d - 1;
    while (i >= 0 && pos[i] == n - d + i) --i;
    if (i < 0) break;
    ++pos[i];
    for (int j = i + 1; j < d; ++j) pos[j] = pos[j - 1] + 1;
  }
  return out;
}

std::uint64_t lex_rank(const DSubset& s, Index n) {
  const auto d = static_cast<Index>(s.size());
  std::uint64_t rank = 0;
  Index prev = 0;
  for (Index i = 0; i < d; ++i) {
    for (Index v = prev + 1; v < s[i]; ++v)
      rank += binomial(static_cast<std::uint64_t>(n - v), static_cast<std::uint64_t>(d - i - 1));
    prev = s[i];
  }
  return rank;
}

std::strong_ordering lex_compare(const DSubset& s, const DSubset& t) {
  if (s.size() != t.size()) throw InvalidArgument("lex_compare: dimension mismatch");
  for (std::size_t r = 0; r < s.size(); ++r)
    if (s[r] != t[r]) return s[r] <=> t[r];
  return std::strong_ordering::equal;
}

PartialIncrMap::PartialIncrMap(std::vector<Pair> pairs) : pairs_(std::move(pairs)) {
  for (std::size_t i = 0; i < pairs_.size(); ++i) {
    if (pairs_[i].first < 1 || pairs_[i].second < 1)
      throw InvalidArgument("PartialIncrMap: points must be positive");
    if (i > 0 && (pairs_[i].first <= pairs_[i - 1].first || pairs_[i].second <= pairs_[i - 1].second))
      throw InvalidArgument("PartialIncrMap: map must be strictly increasing");
  }
}

std::vector<int> PartialIncrMap::domain() const {
  std::vector<int> out;
  for (const auto& [x, y] : pairs_) out.push_back(x);
  return out;
}

IndexSet PartialIncrMap::image() const {
  IndexSet out;
  for (const auto& [x, y] : pairs_) out.push_back(y);
  return out;
}

bool PartialIncrMap::defined_at(int x) const {
  return std::any_of(pairs_.begin(), pairs_.end(), [x](const Pair& p) { return p.first == x; });
}

Index PartialIncrMap::operator()(int x) const {
  for (const auto& [a, b] : pairs_)
    if (a == x) return b;
  throw InvalidArgument("PartialIncrMap: point " + std::to_string(x) + " outside the domain");
}

PartialIncrMap PartialIncrMap::restrict_to(const std::vector<int>& G) const {
  std::vector<Pair> out;
  for (const auto& p : pairs_)
    if (std::find(G.begin(), G.end(), p.first) != G.end()) out.push_back(p);
  return PartialIncrMap(std::move(out));
}

std::string PartialIncrMap::to_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < pairs_.size(); ++i) {
    if (i) os << ", ";
    os << pairs_[i].first << "->" << pairs_[i].second;
  }
  os << ')';
  return os.str();
}

PartialIncrMap canonical_iso(const IndexSet& L) {
  if (L.empty()) throw InvalidArgument("canonical_iso: empty set");
  if (!is_strictly_increasing(L)) throw InvalidArgument("canonical_iso: set must be strictly increasing");
  std::vector<PartialIncrMap::Pair> pairs;
  for (std::size_t j = 0; j < L.size(); ++j) pairs.emplace_back(static_cast<int>(j + 1), L[j]);
  return PartialIncrMap(std::move(pairs));
}

IndexTransport::IndexTransport(IndexSet from, IndexSet to) : from_(std::move(from)), to_(std::move(to)) {
  if (from_.size() != to_.size()) throw InvalidArgument("index_transport: size mismatch");
  if (from_.empty()) throw InvalidArgument("index_transport: empty sets");
  if (!is_strictly_increasing(from_) || !is_strictly_increasing(to_))
    throw InvalidArgument("index_transport: sets must be strictly increasing");
}

Index IndexTransport::operator()(Index x) const {
  auto it = std::lower_bound(from_.begin(), from_.end(), x);
  if (it == from_.end() || *it != x)
    throw InvalidArgument("index_transport: point " + std::to_string(x) + " not in the source set");
  return to_[static_cast<std::size_t>(it - from_.begin())];
}

IndexSet IndexTransport::operator()(const IndexSet& s) const {
  IndexSet out;
  out.reserve(s.size());
  for (Index x : s) out.push_back((*this)(x));
  return out;
}

IndexTransport index_transport(const IndexSet& F, const IndexSet& G) { return IndexTransport(F, G); }

namespace {

bool images_disjoint_off(const PartialIncrMap& p1, const PartialIncrMap& p2, const std::vector<int>& G) {
  IndexSet a;
  IndexSet b;
  for (const auto& [x, y] : p1.pairs())
    if (std::find(G.begin(), G.end(), x) == G.end()) a.push_back(y);
  for (const auto& [x, y] : p2.pairs())
    if (std::find(G.begin(), G.end(), x) == G.end()) b.push_back(y);
  return set_intersection(a, b).empty();
}

AlignmentResult search_root(const PartialIncrMap& p1, const PartialIncrMap& p2,
                            const std::vector<int>& candidates, bool proper, int d) {
  const std::size_t c = candidates.size();
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << c); ++mask) {
    std::vector<int> G;
    for (std::size_t i = 0; i < c; ++i)
      if (mask >> i & 1U) G.push_back(candidates[i]);
    if (proper && static_cast<int>(G.size()) == d) continue;
    bool agree = true;
    for (int x : G)
      if (p1(x) != p2(x)) { agree = false; break; }
    if (!agree || !images_disjoint_off(p1, p2, G)) continue;
    return {true, G, p1.restrict_to(G)};
  }
  return {};
}

std::vector<int> common_domain(const PartialIncrMap& p1, const PartialIncrMap& p2) {
  std::vector<int> a = p1.domain();
  std::vector<int> b = p2.domain();
  std::vector<int> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

}  // namespace

AlignmentResult align(const PartialIncrMap& p1, const PartialIncrMap& p2) {
  if (p1 == p2) throw InvalidArgument("align: maps must be distinct");
  return search_root(p1, p2, common_domain(p1, p2), false, 0);
}

AlignmentResult align_sets(const DSubset& s1, const DSubset& s2) {
  if (s1.size() != s2.size()) throw InvalidArgument("align_sets: dimension mismatch");
  if (s1 == s2) throw InvalidArgument("align_sets: sets must be distinct");
  const int d = static_cast<int>(s1.size());
  std::vector<int> all(d);
  for (int i = 0; i < d; ++i) all[i] = i + 1;
  return search_root(canonical_iso(s1), canonical_iso(s2), all, true, d);
}

bool is_sparse(const IndexSet& F, Index ell, Index n) {
  if (F.empty()) throw InvalidArgument("is_sparse: empty set");
  if (!is_strictly_increasing(F)) throw InvalidArgument("is_sparse: set must be strictly increasing");
  if (F.front() < ell || F.back() > n - ell) return false;
  for (std::size_t i = 1; i < F.size(); ++i)
    if (F[i] - F[i - 1] < ell) return false;
  return true;
}

namespace {

IndexSet block_ending_at(Index j, Index len) { return interval(j - len + 1, j); }

std::vector<DSubset> sorted_unique(std::set<DSubset>& acc) { return {acc.begin(), acc.end()}; }

void check_family_pre(const DSubset& s, Index ell, Index n) {
  if (s.empty()) throw InvalidArgument("index family: d must be at least 1");
  if (ell < 1) throw InvalidArgument("index family: level must be positive");
  const auto d = static_cast<Index>(s.size());
  if (n < ell * (d + 1))
    throw InvalidArgument("index family: need n >= level*(d+1) = " + std::to_string(ell * (d + 1)));
}

struct AbsorbingBlocks {
  IndexSet delta;
  std::vector<IndexSet> r;  // r[0..d-1]
};

AbsorbingBlocks absorbing_blocks(const DSubset& s, const IndexSet& L, Index ell, Index n) {
  check_family_pre(s, ell, n);
  const int d = static_cast<int>(s.size());
  if (static_cast<int>(L.size()) < d) throw InvalidArgument("absorbing_family: |L| < d");
  if (!is_sparse(L, ell, n)) throw InvalidArgument("absorbing_family: L is not sparse at this level");
  if (!is_subset(s, L)) throw InvalidArgument("absorbing_family: s must be a subset of L");
  std::vector<std::size_t> pos;  // 1-based positions of s inside L
  for (Index x : s)
    pos.push_back(static_cast<std::size_t>(std::lower_bound(L.begin(), L.end(), x) - L.begin()) + 1);
  AbsorbingBlocks b;
  std::size_t prev = 0;
  for (int r = 0; r < d; ++r) {
    IndexSet acc;
    for (std::size_t u = prev + 1; u <= pos[r]; ++u) acc = set_union(acc, block_ending_at(L[u - 1], ell));
    b.r.push_back(std::move(acc));
    prev = pos[r];
  }
  b.delta = interval(n - ell + 1, n);
  for (std::size_t u = pos[d - 1] + 1; u <= L.size(); ++u) b.delta = set_union(b.delta, block_ending_at(L[u - 1], ell));
  return b;
}

std::vector<DSubset> family_from_blocks(const IndexSet& delta, const std::vector<IndexSet>& r) {
  const int d = static_cast<int>(r.size());
  std::set<DSubset> acc;
  // x ranges over ([d] choose d-1): drop one block at a time.
  for (int drop = 0; drop < d; ++drop) {
    IndexSet u = delta;
    for (int j = 0; j < d; ++j)
      if (j != drop) u = set_union(u, r[j]);
    for (auto& t : choose(u, d)) acc.insert(std::move(t));
  }
  return sorted_unique(acc);
}

}  // namespace

std::vector<DSubset> projection_family(const DSubset& s, Index ell, Index n) {
  check_family_pre(s, ell, n);
  if (!is_sparse(s, ell, n)) throw InvalidArgument("projection_family: s is not sparse at this level");
  const int d = static_cast<int>(s.size());
  const IndexSet tail = interval(n - ell + 1, n);
  if (d == 1) return choose(tail, 1);
  std::set<DSubset> acc;
  for (const auto& x : choose(s, d - 1)) {
    IndexSet u = tail;
    for (Index j : x) u = set_union(u, block_ending_at(j, ell));
    for (auto& t : choose(u, d)) acc.insert(std::move(t));
  }
  return sorted_unique(acc);
}

std::vector<DSubset> absorbing_family(const DSubset& s, const IndexSet& L, Index ell, Index n) {
  const auto b = absorbing_blocks(s, L, ell, n);
  if (s.size() == 1) return choose(b.delta, 1);
  return family_from_blocks(b.delta, b.r);
}

std::vector<DSubset> shifted_absorbing_family(const DSubset& s, const IndexSet& L, Index ell, Index n) {
  const auto b = absorbing_blocks(s, L, ell, n);
  const IndexSet delta = interval(n - static_cast<Index>(b.delta.size()) + 1, n);
  if (s.size() == 1) return choose(delta, 1);
  std::vector<IndexSet> r;
  for (std::size_t j = 0; j < s.size(); ++j) r.push_back(block_ending_at(s[j], static_cast<Index>(b.r[j].size())));
  return family_from_blocks(delta, r);
}

std::vector<PartialIncrMap> enumerate_partial_maps(int d, const IndexSet& N) {
  if (d < 1) throw InvalidArgument("enumerate_partial_maps: d must be at least 1");
  if (!is_strictly_increasing(N)) throw InvalidArgument("enumerate_partial_maps: N must be strictly increasing");
  const std::uint64_t total = count_partial_maps(d, N.size());
  if (total > kDefaultSubsetLimit) throw CapExceeded("enumerate_partial_maps: too many maps");
  std::vector<int> dom_all(d);
  for (int i = 0; i < d; ++i) dom_all[i] = i + 1;
  IndexSet dom_idx(dom_all.begin(), dom_all.end());
  std::vector<PartialIncrMap> out;
  out.reserve(total);
  for (int j = 0; j <= d && j <= static_cast<int>(N.size()); ++j) {
    for (const auto& dom : choose(dom_idx, j)) {
      for (const auto& img : choose(N, j)) {
        std::vector<PartialIncrMap::Pair> pairs;
        for (int i = 0; i < j; ++i) pairs.emplace_back(static_cast<int>(dom[i]), img[i]);
        out.emplace_back(std::move(pairs));
      }
    }
  }
  return out;
}

std::uint64_t count_partial_maps(int d, std::uint64_t n_size) {
  std::uint64_t total = 0;
  for (int j = 0; j <= d; ++j) total += binomial(static_cast<std::uint64_t>(d), j) * binomial(n_size, j);
  return total;
}

std::vector<std::vector<int>> subsets_of_range(int d) {
  std::vector<std::vector<int>> out;
  for (std::uint32_t mask = 0; mask < (1U << d); ++mask) {
    std::vector<int> G;
    for (int i = 0; i < d; ++i)
      if (mask >> i & 1U) G.push_back(i + 1);
    out.push_back(std::move(G));
  }
  return out;
}

std::string to_string(const IndexSet& s) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << '}';
  return os.str();
}

}  // namespace spreadarray
