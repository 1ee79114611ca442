#include "spreadarray/probspace.hpp"

#include <cmath>
#include <cstring>
#include <string>
#include <unordered_map>

#include "spreadarray/errors.hpp"

namespace spreadarray {

void CompensatedSum::add(double x) {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x))
    comp_ += (sum_ - t) + x;
  else
    comp_ += (x - t) + sum_;
  sum_ = t;
}

double compensated_sum(const std::vector<double>& xs) {
  CompensatedSum s;
  for (double x : xs) s.add(x);
  return s.value();
}

FiniteProbSpace::FiniteProbSpace(std::vector<double> weights) : weights_(std::move(weights)) {
  if (weights_.empty()) throw InvalidArgument("FiniteProbSpace: no atoms");
  for (double w : weights_)
    if (!(w > 0.0) || !std::isfinite(w)) throw InvalidArgument("FiniteProbSpace: weights must be positive");
  const double total = compensated_sum(weights_);
  if (std::abs(total - 1.0) > kWeightTolerance)
    throw InvalidArgument("FiniteProbSpace: weights sum to " + std::to_string(total) + ", not 1");
}

FiniteProbSpace FiniteProbSpace::uniform(std::size_t q) {
  if (q == 0) throw InvalidArgument("FiniteProbSpace::uniform: q must be positive");
  return FiniteProbSpace(std::vector<double>(q, 1.0 / static_cast<double>(q)));
}

RandomVariable::RandomVariable(SpacePtr space, std::vector<double> values)
    : space_(std::move(space)), values_(std::move(values)) {
  if (!space_) throw InvalidArgument("RandomVariable: null space");
  if (values_.size() != space_->size()) throw InvalidArgument("RandomVariable: value count differs from atom count");
}

RandomVariable RandomVariable::constant(SpacePtr space, double c) {
  const std::size_t n = space->size();
  return RandomVariable(std::move(space), std::vector<double>(n, c));
}

namespace {

void check_same_space(const RandomVariable& a, const RandomVariable& b) {
  if (a.space() != b.space() && a.space()->weights() != b.space()->weights())
    throw InvalidArgument("random variables live on different spaces");
}

}  // namespace

RandomVariable& RandomVariable::operator+=(const RandomVariable& o) {
  check_same_space(*this, o);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
  return *this;
}

RandomVariable& RandomVariable::operator-=(const RandomVariable& o) {
  check_same_space(*this, o);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
  return *this;
}

RandomVariable& RandomVariable::operator*=(double c) {
  for (double& v : values_) v *= c;
  return *this;
}

RandomVariable operator+(RandomVariable a, const RandomVariable& b) { return a += b; }
RandomVariable operator-(RandomVariable a, const RandomVariable& b) { return a -= b; }
RandomVariable operator*(RandomVariable a, double c) { return a *= c; }

RandomVariable product(const RandomVariable& a, const RandomVariable& b) {
  check_same_space(a, b);
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  return RandomVariable(a.space(), std::move(v));
}

AtomPartition AtomPartition::trivial(std::size_t atoms) { return {std::vector<std::size_t>(atoms, 0), 1}; }

bool AtomPartition::refines(const AtomPartition& coarser) const {
  if (coarser.block_of.size() != block_of.size()) throw InvalidArgument("refines: atom count mismatch");
  std::vector<std::size_t> image(num_blocks, static_cast<std::size_t>(-1));
  for (std::size_t a = 0; a < block_of.size(); ++a) {
    auto& slot = image[block_of[a]];
    if (slot == static_cast<std::size_t>(-1))
      slot = coarser.block_of[a];
    else if (slot != coarser.block_of[a])
      return false;
  }
  return true;
}

std::vector<std::vector<std::size_t>> AtomPartition::blocks() const {
  std::vector<std::vector<std::size_t>> out(num_blocks);
  for (std::size_t a = 0; a < block_of.size(); ++a) out[block_of[a]].push_back(a);
  return out;
}

double expect(const RandomVariable& X) {
  const auto& w = X.space()->weights();
  CompensatedSum s;
  for (std::size_t i = 0; i < w.size(); ++i) s.add(w[i] * X[i]);
  return s.value();
}

double inner(const RandomVariable& X, const RandomVariable& Y) {
  check_same_space(X, Y);
  const auto& w = X.space()->weights();
  CompensatedSum s;
  for (std::size_t i = 0; i < w.size(); ++i) s.add(w[i] * X[i] * Y[i]);
  return s.value();
}

double l2_norm(const RandomVariable& X) { return std::sqrt(std::max(0.0, inner(X, X))); }

namespace {

struct KeyHash {
  std::size_t operator()(const std::pair<std::size_t, std::uint64_t>& k) const {
    return std::hash<std::uint64_t>()(k.second * 0x9E3779B97F4A7C15ULL ^ k.first);
  }
};

std::uint64_t value_bits(double v) {
  if (v == 0.0) v = 0.0;  // fold -0.0
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  return bits;
}

AtomPartition refine(const AtomPartition& P, const std::vector<std::uint64_t>& keys) {
  std::unordered_map<std::pair<std::size_t, std::uint64_t>, std::size_t, KeyHash> ids;
  AtomPartition out;
  out.block_of.resize(P.block_of.size());
  for (std::size_t a = 0; a < P.block_of.size(); ++a) {
    auto [it, fresh] = ids.try_emplace({P.block_of[a], keys[a]}, ids.size());
    out.block_of[a] = it->second;
  }
  out.num_blocks = ids.size();
  return out;
}

}  // namespace

AtomPartition sigma_partition(const FiniteProbSpace& space, const std::vector<RandomVariable>& generators) {
  AtomPartition P = AtomPartition::trivial(space.size());
  std::vector<std::uint64_t> keys(space.size());
  for (const auto& g : generators) {
    if (g.size() != space.size()) throw InvalidArgument("sigma_partition: generator on a different space");
    for (std::size_t a = 0; a < keys.size(); ++a) keys[a] = value_bits(g[a]);
    P = refine(P, keys);
  }
  return P;
}

AtomPartition join(const AtomPartition& a, const AtomPartition& b) {
  if (a.block_of.size() != b.block_of.size()) throw InvalidArgument("join: atom count mismatch");
  std::vector<std::uint64_t> keys(b.block_of.begin(), b.block_of.end());
  return refine(a, keys);
}

RandomVariable cond_expect(const RandomVariable& X, const AtomPartition& P) {
  if (P.block_of.size() != X.size()) throw InvalidArgument("cond_expect: partition on a different space");
  const auto& w = X.space()->weights();
  std::vector<CompensatedSum> mass(P.num_blocks);
  std::vector<CompensatedSum> acc(P.num_blocks);
  for (std::size_t a = 0; a < X.size(); ++a) {
    mass[P.block_of[a]].add(w[a]);
    acc[P.block_of[a]].add(w[a] * X[a]);
  }
  std::vector<double> avg(P.num_blocks);
  for (std::size_t b = 0; b < P.num_blocks; ++b) avg[b] = acc[b].value() / mass[b].value();
  std::vector<double> v(X.size());
  for (std::size_t a = 0; a < X.size(); ++a) v[a] = avg[P.block_of[a]];
  return RandomVariable(X.space(), std::move(v));
}

std::vector<RandomVariable> martingale_increments(const RandomVariable& X, const std::vector<AtomPartition>& chain) {
  for (std::size_t r = 1; r < chain.size(); ++r)
    if (!chain[r].refines(chain[r - 1])) throw InvalidArgument("martingale_increments: chain is not nested");
  std::vector<RandomVariable> out;
  if (chain.empty()) return out;
  RandomVariable prev = cond_expect(X, chain[0]);
  for (std::size_t r = 1; r < chain.size(); ++r) {
    RandomVariable cur = cond_expect(X, chain[r]);
    out.push_back(cur - prev);
    prev = std::move(cur);
  }
  return out;
}

}  // namespace spreadarray
