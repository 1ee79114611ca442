#include "spreadarray/decomp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "spreadarray/errors.hpp"

namespace spreadarray {

namespace {

using json = nlohmann::ordered_json;

json jnum(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

json jset(const IndexSet& s) {
  auto a = json::array();
  for (Index x : s) a.push_back(x);
  return a;
}

json jmap(const PartialIncrMap& p) {
  json dom = json::array();
  json img = json::array();
  for (const auto& [x, y] : p.pairs()) {
    dom.push_back(x);
    img.push_back(y);
  }
  return {{"label", p.to_string()}, {"domain", dom}, {"image", img}};
}

json jinterval(const Interval& I) { return json::array({I.lo, I.hi}); }

Index checked_mul(Index a, Index b) {
  if (a != 0 && b > std::numeric_limits<Index>::max() / a) throw InvalidArgument("decomposition plan: size overflows");
  return a * b;
}

Index ipow(Index b, int e) {
  Index r = 1;
  for (int i = 0; i < e; ++i) r = checked_mul(r, b);
  return r;
}

std::vector<int> full_range(int d) {
  std::vector<int> out(d);
  for (int i = 0; i < d; ++i) out[i] = i + 1;
  return out;
}

// All subsets of a coordinate list, as sorted vectors.
std::vector<std::vector<int>> subsets_of(const std::vector<int>& dom) {
  std::vector<std::vector<int>> out;
  const std::uint32_t total = 1U << dom.size();
  for (std::uint32_t mask = 0; mask < total; ++mask) {
    std::vector<int> G;
    for (std::size_t i = 0; i < dom.size(); ++i)
      if (mask >> i & 1U) G.push_back(dom[i]);
    out.push_back(std::move(G));
  }
  return out;
}

bool same_coords(const std::vector<int>& a, const std::vector<int>& b) { return a == b; }

constexpr double kSlack = 1e-12;

}  // namespace

// ---------------------------------------------------------------- moments

EntryMoments::EntryMoments(const ArrayModel& model, bool normalize, Caps caps)
    : model_(model), normalize_(normalize), caps_(caps), table_(model, caps) {}

std::size_t EntryMoments::id(const DSubset& s) {
  auto it = ids_.find(s);
  if (it != ids_.end()) return it->second;
  if (static_cast<int>(s.size()) != model_.d() || !is_strictly_increasing(s) || s.front() < 1 || s.back() > model_.n())
    throw InvalidArgument("entry " + to_string(s) + " is not a " + std::to_string(model_.d()) + "-subset of [" +
                          std::to_string(model_.n()) + "]");
  const double m2 = table_(s, s);
  double scale = 1.0;
  if (normalize_) {
    if (!(m2 > 0.0)) throw InvalidArgument("entry " + to_string(s) + " has zero second moment; cannot normalize");
    scale = 1.0 / std::sqrt(m2);
  } else if (std::abs(std::sqrt(std::max(m2, 0.0)) - 1.0) > kUnitNormTolerance) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "entry " << to_string(s) << " has L2 norm " << std::sqrt(std::max(m2, 0.0))
        << ", expected 1 (enable normalization to rescale)";
    throw InvalidArgument(msg.str());
  }
  const std::size_t i = entries_.size();
  ids_.emplace(s, i);
  entries_.push_back(s);
  scale_.push_back(scale);
  means_.push_back(std::numeric_limits<double>::quiet_NaN());
  return i;
}

double EntryMoments::mean(std::size_t i) {
  if (std::isnan(means_.at(i))) means_[i] = table_.mean(entries_[i]) * scale_[i];
  return means_[i];
}

double EntryMoments::moment(std::size_t i, std::size_t j) {
  if (i > j) std::swap(i, j);
  const std::uint64_t key = (static_cast<std::uint64_t>(i) << 32) | static_cast<std::uint64_t>(j);
  auto it = gram_.find(key);
  if (it != gram_.end()) return it->second;
  const double v = table_(entries_.at(i), entries_.at(j)) * scale_[i] * scale_[j];
  gram_.emplace(key, v);
  return v;
}

LinearForm& LinearForm::add(const LinearForm& o, double c) {
  for (const auto& [i, v] : o.coef) coef[i] += c * v;
  return *this;
}

LinearForm LinearForm::single(std::size_t id) {
  LinearForm f;
  f.coef[id] = 1.0;
  return f;
}

double LinearForm::max_abs() const {
  double m = 0.0;
  for (const auto& [i, v] : coef) m = std::max(m, std::abs(v));
  return m;
}

double form_mean(EntryMoments& mom, const LinearForm& f) {
  CompensatedSum acc;
  for (const auto& [i, c] : f.coef)
    if (c != 0.0) acc.add(c * mom.mean(i));
  return acc.value();
}

double form_inner(EntryMoments& mom, const LinearForm& f, const LinearForm& g) {
  CompensatedSum acc;
  for (const auto& [i, a] : f.coef) {
    if (a == 0.0) continue;
    for (const auto& [j, b] : g.coef)
      if (b != 0.0) acc.add(a * b * mom.moment(i, j));
  }
  return acc.value();
}

double form_norm(EntryMoments& mom, const LinearForm& f) { return std::sqrt(std::max(0.0, form_inner(mom, f, f))); }

// ---------------------------------------------------------------- orbits

OrbitFamily OrbitFamily::from_gram(std::vector<std::string> labels, std::vector<std::vector<double>> gram) {
  const std::size_t n = gram.size();
  if (n < 2) throw InvalidArgument("orbit family: needs at least 2 members");
  if (labels.size() != n) throw InvalidArgument("orbit family: label count does not match");
  for (std::size_t i = 0; i < n; ++i) {
    if (gram[i].size() != n) throw InvalidArgument("orbit family: Gram matrix is not square");
    if (std::abs(std::sqrt(std::max(gram[i][i], 0.0)) - 1.0) > kUnitNormTolerance)
      throw InvalidArgument("orbit family: member " + labels[i] + " does not have unit norm");
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(gram[i][j] - gram[j][i]) > 1e-12) throw InvalidArgument("orbit family: Gram matrix is not symmetric");
  }
  return OrbitFamily{std::move(labels), std::move(gram)};
}

OrbitFamily OrbitFamily::from_variables(const std::vector<RandomVariable>& xs) {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> gram(xs.size(), std::vector<double>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    labels.push_back(std::to_string(i));
    for (std::size_t j = 0; j <= i; ++j) gram[i][j] = gram[j][i] = inner(xs[i], xs[j]);
  }
  return from_gram(std::move(labels), std::move(gram));
}

OrbitFamily OrbitFamily::from_entries(EntryMoments& mom, const std::vector<DSubset>& entries) {
  std::vector<std::string> labels;
  std::vector<std::size_t> ids;
  for (const auto& s : entries) {
    labels.push_back(to_string(s));
    ids.push_back(mom.id(s));
  }
  std::vector<std::vector<double>> gram(ids.size(), std::vector<double>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j <= i; ++j) gram[i][j] = gram[j][i] = mom.moment(ids[i], ids[j]);
  return from_gram(std::move(labels), std::move(gram));
}

double orbit_defect(const OrbitFamily& family) {
  if (family.size() < 2) throw InvalidArgument("orbit_defect: needs at least 2 members");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < family.size(); ++i)
    for (std::size_t j = i + 1; j < family.size(); ++j) {
      lo = std::min(lo, family.gram[i][j]);
      hi = std::max(hi, family.gram[i][j]);
    }
  return hi - lo;
}

UniversalityResult universality_check(const OrbitFamily& family, const std::vector<std::size_t>& F,
                                      const std::vector<std::size_t>& G) {
  if (F.size() < 2 || G.size() < 2) throw InvalidArgument("universality_check: both index sets need at least 2 members");
  const std::size_t n = family.size();
  std::vector<double> c(n, 0.0);
  for (const auto* S : {&F, &G}) {
    std::set<std::size_t> seen;
    for (std::size_t i : *S) {
      if (i >= n) throw InvalidArgument("universality_check: index out of range");
      if (!seen.insert(i).second) throw InvalidArgument("universality_check: repeated index");
    }
  }
  for (std::size_t i : F) c[i] += 1.0 / static_cast<double>(F.size());
  for (std::size_t i : G) c[i] -= 1.0 / static_cast<double>(G.size());
  CompensatedSum q;
  for (std::size_t i = 0; i < n; ++i) {
    if (c[i] == 0.0) continue;
    for (std::size_t j = 0; j < n; ++j)
      if (c[j] != 0.0) q.add(c[i] * c[j] * family.gram[i][j]);
  }
  UniversalityResult out;
  out.lhs = std::sqrt(std::max(0.0, q.value()));
  out.eta = orbit_defect(family);
  out.bound = 2.0 * std::sqrt(1.0 / static_cast<double>(std::min(F.size(), G.size())) + out.eta);
  out.holds = out.lhs <= out.bound + 1e-9;
  return out;
}

// ---------------------------------------------------------------- two-point correlations

TwoPointGap two_point_gap(EntryMoments& mom, const DSubset& s1, const DSubset& s2, const DSubset& t1,
                          const DSubset& t2) {
  const int d = mom.model().d();
  const Index n = mom.model().n();
  if (n < 4 * d + 2)
    throw InvalidArgument("two_point_gap: needs n >= 4d+2 = " + std::to_string(4 * d + 2));
  const auto a = align_sets(s1, s2);
  const auto b = align_sets(t1, t2);
  if (!a.aligned) throw InvalidArgument("two_point_gap: first pair is not aligned");
  if (!b.aligned) throw InvalidArgument("two_point_gap: second pair is not aligned");
  if (a.root != b.root) throw InvalidArgument("two_point_gap: pairs have different roots");
  TwoPointGap out;
  out.root = a.root;
  out.gap = std::abs(mom.moment(s1, s2) - mom.moment(t1, t2));
  out.bound = 8.0 * d * d / std::sqrt(static_cast<double>(n));
  if (d == 2 && n >= 10) out.d2_bound = 6.0 / std::sqrt(static_cast<double>(n));
  out.holds = out.gap <= out.bound + kSlack && (!out.d2_bound || out.gap <= *out.d2_bound + kSlack);
  return out;
}

// ---------------------------------------------------------------- plan

Index minimal_plan_n(int d, Index kappa, Index k) {
  if (d < 1 || kappa < 1 || k < 1) throw InvalidArgument("minimal_plan_n: d, kappa, k must be positive");
  return checked_mul(checked_mul(checked_mul(2, checked_mul(kappa, kappa)), d), ipow(k + 1, d + 1));
}

double plan_gamma(Index n, int d, Index kappa) {
  return std::sqrt(1.0 / static_cast<double>(kappa) + 8.0 * d * d / std::sqrt(static_cast<double>(n)));
}

Index DecompPlan::gamma_len() const { return d * kappa * kappa; }

Interval DecompPlan::Gamma(Index i, const PartialIncrMap& p) const {
  if (i < 1 || i > k + 1) throw InvalidArgument("Gamma: block index out of range");
  auto it = map_index.find(p);
  if (it == map_index.end()) throw InvalidArgument("Gamma: " + p.to_string() + " is not a partial map into N");
  const Index lo = D[i - 1].lo + static_cast<Index>(it->second) * gamma_len();
  return {lo, lo + gamma_len() - 1};
}

Interval DecompPlan::Theta(Index i, const PartialIncrMap& p, int j) const {
  if (j < 1 || j > d) throw InvalidArgument("Theta: coordinate out of range");
  const Index lo = Gamma(i, p).lo + (j - 1) * kappa * kappa;
  return {lo, lo + kappa * kappa - 1};
}

Interval DecompPlan::H(Index i, const PartialIncrMap& p, int j, Index r) const {
  if (r < 1 || r > kappa) throw InvalidArgument("H: block index out of range");
  const Index lo = Theta(i, p, j).lo + (r - 1) * kappa;
  return {lo, lo + kappa - 1};
}

const std::vector<DSubset>& DecompPlan::O(const PartialIncrMap& p) const {
  auto it = orbit.find(p);
  if (it == orbit.end()) throw InvalidArgument("O: " + p.to_string() + " is not a partial map into N");
  return it->second;
}

std::vector<DSubset> DecompPlan::G_family(const PartialIncrMap& p) const {
  std::set<DSubset> acc;
  for (const auto& G : subsets_of(p.domain()))
    for (const auto& s : O(p.restrict_to(G))) acc.insert(s);
  return {acc.begin(), acc.end()};
}

std::optional<PartialIncrMap> DecompPlan::owner(const DSubset& s) const {
  auto it = owners.find(s);
  if (it == owners.end()) return std::nullopt;
  return it->second;
}

std::vector<DSubset> DecompPlan::O_prime(const DSubset& s, const std::vector<int>& G) const {
  const auto p = owner(s);
  if (!p) throw InvalidArgument("O_prime: " + to_string(s) + " is not an orbit member");
  const auto dom = p->domain();
  if (!std::includes(dom.begin(), dom.end(), G.begin(), G.end()))
    throw InvalidArgument("O_prime: G must lie inside dom(p)");
  const IndexSet fixed = p->restrict_to(G).image();
  const IndexSet moving = set_difference(s, fixed);
  std::vector<DSubset> out;
  for (Index r = 1; r <= kappa; ++r) {
    IndexSet t = fixed;
    for (Index v : moving) t.push_back(v + r - 1);
    std::sort(t.begin(), t.end());
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

std::vector<DSubset> build_orbit(const DecompPlan& plan, const PartialIncrMap& p) {
  const auto dom = p.domain();
  if (static_cast<int>(dom.size()) == plan.d) return {p.image()};
  std::vector<bool> in_dom(plan.d + 2, false);
  for (int x : dom) in_dom[x] = true;
  // maximal runs of missing coordinates: (first, last)
  std::vector<std::pair<int, int>> runs;
  for (int x = 1; x <= plan.d; ++x) {
    if (in_dom[x]) continue;
    if (!runs.empty() && runs.back().second == x - 1)
      runs.back().second = x;
    else
      runs.emplace_back(x, x);
  }
  std::vector<DSubset> out;
  for (Index r = 1; r <= plan.kappa; ++r) {
    IndexSet s = p.image();
    for (const auto& [first, last] : runs) {
      Index i;
      if (last + 1 <= plan.d) {
        const Index v = p(last + 1);
        i = std::lower_bound(plan.N.begin(), plan.N.end(), v) - plan.N.begin() + 1;
      } else {
        i = plan.k + 1;  // the extension sends d+1 to n
      }
      for (int j = 1; j <= last - first + 1; ++j) s.push_back(plan.H(i, p, j, r).lo + plan.orbit_offset);
    }
    std::sort(s.begin(), s.end());
    out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

DecompPlan build_plan(Index n, int d, Index kappa, Index k, Index orbit_offset) {
  if (d < 1) throw InvalidArgument("build_plan: d must be at least 1");
  if (k < 1) throw InvalidArgument("build_plan: k must be at least 1");
  if (kappa < 2) throw Infeasible("build_plan: kappa must be at least 2 (got " + std::to_string(kappa) + ")");
  if (orbit_offset < 0 || orbit_offset >= kappa) throw InvalidArgument("build_plan: orbit offset must lie in [0, kappa)");
  const Index min_n = minimal_plan_n(d, kappa, k);
  if (n < min_n)
    throw Infeasible("build_plan: n = " + std::to_string(n) + " is below the minimum 2 kappa^2 d (k+1)^(d+1) = " +
                     std::to_string(min_n));
  DecompPlan plan;
  plan.n = n;
  plan.d = d;
  plan.kappa = kappa;
  plan.k = k;
  plan.orbit_offset = orbit_offset;
  plan.gamma = plan_gamma(n, d, kappa);
  const Index dlen = checked_mul(checked_mul(d, kappa * kappa), ipow(k + 1, d));
  Index pos = 1;
  for (Index i = 1; i <= k + 1; ++i) {
    plan.D.push_back({pos, pos + dlen - 1});
    pos += dlen;
    if (i <= k) {
      plan.L.push_back({pos, pos + kappa - 1});
      plan.N.push_back(pos);
      pos += kappa;
    }
  }
  if (pos - 1 > n - 1) throw Infeasible("build_plan: packing does not fit in [n-1]");
  plan.maps = enumerate_partial_maps(d, plan.N);
  if (static_cast<Index>(plan.maps.size()) * plan.gamma_len() > dlen)
    throw InvalidArgument("build_plan: Gamma blocks do not fit");  // cannot happen: |PartIncr| <= (k+1)^d
  for (std::size_t i = 0; i < plan.maps.size(); ++i) plan.map_index.emplace(plan.maps[i], i);
  for (const auto& p : plan.maps) {
    auto O = build_orbit(plan, p);
    for (const auto& s : O)
      if (!plan.owners.emplace(s, p).second)
        throw InvalidArgument("build_plan: orbit sets overlap at " + to_string(s));
    plan.orbit.emplace(p, std::move(O));
  }
  return plan;
}

std::string DecompPlan::check_invariants() const {
  const Index dlen = d * kappa * kappa * ipow(k + 1, d);
  if (static_cast<Index>(L.size()) != k || static_cast<Index>(D.size()) != k + 1) return "wrong number of intervals";
  for (Index i = 0; i < k; ++i) {
    if (L[i].size() != kappa) return "L_" + std::to_string(i + 1) + " has the wrong size";
    if (!(D[i].hi < L[i].lo && L[i].hi < D[i + 1].lo)) return "interleaving fails at " + std::to_string(i + 1);
    if (N[i] != L[i].lo) return "N is not the set of minima of L";
  }
  for (const auto& I : D) {
    if (I.size() != dlen) return "a D interval has the wrong size";
    if (I.lo < 1 || I.hi > n - 1) return "a D interval leaves [n-1]";
  }
  for (Index i = 1; i <= k + 1; ++i) {
    Index prev_hi = D[i - 1].lo - 1;
    for (const auto& p : maps) {
      const auto G = Gamma(i, p);
      if (G.lo <= prev_hi || G.hi > D[i - 1].hi) return "Gamma blocks overlap or leave D";
      prev_hi = G.hi;
      for (int j = 1; j <= d; ++j) {
        const auto T = Theta(i, p, j);
        if (T.size() != kappa * kappa || T.lo < G.lo || T.hi > G.hi) return "Theta block misplaced";
        for (Index r = 1; r <= kappa; ++r) {
          const auto Hb = H(i, p, j, r);
          if (Hb.size() != kappa || Hb.lo < T.lo || Hb.hi > T.hi) return "H block misplaced";
        }
      }
    }
  }
  std::set<DSubset> seen;
  for (const auto& p : maps) {
    const auto& O_p = O(p);
    const bool full = static_cast<int>(p.size()) == d;
    if (static_cast<Index>(O_p.size()) != (full ? 1 : kappa)) return "O_" + p.to_string() + " has the wrong size";
    for (const auto& s : O_p) {
      if (!seen.insert(s).second) return "orbit sets are not disjoint at " + to_string(s);
      if (static_cast<int>(s.size()) != d || !is_strictly_increasing(s) || s.back() > n) return "bad orbit member";
      if (canonical_iso(s).restrict_to(p.domain()) != p) return "orbit member does not extend " + p.to_string();
    }
  }
  return {};
}

std::string DecompPlan::to_json(std::size_t max_gamma_rows) const {
  json j;
  j["n"] = n;
  j["d"] = d;
  j["kappa"] = kappa;
  j["k"] = k;
  j["orbit_offset"] = orbit_offset;
  j["minimal_n"] = minimal_plan_n(d, kappa, k);
  j["gamma"] = jnum(gamma);
  j["N"] = jset(N);
  json Lj = json::array();
  for (const auto& I : L) Lj.push_back(jinterval(I));
  json Dj = json::array();
  for (const auto& I : D) Dj.push_back(jinterval(I));
  j["L"] = Lj;
  j["D"] = Dj;
  const bool with_gamma = maps.size() * static_cast<std::size_t>(k + 1) <= max_gamma_rows;
  j["gamma_blocks_listed"] = with_gamma;
  json mj = json::array();
  for (const auto& p : maps) {
    json e = jmap(p);
    if (with_gamma) {
      json g = json::array();
      for (Index i = 1; i <= k + 1; ++i) g.push_back(jinterval(Gamma(i, p)));
      e["Gamma"] = g;
    }
    json o = json::array();
    for (const auto& s : O(p)) o.push_back(jset(s));
    e["orbit"] = o;
    mj.push_back(e);
  }
  j["maps"] = mj;
  return j.dump(2) + "\n";
}

Theorem16Parameters theorem16_parameters(int d, double epsilon, double n) {
  if (d < 1) throw InvalidArgument("theorem16_parameters: d must be at least 1");
  if (!(epsilon > 0.0)) throw InvalidArgument("theorem16_parameters: epsilon must be positive");
  Theorem16Parameters out;
  const double kap = std::ceil(std::ldexp(1.0, 4 * d + 5) / (epsilon * epsilon));
  if (kap > 4e18) throw InvalidArgument("theorem16_parameters: kappa overflows");
  out.kappa = static_cast<Index>(kap);
  out.c = std::ldexp(1.0, -16) * std::pow(epsilon, 4.0 / (d + 1));
  const double l2 = std::log10(2.0);
  out.log10_n0 = 20.0 * (d + 1) * (d + 1) * l2 - (d + 5) * std::log10(epsilon);
  out.n0 = std::pow(10.0, out.log10_n0);
  const double log10_n = n > 0.0 ? std::log10(n) : out.log10_n0;
  out.log10_k = -9.0 * l2 + (4.0 * std::log10(epsilon) - 5.0 * l2 - std::log10(static_cast<double>(d)) + log10_n) / (d + 1);
  out.k = std::floor(std::pow(10.0, out.log10_k));
  return out;
}

// ---------------------------------------------------------------- decomposition

const LinearForm& DeltaProcess::delta(const PartialIncrMap& p) const {
  auto it = Delta.find(p);
  if (it == Delta.end()) throw InvalidArgument("Delta: " + p.to_string() + " is not a partial map into N");
  return it->second;
}

const LinearForm& DeltaProcess::y(const PartialIncrMap& p) const {
  auto it = Y.find(p);
  if (it == Y.end()) throw InvalidArgument("Y: " + p.to_string() + " is not a partial map into N");
  return it->second;
}

namespace {

LinearForm identity_form(const DeltaProcess& dp, const DSubset& s) {
  const auto Is = canonical_iso(s);
  LinearForm f = LinearForm::single(dp.moments->id(s));
  for (const auto& F : subsets_of(full_range(dp.plan->d))) f.add(dp.delta(Is.restrict_to(F)), -1.0);
  return f;
}

}  // namespace

std::pair<double, double> DeltaProcess::identity_residual(const DSubset& s) const {
  const auto f = identity_form(*this, s);
  return {f.max_abs(), form_norm(*moments, f)};
}

DeltaProcess decompose(std::shared_ptr<EntryMoments> moments, const DecompPlan& plan) {
  if (!moments) throw InvalidArgument("decompose: no moments");
  const auto& model = moments->model();
  if (model.d() != plan.d || model.n() != plan.n)
    throw InvalidArgument("decompose: plan and model disagree on n or d");
  DeltaProcess out;
  out.moments = moments;
  out.plan = &plan;
  for (const auto& p : plan.maps) {
    const auto& O_p = plan.O(p);
    LinearForm y;
    const double w = 1.0 / static_cast<double>(O_p.size());
    for (const auto& s : O_p) y.coef[moments->id(s)] += w;
    out.Y.emplace(p, std::move(y));
  }
  for (const auto& p : plan.maps) {
    const auto dom = p.domain();
    LinearForm delta;
    for (const auto& G : subsets_of(dom)) {
      const double sign = ((dom.size() - G.size()) % 2 == 0) ? 1.0 : -1.0;
      delta.add(out.Y.at(p.restrict_to(G)), sign);
    }
    out.Delta.emplace(p, std::move(delta));
  }
  return out;
}

std::optional<double> pointwise_identity_residual(const DeltaProcess& dp, const DSubset& s) {
  const auto& model = dp.moments->model();
  if (model.generative()) return std::nullopt;
  const auto& arr = model.as_atomic();
  const auto& vals = model.alphabet().values;
  const auto f = identity_form(dp, s);
  double worst = 0.0;
  for (std::size_t atom = 0; atom < arr.space->size(); ++atom) {
    CompensatedSum acc;
    for (const auto& [i, c] : f.coef)
      if (c != 0.0) acc.add(c * dp.moments->scale(i) * vals[arr.symbol(dp.moments->entry(i), atom)]);
    worst = std::max(worst, std::abs(acc.value()));
  }
  return worst;
}

LatticeResult verify_lattice(const DeltaProcess& dp, const PartialIncrMap& p1, const PartialIncrMap& p2,
                             bool conditional) {
  const auto& plan = *dp.plan;
  auto& mom = *dp.moments;
  const auto al = align(p1, p2);
  if (!al.aligned) throw InvalidArgument("verify_lattice: " + p1.to_string() + " and " + p2.to_string() + " are not aligned");
  LatticeResult out;
  out.root = al.root;
  out.meet = al.meet;
  out.bound = 2.0 * plan.gamma;
  out.correlation_bound = 4.0 * plan.gamma;
  out.orbit_bound = 8.0 * plan.d * plan.d / std::sqrt(static_cast<double>(plan.n));
  out.correlation_gap = std::abs(form_inner(mom, dp.y(p1), dp.y(p2)) - form_inner(mom, dp.y(al.meet), dp.y(al.meet)));
  const bool moving = !same_coords(al.root, p1.domain());
  std::vector<DSubset> local;
  if (moving) {
    for (const auto& s : plan.O(p1)) {
      auto fam = plan.O(al.meet);
      auto Op = plan.O_prime(s, al.root);
      fam.insert(fam.end(), Op.begin(), Op.end());
      out.orbit_defect = std::max(out.orbit_defect, orbit_defect(OrbitFamily::from_entries(mom, fam)));
      local.insert(local.end(), Op.begin(), Op.end());
    }
  }
  if (conditional) {
    const auto gen = plan.G_family(p2);
    std::set<DSubset> all(gen.begin(), gen.end());
    for (const auto& s : plan.O(p1)) all.insert(s);
    for (const auto& s : plan.O(al.meet)) all.insert(s);
    all.insert(local.begin(), local.end());
    const std::vector<DSubset> entries(all.begin(), all.end());
    try {
      const auto atoms = materialize(mom.model(), entries, mom.caps());
      auto X = [&](const DSubset& s) {
        return atoms.value(atoms.find(s), mom.model().alphabet()) * mom.scale(mom.id(s));
      };
      std::vector<RandomVariable> gens;
      for (const auto& s : gen) gens.push_back(X(s));
      const auto part = sigma_partition(*atoms.space, gens);
      auto avg = [&](const std::vector<DSubset>& O_p) {
        RandomVariable acc = RandomVariable::constant(atoms.space, 0.0);
        for (const auto& s : O_p) acc += X(s);
        acc *= 1.0 / static_cast<double>(O_p.size());
        return acc;
      };
      out.defect = l2_norm(cond_expect(avg(plan.O(p1)), part) - avg(plan.O(al.meet)));
      if (moving)
        for (const auto& s : plan.O(p1)) {
          const auto base = cond_expect(X(s), part);
          for (const auto& t : plan.O_prime(s, al.root))
            out.transfer_defect = std::max(out.transfer_defect, l2_norm(cond_expect(X(t), part) - base));
        }
      out.conditional_computed = true;
    } catch (const CapExceeded& e) {
      out.skipped_reason = std::string("joint atoms exceed the cap: ") + e.what();
    }
  } else {
    out.skipped_reason = "conditional checks not requested";
  }
  out.holds = out.correlation_gap <= out.correlation_bound + kSlack && out.orbit_defect <= out.orbit_bound + kSlack &&
              (!out.conditional_computed || out.defect <= out.bound + kSlack);
  return out;
}

DecompositionReport analyze_decomposition(const DeltaProcess& dp) {
  const auto& plan = *dp.plan;
  auto& mom = *dp.moments;
  DecompositionReport rep;
  rep.gamma = plan.gamma;
  rep.mean_bound = std::ldexp(plan.gamma, plan.d);
  rep.cross_bound = std::ldexp(plan.gamma, 2 * plan.d + 2);
  for (const auto& s : choose(plan.N, plan.d)) {
    const auto [c, l2] = dp.identity_residual(s);
    rep.identity_residual = std::max(rep.identity_residual, c);
    rep.identity_l2_residual = std::max(rep.identity_l2_residual, l2);
    if (auto pw = pointwise_identity_residual(dp, s)) rep.identity_pointwise = std::max(rep.identity_pointwise.value_or(0.0), *pw);
  }
  if (rep.identity_residual > 1e-10 || rep.identity_l2_residual > 1e-10 || rep.identity_pointwise.value_or(0.0) > 1e-10)
    ++rep.violations;
  for (const auto& p : plan.maps) {
    const double m = form_mean(mom, dp.delta(p));
    rep.means.push_back({p, m});
    if (p.empty()) continue;
    rep.worst_mean = std::max(rep.worst_mean, std::abs(m));
    if (std::abs(m) > rep.mean_bound + kSlack) ++rep.violations;
  }
  const double orbit_bound = 8.0 * plan.d * plan.d / std::sqrt(static_cast<double>(plan.n));
  for (std::size_t a = 0; a < plan.maps.size(); ++a) {
    const auto& p1 = plan.maps[a];
    if (plan.O(p1).size() >= 2) {
      const double od = orbit_defect(OrbitFamily::from_entries(mom, plan.O(p1)));
      rep.worst_orbit_defect = std::max(rep.worst_orbit_defect, od);
      if (od > orbit_bound + kSlack) ++rep.violations;
    }
    for (std::size_t b = a + 1; b < plan.maps.size(); ++b) {
      const auto& p2 = plan.maps[b];
      const auto al = align(p1, p2);
      if (!al.aligned) continue;
      ++rep.aligned_pairs;
      const double cross = std::abs(form_inner(mom, dp.delta(p1), dp.delta(p2)));
      if (cross > rep.worst_cross || rep.aligned_pairs == 1) {
        rep.worst_cross = cross;
        rep.worst_p1 = p1;
        rep.worst_p2 = p2;
      }
      if (cross > rep.cross_bound + kSlack) ++rep.violations;
      const double cg =
          std::abs(form_inner(mom, dp.y(p1), dp.y(p2)) - form_inner(mom, dp.y(al.meet), dp.y(al.meet)));
      rep.worst_correlation_gap = std::max(rep.worst_correlation_gap, cg);
      if (cg > 4.0 * plan.gamma + kSlack) ++rep.violations;
    }
  }
  rep.moment_evaluations = mom.evaluations();
  return rep;
}

std::string DecompositionReport::to_json(const DecompPlan& plan) const {
  json j;
  j["gamma"] = jnum(gamma);
  j["identity"] = {{"coefficient_residual", jnum(identity_residual)},
                   {"l2_residual", jnum(identity_l2_residual)},
                   {"pointwise_residual", identity_pointwise ? jnum(*identity_pointwise) : json(nullptr)},
                   {"tolerance", 1e-10}};
  json mj = json::array();
  for (const auto& r : means) mj.push_back({{"p", jmap(r.p)}, {"mean", jnum(r.mean)}});
  j["means"] = {{"bound", jnum(mean_bound)}, {"worst_nonempty", jnum(worst_mean)}, {"rows", mj}};
  j["aligned"] = {{"pairs", aligned_pairs},
                  {"worst_cross", jnum(worst_cross)},
                  {"worst_p1", jmap(worst_p1)},
                  {"worst_p2", jmap(worst_p2)},
                  {"cross_bound", jnum(cross_bound)},
                  {"worst_correlation_gap", jnum(worst_correlation_gap)},
                  {"correlation_bound", jnum(4.0 * gamma)}};
  j["orbits"] = {{"worst_defect", jnum(worst_orbit_defect)},
                 {"bound", jnum(8.0 * plan.d * plan.d / std::sqrt(static_cast<double>(plan.n)))}};
  j["violations"] = violations;
  j["moment_evaluations"] = moment_evaluations;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- uniqueness

Index uniqueness_ell(int d, double epsilon) {
  if (!(epsilon > 0.0)) throw InvalidArgument("uniqueness: epsilon must be positive");
  return static_cast<Index>(std::ceil(1.0 / epsilon + std::ldexp(1.0, 2 * d)));
}

std::vector<DSubset> uniqueness_witnesses(const PartialIncrMap& p, const IndexSet& N, int d, Index ell) {
  const auto dom = p.domain();
  if (static_cast<int>(dom.size()) == d) return {p.image()};
  const Index k = static_cast<Index>(N.size());
  auto pos = [&](int x) {
    const Index v = p(x);
    auto it = std::lower_bound(N.begin(), N.end(), v);
    if (it == N.end() || *it != v) throw InvalidArgument("uniqueness_witnesses: " + p.to_string() + " leaves N");
    return static_cast<Index>(it - N.begin()) + 1;
  };
  std::vector<DSubset> out(static_cast<std::size_t>(ell), p.image());
  int x = 1;
  while (x <= d) {
    if (p.defined_at(x)) {
      ++x;
      continue;
    }
    int last = x;
    while (last + 1 <= d && !p.defined_at(last + 1)) ++last;
    const Index run = last - x + 1;
    const Index lo = x > 1 ? pos(x - 1) : 0;
    const Index hi = last < d ? pos(last + 1) : k + 1;
    if (ell * run > hi - lo - 1)
      throw Infeasible("uniqueness_witnesses: not enough room in N around " + p.to_string());
    for (Index j = 0; j < ell; ++j)
      for (Index t = 1; t <= run; ++t) out[j].push_back(N[lo + j * run + t - 1]);
    x = last + 1;
  }
  for (auto& s : out) std::sort(s.begin(), s.end());
  return out;
}

UniquenessReport uniqueness_check(const DeltaProcess& delta, const DeltaProcess& Z, double epsilon) {
  if (delta.moments != Z.moments) throw InvalidArgument("uniqueness_check: processes must share one moments object");
  const auto& plan = *delta.plan;
  if (Z.plan->N != plan.N || Z.plan->d != plan.d) throw InvalidArgument("uniqueness_check: processes live on different N");
  auto& mom = *delta.moments;
  const int d = plan.d;
  UniquenessReport rep;
  rep.epsilon = epsilon;
  rep.ell = uniqueness_ell(d, epsilon);
  const Index k = static_cast<Index>(plan.N.size());
  const Index stride = rep.ell * (d - 1) + 1;
  rep.k0 = k >= rep.ell * (d - 1) ? (k - rep.ell * (d - 1)) / stride : 0;
  // L nonempty, and room for ell witnesses of the empty map
  const Index need = std::max(rep.ell * (d - 1) + stride, rep.ell * d);
  if (rep.k0 < 1 || k < need)
    throw Infeasible("uniqueness_check: needs |N| >= " + std::to_string(need) + " at this epsilon, got " +
                     std::to_string(k));
  for (Index j = 1; j <= rep.k0; ++j) rep.L.push_back(plan.N[stride * j - 1]);
  rep.theorem_bound = std::ldexp(std::sqrt(2.0 * epsilon), static_cast<int>((d + 2) * (d + 1) / 2));
  rep.norm_sq_bound = 1.0 + std::ldexp(epsilon, 2 * d);
  rep.average_bound = std::sqrt(2.0 * epsilon);
  const auto subsets = subsets_of(full_range(d));
  const DeltaProcess* procs[2] = {&delta, &Z};
  double worst_identity_delta = 0.0;
  for (const auto& p : enumerate_partial_maps(d, rep.L)) {
    UniquenessRow row;
    row.p = p;
    const auto dom = p.domain();
    const int u = static_cast<int>(dom.size());
    row.bound = std::ldexp(std::sqrt(2.0 * epsilon), u * (u + 1) / 2 + d + 1);
    LinearForm diff = delta.delta(p);
    diff.add(Z.delta(p), -1.0);
    row.diff = form_norm(mom, diff);
    row.witnesses = uniqueness_witnesses(p, plan.N, d, rep.ell);
    const auto& W = row.witnesses;
    for (std::size_t a = 0; a < W.size(); ++a)
      for (std::size_t b = a + 1; b < W.size(); ++b) {
        const auto al = align_sets(W[a], W[b]);
        if (!al.aligned || al.meet != p) throw InvalidArgument("uniqueness_check: witness pair is not aligned with meet p");
      }
    for (int which = 0; which < 2; ++which) {
      const auto& dp = *procs[which];
      double& cross = which == 0 ? rep.worst_cross_delta : rep.worst_cross_z;
      double& ident = which == 0 ? worst_identity_delta : rep.worst_identity_z;
      for (const auto& s : W) {
        const auto [c, l2] = dp.identity_residual(s);
        ident = std::max({ident, c, l2});
        const auto Is = canonical_iso(s);
        for (std::size_t f = 0; f < subsets.size(); ++f) {
          const auto& Df = dp.delta(Is.restrict_to(subsets[f]));
          const double nsq = form_inner(mom, Df, Df);
          rep.worst_norm_sq = std::max(rep.worst_norm_sq, nsq);
          if (nsq > rep.norm_sq_bound + kSlack) ++rep.violations;
          for (std::size_t g = f + 1; g < subsets.size(); ++g)
            cross = std::max(cross, std::abs(form_inner(mom, Df, dp.delta(Is.restrict_to(subsets[g])))));
        }
      }
      for (const auto& F : subsets) {
        LinearForm avg;
        for (const auto& s : W) avg.add(dp.delta(canonical_iso(s).restrict_to(F)), 1.0 / static_cast<double>(W.size()));
        if (std::includes(dom.begin(), dom.end(), F.begin(), F.end())) {
          avg.add(dp.delta(p.restrict_to(F)), -1.0);
          row.witness_average_residual = std::max(row.witness_average_residual, avg.max_abs());
        } else {
          const double nrm = form_norm(mom, avg);
          row.off_domain_average = std::max(row.off_domain_average, nrm);
          if (nrm > rep.average_bound + kSlack) ++rep.violations;
          for (std::size_t a = 0; a < W.size(); ++a)
            for (std::size_t b = a + 1; b < W.size(); ++b)
              cross = std::max(cross, std::abs(form_inner(mom, dp.delta(canonical_iso(W[a]).restrict_to(F)),
                                                         dp.delta(canonical_iso(W[b]).restrict_to(F)))));
        }
      }
    }
    if (row.diff > row.bound + kSlack || row.diff > rep.theorem_bound + kSlack) ++rep.violations;
    if (row.witness_average_residual > 1e-10) ++rep.violations;
    rep.worst_diff = std::max(rep.worst_diff, row.diff);
    rep.rows.push_back(std::move(row));
  }
  if (worst_identity_delta > 1e-10) throw InvalidArgument("uniqueness_check: Delta fails the decomposition identity");
  if (rep.worst_identity_z > 1e-10) throw InvalidArgument("uniqueness_check: Z fails the decomposition identity");
  if (rep.worst_cross_delta > epsilon)
    throw InvalidArgument("uniqueness_check: Delta fails the aligned cross-moment bound at this epsilon (" +
                          std::to_string(rep.worst_cross_delta) + ")");
  if (rep.worst_cross_z > epsilon)
    throw InvalidArgument("uniqueness_check: Z fails the aligned cross-moment bound at this epsilon (" +
                          std::to_string(rep.worst_cross_z) + ")");
  return rep;
}

std::string UniquenessReport::to_json() const {
  json j;
  j["epsilon"] = jnum(epsilon);
  j["ell"] = ell;
  j["k0"] = k0;
  j["L"] = jset(L);
  j["theorem_bound"] = jnum(theorem_bound);
  j["worst_diff"] = jnum(worst_diff);
  j["worst_cross_delta"] = jnum(worst_cross_delta);
  j["worst_cross_z"] = jnum(worst_cross_z);
  j["worst_identity_z"] = jnum(worst_identity_z);
  j["worst_norm_sq"] = jnum(worst_norm_sq);
  j["norm_sq_bound"] = jnum(norm_sq_bound);
  j["average_bound"] = jnum(average_bound);
  json rows_j = json::array();
  for (const auto& r : rows) {
    json w = json::array();
    for (const auto& s : r.witnesses) w.push_back(jset(s));
    rows_j.push_back({{"p", jmap(r.p)},
                      {"diff", jnum(r.diff)},
                      {"bound", jnum(r.bound)},
                      {"witness_average_residual", jnum(r.witness_average_residual)},
                      {"off_domain_average", jnum(r.off_domain_average)},
                      {"witnesses", w}});
  }
  j["rows"] = rows_j;
  j["violations"] = violations;
  return j.dump(2) + "\n";
}

std::string to_json_string(const PartialIncrMap& p) { return jmap(p).dump(); }

}  // namespace spreadarray
