#include "spreadarray/extraction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>

#include "json.hpp"
#include "spreadarray/errors.hpp"
#include "spreadarray/model_io.hpp"

namespace spreadarray {

namespace {

using Config = std::vector<int>;

std::vector<DSubset> sorted_unique(std::vector<DSubset> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

void append(std::vector<DSubset>& out, const std::vector<DSubset>& more) {
  out.insert(out.end(), more.begin(), more.end());
}

std::uint64_t checked_pow(std::uint64_t base, std::uint64_t e, std::uint64_t cap, const std::string& what) {
  std::uint64_t r = 1;
  for (std::uint64_t i = 0; i < e; ++i) {
    if (r > cap / std::max<std::uint64_t>(base, 1)) throw CapExceeded(what + " exceeds the cap of " + std::to_string(cap));
    r *= base;
  }
  return r;
}

// Atoms of the model restricted to a fixed list of entries, with atoms of equal
// configuration merged.
class AtomView {
 public:
  AtomView(const ArrayModel& model, std::vector<DSubset> entries, const Caps& caps)
      : entries_(sorted_unique(std::move(entries))) {
    for (std::size_t e = 0; e < entries_.size(); ++e) index_.emplace(entries_[e], e);
    const LocalAtoms local = materialize(model, entries_, caps);
    std::map<Config, std::size_t> seen;
    std::vector<double> weights;
    symbols_.assign(entries_.size(), {});
    Config row(entries_.size());
    for (std::size_t atom = 0; atom < local.space->size(); ++atom) {
      for (std::size_t e = 0; e < entries_.size(); ++e) row[e] = local.symbols[e][atom];
      auto [it, fresh] = seen.emplace(row, weights.size());
      if (fresh) {
        weights.push_back(local.space->weight(atom));
        for (std::size_t e = 0; e < entries_.size(); ++e) symbols_[e].push_back(row[e]);
      } else {
        weights[it->second] += local.space->weight(atom);
      }
    }
    space_ = std::make_shared<const FiniteProbSpace>(std::move(weights));
  }

  std::size_t atoms() const { return space_->size(); }
  const SpacePtr& space() const { return space_; }
  double weight(std::size_t atom) const { return space_->weight(atom); }

  std::size_t at(const DSubset& s) const {
    auto it = index_.find(s);
    if (it == index_.end()) throw std::logic_error("AtomView: entry " + to_string(s) + " missing");
    return it->second;
  }
  std::vector<std::size_t> at(const std::vector<DSubset>& fam) const {
    std::vector<std::size_t> out;
    out.reserve(fam.size());
    for (const auto& s : fam) out.push_back(at(s));
    return out;
  }
  int symbol(std::size_t e, std::size_t atom) const { return symbols_[e][atom]; }

  Config config(const std::vector<std::size_t>& idx, std::size_t atom) const {
    Config c(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) c[i] = symbols_[idx[i]][atom];
    return c;
  }

  RandomVariable indicator(const DSubset& s, int a) const {
    const auto& col = symbols_[at(s)];
    std::vector<double> v(atoms());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = col[i] == a ? 1.0 : 0.0;
    return RandomVariable(space_, std::move(v));
  }

  AtomPartition sigma(const std::vector<DSubset>& fam) const {
    const auto idx = at(fam);
    AtomPartition p;
    p.block_of.resize(atoms());
    std::map<Config, std::size_t> blocks;
    for (std::size_t atom = 0; atom < atoms(); ++atom) {
      auto [it, fresh] = blocks.emplace(config(idx, atom), blocks.size());
      p.block_of[atom] = it->second;
    }
    p.num_blocks = blocks.size();
    return p;
  }

  RandomVariable cond_indicator(const DSubset& s, int a, const AtomPartition& p) const {
    return cond_expect(indicator(s, a), p);
  }

 private:
  std::vector<DSubset> entries_;
  std::map<DSubset, std::size_t> index_;
  std::vector<std::vector<int>> symbols_;
  SpacePtr space_;
};

double expect_product(const SpacePtr& space, const std::vector<const RandomVariable*>& fs) {
  CompensatedSum acc;
  for (std::size_t atom = 0; atom < space->size(); ++atom) {
    double v = space->weight(atom);
    for (const auto* f : fs) {
      v *= (*f)[atom];
      if (v == 0.0) break;
    }
    acc.add(v);
  }
  return acc.value();
}

double sq(double x) { return x * x; }

// Rows as one digit per member of (L choose d): -1 absent, otherwise the symbol.
struct RowPlan {
  std::vector<Config> rows;
  bool sampled = false;
};

RowPlan plan_rows(std::size_t K, int m, std::uint64_t max_evaluations, std::uint64_t seed) {
  RowPlan plan;
  const std::uint64_t radix = static_cast<std::uint64_t>(m) + 1;
  std::uint64_t total = 1;
  bool over = false;
  for (std::size_t i = 0; i < K && !over; ++i) {
    if (total > max_evaluations) over = true;
    else total *= radix;
  }
  if (!over && total - 1 <= max_evaluations) {
    for (std::uint64_t c = 1; c < total; ++c) {
      Config row(K);
      std::uint64_t r = c;
      for (std::size_t i = K; i-- > 0;) {
        row[i] = static_cast<int>(r % radix) - 1;
        r /= radix;
      }
      plan.rows.push_back(std::move(row));
    }
    return plan;
  }
  plan.sampled = true;
  SeededRng rng(derive_seed(seed, 99));
  while (plan.rows.size() < max_evaluations) {
    Config row(K);
    bool any = false;
    for (auto& x : row) {
      x = static_cast<int>(rng.next() % radix) - 1;
      any = any || x >= 0;
    }
    if (any) plan.rows.push_back(std::move(row));
  }
  return plan;
}

// Probabilities of partial assignments of a fixed entry list, from the full joint law when small.
class LawTable {
 public:
  LawTable(const ArrayModel& model, std::vector<DSubset> entries, const Caps& caps)
      : model_(model), entries_(std::move(entries)), caps_(caps) {
    const double configs = std::pow(static_cast<double>(model.m()), static_cast<double>(entries_.size()));
    if (configs <= static_cast<double>(1u << 20)) pmf_ = joint_law(model, entries_, caps);
  }

  double operator()(const Config& row) const {
    const int m = model_.m();
    if (!pmf_.empty()) {
      CompensatedSum acc;
      for (std::size_t c = 0; c < pmf_.size(); ++c) {
        std::size_t r = c;
        bool ok = true;
        for (std::size_t i = entries_.size(); i-- > 0 && ok;) {
          if (row[i] >= 0 && static_cast<int>(r % m) != row[i]) ok = false;
          r /= m;
        }
        if (ok) acc.add(pmf_[c]);
      }
      return acc.value();
    }
    std::vector<DSubset> F;
    std::vector<int> a;
    for (std::size_t i = 0; i < row.size(); ++i)
      if (row[i] >= 0) {
        F.push_back(entries_[i]);
        a.push_back(row[i]);
      }
    return event_probability(model_, F, a, caps_);
  }

 private:
  const ArrayModel& model_;
  std::vector<DSubset> entries_;
  Caps caps_;
  std::vector<double> pmf_;
};

// d-subsets of the blocks ending at the points of x together with the tail.
std::vector<DSubset> boundary_family(const IndexSet& x, int d, Index ell, Index n) {
  IndexSet u = interval(n - ell + 1, n);
  for (Index j : x) u = set_union(u, interval(j - ell + 1, j));
  return choose(u, d);
}

IndexSet union_of(const std::vector<DSubset>& fam) {
  std::set<Index> acc;
  for (const auto& s : fam) acc.insert(s.begin(), s.end());
  return IndexSet(acc.begin(), acc.end());
}

std::vector<DSubset> transport_family(const IndexTransport& tr, const std::vector<DSubset>& fam) {
  std::vector<DSubset> out;
  out.reserve(fam.size());
  for (const auto& u : fam) out.push_back(tr(u));
  return out;
}

std::vector<DSubset> relabel(const IndexTransport& tr, const std::vector<DSubset>& fam) {
  return transport_family(tr, fam);
}

bool family_subset(const std::vector<DSubset>& a, const std::vector<DSubset>& b) {
  // both sorted
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

void check_level_args(int d, int k, double theta, Index ell0) {
  if (k < 2 || k < d) throw InvalidArgument("k must be at least max(2, d)");
  if (!(theta > 0.0)) throw InvalidArgument("theta must be positive");
  if (ell0 < 1) throw InvalidArgument("ell0 must be positive");
}

std::vector<Index> candidate_levels(int k, Index ell0) {
  std::vector<Index> out;
  for (Index l = 1; l <= ell0; l *= k) out.push_back(l);
  return out;
}

nlohmann::ordered_json jnum(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

nlohmann::ordered_json jset(const IndexSet& s) {
  auto a = nlohmann::ordered_json::array();
  for (Index x : s) a.push_back(x);
  return a;
}

}  // namespace

// ---------------------------------------------------------------- levels

LevelSelection select_level(const ArrayModel& model, const DSubset& t, int k, double theta, Index ell0,
                            const Caps& caps) {
  const int d = model.d();
  check_level_args(d, k, theta, ell0);
  if (static_cast<int>(t.size()) != d) throw InvalidArgument("select_level: t must be a d-subset");
  const Index n = model.n();
  if (!is_sparse(t, static_cast<Index>(k) * ell0, n))
    throw InvalidArgument("select_level: t is not (k*ell0)-sparse");

  LevelSelection out;
  out.threshold = std::sqrt(theta);
  out.levels = candidate_levels(k, ell0);
  const Index top = out.levels.back() * k;

  std::vector<DSubset> entries{t};
  append(entries, projection_family(t, top, n));
  AtomView view(model, entries, caps);

  const int m = model.m();
  std::vector<AtomPartition> parts;
  for (Index l : out.levels) parts.push_back(view.sigma(projection_family(t, l, n)));
  parts.push_back(view.sigma(projection_family(t, top, n)));

  out.increment_energy.assign(m, 0.0);
  out.indicator_energy.assign(m, 0.0);
  for (int a = 0; a < m; ++a) out.indicator_energy[a] = sq(l2_norm(view.indicator(t, a)));

  double best = std::numeric_limits<double>::infinity();
  std::size_t best_r = 0;
  for (std::size_t r = 0; r < out.levels.size(); ++r) {
    std::vector<double> inc(m);
    double worst = 0.0;
    for (int a = 0; a < m; ++a) {
      const auto ind = view.indicator(t, a);
      inc[a] = l2_norm(cond_expect(ind, parts[r + 1]) - cond_expect(ind, parts[r]));
      out.increment_energy[a] += sq(inc[a]);
      worst = std::max(worst, inc[a]);
    }
    if (worst > out.threshold) ++out.exceeding_levels;
    if (!out.found && worst <= out.threshold) {
      out.found = true;
      out.ell = out.levels[r];
    }
    if (worst < best) {
      best = worst;
      best_r = r;
    }
    out.increments.push_back(std::move(inc));
  }
  if (!out.found) out.ell = out.levels[best_r];
  return out;
}

double shift_invariance_defect(const ArrayModel& model, const DSubset& s, const std::vector<DSubset>& F_family,
                               const DSubset& t, const std::vector<DSubset>& G_family, int a, const Caps& caps) {
  if (a < 0 || a >= model.m()) throw InvalidArgument("shift_invariance_defect: symbol outside the alphabet");
  if (s.size() != t.size() || F_family.size() != G_family.size())
    throw InvalidArgument("transport size mismatch");
  const IndexSet Ms = set_union(s, union_of(F_family));
  const IndexSet Mt = set_union(t, union_of(G_family));
  if (Ms.size() != Mt.size()) throw InvalidArgument("transport size mismatch");
  const auto tr = index_transport(Ms, Mt);
  if (tr(s) != t || sorted_unique(transport_family(tr, F_family)) != sorted_unique(G_family))
    throw InvalidArgument("shift_invariance_defect: the second family is not the order transport of the first");

  std::vector<DSubset> entries{s, t};
  append(entries, F_family);
  append(entries, G_family);
  AtomView view(model, entries, caps);
  const double lhs = sq(l2_norm(view.cond_indicator(s, a, view.sigma(F_family))));
  const double rhs = sq(l2_norm(view.cond_indicator(t, a, view.sigma(G_family))));
  return std::abs(lhs - rhs);
}

TransportResult transport_projection(const ArrayModel& model, const DSubset& s, const DSubset& t, Index ell,
                                     const Caps& caps) {
  const Index n = model.n();
  const int m = model.m();
  const auto Gs = projection_family(s, ell, n);
  const auto Gt = projection_family(t, ell, n);
  const IndexSet Ms = set_union(s, union_of(Gs));
  const IndexSet Mt = set_union(t, union_of(Gt));
  if (Ms.size() != Mt.size()) throw InvalidArgument("transport size mismatch");
  const auto moved = transport_family(index_transport(Mt, Ms), Gt);

  std::vector<DSubset> entries{s, t};
  append(entries, Gs);
  append(entries, Gt);
  append(entries, moved);
  AtomView view(model, entries, caps);

  // P(X_t = a | configuration of t's family)
  const auto gt_idx = view.at(Gt);
  const std::size_t te = view.at(t);
  std::map<Config, std::vector<double>> joint;
  std::vector<double> marginal(m, 0.0);
  for (std::size_t atom = 0; atom < view.atoms(); ++atom) {
    auto& row = joint[view.config(gt_idx, atom)];
    row.resize(m + 1, 0.0);
    row[m] += view.weight(atom);
    row[view.symbol(te, atom)] += view.weight(atom);
    marginal[view.symbol(te, atom)] += view.weight(atom);
  }

  const auto mv_idx = view.at(moved);
  const auto ps = view.sigma(Gs);
  TransportResult out;
  out.defect.assign(m, 0.0);
  for (int a = 0; a < m; ++a) {
    std::vector<double> f(view.atoms());
    for (std::size_t atom = 0; atom < view.atoms(); ++atom) {
      auto it = joint.find(view.config(mv_idx, atom));
      f[atom] = it == joint.end() ? marginal[a] : it->second[a] / it->second[m];
    }
    const RandomVariable fa(view.space(), std::move(f));
    out.defect[a] = l2_norm(fa - view.cond_indicator(s, a, ps));
    out.max_defect = std::max(out.max_defect, out.defect[a]);
  }
  return out;
}

double transport_bound(int d, int m, Index ell, double eta) {
  if (eta <= 0.0) return 0.0;
  const double e = std::pow(static_cast<double>(ell) * (d + 1), d) * std::log(static_cast<double>(m)) +
                   (2.0 / 3.0) * std::log(eta);
  return 2.0 * std::exp(e / 2.0);
}

// ---------------------------------------------------------------- projection

ProjectionReport project_approximation(const ArrayModel& model, const IndexSet& L, int k, double theta, Index ell0,
                                       const ProjectionOptions& opts, const Caps& caps) {
  const int d = model.d();
  const int m = model.m();
  const Index n = model.n();
  check_level_args(d, k, theta, ell0);
  if (static_cast<int>(L.size()) != k || !is_strictly_increasing(L))
    throw InvalidArgument("project_approximation: L must be an increasing set of size k");
  if (!is_sparse(L, static_cast<Index>(k) * ell0, n))
    throw InvalidArgument("project_approximation: sparsity violated, L is not (k*ell0)-sparse");

  const auto S = choose(L, d, caps.max_subsets);
  ProjectionReport rep;
  rep.level = select_level(model, S.front(), k, theta, ell0, caps);
  const Index ell = rep.ell = rep.level.ell;

  std::vector<std::vector<DSubset>> Gs, Gks, A, Sh;
  std::vector<DSubset> entries = S;
  for (const auto& s : S) {
    Gs.push_back(projection_family(s, ell, n));
    Gks.push_back(projection_family(s, ell * k, n));
    A.push_back(absorbing_family(s, L, ell, n));
    Sh.push_back(shifted_absorbing_family(s, L, ell, n));
    append(entries, Gs.back());
    append(entries, A.back());
    if (opts.check_chain) append(entries, Gks.back());
  }
  AtomView view(model, entries, caps);

  for (std::size_t i = 0; i < S.size(); ++i) {
    for (std::size_t j = 0; j < S.size(); ++j) {
      if (!family_subset(Gs[i], A[j])) rep.inclusions_hold = false;
      if (j > i && !std::binary_search(A[i].begin(), A[i].end(), S[j])) rep.inclusions_hold = false;
    }
  }

  const std::size_t K = S.size();
  std::vector<AtomPartition> pG, pA;
  for (std::size_t i = 0; i < K; ++i) {
    pG.push_back(view.sigma(Gs[i]));
    pA.push_back(view.sigma(A[i]));
    if (opts.check_chain) {
      if (!family_subset(Gs[i], Sh[i]) || !family_subset(Sh[i], Gks[i])) rep.chain_holds = false;
      const auto pS = view.sigma(Sh[i]);
      const auto pK = view.sigma(Gks[i]);
      if (!pS.refines(pG[i]) || !pK.refines(pS)) rep.chain_holds = false;
    }
  }

  std::vector<std::vector<RandomVariable>> ind(K), cexp(K), cabs(K);
  for (std::size_t i = 0; i < K; ++i)
    for (int a = 0; a < m; ++a) {
      ind[i].push_back(view.indicator(S[i], a));
      cexp[i].push_back(cond_expect(ind[i].back(), pG[i]));
      cabs[i].push_back(cond_expect(ind[i].back(), pA[i]));
      rep.absorption = std::max(rep.absorption, l2_norm(cabs[i].back() - cexp[i].back()));
    }

  const auto plan = plan_rows(K, m, opts.max_evaluations, opts.seed);
  rep.sampled = plan.sampled;
  for (const auto& row : plan.rows) {
    std::vector<std::size_t> members;
    ProjectionRow pr;
    for (std::size_t i = 0; i < K; ++i)
      if (row[i] >= 0) {
        members.push_back(i);
        pr.F.push_back(S[i]);
        pr.assignment.push_back(row[i]);
      }
    std::vector<const RandomVariable*> ones, projs;
    for (std::size_t j = 0; j < members.size(); ++j) {
      ones.push_back(&ind[members[j]][pr.assignment[j]]);
      projs.push_back(&cexp[members[j]][pr.assignment[j]]);
    }
    pr.exact = expect_product(view.space(), ones);
    pr.estimate = expect_product(view.space(), projs);
    pr.diff = std::abs(pr.exact - pr.estimate);
    rep.worst = std::max(rep.worst, pr.diff);

    // conditioning on the absorbing family at step r leaves the mixed product unchanged
    for (std::size_t r = 0; r < members.size(); ++r) {
      std::vector<const RandomVariable*> lhs, rhs;
      for (std::size_t j = 0; j < members.size(); ++j) {
        const std::size_t i = members[j];
        const int a = pr.assignment[j];
        lhs.push_back(j < r ? &cexp[i][a] : &ind[i][a]);
        rhs.push_back(j < r ? &cexp[i][a] : (j == r ? &cabs[i][a] : &ind[i][a]));
      }
      rep.telescoping_residual =
          std::max(rep.telescoping_residual,
                   std::abs(expect_product(view.space(), lhs) - expect_product(view.space(), rhs)));
    }
    rep.rows.push_back(std::move(pr));
  }

  const double slack = opts.eta > 0.0
                           ? 15.0 * opts.eta *
                                 std::pow(static_cast<double>(m),
                                          std::pow(static_cast<double>(k * ell0) * (d + 1), d))
                           : 0.0;
  rep.paper_bound = std::pow(static_cast<double>(k), d) * std::sqrt(theta + slack);
  return rep;
}

// ---------------------------------------------------------------- constants

namespace {

struct ConstLogs {
  double log10_ell0;
  double log10_eta;
  double log10_n0;
  double log10_v;
};

ConstLogs constant_logs(int d, double m, int k, double eps) {
  const double lk = std::log10(static_cast<double>(k));
  const double lm = std::log10(m);
  const double le = std::log10(eps);
  const double theta = eps * eps / (128.0 * std::pow(static_cast<double>(k), 2 * d));
  const double pig = m * std::floor(1.0 / theta);
  ConstLogs c{};
  c.log10_ell0 = pig * lk;
  const double ell0 = std::pow(10.0, c.log10_ell0);
  const double eta_here = 3 * le - std::log10(4096.0) - 3.0 * d * lk -
                          (d == 1 ? 3.0 * ell0 : std::pow(k * (d + 1) * ell0, d)) * lm;
  if (d == 1) {
    c.log10_eta = eta_here;
    c.log10_n0 = std::log10(static_cast<double>((k + 1) * k)) + c.log10_ell0;
    c.log10_v = 22 * std::log10(2.0) + (ell0 + 1) * lm + 8 * lk - 8 * le;
    return c;
  }
  const double log10_mbar = std::pow(ell0 * d, d) * lm;
  const double mbar = std::pow(10.0, log10_mbar);
  const double epsbar = eps / 8.0 * std::pow(10.0, -std::pow(static_cast<double>(k), d - 1) * log10_mbar);
  const ConstLogs inner = constant_logs(d - 1, mbar, k, epsbar);
  c.log10_eta = std::min(eta_here, inner.log10_eta);
  const double inner_n0 = inner.log10_n0 < 15 ? std::log10(std::pow(10.0, inner.log10_n0) + 1) : inner.log10_n0;
  c.log10_n0 = lk + c.log10_ell0 + inner_n0;
  const double p = std::pow(2.0, d + 2);
  c.log10_v = 24 * std::log10(4.0) + lm + d * p * lk - p * le + inner.log10_v;
  return c;
}

}  // namespace

ExtractionConstants extraction_constants(int d, int m, int k, double epsilon) {
  if (d < 1 || m < 2 || k < d) throw InvalidArgument("extraction_constants: need d >= 1, m >= 2, k >= d");
  if (!(epsilon > 0.0)) throw InvalidArgument("extraction_constants: epsilon must be positive");
  ExtractionConstants c;
  c.theta = epsilon * epsilon / (128.0 * std::pow(static_cast<double>(k), 2 * d));
  c.pigeonhole_levels = m * std::floor(1.0 / c.theta);
  const auto logs = constant_logs(d, static_cast<double>(m), k, epsilon);
  c.log10_ell0 = logs.log10_ell0;
  c.log10_eta = logs.log10_eta;
  c.log10_n0 = logs.log10_n0;
  c.log10_space = logs.log10_v;
  return c;
}

Index minimal_extraction_n(int d, int k, Index ell0) {
  if (d < 1 || k < 1 || ell0 < 1) throw InvalidArgument("minimal_extraction_n: parameters must be positive");
  Index n = static_cast<Index>(k + 1) * k * ell0;
  for (int i = 2; i <= d; ++i) n = static_cast<Index>(k) * ell0 * (n + 1);
  return n;
}

// ---------------------------------------------------------------- extraction

namespace {

void finish_rows(ExtractionOutput& out) {
  out.worst_terms.assign(out.term_names.size(), 0.0);
  for (const auto& r : out.rows) {
    out.worst_total = std::max(out.worst_total, r.total);
    for (std::size_t i = 0; i < r.terms.size(); ++i) out.worst_terms[i] = std::max(out.worst_terms[i], r.terms[i]);
  }
}

void check_extract_params(const ArrayModel& model, const ExtractParams& p) {
  check_level_args(model.d(), p.k, p.theta, p.ell0);
  if (p.u == 0) throw InvalidArgument("extract: u must be positive");
  if (!(p.coding_epsilon > 0.0)) throw InvalidArgument("extract: coding epsilon must be positive");
  if (p.max_evaluations == 0) throw InvalidArgument("extract: max_evaluations must be positive");
}

}  // namespace

ExtractionOutput extract_d1(const ArrayModel& model, const ExtractParams& params, const Caps& caps) {
  if (model.d() != 1) throw InvalidArgument("extract_d1: model must be one-dimensional");
  check_extract_params(model, params);
  const int k = params.k;
  const int m = model.m();
  const Index n = model.n();
  const Index step = static_cast<Index>(k) * params.ell0;
  const Index need = minimal_extraction_n(1, k, params.ell0);
  if (n < need)
    throw Infeasible("extract_d1: n = " + std::to_string(n) + " is below the required " + std::to_string(need));

  ExtractionOutput out;
  out.d = 1;
  out.n = n;
  for (int j = 1; j <= k; ++j) out.L.push_back(j * step);
  out.kappa0 = k;
  out.alphabet = model.alphabet();
  out.constants = extraction_constants(1, m, k, params.epsilon);

  const DSubset t0{out.L.front()};
  const auto level = select_level(model, t0, k, params.theta, params.ell0, caps);
  out.ell = level.ell;
  out.level_certified = level.found;

  const auto G = projection_family(t0, out.ell, n);  // the same tail for every point of L
  checked_pow(static_cast<std::uint64_t>(m), G.size(), params.max_alphabet, "configuration count m^|G|");
  const auto S = choose(out.L, 1);
  std::vector<DSubset> entries = S;
  append(entries, G);
  AtomView view(model, entries, caps);

  // positive-mass configurations of the tail, in lexicographic order
  const auto g_idx = view.at(G);
  const std::size_t te = view.at(t0);
  std::map<Config, std::vector<double>> joint;
  for (std::size_t atom = 0; atom < view.atoms(); ++atom) {
    auto& row = joint[view.config(g_idx, atom)];
    row.resize(m + 1, 0.0);
    row[view.symbol(te, atom)] += view.weight(atom);
    row[m] += view.weight(atom);
  }
  std::vector<double> nu;
  std::vector<std::vector<double>> hp;  // [y][a]
  for (const auto& [cfg, row] : joint) {
    nu.push_back(row[m]);
    std::vector<double> h(m);
    for (int a = 0; a < m; ++a) h[a] = row[a] / row[m];
    hp.push_back(std::move(h));
  }
  {
    const double total = compensated_sum(nu);
    for (double& w : nu) w /= total;
  }
  const std::size_t Y = nu.size();
  out.support_size = Y;
  for (const auto& h : hp) out.unity_residual = std::max(out.unity_residual, std::abs(compensated_sum(h) - 1.0));

  PartitionOfUnity H;
  H.base = nu;
  H.d = 2;
  H.funcs.assign(m, std::vector<double>(Y * Y));
  for (std::size_t y0 = 0; y0 < Y; ++y0)
    for (std::size_t y1 = 0; y1 < Y; ++y1)
      for (int a = 0; a < m; ++a) H.funcs[a][y0 * Y + y1] = hp[y0][a];
  checked_pow(Y * params.u, 2, caps.max_terms, "lifted cell count");

  const auto lift = lift_partition_of_unity(H, k, params.coding_epsilon, params.u, derive_seed(params.seed, 1),
                                            LiftOptions{params.max_retries, false});
  out.coding_max_deviation = lift.max_deviation;
  out.coding_budget = k * lift.max_deviation;
  out.coding_verified = lift.verified;
  const FunctionArray two = lift.to_function_array();
  out.array.seed_weights = two.coord_weights;
  out.array.coord_weights = two.coord_weights;
  out.array.d = 1;
  out.array.table = two.table;

  // rows
  out.term_names = {"projection", "transport", "identity", "coding"};
  const auto pG = view.sigma(G);
  const std::size_t K = S.size();
  std::vector<std::vector<RandomVariable>> ind(K), cexp(K);
  for (std::size_t i = 0; i < K; ++i)
    for (int a = 0; a < m; ++a) {
      ind[i].push_back(view.indicator(S[i], a));
      cexp[i].push_back(cond_expect(ind[i].back(), pG));
    }
  const ArrayModel coded = out.model();
  const auto to_k = index_transport(out.L, interval(1, k));
  const LawTable coded_law(coded, relabel(to_k, S), caps);

  const auto plan = plan_rows(K, m, params.max_evaluations, params.seed);
  out.sampled = plan.sampled;
  for (const auto& row : plan.rows) {
    LawRow lr;
    std::vector<const RandomVariable*> ones, projs, moved;
    for (std::size_t i = 0; i < K; ++i) {
      if (row[i] < 0) continue;
      lr.F.push_back(S[i]);
      lr.assignment.push_back(row[i]);
      ones.push_back(&ind[i][row[i]]);
      projs.push_back(&cexp[i][row[i]]);
      moved.push_back(&cexp[0][row[i]]);
    }
    lr.exact = expect_product(view.space(), ones);
    const double p1 = expect_product(view.space(), projs);
    const double p2 = expect_product(view.space(), moved);
    CompensatedSum p3;
    for (std::size_t y = 0; y < Y; ++y) {
      double v = nu[y];
      for (int a : lr.assignment) v *= hp[y][a];
      p3.add(v);
    }
    lr.coded = coded_law(row);
    lr.terms = {std::abs(lr.exact - p1), std::abs(p1 - p2), std::abs(p2 - p3.value()), std::abs(p3.value() - lr.coded)};
    lr.total = std::abs(lr.exact - lr.coded);
    out.rows.push_back(std::move(lr));
  }
  finish_rows(out);
  return out;
}

ExtractionOutput extract_step(const ArrayModel& model, const ExtractParams& params, const Caps& caps) {
  const int d = model.d();
  if (d < 2) throw InvalidArgument("extract_step: model must have d >= 2");
  check_extract_params(model, params);
  if (d - 1 > params.max_depth)
    throw InvalidArgument("extract_step: recursion depth " + std::to_string(d - 1) + " exceeds the limit of " +
                          std::to_string(params.max_depth));
  const int k = params.k;
  const int m = model.m();
  const Index n = model.n();
  const Index step = static_cast<Index>(k) * params.ell0;
  const Index inner_need = minimal_extraction_n(d - 1, k, params.ell0);
  const std::size_t qsize = params.q_size == 0 ? static_cast<std::size_t>(inner_need) : params.q_size;
  if (qsize < static_cast<std::size_t>(k) || static_cast<Index>(qsize) < inner_need)
    throw Infeasible("extract_step: |Q| = " + std::to_string(qsize) + " is below the required " +
                     std::to_string(std::max<Index>(k, inner_need)));
  const Index need = step * (static_cast<Index>(qsize) + 1);
  if (n < need)
    throw Infeasible("extract_step: n = " + std::to_string(n) + " is below the required " + std::to_string(need));

  ExtractionOutput out;
  out.d = d;
  out.n = n;
  for (std::size_t j = 1; j <= qsize; ++j) out.Q.push_back(static_cast<Index>(j) * step);
  out.L.assign(out.Q.begin(), out.Q.begin() + k);
  out.kappa0 = static_cast<int>(binomial(k, d));
  out.alphabet = model.alphabet();
  out.constants = extraction_constants(d, m, k, params.epsilon);

  // level
  const DSubset t0(out.Q.begin(), out.Q.begin() + d);
  const auto level = select_level(model, t0, k, params.theta, params.ell0, caps);
  const Index ell = out.ell = level.ell;
  out.level_certified = level.found;

  // families
  const auto S = choose(out.L, d, caps.max_subsets);
  const auto G = projection_family(t0, ell, n);
  const IndexSet Mt0 = set_union(t0, union_of(G));
  const IndexSet y0(out.Q.begin(), out.Q.begin() + (d - 1));
  const auto R = boundary_family(y0, d, ell, n);
  const IndexSet Ly0 = union_of(R);
  const std::uint64_t Zs =
      checked_pow(static_cast<std::uint64_t>(m), R.size(), params.max_alphabet,
                  "derived alphabet m^|R| (it grows like m^((l0 d)^d))");

  std::vector<DSubset> checked = S;
  if (!std::binary_search(S.begin(), S.end(), t0)) checked.push_back(t0);
  std::vector<DSubset> entries = checked;
  std::vector<std::vector<DSubset>> Gs, moved;
  for (const auto& s : checked) {
    Gs.push_back(projection_family(s, ell, n));
    moved.push_back(transport_family(index_transport(Mt0, set_union(s, union_of(Gs.back()))), G));
    append(entries, Gs.back());
    append(entries, moved.back());
  }
  const auto Qd1 = choose(out.Q, d - 1, caps.max_subsets);
  std::map<IndexSet, std::vector<DSubset>> Rx;  // transported copy of R for each x
  for (const auto& x : Qd1) {
    auto fam = transport_family(index_transport(Ly0, union_of(boundary_family(x, d, ell, n))), R);
    append(entries, fam);
    Rx.emplace(x, std::move(fam));
  }
  AtomView view(model, entries, caps);

  // conditional weights from the first set's family
  const auto g_idx = view.at(G);
  const std::size_t te = view.at(t0);
  std::map<Config, std::vector<double>> joint;
  std::vector<double> marginal(m, 0.0);
  for (std::size_t atom = 0; atom < view.atoms(); ++atom) {
    auto& row = joint[view.config(g_idx, atom)];
    row.resize(m + 1, 0.0);
    row[view.symbol(te, atom)] += view.weight(atom);
    row[m] += view.weight(atom);
    marginal[view.symbol(te, atom)] += view.weight(atom);
  }
  auto lambda_of = [&](const Config& cfg, int a) {
    auto it = joint.find(cfg);
    return it == joint.end() ? marginal[a] : it->second[a] / it->second[m];
  };

  // derived (d-1)-array on [|Q|], extracted recursively
  auto z_code = [&](const std::vector<std::size_t>& idx, std::size_t atom) {
    std::uint64_t c = 0;
    for (std::size_t e : idx) c = c * m + view.symbol(e, atom);
    return static_cast<int>(c);
  };
  Alphabet zalpha;
  for (std::uint64_t c = 0; c < Zs; ++c) {
    std::string label;
    std::uint64_t r = c;
    std::vector<std::string> parts(R.size());
    for (std::size_t i = R.size(); i-- > 0;) {
      parts[i] = model.alphabet().labels[r % m];
      r /= m;
    }
    for (std::size_t i = 0; i < parts.size(); ++i) label += (i ? "." : "") + parts[i];
    zalpha.labels.push_back(label);
    zalpha.values.push_back(static_cast<double>(c));
  }
  AtomicArray yarr;
  yarr.n = static_cast<Index>(qsize);
  yarr.d = d - 1;
  yarr.space = view.space();
  std::map<IndexSet, std::vector<std::size_t>> rx_idx;
  for (const auto& x : Qd1) rx_idx.emplace(x, view.at(Rx.at(x)));
  for (const auto& x : Qd1) {
    std::vector<int> col(view.atoms());
    for (std::size_t atom = 0; atom < view.atoms(); ++atom) col[atom] = z_code(rx_idx.at(x), atom);
    yarr.entries.push_back(std::move(col));
  }
  const ArrayModel ymodel = ArrayModel::atomic(std::move(yarr), zalpha);
  ExtractParams ip = params;
  ip.seed = derive_seed(params.seed, 3);
  ip.q_size = 0;
  ip.max_depth = params.max_depth - 1;
  auto inner = std::make_shared<ExtractionOutput>(extract(ymodel, ip, caps));
  out.inner = inner;

  // which face tuples are consistent with a configuration of G
  const auto dt0 = choose(t0, d - 1);
  std::map<DSubset, std::size_t> gpos;
  for (std::size_t j = 0; j < G.size(); ++j) gpos.emplace(G[j], j);
  std::vector<std::vector<std::size_t>> place(d);  // place[i][j]: slot in G of the j-th boundary entry moved onto face i
  for (int i = 0; i < d; ++i)
    for (const auto& u : Rx.at(dt0[i])) place[i].push_back(gpos.at(u));
  const std::uint64_t betas = checked_pow(Zs, static_cast<std::uint64_t>(d), 10'000'000, "boundary tuple count");
  std::vector<char> inB(betas, 0);
  std::vector<Config> T(betas);
  for (std::uint64_t b = 0; b < betas; ++b) {
    Config cfg(G.size(), -1);
    bool ok = true;
    std::uint64_t rb = b;
    for (int i = d; i-- > 0 && ok;) {
      std::uint64_t z = rb % Zs;
      rb /= Zs;
      for (std::size_t j = R.size(); j-- > 0 && ok;) {
        const int a = static_cast<int>(z % m);
        z /= m;
        int& slot = cfg[place[i][j]];
        if (slot >= 0 && slot != a) ok = false;
        slot = a;
      }
    }
    if (!ok) continue;
    if (std::find(cfg.begin(), cfg.end(), -1) != cfg.end()) throw std::logic_error("extract_step: G not covered");
    inB[b] = 1;
    T[b] = std::move(cfg);
  }
  std::vector<double> lam(betas * m);
  for (std::uint64_t b = 0; b < betas; ++b) {
    const bool known = inB[b] && joint.count(T[b]);
    if (!known) ++out.incompatible_tuples;
    for (int a = 0; a < m; ++a) lam[b * m + a] = known ? lambda_of(T[b], a) : marginal[a];
  }

  // per-atom check that the boundary tuple of s determines s's transported configuration
  std::vector<std::vector<RandomVariable>> f(checked.size());
  for (std::size_t si = 0; si < checked.size(); ++si) {
    const auto ds = choose(checked[si], d - 1);
    const auto mv_idx = view.at(moved[si]);
    std::vector<std::vector<double>> fv(m, std::vector<double>(view.atoms()));
    for (std::size_t atom = 0; atom < view.atoms(); ++atom) {
      std::uint64_t b = 0;
      for (const auto& x : ds) b = b * Zs + static_cast<std::uint64_t>(z_code(rx_idx.at(x), atom));
      const Config cfg = view.config(mv_idx, atom);
      if (!inB[b] || T[b] != cfg) ++out.compatibility_violations;
      for (int a = 0; a < m; ++a) fv[a][atom] = lambda_of(cfg, a);
    }
    for (int a = 0; a < m; ++a) f[si].emplace_back(view.space(), std::move(fv[a]));
  }

  // weights per cell, looked up from the tuple of inner labels on the faces
  const FunctionArray& E1 = inner->array;
  const std::size_t zs = E1.seed_weights.size();
  const std::size_t q = E1.coord_weights.size();
  const std::size_t cells = checked_pow(q, d, caps.max_terms, "coordinate cells");
  const std::size_t inner_cells = checked_pow(q, d - 1, caps.max_terms, "inner coordinate cells");
  if (zs * cells * m > caps.max_terms) throw CapExceeded("extract_step: partition of unity table exceeds the cap");
  const auto faces = choose(interval(1, d), d - 1);
  SeededKernel kern;
  kern.seed_weights = E1.seed_weights;
  kern.coord_weights = E1.coord_weights;
  kern.d = d;
  kern.m = m;
  kern.h.resize(zs * cells * m);
  MixtureModel source;
  source.weights = E1.seed_weights;
  std::vector<std::size_t> digits(d);
  for (std::size_t z = 0; z < zs; ++z) {
    PartitionOfUnity pu;
    pu.base = E1.coord_weights;
    pu.d = d;
    pu.funcs.assign(m, std::vector<double>(cells));
    for (std::size_t cell = 0; cell < cells; ++cell) {
      std::size_t r = cell;
      for (int i = d; i-- > 0;) {
        digits[i] = r % q;
        r /= q;
      }
      std::uint64_t b = 0;
      for (const auto& x : faces) {
        std::size_t sub = 0;
        for (Index c : x) sub = sub * q + digits[c - 1];
        b = b * Zs + static_cast<std::uint64_t>(E1.table[z * inner_cells + sub]);
      }
      CompensatedSum tot;
      for (int a = 0; a < m; ++a) {
        const double v = lam[b * m + a];
        kern.h[(z * cells + cell) * m + a] = v;
        pu.funcs[a][cell] = v;
        tot.add(v);
      }
      out.unity_residual = std::max(out.unity_residual, std::abs(tot.value() - 1.0));
    }
    source.components.push_back(std::move(pu));
  }
  out.support_size = zs;

  // coding
  const auto lift = lift_kernel(kern, out.kappa0, params.coding_epsilon, params.u, derive_seed(params.seed, 2),
                                LiftOptions{params.max_retries, false});
  out.coding_max_deviation = lift.max_deviation;
  out.coding_budget = out.kappa0 * lift.max_deviation;
  out.coding_verified = lift.verified;
  out.array = lift.to_function_array();

  // law rows
  out.term_names = {"projection", "transport", "inner", "identity", "coding"};
  const std::size_t K = S.size();
  std::vector<std::vector<RandomVariable>> ind(K), cexp(K);
  for (std::size_t i = 0; i < K; ++i) {
    const auto p = view.sigma(Gs[i]);
    for (int a = 0; a < m; ++a) {
      ind[i].push_back(view.indicator(S[i], a));
      cexp[i].push_back(cond_expect(ind[i].back(), p));
    }
  }
  const auto to_k = index_transport(out.L, interval(1, k));
  const auto Sk = relabel(to_k, S);
  const ArrayModel coded = out.model();
  const ArrayModel src = ArrayModel::mixture(k, std::move(source), model.alphabet());
  const LawTable coded_law(coded, Sk, caps);
  const LawTable source_law(src, Sk, caps);
  const ArrayModel inner_model = ArrayModel::function(k, inner->array, zalpha);
  std::map<std::vector<DSubset>, std::vector<double>> inner_laws;

  const auto plan = plan_rows(K, m, params.max_evaluations, params.seed);
  out.sampled = plan.sampled;
  for (const auto& row : plan.rows) {
    LawRow lr;
    std::vector<const RandomVariable*> ones, projs, fs;
    std::set<DSubset> gamma;
    for (std::size_t i = 0; i < K; ++i) {
      if (row[i] < 0) continue;
      lr.F.push_back(S[i]);
      lr.assignment.push_back(row[i]);
      ones.push_back(&ind[i][row[i]]);
      projs.push_back(&cexp[i][row[i]]);
      fs.push_back(&f[i][row[i]]);  // checked starts with S
      for (auto& x : choose(S[i], d - 1)) gamma.insert(x);
    }
    lr.exact = expect_product(view.space(), ones);
    const double p1 = expect_product(view.space(), projs);
    const double p2 = expect_product(view.space(), fs);

    // sum over face labellings of the weight product times the inner coded law
    const std::vector<DSubset> gam(gamma.begin(), gamma.end());
    auto it = inner_laws.find(gam);
    if (it == inner_laws.end()) {
      checked_pow(Zs, gam.size(), caps.max_terms, "inner face configurations");
      it = inner_laws.emplace(gam, joint_law(inner_model, relabel(to_k, gam), caps)).first;
    }
    const auto& pmf = it->second;
    std::vector<std::vector<std::size_t>> face_pos;  // per member of F, positions of its faces in gam
    for (const auto& s : lr.F) {
      std::vector<std::size_t> pos;
      for (const auto& x : choose(s, d - 1))
        pos.push_back(static_cast<std::size_t>(std::lower_bound(gam.begin(), gam.end(), x) - gam.begin()));
      face_pos.push_back(std::move(pos));
    }
    CompensatedSum p3;
    std::vector<std::uint64_t> zb(gam.size());
    for (std::size_t c = 0; c < pmf.size(); ++c) {
      if (pmf[c] == 0.0) continue;
      std::size_t r = c;
      for (std::size_t i = gam.size(); i-- > 0;) {
        zb[i] = r % Zs;
        r /= Zs;
      }
      double v = pmf[c];
      for (std::size_t j = 0; j < lr.F.size() && v != 0.0; ++j) {
        std::uint64_t b = 0;
        for (std::size_t p : face_pos[j]) b = b * Zs + zb[p];
        v *= lam[b * m + lr.assignment[j]];
      }
      p3.add(v);
    }
    const double p4 = source_law(row);
    lr.coded = coded_law(row);
    lr.terms = {std::abs(lr.exact - p1), std::abs(p1 - p2), std::abs(p2 - p3.value()), std::abs(p3.value() - p4),
                std::abs(p4 - lr.coded)};
    lr.total = std::abs(lr.exact - lr.coded);
    out.rows.push_back(std::move(lr));
  }
  finish_rows(out);
  return out;
}

ExtractionOutput extract(const ArrayModel& model, const ExtractParams& params, const Caps& caps) {
  return model.d() == 1 ? extract_d1(model, params, caps) : extract_step(model, params, caps);
}

ArrayModel ExtractionOutput::model() const {
  return ArrayModel::function(std::max<Index>(static_cast<Index>(L.size()), d), array, alphabet);
}

std::string ExtractionOutput::to_json() const {
  using json = nlohmann::ordered_json;
  json j;
  j["d"] = d;
  j["n"] = n;
  j["L"] = jset(L);
  j["Q"] = jset(Q);
  j["ell"] = ell;
  j["level_certified"] = level_certified;
  j["kappa0"] = kappa0;
  j["support_size"] = support_size;
  j["coding"] = {{"max_deviation", jnum(coding_max_deviation)},
                 {"budget", jnum(coding_budget)},
                 {"verified", coding_verified}};
  j["compatibility_violations"] = compatibility_violations;
  j["incompatible_tuples"] = incompatible_tuples;
  j["unity_residual"] = jnum(unity_residual);
  j["constants"] = {{"theta", jnum(constants.theta)},
                    {"pigeonhole_levels", jnum(constants.pigeonhole_levels)},
                    {"log10_ell0", jnum(constants.log10_ell0)},
                    {"log10_eta", jnum(constants.log10_eta)},
                    {"log10_n0", jnum(constants.log10_n0)},
                    {"log10_space", jnum(constants.log10_space)}};
  j["term_names"] = term_names;
  j["sampled"] = sampled;
  j["worst_total"] = jnum(worst_total);
  json wt = json::object();
  for (std::size_t i = 0; i < term_names.size() && i < worst_terms.size(); ++i)
    wt[term_names[i]] = jnum(worst_terms[i]);
  j["worst_terms"] = wt;
  json rows_j = json::array();
  for (const auto& r : rows) {
    json rj;
    json F = json::array();
    for (const auto& s : r.F) F.push_back(jset(s));
    rj["F"] = F;
    json a = json::array();
    for (int x : r.assignment) a.push_back(alphabet.labels[x]);
    rj["assignment"] = a;
    rj["exact"] = jnum(r.exact);
    rj["coded"] = jnum(r.coded);
    json t = json::object();
    for (std::size_t i = 0; i < term_names.size() && i < r.terms.size(); ++i) t[term_names[i]] = jnum(r.terms[i]);
    rj["terms"] = t;
    rj["total"] = jnum(r.total);
    rows_j.push_back(rj);
  }
  j["rows"] = rows_j;
  j["model"] = json::parse(dump_model(model()));
  j["inner"] = inner ? json::parse(inner->to_json()) : json(nullptr);
  return j.dump(2) + "\n";
}

}  // namespace spreadarray
