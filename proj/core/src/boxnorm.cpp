#include "spreadarray/boxnorm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "spreadarray/errors.hpp"
#include "spreadarray/probspace.hpp"

namespace spreadarray {

namespace {

std::uint64_t checked_pow(std::uint64_t base, int e, std::uint64_t cap, const char* what) {
  std::uint64_t r = 1;
  for (int i = 0; i < e; ++i) {
    if (base != 0 && r > cap / base) throw CapExceeded(std::string(what) + ": term count exceeds cap");
    r *= base;
  }
  if (r > cap) throw CapExceeded(std::string(what) + ": term count exceeds cap");
  return r;
}

void check_family(const std::vector<BoxFunction>& family) {
  if (family.empty()) throw InvalidArgument("box family is empty");
  const int d = family[0].d;
  if (d < 1 || d > 20) throw InvalidArgument("box family: bad arity");
  if (family.size() != (std::size_t{1} << d)) throw InvalidArgument("box family must have 2^d members");
  for (const auto& h : family) {
    h.validate();
    if (h.d != d || h.base != family[0].base) throw InvalidArgument("box family: functions on different spaces");
  }
}

// Arrays of values on Omega^k with the first coordinate most significant.
double cube_rec(const std::vector<std::vector<double>>& fam, const std::vector<double>& w, int k) {
  const std::size_t q = w.size();
  if (k == 1) {
    CompensatedSum a, b;
    for (std::size_t x = 0; x < q; ++x) {
      a.add(w[x] * fam[0][x]);
      b.add(w[x] * fam[1][x]);
    }
    return a.value() * b.value();
  }
  std::size_t rest = 1;
  for (int i = 1; i < k; ++i) rest *= q;
  const std::size_t half = fam.size() / 2;
  std::vector<std::vector<double>> sub(half, std::vector<double>(rest));
  CompensatedSum total;
  for (std::size_t x0 = 0; x0 < q; ++x0) {
    for (std::size_t x1 = 0; x1 < q; ++x1) {
      for (std::size_t e = 0; e < half; ++e) {
        const double* lo = fam[e].data() + x0 * rest;
        const double* hi = fam[half + e].data() + x1 * rest;
        for (std::size_t c = 0; c < rest; ++c) sub[e][c] = lo[c] * hi[c];
      }
      total.add(w[x0] * w[x1] * cube_rec(sub, w, k - 1));
    }
  }
  return total.value();
}

}  // namespace

BoxFunction BoxFunction::constant(std::vector<double> base, int d, double c) {
  BoxFunction h{std::move(base), d, {}};
  h.values.assign(h.cells(), c);
  return h;
}

std::size_t BoxFunction::cells() const {
  std::size_t c = 1;
  for (int i = 0; i < d; ++i) c *= base.size();
  return c;
}

double BoxFunction::mean() const {
  const std::size_t q = base.size();
  CompensatedSum s;
  for (std::size_t cell = 0; cell < values.size(); ++cell) {
    double w = 1.0;
    std::size_t r = cell;
    for (int i = 0; i < d; ++i) {
      w *= base[r % q];
      r /= q;
    }
    s.add(w * values[cell]);
  }
  return s.value();
}

BoxFunction BoxFunction::shifted(double c) const {
  BoxFunction out = *this;
  for (double& v : out.values) v -= c;
  return out;
}

void BoxFunction::validate() const {
  if (d < 1) throw InvalidArgument("BoxFunction: arity must be positive");
  FiniteProbSpace check(base);  // throws on bad weights
  if (values.size() != cells()) throw InvalidArgument("BoxFunction: value count must be |Omega|^d");
  for (double v : values)
    if (!std::isfinite(v)) throw InvalidArgument("BoxFunction: non-finite value");
}

BoxFunction operator-(const BoxFunction& a, const BoxFunction& b) {
  if (a.d != b.d || a.base != b.base || a.values.size() != b.values.size())
    throw InvalidArgument("BoxFunction subtraction: different spaces");
  BoxFunction out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= b.values[i];
  return out;
}

double cube_integral(const std::vector<BoxFunction>& family, std::uint64_t cap) {
  check_family(family);
  const int d = family[0].d;
  checked_pow(family[0].q(), 2 * d, cap, "cube_integral");
  std::vector<std::vector<double>> fam;
  fam.reserve(family.size());
  for (const auto& h : family) fam.push_back(h.values);
  return cube_rec(fam, family[0].base, d);
}

double box_norm(const BoxFunction& h, std::uint64_t cap) {
  if (h.d < 2) throw InvalidArgument("box_norm: arity must be at least 2");
  const double inner = cube_integral(std::vector<BoxFunction>(std::size_t{1} << h.d, h), cap);
  if (inner < -1e-12) throw std::logic_error("box_norm: negative cube integral " + std::to_string(inner));
  return std::pow(std::max(inner, 0.0), 1.0 / static_cast<double>(std::size_t{1} << h.d));
}

double gcs_defect(const std::vector<BoxFunction>& family) {
  check_family(family);
  double prod = 1.0;
  for (const auto& h : family) prod *= box_norm(h);
  return prod - std::abs(cube_integral(family));
}

double box_uniformity(const BoxFunction& h) { return box_norm(h.shifted(h.mean())); }

double product_integral(const std::vector<const BoxFunction*>& factors, const std::vector<IndexSet>& coords,
                        std::uint64_t cap) {
  if (factors.size() != coords.size()) throw InvalidArgument("product_integral: factor/coordinate count mismatch");
  if (factors.empty()) return 1.0;
  const auto& base = factors[0]->base;
  IndexSet all;
  for (std::size_t i = 0; i < factors.size(); ++i) {
    factors[i]->validate();
    if (factors[i]->base != base) throw InvalidArgument("product_integral: factors on different spaces");
    if (static_cast<int>(coords[i].size()) != factors[i]->d || !is_strictly_increasing(coords[i]))
      throw InvalidArgument("product_integral: coordinate set must be an increasing d-subset");
    all = set_union(all, coords[i]);
  }
  const std::size_t q = base.size();
  const std::size_t u = all.size();
  const std::uint64_t terms = checked_pow(q, static_cast<int>(u), cap, "product_integral");
  std::vector<std::vector<std::size_t>> pos(factors.size());
  for (std::size_t i = 0; i < factors.size(); ++i)
    for (Index c : coords[i])
      pos[i].push_back(static_cast<std::size_t>(std::lower_bound(all.begin(), all.end(), c) - all.begin()));
  std::vector<std::size_t> digit(u, 0);
  CompensatedSum total;
  for (std::uint64_t t = 0; t < terms; ++t) {
    double w = 1.0;
    for (std::size_t j = 0; j < u; ++j) w *= base[digit[j]];
    for (std::size_t i = 0; i < factors.size() && w != 0.0; ++i) {
      std::size_t cell = 0;
      for (std::size_t p : pos[i]) cell = cell * q + digit[p];
      w *= factors[i]->values[cell];
    }
    total.add(w);
    for (std::size_t j = u; j-- > 0;) {
      if (++digit[j] < q) break;
      digit[j] = 0;
    }
  }
  return total.value();
}

ReplacementCheck replacement_bound_check(const BoxFunction& f, const BoxFunction& g,
                                         const std::vector<BoxFunction>& hs, const DSubset& s0,
                                         const std::vector<DSubset>& ss) {
  if (hs.size() != ss.size()) throw InvalidArgument("replacement_bound_check: need one subset per function");
  auto in_range = [](const BoxFunction& h) {
    return std::all_of(h.values.begin(), h.values.end(), [](double v) { return v >= -1.0 && v <= 1.0; });
  };
  if (!in_range(f) || !in_range(g)) throw InvalidArgument("replacement_bound_check: values must lie in [-1,1]");
  for (std::size_t i = 0; i < hs.size(); ++i) {
    if (!in_range(hs[i])) throw InvalidArgument("replacement_bound_check: values must lie in [-1,1]");
    if (ss[i] == s0) throw InvalidArgument("replacement_bound_check: s_i must differ from s_0");
  }
  const BoxFunction diff = f - g;
  std::vector<const BoxFunction*> factors{&diff};
  std::vector<IndexSet> coords{s0};
  for (std::size_t i = 0; i < hs.size(); ++i) {
    factors.push_back(&hs[i]);
    coords.push_back(ss[i]);
  }
  ReplacementCheck r;
  r.lhs = std::abs(product_integral(factors, coords));
  r.rhs = box_norm(diff);
  r.holds = r.lhs <= r.rhs + 1e-12;
  return r;
}

std::vector<DSubset> DBox::members() const {
  const std::size_t d = blocks.size();
  std::vector<DSubset> out;
  out.reserve(std::size_t{1} << d);
  for (std::size_t eps = 0; eps < (std::size_t{1} << d); ++eps) {
    DSubset s(d);
    for (std::size_t i = 0; i < d; ++i) {
      const bool hi = (eps >> (d - 1 - i)) & 1U;
      s[i] = hi ? blocks[i].second : blocks[i].first;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<DBox> enumerate_boxes(Index n, int d, std::uint64_t limit) {
  if (d < 1) throw InvalidArgument("enumerate_boxes: d must be positive");
  if (n < 2 * d) throw InvalidArgument("enumerate_boxes: need n >= 2d");
  std::vector<DBox> out;
  for (const auto& pts : choose(interval(1, n), 2 * d, limit)) {
    DBox b;
    for (int i = 0; i < d; ++i) b.blocks.emplace_back(pts[2 * i], pts[2 * i + 1]);
    out.push_back(std::move(b));
  }
  return out;
}

namespace {

// Generative arrays are spreadable, so one box represents them all.
std::vector<DBox> boxes_to_check(const ArrayModel& model, const Caps& caps) {
  auto boxes = enumerate_boxes(model.n(), model.d(), caps.max_subsets);
  if (model.generative()) boxes.resize(1);
  return boxes;
}

double box_defect_at(const ArrayModel& model, const DBox& box, int a, std::map<DSubset, std::vector<double>>& marg,
                     const Caps& caps) {
  const auto members = box.members();
  double prod = 1.0;
  for (const auto& s : members) {
    auto it = marg.find(s);
    if (it == marg.end()) it = marg.emplace(s, joint_law(model, {s}, caps)).first;
    prod *= it->second[static_cast<std::size_t>(a)];
  }
  const double joint = event_probability(model, members, std::vector<int>(members.size(), a), caps);
  return std::abs(joint - prod);
}

std::vector<BoxIndependenceResult> per_symbol_defects(const ArrayModel& model, const Caps& caps) {
  std::vector<BoxIndependenceResult> out(static_cast<std::size_t>(model.m()));
  std::map<DSubset, std::vector<double>> marg;
  bool first = true;
  for (const auto& box : boxes_to_check(model, caps)) {
    for (int a = 0; a < model.m(); ++a) {
      const double v = box_defect_at(model, box, a, marg, caps);
      auto& r = out[static_cast<std::size_t>(a)];
      if (first || v > r.defect) {
        r.defect = v;
        r.worst_box = box;
        r.worst_symbol = a;
      }
    }
    first = false;
  }
  return out;
}

}  // namespace

BoxIndependenceResult box_independence_defect(const ArrayModel& model, const std::vector<int>& S, const Caps& caps) {
  for (int a : S)
    if (a < 0 || a >= model.m()) throw InvalidArgument("box_independence_defect: symbol out of range");
  const auto per = per_symbol_defects(model, caps);
  BoxIndependenceResult best;
  for (int a : S)
    if (best.worst_symbol < 0 || per[static_cast<std::size_t>(a)].defect > best.defect)
      best = per[static_cast<std::size_t>(a)];
  return best;
}

std::pair<BoxIndependenceResult, int> least_box_independence(const ArrayModel& model, const Caps& caps) {
  const auto per = per_symbol_defects(model, caps);
  std::pair<BoxIndependenceResult, int> best{{}, -1};
  for (int omit = 0; omit < model.m(); ++omit) {
    BoxIndependenceResult cur;
    for (int a = 0; a < model.m(); ++a)
      if (a != omit && (cur.worst_symbol < 0 || per[static_cast<std::size_t>(a)].defect > cur.defect))
        cur = per[static_cast<std::size_t>(a)];
    if (best.second < 0 || cur.defect < best.first.defect) best = {cur, omit};
  }
  return best;
}

double box_theta_constant(int d, int m, double epsilon, double vartheta) {
  const double root = std::pow(4.0, d);
  return 100.0 * std::pow(2.0, 2 * d) * std::pow(static_cast<double>(m), std::pow(2.0, d)) *
         (2.0 * std::pow(epsilon, 1.0 / root) + std::pow(vartheta, 1.0 / root));
}

double box_rho_constant(int d, int m, double epsilon, double vartheta) {
  const double root = std::pow(12.0, d);
  return std::pow(2.0, d + 7) * std::pow(static_cast<double>(m), 3) *
         (std::pow(epsilon, 1.0 / root) + std::pow(vartheta, 1.0 / root));
}

namespace {

std::vector<BoxFunction> component_functions(const PartitionOfUnity& pou) {
  std::vector<BoxFunction> out;
  for (const auto& f : pou.funcs) out.push_back(BoxFunction{pou.base, pou.d, f});
  return out;
}

}  // namespace

BoxSelectionReport characterize_box_independence(const ArrayModel& model, const BoxSelectionParams& params,
                                                 const Caps& caps) {
  if (model.kind() != ArrayModel::Kind::Mixture)
    throw InvalidArgument("characterize_box_independence: needs a mixture model");
  const int d = model.d();
  const int m = model.m();
  if (d < 2) throw InvalidArgument("characterize_box_independence: box norms need d >= 2");
  if (params.epsilon < 0.0 || params.vartheta < 0.0)
    throw InvalidArgument("characterize_box_independence: epsilon and vartheta must be non-negative");
  const auto& mix = model.as_mixture();
  const std::size_t J = mix.components.size();
  const std::size_t M = static_cast<std::size_t>(m);

  BoxSelectionReport r;
  r.Theta = box_theta_constant(d, m, params.epsilon, params.vartheta);
  r.rho1 = 2.0 * m * std::pow(4.0 * params.epsilon + r.Theta, 0.25);
  r.rho = box_rho_constant(d, m, params.epsilon, params.vartheta);
  r.mean_threshold = params.mean_threshold >= 0.0 ? params.mean_threshold : r.rho1;
  r.box_threshold = params.box_threshold >= 0.0 ? params.box_threshold : r.rho;

  r.means.assign(J, std::vector<double>(M));
  r.uniformity.assign(J, std::vector<double>(M));
  for (std::size_t j = 0; j < J; ++j) {
    const auto fs = component_functions(mix.components[j]);
    for (std::size_t a = 0; a < M; ++a) {
      r.means[j][a] = fs[a].mean();
      r.uniformity[j][a] = box_uniformity(fs[a]);
    }
  }
  r.delta.assign(M, 0.0);
  r.second_moment.assign(M, 0.0);
  for (std::size_t a = 0; a < M; ++a) {
    CompensatedSum first, second;
    for (std::size_t j = 0; j < J; ++j) {
      first.add(mix.weights[j] * r.means[j][a]);
      second.add(mix.weights[j] * r.means[j][a] * r.means[j][a]);
    }
    r.delta[a] = first.value();
    r.second_moment[a] = second.value();
    r.delta_sq_gap = std::max(r.delta_sq_gap, std::abs(r.delta[a] * r.delta[a] - r.second_moment[a]));
  }

  for (std::size_t j = 0; j < J; ++j) {
    bool ok = true;
    for (std::size_t a = 0; a < M; ++a) ok = ok && std::abs(r.means[j][a] - r.delta[a]) <= r.mean_threshold;
    if (ok) r.first_stage.push_back(j);
  }
  r.markov_sum.assign(M, 0.0);
  const double pd = std::pow(2.0, d);
  for (std::size_t a = 0; a < M; ++a) {
    CompensatedSum s;
    for (std::size_t j : r.first_stage) s.add(mix.weights[j] * std::pow(r.uniformity[j][a], pd));
    r.markov_sum[a] = s.value();
  }
  // 1/C is replaced by epsilon, as the argument itself does.
  r.markov_bound = pd * (params.epsilon + r.Theta + pd * params.epsilon + (pd + 1.0) * r.rho1);

  CompensatedSum mass;
  for (std::size_t j : r.first_stage) {
    bool ok = true;
    for (std::size_t a = 0; a < M; ++a) ok = ok && r.uniformity[j][a] <= r.box_threshold;
    if (ok) {
      r.selected.push_back(j);
      mass.add(mix.weights[j]);
    }
  }
  r.selected_mass = mass.value();

  // Subsets of a box: one box suffices since the mixture is spreadable.
  const auto members = enumerate_boxes(model.n(), d, caps.max_subsets).front().members();
  const std::size_t B = members.size();
  std::vector<std::vector<double>> marg;
  for (const auto& s : members) marg.push_back(joint_law(model, {s}, caps));
  for (std::size_t mask = 1; mask < (std::size_t{1} << B); ++mask) {
    std::vector<DSubset> F;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < B; ++i)
      if ((mask >> i) & 1U) {
        F.push_back(members[i]);
        idx.push_back(i);
      }
    for (int a = 0; a < m; ++a) {
      double prod = 1.0;
      for (std::size_t i : idx) prod *= marg[i][static_cast<std::size_t>(a)];
      const double joint = event_probability(model, F, std::vector<int>(F.size(), a), caps);
      r.inherited_defect = std::max(r.inherited_defect, std::abs(joint - prod));
    }
  }
  return r;
}

ForwardCheck forward_box_independence(const ArrayModel& model, const std::vector<std::size_t>& G, double epsilon,
                                      const Caps& caps) {
  if (model.kind() != ArrayModel::Kind::Mixture)
    throw InvalidArgument("forward_box_independence: needs a mixture model");
  if (model.d() < 2) throw InvalidArgument("forward_box_independence: box norms need d >= 2");
  const auto& mix = model.as_mixture();
  const std::size_t M = static_cast<std::size_t>(model.m());
  std::vector<double> delta(M, 0.0);
  std::vector<std::vector<BoxFunction>> fs;
  for (std::size_t j = 0; j < mix.components.size(); ++j) {
    fs.push_back(component_functions(mix.components[j]));
    for (std::size_t a = 0; a < M; ++a) delta[a] += mix.weights[j] * fs[j][a].mean();
  }
  ForwardCheck r;
  double mass = 0.0;
  for (std::size_t j : G) {
    if (j >= fs.size()) throw InvalidArgument("forward_box_independence: component index out of range");
    mass += mix.weights[j];
    for (std::size_t a = 0; a < M; ++a) {
      r.rho = std::max(r.rho, std::abs(fs[j][a].mean() - delta[a]));
      r.rho = std::max(r.rho, box_uniformity(fs[j][a]));
    }
  }
  r.rho = std::max(r.rho, 1.0 - mass);
  r.bound = std::pow(2.0, model.d()) * (2.0 * epsilon + 4.0 * r.rho);
  std::vector<int> all(M);
  for (std::size_t a = 0; a < M; ++a) all[a] = static_cast<int>(a);
  r.measured = box_independence_defect(model, all, caps).defect;
  r.holds = r.measured <= r.bound + 1e-12;
  return r;
}

}  // namespace spreadarray
