#include "spreadarray/models.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

#include "spreadarray/errors.hpp"

namespace spreadarray {

namespace {

std::size_t ipow(std::size_t base, std::size_t e) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < e; ++i) {
    if (base != 0 && r > static_cast<std::size_t>(-1) / base) throw CapExceeded("size overflow");
    r *= base;
  }
  return r;
}

std::string shortest_decimal(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void check_weights(const std::vector<double>& w, const char* what) {
  try {
    FiniteProbSpace check(w);
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(std::string(what) + ": " + e.what());
  }
}

}  // namespace

Alphabet Alphabet::numeric(int m) {
  if (m < 1) throw InvalidArgument("Alphabet: size must be positive");
  Alphabet a;
  for (int i = 0; i < m; ++i) {
    a.labels.push_back(std::to_string(i));
    a.values.push_back(i);
  }
  return a;
}

Alphabet Alphabet::from_values(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("Alphabet: no values");
  Alphabet a;
  for (double v : values) a.labels.push_back(shortest_decimal(v));
  a.values = std::move(values);
  return a;
}

int AtomicArray::symbol(const DSubset& s, std::size_t atom) const { return column(s)[atom]; }

const std::vector<int>& AtomicArray::column(const DSubset& s) const {
  if (static_cast<int>(s.size()) != d || !is_strictly_increasing(s) || s.front() < 1 || s.back() > n)
    throw InvalidArgument("AtomicArray: " + to_string(s) + " is not a d-subset of [n]");
  return entries[lex_rank(s, n)];
}

std::size_t PartitionOfUnity::cells() const { return ipow(base.size(), static_cast<std::size_t>(d)); }

void PartitionOfUnity::validate() const {
  if (d < 1) throw InvalidArgument("PartitionOfUnity: d must be at least 1");
  check_weights(base, "PartitionOfUnity base");
  if (funcs.empty()) throw InvalidArgument("PartitionOfUnity: no symbols");
  const std::size_t c = cells();
  for (const auto& f : funcs) {
    if (f.size() != c) throw InvalidArgument("PartitionOfUnity: function table has wrong size");
    for (double v : f)
      if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("PartitionOfUnity: values must lie in [0,1]");
  }
  for (std::size_t cell = 0; cell < c; ++cell) {
    CompensatedSum s;
    for (const auto& f : funcs) s.add(f[cell]);
    if (std::abs(s.value() - 1.0) > 1e-10)
      throw InvalidArgument("PartitionOfUnity: functions do not sum to 1 at cell " + std::to_string(cell));
  }
}

std::size_t FunctionArray::cells() const {
  return seed_weights.size() * ipow(coord_weights.size(), static_cast<std::size_t>(d));
}

std::size_t SeededKernel::cells() const {
  return seed_weights.size() * ipow(coord_weights.size(), static_cast<std::size_t>(d));
}

bool SeededKernel::deterministic() const {
  return std::all_of(h.begin(), h.end(), [](double v) { return v == 0.0 || v == 1.0; });
}

ArrayModel ArrayModel::atomic(AtomicArray array, Alphabet alphabet) {
  if (array.d < 1) throw InvalidArgument("AtomicArray: d must be at least 1");
  if (array.n < array.d) throw InvalidArgument("AtomicArray: n must be at least d");
  if (!array.space) throw InvalidArgument("AtomicArray: missing space");
  const std::uint64_t count = binomial(static_cast<std::uint64_t>(array.n), static_cast<std::uint64_t>(array.d));
  if (array.entries.size() != count) throw InvalidArgument("AtomicArray: entries must cover ([n] choose d) exactly");
  for (const auto& col : array.entries) {
    if (col.size() != array.space->size()) throw InvalidArgument("AtomicArray: entry column has wrong atom count");
    for (int a : col)
      if (a < 0 || a >= alphabet.size()) throw InvalidArgument("AtomicArray: symbol outside the alphabet");
  }
  ArrayModel m;
  m.kind_ = Kind::Atomic;
  m.n_ = array.n;
  m.d_ = array.d;
  m.alphabet_ = std::move(alphabet);
  m.payload_ = std::move(array);
  return m;
}

ArrayModel ArrayModel::mixture(Index n, MixtureModel mixture, Alphabet alphabet) {
  if (mixture.components.empty()) throw InvalidArgument("MixtureModel: no components");
  if (mixture.weights.size() != mixture.components.size())
    throw InvalidArgument("MixtureModel: weight count differs from component count");
  check_weights(mixture.weights, "MixtureModel weights");
  const int d = mixture.components.front().d;
  const int m = alphabet.size();
  ArrayModel out;
  for (std::size_t j = 0; j < mixture.components.size(); ++j) {
    const auto& c = mixture.components[j];
    c.validate();
    if (c.d != d) throw InvalidArgument("MixtureModel: components disagree on d");
    if (static_cast<int>(c.funcs.size()) != m) throw InvalidArgument("MixtureModel: component alphabet size mismatch");
    SeededKernel k{{1.0}, c.base, d, m, {}};
    const std::size_t cells = c.cells();
    k.h.resize(cells * m);
    for (std::size_t cell = 0; cell < cells; ++cell)
      for (int a = 0; a < m; ++a) k.h[cell * m + a] = c.funcs[a][cell];
    out.kernels_.push_back({mixture.weights[j], std::move(k)});
  }
  if (n < d) throw InvalidArgument("MixtureModel: n must be at least d");
  out.kind_ = Kind::Mixture;
  out.n_ = n;
  out.d_ = d;
  out.alphabet_ = std::move(alphabet);
  out.payload_ = std::move(mixture);
  return out;
}

ArrayModel ArrayModel::function(Index n, FunctionArray f, Alphabet alphabet) {
  if (f.d < 1) throw InvalidArgument("FunctionArray: d must be at least 1");
  if (n < f.d) throw InvalidArgument("FunctionArray: n must be at least d");
  check_weights(f.seed_weights, "FunctionArray seed weights");
  check_weights(f.coord_weights, "FunctionArray coordinate weights");
  const std::size_t cells = f.cells();
  if (f.table.size() != cells) throw InvalidArgument("FunctionArray: table must have |seed|*|coord|^d entries");
  const int m = alphabet.size();
  SeededKernel k{f.seed_weights, f.coord_weights, f.d, m, std::vector<double>(cells * m, 0.0)};
  for (std::size_t c = 0; c < cells; ++c) {
    if (f.table[c] < 0 || f.table[c] >= m) throw InvalidArgument("FunctionArray: symbol outside the alphabet");
    k.h[c * m + f.table[c]] = 1.0;
  }
  ArrayModel out;
  out.kind_ = Kind::Function;
  out.n_ = n;
  out.d_ = f.d;
  out.alphabet_ = std::move(alphabet);
  out.kernels_.push_back({1.0, std::move(k)});
  out.payload_ = std::move(f);
  return out;
}

const AtomicArray& ArrayModel::as_atomic() const {
  if (kind_ != Kind::Atomic) throw InvalidArgument("model is not atomic");
  return std::get<AtomicArray>(payload_);
}

const MixtureModel& ArrayModel::as_mixture() const {
  if (kind_ != Kind::Mixture) throw InvalidArgument("model is not a mixture");
  return std::get<MixtureModel>(payload_);
}

const FunctionArray& ArrayModel::as_function() const {
  if (kind_ != Kind::Function) throw InvalidArgument("model is not a function array");
  return std::get<FunctionArray>(payload_);
}

ArrayModel ArrayModel::restrict_to(const IndexSet& J) const {
  if (static_cast<int>(J.size()) < d_ || !is_strictly_increasing(J) || J.front() < 1 || J.back() > n_)
    throw InvalidArgument("restrict_to: J must be a subset of [n] with at least d points");
  ArrayModel out = *this;
  out.n_ = static_cast<Index>(J.size());
  if (kind_ == Kind::Atomic) {
    const auto& a = as_atomic();
    AtomicArray r{out.n_, d_, a.space, {}};
    const auto iso = canonical_iso(J);
    for (const auto& s : choose(interval(1, out.n_), d_)) {
      DSubset t;
      for (Index x : s) t.push_back(iso(static_cast<int>(x)));
      r.entries.push_back(a.column(t));
    }
    out.payload_ = std::move(r);
  }
  return out;
}

ArrayModel ArrayModel::with_values(std::vector<double> values) const {
  if (static_cast<int>(values.size()) != m()) throw InvalidArgument("with_values: size mismatch");
  ArrayModel out = *this;
  out.alphabet_.values = std::move(values);
  return out;
}

namespace {

// Coordinates touched by a list of entries, and each entry's positions among them.
struct CoordinateLayout {
  IndexSet coords;
  std::vector<std::vector<std::size_t>> positions;
};

CoordinateLayout layout_of(const std::vector<DSubset>& entries) {
  CoordinateLayout L;
  for (const auto& s : entries) L.coords = set_union(L.coords, s);
  for (const auto& s : entries) {
    std::vector<std::size_t> pos;
    for (Index x : s)
      pos.push_back(static_cast<std::size_t>(std::lower_bound(L.coords.begin(), L.coords.end(), x) - L.coords.begin()));
    L.positions.push_back(std::move(pos));
  }
  return L;
}

void check_entries(const ArrayModel& model, const std::vector<DSubset>& entries) {
  for (const auto& s : entries)
    if (static_cast<int>(s.size()) != model.d() || !is_strictly_increasing(s) || s.front() < 1 || s.back() > model.n())
      throw InvalidArgument(to_string(s) + " is not a d-subset of [n]");
}

// Calls visit(weight, offsets) for every (seed, coordinate assignment) of one kernel;
// offsets[e] locates entry e's symbol distribution inside kernel.h.
template <class Visit>
void for_each_assignment(const SeededKernel& k, const CoordinateLayout& L, std::uint64_t max_terms, Visit&& visit) {
  const std::size_t q = k.q();
  const std::size_t u = L.coords.size();
  const std::size_t per_seed = ipow(q, u);
  const std::size_t qd = ipow(q, static_cast<std::size_t>(k.d));
  if (per_seed > max_terms || per_seed * k.seed_weights.size() > max_terms)
    throw CapExceeded("exact marginalization needs " + std::to_string(per_seed) + " x " +
                      std::to_string(k.seed_weights.size()) + " terms, over the cap of " + std::to_string(max_terms));
  std::vector<std::size_t> x(u, 0);
  std::vector<std::size_t> offsets(L.positions.size());
  for (std::size_t z = 0; z < k.seed_weights.size(); ++z) {
    std::fill(x.begin(), x.end(), 0);
    for (std::size_t t = 0; t < per_seed; ++t) {
      double w = k.seed_weights[z];
      for (std::size_t i = 0; i < u; ++i) w *= k.coord_weights[x[i]];
      for (std::size_t e = 0; e < offsets.size(); ++e) {
        std::size_t cell = 0;
        for (std::size_t p : L.positions[e]) cell = cell * q + x[p];
        offsets[e] = (z * qd + cell) * static_cast<std::size_t>(k.m);
      }
      visit(w, offsets);
      for (std::size_t i = u; i-- > 0;) {
        if (++x[i] < q) break;
        x[i] = 0;
      }
    }
  }
}

std::size_t config_count(int m, std::size_t entries, std::uint64_t cap) {
  const std::size_t c = ipow(static_cast<std::size_t>(m), entries);
  if (c > cap) throw CapExceeded("joint law has " + std::to_string(c) + " configurations, over the cap");
  return c;
}

}  // namespace

double event_probability(const ArrayModel& model, const std::vector<DSubset>& entries, const std::vector<int>& symbols,
                         const Caps& caps) {
  if (entries.size() != symbols.size()) throw InvalidArgument("event_probability: one symbol per entry required");
  check_entries(model, entries);
  for (int a : symbols)
    if (a < 0 || a >= model.m()) throw InvalidArgument("event_probability: symbol outside the alphabet");
  CompensatedSum total;
  if (!model.generative()) {
    const auto& arr = model.as_atomic();
    std::vector<const std::vector<int>*> cols;
    for (const auto& s : entries) cols.push_back(&arr.column(s));
    for (std::size_t atom = 0; atom < arr.space->size(); ++atom) {
      bool hit = true;
      for (std::size_t e = 0; e < cols.size() && hit; ++e) hit = (*cols[e])[atom] == symbols[e];
      if (hit) total.add(arr.space->weight(atom));
    }
    return total.value();
  }
  const auto L = layout_of(entries);
  for (const auto& wk : model.kernels()) {
    CompensatedSum part;
    for_each_assignment(wk.kernel, L, caps.max_terms, [&](double w, const std::vector<std::size_t>& off) {
      for (std::size_t e = 0; e < off.size() && w != 0.0; ++e) w *= wk.kernel.h[off[e] + symbols[e]];
      part.add(w);
    });
    total.add(wk.weight * part.value());
  }
  return total.value();
}

std::vector<double> joint_law(const ArrayModel& model, const std::vector<DSubset>& entries, const Caps& caps) {
  check_entries(model, entries);
  const int m = model.m();
  const std::size_t configs = config_count(m, entries.size(), caps.max_terms);
  std::vector<CompensatedSum> acc(configs);
  if (!model.generative()) {
    const auto& arr = model.as_atomic();
    std::vector<const std::vector<int>*> cols;
    for (const auto& s : entries) cols.push_back(&arr.column(s));
    for (std::size_t atom = 0; atom < arr.space->size(); ++atom) {
      std::size_t idx = 0;
      for (const auto* c : cols) idx = idx * m + static_cast<std::size_t>((*c)[atom]);
      acc[idx].add(arr.space->weight(atom));
    }
  } else {
    const auto L = layout_of(entries);
    std::vector<double> cur;
    std::vector<double> next;
    for (const auto& wk : model.kernels()) {
      const auto& k = wk.kernel;
      const bool det = k.deterministic();
      const std::uint64_t per_term = det ? 1 : configs;
      const std::uint64_t budget = std::max<std::uint64_t>(1, caps.max_terms / std::max<std::uint64_t>(1, per_term));
      for_each_assignment(k, L, budget, [&](double w, const std::vector<std::size_t>& off) {
        w *= wk.weight;
        if (det) {
          std::size_t idx = 0;
          for (std::size_t o : off) {
            int a = 0;
            while (k.h[o + a] != 1.0) ++a;
            idx = idx * m + a;
          }
          acc[idx].add(w);
          return;
        }
        cur.assign(1, w);
        for (std::size_t o : off) {
          next.assign(cur.size() * m, 0.0);
          for (std::size_t i = 0; i < cur.size(); ++i)
            for (int a = 0; a < m; ++a) next[i * m + a] = cur[i] * k.h[o + a];
          cur.swap(next);
        }
        for (std::size_t i = 0; i < configs; ++i)
          if (cur[i] != 0.0) acc[i].add(cur[i]);
      });
    }
  }
  std::vector<double> pmf(configs);
  for (std::size_t i = 0; i < configs; ++i) pmf[i] = acc[i].value();
  return pmf;
}

SubarrayLaw law_of_subarray(const ArrayModel& model, const IndexSet& J, const Caps& caps) {
  if (static_cast<int>(J.size()) < model.d()) throw InvalidArgument("law_of_subarray: |J| < d");
  if (!is_strictly_increasing(J) || J.front() < 1 || J.back() > model.n())
    throw InvalidArgument("law_of_subarray: J must be a subset of [n]");
  SubarrayLaw law;
  law.window = J;
  law.entries = choose(J, model.d(), caps.max_subsets);
  law.m = model.m();
  law.pmf = joint_law(model, law.entries, caps);
  return law;
}

double tv_distance(const SubarrayLaw& P, const SubarrayLaw& Q) {
  if (P.m != Q.m || P.entries.size() != Q.entries.size() || P.pmf.size() != Q.pmf.size())
    throw InvalidArgument("tv_distance: laws have different shapes");
  if (P.window.size() != Q.window.size()) throw InvalidArgument("tv_distance: windows differ in size");
  CompensatedSum s;
  for (std::size_t i = 0; i < P.pmf.size(); ++i) s.add(std::abs(P.pmf[i] - Q.pmf[i]));
  return 0.5 * s.value();
}

SpreadabilityResult spreadability_defect(const ArrayModel& model, int k, const Caps& caps) {
  if (k < model.d() || k > model.n()) throw InvalidArgument("spreadability_defect: need d <= k <= n");
  const auto windows = choose(interval(1, model.n()), k, caps.max_subsets);
  std::vector<SubarrayLaw> laws;
  laws.reserve(windows.size());
  for (const auto& J : windows) laws.push_back(law_of_subarray(model, J, caps));
  const std::uint64_t pair_work = static_cast<std::uint64_t>(windows.size()) * windows.size() / 2 *
                                  std::max<std::size_t>(1, laws.front().pmf.size());
  if (pair_work > 50 * caps.max_terms) throw CapExceeded("spreadability_defect: too many window pairs");
  SpreadabilityResult r{0.0, windows.front(), windows.front()};
  for (std::size_t i = 0; i < laws.size(); ++i)
    for (std::size_t j = i + 1; j < laws.size(); ++j) {
      const double tv = tv_distance(laws[i], laws[j]);
      if (tv > r.defect) r = {tv, windows[i], windows[j]};
    }
  return r;
}

std::optional<IndexSet> find_spreadable_subarray(const ArrayModel& model, int target_n, double eta, const Caps& caps) {
  if (target_n < model.d() || target_n > model.n())
    throw InvalidArgument("find_spreadable_subarray: need d <= target_n <= n");
  for (const auto& J : choose(interval(1, model.n()), target_n, caps.max_subsets)) {
    const ArrayModel sub = model.restrict_to(J);
    double worst = 0.0;
    for (int k = model.d(); k <= target_n && worst <= eta; ++k) worst = std::max(worst, spreadability_defect(sub, k, caps).defect);
    if (worst <= eta) return J;
  }
  return std::nullopt;
}

SeededRng::SeededRng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t SeededRng::next() { return engine_(); }

double SeededRng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::size_t SeededRng::categorical(const std::vector<double>& probs) {
  const double u = uniform();
  double c = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last = i;
    c += probs[i];
    if (u < c) return i;
  }
  return last;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the pair
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<int> sample(const ArrayModel& model, std::uint64_t seed) {
  SeededRng rng(seed);
  const auto all = choose(interval(1, model.n()), model.d());
  std::vector<int> out(all.size());
  if (!model.generative()) {
    const auto& arr = model.as_atomic();
    const std::size_t atom = rng.categorical(arr.space->weights());
    for (std::size_t e = 0; e < all.size(); ++e) out[e] = arr.entries[e][atom];
    return out;
  }
  std::vector<double> lambda;
  for (const auto& wk : model.kernels()) lambda.push_back(wk.weight);
  const auto& k = model.kernels()[rng.categorical(lambda)].kernel;
  const std::size_t z = rng.categorical(k.seed_weights);
  std::vector<std::size_t> xi(static_cast<std::size_t>(model.n()) + 1);
  for (Index i = 1; i <= model.n(); ++i) xi[i] = rng.categorical(k.coord_weights);
  const std::size_t q = k.q();
  const std::size_t qd = ipow(q, static_cast<std::size_t>(k.d));
  std::vector<double> probs(k.m);
  for (std::size_t e = 0; e < all.size(); ++e) {
    std::size_t cell = 0;
    for (Index x : all[e]) cell = cell * q + xi[x];
    const std::size_t off = (z * qd + cell) * k.m;
    for (int a = 0; a < k.m; ++a) probs[a] = k.h[off + a];
    out[e] = static_cast<int>(rng.categorical(probs));
  }
  return out;
}

double entry_mean(const ArrayModel& model, const DSubset& s, const Caps& caps) {
  check_entries(model, {s});
  const auto& v = model.alphabet().values;
  if (!model.generative()) {
    const auto& arr = model.as_atomic();
    const auto& col = arr.column(s);
    CompensatedSum acc;
    for (std::size_t atom = 0; atom < col.size(); ++atom) acc.add(arr.space->weight(atom) * v[col[atom]]);
    return acc.value();
  }
  const auto L = layout_of({s});
  CompensatedSum total;
  for (const auto& wk : model.kernels()) {
    CompensatedSum part;
    for_each_assignment(wk.kernel, L, caps.max_terms, [&](double w, const std::vector<std::size_t>& off) {
      double e = 0.0;
      for (int a = 0; a < wk.kernel.m; ++a) e += v[a] * wk.kernel.h[off[0] + a];
      part.add(w * e);
    });
    total.add(wk.weight * part.value());
  }
  return total.value();
}

double pair_moment(const ArrayModel& model, const DSubset& s, const DSubset& t, const Caps& caps) {
  check_entries(model, {s, t});
  const auto& v = model.alphabet().values;
  if (!model.generative()) {
    const auto& arr = model.as_atomic();
    const auto& cs = arr.column(s);
    const auto& ct = arr.column(t);
    CompensatedSum acc;
    for (std::size_t atom = 0; atom < cs.size(); ++atom) acc.add(arr.space->weight(atom) * v[cs[atom]] * v[ct[atom]]);
    return acc.value();
  }
  const bool same = s == t;
  const auto L = same ? layout_of({s}) : layout_of({s, t});
  CompensatedSum total;
  for (const auto& wk : model.kernels()) {
    const auto& k = wk.kernel;
    CompensatedSum part;
    for_each_assignment(k, L, caps.max_terms, [&](double w, const std::vector<std::size_t>& off) {
      if (same) {
        double e = 0.0;
        for (int a = 0; a < k.m; ++a) e += v[a] * v[a] * k.h[off[0] + a];
        part.add(w * e);
        return;
      }
      double es = 0.0;
      double et = 0.0;
      for (int a = 0; a < k.m; ++a) {
        es += v[a] * k.h[off[0] + a];
        et += v[a] * k.h[off[1] + a];
      }
      part.add(w * es * et);
    });
    total.add(wk.weight * part.value());
  }
  return total.value();
}

PairMomentTable::PairMomentTable(const ArrayModel& model, Caps caps) : model_(model), caps_(caps) {}

namespace {

std::vector<int> order_pattern(const DSubset& s, const DSubset& t) {
  const IndexSet u = set_union(s, t);
  std::vector<int> key;
  key.reserve(u.size());
  for (Index x : u)
    key.push_back((std::binary_search(s.begin(), s.end(), x) ? 1 : 0) + (std::binary_search(t.begin(), t.end(), x) ? 2 : 0));
  return key;
}

std::vector<int> literal_key(const DSubset& s, const DSubset& t) {
  std::vector<int> key;
  for (Index x : s) key.push_back(static_cast<int>(x));
  key.push_back(0);
  for (Index x : t) key.push_back(static_cast<int>(x));
  return key;
}

}  // namespace

double PairMomentTable::operator()(const DSubset& s, const DSubset& t) {
  const auto key = model_.generative() ? order_pattern(s, t) : literal_key(s, t);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  ++evaluations_;
  const double v = pair_moment(model_, s, t, caps_);
  cache_.emplace(key, v);
  return v;
}

double PairMomentTable::mean(const DSubset& s) {
  const auto key = model_.generative() ? std::vector<int>{} : literal_key(s, {});
  auto it = mean_cache_.find(key);
  if (it != mean_cache_.end()) return it->second;
  const double v = entry_mean(model_, s, caps_);
  mean_cache_.emplace(key, v);
  return v;
}

RandomVariable LocalAtoms::indicator(std::size_t e, int a) const {
  std::vector<double> v(space->size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = symbols[e][i] == a ? 1.0 : 0.0;
  return RandomVariable(space, std::move(v));
}

RandomVariable LocalAtoms::value(std::size_t e, const Alphabet& alphabet) const {
  std::vector<double> v(space->size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = alphabet.values[symbols[e][i]];
  return RandomVariable(space, std::move(v));
}

std::size_t LocalAtoms::find(const DSubset& s) const {
  for (std::size_t e = 0; e < entries.size(); ++e)
    if (entries[e] == s) return e;
  throw InvalidArgument("LocalAtoms: entry " + to_string(s) + " was not materialized");
}

namespace {

// Enumerates symbol assignments with positive conditional probability.
template <class Sink>
void expand_atoms(const SeededKernel& k, const std::vector<std::size_t>& off, std::size_t e, double w,
                  std::vector<int>& digits, Sink&& sink) {
  if (e == off.size()) {
    sink(w);
    return;
  }
  for (int a = 0; a < k.m; ++a) {
    const double p = k.h[off[e] + a];
    if (p <= 0.0) continue;
    digits[e] = a;
    expand_atoms(k, off, e + 1, w * p, digits, sink);
  }
}

}  // namespace

LocalAtoms materialize(const ArrayModel& model, const std::vector<DSubset>& entries, const Caps& caps) {
  check_entries(model, entries);
  LocalAtoms out;
  out.entries = entries;
  out.symbols.assign(entries.size(), {});
  if (!model.generative()) {
    const auto& arr = model.as_atomic();
    out.space = arr.space;
    for (std::size_t e = 0; e < entries.size(); ++e) out.symbols[e] = arr.column(entries[e]);
    return out;
  }
  const auto L = layout_of(entries);
  std::vector<double> weights;
  std::vector<int> digits(entries.size());
  for (const auto& wk : model.kernels()) {
    const auto& k = wk.kernel;
    for_each_assignment(k, L, caps.max_terms, [&](double w, const std::vector<std::size_t>& off) {
      w *= wk.weight;
      if (w == 0.0) return;
      expand_atoms(k, off, 0, w, digits, [&](double weight) {
        weights.push_back(weight);
        if (weights.size() > caps.max_terms) throw CapExceeded("materialize: too many atoms");
        for (std::size_t i = 0; i < digits.size(); ++i) out.symbols[i].push_back(digits[i]);
      });
    });
  }
  CompensatedSum total;
  for (double w : weights) total.add(w);
  const double t = total.value();
  if (std::abs(t - 1.0) > 1e-9) throw InvalidArgument("materialize: atom weights sum to " + std::to_string(t));
  for (double& w : weights) w /= t;
  out.space = std::make_shared<const FiniteProbSpace>(std::move(weights));
  return out;
}

AtomicArray to_atomic(const ArrayModel& model, const Caps& caps) {
  if (!model.generative()) return model.as_atomic();
  auto entries = choose(interval(1, model.n()), model.d(), caps.max_subsets);
  auto local = materialize(model, entries, caps);
  return AtomicArray{model.n(), model.d(), local.space, std::move(local.symbols)};
}

}  // namespace spreadarray
