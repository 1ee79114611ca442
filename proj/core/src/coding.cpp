#include "spreadarray/coding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "json.hpp"
#include "spreadarray/errors.hpp"

namespace spreadarray {

namespace {

std::size_t upow(std::size_t b, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) {
    if (b != 0 && r > std::numeric_limits<std::size_t>::max() / b) throw CapExceeded("size overflow");
    r *= b;
  }
  return r;
}

double factorial(int d) {
  double f = 1.0;
  for (int i = 2; i <= d; ++i) f *= i;
  return f;
}

// Index of the sorted tuple among the classes, via a lookup over V^d.
std::vector<std::size_t> class_of_cell(std::size_t v, int d, const std::vector<std::vector<std::size_t>>& classes) {
  const std::size_t cells = upow(v, d);
  std::vector<std::size_t> rank_of_sorted(cells, 0);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::size_t cell = 0;
    for (std::size_t x : classes[c]) cell = cell * v + x;
    rank_of_sorted[cell] = c;
  }
  std::vector<std::size_t> out(cells);
  std::vector<std::size_t> digits(static_cast<std::size_t>(d));
  for (std::size_t cell = 0; cell < cells; ++cell) {
    std::size_t r = cell;
    for (int i = d; i-- > 0;) {
      digits[static_cast<std::size_t>(i)] = r % v;
      r /= v;
    }
    std::sort(digits.begin(), digits.end());
    std::size_t key = 0;
    for (std::size_t x : digits) key = key * v + x;
    out[cell] = rank_of_sorted[key];
  }
  return out;
}

}  // namespace

SymmetricPartition::SymmetricPartition(std::size_t v, int d, int m, std::vector<int> class_labels)
    : v_(v), d_(d), m_(m), labels_(std::move(class_labels)) {
  if (v == 0 || d < 1 || m < 1) throw InvalidArgument("SymmetricPartition: bad dimensions");
  if (static_cast<std::uint64_t>(labels_.size()) != binomial(v + static_cast<std::size_t>(d) - 1, static_cast<std::size_t>(d)))
    throw InvalidArgument("SymmetricPartition: one label per class required");
  for (int a : labels_)
    if (a < 0 || a >= m) throw InvalidArgument("SymmetricPartition: label out of range");
}

std::vector<std::vector<std::size_t>> SymmetricPartition::enumerate_classes(std::size_t v, int d, std::uint64_t cap) {
  const std::uint64_t count = binomial(v + static_cast<std::size_t>(d) - 1, static_cast<std::size_t>(d));
  if (count > cap) throw CapExceeded("symmetric classes exceed cap");
  std::vector<std::vector<std::size_t>> out;
  out.reserve(count);
  std::vector<std::size_t> t(static_cast<std::size_t>(d), 0);
  while (true) {
    out.push_back(t);
    int i = d - 1;
    while (i >= 0 && t[static_cast<std::size_t>(i)] == v - 1) --i;
    if (i < 0) break;
    const std::size_t next = t[static_cast<std::size_t>(i)] + 1;
    for (int j = i; j < d; ++j) t[static_cast<std::size_t>(j)] = next;
  }
  return out;
}

std::vector<std::vector<std::size_t>> SymmetricPartition::classes() const {
  return enumerate_classes(v_, d_, std::numeric_limits<std::uint64_t>::max());
}

std::vector<int> SymmetricPartition::cell_labels() const {
  const auto map = class_of_cell(v_, d_, classes());
  std::vector<int> out(map.size());
  for (std::size_t c = 0; c < map.size(); ++c) out[c] = labels_[map[c]];
  return out;
}

std::vector<std::size_t> SymmetricPartition::part_sizes() const {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(m_), 0);
  for (int a : labels_) ++sizes[static_cast<std::size_t>(a)];
  return sizes;
}

BoxFunction SymmetricPartition::indicator(int j) const {
  const auto cells = cell_labels();
  BoxFunction h{std::vector<double>(v_, 1.0 / static_cast<double>(v_)), d_, std::vector<double>(cells.size())};
  for (std::size_t c = 0; c < cells.size(); ++c) h.values[c] = cells[c] == j ? 1.0 : 0.0;
  return h;
}

namespace {

// Deviations ||1_{E_j} - lambda_j||_box for every part.
std::vector<double> deviations_of(const std::vector<int>& cells, std::size_t v, int d,
                                  const std::vector<double>& lambda, std::uint64_t cap) {
  std::vector<double> out;
  BoxFunction h{std::vector<double>(v, 1.0 / static_cast<double>(v)), d, std::vector<double>(cells.size())};
  for (std::size_t j = 0; j < lambda.size(); ++j) {
    for (std::size_t c = 0; c < cells.size(); ++c)
      h.values[c] = (cells[c] == static_cast<int>(j) ? 1.0 : 0.0) - lambda[j];
    out.push_back(box_norm(h, cap));
  }
  return out;
}

// Empty parts take the lex-first class of the currently largest part.
void repair_empty_parts(std::vector<int>& labels, int m) {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(m), 0);
  for (int a : labels) ++sizes[static_cast<std::size_t>(a)];
  for (int j = 0; j < m; ++j) {
    if (sizes[static_cast<std::size_t>(j)] > 0) continue;
    const auto big = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    const auto it = std::find(labels.begin(), labels.end(), big);
    *it = j;
    --sizes[static_cast<std::size_t>(big)];
    ++sizes[static_cast<std::size_t>(j)];
  }
}

}  // namespace

CodingResult random_symmetric_partition(std::size_t v, int d, const std::vector<double>& lambda, double epsilon,
                                        std::uint64_t seed, const CodingOptions& opts) {
  const int m = static_cast<int>(lambda.size());
  if (d < 2) throw InvalidArgument("random_symmetric_partition: d must be at least 2");
  if (m < 2) throw InvalidArgument("random_symmetric_partition: need at least two symbols");
  if (v == 0) throw InvalidArgument("random_symmetric_partition: empty ground set");
  for (double l : lambda)
    if (!(l > 0.0)) throw InvalidArgument("random_symmetric_partition: weights must be positive; drop unused symbols");
  FiniteProbSpace check(lambda);
  if (!(epsilon > 0.0)) throw InvalidArgument("random_symmetric_partition: epsilon must be positive");
  if (opts.max_retries < 1) throw InvalidArgument("random_symmetric_partition: max_retries must be positive");
  if (static_cast<double>(upow(v, 2 * d)) > static_cast<double>(opts.cap))
    throw CapExceeded("random_symmetric_partition: verification exceeds term cap");

  const auto classes = SymmetricPartition::enumerate_classes(v, d, opts.cap);
  if (classes.size() < static_cast<std::size_t>(m))
    throw Infeasible("random_symmetric_partition: fewer symmetric classes than symbols");
  const auto map = class_of_cell(v, d, classes);

  std::optional<CodingResult> best;
  for (int attempt = 0; attempt < opts.max_retries; ++attempt) {
    const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(attempt));
    SeededRng rng(s);
    std::vector<int> labels(classes.size());
    for (auto& l : labels) l = static_cast<int>(rng.categorical(lambda));
    repair_empty_parts(labels, m);
    std::vector<int> cells(map.size());
    for (std::size_t c = 0; c < map.size(); ++c) cells[c] = labels[map[c]];
    auto dev = deviations_of(cells, v, d, lambda, opts.cap);
    const double worst = *std::max_element(dev.begin(), dev.end());
    if (!best || worst < best->max_deviation)
      best = CodingResult{SymmetricPartition(v, d, m, std::move(labels)), std::move(dev), worst, attempt + 1, s,
                          worst <= epsilon};
    best->attempts = attempt + 1;
    if (best->verified) return *best;
  }
  if (opts.strict)
    throw RandomizedFailure("random_symmetric_partition: no attempt reached epsilon; best deviation " +
                            std::to_string(best->max_deviation));
  return *best;
}

DeviationBound expected_deviation_bound(std::size_t v, int d, int m, double epsilon) {
  if (d < 1 || m < 1 || !(epsilon > 0.0)) throw InvalidArgument("expected_deviation_bound: bad parameters");
  DeviationBound b;
  b.n0 = 5.0 * d * d * factorial(d) * m * std::pow(epsilon, -std::pow(2.0, d + 1));
  b.feasible = static_cast<double>(v) >= b.n0;
  return b;
}

double lift_size_bound(int d, int m, int kappa0, double epsilon) {
  const double e = std::pow(2.0, d + 1);
  return 5.0 * d * d * factorial(d) * m * std::pow(static_cast<double>(kappa0), e) * std::pow(epsilon, -e);
}

double subarray_lift_size_bound(int d, int m, int k, double epsilon) {
  const double e = std::pow(2.0, d + 1);
  return std::pow(static_cast<double>(m), 4.0 * std::pow(static_cast<double>(k), d) + 1.0) *
         std::pow(static_cast<double>(k), e) * std::pow(epsilon, -e);
}

LiftedPartition lift_kernel(const SeededKernel& kernel, int kappa0, double epsilon, std::size_t u,
                            std::uint64_t seed, const LiftOptions& opts) {
  if (kernel.d < 2) throw InvalidArgument("lift: d must be at least 2");
  if (kappa0 < 1) throw InvalidArgument("lift: kappa0 must be positive");
  if (!(epsilon > 0.0)) throw InvalidArgument("lift: epsilon must be positive");
  if (u == 0) throw InvalidArgument("lift: u must be positive");
  const std::size_t m = static_cast<std::size_t>(kernel.m);
  const std::size_t ycells = upow(kernel.q(), kernel.d);
  const std::size_t units = kernel.seed_weights.size() * ycells;
  const std::size_t ucells = upow(u, kernel.d);
  const double target = epsilon / kappa0;

  LiftedPartition out;
  out.seed_weights = kernel.seed_weights;
  out.y_weights = kernel.coord_weights;
  out.u = u;
  out.d = kernel.d;
  out.m = kernel.m;
  out.labels.resize(units);
  out.deviations.assign(units, std::vector<double>(m, 0.0));
  out.verified = true;

  CodingOptions copts{opts.max_retries, opts.strict, opts.cap};
  for (std::size_t unit = 0; unit < units; ++unit) {
    std::vector<int> symbols;
    std::vector<double> weights;
    for (std::size_t a = 0; a < m; ++a) {
      const double w = kernel.h[unit * m + a];
      if (w > 0.0) {
        symbols.push_back(static_cast<int>(a));
        weights.push_back(w);
      }
    }
    if (symbols.size() == 1) {
      out.labels[unit].assign(ucells, symbols[0]);
      continue;
    }
    // renormalize away float drift in the cell's weights
    const double total = compensated_sum(weights);
    for (double& w : weights) w /= total;
    CodingResult r = random_symmetric_partition(u, kernel.d, weights, target, derive_seed(seed, unit), copts);
    const auto cells = r.partition.cell_labels();
    out.labels[unit].resize(ucells);
    for (std::size_t c = 0; c < ucells; ++c) out.labels[unit][c] = symbols[static_cast<std::size_t>(cells[c])];
    for (std::size_t i = 0; i < symbols.size(); ++i)
      out.deviations[unit][static_cast<std::size_t>(symbols[i])] = r.deviations[i];
    out.max_deviation = std::max(out.max_deviation, r.max_deviation);
    out.verified = out.verified && r.verified;
  }
  return out;
}

LiftedPartition lift_partition_of_unity(const PartitionOfUnity& H, int kappa0, double epsilon, std::size_t u,
                                        std::uint64_t seed, const LiftOptions& opts) {
  H.validate();
  SeededKernel k;
  k.seed_weights = {1.0};
  k.coord_weights = H.base;
  k.d = H.d;
  k.m = static_cast<int>(H.funcs.size());
  const std::size_t cells = H.cells();
  k.h.resize(cells * H.funcs.size());
  for (std::size_t c = 0; c < cells; ++c)
    for (std::size_t a = 0; a < H.funcs.size(); ++a) k.h[c * H.funcs.size() + a] = H.funcs[a][c];
  return lift_kernel(k, kappa0, epsilon, u, seed, opts);
}

FunctionArray LiftedPartition::to_function_array() const {
  const std::size_t q = y_weights.size();
  const std::size_t qq = q * u;
  FunctionArray f;
  f.seed_weights = seed_weights;
  f.d = d;
  for (std::size_t y = 0; y < q; ++y)
    for (std::size_t t = 0; t < u; ++t) f.coord_weights.push_back(y_weights[y] / static_cast<double>(u));
  const std::size_t ycells = upow(q, d);
  const std::size_t cells = upow(qq, d);
  f.table.resize(seed_weights.size() * cells);
  for (std::size_t z = 0; z < seed_weights.size(); ++z) {
    for (std::size_t cell = 0; cell < cells; ++cell) {
      std::size_t r = cell, ycell = 0, tcell = 0, yscale = 1, tscale = 1;
      for (int i = 0; i < d; ++i) {
        const std::size_t x = r % qq;
        r /= qq;
        ycell += (x / u) * yscale;
        tcell += (x % u) * tscale;
        yscale *= q;
        tscale *= u;
      }
      f.table[z * cells + cell] = labels[z * ycells + ycell][tcell];
    }
  }
  return f;
}

CodingLawCheck verify_coding_law(const PartitionOfUnity& H, const LiftedPartition& E, const std::vector<DSubset>& F,
                                 const std::vector<int>& assignment, const Caps& caps) {
  if (F.empty()) throw InvalidArgument("verify_coding_law: F must be nonempty");
  if (F.size() != assignment.size()) throw InvalidArgument("verify_coding_law: one symbol per entry required");
  if (E.seed_weights.size() != 1 || E.y_weights != H.base || E.d != H.d ||
      E.m != static_cast<int>(H.funcs.size()))
    throw InvalidArgument("verify_coding_law: lifted partition does not match the partition of unity");
  Index n = 0;
  for (const auto& s : F) {
    if (static_cast<int>(s.size()) != H.d || !is_strictly_increasing(s) || s.front() < 1)
      throw InvalidArgument("verify_coding_law: entries must be increasing d-subsets of positive integers");
    n = std::max(n, s.back());
  }
  n = std::max<Index>(n, H.d);
  const Alphabet alpha = Alphabet::numeric(E.m);
  const ArrayModel source = ArrayModel::mixture(n, MixtureModel{{1.0}, {H}}, alpha);
  const ArrayModel coded = ArrayModel::function(n, E.to_function_array(), alpha);
  CodingLawCheck r;
  r.lhs = event_probability(source, F, assignment, caps);
  r.rhs = event_probability(coded, F, assignment, caps);
  r.diff = std::abs(r.lhs - r.rhs);
  return r;
}

std::string partition_to_json(const CodingResult& r, const std::vector<double>& lambda, double epsilon) {
  using json = nlohmann::ordered_json;
  const auto& p = r.partition;
  const auto classes = p.classes();
  json parts = json::array();
  for (int j = 0; j < p.m(); ++j) {
    json part = json::array();
    for (std::size_t c = 0; c < classes.size(); ++c)
      if (p.class_labels()[c] == j) part.push_back(classes[c]);
    parts.push_back(std::move(part));
  }
  json out;
  out["ground_size"] = p.ground_size();
  out["d"] = p.d();
  out["lambda"] = lambda;
  out["epsilon"] = epsilon;
  out["attempts"] = r.attempts;
  out["attempt_seed"] = r.attempt_seed;
  out["verified"] = r.verified;
  out["deviations"] = r.deviations;
  out["max_deviation"] = r.max_deviation;
  out["parts"] = std::move(parts);
  return out.dump(2) + "\n";
}

}  // namespace spreadarray
