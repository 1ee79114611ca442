// Batch front end: every subcommand loads its inputs, runs one analysis and
// writes one JSON (or text) report.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "spreadarray/boxnorm.hpp"
#include "spreadarray/coding.hpp"
#include "spreadarray/decomp.hpp"
#include "spreadarray/errors.hpp"
#include "spreadarray/extraction.hpp"
#include "spreadarray/model_io.hpp"
#include "spreadarray/models.hpp"

#ifndef SPREADARRAY_VERSION
#define SPREADARRAY_VERSION "unknown"
#endif

namespace {

using json = nlohmann::ordered_json;
using namespace spreadarray;

constexpr int kExitOk = 0;
constexpr int kExitParse = 2;
constexpr int kExitCaps = 3;
constexpr int kExitInfeasible = 4;
constexpr int kExitRandomized = 5;
constexpr int kReportVersion = 1;

// Raised after the report has been written, to signal a randomized failure.
struct DeferredExit {
  int code;
  std::string message;
};

struct Common {
  std::string model_path;
  std::string out = "-";
  std::uint64_t seed = 0;
  std::string format = "json";
  std::optional<std::uint64_t> cap_terms;
  bool timing = false;
};

struct Params {
  std::optional<int> d;
  std::optional<long long> k;
  std::optional<long long> kappa;
  std::optional<double> epsilon;
  std::optional<double> theta;
  // subcommand specific
  std::string lambda;
  std::size_t v = 64;
  int retries = 20;
  std::string partition_out;
  long long ell0 = 1;
  std::size_t u = 6;
  int max_depth = 2;
  bool normalize = false;
  bool lattice = false;
  double eta = -1.0;
  long long target_n = 0;
  std::string s1, s2, t1, t2;
  std::string entries;
  std::string F, G;
};

Caps caps_from(const Common& c) {
  Caps caps;
  if (const char* env = std::getenv("SPREADARRAY_CAP_TERMS")) {
    try {
      caps.max_terms = std::stoull(env);
    } catch (const std::exception&) {
      throw InvalidArgument("SPREADARRAY_CAP_TERMS is not a nonnegative integer");
    }
  }
  if (c.cap_terms) caps.max_terms = *c.cap_terms;
  return caps;
}

json jnum(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

json jset(const IndexSet& s) {
  json a = json::array();
  for (Index x : s) a.push_back(x);
  return a;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

IndexSet parse_set(const std::string& s, const char* what) {
  IndexSet out;
  for (const auto& tok : split(s, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoll(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw InvalidArgument(std::string("--") + what + ": not an integer list: " + s);
    }
  }
  if (!is_strictly_increasing(out)) throw InvalidArgument(std::string("--") + what + ": indices must increase");
  return out;
}

std::vector<double> parse_reals(const std::string& s, const char* what) {
  std::vector<double> out;
  for (const auto& tok : split(s, ',')) {
    try {
      out.push_back(parse_decimal(tok));
    } catch (const std::exception&) {
      throw InvalidArgument(std::string("--") + what + ": not a decimal list: " + s);
    }
  }
  return out;
}

void write_atomic(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    std::cout.flush();
    return;
  }
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << text;
    f.flush();
    if (!f) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, target);
}

void render_text(const json& j, const std::string& prefix, std::ostringstream& out) {
  if (j.is_object()) {
    for (const auto& [key, val] : j.items()) render_text(val, prefix.empty() ? key : prefix + "." + key, out);
  } else if (j.is_array() && !j.empty() && (j.front().is_object() || j.front().is_array())) {
    for (std::size_t i = 0; i < j.size(); ++i) render_text(j[i], prefix + "[" + std::to_string(i) + "]", out);
  } else {
    out << prefix << " = " << j.dump() << "\n";
  }
}

std::string render(const json& report, const std::string& format) {
  if (format == "text") {
    std::ostringstream out;
    render_text(report, "", out);
    return out.str();
  }
  return report.dump(2) + "\n";
}

std::uint64_t seed_of(const json& config) { return config.at("seed").get<std::uint64_t>(); }

ArrayModel need_model(const Common& c) {
  if (c.model_path.empty()) throw InvalidArgument("--model is required");
  return load_model(c.model_path);
}

// ---------------------------------------------------------------- subcommands

json cmd_spreadability(const Common& c, const Params& p, json& config) {
  const auto model = need_model(c);
  const auto caps = caps_from(c);
  const int kmax = static_cast<int>(p.k.value_or(std::min<long long>(model.n(), model.d() + 2)));
  config["k"] = kmax;
  if (kmax < model.d() || kmax > model.n()) throw Infeasible("--k must lie in [d, n]");
  json rows = json::array();
  double worst = 0.0;
  json worst_pair = nullptr;
  for (int k = model.d(); k <= kmax; ++k) {
    const auto r = spreadability_defect(model, k, caps);
    rows.push_back({{"k", k}, {"defect", jnum(r.defect)}, {"J", jset(r.worst_J)}, {"K", jset(r.worst_K)}});
    if (r.defect > worst || worst_pair.is_null()) {
      worst = std::max(worst, r.defect);
      worst_pair = {{"k", k}, {"J", jset(r.worst_J)}, {"K", jset(r.worst_K)}};
    }
  }
  json result = {{"per_k", rows}, {"defect", jnum(worst)}, {"worst", worst_pair}};
  if (p.eta >= 0.0) {
    config["eta"] = p.eta;
    config["target_n"] = p.target_n;
    const auto J = find_spreadable_subarray(model, static_cast<int>(p.target_n), p.eta, caps);
    result["spreadable_subarray"] = J ? jset(*J) : json(nullptr);
  }
  return result;
}

json cmd_decompose(const Common& c, const Params& p, json& config) {
  const auto model = need_model(c);
  const auto caps = caps_from(c);
  const int d = model.d();
  if (p.d && *p.d != d) throw InvalidArgument("--d does not match the model dimension");
  const long long kappa = p.kappa.value_or(2);
  const long long k = p.k.value_or(d);
  config["kappa"] = kappa;
  config["k"] = k;
  config["normalize"] = p.normalize;
  config["lattice"] = p.lattice;
  const auto plan = build_plan(model.n(), d, kappa, k);
  auto mom = std::make_shared<EntryMoments>(model, p.normalize, caps);
  const auto dp = decompose(mom, plan);
  const auto rep = analyze_decomposition(dp);
  json result;
  result["plan"] = json::parse(plan.to_json());
  result["plan_invariants"] = plan.check_invariants().empty() ? "ok" : plan.check_invariants();
  result["analysis"] = json::parse(rep.to_json(plan));
  if (p.lattice) {
    json rows = json::array();
    for (std::size_t a = 0; a < plan.maps.size(); ++a)
      for (std::size_t b = 0; b < plan.maps.size(); ++b) {
        if (a == b) continue;
        const auto& p1 = plan.maps[a];
        const auto& p2 = plan.maps[b];
        if (!align(p1, p2).aligned) continue;
        const auto lr = verify_lattice(dp, p1, p2, true);
        rows.push_back({{"p1", p1.to_string()},
                        {"p2", p2.to_string()},
                        {"meet", lr.meet.to_string()},
                        {"defect", lr.conditional_computed ? jnum(lr.defect) : json(nullptr)},
                        {"bound", jnum(lr.bound)},
                        {"transfer_defect", lr.conditional_computed ? jnum(lr.transfer_defect) : json(nullptr)},
                        {"correlation_gap", jnum(lr.correlation_gap)},
                        {"orbit_defect", jnum(lr.orbit_defect)},
                        {"skipped", lr.skipped_reason},
                        {"holds", lr.holds}});
      }
    result["lattice"] = rows;
  }
  const double eps = p.epsilon.value_or(1.0);
  config["epsilon"] = eps;
  const auto t16 = theorem16_parameters(d, eps, static_cast<double>(model.n()));
  result["theorem_constants"] = {{"epsilon", eps},
                                 {"kappa", t16.kappa},
                                 {"c", jnum(t16.c)},
                                 {"log10_n0", jnum(t16.log10_n0)},
                                 {"k_at_n", jnum(t16.k)},
                                 {"note", "the plan only needs n >= 2 kappa^2 d (k+1)^(d+1); n0 is reported, not required"}};
  if (p.epsilon) {
    const auto shifted = build_plan(model.n(), d, kappa, k, 1);
    const auto Z = decompose(mom, shifted);
    result["uniqueness"] = json::parse(uniqueness_check(dp, Z, eps).to_json());
  }
  return result;
}

json cmd_boxcode(const Common&, const Params& p, json& config) {
  const int d = p.d.value_or(2);
  const auto lambda = p.lambda.empty() ? std::vector<double>{0.5, 0.5} : parse_reals(p.lambda, "lambda");
  const double eps = p.epsilon.value_or(0.22);
  config["d"] = d;
  config["lambda"] = lambda;
  config["v"] = p.v;
  config["epsilon"] = eps;
  config["retries"] = p.retries;
  CodingOptions opts;
  opts.max_retries = p.retries;
  opts.strict = false;
  const auto r = random_symmetric_partition(p.v, d, lambda, eps, seed_of(config), opts);
  if (!p.partition_out.empty()) {
    config["partition_out"] = p.partition_out;
    write_atomic(p.partition_out, partition_to_json(r, lambda, eps));
  }
  json recomputed = json::array();
  double worst_gap = 0.0;
  for (int j = 0; j < static_cast<int>(lambda.size()); ++j) {
    const double dev = box_norm(r.partition.indicator(j).shifted(lambda[j]), opts.cap);
    recomputed.push_back(jnum(dev));
    worst_gap = std::max(worst_gap, std::abs(dev - r.deviations[j]));
  }
  const auto bound = expected_deviation_bound(p.v, d, static_cast<int>(lambda.size()), eps);
  json parts = json::array();
  for (auto sz : r.partition.part_sizes()) parts.push_back(sz);
  json result = {{"attempts", r.attempts},
                 {"attempt_seed", r.attempt_seed},
                 {"deviations", r.deviations},
                 {"max_deviation", jnum(r.max_deviation)},
                 {"verified", r.verified},
                 {"recomputed_deviations", recomputed},
                 {"recomputation_gap", jnum(worst_gap)},
                 {"part_sizes_in_classes", parts},
                 {"guarantee", {{"n0", jnum(bound.n0)}, {"feasible_at_v", bound.feasible}}}};
  if (!r.verified) result["failure"] = "retries exhausted; best partition emitted";
  return result;
}

json cmd_boxindep(const Common& c, const Params& p, json& config) {
  const auto model = need_model(c);
  const auto caps = caps_from(c);
  const auto [least, omitted] = least_box_independence(model, caps);
  json box = json::array();
  for (const auto& [a, b] : least.worst_box.blocks) box.push_back(json::array({a, b}));
  json result = {{"defect", jnum(least.defect)}, {"omitted_symbol", omitted}, {"worst_box", box},
                 {"worst_symbol", least.worst_symbol}};
  if (model.kind() == ArrayModel::Kind::Mixture) {
    BoxSelectionParams sp;
    sp.epsilon = p.epsilon.value_or(0.0);
    sp.vartheta = p.theta.value_or(0.1);
    config["epsilon"] = sp.epsilon;
    config["theta"] = sp.vartheta;
    const auto sel = characterize_box_independence(model, sp, caps);
    json G = json::array();
    for (auto g : sel.selected) G.push_back(g);
    result["selection"] = {{"Theta", jnum(sel.Theta)},
                           {"rho", jnum(sel.rho)},
                           {"mean_threshold", jnum(sel.mean_threshold)},
                           {"box_threshold", jnum(sel.box_threshold)},
                           {"selected", G},
                           {"selected_mass", jnum(sel.selected_mass)},
                           {"markov_bound", jnum(sel.markov_bound)},
                           {"inherited_defect", jnum(sel.inherited_defect)}};
    const auto fwd = forward_box_independence(model, sel.selected, sp.epsilon, caps);
    result["forward"] = {{"rho", jnum(fwd.rho)}, {"bound", jnum(fwd.bound)}, {"measured", jnum(fwd.measured)},
                         {"holds", fwd.holds}};
  }
  return result;
}

json cmd_extract(const Common& c, const Params& p, json& config) {
  const auto model = need_model(c);
  ExtractParams ep;
  ep.k = static_cast<int>(p.k.value_or(2));
  ep.theta = p.theta.value_or(0.25);
  ep.ell0 = p.ell0;
  ep.u = p.u;
  ep.coding_epsilon = p.epsilon.value_or(0.5);
  ep.max_retries = p.retries;
  ep.max_depth = p.max_depth;
  ep.seed = c.seed;
  config["k"] = ep.k;
  config["theta"] = ep.theta;
  config["ell0"] = ep.ell0;
  config["u"] = ep.u;
  config["epsilon"] = ep.coding_epsilon;
  config["retries"] = ep.max_retries;
  config["max_depth"] = ep.max_depth;
  const auto out = extract(model, ep, caps_from(c));
  return json::parse(out.to_json());
}

json cmd_twopoint(const Common& c, const Params& p, json& config) {
  const auto model = need_model(c);
  auto mom = EntryMoments(model, p.normalize, caps_from(c));
  IndexSet s1, s2, t1, t2;
  if (p.s1.empty() && p.s2.empty() && p.t1.empty() && p.t2.empty()) {
    if (model.d() != 2) throw InvalidArgument("twopoint: give --s1 --s2 --t1 --t2 when d != 2");
    s1 = {1, 2};
    s2 = {3, 4};
    t1 = {1, 3};
    t2 = {2, 4};
  } else {
    s1 = parse_set(p.s1, "s1");
    s2 = parse_set(p.s2, "s2");
    t1 = parse_set(p.t1, "t1");
    t2 = parse_set(p.t2, "t2");
  }
  config["s1"] = jset(s1);
  config["s2"] = jset(s2);
  config["t1"] = jset(t1);
  config["t2"] = jset(t2);
  config["normalize"] = p.normalize;
  const auto g = two_point_gap(mom, s1, s2, t1, t2);
  return {{"gap", jnum(g.gap)},
          {"bound", jnum(g.bound)},
          {"d2_bound", g.d2_bound ? jnum(*g.d2_bound) : json(nullptr)},
          {"root", g.root},
          {"holds", g.holds}};
}

json cmd_orbit(const Common& c, const Params& p, json& config) {
  const auto model = need_model(c);
  auto mom = EntryMoments(model, p.normalize, caps_from(c));
  if (p.entries.empty()) throw InvalidArgument("orbit: --entries is required (sets separated by ';')");
  std::vector<DSubset> entries;
  for (const auto& tok : split(p.entries, ';')) entries.push_back(parse_set(tok, "entries"));
  const auto fam = OrbitFamily::from_entries(mom, entries);
  auto positions = [&](const std::string& s, std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> out;
    if (s.empty()) {
      for (std::size_t i = lo; i < hi; ++i) out.push_back(i);
      return out;
    }
    for (Index x : parse_set(s, "F/G")) {
      if (x < 0) throw InvalidArgument("orbit: positions are 0-based and nonnegative");
      out.push_back(static_cast<std::size_t>(x));
    }
    return out;
  };
  const auto F = positions(p.F, 0, fam.size() / 2);
  const auto G = positions(p.G, fam.size() / 2, fam.size());
  json ej = json::array();
  for (const auto& s : entries) ej.push_back(jset(s));
  config["entries"] = ej;
  config["F"] = F;
  config["G"] = G;
  config["normalize"] = p.normalize;
  const auto u = universality_check(fam, F, G);
  return {{"defect", jnum(u.eta)}, {"lhs", jnum(u.lhs)}, {"bound", jnum(u.bound)}, {"holds", u.holds}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Analyses of finite spreadable random arrays"};
  app.set_version_flag("--version", std::string(SPREADARRAY_VERSION));
  app.require_subcommand(1);
  Common common;
  Params params;

  auto add_common = [&](CLI::App* sub, bool with_model) {
    if (with_model) sub->add_option("--model", common.model_path, "Model spec (JSON)")->required();
    sub->add_option("--out", common.out, "Report path, '-' for stdout");
    sub->add_option("--seed", common.seed, "Seed for randomized steps");
    sub->add_option("--format", common.format, "json or text")->check(CLI::IsMember({"json", "text"}));
    sub->add_option("--cap-terms", common.cap_terms, "Summation term cap (overrides SPREADARRAY_CAP_TERMS)");
    sub->add_flag("--timing", common.timing, "Record wall time (breaks byte-identical reruns)");
  };

  auto* spread = app.add_subcommand("spreadability", "Spreadability defect per window size");
  add_common(spread, true);
  spread->add_option("--k", params.k, "Largest window size");
  spread->add_option("--eta", params.eta, "Also search for an eta-spreadable subarray");
  spread->add_option("--target-n", params.target_n, "Size of the searched subarray");

  auto* dec = app.add_subcommand("decompose", "Orbit-average decomposition and its checks");
  add_common(dec, true);
  dec->add_option("--d", params.d, "Dimension (must match the model)");
  dec->add_option("--k", params.k, "Size of the selected index set");
  dec->add_option("--kappa", params.kappa, "Orbit length (at least 2)");
  dec->add_option("--epsilon", params.epsilon, "Run the uniqueness comparison at this epsilon");
  dec->add_flag("--normalize", params.normalize, "Rescale entries to unit norm");
  dec->add_flag("--lattice", params.lattice, "Conditional-expectation checks on every aligned pair");

  auto* boxcode = app.add_subcommand("boxcode", "Random symmetric partition with small box deviations");
  add_common(boxcode, false);
  boxcode->add_option("--d", params.d, "Dimension (at least 2)");
  boxcode->add_option("--lambda", params.lambda, "Target weights, comma separated");
  boxcode->add_option("--v", params.v, "Ground set size");
  boxcode->add_option("--epsilon", params.epsilon, "Deviation target");
  boxcode->add_option("--retries", params.retries, "Attempts before giving up");
  boxcode->add_option("--partition-out", params.partition_out, "Where to write the partition");

  auto* boxindep = app.add_subcommand("boxindep", "Box independence defect and component selection");
  add_common(boxindep, true);
  boxindep->add_option("--epsilon", params.epsilon, "Law distance to the mixture");
  boxindep->add_option("--theta", params.theta, "Target box independence level");

  auto* ext = app.add_subcommand("extract", "Extract a partition reproducing the finite laws");
  add_common(ext, true);
  ext->add_option("--k", params.k, "Number of selected indices");
  ext->add_option("--theta", params.theta, "Level-selection threshold");
  ext->add_option("--ell0", params.ell0, "Level cap");
  ext->add_option("--u", params.u, "Lift block size");
  ext->add_option("--epsilon", params.epsilon, "Coding target");
  ext->add_option("--retries", params.retries, "Coding attempts");
  ext->add_option("--max-depth", params.max_depth, "Recursion depth limit");

  auto* two = app.add_subcommand("twopoint", "Compare two aligned two-point correlations");
  add_common(two, true);
  two->add_option("--s1", params.s1, "First set, e.g. 1,2");
  two->add_option("--s2", params.s2);
  two->add_option("--t1", params.t1);
  two->add_option("--t2", params.t2);
  two->add_flag("--normalize", params.normalize, "Rescale entries to unit norm");

  auto* orb = app.add_subcommand("orbit", "Orbit defect and universality of averages");
  add_common(orb, true);
  orb->add_option("--entries", params.entries, "Member sets, e.g. '1,5;2,5;3,5'");
  orb->add_option("--F", params.F, "0-based member positions of the first average");
  orb->add_option("--G", params.G, "0-based member positions of the second average");
  orb->add_flag("--normalize", params.normalize, "Rescale entries to unit norm");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitParse;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  json config;
  config["subcommand"] = name;
  if (!common.model_path.empty()) config["model"] = common.model_path;
  config["seed"] = common.seed;
  config["format"] = common.format;
  const auto start = std::chrono::steady_clock::now();
  try {
    config["cap_terms"] = caps_from(common).max_terms;
    json result;
    if (name == "spreadability") result = cmd_spreadability(common, params, config);
    else if (name == "decompose") result = cmd_decompose(common, params, config);
    else if (name == "boxcode") result = cmd_boxcode(common, params, config);
    else if (name == "boxindep") result = cmd_boxindep(common, params, config);
    else if (name == "extract") result = cmd_extract(common, params, config);
    else if (name == "twopoint") result = cmd_twopoint(common, params, config);
    else result = cmd_orbit(common, params, config);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json report;
    report["tool"] = "spreadarray";
    report["version"] = SPREADARRAY_VERSION;
    report["report_version"] = kReportVersion;
    report["config"] = config;
    report["seed"] = common.seed;
    report["wall_time_seconds"] = common.timing ? json(secs) : json(nullptr);
    report["result"] = result;
    write_atomic(common.out, render(report, common.format));
    if (name == "boxcode" && !result.value("verified", false))
      throw DeferredExit{kExitRandomized, "boxcode: retries exhausted; best-effort partition written"};
    return kExitOk;
  } catch (const DeferredExit& e) {
    std::cerr << e.message << "\n";
    return e.code;
  } catch (const ModelParseError& e) {
    std::cerr << "parse error";
    if (e.line() > 0) std::cerr << " at line " << e.line() << ", column " << e.column();
    std::cerr << ": " << e.what() << "\n";
    return kExitParse;
  } catch (const Infeasible& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitParse;
  } catch (const CapExceeded& e) {
    std::cerr << "cap exceeded: " << e.what() << "\n";
    return kExitCaps;
  } catch (const RandomizedFailure& e) {
    std::cerr << "randomized failure: " << e.what() << "\n";
    return kExitRandomized;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
