#include "spreadarray/model_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace spreadarray {

using nlohmann::ordered_json;

std::string format_decimal(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_decimal(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) throw ModelParseError("not a decimal number: \"" + s + "\"", 0, 0);
  return v;
}

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ModelParseError(where + ": " + what, 0, 0);
}

const ordered_json& field(const ordered_json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) fail(where, std::string("missing field \"") + key + "\"");
  return j.at(key);
}

std::vector<double> decimals(const ordered_json& j, const std::string& where) {
  if (!j.is_array()) fail(where, "expected an array of decimal strings");
  std::vector<double> out;
  for (const auto& x : j) {
    if (!x.is_string()) fail(where, "probabilities and values must be decimal strings");
    out.push_back(parse_decimal(x.get<std::string>()));
  }
  return out;
}

std::vector<int> integers(const ordered_json& j, const std::string& where) {
  if (!j.is_array()) fail(where, "expected an array of integers");
  std::vector<int> out;
  for (const auto& x : j) {
    if (!x.is_number_integer()) fail(where, "expected integers");
    out.push_back(x.get<int>());
  }
  return out;
}

ordered_json decimal_array(const std::vector<double>& xs) {
  ordered_json a = ordered_json::array();
  for (double x : xs) a.push_back(format_decimal(x));
  return a;
}

std::pair<int, int> line_column(const std::string& text, std::size_t byte) {
  int line = 1;
  int col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

ArrayModel parse_model(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::parse_error& e) {
    // byte is 1-based and points just past the offending character
    const auto [line, col] = line_column(text, e.byte > 0 ? e.byte - 1 : 0);
    std::string msg = e.what();
    if (const auto pos = msg.find(" - "); pos != std::string::npos) msg = msg.substr(pos + 3);
    throw ModelParseError("malformed JSON: " + msg, line, col);
  }
  const auto version = field(j, "spec_version", "model");
  if (!version.is_number_integer() || version.get<int>() != kModelSpecVersion)
    fail("model", "unsupported spec_version (expected 1)");
  const auto kind = field(j, "kind", "model");
  if (!kind.is_string()) fail("model", "kind must be a string");
  const auto& nj = field(j, "n", "model");
  const auto& dj = field(j, "d", "model");
  if (!nj.is_number_integer() || !dj.is_number_integer()) fail("model", "n and d must be integers");
  const Index n = nj.get<Index>();
  const int d = dj.get<int>();

  const auto& aj = field(j, "alphabet", "model");
  Alphabet alphabet;
  const auto& labels = field(aj, "labels", "alphabet");
  if (!labels.is_array() || labels.empty()) fail("alphabet", "labels must be a nonempty array");
  for (const auto& l : labels) {
    if (!l.is_string()) fail("alphabet", "labels must be strings");
    alphabet.labels.push_back(l.get<std::string>());
  }
  if (aj.contains("values")) {
    alphabet.values = decimals(aj.at("values"), "alphabet.values");
    if (alphabet.values.size() != alphabet.labels.size()) fail("alphabet", "values and labels differ in length");
  } else {
    for (std::size_t i = 0; i < alphabet.labels.size(); ++i) alphabet.values.push_back(static_cast<double>(i));
  }

  const std::string k = kind.get<std::string>();
  if (k == "atomic") {
    const auto& p = field(j, "atomic", "model");
    auto weights = decimals(field(p, "weights", "atomic"), "atomic.weights");
    AtomicArray arr{n, d, std::make_shared<const FiniteProbSpace>(std::move(weights)), {}};
    const auto& entries = field(p, "entries", "atomic");
    if (!entries.is_array()) fail("atomic.entries", "expected an array");
    for (const auto& col : entries) arr.entries.push_back(integers(col, "atomic.entries"));
    return ArrayModel::atomic(std::move(arr), std::move(alphabet));
  }
  if (k == "mixture") {
    const auto& p = field(j, "mixture", "model");
    MixtureModel mix;
    mix.weights = decimals(field(p, "weights", "mixture"), "mixture.weights");
    const auto& comps = field(p, "components", "mixture");
    if (!comps.is_array()) fail("mixture.components", "expected an array");
    for (const auto& c : comps) {
      PartitionOfUnity h;
      h.d = d;
      h.base = decimals(field(c, "base", "component"), "component.base");
      const auto& hs = field(c, "h", "component");
      if (!hs.is_array()) fail("component.h", "expected one table per symbol");
      for (const auto& f : hs) h.funcs.push_back(decimals(f, "component.h"));
      mix.components.push_back(std::move(h));
    }
    return ArrayModel::mixture(n, std::move(mix), std::move(alphabet));
  }
  if (k == "function") {
    const auto& p = field(j, "function", "model");
    FunctionArray f;
    f.d = d;
    f.seed_weights = decimals(field(p, "seed_weights", "function"), "function.seed_weights");
    f.coord_weights = decimals(field(p, "coord_weights", "function"), "function.coord_weights");
    f.table = integers(field(p, "table", "function"), "function.table");
    return ArrayModel::function(n, std::move(f), std::move(alphabet));
  }
  fail("model", "unknown kind \"" + k + "\"");
}

ArrayModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open model file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

std::string dump_model(const ArrayModel& model) {
  ordered_json j;
  j["spec_version"] = kModelSpecVersion;
  switch (model.kind()) {
    case ArrayModel::Kind::Atomic: j["kind"] = "atomic"; break;
    case ArrayModel::Kind::Mixture: j["kind"] = "mixture"; break;
    case ArrayModel::Kind::Function: j["kind"] = "function"; break;
  }
  j["n"] = model.n();
  j["d"] = model.d();
  j["alphabet"] = {{"labels", model.alphabet().labels}, {"values", decimal_array(model.alphabet().values)}};
  switch (model.kind()) {
    case ArrayModel::Kind::Atomic: {
      const auto& a = model.as_atomic();
      j["atomic"] = {{"weights", decimal_array(a.space->weights())}, {"entries", a.entries}};
      break;
    }
    case ArrayModel::Kind::Mixture: {
      const auto& mix = model.as_mixture();
      ordered_json comps = ordered_json::array();
      for (const auto& c : mix.components) {
        ordered_json hs = ordered_json::array();
        for (const auto& f : c.funcs) hs.push_back(decimal_array(f));
        comps.push_back({{"base", decimal_array(c.base)}, {"h", hs}});
      }
      j["mixture"] = {{"weights", decimal_array(mix.weights)}, {"components", comps}};
      break;
    }
    case ArrayModel::Kind::Function: {
      const auto& f = model.as_function();
      j["function"] = {{"seed_weights", decimal_array(f.seed_weights)},
                       {"coord_weights", decimal_array(f.coord_weights)},
                       {"table", f.table}};
      break;
    }
  }
  return j.dump(2) + "\n";
}

}  // namespace spreadarray
