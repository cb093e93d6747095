#include "region_gain/system_spec.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "region_gain/expr.hpp"

namespace region_gain {

using nlohmann::json;

namespace {

// Built-in documents. "planar-example" keeps the reference gains (factor 1.3);
// "planar-example-corrected" uses gains for which the ISS implications hold.
const char* kPlanarExample = R"js({
  "name": "planar-example",
  "dimensions": {"n": 1, "m": 1},
  "fields": {
    "f": ["-1.5*x1 + 2*(z1^3/3 - 3*z1^2/2 + 2*z1)"],
    "g": ["-z1 + sin(x1^2/10)"]
  },
  "storage": {"V": "abs(x1)", "W": "abs(z1)"},
  "gains": {
    "gamma": {"running_max_of": "s^3/3 - 3*s^2/2 + 2*s", "factor": 1.3},
    "delta": {"running_max_of": "sin(s^2/10)"}
  },
  "thresholds": {"local": {"M_hi": 2, "N_hi": 1}, "global": {"M_lo": 7, "N_lo": 1}},
  "sampling": {"seed": 42, "n_samples": 4000, "box": 10},
  "simulation": {"T": 50, "dt": 0.001, "method": "rk4", "output_stride": 100}
})js";

const char* kPlanarExampleCorrected = R"js({
  "name": "planar-example-corrected",
  "dimensions": {"n": 1, "m": 1},
  "fields": {
    "f": ["-1.5*x1 + 2*(z1^3/3 - 3*z1^2/2 + 2*z1)"],
    "g": ["-z1 + sin(x1^2/10)"]
  },
  "storage": {"V": "abs(x1)", "W": "abs(z1)"},
  "gains": {
    "local": {
      "gamma": {"running_max_of": "max(abs(s^3/3 - 3*s^2/2 + 2*s), abs(-s^3/3 - 3*s^2/2 - 2*s))", "factor": 1.4},
      "delta": {"running_max_of": "sin(s^2/10)", "factor": 1.05}
    },
    "global": {
      "gamma": {"expr": "1.4*(s^3/3 + 3*s^2/2 + 2*s)"},
      "delta": {"expr": "1.05*sin(min(s, 3.9633272976060101)^2/10) + 0.05*s^0.25"}
    }
  },
  "thresholds": {"local": {"M_hi": 2, "N_hi": 1}, "global": {"M_lo": 7, "N_lo": 1}},
  "sampling": {"seed": 42, "n_samples": 4000, "box": 10},
  "simulation": {"T": 50, "dt": 0.001, "method": "rk4", "output_stride": 100}
})js";

const char* kBilimitClass = R"js({
  "name": "bilimit-class",
  "dimensions": {"n": 1, "m": 1},
  "fields": {
    "f": ["-x1 + z1*(0.6 + 0.8*exp(-(abs(z1) - 2)^2))"],
    "g": ["-z1 + x1*(0.6 + 0.8*exp(-(abs(x1) - 2)^2))"]
  },
  "storage": {"V": "abs(x1)", "W": "abs(z1)"},
  "gains": {
    "gamma": {"running_max_of": "s*(0.6 + 0.8*exp(-(s - 2)^2))", "factor": 1.1},
    "delta": {"running_max_of": "s*(0.6 + 0.8*exp(-(s - 2)^2))", "factor": 1.1}
  },
  "thresholds": {"local": {"M_hi": 1, "N_hi": 1}, "global": {"M_lo": 4, "N_lo": 1}},
  "dissipative_form": true,
  "sampling": {"seed": 42, "n_samples": 4000, "box": 10},
  "simulation": {"T": 50, "dt": 0.001, "method": "rk4", "output_stride": 100}
})js";

const char* kLinearTest = R"js({
  "name": "linear-test",
  "dimensions": {"n": 1, "m": 1},
  "fields": {"f": ["-x1 + 0.4*z1"], "g": ["-z1 + 0.4*x1"]},
  "storage": {"V": "abs(x1)", "W": "abs(z1)"},
  "gains": {"gamma": {"expr": "0.5*s"}, "delta": {"expr": "0.5*s"}},
  "thresholds": {"local": {"M_hi": 8, "N_hi": 8}, "global": {"M_lo": 0.5, "N_lo": 0.5}},
  "sampling": {"seed": 42, "n_samples": 4000, "box": 10},
  "simulation": {"T": 30, "dt": 0.001, "method": "rk4", "output_stride": 100}
})js";

const std::map<std::string, const char*>& builtins() {
  static const std::map<std::string, const char*> table = {
      {"planar-example", kPlanarExample},
      {"planar-example-corrected", kPlanarExampleCorrected},
      {"bilimit-class", kBilimitClass},
      {"linear-test", kLinearTest},
  };
  return table;
}

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw SpecError(where + ": missing key '" + key + "'");
  return obj.at(key);
}

double number(const json& v, const std::string& where) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string() && (v.get<std::string>() == "inf" || v.get<std::string>() == "infinity")) return kInf;
  if (v.is_null()) return kInf;
  throw SpecError(where + ": expected a number or \"inf\"");
}

std::string text(const json& v, const std::string& where) {
  if (!v.is_string()) throw SpecError(where + ": expected an expression string");
  return v.get<std::string>();
}

expr::Expression parse_checked(const std::string& src, const std::vector<std::string>& allowed,
                               const std::string& where) {
  try {
    auto e = expr::parse(src);
    expr::require_variables(e, allowed);
    return e;
  } catch (const expr::ParseError& err) {
    throw SpecError(where + ": " + err.what());
  } catch (const expr::EvalError& err) {
    throw SpecError(where + ": " + err.what());
  }
}

std::function<double(std::span<const double>)> guarded(expr::CompiledExpression c) {
  return [c = std::move(c)](std::span<const double> v) {
    try {
      return c(v);
    } catch (const expr::EvalError& err) {
      throw EvaluationError(std::string(err.what()) + " in '" + c.source() + "'");
    }
  };
}

ScalarField scalar_field(const std::string& src, const std::vector<std::string>& slots, const std::string& where) {
  auto fn = guarded(expr::CompiledExpression(parse_checked(src, slots, where), slots));
  return [fn](const VectorXd& y) { return fn(std::span<const double>(y.data(), static_cast<std::size_t>(y.size()))); };
}

// Field component k of the full state, evaluated on y = (x, z).
VectorField vector_field(const json& arr, Eigen::Index dim, const std::vector<std::string>& slots,
                         const std::string& where) {
  if (!arr.is_array() || static_cast<Eigen::Index>(arr.size()) != dim)
    throw SpecError(where + ": expected an array of " + std::to_string(dim) + " expressions");
  std::vector<std::function<double(std::span<const double>)>> comps;
  for (std::size_t k = 0; k < arr.size(); ++k) {
    const std::string w = where + "[" + std::to_string(k) + "]";
    comps.push_back(guarded(expr::CompiledExpression(parse_checked(text(arr[k], w), slots, w), slots)));
  }
  return [comps](const VectorXd& y) {
    VectorXd out(static_cast<Eigen::Index>(comps.size()));
    const std::span<const double> v(y.data(), static_cast<std::size_t>(y.size()));
    for (std::size_t k = 0; k < comps.size(); ++k) out[static_cast<Eigen::Index>(k)] = comps[k](v);
    return out;
  };
}

// Storage functions see only their own block, so they get their own slots.
StorageFunction storage(const json& block, const char* key, const char* lambda_key, const std::string& prefix,
                        Eigen::Index dim) {
  std::vector<std::string> slots;
  for (Eigen::Index i = 1; i <= dim; ++i) slots.push_back(prefix + std::to_string(i));
  StorageFunction s;
  s.dimension = dim;
  s.value = scalar_field(text(require(block, key, "storage"), std::string("storage.") + key), slots,
                         std::string("storage.") + key);
  if (block.contains(lambda_key))
    s.lambda = scalar_field(text(block.at(lambda_key), std::string("storage.") + lambda_key), slots,
                            std::string("storage.") + lambda_key);
  else
    s.lambda = StorageFunction::default_lambda();
  return s;
}

GainClass parse_class(const json& decl, GainClass fallback, const std::string& where) {
  if (!decl.contains("class")) return fallback;
  const std::string c = text(decl.at("class"), where + ".class");
  if (c == "K") return GainClass::K;
  if (c == "Kinf" || c == "K_inf" || c == "Kinfty") return GainClass::Kinf;
  if (c == "positive-definite") return GainClass::PositiveDefinite;
  throw SpecError(where + ".class: unknown gain class '" + c + "'");
}

ScalarGain gain(const json& decl, double default_s_max, const std::string& where) {
  if (!decl.is_object()) throw SpecError(where + ": expected an object");
  const double s_max = decl.contains("s_max") ? number(decl.at("s_max"), where + ".s_max") : default_s_max;
  if (!(s_max > 0.0) || std::isinf(s_max)) throw SpecError(where + ".s_max: must be positive and finite");
  const std::vector<std::string> slots{"s"};
  try {
    if (decl.contains("running_max_of")) {
      auto fn = guarded(expr::CompiledExpression(
          parse_checked(text(decl.at("running_max_of"), where), slots, where + ".running_max_of"), slots));
      const double factor = decl.contains("factor") ? number(decl.at("factor"), where + ".factor") : 1.0;
      const double step =
          decl.contains("grid_step") ? number(decl.at("grid_step"), where + ".grid_step") : 1e-3 * s_max;
      if (!(factor > 0.0) || std::isinf(factor)) throw SpecError(where + ".factor: must be positive");
      return running_max_envelope([fn](double s) { return fn(std::span<const double>(&s, 1)); }, s_max, step,
                                  factor);
    }
    if (decl.contains("expr")) {
      auto fn = guarded(
          expr::CompiledExpression(parse_checked(text(decl.at("expr"), where), slots, where + ".expr"), slots));
      std::optional<double> saturation;
      if (decl.contains("saturation")) saturation = number(decl.at("saturation"), where + ".saturation");
      return ScalarGain([fn](double s) { return fn(std::span<const double>(&s, 1)); },
                        parse_class(decl, GainClass::Kinf, where), s_max, saturation);
    }
  } catch (const std::invalid_argument& e) {
    throw SpecError(where + ": " + e.what());
  }
  throw SpecError(where + ": gain needs 'expr' or 'running_max_of'");
}

RegimeGains gain_pair(const json& block, double s_max, const std::string& where) {
  return {gain(require(block, "gamma", where), s_max, where + ".gamma"),
          gain(require(block, "delta", where), s_max, where + ".delta")};
}

Box parse_box(const json& v, Eigen::Index dim) {
  if (v.is_number()) {
    const double w = v.get<double>();
    if (!(w > 0.0)) throw SpecError("sampling.box: half width must be positive");
    return Box::cube(dim, w);
  }
  if (!v.is_array() || static_cast<Eigen::Index>(v.size()) != dim)
    throw SpecError("sampling.box: expected a half width or " + std::to_string(dim) + " [lo, hi] pairs");
  Box b{VectorXd(dim), VectorXd(dim)};
  for (Eigen::Index k = 0; k < dim; ++k) {
    const auto& p = v[static_cast<std::size_t>(k)];
    if (!p.is_array() || p.size() != 2) throw SpecError("sampling.box: each axis needs [lo, hi]");
    b.lo[k] = number(p[0], "sampling.box");
    b.hi[k] = number(p[1], "sampling.box");
    if (!(b.lo[k] < b.hi[k]) || std::isinf(b.lo[k]) || std::isinf(b.hi[k]))
      throw SpecError("sampling.box: each axis needs finite lo < hi");
  }
  return b;
}

std::optional<ThresholdInput> thresholds(const json& block, const char* key, bool local) {
  if (!block.contains(key)) return std::nullopt;
  const json& t = block.at(key);
  const std::string where = std::string("thresholds.") + key;
  ThresholdInput in;
  auto get = [&](const char* k, double fallback) { return t.contains(k) ? number(t.at(k), where + "." + k) : fallback; };
  if (local) {
    in.M_hi = get("M_hi", kInf);
    in.N_hi = get("N_hi", kInf);
    in.M_lo = get("M_lo", 0.0);
    in.N_lo = get("N_lo", 0.0);
  } else {
    in.M_lo = get("M_lo", 0.0);
    in.N_lo = get("N_lo", 0.0);
    in.M_hi = get("M_hi", kInf);
    in.N_hi = get("N_hi", kInf);
  }
  if (!(in.M_lo >= 0.0 && in.M_lo < in.M_hi && in.N_lo >= 0.0 && in.N_lo < in.N_hi))
    throw SpecError(where + ": need 0 <= M_lo < M_hi and 0 <= N_lo < N_hi");
  return in;
}

}  // namespace

json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
  if (std::isnan(v)) return json(nullptr);
  return json(v);
}

SystemSpec load_spec(const json& doc) {
  if (!doc.is_object()) throw SpecError("spec: top level must be an object");
  SystemSpec spec;
  spec.document = doc;
  spec.name = doc.value("name", std::string("unnamed"));

  const json& dims = require(doc, "dimensions", "spec");
  const json& jn = require(dims, "n", "dimensions");
  const json& jm = require(dims, "m", "dimensions");
  if (!jn.is_number_integer() || !jm.is_number_integer() || jn.get<long>() < 1 || jm.get<long>() < 1)
    throw SpecError("dimensions: n and m must be positive integers");
  const auto n = static_cast<Eigen::Index>(jn.get<long>());
  const auto m = static_cast<Eigen::Index>(jm.get<long>());

  std::vector<std::string> state_slots;
  for (Eigen::Index i = 1; i <= n; ++i) state_slots.push_back("x" + std::to_string(i));
  for (Eigen::Index i = 1; i <= m; ++i) state_slots.push_back("z" + std::to_string(i));

  const json& fields = require(doc, "fields", "spec");
  spec.system.n = n;
  spec.system.m = m;
  spec.system.f = vector_field(require(fields, "f", "fields"), n, state_slots, "fields.f");
  spec.system.g = vector_field(require(fields, "g", "fields"), m, state_slots, "fields.g");

  const json& st = require(doc, "storage", "spec");
  spec.V = storage(st, "V", "lambda_x", "x", n);
  spec.W = storage(st, "W", "lambda_z", "z", m);

  // Sampling block first: the default gain range depends on the box.
  const json samp = doc.value("sampling", json::object());
  spec.sampling.seed = samp.value("seed", std::uint64_t{42});
  spec.sampling.n_samples = samp.value("n_samples", std::size_t{4000});
  spec.sampling.box = samp.contains("box") ? parse_box(samp.at("box"), n + m) : Box::cube(n + m, 10.0);

  try {
    double vmax = 0.0;
    std::mt19937_64 rng(spec.sampling.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Box& b = spec.sampling.box;
    for (int k = 0; k < 2000; ++k) {
      VectorXd y(n + m);
      for (Eigen::Index i = 0; i < n + m; ++i) {
        const double r = k < 2 ? k : u(rng);  // the two extreme corners first
        y[i] = b.lo[i] + r * (b.hi[i] - b.lo[i]);
      }
      vmax = std::max({vmax, spec.V(VectorXd(y.head(n))), spec.W(VectorXd(y.tail(m)))});
    }
    spec.s_max = std::max(20.0, 2.0 * vmax);
  } catch (const EvaluationError& e) {
    throw SpecError(std::string("storage: ") + e.what());
  }

  const json& gains = require(doc, "gains", "spec");
  if (gains.contains("local") || gains.contains("global")) {
    spec.local_gains = gain_pair(require(gains, "local", "gains"), spec.s_max, "gains.local");
    spec.global_gains = gain_pair(require(gains, "global", "gains"), spec.s_max, "gains.global");
  } else {
    spec.local_gains = gain_pair(gains, spec.s_max, "gains");
    spec.global_gains = spec.local_gains;
  }

  if (doc.contains("thresholds")) {
    spec.local_thresholds = thresholds(doc.at("thresholds"), "local", true);
    spec.global_thresholds = thresholds(doc.at("thresholds"), "global", false);
  }
  if (doc.contains("rho")) spec.rho = scalar_field(text(doc.at("rho"), "rho"), state_slots, "rho");
  spec.dissipative_form = doc.value("dissipative_form", false);

  const json sim = doc.value("simulation", json::object());
  spec.simulation.T = sim.value("T", 50.0);
  spec.simulation.dt = sim.value("dt", 1e-3);
  spec.simulation.output_stride = sim.value("output_stride", std::size_t{1});
  const std::string method = sim.value("method", std::string("rk4"));
  if (method == "rk4")
    spec.simulation.method = Method::rk4;
  else if (method == "rk45")
    spec.simulation.method = Method::rk45;
  else
    throw SpecError("simulation.method: expected rk4 or rk45");
  if (!(spec.simulation.T > 0.0) || !(spec.simulation.dt > 0.0) || spec.simulation.output_stride == 0)
    throw SpecError("simulation: T, dt and output_stride must be positive");
  return spec;
}

json read_spec_document(const std::string& path_or_builtin) {
  static const std::string prefix = "builtin:";
  if (path_or_builtin.rfind(prefix, 0) == 0) return builtin_document(path_or_builtin.substr(prefix.size()));
  std::ifstream in(path_or_builtin);
  if (!in) throw SpecError("cannot open spec file '" + path_or_builtin + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw SpecError("malformed JSON in '" + path_or_builtin + "' at byte " + std::to_string(e.byte) + ": " +
                    e.what());
  }
}

std::vector<std::string> builtin_names() {
  std::vector<std::string> names;
  for (const auto& [k, v] : builtins()) names.push_back(k);
  return names;
}

json builtin_document(const std::string& name) {
  const auto& table = builtins();
  const auto it = table.find(name);
  if (it == table.end()) throw SpecError("unknown built-in spec '" + name + "'");
  return json::parse(it->second);
}

void apply_gain_factors(json& doc, std::optional<double> gamma_factor, std::optional<double> delta_factor) {
  if (!doc.contains("gains")) return;
  auto patch = [](json& decl, double factor) {
    if (decl.contains("running_max_of")) {
      decl["factor"] = factor;
    } else if (decl.contains("expr")) {
      std::ostringstream os;
      os.precision(17);
      os << factor << "*(" << decl["expr"].get<std::string>() << ")";
      decl["expr"] = os.str();
    }
  };
  auto patch_pair = [&](json& pair) {
    if (gamma_factor && pair.contains("gamma")) patch(pair["gamma"], *gamma_factor);
    if (delta_factor && pair.contains("delta")) patch(pair["delta"], *delta_factor);
  };
  json& g = doc["gains"];
  if (g.contains("local") || g.contains("global")) {
    if (g.contains("local")) patch_pair(g["local"]);
    if (g.contains("global")) patch_pair(g["global"]);
  } else {
    patch_pair(g);
  }
}

}  // namespace region_gain
