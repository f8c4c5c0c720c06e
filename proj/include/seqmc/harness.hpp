#pragma once

// Experiment plumbing: JSON configs with a strict schema, builtin models,
// intensity schedules derived from the functional-inequality constants, and
// deterministic result bundles (JSON plus CSV tables).

#include "seqmc/bounds.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace seqmc {

inline constexpr const char* kCodeVersion = "seqmc-0.3.0";

// ---------------------------------------------------------------------------
// Config schema.

struct TestFunctionSpec {
  std::string id;
  std::string kind = "linear";  // linear | quadratic | indicator | block | constant | values
  int index = 0;                // state for "indicator", block for "block"
  std::vector<double> values;   // for "values"
};

struct LambdaSpec {
  std::string kind = "constant";  // constant | knots | conditions
  double value = 1.0;
  std::vector<double> times;
  std::vector<double> values;
  double safety = 1.1;  // multiplier on the derived requirement
};

struct AppendixSpec {
  std::vector<double> sigmas{0.5, 2.0, 5.0};
  std::vector<int> deltas{10, 50};
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string model = "moving-gauss";  // h-zero | moving-gauss | two-block | product | tabulated
  nlohmann::json model_params = nlohmann::json::object();
  std::string proposal = "nearest-neighbor";  // nearest-neighbor | block-nearest-neighbor | complete
  LambdaSpec lambda;
  int particles = 100;
  std::size_t replicates = 100;
  double t0 = 1.0;
  double t = 1.0;
  std::size_t snapshots = 33;
  double p = 6.0;
  double q = 12.0;
  std::optional<double> delta;
  std::uint64_t seed = 1;
  FunctionFamilySpec family;
  std::vector<TestFunctionSpec> tests{{"linear", "linear", 0, {}}};
  std::size_t constants_grid = 5;
  bool cbar = false;
  bool proof_chain = true;
  bool baseline = false;
  bool expect_baseline_bias = false;
  double variance_tolerance = 0.15;
  AppendixSpec appendix;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, int line, const std::string& msg)
      : Error(ErrorKind::Configuration,
              "config error" + (line > 0 ? " at line " + std::to_string(line) : std::string()) + ", field '" +
                  field + "': " + msg),
        field_(field),
        line_(line) {}
  const std::string& field() const { return field_; }
  int line() const { return line_; }

 private:
  std::string field_;
  int line_;
};

namespace detail {

/// Line of the first `"key"` occurrence in the source text (0 if absent).
inline int line_of_key(const std::string& text, const std::string& key) {
  if (text.empty() || key.empty()) return 0;
  const auto pos = text.find("\"" + key + "\"");
  if (pos == std::string::npos) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

/// Strict reader for one JSON object: typed getters plus an unknown-key check.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string path, const std::string& text) : j_(j), path_(std::move(path)), text_(text) {
    if (!j_.is_object()) fail("", "expected an object");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    const std::string field = key.empty() ? path_ : (path_.empty() ? key : path_ + "." + key);
    throw ConfigError(field.empty() ? "<root>" : field, line_of_key(text_, key.empty() ? last(path_) : key), msg);
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  const nlohmann::json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  Reader child(const std::string& key) {
    seen_.insert(key);
    return Reader(j_.at(key), path_.empty() ? key : path_ + "." + key, text_);
  }

  double number(const std::string& key, double fallback, double lo = -kInf, double hi = kInf,
                bool open_lo = false) {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    double x = 0.0;
    if (v.is_number()) {
      x = v.get<double>();
    } else if (v.is_string() && (v.get<std::string>() == "inf" || v.get<std::string>() == "infinity")) {
      x = kInf;
    } else {
      fail(key, "expected a number");
    }
    if (std::isnan(x) || x < lo || x > hi || (open_lo && x == lo))
      fail(key, "value " + std::to_string(x) + " outside " + (open_lo ? "(" : "[") + std::to_string(lo) + ", " +
                    std::to_string(hi) + "]");
    return x;
  }

  long long integer(const std::string& key, long long fallback, long long lo, long long hi) {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) fail(key, "expected an integer");
    const long long x = v.get<long long>();
    if (x < lo || x > hi) fail(key, "value " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " +
                                        std::to_string(hi) + "]");
    return x;
  }

  std::uint64_t unsigned64(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      fail(key, "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    if (!j_.at(key).is_boolean()) fail(key, "expected true or false");
    return j_.at(key).get<bool>();
  }

  std::string choice(const std::string& key, const std::string& fallback, const std::set<std::string>& allowed) {
    if (!has(key)) return fallback;
    if (!j_.at(key).is_string()) fail(key, "expected a string");
    const auto s = j_.at(key).get<std::string>();
    if (!allowed.empty() && !allowed.count(s)) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      fail(key, "unknown value '" + s + "' (expected one of: " + list + ")");
    }
    return s;
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_array()) fail(key, "expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) fail(key, "expected an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) fail(key, "unknown field");
  }

 private:
  static std::string last(const std::string& path) {
    const auto dot = path.rfind('.');
    return dot == std::string::npos ? path : path.substr(dot + 1);
  }

  const nlohmann::json& j_;
  std::string path_;
  const std::string& text_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j, const std::string& text = {}) {
  ExperimentConfig c;
  detail::Reader r(j, "", text);
  if (r.has("name")) {
    if (!r.raw("name").is_string()) r.fail("name", "expected a string");
    c.name = r.raw("name").get<std::string>();
  }
  c.model = r.choice("model", c.model, {"h-zero", "moving-gauss", "two-block", "product", "tabulated"});
  if (r.has("model_params")) {
    if (!r.raw("model_params").is_object()) r.fail("model_params", "expected an object");
    c.model_params = r.raw("model_params");
  }
  c.proposal = r.choice("proposal", c.proposal, {"nearest-neighbor", "block-nearest-neighbor", "complete"});
  if (r.has("lambda")) {
    auto l = r.child("lambda");
    c.lambda.kind = l.choice("kind", c.lambda.kind, {"constant", "knots", "conditions"});
    c.lambda.value = l.number("value", c.lambda.value, 0.0);
    c.lambda.times = l.numbers("times", {});
    c.lambda.values = l.numbers("values", {});
    c.lambda.safety = l.number("safety", c.lambda.safety, 1.0);
    if (c.lambda.kind == "knots") {
      if (c.lambda.times.empty() || c.lambda.times.size() != c.lambda.values.size())
        l.fail("values", "knots need matching non-empty 'times' and 'values'");
      try {
        Intensity{c.lambda.times, c.lambda.values}.validate();
      } catch (const Error& e) {
        l.fail("values", e.what());
      }
    }
    l.finish();
  }
  c.particles = static_cast<int>(r.integer("N", c.particles, 1, 1 << 24));
  c.replicates = static_cast<std::size_t>(r.integer("M", static_cast<long long>(c.replicates), 1, 1 << 24));
  c.t0 = r.number("t0", c.t0, 0.0);
  c.t = r.number("t", c.t, 0.0, c.t0);
  c.snapshots = static_cast<std::size_t>(r.integer("snapshots", static_cast<long long>(c.snapshots), 2, 100000));
  c.p = r.number("p", c.p, 1.0);
  c.q = r.number("q", c.q, 1.0);
  if (r.has("delta")) c.delta = r.number("delta", 0.0, 0.0, kInf, true);
  c.seed = r.unsigned64("seed", c.seed);
  if (r.has("functions")) {
    auto f = r.child("functions");
    c.family.indicators = f.boolean("indicators", c.family.indicators);
    c.family.potential = f.boolean("potential", c.family.potential);
    c.family.eigen_directions = static_cast<int>(f.integer("eigen_directions", c.family.eigen_directions, 0, 1000));
    c.family.random = static_cast<int>(f.integer("random", c.family.random, 0, 100000));
    c.family.seed = f.unsigned64("seed", c.family.seed);
    f.finish();
  }
  if (r.has("tests")) {
    const auto& arr = r.raw("tests");
    if (!arr.is_array() || arr.empty()) r.fail("tests", "expected a non-empty array");
    c.tests.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      detail::Reader t(arr[i], "tests[" + std::to_string(i) + "]", text);
      TestFunctionSpec spec;
      spec.kind = t.choice("kind", "linear", {"linear", "quadratic", "indicator", "block", "constant", "values"});
      spec.id = spec.kind;
      if (t.has("id")) {
        if (!t.raw("id").is_string()) t.fail("id", "expected a string");
        spec.id = t.raw("id").get<std::string>();
      }
      spec.index = static_cast<int>(t.integer("index", 0, 0, 1 << 24));
      spec.values = t.numbers("values", {});
      if (spec.kind == "values" && spec.values.empty()) t.fail("values", "kind 'values' needs a values array");
      t.finish();
      c.tests.push_back(std::move(spec));
    }
  }
  c.constants_grid = static_cast<std::size_t>(r.integer("constants_grid", static_cast<long long>(c.constants_grid), 2, 10000));
  c.cbar = r.boolean("cbar", c.cbar);
  c.proof_chain = r.boolean("proof_chain", c.proof_chain);
  c.baseline = r.boolean("baseline", c.baseline);
  c.expect_baseline_bias = r.boolean("expect_baseline_bias", c.expect_baseline_bias);
  c.variance_tolerance = r.number("variance_tolerance", c.variance_tolerance, 0.0, kInf, true);
  if (r.has("appendix")) {
    auto a = r.child("appendix");
    c.appendix.sigmas = a.numbers("sigmas", c.appendix.sigmas);
    std::vector<double> d = a.numbers("deltas", {});
    if (!d.empty()) {
      c.appendix.deltas.clear();
      for (double x : d) {
        if (x != std::floor(x) || x < 1) a.fail("deltas", "expected positive integers");
        c.appendix.deltas.push_back(static_cast<int>(x));
      }
    }
    a.finish();
  }
  r.finish();
  return c;
}

/// Canonical form: every field present, keys sorted.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  auto num = [](double x) -> nlohmann::json { return std::isinf(x) ? nlohmann::json("inf") : nlohmann::json(x); };
  nlohmann::json tests = nlohmann::json::array();
  for (const auto& t : c.tests)
    tests.push_back({{"id", t.id}, {"kind", t.kind}, {"index", t.index}, {"values", t.values}});
  nlohmann::json j = {
      {"name", c.name},
      {"model", c.model},
      {"model_params", c.model_params},
      {"proposal", c.proposal},
      {"lambda",
       {{"kind", c.lambda.kind},
        {"value", c.lambda.value},
        {"times", c.lambda.times},
        {"values", c.lambda.values},
        {"safety", c.lambda.safety}}},
      {"N", c.particles},
      {"M", c.replicates},
      {"t0", c.t0},
      {"t", c.t},
      {"snapshots", c.snapshots},
      {"p", num(c.p)},
      {"q", num(c.q)},
      {"delta", c.delta ? num(*c.delta) : nlohmann::json(nullptr)},
      {"seed", c.seed},
      {"functions",
       {{"indicators", c.family.indicators},
        {"potential", c.family.potential},
        {"eigen_directions", c.family.eigen_directions},
        {"random", c.family.random},
        {"seed", c.family.seed}}},
      {"tests", tests},
      {"constants_grid", c.constants_grid},
      {"cbar", c.cbar},
      {"proof_chain", c.proof_chain},
      {"baseline", c.baseline},
      {"expect_baseline_bias", c.expect_baseline_bias},
      {"variance_tolerance", c.variance_tolerance},
      {"appendix", {{"sigmas", c.appendix.sigmas}, {"deltas", c.appendix.deltas}}}};
  return j;
}

/// FNV-1a over the canonical serialization.
inline std::string content_hash(const ExperimentConfig& c) {
  const std::string s = to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Models.

struct BuiltModel {
  EvolvingFamily family;
  GeneratorSchedule gens;  // intensity resolved separately
  bool birth_death = false;  // nearest-neighbour chain(s) on consecutive states
  bool partitioned = false;
  std::optional<LinearSchedule> mean;
  std::optional<LinearSchedule> sigma;
  int delta = 0;
};

namespace detail {

inline LinearSchedule read_schedule(Reader& r, const std::string& key, LinearSchedule fallback) {
  if (!r.has(key)) return fallback;
  auto s = r.child(key);
  LinearSchedule out{s.number("value", fallback.value), s.number("rate", fallback.rate)};
  s.finish();
  return out;
}

inline EvolvingFamily moving_gauss_from(Reader& r, BuiltModel& out, double horizon) {
  const int a = static_cast<int>(r.integer("a", 0, -1000000, 1000000));
  const int delta = static_cast<int>(r.integer("delta", 10, 2, 100000));
  const auto mean = read_schedule(r, "mean", {4.5, 0.25});
  const auto sigma = read_schedule(r, "sigma", {2.0, 0.0});
  for (double t : {0.0, horizon})
    if (!(sigma.at(t) > 0.0)) r.fail("sigma", "sigma_t must stay positive on [0, horizon]");
  out.mean = mean;
  out.sigma = sigma;
  out.delta = delta;
  return moving_gaussian(a, delta, mean, sigma, horizon);
}

}  // namespace detail

inline ProposalSchedule make_proposal(const std::string& kind, const StateSpace& space) {
  if (kind == "nearest-neighbor") return nearest_neighbor_proposal(space);
  if (kind == "block-nearest-neighbor") return block_nearest_neighbor_proposal(space);
  if (kind == "complete") return complete_proposal(space.size());
  throw Error(ErrorKind::Configuration, "unknown proposal " + kind);
}

inline BuiltModel build_model(const ExperimentConfig& c) {
  BuiltModel out;
  const std::string text;
  detail::Reader r(c.model_params, "model_params", text);
  const double horizon = r.number("horizon", std::max(c.t0, 1e-9), 0.0, kInf, true);
  if (horizon < c.t0) r.fail("horizon", "horizon must be >= t0");
  try {
    if (c.model == "h-zero") {
      const int n = static_cast<int>(r.integer("states", 10, 1, 1000000));
      Vector w = Vector::Ones(n);
      if (r.has("weights")) {
        const auto v = r.numbers("weights", {});
        if (static_cast<int>(v.size()) != n) r.fail("weights", "need one weight per state");
        for (int i = 0; i < n; ++i) w[i] = v[static_cast<std::size_t>(i)];
        if ((w.array() <= 0.0).any()) r.fail("weights", "weights must be positive");
      }
      out.family = constant_family(StateSpace::interval(0, n), w / w.sum(), horizon);
      out.birth_death = c.proposal == "nearest-neighbor";
    } else if (c.model == "moving-gauss") {
      out.family = detail::moving_gauss_from(r, out, horizon);
      out.birth_death = c.proposal == "nearest-neighbor";
    } else if (c.model == "two-block") {
      const int m = static_cast<int>(r.integer("block_size", 5, 2, 100000));
      const double strength = r.number("strength", 1.5);
      const double width = r.number("width", 1.5, 0.0, kInf, true);
      const int n = 2 * m;
      StateSpace space = StateSpace::interval(0, n);
      Partition blocks(2);
      for (int x = 0; x < n; ++x) blocks[x < m ? 0 : 1].push_back(x);
      space.partition = blocks;
      space.validate();
      // Same Gaussian shape in each block, equal block masses at time 0.
      Vector w(n), tilt = Vector::Zero(n);
      for (int x = 0; x < n; ++x) {
        const double y = (x % m) - 0.5 * (m - 1);
        w[x] = std::exp(-y * y / (2.0 * width * width));
        if (x >= m) tilt[x] = strength;
      }
      out.family = exponential_tilt(space, w / w.sum(), tilt, horizon);
      out.family.name = "two-block";
      out.birth_death = c.proposal == "block-nearest-neighbor";
      out.partitioned = true;
    } else if (c.model == "product") {
      const int copies = static_cast<int>(r.integer("copies", 3, 1, 64));
      auto comp = r.child("component");
      BuiltModel unused;
      const double h = comp.number("horizon", horizon, 0.0, kInf, true);
      const EvolvingFamily base = detail::moving_gauss_from(comp, unused, h);
      comp.finish();
      auto g = metropolis(base, make_proposal("nearest-neighbor", base.space));
      std::vector<std::pair<EvolvingFamily, GeneratorSchedule>> parts(static_cast<std::size_t>(copies), {base, g});
      auto prod = product_generator(parts);
      out.family = prod.first;
      out.gens = prod.second;
      r.finish();
      return out;
    } else if (c.model == "tabulated") {
      const auto mu0 = r.numbers("mu0", {});
      if (mu0.empty()) r.fail("mu0", "required");
      const auto times = r.numbers("times", {});
      if (!r.has("potential") || !r.raw("potential").is_array()) r.fail("potential", "expected an array of vectors");
      std::vector<Vector> values;
      for (const auto& row : r.raw("potential")) {
        if (!row.is_array()) r.fail("potential", "expected an array of vectors");
        Vector v(static_cast<Eigen::Index>(row.size()));
        for (std::size_t i = 0; i < row.size(); ++i) v[static_cast<Eigen::Index>(i)] = row[i].get<double>();
        values.push_back(v);
      }
      const int n = static_cast<int>(mu0.size());
      StateSpace space = StateSpace::interval(0, n);
      if (r.has("partition")) {
        Partition blocks;
        for (const auto& b : r.raw("partition")) blocks.push_back(b.get<std::vector<int>>());
        space.partition = blocks;
        space.validate();
        out.partitioned = true;
      }
      Vector w = Eigen::Map<const Vector>(mu0.data(), n);
      if ((w.array() <= 0.0).any()) r.fail("mu0", "weights must be positive");
      out.family = tabulated_family(space, w / w.sum(), times, values);
      out.birth_death = c.proposal == "nearest-neighbor" && !out.partitioned;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("model_params", 0, e.what());
  }
  r.finish();
  out.family.validate();
  out.gens = metropolis(out.family, make_proposal(c.proposal, out.family.space));
  return out;
}

inline ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n'));
    throw ConfigError("<syntax>", line, e.what());
  }
  ExperimentConfig c = config_from_json(j, text);
  // Model parameters are checked by the builder; attach the source line here.
  try {
    build_model(c);
  } catch (const ConfigError& e) {
    if (e.line() > 0) throw;
    const auto dot = e.field().rfind('.');
    const std::string key = dot == std::string::npos ? e.field() : e.field().substr(dot + 1);
    std::string msg = e.what();
    const auto colon = msg.find("': ");
    throw ConfigError(e.field(), detail::line_of_key(text, key),
                      colon == std::string::npos ? msg : msg.substr(colon + 3));
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", 0, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline Vector test_function(const TestFunctionSpec& spec, const EvolvingFamily& family) {
  const int n = family.size();
  Vector f = Vector::Zero(n);
  const double scale = n > 1 ? 1.0 / (n - 1) : 1.0;
  if (spec.kind == "linear") {
    for (int x = 0; x < n; ++x) f[x] = x * scale;
  } else if (spec.kind == "quadratic") {
    for (int x = 0; x < n; ++x) f[x] = (x * scale) * (x * scale);
  } else if (spec.kind == "indicator") {
    if (spec.index >= n) throw ConfigError("tests." + spec.id + ".index", 0, "state out of range");
    f[spec.index] = 1.0;
  } else if (spec.kind == "block") {
    const auto& blocks = require_partition(family);
    if (spec.index >= static_cast<int>(blocks.size()))
      throw ConfigError("tests." + spec.id + ".index", 0, "block out of range");
    for (int x : blocks[static_cast<std::size_t>(spec.index)]) f[x] = 1.0;
  } else if (spec.kind == "constant") {
    f.setOnes();
  } else {
    if (static_cast<int>(spec.values.size()) != n)
      throw ConfigError("tests." + spec.id + ".values", 0, "need one value per state");
    for (int x = 0; x < n; ++x) f[x] = spec.values[static_cast<std::size_t>(x)];
  }
  return f;
}

// ---------------------------------------------------------------------------
// Constants grid and derived intensity.

inline std::vector<ConstantsReport> constants_grid(const BuiltModel& m, double t0, std::size_t points, int workers) {
  ConstantsOptions opt;
  opt.birth_death = m.birth_death;
  opt.partitioned = m.partitioned;
  const auto times = uniform_grid(0.0, t0, points);
  return parallel_map(times.size(), workers, [&](std::size_t k) { return constants_at(m.family, m.gens, times[k], opt); });
}

struct LambdaSchedule {
  Intensity intensity;
  bool certified = true;            // every requirement used a gamma upper bound
  std::vector<double> requirement;  // pointwise maximum of the displayed lower bounds
  std::string source;
};

/// λ knots at the constants grid: safety * max of the requirement over the
/// knot and its neighbours, so the linear interpolant dominates every knot
/// requirement on both adjacent segments.
inline LambdaSchedule lambda_from_conditions(const ExperimentConfig& c, const EvolvingFamily& family,
                                             const std::vector<ConstantsReport>& grid, bool partitioned = false) {
  if (grid.empty()) throw Error(ErrorKind::Domain, "lambda_from_conditions needs a constants grid");
  const ExponentSet e = exponents(c.p, c.q);
  const double omega = osc_and_omega(family, std::max(c.t0, 1e-12)).omega;
  LambdaSchedule out;
  out.source = "conditions";
  for (const auto& rep : grid) {
    const auto req = intensity_requirement(rep, e, omega, c.t0);
    if (partitioned) {
      out.requirement.push_back(req.weighted_tilde);
      out.certified = out.certified && req.certified_tilde;
    } else {
      out.requirement.push_back(std::max(req.weighted, req.rough));
      out.certified = out.certified && req.certified;
    }
  }
  const std::size_t k = grid.size();
  out.intensity.times.clear();
  out.intensity.values.clear();
  for (std::size_t i = 0; i < k; ++i) {
    double v = out.requirement[i];
    if (i > 0) v = std::max(v, out.requirement[i - 1]);
    if (i + 1 < k) v = std::max(v, out.requirement[i + 1]);
    out.intensity.times.push_back(grid[i].t);
    out.intensity.values.push_back(c.lambda.safety * v);
  }
  if (k == 1) out.intensity = Intensity::constant(out.intensity.values.front());
  return out;
}

// ---------------------------------------------------------------------------
// Runs.

struct RunResult {
  nlohmann::json bundle;
  std::map<std::string, std::string> tables;  // file name -> CSV text
  std::vector<std::string> failing;
};

namespace detail {

inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string csv_row(std::initializer_list<std::string> cells) {
  std::string s;
  for (const auto& c : cells) s += (s.empty() ? "" : ",") + c;
  return s + "\n";
}

inline nlohmann::json constants_json(const ConstantsReport& c) {
  nlohmann::json j = {{"t", c.t}, {"c_poi", c.c_poi}, {"a", c.a}, {"b", c.b}, {"gamma_lower", c.gamma_lower},
                      {"gamma_lower_label", "lower estimate"}};
  j["gamma_upper"] = c.gamma_upper ? nlohmann::json(*c.gamma_upper) : nlohmann::json(nullptr);
  j["gamma_upper_method"] = c.gamma_upper_method;
  if (c.a_tilde) {
    j["a_tilde"] = *c.a_tilde;
    j["b_tilde"] = *c.b_tilde;
    j["c_poi_tilde"] = c.c_poi_tilde.value_or(0.0);
    j["gamma_lower_tilde"] = c.gamma_lower_tilde.value_or(0.0);
    j["gamma_upper_tilde"] = c.gamma_upper_tilde ? nlohmann::json(*c.gamma_upper_tilde) : nlohmann::json(nullptr);
  }
  return j;
}

}  // namespace detail

/// The six discrete Gauss certification chains (or the configured grid).
inline std::vector<Inequality> appendix_checks(const AppendixSpec& spec, std::string* miclo_csv = nullptr) {
  std::vector<Inequality> rows;
  constexpr double slack = 1e-9;
  if (miclo_csv) *miclo_csv = detail::csv_row({"sigma", "delta", "side", "k", "B", "beta"});
  for (double sigma : spec.sigmas) {
    for (int delta : spec.deltas) {
      const auto g = gauss_model(sigma, -delta / 2, delta);
      const Matrix l = birth_death_generator(g.spec);
      const Vector mu = g.spec.mu();
      const double c_poi = poincare(l, mu).c_poi;
      const double gamma = log_sobolev(l, mu).gamma_lower;
      const auto table = miclo_tables(g.spec);
      const auto metro = metro_bounds(g.spec);
      const std::string tag = "[sigma=" + detail::fmt17(sigma) + ",delta=" + std::to_string(delta) + "]";
      auto rel = [&](double x) { return slack * std::max(1.0, std::abs(x)); };
      rows.push_back(check_le("poincare<=miclo" + tag, c_poi, table.poincare_bound(), 0.0, 0.0, rel(c_poi)));
      rows.push_back(check_le("miclo<=metropolis-poincare" + tag, table.poincare_bound(), metro.poincare, 0.0, 0.0,
                              rel(metro.poincare)));
      rows.push_back(check_le("poincare<=gauss-display" + tag, c_poi, g.poincare_display, 0.0, 0.0, rel(c_poi)));
      rows.push_back(check_le("lsi-lower<=miclo" + tag, gamma, table.lsi_bound(), 0.0, 0.0, rel(gamma)));
      rows.push_back(check_le("miclo<=metropolis-lsi" + tag, table.lsi_bound(), metro.lsi, 0.0, 0.0, rel(metro.lsi)));
      rows.push_back(check_le("miclo<=gauss-lsi-display" + tag, table.lsi_bound(), g.lsi_display, 0.0, 0.0,
                              rel(g.lsi_display)));
      if (miclo_csv) {
        for (std::size_t i = 0; i < table.k_plus.size(); ++i)
          *miclo_csv += detail::csv_row({detail::fmt17(sigma), std::to_string(delta), "+",
                                         std::to_string(table.k_plus[i]), detail::fmt17(table.b_plus[i]),
                                         detail::fmt17(table.beta_plus[i])});
        for (std::size_t i = 0; i < table.k_minus.size(); ++i)
          *miclo_csv += detail::csv_row({detail::fmt17(sigma), std::to_string(delta), "-",
                                         std::to_string(table.k_minus[i]), detail::fmt17(table.b_minus[i]),
                                         detail::fmt17(table.beta_minus[i])});
      }
    }
  }
  return rows;
}

using LogFn = std::function<void(const std::string&)>;

/// Runs one subcommand: simulate | variance | bounds | constants | appendix | examples.
inline RunResult run(const ExperimentConfig& cfg, const std::string& command, int workers = 1,
                     const LogFn& log = {}) {
  static const std::set<std::string> commands{"simulate", "variance", "bounds", "constants", "appendix", "examples"};
  if (!commands.count(command)) throw Error(ErrorKind::Configuration, "unknown command " + command);
  auto note = [&](const std::string& s) {
    if (log) log(s);
  };
  RunResult res;
  nlohmann::json& b = res.bundle;
  b["version"] = kCodeVersion;
  b["command"] = command;
  b["config"] = to_json(cfg);
  b["config_hash"] = content_hash(cfg);
  b["seed"] = cfg.seed;
  std::vector<Inequality> checks;

  if (command == "appendix") {
    std::string csv;
    checks = appendix_checks(cfg.appendix, &csv);
    res.tables["miclo.csv"] = csv;
  } else {
    BuiltModel m = build_model(cfg);
    b["model"] = {{"name", m.family.name}, {"states", m.family.size()}, {"partitioned", m.partitioned},
                  {"birth_death", m.birth_death}};
    const auto osc = osc_and_omega(m.family, std::max(cfg.t0, 1e-12));
    b["omega"] = osc.omega;

    // Constants are needed for derived intensities and for the bound conditions.
    std::vector<ConstantsReport> grid;
    const bool need_constants =
        command == "constants" || command == "bounds" || cfg.lambda.kind == "conditions";
    if (need_constants && cfg.model != "product") {
      note("constants on " + std::to_string(cfg.constants_grid) + " grid times");
      grid = constants_grid(m, cfg.t0, cfg.constants_grid, workers);
    }
    LambdaSchedule lam;
    if (cfg.lambda.kind == "constant") {
      lam.intensity = Intensity::constant(cfg.lambda.value);
      lam.source = "constant";
    } else if (cfg.lambda.kind == "knots") {
      lam.intensity = Intensity{cfg.lambda.times, cfg.lambda.values};
      lam.source = "knots";
    } else {
      if (grid.empty()) throw ConfigError("lambda.kind", 0, "derived intensity needs a model with constants");
      lam = lambda_from_conditions(cfg, m.family, grid, m.partitioned);
    }
    lam.intensity.validate();
    m.gens.intensity = lam.intensity;
    b["lambda"] = {{"source", lam.source},
                   {"times", lam.intensity.times},
                   {"values", lam.intensity.values},
                   {"requirement", lam.requirement},
                   {"certified", lam.certified}};
    if (!lam.certified) b["lambda"]["flag"] = "uncertified";

    if (!grid.empty()) {
      nlohmann::json arr = nlohmann::json::array();
      std::string csv = detail::csv_row({"t", "c_poi", "a", "b", "gamma_lower", "gamma_upper", "lambda"});
      for (const auto& c : grid) {
        arr.push_back(detail::constants_json(c));
        csv += detail::csv_row({detail::fmt17(c.t), detail::fmt17(c.c_poi), detail::fmt17(c.a), detail::fmt17(c.b),
                                detail::fmt17(c.gamma_lower),
                                c.gamma_upper ? detail::fmt17(*c.gamma_upper) : std::string(),
                                detail::fmt17(lam.intensity.at(c.t))});
      }
      b["constants"] = arr;
      res.tables["constants.csv"] = csv;
    }

    if (command == "constants") {
      for (const auto& c : grid) {
        const std::string at = "@t=" + detail::fmt17(c.t);
        if (!m.partitioned && osc.omega <= 1.0) {
          checks.push_back(check_le("weighted-a<=poincare" + at, c.a, c.c_poi, 0.0, 0.0, 1e-9 * c.c_poi));
          checks.push_back(check_le("weighted-b<=omega-poincare" + at, c.b, osc.omega * c.c_poi, 0.0, 0.0,
                                    1e-9 * c.c_poi));
        }
        if (c.gamma_upper)
          checks.push_back(check_le("lsi-lower<=upper" + at, c.gamma_lower, *c.gamma_upper, 0.0, 0.0, 1e-9));
        const double kq = k_norm(m.family, c.t, cfg.q);
        checks.push_back(check_le("k-norm<=omega-t" + at, kq, osc.omega * c.t, 0.0, 0.0, 1e-6));
      }
    }

    if (command == "examples") {
      if (m.mean && m.sigma) {
        const auto drift = moving_gauss_conditions(m.family, *m.mean, *m.sigma, m.delta, cfg.t0);
        b["drift_conditions"] = {{"holds", drift.holds},
                                 {"worst_margin", drift.worst_margin},
                                 {"max_osc", drift.max_osc},
                                 {"max_osc_bound", drift.max_osc_bound},
                                 {"osc_bound_holds", drift.osc_bound_holds}};
        if (drift.holds) {
          checks.push_back(check_le("moving-gauss-osc-bound", drift.max_osc, drift.max_osc_bound, 0.0, 0.0, 1e-9));
          checks.push_back(check_le("moving-gauss-omega<=1", osc.omega, 1.0, 0.0, 0.0, 1e-9));
        }
      }
      // Product of identical components: Poincaré constant is dimension free,
      // omega grows at most linearly.
      if (cfg.model == "product") {
        const std::string no_text;
        detail::Reader r(cfg.model_params, "model_params", no_text);
        const int copies = static_cast<int>(r.integer("copies", 3, 1, 64));
        auto comp = r.child("component");
        BuiltModel unused;
        const EvolvingFamily base = detail::moving_gauss_from(comp, unused, comp.number("horizon", std::max(cfg.t0, 1e-9)));
        const auto g = metropolis(base, make_proposal("nearest-neighbor", base.space));
        const double c1 = poincare(g.rates(cfg.t), measure_at(base, cfg.t).weights).c_poi;
        const double cn = poincare(m.gens.rates(cfg.t), measure_at(m.family, cfg.t).weights).c_poi;
        const double w1 = osc_and_omega(base, std::max(cfg.t0, 1e-12)).omega;
        checks.push_back(check_eq("product-poincare", cn, c1, 0.0, 0.0, 1e-8));
        checks.push_back(check_le("product-omega", osc.omega, copies * w1, 0.0, 0.0, 1e-9));
      }
    }

    const double t = cfg.t;
    std::vector<Vector> tests;
    for (const auto& spec : cfg.tests) tests.push_back(test_function(spec, m.family));
    const auto nodes = graded_nodes(t, cfg.snapshots, lam.intensity.max_on(0.0, t) * m.gens.exit_rate_bound);

    if (command == "simulate") {
      note("single run");
      const auto rec = run_particles(m.family, m.gens, cfg.particles, t, nodes, cfg.seed, 0);
      std::ostringstream jsonl;
      write_trajectory_jsonl(rec, jsonl);
      res.tables["trajectory.jsonl"] = jsonl.str();
      b["events"] = {{"mutations", rec.mutations.back()}, {"selections", rec.selections.back()}};
      b["final"] = {{"t", rec.times.back()}, {"logW", rec.log_weight.back()}};
      for (std::size_t i = 0; i < tests.size(); ++i)
        b["final"]["estimates"][cfg.tests[i].id] = tests[i].dot(reweighted_at(rec, rec.times.size() - 1));
    }

    std::optional<Ensemble> ens;
    if (command == "variance" || command == "bounds") {
      note("ensemble of " + std::to_string(cfg.replicates) + " replicates");
      ens = run_ensemble(m.family, m.gens, cfg.particles, cfg.replicates, t, nodes, cfg.seed, workers);
      b["events"] = {{"mutations", ens->total_mutations()}, {"selections", ens->total_selections()}};
    }

    if (command == "variance") {
      nlohmann::json arr = nlohmann::json::array();
      std::string csv = detail::csv_row({"f", "t", "N", "M", "lhs", "lhs_se", "lhs_lo", "lhs_hi", "rhs_var",
                                         "rhs_integral", "rhs_se", "rhs_lo", "rhs_hi", "relative_gap"});
      for (std::size_t i = 0; i < tests.size(); ++i) {
        const auto rep = variance_identity(m.family, m.gens, tests[i], *ens, cfg.tests[i].id);
        arr.push_back(rep);
        checks.push_back(rep.unbiasedness());
        if (cfg.replicates >= 2) {
          Inequality q{"variance-identity:" + rep.f_id, rep.lhs, rep.rhs(), -std::abs(rep.lhs - rep.rhs()),
                       std::hypot(rep.lhs_se, rep.rhs_se), rep.relative_gap() <= cfg.variance_tolerance};
          checks.push_back(q);
        }
        csv += detail::csv_row({rep.f_id, detail::fmt17(rep.t), std::to_string(rep.particles),
                                std::to_string(rep.replicates), detail::fmt17(rep.lhs), detail::fmt17(rep.lhs_se),
                                detail::fmt17(rep.lhs_ci[0]), detail::fmt17(rep.lhs_ci[1]),
                                detail::fmt17(rep.rhs_var), detail::fmt17(rep.rhs_integral),
                                detail::fmt17(rep.rhs_se), detail::fmt17(rep.rhs_ci[0]),
                                detail::fmt17(rep.rhs_ci[1]), detail::fmt17(rep.relative_gap())});
      }
      b["variance"] = arr;
      res.tables["variance.csv"] = csv;

      if (cfg.baseline) {
        note("independent baseline");
        const Vector mu_t = measure_at(m.family, t).weights;
        const auto runs = parallel_map(cfg.replicates, workers, [&](std::size_t r) {
          SimulationOptions opt;
          opt.selection = false;
          return run_particles(m.family, m.gens, cfg.particles, t, {t}, cfg.seed, r, opt);
        });
        nlohmann::json base = nlohmann::json::array();
        for (std::size_t i = 0; i < tests.size(); ++i) {
          std::vector<double> est;
          for (const auto& rec : runs) est.push_back(tests[i].dot(rec.eta.back()));
          const auto me = mean_and_error(est);
          const double exact = tests[i].dot(mu_t);
          const double bias = me.mean - exact;
          base.push_back({{"f", cfg.tests[i].id}, {"mean", me.mean}, {"se", me.std_error}, {"exact", exact},
                          {"bias", bias}});
          if (cfg.expect_baseline_bias)
            checks.push_back(check_le("baseline-bias:" + cfg.tests[i].id, 3.0 * me.std_error, std::abs(bias)));
          else
            checks.push_back(check_eq("baseline-unbiased:" + cfg.tests[i].id, me.mean, exact, me.std_error));
        }
        b["baseline"] = base;
      }
    }

    if (command == "bounds") {
      if (!admissible_exponents(cfg.p, cfg.q)) throw ConfigError("p", 0, "need q > 6 and 4q/(q-2) < p < q");
      note("error estimates over the function family");
      BoundOptions bo;
      bo.t0 = cfg.t0;
      bo.delta = cfg.delta;
      bo.compute_cbar = cfg.cbar;
      bo.constants = grid;
      bo.partitioned = m.partitioned;
      bo.epsilon = epsilon_estimate(m.family, m.gens, *ens, cfg.p, cfg.family, false);
      if (m.partitioned) bo.epsilon_tilde = epsilon_estimate(m.family, m.gens, *ens, cfg.p, cfg.family, true);
      const auto rep = thm_bounds(m.family, m.gens, cfg.p, cfg.q, t, cfg.particles, bo);
      b["bounds"] = rep;
      checks.insert(checks.end(), rep.checks.begin(), rep.checks.end());
      if (cfg.proof_chain && !tests.empty()) {
        note("proof-chain diagnostics");
        const auto pc = proof_chain_diagnostics(m.family, m.gens, tests.front(), *ens);
        b["proof_chain"] = {{"f", cfg.tests.front().id}, {"eps_hat_p2", pc.eps_hat}, {"rows", pc.rows}};
        checks.insert(checks.end(), pc.rows.begin(), pc.rows.end());
      }
    }
  }

  b["checks"] = checks;
  for (const auto& q : checks)
    if (!q.pass) res.failing.push_back(q.id);
  b["failing"] = res.failing;
  return res;
}

inline void write_outputs(const RunResult& res, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const std::string& name, const std::string& body) {
    std::ofstream out(std::filesystem::path(dir) / name, std::ios::binary);
    if (!out) throw Error(ErrorKind::Configuration, "cannot write " + name + " in " + dir);
    out << body;
  };
  put("bundle.json", res.bundle.dump(2) + "\n");
  for (const auto& [name, body] : res.tables) put(name, body);
}

}  // namespace seqmc
