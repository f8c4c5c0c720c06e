#pragma once

// Variance identity, error functionals and the assembled non-asymptotic
// bounds. Statistical quantities come from replicated particle runs; every
// deterministic side is evaluated with the propagator oracle.

#include "seqmc/funcineq.hpp"
#include "seqmc/particles.hpp"

#include <json.hpp>

#include <map>
#include <optional>

namespace seqmc {

// ---------------------------------------------------------------------------
// Reported inequalities.

struct Inequality {
  std::string id;
  double lhs = 0.0;
  double rhs = 0.0;
  double margin = 0.0;  // rhs - lhs for "<=", -|lhs - rhs| for identities
  double se = 0.0;
  bool pass = false;
};

/// lhs <= rhs up to `k` standard errors.
inline Inequality check_le(std::string id, double lhs, double rhs, double se = 0.0, double k = 3.0,
                           double slack = 0.0) {
  Inequality q{std::move(id), lhs, rhs, rhs - lhs, se, false};
  q.pass = q.margin >= -k * se - slack;
  return q;
}

/// |lhs - rhs| <= k se + rel |rhs|.
inline Inequality check_eq(std::string id, double lhs, double rhs, double se, double k = 3.0, double rel = 0.0) {
  Inequality q{std::move(id), lhs, rhs, -std::abs(lhs - rhs), se, false};
  q.pass = std::abs(lhs - rhs) <= k * se + rel * std::abs(rhs);
  return q;
}

inline void to_json(nlohmann::json& j, const Inequality& q) {
  // JSON has no infinities; they are written as strings.
  auto num = [](double x) -> nlohmann::json {
    if (std::isfinite(x)) return x;
    return std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x > 0 ? "inf" : "-inf");
  };
  j = {{"id", q.id}, {"lhs", num(q.lhs)}, {"rhs", num(q.rhs)}, {"margin", num(q.margin)}, {"se", num(q.se)},
       {"pass", q.pass}};
}

// ---------------------------------------------------------------------------
// Error functionals.

/// V_{s,t}(f) = -<H g^2, mu> + ∬ |H(x)| (g(y) - g(x))^2 mu(dx) mu(dy), g = q_{s,t} f.
inline double v_small_eval(const Vector& mu, const Vector& h, const Vector& g) {
  const double m0 = mu.sum();
  const double m1 = g.dot(mu);
  const double m2 = g.cwiseProduct(g).dot(mu);
  CompensatedSum acc;
  for (Eigen::Index x = 0; x < mu.size(); ++x) {
    const double inner = m2 - 2.0 * g[x] * m1 + g[x] * g[x] * m0;
    acc.add(mu[x] * (std::abs(h[x]) * inner - h[x] * g[x] * g[x]));
  }
  return acc.value();
}

inline double v_small(const EvolvingFamily& family, const GeneratorSchedule& gens, const Vector& f, double s,
                      double t) {
  if (s > t) throw Error(ErrorKind::Domain, "v_small requires s <= t");
  const Vector g = propagator(family, gens, s, t).apply(f);
  return v_small_eval(measure_at(family, s).weights, h_at(family, s), g);
}

/// V^N_{s,t}(f) for an unnormalized empirical measure nu, with g = q_{s,t} f and
/// g2 = q_{s,t}(f^2).
inline double vN_eval(const Vector& nu, const Vector& h, const Vector& g, const Vector& g2) {
  const double mass = nu.sum();
  const double t1 = -h.cwiseProduct(g).cwiseProduct(g).dot(nu) * mass;
  const double t2 = -h.dot(nu) * (g2 - g.cwiseProduct(g)).dot(nu);
  CompensatedSum pair;
  for (Eigen::Index y = 0; y < nu.size(); ++y) {
    if (nu[y] == 0.0) continue;
    for (Eigen::Index z = 0; z < nu.size(); ++z) {
      if (nu[z] == 0.0 || z == y) continue;
      const double dg = g[z] - g[y];
      pair.add(std::abs(h[z] - h[y]) * dg * dg * nu[y] * nu[z]);
    }
  }
  return t1 + t2 + 0.5 * pair.value();
}

/// Transfer bounds from nu to eta: (mean-square bound, mean-absolute bound).
inline std::pair<double, double> eta_error_bounds(double var_f, double var_1, double f_sup_dev) {
  if (var_f < 0.0 || var_1 < 0.0 || f_sup_dev < 0.0)
    throw Error(ErrorKind::Domain, "eta_error_bounds needs non-negative inputs");
  const double l2 = 2.0 * var_f + 2.0 * f_sup_dev * f_sup_dev * var_1;
  const double l1 = std::sqrt(var_f) + std::sqrt(2.0) * f_sup_dev * var_1 +
                    std::sqrt(2.0) * std::sqrt(var_f) * std::sqrt(var_1);
  return {l2, l1};
}

// ---------------------------------------------------------------------------
// Replicated runs.

struct Ensemble {
  int particles = 0;
  std::uint64_t seed = 0;
  std::vector<double> nodes;
  std::vector<TrajectoryRecord> runs;  // replicate r uses stream r

  std::size_t size() const { return runs.size(); }
  Vector nu(std::size_t r, std::size_t k) const { return reweighted_at(runs[r], k); }
  std::uint64_t total_mutations() const {
    std::uint64_t s = 0;
    for (const auto& r : runs) s += r.mutations.back();
    return s;
  }
  std::uint64_t total_selections() const {
    std::uint64_t s = 0;
    for (const auto& r : runs) s += r.selections.back();
    return s;
  }
};

/// Snapshot nodes: uniform on [0, t] unless given; always contains 0 and t.
inline std::vector<double> snapshot_nodes(double t, std::vector<double> nodes, std::size_t points = 33) {
  if (nodes.empty()) nodes = t > 0.0 ? uniform_grid(0.0, t, points) : std::vector<double>{0.0};
  nodes.push_back(0.0);
  nodes.push_back(t);
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end(), [](double a, double b) { return std::abs(a - b) <= 1e-14; }),
              nodes.end());
  if (nodes.front() < 0.0 || nodes.back() > t + 1e-12) throw Error(ErrorKind::Domain, "nodes outside [0, t]");
  return nodes;
}

/// Uniform nodes plus a geometric cluster t - t 2^{-j/2} down to spacing
/// ~ 0.05 / rate. Integrands in s built from q_{s,t} f relax on the time scale
/// 1 / rate, so uniform nodes alone misweight the layer next to t.
inline std::vector<double> graded_nodes(double t, std::size_t points, double rate) {
  std::vector<double> nodes = t > 0.0 ? uniform_grid(0.0, t, points) : std::vector<double>{0.0};
  if (t > 0.0 && rate > 0.0 && std::isfinite(rate)) {
    const double floor_gap = std::min(t, 0.05 / rate);
    for (double gap = t / std::sqrt(2.0); gap >= floor_gap && nodes.size() < 4096; gap /= std::sqrt(2.0))
      nodes.push_back(t - gap);
  }
  return snapshot_nodes(t, nodes, points);
}

inline Ensemble run_ensemble(const EvolvingFamily& family, const GeneratorSchedule& gens, int n_particles,
                             std::size_t replicates, double t, const std::vector<double>& nodes, std::uint64_t seed,
                             int workers = 1, const SimulationOptions& opt = {}) {
  Ensemble e;
  e.particles = n_particles;
  e.seed = seed;
  e.nodes = snapshot_nodes(t, nodes);
  e.runs = parallel_map(replicates, workers, [&](std::size_t r) {
    return run_particles(family, gens, n_particles, t, e.nodes, seed, r, opt);
  });
  return e;
}

namespace detail {

inline double sample_variance(const std::vector<double>& xs) {
  CompensatedSum s;
  for (double x : xs) s.add(x);
  const double m = s.value() / static_cast<double>(xs.size());
  CompensatedSum v;
  for (double x : xs) v.add((x - m) * (x - m));
  return v.value() / static_cast<double>(xs.size() - 1);
}

/// Standard error of the sample variance from the spread of squared deviations.
inline double variance_se(const std::vector<double>& xs) {
  const double m = mean_and_error(xs).mean;
  std::vector<double> sq;
  sq.reserve(xs.size());
  for (double x : xs) sq.push_back((x - m) * (x - m));
  return mean_and_error(sq).std_error * static_cast<double>(xs.size()) / static_cast<double>(xs.size() - 1);
}

/// Percentile bootstrap interval of `stat` over resamples of xs.
template <class Stat>
std::array<double, 2> bootstrap_ci(const std::vector<double>& xs, Stat stat, std::uint64_t seed,
                                   std::size_t resamples = 400, double level = 0.95) {
  RandomStream rng(seed, 0xB0075742ULL);
  std::vector<double> values;
  std::vector<double> draw(xs.size());
  for (std::size_t b = 0; b < resamples; ++b) {
    for (auto& d : draw) d = xs[rng.index(xs.size())];
    values.push_back(stat(draw));
  }
  std::sort(values.begin(), values.end());
  const double alpha = 0.5 * (1.0 - level);
  auto pick = [&](double u) {
    const auto i = static_cast<std::size_t>(std::clamp(u * static_cast<double>(resamples - 1), 0.0,
                                                        static_cast<double>(resamples - 1)));
    return values[i];
  };
  return {pick(alpha), pick(1.0 - alpha)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Variance identity.

struct VarianceReport {
  std::string f_id;
  double t = 0.0;
  int particles = 0;
  std::size_t replicates = 0;
  std::uint64_t seed = 0;
  double lhs = 0.0;  // N * sample variance of <f, nu_t^N>
  double lhs_se = 0.0;
  std::array<double, 2> lhs_ci{0.0, 0.0};
  double rhs_var = 0.0;  // Var_{mu_t}(f)
  double rhs_integral = 0.0;
  double rhs_se = 0.0;
  std::array<double, 2> rhs_ci{0.0, 0.0};
  std::vector<double> nodes;
  std::vector<double> node_mean;  // replicate mean of V^N_{s,t}(f)
  std::vector<double> node_se;
  double estimate_mean = 0.0;  // mean of <f, nu_t^N>
  double estimate_se = 0.0;
  double exact_mean = 0.0;  // <f, mu_t>

  double rhs() const { return rhs_var + rhs_integral; }
  double relative_gap() const { return std::abs(lhs - rhs()) / std::max(std::abs(rhs()), 1e-300); }
  Inequality unbiasedness() const {
    return check_eq("unbiased:" + f_id, estimate_mean, exact_mean, estimate_se);
  }
};

/// Evaluates both sides of the variance identity on an existing ensemble
/// whose last node is t.
inline VarianceReport variance_identity(const EvolvingFamily& family, const GeneratorSchedule& gens,
                                        const Vector& f, const Ensemble& ens, std::string f_id = "f") {
  if (ens.size() < 2) throw Error(ErrorKind::Domain, "variance identity needs at least two replicates");
  const double t = ens.nodes.back();
  const std::size_t m = ens.size();
  const std::size_t nodes = ens.nodes.size();
  VarianceReport rep;
  rep.f_id = std::move(f_id);
  rep.t = t;
  rep.particles = ens.particles;
  rep.replicates = m;
  rep.seed = ens.seed;
  rep.nodes = ens.nodes;
  const Vector mu_t = measure_at(family, t).weights;
  rep.rhs_var = std::max(0.0, variance(f, mu_t));
  rep.exact_mean = f.dot(mu_t);

  const Vector f2 = f.cwiseProduct(f);
  const auto qs = propagators_to(family, gens, ens.nodes, t);
  std::vector<Vector> g(nodes), g2(nodes), h(nodes);
  for (std::size_t k = 0; k < nodes; ++k) {
    g[k] = qs[k] * f;
    g2[k] = qs[k] * f2;
    h[k] = h_at(family, ens.nodes[k]);
  }
  std::vector<double> values(m), integrals(m);
  std::vector<std::vector<double>> per_node(nodes, std::vector<double>(m));
  for (std::size_t r = 0; r < m; ++r) {
    std::vector<double> vn(nodes);
    for (std::size_t k = 0; k < nodes; ++k) {
      vn[k] = vN_eval(ens.nu(r, k), h[k], g[k], g2[k]);
      per_node[k][r] = vn[k];
    }
    integrals[r] = nodes > 1 ? trapezoid(ens.nodes, vn) : 0.0;
    values[r] = f.dot(ens.nu(r, nodes - 1));
  }
  const double big_n = ens.particles;
  rep.lhs = big_n * detail::sample_variance(values);
  rep.lhs_se = big_n * detail::variance_se(values);
  rep.lhs_ci = detail::bootstrap_ci(
      values, [&](const std::vector<double>& xs) { return big_n * detail::sample_variance(xs); }, ens.seed);
  const auto integral = mean_and_error(integrals);
  rep.rhs_integral = integral.mean;
  rep.rhs_se = integral.std_error;
  const auto ci = detail::bootstrap_ci(
      integrals, [](const std::vector<double>& xs) { return mean_and_error(xs).mean; }, ens.seed + 1);
  rep.rhs_ci = {rep.rhs_var + ci[0], rep.rhs_var + ci[1]};
  for (std::size_t k = 0; k < nodes; ++k) {
    const auto me = mean_and_error(per_node[k]);
    rep.node_mean.push_back(me.mean);
    rep.node_se.push_back(me.std_error);
  }
  const auto est = mean_and_error(values);
  rep.estimate_mean = est.mean;
  rep.estimate_se = est.std_error;
  return rep;
}

inline VarianceReport variance_identity(const EvolvingFamily& family, const GeneratorSchedule& gens,
                                        const Vector& f, double t, int n_particles, std::size_t replicates,
                                        std::uint64_t seed, const std::vector<double>& s_grid = {},
                                        int workers = 1) {
  const Ensemble ens = run_ensemble(family, gens, n_particles, replicates, t, s_grid, seed, workers);
  return variance_identity(family, gens, f, ens);
}

inline void to_json(nlohmann::json& j, const VarianceReport& r) {
  j = {{"f", r.f_id},
       {"t", r.t},
       {"N", r.particles},
       {"M", r.replicates},
       {"seed", r.seed},
       {"lhs", r.lhs},
       {"lhs_se", r.lhs_se},
       {"lhs_ci", r.lhs_ci},
       {"rhs_var", r.rhs_var},
       {"rhs_integral", r.rhs_integral},
       {"rhs_se", r.rhs_se},
       {"rhs_ci", r.rhs_ci},
       {"rhs", r.rhs()},
       {"relative_gap", r.relative_gap()},
       {"nodes", r.nodes},
       {"node_mean", r.node_mean},
       {"node_se", r.node_se},
       {"estimate_mean", r.estimate_mean},
       {"estimate_se", r.estimate_se},
       {"exact_mean", r.exact_mean}};
}

// ---------------------------------------------------------------------------
// Empirical sup of the mean-square error over a finite function family.

struct FunctionFamilySpec {
  bool indicators = true;
  bool potential = true;      // H_s itself
  int eigen_directions = 3;   // slowest non-constant modes of L_s
  int random = 16;            // uniform entries in [-1, 1]
  std::uint64_t seed = 17;
  std::vector<std::pair<std::string, Vector>> extra;
};

struct LabeledFunction {
  std::string label;
  Vector f;
};

inline std::vector<LabeledFunction> function_family(const EvolvingFamily& family, const GeneratorSchedule& gens,
                                                    double s, const FunctionFamilySpec& spec) {
  const int n = family.size();
  std::vector<LabeledFunction> out;
  if (spec.indicators)
    for (int x = 0; x < n; ++x) out.push_back({"1{" + std::to_string(x) + "}", Vector::Unit(n, x)});
  if (spec.potential) out.push_back({"H", h_at(family, s)});
  if (spec.eigen_directions > 0 && n > 1) {
    const Matrix w = detail::symmetric_dirichlet(gens.rates(s));
    Eigen::SelfAdjointEigenSolver<Matrix> es(w);
    const Vector sqrt_mu = measure_at(family, s).weights.cwiseSqrt();
    for (int k = 1; k <= std::min(spec.eigen_directions, n - 1); ++k) {
      Vector v = es.eigenvectors().col(k).cwiseQuotient(sqrt_mu);
      for (auto& x : v)
        if (!std::isfinite(x)) x = 0.0;
      out.push_back({"eig" + std::to_string(k), v});
    }
  }
  RandomStream rng(spec.seed, 0xF00DULL);
  for (int k = 0; k < spec.random; ++k) {
    Vector v(n);
    for (auto& x : v) x = 2.0 * rng.uniform() - 1.0;
    out.push_back({"rand" + std::to_string(k), v});
  }
  for (const auto& e : spec.extra) out.push_back({e.first, e.second});
  return out;
}

struct EpsilonReport {
  double p = 2.0;
  bool partitioned = false;
  bool lower_estimate = true;  // max over a finite family and grid
  double value = 0.0;
  double se = 0.0;  // of the maximizing entry
  std::string argmax;
  double argmax_s = 0.0;
  std::vector<double> nodes;
  std::vector<double> node_max;
  std::vector<double> node_se;
  std::size_t family_size = 0;
};

/// max over nodes s and the family (normalized at each s) of the replicate
/// mean of |<f, nu_s> - <f, mu_s>|^2. `extra(k)` adds node-dependent members.
inline EpsilonReport epsilon_estimate(
    const EvolvingFamily& family, const GeneratorSchedule& gens, const Ensemble& ens, double p,
    const FunctionFamilySpec& spec = {}, bool partitioned = false,
    const std::function<std::vector<LabeledFunction>(std::size_t)>& extra = {}) {
  EpsilonReport rep;
  rep.p = p;
  rep.partitioned = partitioned;
  rep.nodes = ens.nodes;
  const Partition* blocks = partitioned ? &require_partition(family) : nullptr;
  for (std::size_t k = 0; k < ens.nodes.size(); ++k) {
    const double s = ens.nodes[k];
    const Vector mu = measure_at(family, s).weights;
    auto members = function_family(family, gens, s, spec);
    if (extra) {
      auto more = extra(k);
      members.insert(members.end(), more.begin(), more.end());
    }
    rep.family_size = std::max(rep.family_size, members.size());
    double best = 0.0, best_se = 0.0;
    std::string best_label;
    for (const auto& mem : members) {
      const double norm = blocks ? block_lp_norm(mem.f, mu, *blocks, p) : lp_norm(mem.f, mu, p);
      if (!(norm > 1e-300) || !std::isfinite(norm)) continue;
      const Vector f = mem.f / norm;
      const double exact = f.dot(mu);
      std::vector<double> sq(ens.size());
      for (std::size_t r = 0; r < ens.size(); ++r) {
        const double d = f.dot(ens.nu(r, k)) - exact;
        sq[r] = d * d;
      }
      const auto me = mean_and_error(sq);
      if (me.mean > best || best_label.empty()) {
        best = me.mean;
        best_se = me.std_error;
        best_label = mem.label;
      }
    }
    rep.node_max.push_back(best);
    rep.node_se.push_back(best_se);
    if (best > rep.value || k == 0) {
      rep.value = best;
      rep.se = best_se;
      rep.argmax = best_label;
      rep.argmax_s = s;
    }
  }
  return rep;
}

inline EpsilonReport epsilon_estimate(const EvolvingFamily& family, const GeneratorSchedule& gens, double t,
                                      int n_particles, double p, std::size_t replicates, std::uint64_t seed,
                                      const FunctionFamilySpec& spec = {}, bool partitioned = false,
                                      const std::vector<double>& nodes = {}, int workers = 1) {
  const Ensemble ens = run_ensemble(family, gens, n_particles, replicates, t, nodes, seed, workers);
  return epsilon_estimate(family, gens, ens, p, spec, partitioned);
}

inline void to_json(nlohmann::json& j, const EpsilonReport& r) {
  j = {{"p", r.p},           {"partitioned", r.partitioned}, {"lower_estimate", r.lower_estimate},
       {"value", r.value},   {"se", r.se},                   {"argmax", r.argmax},
       {"argmax_s", r.argmax_s}, {"nodes", r.nodes},         {"node_max", r.node_max},
       {"node_se", r.node_se},   {"family_size", r.family_size}};
}

// ---------------------------------------------------------------------------
// Assembled bounds.

struct ExponentSet {
  double p = 0.0;
  double q = 0.0;
  double r = 0.0;        // p^{-1} = q^{-1} + r^{-1}
  double p_tilde = 0.0;  // p~^{-1} = q^{-1} + 2 p^{-1}
  double a = 0.0;        // log of the largest hypercontractivity ratio
};

inline bool admissible_exponents(double p, double q) {
  if (!(q > 6.0)) return false;
  const double lower = std::isinf(q) ? 4.0 : 4.0 * q / (q - 2.0);
  return p > lower && p < q;
}

inline ExponentSet exponents(double p, double q) {
  if (!admissible_exponents(p, q))
    throw Error(ErrorKind::Domain, "need q > 6 and 4q/(q-2) < p < q");
  ExponentSet e;
  e.p = p;
  e.q = q;
  e.r = conjugate_r(p, q);
  e.p_tilde = 1.0 / ((std::isinf(q) ? 0.0 : 1.0 / q) + 2.0 / p);
  const double two_r_ratio = std::isinf(e.r) ? kInf : (2.0 * e.r - 1.0) / (p - 1.0);
  e.a = std::log(std::max({two_r_ratio, (2.0 * p - 2.0) / (p - 2.0), (p - 1.0) / (e.p_tilde - 1.0),
                           (2.0 * e.p_tilde - 2.0) / (e.p_tilde - 2.0)}));
  return e;
}

/// Pointwise intensity requirements at one time from the constants there.
struct IntensityRequirement {
  double t = 0.0;
  double weighted = 0.0;      // p A/4 + p(p+3)/4 t0 B  vs  (17/4) a omega gamma
  double rough = 0.0;         // omega max(p/4 (1 + t0 (p+3)/4) C_Poi, (17/4) gamma log a)
  double weighted_tilde = 0.0;  // block constants, when available
  bool certified = true;      // gamma upper bound available
  bool certified_tilde = false;
};

inline IntensityRequirement intensity_requirement(const ConstantsReport& c, const ExponentSet& e, double omega,
                                                  double t0) {
  IntensityRequirement req;
  req.t = c.t;
  const double p = e.p;
  req.certified = c.gamma_upper.has_value();
  const double gamma = c.gamma_upper.value_or(c.gamma_lower);
  req.weighted = std::max(p * c.a / 4.0 + p * (p + 3.0) / 4.0 * t0 * c.b, 17.0 / 4.0 * e.a * omega * gamma);
  req.rough = omega * std::max(p / 4.0 * (1.0 + t0 * (p + 3.0) / 4.0) * c.c_poi, 17.0 / 4.0 * gamma * std::log(e.a));
  if (c.a_tilde && c.b_tilde) {
    req.certified_tilde = c.gamma_upper_tilde.has_value();
    const double gt = c.gamma_upper_tilde.value_or(c.gamma_lower_tilde.value_or(0.0));
    req.weighted_tilde =
        std::max(p * *c.a_tilde / 4.0 + p * (p + 3.0) / 4.0 * t0 * *c.b_tilde, 17.0 / 4.0 * e.a * omega * gt);
  }
  return req;
}

struct BoundOptions {
  std::optional<double> t0;     // defaults to t
  std::optional<double> delta;  // defaults to 1/(17 omega)
  std::size_t omega_grid = 512;
  bool compute_cbar = true;
  std::size_t cbar_tau_points = 9;
  std::size_t cbar_s_points = 9;
  std::vector<ConstantsReport> constants;  // grid for the intensity conditions
  std::optional<EpsilonReport> epsilon;
  std::optional<EpsilonReport> epsilon_tilde;
  std::optional<double> v_estimate;  // lower estimate of v_t(p)
  bool partitioned = false;
};

struct BoundReport {
  ExponentSet exps;
  double t = 0.0;
  double t0 = 0.0;
  int particles = 0;
  double omega = 0.0;
  double delta = kInf;
  double k2 = 0.0;       // K_t(2)
  double kq = 0.0;       // K_t(q)
  double kq_t0 = 0.0;    // K_{t0}(q)
  double cbar_p = std::numeric_limits<double>::quiet_NaN();
  double cbar_p_tilde = std::numeric_limits<double>::quiet_NaN();
  double sup_c4_sq = 1.0;        // grid estimate of sup C_{s,tau}(4)^2
  double v_rough = 0.0;          // 5 K_t(2) sup C(4)^2 with the grid sup
  double v_rough_certified = 0.0;  // same with C(4) <= exp(∫ osc)
  std::optional<double> v_estimate;
  double general_bound = 0.0;     // (2 + v) N^{-1} (1 + 10 C̄ N^{-1})
  double fixed_f_coefficient = 0.0;  // 1 + 7 C̄ eps in front of ||f||_p^2
  double uniform_bound = 0.0;     // (2 + 8 K_t(2)) N^{-1} (1 + 16 K_t(q) N^{-1})
  double corollary_r = 0.0;
  double corollary_r_tilde = 0.0;
  std::string corollary_form;
  std::optional<EpsilonReport> epsilon;
  // Partitioned variants.
  std::optional<double> k_tilde_q;
  std::optional<double> k_tilde_q_t0;
  std::optional<double> m_tilde;
  std::optional<double> block_bound;
  std::optional<EpsilonReport> epsilon_tilde;
  std::vector<IntensityRequirement> requirements;
  std::vector<Inequality> checks;
  std::vector<Inequality> informational;  // bounds whose hypotheses were not met
  bool certified = true;

  const Inequality* find(const std::string& id) const {
    for (const auto& c : checks)
      if (c.id == id) return &c;
    return nullptr;
  }
};

namespace detail {

/// sup over grid pairs s <= tau of C_{s,tau}(4)^2.
inline double sup_c4_squared(const EvolvingFamily& family, const GeneratorSchedule& gens, double t,
                             std::size_t points) {
  double best = 1.0;
  if (t <= 0.0) return best;
  for (double tau : uniform_grid(0.0, t, points)) {
    if (tau <= 0.0) continue;
    const std::vector<double> s_nodes = uniform_grid(0.0, tau, points);
    const auto qs = propagators_to(family, gens, s_nodes, tau);
    const Vector mu_tau = measure_at(family, tau).weights;
    for (std::size_t k = 0; k < s_nodes.size(); ++k) {
      const auto c = ratio_sup(qs[k], measure_at(family, s_nodes[k]).weights, mu_tau, 4.0, 4.0);
      best = std::max(best, c.value * c.value);
    }
  }
  return best;
}

}  // namespace detail

inline BoundReport thm_bounds(const EvolvingFamily& family, const GeneratorSchedule& gens, double p, double q,
                              double t, int n_particles, const BoundOptions& opt = {}) {
  BoundReport rep;
  rep.exps = exponents(p, q);
  rep.t = t;
  rep.t0 = opt.t0.value_or(t);
  if (rep.t0 < t) throw Error(ErrorKind::Domain, "t must lie in [0, t0]");
  rep.particles = n_particles;
  const double big_n = n_particles;
  rep.omega = osc_and_omega(family, std::max(rep.t0, 1e-12), opt.omega_grid).omega;
  rep.delta = opt.delta.value_or(rep.omega > 0.0 ? 1.0 / (17.0 * rep.omega) : kInf);
  rep.k2 = k_norm(family, t, 2.0);
  rep.kq = k_norm(family, t, q);
  rep.kq_t0 = k_norm(family, rep.t0, q);
  rep.epsilon = opt.epsilon;
  rep.epsilon_tilde = opt.epsilon_tilde;
  rep.v_estimate = opt.v_estimate;

  // Rough upper bound on v_t(p): grid sup and the certified growth bound.
  rep.sup_c4_sq = detail::sup_c4_squared(family, gens, t, opt.cbar_s_points);
  rep.v_rough = 5.0 * rep.k2 * rep.sup_c4_sq;
  rep.v_rough_certified = 5.0 * rep.k2 * std::exp(2.0 * integrated_oscillation(family, 0.0, t));

  // C̄ on [0, t0] for the particle-count condition and on [0, t] for the bound.
  double cbar_t = 0.0;
  if (opt.compute_cbar && std::isfinite(rep.delta)) {
    rep.cbar_p = cbar(family, gens, p, q, rep.delta, rep.t0, opt.cbar_tau_points, opt.cbar_s_points).value;
    rep.cbar_p_tilde =
        cbar(family, gens, rep.exps.p_tilde, q, rep.delta, rep.t0, opt.cbar_tau_points, opt.cbar_s_points).value;
    cbar_t = t == rep.t0 ? rep.cbar_p
                         : cbar(family, gens, p, q, rep.delta, t, opt.cbar_tau_points, opt.cbar_s_points).value;
  } else if (!std::isfinite(rep.delta)) {
    rep.cbar_p = rep.cbar_p_tilde = 0.0;
  }
  const double v_used = std::max(rep.v_rough, opt.v_estimate.value_or(0.0));
  rep.general_bound = (2.0 + v_used) / big_n * (1.0 + 10.0 * cbar_t / big_n);
  rep.fixed_f_coefficient = 1.0 + 7.0 * cbar_t * rep.general_bound;
  rep.uniform_bound = (2.0 + 8.0 * rep.k2) / big_n * (1.0 + 16.0 * rep.kq / big_n);

  // Fixed-f constants: C̄ <= sqrt(2) e^{2/17} K_t(q) under the intensity condition.
  rep.corollary_r = 7.0 * std::sqrt(2.0) * std::exp(2.0 / 17.0) * rep.kq * rep.uniform_bound;
  rep.corollary_r_tilde = std::sqrt(rep.corollary_r) + 2.0 * std::sqrt(2.0) * std::sqrt(big_n) * rep.uniform_bound;
  rep.corollary_form =
      "R = 7 sqrt(2) exp(2/17) K_t(q) eps, R~ = sqrt(R) + 2 sqrt(2) sqrt(N) eps, "
      "eps = (2 + 8 K_t(2)) / N (1 + 16 K_t(q) / N)";

  if (std::isfinite(rep.cbar_p)) {
    rep.checks.push_back(check_le("general-particle-count", 25.0 * std::max({2.0, rep.cbar_p, rep.cbar_p_tilde}),
                                  big_n));
  }
  rep.checks.push_back(check_le("uniform-particle-count", 40.0 * std::max(rep.kq_t0, 1.0), big_n));
  rep.checks.push_back(check_le("rough-particle-count", 40.0 * std::max(rep.omega * rep.t0, 1.0), big_n));

  // Intensity conditions: worst point of the constants grid.
  if (!opt.constants.empty()) {
    std::optional<Inequality> worst, worst_rough, worst_tilde;
    for (const auto& c : opt.constants) {
      const auto req = intensity_requirement(c, rep.exps, rep.omega, rep.t0);
      rep.requirements.push_back(req);
      rep.certified = rep.certified && (opt.partitioned ? req.certified_tilde : req.certified);
      const double lam = gens.intensity.at(c.t);
      // A block-preserving generator is reducible: the global constants are
      // infinite, so the global conditions cannot hold.
      auto a = check_le("uniform-intensity-condition", opt.partitioned ? kInf : req.weighted, lam);
      auto b = check_le("rough-intensity-condition", opt.partitioned ? kInf : req.rough, lam);
      if (!worst || a.margin < worst->margin) worst = a;
      if (!worst_rough || b.margin < worst_rough->margin) worst_rough = b;
      if (c.a_tilde) {
        auto d = check_le("block-intensity-condition", req.weighted_tilde, lam);
        if (!worst_tilde || d.margin < worst_tilde->margin) worst_tilde = d;
      }
    }
    (opt.partitioned ? rep.informational : rep.checks).push_back(*worst);
    (opt.partitioned ? rep.informational : rep.checks).push_back(*worst_rough);
    if (worst_tilde) rep.checks.push_back(*worst_tilde);
  }

  if (opt.partitioned) {
    rep.k_tilde_q = k_norm_partitioned(family, t, q);
    rep.k_tilde_q_t0 = k_norm_partitioned(family, rep.t0, q);
    rep.m_tilde = m_tilde(family, t, opt.omega_grid);
    const double m2 = *rep.m_tilde * *rep.m_tilde;
    rep.block_bound = (2.0 + 8.0 * rep.k2 * m2) / big_n * (1.0 + 16.0 * *rep.k_tilde_q * m2 / big_n);
    rep.checks.push_back(check_le("block-particle-count", 40.0 * std::max(*rep.k_tilde_q_t0, 1.0), big_n));
  }

  // A bound is asserted only when its hypotheses hold.
  auto holds = [&](std::initializer_list<const char*> ids) {
    for (const char* id : ids) {
      const Inequality* q = rep.find(id);
      if (!q || !q->pass) return false;
    }
    return true;
  };
  auto place = [&](Inequality q, bool hypotheses) {
    (hypotheses ? rep.checks : rep.informational).push_back(std::move(q));
  };
  const bool uniform_ok = holds({"uniform-particle-count", "uniform-intensity-condition"}) && rep.certified;
  const bool general_ok = holds({"general-particle-count"});
  const bool block_ok = holds({"block-particle-count", "block-intensity-condition"});
  if (opt.epsilon) {
    place(check_le("uniform-bound", opt.epsilon->value, rep.uniform_bound, opt.epsilon->se), uniform_ok);
    place(check_le("general-bound", opt.epsilon->value, rep.general_bound, opt.epsilon->se), general_ok);
  }
  if (opt.epsilon_tilde && rep.block_bound)
    place(check_le("block-bound", opt.epsilon_tilde->value, *rep.block_bound, opt.epsilon_tilde->se), block_ok);
  return rep;
}

inline void to_json(nlohmann::json& j, const BoundReport& r) {
  auto num = [](double x) -> nlohmann::json {
    if (std::isfinite(x)) return x;
    return std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x > 0 ? "inf" : "-inf");
  };
  j = {{"p", r.exps.p},
       {"q", num(r.exps.q)},
       {"r", num(r.exps.r)},
       {"p_tilde", r.exps.p_tilde},
       {"a", r.exps.a},
       {"t", r.t},
       {"t0", r.t0},
       {"N", r.particles},
       {"omega", r.omega},
       {"delta", num(r.delta)},
       {"K2", r.k2},
       {"Kq", r.kq},
       {"Kq_t0", r.kq_t0},
       {"cbar_p", num(r.cbar_p)},
       {"cbar_p_tilde", num(r.cbar_p_tilde)},
       {"sup_c4_sq", r.sup_c4_sq},
       {"v_rough", r.v_rough},
       {"v_rough_certified", r.v_rough_certified},
       {"general_bound", r.general_bound},
       {"fixed_f_coefficient", r.fixed_f_coefficient},
       {"uniform_bound", r.uniform_bound},
       {"corollary", {{"R", r.corollary_r}, {"R_tilde", r.corollary_r_tilde}, {"form", r.corollary_form}}},
       {"certified", r.certified},
       {"checks", r.checks},
       {"informational", r.informational}};
  if (r.v_estimate) j["v_estimate"] = {{"value", *r.v_estimate}, {"lower_estimate", true}};
  if (r.epsilon) j["epsilon"] = *r.epsilon;
  if (r.epsilon_tilde) j["epsilon_tilde"] = *r.epsilon_tilde;
  if (r.block_bound) {
    j["block"] = {{"K_tilde_q", *r.k_tilde_q},
                  {"K_tilde_q_t0", *r.k_tilde_q_t0},
                  {"M_tilde", *r.m_tilde},
                  {"bound", *r.block_bound}};
  }
  nlohmann::json reqs = nlohmann::json::array();
  for (const auto& q : r.requirements)
    reqs.push_back({{"t", q.t}, {"weighted", q.weighted}, {"rough", q.rough}, {"certified", q.certified}});
  j["intensity_requirements"] = reqs;
}

// ---------------------------------------------------------------------------
// Proof-chain diagnostics.

struct ProofChainOptions {
  std::size_t nodes = 33;
  double flat_k = 3.0;
  double increasing_rel = 0.10;
  FunctionFamilySpec family{};
};

struct ProofChainReport {
  std::vector<Inequality> rows;
  double eps_hat = 0.0;  // ε̂ with p = 2 over the family, lower estimate
  std::size_t failing() const {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return !r.pass; }));
  }
};

/// Evaluates, on one ensemble with snapshot nodes on [0, t]:
/// the variance-gap bound and the short-time bound at every node (p = 2, q = inf),
/// the weighted-square identity, martingale flatness of u -> <q_{u,t} f, nu_u>,
/// and variance vs. mean increasing process of that martingale.
inline ProofChainReport proof_chain_diagnostics(const EvolvingFamily& family, const GeneratorSchedule& gens,
                                                const Vector& f, const Ensemble& ens,
                                                const ProofChainOptions& opt = {}) {
  ProofChainReport rep;
  const std::size_t m = ens.size();
  const std::size_t nn = ens.nodes.size();
  const double t = ens.nodes.back();
  const double big_n = ens.particles;
  const Vector f2 = f.cwiseProduct(f);
  const Vector fabs = f.cwiseAbs();
  const auto qs = propagators_to(family, gens, ens.nodes, t);
  std::vector<Vector> g(nn), g2(nn), h(nn), mu(nn);
  for (std::size_t k = 0; k < nn; ++k) {
    g[k] = qs[k] * f;
    g2[k] = qs[k] * f2;
    h[k] = h_at(family, ens.nodes[k]);
    mu[k] = measure_at(family, ens.nodes[k]).weights;
  }
  const Vector mu_t = mu.back();

  // ε_s^{N,2}: running max over nodes <= s, family plus the propagated test functions.
  const auto eps = epsilon_estimate(family, gens, ens, 2.0, opt.family, false, [&](std::size_t k) {
    return std::vector<LabeledFunction>{{"qf", g[k]}, {"qf2", g2[k]}, {"q|f|", qs[k] * fabs}};
  });
  rep.eps_hat = eps.value;
  std::vector<double> eps_run(nn);
  for (std::size_t k = 0; k < nn; ++k) eps_run[k] = std::max(eps.node_max[k], k ? eps_run[k - 1] : 0.0);

  // Per-replicate quantities.
  std::vector<std::vector<double>> vn(nn, std::vector<double>(m)), a_u(nn, std::vector<double>(m));
  std::vector<double> weighted_sq(m), increment(m), increasing(m);
  for (std::size_t r = 0; r < m; ++r) {
    std::vector<double> lemma_int(nn), incr_int(nn);
    for (std::size_t k = 0; k < nn; ++k) {
      const Vector nu = ens.nu(r, k);
      vn[k][r] = vN_eval(nu, h[k], g[k], g2[k]);
      a_u[k][r] = g[k].dot(nu);
      lemma_int[k] = h[k].dot(nu) * g2[k].dot(nu);
      const double s = ens.nodes[k];
      const double mutation = gens.intensity.at(s) * nu.sum() * carre_du_champ(gens.rates(s), g[k]).dot(nu);
      CompensatedSum pair;
      for (Eigen::Index x = 0; x < nu.size(); ++x) {
        if (nu[x] == 0.0) continue;
        for (Eigen::Index y = 0; y < nu.size(); ++y) {
          if (nu[y] == 0.0) continue;
          const double d = g[k][y] - g[k][x];
          pair.add(std::max(0.0, h[k][x] - h[k][y]) * d * d * nu[x] * nu[y]);
        }
      }
      incr_int[k] = (mutation + pair.value()) / big_n;
    }
    const Vector nu_t = ens.nu(r, nn - 1);
    weighted_sq[r] = nu_t.sum() * f2.dot(nu_t) + (nn > 1 ? trapezoid(ens.nodes, lemma_int) : 0.0);
    increment[r] = a_u[nn - 1][r] - a_u[0][r];
    increasing[r] = nn > 1 ? trapezoid(ens.nodes, incr_int) : 0.0;
  }

  const double f_norm2 = lp_norm(f, mu_t, 2.0);
  for (std::size_t k = 0; k < nn; ++k) {
    const double s = ens.nodes[k];
    const auto me = mean_and_error(vn[k]);
    const double v = v_small_eval(mu[k], h[k], g[k]);
    const double coef = 6.0 * h[k].cwiseAbs().maxCoeff() * std::pow(lp_norm(g[k], mu[k], 4.0), 2) +
                        lp_norm(h[k], mu[k], 2.0) * lp_norm(g2[k], mu[k], 2.0);
    const std::string at = "@s=" + std::to_string(s);
    rep.rows.push_back(check_le("variance-gap-bound" + at, me.mean, v + coef * eps_run[k], me.std_error));
    const double growth = std::exp(2.0 * integrated_oscillation(family, s, t));
    const double short_rhs = 4.0 * oscillation(h[k]) * (1.0 + eps_run[k] * growth) * f_norm2 * f_norm2;
    rep.rows.push_back(check_le("short-time-bound" + at, me.mean / big_n, short_rhs, me.std_error / big_n));
    const auto au = mean_and_error(a_u[k]);
    rep.rows.push_back(check_eq("martingale-flatness" + at, au.mean, f.dot(mu_t), au.std_error, opt.flat_k));
  }
  const auto ws = mean_and_error(weighted_sq);
  rep.rows.push_back(check_eq("weighted-square-identity", ws.mean, f2.dot(mu_t), ws.std_error));
  const double var_inc = m > 1 ? detail::sample_variance(increment) : 0.0;
  const auto inc = mean_and_error(increasing);
  const double inc_se = std::hypot(m > 1 ? detail::variance_se(increment) : 0.0, inc.std_error);
  Inequality iq = check_eq("increasing-process", var_inc, inc.mean, inc_se, 0.0, opt.increasing_rel);
  rep.rows.push_back(iq);
  return rep;
}

inline ProofChainReport proof_chain_diagnostics(const EvolvingFamily& family, const GeneratorSchedule& gens,
                                                const Vector& f, double t, int n_particles,
                                                std::size_t replicates, std::uint64_t seed, int workers = 1,
                                                const ProofChainOptions& opt = {}) {
  const Ensemble ens = run_ensemble(family, gens, n_particles, replicates, t,
                                    t > 0.0 ? uniform_grid(0.0, t, opt.nodes) : std::vector<double>{0.0}, seed,
                                    workers);
  return proof_chain_diagnostics(family, gens, f, ens, opt);
}

}  // namespace seqmc
