#pragma once

// Deterministic oracles: measure-valued evolution equations, Feynman-Kac
// propagators q_{s,t} and bracketing estimates of their operator norms.

#include "seqmc/dynamics.hpp"
#include "seqmc/ode.hpp"

#include <optional>

namespace seqmc {

struct FlowSolution {
  std::vector<double> times;
  std::vector<Vector> measures;
  bool normalized = true;
  OdeDiagnostics diagnostics;
};

/// Solves d nu/dt = lambda_t L_t^* nu - H_t nu (unnormalized) or the
/// normalized equation with the extra <H_t, eta> eta term, from time 0.
inline FlowSolution solve_flow(const EvolvingFamily& family, const GeneratorSchedule& gens, double t_end,
                               bool normalized, std::vector<double> grid,
                               std::optional<Vector> initial = std::nullopt, OdeOptions opt = {}) {
  if (t_end < 0.0 || t_end > family.horizon + 1e-12)
    throw Error(ErrorKind::Domain, "t_end outside [0, horizon]");
  if (grid.empty()) grid = {t_end};
  for (double g : grid)
    if (g < 0.0 || g > t_end + 1e-12) throw Error(ErrorKind::Domain, "flow grid outside [0, t_end]");
  const Vector start = initial ? *initial : measure_at(family, 0.0).weights;
  auto rhs = [&](double t, const Vector& nu) {
    const Vector h = h_at(family, t);
    Vector d = gens.intensity.at(t) * (gens.rates(t).transpose() * nu) - h.cwiseProduct(nu);
    if (normalized) d += h.dot(nu) * nu;
    return d;
  };
  FlowSolution sol;
  sol.times = grid;
  sol.normalized = normalized;
  std::vector<double> outputs = grid;
  const bool include_zero = !outputs.empty() && outputs.front() == 0.0;
  if (include_zero) outputs.erase(outputs.begin());
  auto states = integrate_ode<Vector>(rhs, 0.0, start, outputs, opt, &sol.diagnostics);
  if (include_zero) sol.measures.push_back(start);
  for (auto& s : states) sol.measures.push_back(std::move(s));
  return sol;
}

struct Propagator {
  double s = 0.0;
  double t = 0.0;
  Matrix q;  // (q_{s,t} f)(x) = sum_y q(x, y) f(y)
  OdeDiagnostics diagnostics;

  Vector apply(const Vector& f) const { return q * f; }
};

/// Generator of the Feynman-Kac semigroup at time t: lambda_t L_t - diag(H_t).
inline Matrix feynman_kac_generator(const EvolvingFamily& family, const GeneratorSchedule& gens, double t,
                                    bool with_potential = true) {
  Matrix a = gens.scaled(t);
  if (with_potential) a.diagonal() -= h_at(family, t);
  return a;
}

/// Forward equation dQ/dt = Q (lambda_t L_t - H_t) with Q(s, s) = I.
/// With `with_potential = false` this is the Markov transition function p_{s,t}.
inline Propagator propagator(const EvolvingFamily& family, const GeneratorSchedule& gens, double s, double t,
                             bool with_potential = true, OdeOptions opt = {}) {
  if (!(0.0 <= s && s <= t && t <= family.horizon + 1e-12))
    throw Error(ErrorKind::Domain, "propagator requires 0 <= s <= t <= horizon");
  Propagator p;
  p.s = s;
  p.t = t;
  const int n = family.size();
  if (t == s) {
    p.q = Matrix::Identity(n, n);
    return p;
  }
  auto rhs = [&](double r, const Matrix& q) -> Matrix {
    return q * feynman_kac_generator(family, gens, r, with_potential);
  };
  p.q = integrate_ode<Matrix>(rhs, s, Matrix::Identity(n, n), {t}, opt, &p.diagnostics).front();
  return p;
}

/// Q_{s_k, t} for every s_k in `s_nodes` (descending or ascending, all <= t)
/// from a single backward solve of -dQ/ds = (lambda_s L_s - H_s) Q.
inline std::vector<Matrix> propagators_to(const EvolvingFamily& family, const GeneratorSchedule& gens,
                                          const std::vector<double>& s_nodes, double t,
                                          bool with_potential = true, OdeOptions opt = {},
                                          OdeDiagnostics* diag = nullptr) {
  const int n = family.size();
  std::vector<std::size_t> order(s_nodes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s_nodes[a] > s_nodes[b]; });
  std::vector<double> outputs;
  for (std::size_t i : order) {
    if (s_nodes[i] > t + 1e-12) throw Error(ErrorKind::Domain, "propagator node after terminal time");
    outputs.push_back(std::min(s_nodes[i], t));
  }
  auto rhs = [&](double r, const Matrix& q) -> Matrix {
    return -(feynman_kac_generator(family, gens, r, with_potential) * q);
  };
  auto states = integrate_ode<Matrix>(rhs, t, Matrix::Identity(n, n), outputs, opt, diag);
  std::vector<Matrix> out(s_nodes.size());
  for (std::size_t k = 0; k < order.size(); ++k) out[order[k]] = std::move(states[k]);
  return out;
}

/// q_{s,t} f from the backward equation -d/ds g = lambda_s L_s g - H_s g, g(t) = f.
inline Vector backward_apply(const EvolvingFamily& family, const GeneratorSchedule& gens, double s, double t,
                             const Vector& f, OdeOptions opt = {}) {
  if (s == t) return f;
  auto rhs = [&](double r, const Vector& g) -> Vector {
    return -(feynman_kac_generator(family, gens, r) * g);
  };
  return integrate_ode<Vector>(rhs, t, f, {s}, opt).front();
}

// ---------------------------------------------------------------------------
// Monte Carlo Feynman-Kac.

/// Exact ∫_a^b H_r(x) dr = U_b(x) - U_a(x) + log Z_b - log Z_a.
inline double integrated_h(const EvolvingFamily& family, int x, double a, double b) {
  return family.potential(b)[x] - family.potential(a)[x] + measure_at(family, b).logZ -
         measure_at(family, a).logZ;
}

struct FkEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  std::size_t paths = 0;
  std::size_t jumps = 0;
};

/// E_{s,x}[exp(-∫_s^t H_r(X_r) dr) f(X_t)] by simulating lambda_r L_r with thinning.
inline FkEstimate fk_sample(const EvolvingFamily& family, const GeneratorSchedule& gens, double s, int x,
                            double t, const Vector& f, std::size_t paths, std::uint64_t seed) {
  if (paths < 1) throw Error(ErrorKind::Domain, "fk_sample needs at least one path");
  const double bound = gens.intensity.max_on(s, t) * gens.exit_rate_bound;
  const double log_z_ratio = measure_at(family, t).logZ - measure_at(family, s).logZ;
  const Vector u_s = family.potential(s);
  const Vector u_t = family.potential(t);
  FkEstimate est;
  est.paths = paths;
  std::vector<double> values(paths);
  for (std::size_t k = 0; k < paths; ++k) {
    RandomStream rng(seed, k);
    int state = x;
    double exponent = -u_s[x];
    double tau = s;
    if (bound > 0.0) {
      while (true) {
        tau += rng.exponential(bound);
        if (tau >= t) break;
        const Vector row = gens.row(tau, state);
        const double lam = gens.intensity.at(tau);
        const double exit = -row[state];
        const double u = rng.uniform() * bound;
        if (u >= lam * exit) continue;
        // Choose the target in proportion to the off-diagonal rates.
        double target = rng.uniform() * exit;
        int next = state;
        for (int y = 0; y < row.size(); ++y) {
          if (y == state) continue;
          next = y;
          target -= row[y];
          if (target < 0.0) break;
        }
        const Vector u_tau = family.potential(tau);
        exponent += u_tau[state] - u_tau[next];
        state = next;
        ++est.jumps;
      }
    }
    exponent += u_t[state];
    values[k] = std::exp(-(exponent + log_z_ratio)) * f[state];
  }
  const auto me = mean_and_error(values);
  est.estimate = me.mean;
  est.std_error = me.std_error;
  return est;
}

// ---------------------------------------------------------------------------
// Operator norms.

/// sup_{f != 0} ||Q f||_{L^a(mu_s)} / ||f||_{L^b(mu_t)}. Closed forms when
/// a or b is 1, infinity, or a = b = 2; otherwise the best value of a
/// nonlinear power ascent from many starts, which is a lower bound.
struct RatioSup {
  double value = 0.0;
  bool exact = false;
};

inline double dual_exponent(double b) {
  if (b == 1.0) return kInf;
  if (std::isinf(b)) return 1.0;
  return b / (b - 1.0);
}

inline RatioSup ratio_sup(const Matrix& q, const Vector& mu_s, const Vector& mu_t, double a, double b,
                          std::uint64_t seed = 0x5eed, int random_starts = 32) {
  const int n = static_cast<int>(q.rows());
  RatioSup out;
  if (b == 1.0) {
    // Extreme points of the L^1 ball are scaled indicators.
    for (int y = 0; y < n; ++y)
      out.value = std::max(out.value, lp_norm(q.col(y), mu_s, a) / mu_t[y]);
    out.exact = true;
    return out;
  }
  if (std::isinf(b)) {
    // Q >= 0, so the constant function is extremal.
    out.value = lp_norm(q * Vector::Ones(n), mu_s, a);
    out.exact = true;
    return out;
  }
  if (std::isinf(a)) {
    // Hölder duality row by row.
    const double bd = dual_exponent(b);
    for (int x = 0; x < n; ++x) {
      const Vector dens = q.row(x).transpose().cwiseQuotient(mu_t);
      out.value = std::max(out.value, lp_norm(dens, mu_t, bd));
    }
    out.exact = true;
    return out;
  }
  if (a == 2.0 && b == 2.0) {
    const Matrix m = mu_s.cwiseSqrt().asDiagonal() * q * mu_t.cwiseSqrt().cwiseInverse().asDiagonal();
    Eigen::JacobiSVD<Matrix> svd(m);
    out.value = svd.singularValues()(0);
    out.exact = true;
    return out;
  }
  // Weighted problem as an unweighted one: A = D_s^{1/a} Q D_t^{-1/b}.
  const Matrix am = mu_s.array().pow(1.0 / a).matrix().asDiagonal() * q *
                    mu_t.array().pow(-1.0 / b).matrix().asDiagonal();
  const double bd = dual_exponent(b);
  auto pnorm = [](const Vector& v, double p) { return std::pow(v.cwiseAbs().array().pow(p).sum(), 1.0 / p); };
  auto ratio = [&](const Vector& g) {
    const double den = pnorm(g, b);
    return den > 0.0 ? pnorm(am * g, a) / den : 0.0;
  };
  auto ascend = [&](Vector g) {
    g = g.cwiseAbs();
    double best = ratio(g);
    for (int it = 0; it < 500; ++it) {
      const Vector y = am * g;
      const Vector z = am.transpose() * y.cwiseAbs().array().pow(a - 1.0).matrix();
      Vector next = z.cwiseAbs().array().pow(bd - 1.0).matrix();
      const double nn = pnorm(next, b);
      if (!(nn > 0.0) || !std::isfinite(nn)) break;
      next /= nn;
      const double r = ratio(next);
      const bool done = std::abs(r - best) <= 1e-15 * std::max(1.0, r);
      if (r >= best) {
        best = r;
        g = next;
      }
      if (done) break;
    }
    return best;
  };
  RandomStream rng(seed, 0);
  out.value = ascend(Vector::Ones(n));
  for (int y = 0; y < n; ++y) out.value = std::max(out.value, ascend(Vector::Unit(n, y) + 1e-3 * Vector::Ones(n)));
  for (int k = 0; k < random_starts; ++k) {
    Vector g(n);
    for (int i = 0; i < n; ++i) g[i] = rng.uniform_open();
    out.value = std::max(out.value, ascend(g));
  }
  return out;
}

struct OperatorNorms {
  double p = 2.0;
  double q = kInf;
  double r = 2.0;          // p^{-1} = q^{-1} + r^{-1}
  double c_p = 1.0;        // C_{s,t}(p)
  double c_pq = 1.0;       // C_{s,t}(p, q), clamped below by 1
  bool c_p_exact = false;  // otherwise a lower bound
  bool c_pq_exact = false;
  double upper_bound = 1.0;  // exp(∫_s^t osc(H_r) dr)
};

inline double conjugate_r(double p, double q) {
  if (std::isinf(q)) return p;
  if (q == p) return kInf;
  return p * q / (q - p);
}

inline OperatorNorms operator_norms(const Matrix& q_mat, const Vector& mu_s, const Vector& mu_t, double p,
                                    double q, double upper_bound = kInf) {
  OperatorNorms out;
  out.p = p;
  out.q = q;
  out.upper_bound = upper_bound;
  if (p == 1.0) {
    out.c_p = 1.0;
    out.c_p_exact = true;
  } else {
    const auto cp = ratio_sup(q_mat, mu_s, mu_t, p, p);
    out.c_p = cp.value;
    out.c_p_exact = cp.exact;
  }
  if (!(p >= 2.0 && p <= q)) {
    // C_{s,t}(p, q) is only defined for 2 <= p <= q.
    out.c_pq = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  out.r = conjugate_r(p, q);
  const auto first = ratio_sup(q_mat, mu_s, mu_t, 2.0 * out.r, p);
  const auto second = ratio_sup(q_mat, mu_s, mu_t, p, p / 2.0);
  out.c_pq = std::max({first.value, second.value, 1.0});
  out.c_pq_exact = first.exact && second.exact;
  return out;
}

inline OperatorNorms operator_norms(const Propagator& prop, const EvolvingFamily& family, double p, double q) {
  return operator_norms(prop.q, measure_at(family, prop.s).weights, measure_at(family, prop.t).weights, p, q,
                        std::exp(integrated_oscillation(family, prop.s, prop.t)));
}

struct CbarReport {
  double value = 0.0;         // C̄_t(p, q, delta), grid estimate
  double coarse_bound = 0.0;  // t * omega * sup C_{s,tau}(p, q)^2
  double k_bound = 0.0;       // K_t(q) * sup C_{s,tau}(p, q)^2
  double sup_c2 = 1.0;
  double omega = 0.0;
  std::size_t tau_points = 0;
  std::size_t s_points = 0;
};

/// C̄_t(p,q,delta) = sup_tau ∫_0^{(tau-delta)^+} ||H_s||_{L^q(mu_s)} C_{s,tau}(p,q)^2 ds
/// with tau on a uniform grid and a trapezoid rule in s.
inline CbarReport cbar(const EvolvingFamily& family, const GeneratorSchedule& gens, double p, double q,
                       double delta, double t, std::size_t tau_points = 9, std::size_t s_points = 9,
                       std::size_t omega_grid = 512) {
  if (!(delta > 0.0)) throw Error(ErrorKind::Domain, "cbar requires delta > 0");
  CbarReport rep;
  rep.tau_points = tau_points;
  rep.s_points = s_points;
  rep.omega = osc_and_omega(family, std::max(t, 1e-12), omega_grid).omega;
  if (t <= delta) {
    rep.coarse_bound = 0.0;
    return rep;
  }
  double sup_c2 = 1.0;
  for (double tau : uniform_grid(0.0, t, tau_points)) {
    if (tau <= delta) continue;
    const std::vector<double> s_nodes = uniform_grid(0.0, tau - delta, s_points);
    const auto qs = propagators_to(family, gens, s_nodes, tau);
    const Vector mu_tau = measure_at(family, tau).weights;
    std::vector<double> integrand;
    for (std::size_t k = 0; k < s_nodes.size(); ++k) {
      const auto snap = measure_at(family, s_nodes[k]);
      const double hq = lp_norm(centered_h(family.potential_dt(s_nodes[k]), snap.weights), snap.weights, q);
      const auto norms = operator_norms(qs[k], snap.weights, mu_tau, p, q);
      const double c2 = norms.c_pq * norms.c_pq;
      sup_c2 = std::max(sup_c2, c2);
      rep.omega = std::max(rep.omega, oscillation(family.potential_dt(s_nodes[k])));
      integrand.push_back(hq * c2);
    }
    rep.value = std::max(rep.value, trapezoid(s_nodes, integrand));
  }
  rep.sup_c2 = sup_c2;
  rep.coarse_bound = t * rep.omega * sup_c2;
  rep.k_bound = k_norm(family, t, q) * sup_c2;
  return rep;
}

}  // namespace seqmc
