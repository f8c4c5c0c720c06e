#pragma once

// Functional-inequality constants of reversible generators: spectral gap,
// weighted constants A and B, log-Sobolev lower estimates, and explicit
// upper bounds for one-dimensional Metropolis chains.

#include "seqmc/dynamics.hpp"

#include <Eigen/Eigenvalues>

#include <optional>
#include <queue>
#include <sstream>

namespace seqmc {

namespace detail {

inline bool connected(const Matrix& l) {
  const int n = static_cast<int>(l.rows());
  if (n <= 1) return true;
  std::vector<char> seen(n, 0);
  std::queue<int> todo;
  todo.push(0);
  seen[0] = 1;
  int count = 1;
  while (!todo.empty()) {
    const int x = todo.front();
    todo.pop();
    for (int y = 0; y < n; ++y) {
      if (seen[y] || (l(x, y) <= 0.0 && l(y, x) <= 0.0)) continue;
      seen[y] = 1;
      ++count;
      todo.push(y);
    }
  }
  return count == n;
}

inline void require_reversible(const Matrix& l, const Vector& mu) {
  if (detailed_balance_defect(l, mu) > 1e-10)
    throw Error(ErrorKind::Reversibility, "generator is not reversible w.r.t. mu");
}

/// Orthonormal basis (columns) of the complement of sqrt(mu).
inline Matrix mean_zero_basis(const Vector& mu) {
  const int n = static_cast<int>(mu.size());
  const Vector v = mu.cwiseSqrt();
  Eigen::HouseholderQR<Matrix> qr(v);
  const Matrix q = qr.householderQ() * Matrix::Identity(n, n);
  return q.rightCols(n - 1);
}

/// Symmetrized generator -D^{1/2} L D^{-1/2} in sqrt(mu) coordinates, so that
/// E(f) = g' S g with g = sqrt(mu) f. Reversibility gives the off-diagonal
/// entries as -sqrt(L(x,y) L(y,x)), which never divides by mu.
inline Matrix symmetric_dirichlet(const Matrix& l) {
  const Eigen::Index n = l.rows();
  Matrix s(n, n);
  for (Eigen::Index x = 0; x < n; ++x)
    for (Eigen::Index y = 0; y < n; ++y)
      s(x, y) = x == y ? -l(x, x) : -std::sqrt(std::max(0.0, l(x, y)) * std::max(0.0, l(y, x)));
  return s;
}

}  // namespace detail

struct PoincareResult {
  double c_poi = 0.0;
  double gap = 0.0;
  Vector eigenfunction;       // slowest mode, mean zero, <f^2, mu> = 1
  double variational_max = 0.0;  // best random Rayleigh quotient (<= c_poi)
};

/// C_Poi = 1/gap of -L on L^2(mu), from a dense symmetric eigen-solve.
inline PoincareResult poincare(const Matrix& l, const Vector& mu, std::uint64_t seed = 17) {
  detail::require_reversible(l, mu);
  if (!detail::connected(l)) throw Error(ErrorKind::InfiniteConstant, "chain is disconnected; C_Poi is infinite");
  const int n = static_cast<int>(mu.size());
  PoincareResult out;
  if (n == 1) throw Error(ErrorKind::InfiniteConstant, "single-state space has no mean-zero functions");
  Eigen::SelfAdjointEigenSolver<Matrix> es(detail::symmetric_dirichlet(l));
  out.gap = es.eigenvalues()(1);
  if (!(out.gap > 0.0)) throw Error(ErrorKind::InfiniteConstant, "zero spectral gap");
  out.c_poi = 1.0 / out.gap;
  out.eigenfunction = es.eigenvectors().col(1).cwiseQuotient(mu.cwiseSqrt());
  // States whose mass underflows carry no information about the mode.
  for (Eigen::Index i = 0; i < n; ++i)
    if (!std::isfinite(out.eigenfunction[i])) out.eigenfunction[i] = 0.0;
  out.eigenfunction /= std::sqrt(out.eigenfunction.cwiseAbs2().dot(mu));

  RandomStream rng(seed, 0);
  for (int k = 0; k < 100; ++k) {
    Vector f(n);
    for (int i = 0; i < n; ++i) f[i] = rng.uniform() - 0.5;
    f.array() -= f.dot(mu);
    const double e = dirichlet_form(l, mu, f);
    if (e > 0.0) out.variational_max = std::max(out.variational_max, f.cwiseAbs2().dot(mu) / e);
  }
  if (out.variational_max > out.c_poi * (1 + 1e-8) + 1e-8)
    throw Error(ErrorKind::InternalConsistency, "Rayleigh quotient exceeds inverse spectral gap");
  return out;
}

struct WeightedConstants {
  double a = 0.0;  // sup_{<f,mu>=0} -<H f^2, mu> / E(f), clamped at 0
  double b = 0.0;  // sup_{<f,mu>=0} <H f, mu>^2 / E(f)
};

inline WeightedConstants weighted_constants(const Matrix& l, const Vector& mu, const Vector& h) {
  detail::require_reversible(l, mu);
  if (std::abs(h.dot(mu)) > 1e-10 * std::max(1.0, h.cwiseAbs().maxCoeff()))
    throw Error(ErrorKind::Domain, "H must be centered under mu");
  if (!detail::connected(l))
    throw Error(ErrorKind::InfiniteConstant, "Dirichlet form is singular on mean-zero functions");
  WeightedConstants out;
  const int n = static_cast<int>(mu.size());
  if (n == 1) return out;
  const Matrix q = detail::mean_zero_basis(mu);
  const Matrix s = q.transpose() * detail::symmetric_dirichlet(l) * q;
  const Matrix num = q.transpose() * (-h).asDiagonal() * q;
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(num, s);
  if (ges.info() != Eigen::Success)
    throw Error(ErrorKind::InfiniteConstant, "Dirichlet form is singular on mean-zero functions");
  out.a = std::max(0.0, ges.eigenvalues().maxCoeff());
  // Poisson equation (-L) g = H in sqrt(mu) coordinates.
  const Vector rhs = mu.cwiseSqrt().cwiseProduct(h);
  const Vector y = q * s.ldlt().solve(q.transpose() * rhs);
  out.b = std::max(0.0, rhs.dot(y));
  return out;
}

// ---------------------------------------------------------------------------
// Log-Sobolev constant gamma = sup_{<f^2,mu>=1, f != 1} <f^2 log|f|, mu> / E(f).

struct LogSobolevResult {
  double gamma_lower = 0.0;
  Vector maximizer;
  int restarts = 0;
  std::string method = "sphere-ascent";
};

namespace detail {

inline double entropy_term(const Vector& f, const Vector& mu) {
  CompensatedSum acc;
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    const double a = std::abs(f[i]);
    if (a > 0.0) acc.add(mu[i] * f[i] * f[i] * std::log(a));
  }
  return acc.value();
}

inline Vector normalize_sphere(Vector f, const Vector& mu) {
  const double nn = std::sqrt(f.cwiseAbs2().dot(mu));
  return f / nn;
}

}  // namespace detail

/// Objective value at a feasible f (normalized internally).
inline double log_sobolev_ratio(const Matrix& w, const Vector& mu, Vector f) {
  f = detail::normalize_sphere(std::move(f), mu);
  const double e = f.dot(w * f);
  if (!(e > 1e-300)) return 0.0;
  return detail::entropy_term(f, mu) / e;
}

/// Gradient ascent on the L^2(mu) sphere with backtracking.
inline std::pair<double, Vector> log_sobolev_ascent(const Matrix& w, const Vector& mu, Vector f,
                                                    int max_iter = 3000) {
  f = detail::normalize_sphere(std::move(f), mu);
  double value = log_sobolev_ratio(w, mu, f);
  double step = 1.0;
  const Vector metric = mu.cwiseMax(1e-12 * mu.maxCoeff());
  for (int it = 0; it < max_iter; ++it) {
    const double e = f.dot(w * f);
    if (!(e > 1e-300)) break;
    Vector grad_n(f.size());
    for (Eigen::Index i = 0; i < f.size(); ++i) {
      const double a = std::abs(f[i]);
      grad_n[i] = mu[i] * (a > 0.0 ? 2.0 * f[i] * std::log(a) + f[i] : 0.0);
    }
    const Vector grad = (grad_n - value * 2.0 * (w * f)) / e;
    // Gradient in the metric diag(max(mu, floor)), projected on the tangent
    // space of <f^2, mu> = 1. The floor keeps underflowed states finite.
    const Vector normal = mu.cwiseProduct(f);
    const Vector r = grad.cwiseQuotient(metric);
    const Vector rn = normal.cwiseQuotient(metric);
    const Vector g = r - (normal.dot(r) / normal.dot(rn)) * rn;
    const double gnorm = std::sqrt(g.cwiseAbs2().dot(metric));
    if (gnorm < 1e-13 * std::max(1.0, std::abs(value))) break;
    bool improved = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Vector cand = detail::normalize_sphere(f + (step / gnorm) * g, mu);
      const double v = log_sobolev_ratio(w, mu, cand);
      if (v > value) {
        const double gain = v - value;
        f = cand;
        value = v;
        step *= 1.5;
        improved = gain > 1e-14 * std::abs(v);
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;
  }
  return {value, f};
}

inline LogSobolevResult log_sobolev(const Matrix& l, const Vector& mu, int restarts = 64, std::uint64_t seed = 29) {
  detail::require_reversible(l, mu);
  if (!detail::connected(l)) throw Error(ErrorKind::InfiniteConstant, "chain is disconnected; gamma is infinite");
  const int n = static_cast<int>(mu.size());
  const Matrix w = dirichlet_matrix(l, mu);
  const PoincareResult poi = poincare(l, mu);
  std::vector<Vector> starts;
  for (double eps : {1e-3, 0.1, 0.5, 1.0, 2.0}) {
    starts.push_back(Vector::Ones(n) + eps * poi.eigenfunction);
    starts.push_back(Vector::Ones(n) - eps * poi.eigenfunction);
  }
  starts.push_back(poi.eigenfunction);
  for (int x = 0; x < n && static_cast<int>(starts.size()) < restarts; ++x) {
    Vector ind = Vector::Constant(n, 1e-3);
    ind[x] = 1.0;
    starts.push_back(ind);
  }
  RandomStream rng(seed, 0);
  while (static_cast<int>(starts.size()) < restarts) {
    Vector f(n);
    for (int i = 0; i < n; ++i) f[i] = 0.2 + rng.uniform();
    starts.push_back(f);
  }
  LogSobolevResult out;
  out.restarts = static_cast<int>(starts.size());
  for (const auto& s : starts) {
    auto [v, f] = log_sobolev_ascent(w, mu, s);
    if (v > out.gamma_lower) {
      out.gamma_lower = v;
      out.maximizer = f;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Birth-death chains on {a, ..., a + delta - 1} with 0 inside.

struct BirthDeathSpec {
  int a = 0;
  int delta = 1;
  Vector log_mu;  // log mu(x) at index x - a; tails may underflow in linear scale
  int s = 0;
  double rho = 1.0;
  double alpha = 0.5;

  int b() const { return a + delta - 1; }
  double log_at(int x) const { return log_mu[x - a]; }
  long double at(int x) const { return std::exp(static_cast<long double>(log_mu[x - a])); }
  Vector mu() const { return log_mu.array().exp(); }
  double r() const { return std::min(1.0 / (1.0 - alpha), static_cast<double>(delta)); }
  double u() const { return std::min(static_cast<double>(s), static_cast<double>(delta)); }
  double log_inv_mu_min() const { return -log_mu.minCoeff(); }

  static BirthDeathSpec from_weights(int a, const Vector& w) {
    BirthDeathSpec spec;
    spec.a = a;
    spec.delta = static_cast<int>(w.size());
    spec.log_mu = w.array().log() - std::log(w.sum());
    return spec;
  }

  void validate() const {
    if (a > 0 || b() < 0) throw Error(ErrorKind::Domain, "0 must lie in [a, b]");
    if (log_mu.size() != delta) throw Error(ErrorKind::Domain, "mu must have delta entries");
    if (!log_mu.allFinite()) throw Error(ErrorKind::Domain, "mu must be strictly positive");
    if (std::abs(log_sum_exp(log_mu)) > 1e-12) throw Error(ErrorKind::Domain, "mu must sum to 1");
  }

  /// Violations of the tail conditions (i) and (ii), as readable strings.
  std::vector<std::string> tail_violations() const {
    std::vector<std::string> bad;
    const double tol = 1e-12;
    const double log_rho = std::log(rho);
    const double log_alpha = std::log(alpha);
    const int lo = std::max(a, -s);
    const int hi = std::min(b(), s);
    for (int x = lo; x <= hi; ++x)
      for (int y = lo; y <= hi; ++y)
        if (log_at(x) > log_rho + log_at(y) + tol)
          bad.push_back("(i) x=" + std::to_string(x) + " y=" + std::to_string(y));
    for (int x = std::max(s, a); x + 1 <= b(); ++x)
      if (log_at(x + 1) > log_alpha + log_at(x) + tol)
        bad.push_back("(ii) x=" + std::to_string(x) + " y=" + std::to_string(x + 1));
    for (int x = std::min(-s, b()); x - 1 >= a; --x)
      if (log_at(x - 1) > log_alpha + log_at(x) + tol)
        bad.push_back("(ii) x=" + std::to_string(x) + " y=" + std::to_string(x - 1));
    return bad;
  }
};

/// Metropolis generator L(x, x±1) = (1/2) min(mu(y)/mu(x), 1).
inline Matrix birth_death_generator(const BirthDeathSpec& spec) {
  const int n = spec.delta;
  Matrix l = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j : {i - 1, i + 1}) {
      if (j < 0 || j >= n) continue;
      l(i, j) = 0.5 * std::exp(std::min(0.0, spec.log_mu[j] - spec.log_mu[i]));
    }
    l(i, i) = -l.row(i).sum();
  }
  return l;
}

struct MicloTable {
  std::vector<int> k_plus;
  std::vector<double> b_plus;
  std::vector<double> beta_plus;
  std::vector<int> k_minus;
  std::vector<double> b_minus;
  std::vector<double> beta_minus;
  double b_plus_max = 0.0;  // empty max = 0
  double b_minus_max = 0.0;
  double beta_plus_max = 0.0;
  double beta_minus_max = 0.0;

  double poincare_bound() const { return 4.0 * std::max(b_plus_max, b_minus_max); }
  double lsi_bound() const { return 20.0 * std::max(beta_plus_max, beta_minus_max); }
};

namespace detail {

// Neumaier summation in extended precision: tail masses below 1e-308 stay representable.
class WideSum {
 public:
  void add(long double x) {
    const long double t = sum_ + x;
    comp_ += std::abs(sum_) >= std::abs(x) ? (sum_ - t) + x : (x - t) + sum_;
    sum_ = t;
  }
  long double value() const { return sum_ + comp_; }

 private:
  long double sum_ = 0.0L;
  long double comp_ = 0.0L;
};

}  // namespace detail

/// Tables B_k^± and beta_k^± for k = 1..b and k = a..-1, summed in displayed order.
inline MicloTable miclo_tables(const BirthDeathSpec& spec) {
  spec.validate();
  MicloTable t;
  const int a = spec.a;
  const int b = spec.b();
  auto record = [](long double inv, long double mass, std::vector<double>& bs, std::vector<double>& betas,
                   double& bmax, double& betamax) {
    const double bk = static_cast<double>(inv * mass);
    const double betak = static_cast<double>(2.0L * inv * mass * std::abs(std::log(mass)));
    bs.push_back(bk);
    betas.push_back(betak);
    bmax = std::max(bmax, bk);
    betamax = std::max(betamax, betak);
  };
  for (int k = 1; k <= b; ++k) {
    detail::WideSum inv, mass;
    for (int x = 1; x <= k; ++x) inv.add(1.0L / std::min(spec.at(x - 1), spec.at(x)));
    for (int x = k; x <= b; ++x) mass.add(spec.at(x));
    t.k_plus.push_back(k);
    record(inv.value(), mass.value(), t.b_plus, t.beta_plus, t.b_plus_max, t.beta_plus_max);
  }
  for (int k = a; k <= -1; ++k) {
    detail::WideSum inv, mass;
    for (int x = k; x <= -1; ++x) inv.add(1.0L / std::min(spec.at(x + 1), spec.at(x)));
    for (int x = a; x <= k; ++x) mass.add(spec.at(x));
    t.k_minus.push_back(k);
    record(inv.value(), mass.value(), t.b_minus, t.beta_minus, t.b_minus_max, t.beta_minus_max);
  }
  return t;
}

struct MicloPoincare {
  double b_plus = 0.0;
  double b_minus = 0.0;
  double bound = 0.0;  // 4 max(B+, B-)
  MicloTable table;
};

inline MicloPoincare miclo_poincare(const BirthDeathSpec& spec) {
  MicloPoincare out;
  out.table = miclo_tables(spec);
  out.b_plus = out.table.b_plus_max;
  out.b_minus = out.table.b_minus_max;
  out.bound = out.table.poincare_bound();
  return out;
}

struct MicloLsi {
  double beta_plus = 0.0;
  double beta_minus = 0.0;
  double bound = 0.0;        // 20 max(beta+, beta-)
  double rough_bound = 0.0;  // 20 * 2 log(1/mu_*) max(B+, B-)
};

inline MicloLsi miclo_lsi(const BirthDeathSpec& spec) {
  const MicloTable t = miclo_tables(spec);
  MicloLsi out;
  out.beta_plus = t.beta_plus_max;
  out.beta_minus = t.beta_minus_max;
  out.bound = t.lsi_bound();
  out.rough_bound = 20.0 * 2.0 * spec.log_inv_mu_min() * std::max(t.b_plus_max, t.b_minus_max);
  return out;
}

struct MetroBounds {
  double poincare = 0.0;  // 4 rho u r + max(4 r^2, rho u^2)
  double lsi = 0.0;       // 10 (4 rho u r + max(rho u^2, 4 r^2)) log(1/mu_*)
};

inline MetroBounds metro_bounds(const BirthDeathSpec& spec) {
  spec.validate();
  const auto bad = spec.tail_violations();
  if (!bad.empty()) {
    std::ostringstream msg;
    msg << "tail conditions fail at";
    for (const auto& v : bad) msg << ' ' << v << ';';
    throw Error(ErrorKind::Certification, msg.str());
  }
  const double r = spec.r();
  const double u = spec.u();
  const double rho = spec.rho;
  MetroBounds out;
  out.poincare = 4.0 * rho * u * r + std::max(4.0 * r * r, rho * u * u);
  out.lsi = 10.0 * (4.0 * rho * u * r + std::max(rho * u * u, 4.0 * r * r)) * spec.log_inv_mu_min();
  return out;
}

struct GaussModel {
  BirthDeathSpec spec;
  double sigma = 1.0;
  double poincare_display = 0.0;  // 30 ((sigma ∧ delta) ∨ 2)^2
  double lsi_display = 0.0;       // 300 (delta / (sigma ∧ 1))^2 + 300 ((sigma ∧ delta) ∨ 2)^2 log delta
};

/// mu(x) ∝ exp(-x^2 / (2 sigma^2)) on {a, ..., a + delta - 1}.
inline GaussModel gauss_model(double sigma, int a, int delta) {
  if (!(sigma > 0.0)) throw Error(ErrorKind::Domain, "sigma must be positive");
  if (delta < 1 || a > 0 || a + delta - 1 < 0) throw Error(ErrorKind::Domain, "0 must lie in [a, a + delta - 1]");
  GaussModel g;
  g.sigma = sigma;
  g.spec.a = a;
  g.spec.delta = delta;
  Vector e(delta);
  for (int i = 0; i < delta; ++i) {
    const double x = a + i;
    e[i] = -x * x / (2 * sigma * sigma);
  }
  g.spec.log_mu = e.array() - log_sum_exp(e);
  g.spec.s = static_cast<int>(std::floor(sigma));
  g.spec.rho = std::exp(0.5);
  g.spec.alpha = std::exp(-(std::floor(sigma) + 0.5) / (sigma * sigma));
  if (!g.spec.tail_violations().empty())
    throw Error(ErrorKind::InternalConsistency, "Gauss tail parameters fail their own conditions");
  const double d = static_cast<double>(delta);
  const double m = std::max(std::min(sigma, d), 2.0);
  g.poincare_display = 30.0 * m * m;
  const double sd = std::min(sigma, 1.0);
  g.lsi_display = 300.0 * (d / sd) * (d / sd) + 300.0 * m * m * std::log(d);
  return g;
}

struct DriftConditionCheck {
  bool holds = true;
  double worst_margin = kInf;  // min over grid of rhs - lhs
  double max_osc = 0.0;        // max over grid of osc(H_t)
  double max_osc_bound = 0.0;  // max of (2|sigma'|/sigma + |m'|/delta) delta^2 / sigma^2
  bool osc_bound_holds = true;
};

/// Checks 2|sigma'|/sigma + |m'|/delta <= sigma^2/delta^2 on a grid and the
/// resulting oscillation bound against the family's actual H.
inline DriftConditionCheck moving_gauss_conditions(const EvolvingFamily& family, LinearSchedule mean,
                                                   LinearSchedule sigma, int delta, double t0,
                                                   std::size_t grid = 257) {
  DriftConditionCheck out;
  const double d = delta;
  for (double t : uniform_grid(0.0, t0, grid)) {
    const double s = sigma.at(t);
    const double lhs = 2.0 * std::abs(sigma.rate) / s + std::abs(mean.rate) / d;
    const double rhs = s * s / (d * d);
    out.worst_margin = std::min(out.worst_margin, rhs - lhs);
    if (lhs > rhs) out.holds = false;
    const double bound = lhs * d * d / (s * s);
    const double osc = oscillation(family.potential_dt(t));
    out.max_osc = std::max(out.max_osc, osc);
    out.max_osc_bound = std::max(out.max_osc_bound, bound);
    if (osc > bound * (1 + 1e-9) + 1e-12) out.osc_bound_holds = false;
  }
  return out;
}

/// Spec with 0 placed at the mode of mu (tail parameters left trivial).
inline BirthDeathSpec birth_death_at_mode(const Vector& mu) {
  Eigen::Index mode = 0;
  mu.maxCoeff(&mode);
  return BirthDeathSpec::from_weights(-static_cast<int>(mode), mu);
}

// ---------------------------------------------------------------------------

struct ConstantsReport {
  double t = 0.0;
  double c_poi = 0.0;
  double a = 0.0;
  double b = 0.0;
  double gamma_lower = 0.0;
  std::optional<double> gamma_upper;
  std::string gamma_upper_method;
  // Partitioned variants: max over blocks.
  std::optional<double> a_tilde;
  std::optional<double> b_tilde;
  std::optional<double> gamma_lower_tilde;
  std::optional<double> gamma_upper_tilde;
  std::optional<double> c_poi_tilde;
};

struct ConstantsOptions {
  bool log_sobolev = true;
  int lsi_restarts = 64;
  // Chains on consecutive states with nearest-neighbour Metropolis moves
  // admit the one-dimensional upper bound 20 max(beta±).
  bool birth_death = false;
  bool partitioned = false;
};

namespace detail {

inline Matrix restrict(const Matrix& l, const std::vector<int>& states) {
  const int m = static_cast<int>(states.size());
  Matrix r(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) r(i, j) = l(states[i], states[j]);
  for (int i = 0; i < m; ++i) r(i, i) = -(r.row(i).sum() - r(i, i));
  return r;
}

}  // namespace detail

inline ConstantsReport constants_at(const EvolvingFamily& family, const GeneratorSchedule& gens, double t,
                                    const ConstantsOptions& opt = {}) {
  ConstantsReport rep;
  rep.t = t;
  const Matrix l = gens.rates(t);
  const Vector mu = measure_at(family, t).weights;
  if (!opt.partitioned) {
    rep.c_poi = poincare(l, mu).c_poi;
    const auto wc = weighted_constants(l, mu, centered_h(family.potential_dt(t), mu));
    rep.a = wc.a;
    rep.b = wc.b;
    if (opt.log_sobolev) rep.gamma_lower = log_sobolev(l, mu, opt.lsi_restarts).gamma_lower;
    if (opt.birth_death) {
      rep.gamma_upper = miclo_lsi(birth_death_at_mode(mu)).bound;
      rep.gamma_upper_method = "miclo-beta";
    }
    return rep;
  }
  double ca = 0.0, cb = 0.0, gl = 0.0, gu = 0.0, cp = 0.0;
  for (const auto& block : block_conditionals(family, t)) {
    const Matrix lb = detail::restrict(l, block.states);
    if (block.states.size() == 1) continue;
    cp = std::max(cp, poincare(lb, block.mu).c_poi);
    const auto wc = weighted_constants(lb, block.mu, block.h);
    ca = std::max(ca, wc.a);
    cb = std::max(cb, wc.b);
    if (opt.log_sobolev) gl = std::max(gl, log_sobolev(lb, block.mu, opt.lsi_restarts).gamma_lower);
    if (opt.birth_death) gu = std::max(gu, miclo_lsi(birth_death_at_mode(block.mu)).bound);
  }
  rep.a_tilde = ca;
  rep.b_tilde = cb;
  rep.c_poi_tilde = cp;
  if (opt.log_sobolev) rep.gamma_lower_tilde = gl;
  if (opt.birth_death) {
    rep.gamma_upper_tilde = gu;
    rep.gamma_upper_method = "miclo-beta";
  }
  return rep;
}

}  // namespace seqmc
