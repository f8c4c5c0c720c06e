#pragma once

// Time-inhomogeneous reversible generators: Metropolis and product
// constructions, Dirichlet forms and carré du champ operators.

#include "seqmc/model.hpp"

namespace seqmc {

/// Symmetric proposal matrices K_t.
struct ProposalSchedule {
  std::function<Matrix(double)> matrix;
  double off_diagonal_bound = 1.0;  // sup_t max_x sum_{y != x} K_t(x, y)
  bool time_homogeneous = false;

  void validate(int n, const std::vector<double>& times) const {
    for (double t : times) {
      const Matrix k = matrix(t);
      if (k.rows() != n || k.cols() != n) throw Error(ErrorKind::InvalidModel, "proposal has wrong shape");
      if ((k.array() < 0.0).any()) throw Error(ErrorKind::InvalidModel, "proposal entries must be >= 0");
      if ((k - k.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw Error(ErrorKind::InvalidModel, "proposal must be symmetric");
      if ((k.rowwise().sum().array() - 1.0).abs().maxCoeff() > 1e-12)
        throw Error(ErrorKind::InvalidModel, "proposal rows must sum to 1");
    }
  }
};

/// Nearest-neighbour proposal with probability 1/2 per existing neighbour;
/// moves that would leave the set stay on the diagonal.
inline ProposalSchedule nearest_neighbor_proposal(const std::vector<int>& order, int n) {
  Matrix k = Matrix::Zero(n, n);
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    k(order[i], order[i + 1]) = 0.5;
    k(order[i + 1], order[i]) = 0.5;
  }
  for (int x = 0; x < n; ++x) k(x, x) = 1.0 - (k.row(x).sum() - k(x, x));
  return {[k](double) { return k; }, 1.0, true};
}

inline ProposalSchedule nearest_neighbor_proposal(const StateSpace& space) {
  std::vector<int> order(space.size());
  std::iota(order.begin(), order.end(), 0);
  if (space.embedding) {
    const auto& e = *space.embedding;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return e[a] < e[b]; });
    // Only consecutive integers are neighbours.
    const int n = space.size();
    Matrix k = Matrix::Zero(n, n);
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      if (e[order[i + 1]] - e[order[i]] != 1) continue;
      k(order[i], order[i + 1]) = 0.5;
      k(order[i + 1], order[i]) = 0.5;
    }
    for (int x = 0; x < n; ++x) k(x, x) = 1.0 - (k.row(x).sum() - k(x, x));
    return {[k](double) { return k; }, 1.0, true};
  }
  return nearest_neighbor_proposal(order, space.size());
}

/// Nearest-neighbour moves within each partition block only.
inline ProposalSchedule block_nearest_neighbor_proposal(const StateSpace& space) {
  if (!space.partition) throw Error(ErrorKind::Configuration, "block proposal needs a partition");
  const int n = space.size();
  Matrix k = Matrix::Zero(n, n);
  for (const auto& block : *space.partition) {
    for (std::size_t i = 0; i + 1 < block.size(); ++i) {
      k(block[i], block[i + 1]) = 0.5;
      k(block[i + 1], block[i]) = 0.5;
    }
  }
  for (int x = 0; x < n; ++x) k(x, x) = 1.0 - (k.row(x).sum() - k(x, x));
  return {[k](double) { return k; }, 1.0, true};
}

/// Uniform proposal to every other state.
inline ProposalSchedule complete_proposal(int n) {
  Matrix k = Matrix::Identity(n, n);
  if (n > 1) k = Matrix::Constant(n, n, 1.0 / (n - 1)) - Matrix::Identity(n, n) / (n - 1);
  return {[k](double) { return k; }, 1.0, true};
}

/// Continuous piecewise-linear intensity t -> lambda_t, constant outside its knots.
struct Intensity {
  std::vector<double> times{0.0};
  std::vector<double> values{1.0};

  static Intensity constant(double v) { return {{0.0}, {v}}; }

  double at(double t) const {
    if (t <= times.front()) return values.front();
    if (t >= times.back()) return values.back();
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - times.begin()) - 1;
    const double w = (t - times[i]) / (times[i + 1] - times[i]);
    return (1 - w) * values[i] + w * values[i + 1];
  }

  /// Exact maximum over [a, b]: endpoints and interior knots.
  double max_on(double a, double b) const {
    double m = std::max(at(a), at(b));
    for (std::size_t i = 0; i < times.size(); ++i)
      if (times[i] > a && times[i] < b) m = std::max(m, values[i]);
    return m;
  }

  void validate() const {
    if (times.empty() || times.size() != values.size())
      throw Error(ErrorKind::InvalidModel, "intensity needs matching knots and values");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!(values[i] >= 0.0) || !std::isfinite(values[i]))
        throw Error(ErrorKind::InvalidModel, "intensity must be finite and >= 0");
      if (i && !(times[i] > times[i - 1])) throw Error(ErrorKind::InvalidModel, "intensity knots must increase");
    }
  }
};

struct GeneratorSchedule {
  int n = 0;
  std::function<Matrix(double)> rates;        // t -> L_t (without lambda_t)
  std::function<Vector(double, int)> row;     // t, x -> L_t(x, .)
  Intensity intensity;
  double exit_rate_bound = 1.0;  // sup_t max_x -L_t(x, x)

  Matrix scaled(double t) const { return intensity.at(t) * rates(t); }
};

inline double detailed_balance_defect(const Matrix& l, const Vector& mu) {
  const Matrix flux = mu.asDiagonal() * l;
  return (flux - flux.transpose()).cwiseAbs().maxCoeff();
}

inline void validate_rate_matrix(const Matrix& l) {
  for (Eigen::Index x = 0; x < l.rows(); ++x) {
    double scale = 0.0;
    for (Eigen::Index y = 0; y < l.cols(); ++y) {
      if (x != y && l(x, y) < 0.0) throw Error(ErrorKind::InvalidModel, "negative off-diagonal rate");
      scale = std::max(scale, std::abs(l(x, y)));
    }
    if (std::abs(l.row(x).sum()) > 1e-12 * std::max(1.0, scale))
      throw Error(ErrorKind::InvalidModel, "rate matrix rows must sum to 0");
  }
}

inline void validate_generator(const EvolvingFamily& family, const GeneratorSchedule& gens,
                               const std::vector<double>& times) {
  gens.intensity.validate();
  for (double t : times) {
    const Matrix l = gens.rates(t);
    validate_rate_matrix(l);
    if (detailed_balance_defect(l, measure_at(family, t).weights) > 1e-10)
      throw Error(ErrorKind::Reversibility, "detailed balance fails at t=" + std::to_string(t));
  }
}

/// L_t(x, y) = K_t(x, y) min(mu_t(y)/mu_t(x), 1), diagonal = -row sum.
inline GeneratorSchedule metropolis(const EvolvingFamily& family, const ProposalSchedule& proposal,
                                    Intensity intensity = Intensity::constant(1.0)) {
  const int n = family.size();
  const Vector log_mu0 = family.mu0.array().log();
  auto potential = family.potential;
  auto kmat = proposal.matrix;
  GeneratorSchedule g;
  g.n = n;
  const bool fixed = proposal.time_homogeneous;
  const Matrix k0 = fixed ? kmat(0.0) : Matrix();
  g.rates = [n, log_mu0, potential, kmat, fixed, k0](double t) {
    const Vector lw = log_mu0 - potential(t);
    const Matrix k = fixed ? k0 : kmat(t);
    Matrix l = Matrix::Zero(n, n);
    for (int x = 0; x < n; ++x) {
      double out = 0.0;
      for (int y = 0; y < n; ++y) {
        if (y == x || k(x, y) == 0.0) continue;
        l(x, y) = k(x, y) * std::exp(std::min(0.0, lw[y] - lw[x]));
        out += l(x, y);
      }
      l(x, x) = -out;
    }
    return l;
  };
  g.row = [n, log_mu0, potential, kmat, fixed, k0](double t, int x) {
    const Vector lw = log_mu0 - potential(t);
    Matrix scratch;
    const Matrix& k = fixed ? k0 : (scratch = kmat(t));
    Vector r = Vector::Zero(n);
    double out = 0.0;
    for (int y = 0; y < n; ++y) {
      if (y == x || k(x, y) == 0.0) continue;
      r[y] = k(x, y) * std::exp(std::min(0.0, lw[y] - lw[x]));
      out += r[y];
    }
    r[x] = -out;
    return r;
  };
  g.intensity = std::move(intensity);
  g.exit_rate_bound = proposal.off_diagonal_bound;
  return g;
}

/// Symmetric matrix W with E(f) = f' W f, built from the flux diag(mu) L.
inline Matrix dirichlet_matrix(const Matrix& l, const Vector& mu) {
  const Matrix flux = mu.asDiagonal() * l;
  return -0.5 * (flux + flux.transpose());
}

/// E(f) = (1/2) sum_{x,y} (f(y) - f(x))^2 L(x, y) mu(x).
inline double dirichlet_form(const Matrix& l, const Vector& mu, const Vector& f) {
  if (detailed_balance_defect(l, mu) > 1e-10)
    throw Error(ErrorKind::Reversibility, "Dirichlet form requires detailed balance");
  CompensatedSum acc;
  for (Eigen::Index x = 0; x < l.rows(); ++x)
    for (Eigen::Index y = 0; y < l.cols(); ++y)
      if (x != y && l(x, y) != 0.0) acc.add((f[y] - f[x]) * (f[y] - f[x]) * l(x, y) * mu[x]);
  return 0.5 * acc.value();
}

/// Gamma(f)(x) = sum_y L(x, y) (f(y) - f(x))^2.
inline Vector carre_du_champ(const Matrix& l, const Vector& f) {
  Vector g = Vector::Zero(f.size());
  for (Eigen::Index x = 0; x < l.rows(); ++x)
    for (Eigen::Index y = 0; y < l.cols(); ++y)
      if (x != y) g[x] += l(x, y) * (f[y] - f[x]) * (f[y] - f[x]);
  return g;
}

/// Product dynamics moving one coordinate at a time with the component rates.
/// All components must share one intensity schedule.
inline std::pair<EvolvingFamily, GeneratorSchedule> product_generator(
    const std::vector<std::pair<EvolvingFamily, GeneratorSchedule>>& components, std::size_t cap = 100000) {
  if (components.empty()) throw Error(ErrorKind::InvalidModel, "product of zero components");
  if (components.size() == 1) return components.front();
  std::vector<EvolvingFamily> fams;
  for (const auto& c : components) fams.push_back(c.first);
  EvolvingFamily fam = product_family(fams, cap);
  const int n = fam.size();

  const auto& lam = components.front().second.intensity;
  for (const auto& c : components)
    if (c.second.intensity.times != lam.times || c.second.intensity.values != lam.values)
      throw Error(ErrorKind::Configuration, "product components must share the intensity schedule");

  std::vector<int> sizes;
  std::vector<std::function<Matrix(double)>> comp_rates;
  double bound = 0.0;
  for (const auto& c : components) {
    sizes.push_back(c.first.size());
    comp_rates.push_back(c.second.rates);
    bound += c.second.exit_rate_bound;
  }
  // stride[k]: index step for coordinate k (last coordinate fastest).
  std::vector<int> stride(sizes.size(), 1);
  for (int k = static_cast<int>(sizes.size()) - 2; k >= 0; --k) stride[k] = stride[k + 1] * sizes[k + 1];

  auto row_from = [sizes, stride, n](const std::vector<Matrix>& ls, int x) {
    Vector r = Vector::Zero(n);
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      const int xk = (x / stride[k]) % sizes[k];
      for (int yk = 0; yk < sizes[k]; ++yk) {
        const int y = x + (yk - xk) * stride[k];
        r[y] += ls[k](xk, yk);
      }
    }
    return r;
  };

  GeneratorSchedule g;
  g.n = n;
  g.rates = [comp_rates, row_from, n](double t) {
    std::vector<Matrix> ls;
    for (const auto& rf : comp_rates) ls.push_back(rf(t));
    Matrix l(n, n);
    for (int x = 0; x < n; ++x) l.row(x) = row_from(ls, x).transpose();
    return l;
  };
  g.row = [comp_rates, row_from](double t, int x) {
    std::vector<Matrix> ls;
    for (const auto& rf : comp_rates) ls.push_back(rf(t));
    return row_from(ls, x);
  };
  g.intensity = lam;
  g.exit_rate_bound = bound;
  return {std::move(fam), std::move(g)};
}

}  // namespace seqmc
