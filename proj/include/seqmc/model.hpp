#pragma once

// Finite state spaces and evolving families mu_t ∝ exp(-U_t) mu_0, together
// with the centered log-derivative H_t, its oscillation, the integrated
// norms K_t(q) and their blockwise (partitioned) counterparts.

#include "seqmc/core.hpp"

#include <algorithm>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace seqmc {

using Partition = std::vector<std::vector<int>>;

struct StateSpace {
  std::vector<std::string> labels;
  std::optional<std::vector<int>> embedding;
  std::optional<Partition> partition;

  int size() const { return static_cast<int>(labels.size()); }

  static StateSpace indexed(int n) {
    StateSpace s;
    s.labels.reserve(n);
    for (int i = 0; i < n; ++i) s.labels.push_back(std::to_string(i));
    s.validate();
    return s;
  }

  /// The integer interval {a, ..., a + delta - 1} with its embedding.
  static StateSpace interval(int a, int delta) {
    StateSpace s;
    std::vector<int> coords(delta);
    for (int i = 0; i < delta; ++i) {
      coords[i] = a + i;
      s.labels.push_back(std::to_string(a + i));
    }
    s.embedding = std::move(coords);
    s.validate();
    return s;
  }

  void validate() const {
    if (labels.empty()) throw Error(ErrorKind::InvalidModel, "state space must have at least one state");
    std::set<std::string> seen(labels.begin(), labels.end());
    if (seen.size() != labels.size()) throw Error(ErrorKind::InvalidModel, "state labels must be unique");
    if (embedding) {
      if (embedding->size() != labels.size())
        throw Error(ErrorKind::InvalidModel, "embedding size does not match state count");
      std::set<int> coords(embedding->begin(), embedding->end());
      if (coords.size() != embedding->size())
        throw Error(ErrorKind::InvalidModel, "embedding coordinates must be distinct");
    }
    if (partition) {
      std::vector<int> hits(labels.size(), 0);
      for (const auto& block : *partition) {
        if (block.empty()) throw Error(ErrorKind::InvalidModel, "partition blocks must be nonempty");
        for (int x : block) {
          if (x < 0 || x >= size()) throw Error(ErrorKind::InvalidModel, "partition index out of range");
          ++hits[x];
        }
      }
      for (int h : hits)
        if (h != 1) throw Error(ErrorKind::InvalidModel, "partition blocks must be disjoint and cover all states");
    }
  }
};

/// Evaluates a state-indexed vector at time t.
using TimeVectorFn = std::function<Vector(double)>;

struct EvolvingFamily {
  StateSpace space;
  Vector mu0;
  TimeVectorFn potential;     // t -> U_t
  TimeVectorFn potential_dt;  // t -> dU_t/dt
  double horizon = 1.0;
  std::string name = "custom";
  // Tabulated families interpolate linearly, so dU/dt is piecewise constant.
  bool piecewise_linear = false;

  int size() const { return space.size(); }

  void validate() const {
    space.validate();
    if (mu0.size() != space.size()) throw Error(ErrorKind::InvalidModel, "mu0 size does not match state space");
    if ((mu0.array() <= 0.0).any()) throw Error(ErrorKind::InvalidModel, "mu0 must be strictly positive");
    if (std::abs(mu0.sum() - 1.0) > 1e-12) throw Error(ErrorKind::InvalidModel, "mu0 must sum to 1");
    if (!(horizon > 0.0)) throw Error(ErrorKind::InvalidModel, "horizon must be positive");
    constexpr double h = 1e-5;
    for (int k = 0; k < 7; ++k) {
      const double t = horizon * (k + 0.37) / 7.0;
      const Vector d = potential_dt(t);
      const Vector fd = (potential(t + h) - potential(t - h)) / (2 * h);
      for (Eigen::Index x = 0; x < d.size(); ++x) {
        if (!std::isfinite(d[x]) || std::abs(fd[x] - d[x]) > 1e-4 * std::max(1.0, std::abs(d[x])))
          throw Error(ErrorKind::InvalidModel,
                      "potential_dt inconsistent with potential at t=" + std::to_string(t));
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Builtin families.

inline EvolvingFamily constant_family(StateSpace space, Vector mu0, double horizon) {
  const int n = space.size();
  EvolvingFamily f;
  f.space = std::move(space);
  f.mu0 = std::move(mu0);
  f.potential = [n](double) { return Vector::Zero(n).eval(); };
  f.potential_dt = [n](double) { return Vector::Zero(n).eval(); };
  f.horizon = horizon;
  f.name = "h-zero";
  return f;
}

/// U_t = t * U (the exponential family of U and mu0).
inline EvolvingFamily exponential_tilt(StateSpace space, Vector mu0, Vector tilt, double horizon) {
  EvolvingFamily f;
  f.space = std::move(space);
  f.mu0 = std::move(mu0);
  f.potential = [tilt](double t) { return (t * tilt).eval(); };
  f.potential_dt = [tilt](double) { return tilt; };
  f.horizon = horizon;
  f.name = "exp-tilt";
  return f;
}

/// Affine schedule value + rate * t.
struct LinearSchedule {
  double value = 0.0;
  double rate = 0.0;
  double at(double t) const { return value + rate * t; }
};

/// mu_t(x) ∝ exp(-(x - m_t)^2 / (2 sigma_t^2)) on {a, ..., a + delta - 1}.
/// mu0 is the t = 0 Gaussian and U_t is the log-ratio to it, so U_0 = 0.
inline EvolvingFamily moving_gaussian(int a, int delta, LinearSchedule mean, LinearSchedule sigma,
                                      double horizon) {
  if (sigma.at(0.0) <= 0.0 || sigma.at(horizon) <= 0.0)
    throw Error(ErrorKind::InvalidModel, "sigma_t must stay positive on [0, horizon]");
  EvolvingFamily f;
  f.space = StateSpace::interval(a, delta);
  Vector x(delta);
  for (int i = 0; i < delta; ++i) x[i] = a + i;
  auto energy = [x, mean, sigma](double t) {
    const double m = mean.at(t);
    const double s = sigma.at(t);
    return ((x.array() - m).square() / (2 * s * s)).matrix().eval();
  };
  const Vector e0 = energy(0.0);
  Vector w = (-(e0.array() - e0.minCoeff())).exp();
  f.mu0 = w / w.sum();
  f.potential = [energy, e0](double t) { return (energy(t) - e0).eval(); };
  f.potential_dt = [x, mean, sigma](double t) {
    const double m = mean.at(t);
    const double s = sigma.at(t);
    const Eigen::ArrayXd d = x.array() - m;
    return (-d * mean.rate / (s * s) - d.square() * sigma.rate / (s * s * s)).matrix().eval();
  };
  f.horizon = horizon;
  f.name = "moving-gauss";
  return f;
}

/// Product of independent components; states are ordered with the last
/// component varying fastest.
inline EvolvingFamily product_family(const std::vector<EvolvingFamily>& parts, std::size_t cap = 100000) {
  if (parts.empty()) throw Error(ErrorKind::InvalidModel, "product of zero components");
  if (parts.size() == 1) return parts.front();
  std::size_t total = 1;
  for (const auto& p : parts) {
    total *= static_cast<std::size_t>(p.size());
    if (total > cap) throw Error(ErrorKind::Size, "product state count exceeds cap " + std::to_string(cap));
  }
  const int n = static_cast<int>(total);
  std::vector<int> sizes;
  for (const auto& p : parts) sizes.push_back(p.size());

  // digits[k][x] is the coordinate of product state x in component k.
  auto digits = std::make_shared<std::vector<std::vector<int>>>(parts.size(), std::vector<int>(n));
  EvolvingFamily f;
  for (int x = 0; x < n; ++x) {
    int rem = x;
    std::string label;
    for (int k = static_cast<int>(parts.size()) - 1; k >= 0; --k) {
      (*digits)[k][x] = rem % sizes[k];
      rem /= sizes[k];
    }
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (k) label += ",";
      label += parts[k].space.labels[(*digits)[k][x]];
    }
    f.space.labels.push_back("(" + label + ")");
  }
  f.mu0 = Vector::Ones(n);
  for (std::size_t k = 0; k < parts.size(); ++k)
    for (int x = 0; x < n; ++x) f.mu0[x] *= parts[k].mu0[(*digits)[k][x]];
  f.mu0 /= f.mu0.sum();

  auto lift = [parts, digits, n](bool dt) {
    return [parts, digits, n, dt](double t) {
      Vector out = Vector::Zero(n);
      for (std::size_t k = 0; k < parts.size(); ++k) {
        const Vector v = dt ? parts[k].potential_dt(t) : parts[k].potential(t);
        for (int x = 0; x < n; ++x) out[x] += v[(*digits)[k][x]];
      }
      return out;
    };
  };
  f.potential = lift(false);
  f.potential_dt = lift(true);
  f.horizon = parts.front().horizon;
  for (const auto& p : parts) f.horizon = std::min(f.horizon, p.horizon);
  f.name = "product";
  return f;
}

/// U_t tabulated at increasing knot times and linearly interpolated.
inline EvolvingFamily tabulated_family(StateSpace space, Vector mu0, std::vector<double> times,
                                       std::vector<Vector> values) {
  if (times.size() < 2 || times.size() != values.size())
    throw Error(ErrorKind::InvalidModel, "tabulated potential needs >= 2 knots with one vector each");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw Error(ErrorKind::InvalidModel, "knot times must increase");
  for (const auto& v : values)
    if (v.size() != space.size()) throw Error(ErrorKind::InvalidModel, "tabulated vector has wrong size");
  auto segment = [times](double t) {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    std::size_t i = it == times.begin() ? 0 : static_cast<std::size_t>(it - times.begin()) - 1;
    return std::min(i, times.size() - 2);
  };
  EvolvingFamily f;
  f.space = std::move(space);
  f.mu0 = std::move(mu0);
  f.potential = [times, values, segment](double t) {
    const std::size_t i = segment(t);
    const double w = (t - times[i]) / (times[i + 1] - times[i]);
    return ((1 - w) * values[i] + w * values[i + 1]).eval();
  };
  f.potential_dt = [times, values, segment](double t) {
    const std::size_t i = segment(t);
    return ((values[i + 1] - values[i]) / (times[i + 1] - times[i])).eval();
  };
  f.horizon = times.back();
  f.name = "tabulated";
  f.piecewise_linear = true;
  return f;
}

// ---------------------------------------------------------------------------
// Operations.

struct MeasureSnapshot {
  double t = 0.0;
  Vector weights;
  double logZ = 0.0;
};

inline MeasureSnapshot measure_at(const EvolvingFamily& family, double t) {
  const Vector u = family.potential(t);
  if (!u.allFinite()) throw Error(ErrorKind::InvalidModel, "non-finite potential at t=" + std::to_string(t));
  const Vector logw = -u.array() + family.mu0.array().log();
  MeasureSnapshot snap;
  snap.t = t;
  snap.logZ = log_sum_exp(logw);
  snap.weights = (logw.array() - snap.logZ).exp();
  snap.weights /= snap.weights.sum();
  return snap;
}

/// H_t centered against a precomputed mu_t.
inline Vector centered_h(const Vector& dU, const Vector& mu) {
  CompensatedSum m;
  for (Eigen::Index x = 0; x < dU.size(); ++x) m.add(dU[x] * mu[x]);
  Vector h = dU.array() - m.value();
  // One refinement pass brings <H, mu> to round-off level.
  CompensatedSum r;
  for (Eigen::Index x = 0; x < h.size(); ++x) r.add(h[x] * mu[x]);
  h.array() -= r.value();
  return h;
}

inline Vector h_at(const EvolvingFamily& family, double t) {
  const Vector dU = family.potential_dt(t);
  if (!dU.allFinite()) throw Error(ErrorKind::InvalidModel, "non-finite dU/dt at t=" + std::to_string(t));
  return centered_h(dU, measure_at(family, t).weights);
}

struct OscillationTable {
  std::vector<double> times;
  std::vector<double> osc;
  double omega = 0.0;
  std::size_t grid_points = 0;  // omega is a grid approximation of the supremum
};

inline OscillationTable osc_and_omega(const EvolvingFamily& family, double t0, std::size_t grid_points = 512) {
  if (grid_points < 2) throw Error(ErrorKind::Domain, "grid_points must be >= 2");
  OscillationTable table;
  table.grid_points = grid_points;
  table.times = uniform_grid(0.0, t0, grid_points);
  for (double t : table.times) {
    // osc(H_t) = osc(dU/dt): centering cancels.
    const double o = oscillation(family.potential_dt(t));
    table.osc.push_back(o);
    table.omega = std::max(table.omega, o);
  }
  return table;
}

/// ∫_s^t osc(H_r) dr by adaptive quadrature.
inline double integrated_oscillation(const EvolvingFamily& family, double s, double t) {
  return integrate([&](double r) { return oscillation(family.potential_dt(r)); }, s, t, 1e-8);
}

/// K_t(q) = ∫_0^t ||H_s||_{L^q(mu_s)} ds.
inline double k_norm(const EvolvingFamily& family, double t, double q) {
  if (!(q >= 1.0)) throw Error(ErrorKind::Domain, "k_norm requires q >= 1");
  return integrate(
      [&](double s) {
        const auto snap = measure_at(family, s);
        return lp_norm(centered_h(family.potential_dt(s), snap.weights), snap.weights, q);
      },
      0.0, t, 1e-6);
}

// ---------------------------------------------------------------------------
// Partitioned variants.

/// Blockwise norm max_i ||f||_{L^p(mu(.|S_i))}.
inline double block_lp_norm(const Vector& f, const Vector& mu, const Partition& blocks, double p) {
  double best = 0.0;
  for (const auto& block : blocks) {
    Vector fb(block.size());
    Vector mb(block.size());
    for (std::size_t k = 0; k < block.size(); ++k) {
      fb[k] = f[block[k]];
      mb[k] = mu[block[k]];
    }
    mb /= mb.sum();
    best = std::max(best, lp_norm(fb, mb, p));
  }
  return best;
}

struct BlockConditional {
  std::vector<int> states;
  double mass = 0.0;  // mu_t(S_i)
  Vector mu;          // mu_t(. | S_i) over `states`
  Vector h;           // H_t^i = H_t - h_t(i) over `states`
  double h_mean = 0.0;  // h_t(i) = <H_t, mu_t^i>
};

struct PartitionReport {
  double t = 0.0;
  std::vector<BlockConditional> blocks;
  double m_tilde = 1.0;
  double k_tilde = 0.0;
  double q = 2.0;
  std::size_t grid_points = 0;
};

inline const Partition& require_partition(const EvolvingFamily& family) {
  if (!family.space.partition) throw Error(ErrorKind::Configuration, "state space has no partition");
  return *family.space.partition;
}

inline std::vector<BlockConditional> block_conditionals(const EvolvingFamily& family, double t) {
  const auto& blocks = require_partition(family);
  const auto snap = measure_at(family, t);
  const Vector h = centered_h(family.potential_dt(t), snap.weights);
  std::vector<BlockConditional> out;
  for (const auto& block : blocks) {
    BlockConditional bc;
    bc.states = block;
    const auto m = static_cast<Eigen::Index>(block.size());
    bc.mu.resize(m);
    Vector hb(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      bc.mu[k] = snap.weights[block[k]];
      hb[k] = h[block[k]];
    }
    bc.mass = bc.mu.sum();
    bc.mu /= bc.mass;
    bc.h = centered_h(hb, bc.mu);
    bc.h_mean = hb.dot(bc.mu);
    out.push_back(std::move(bc));
  }
  return out;
}

/// M~_t = max_i sup_{0<=r<=s<=t} mu_s(S_i)/mu_r(S_i) on a uniform grid.
inline double m_tilde(const EvolvingFamily& family, double t, std::size_t grid_points = 512) {
  const auto& blocks = require_partition(family);
  std::vector<double> running_min(blocks.size(), kInf);
  double best = 1.0;
  for (double s : uniform_grid(0.0, t, grid_points)) {
    const Vector w = measure_at(family, s).weights;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      double mass = 0.0;
      for (int x : blocks[i]) mass += w[x];
      running_min[i] = std::min(running_min[i], mass);
      best = std::max(best, mass / running_min[i]);
    }
  }
  return best;
}

/// K~_t(q) = ∫_0^t ||H_s||~_{L^q(mu_s)} ds.
inline double k_norm_partitioned(const EvolvingFamily& family, double t, double q) {
  const auto& blocks = require_partition(family);
  return integrate(
      [&](double s) {
        const auto snap = measure_at(family, s);
        return block_lp_norm(centered_h(family.potential_dt(s), snap.weights), snap.weights, blocks, q);
      },
      0.0, t, 1e-6);
}

inline PartitionReport partition_conditionals(const EvolvingFamily& family, double t, double q = 2.0,
                                              std::size_t grid_points = 512) {
  PartitionReport r;
  r.t = t;
  r.q = q;
  r.grid_points = grid_points;
  r.blocks = block_conditionals(family, t);
  r.m_tilde = m_tilde(family, t, grid_points);
  r.k_tilde = k_norm_partitioned(family, t, q);
  return r;
}

}  // namespace seqmc
