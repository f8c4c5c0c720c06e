#pragma once

// Interacting particle system: N replicas mutate with lambda_t L_t and are
// replaced pairwise at rate (H_t(x_i) - H_t(x_j))^+ / N. Simulation is exact
// (thinning against interval rate bounds) and deterministic given the seed.

#include "seqmc/flow.hpp"

#include <json.hpp>

#include <ostream>

namespace seqmc {

struct ParticleState {
  double t = 0.0;
  std::vector<int> positions;
  double log_weight = 0.0;  // -∫_0^t <H_s, eta_s> ds
  RandomStream rng;
  std::uint64_t mutations = 0;
  std::uint64_t selections = 0;
};

struct TrajectoryRecord {
  int particles = 0;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::vector<double> times;
  std::vector<Vector> eta;         // empirical measures, entries in {0, 1/N, ...}
  std::vector<double> log_weight;  // logW at each snapshot
  std::vector<std::uint64_t> mutations;   // cumulative at each snapshot
  std::vector<std::uint64_t> selections;  // cumulative at each snapshot
  std::vector<std::vector<int>> positions;  // only when requested

  std::size_t index_of(double t) const {
    for (std::size_t k = 0; k < times.size(); ++k)
      if (std::abs(times[k] - t) <= 1e-12 * std::max(1.0, std::abs(t))) return k;
    throw Error(ErrorKind::Lookup, "time " + std::to_string(t) + " is not a snapshot time");
  }
};

/// N i.i.d. draws from mu_0 by inverse CDF.
inline ParticleState init_particles(const EvolvingFamily& family, int n_particles, std::uint64_t seed,
                                    std::uint64_t stream = 0) {
  if (n_particles < 1) throw Error(ErrorKind::Domain, "need at least one particle");
  ParticleState st;
  st.rng = RandomStream(seed, stream);
  const Vector cdf = cumulative_sum(measure_at(family, 0.0).weights);
  st.positions.resize(static_cast<std::size_t>(n_particles));
  for (auto& x : st.positions) x = sample_index(cdf, st.rng.uniform());
  return st;
}

struct SimulationOptions {
  bool selection = true;
  bool keep_positions = false;
  std::size_t rate_subgrid = 17;  // points per interval for the osc(H) bound
  double rate_safety = 1.25;
  std::size_t segments = 64;  // minimum number of bounding intervals on [t, t_end]
};

namespace detail {

inline Vector occupation(const std::vector<int>& positions, int n) {
  Vector eta = Vector::Zero(n);
  for (int x : positions) eta[x] += 1.0;
  return eta / static_cast<double>(positions.size());
}

inline double interval_osc_bound(const EvolvingFamily& family, double a, double b, const SimulationOptions& opt) {
  double m = 0.0;
  for (double s : uniform_grid(a, b, std::max<std::size_t>(opt.rate_subgrid, 2))) {
    const Vector du = family.potential_dt(s);
    if (!du.allFinite()) throw Error(ErrorKind::Simulation, "non-finite H at t=" + std::to_string(s));
    m = std::max(m, oscillation(du));
  }
  return opt.rate_safety * m;
}

}  // namespace detail

/// Advances `state` to t_end, recording snapshots at every grid time in
/// [state.t, t_end]. logW uses the exact antiderivative of <H_s, eta> on
/// each constant-eta interval: -<U_b - U_a, eta> - (log Z_b - log Z_a).
inline TrajectoryRecord simulate(ParticleState& state, const EvolvingFamily& family, const GeneratorSchedule& gens,
                                 double t_end, std::vector<double> snapshot_grid,
                                 const SimulationOptions& opt = {}) {
  if (t_end < state.t || t_end > family.horizon + 1e-12)
    throw Error(ErrorKind::Domain, "simulate requires state.t <= t_end <= horizon");
  std::sort(snapshot_grid.begin(), snapshot_grid.end());
  for (double g : snapshot_grid)
    if (g < state.t - 1e-12 || g > t_end + 1e-12) throw Error(ErrorKind::Domain, "snapshot outside [t, t_end]");
  const int n = family.size();
  const int big_n = static_cast<int>(state.positions.size());
  const double inv_n = 1.0 / big_n;

  TrajectoryRecord rec;
  rec.particles = big_n;
  auto snapshot = [&](double t) {
    rec.times.push_back(t);
    rec.eta.push_back(detail::occupation(state.positions, n));
    rec.log_weight.push_back(state.log_weight);
    rec.mutations.push_back(state.mutations);
    rec.selections.push_back(state.selections);
    if (opt.keep_positions) rec.positions.push_back(state.positions);
  };

  // Breakpoints: snapshot times plus a uniform partition for tight bounds.
  std::vector<double> cuts = uniform_grid(state.t, t_end, opt.segments + 1);
  cuts.insert(cuts.end(), snapshot_grid.begin(), snapshot_grid.end());
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end(), [](double a, double b) { return std::abs(a - b) <= 1e-14; }),
             cuts.end());

  std::size_t next_snap = 0;
  auto emit_due = [&](double t) {
    while (next_snap < snapshot_grid.size() && snapshot_grid[next_snap] <= t + 1e-12) {
      snapshot(snapshot_grid[next_snap]);
      ++next_snap;
    }
  };
  emit_due(state.t);

  // logW(t) = logW(t_start) - (log Z_t - log Z_start) - <U_t, eta_t> + <U_start, eta_start>
  //           + sum over events of (U_tau(y) - U_tau(x)) / N.
  const double log_z_start = measure_at(family, state.t).logZ;
  const double log_w_start = state.log_weight;
  auto mean_u = [&](const Vector& u) {
    CompensatedSum acc;
    for (int x : state.positions) acc.add(u[x]);
    return acc.value() * inv_n;
  };
  const double u_start = mean_u(family.potential(state.t));
  CompensatedSum event_terms;
  auto current_log_w = [&](double t) {
    const Vector u = family.potential(t);
    return log_w_start - (measure_at(family, t).logZ - log_z_start) - mean_u(u) + u_start + event_terms.value();
  };

  for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
    const double a = cuts[c];
    const double b = cuts[c + 1];
    const double lam_bar = gens.intensity.max_on(a, b);
    const double omega_bar = opt.selection ? detail::interval_osc_bound(family, a, b, opt) : 0.0;
    const double mut_rate = big_n * lam_bar * gens.exit_rate_bound;
    const double sel_rate = big_n * omega_bar;
    const double total = mut_rate + sel_rate;
    if (!std::isfinite(total)) throw Error(ErrorKind::Simulation, "unbounded event rate on interval");
    double tau = a;
    while (total > 0.0) {
      tau += state.rng.exponential(total);
      if (tau >= b) break;
      if (state.rng.uniform() * total < mut_rate) {
        const auto i = state.rng.index(static_cast<std::size_t>(big_n));
        const int x = state.positions[i];
        const Vector row = gens.row(tau, x);
        const double exit = -row[x];
        const double rate = gens.intensity.at(tau) * exit;
        if (rate > lam_bar * gens.exit_rate_bound * (1 + 1e-12))
          throw Error(ErrorKind::Simulation, "exit rate exceeds its declared bound");
        if (state.rng.uniform() * lam_bar * gens.exit_rate_bound >= rate) continue;
        double target = state.rng.uniform() * exit;
        int y = x;
        for (int z = 0; z < n; ++z) {
          if (z == x || row[z] <= 0.0) continue;
          y = z;
          target -= row[z];
          if (target < 0.0) break;
        }
        const Vector u = family.potential(tau);
        event_terms.add((u[y] - u[x]) * inv_n);
        state.positions[i] = y;
        ++state.mutations;
      } else {
        const auto i = state.rng.index(static_cast<std::size_t>(big_n));
        const auto j = state.rng.index(static_cast<std::size_t>(big_n));
        const int xi = state.positions[i];
        const int xj = state.positions[j];
        const double u_acc = state.rng.uniform();
        if (xi == xj) continue;
        const Vector du = family.potential_dt(tau);
        const double rate = std::max(0.0, du[xi] - du[xj]);
        if (rate > omega_bar) throw Error(ErrorKind::Simulation, "selection rate exceeds interval bound");
        if (u_acc * omega_bar >= rate) continue;
        const Vector u = family.potential(tau);
        event_terms.add((u[xj] - u[xi]) * inv_n);
        state.positions[i] = xj;
        ++state.selections;
      }
    }
    state.t = b;
    state.log_weight = current_log_w(b);
    if (!std::isfinite(state.log_weight)) throw Error(ErrorKind::Simulation, "non-finite log-weight");
    emit_due(b);
  }
  state.t = t_end;
  return rec;
}

/// nu_t^N = exp(logW(t)) eta_t^N.
inline Vector reweighted(const TrajectoryRecord& record, double t) {
  const std::size_t k = record.index_of(t);
  return std::exp(record.log_weight[k]) * record.eta[k];
}

inline Vector reweighted_at(const TrajectoryRecord& record, std::size_t k) {
  return std::exp(record.log_weight[k]) * record.eta[k];
}

/// One full run from mu_0^N.
inline TrajectoryRecord run_particles(const EvolvingFamily& family, const GeneratorSchedule& gens, int n_particles,
                                      double t_end, const std::vector<double>& grid, std::uint64_t seed,
                                      std::uint64_t stream, const SimulationOptions& opt = {}) {
  ParticleState st = init_particles(family, n_particles, seed, stream);
  TrajectoryRecord rec = simulate(st, family, gens, t_end, grid, opt);
  rec.seed = seed;
  rec.stream = stream;
  return rec;
}

struct GeneratorActionCheck {
  double drift_raw = 0.0;
  double drift_closed = 0.0;
  double gamma_raw = 0.0;
  double gamma_closed = 0.0;
  double drift_difference() const { return std::abs(drift_raw - drift_closed); }
  double gamma_difference() const { return std::abs(gamma_raw - gamma_closed); }
};

/// L^N and Gamma^N applied to phi_f(x) = <f, eta(x)>: brute-force sums over
/// all transitions of the N-particle generator vs. the closed forms.
inline GeneratorActionCheck generator_action_check(const std::vector<int>& positions, const EvolvingFamily& family,
                                                   const GeneratorSchedule& gens, double t, const Vector& f) {
  const int big_n = static_cast<int>(positions.size());
  const int n = family.size();
  const Matrix l = gens.rates(t);
  const double lam = gens.intensity.at(t);
  const Vector h = h_at(family, t);
  auto phi = [&](const std::vector<int>& x) {
    double s = 0.0;
    for (int v : x) s += f[v];
    return s / big_n;
  };
  GeneratorActionCheck out;
  const double phi0 = phi(positions);
  std::vector<int> y = positions;
  CompensatedSum drift, gamma;
  for (int i = 0; i < big_n; ++i) {
    for (int z = 0; z < n; ++z) {
      if (z == positions[i]) continue;
      const double rate = lam * l(positions[i], z);
      if (rate == 0.0) continue;
      y[i] = z;
      const double d = phi(y) - phi0;
      drift.add(rate * d);
      gamma.add(rate * d * d);
    }
    y[i] = positions[i];
  }
  for (int i = 0; i < big_n; ++i) {
    for (int j = 0; j < big_n; ++j) {
      const double rate = std::max(0.0, h[positions[i]] - h[positions[j]]) / big_n;
      if (rate == 0.0) continue;
      y[i] = positions[j];
      const double d = phi(y) - phi0;
      drift.add(rate * d);
      gamma.add(rate * d * d);
      y[i] = positions[i];
    }
  }
  out.drift_raw = drift.value();
  out.gamma_raw = gamma.value();

  const Vector eta = detail::occupation(positions, n);
  out.drift_closed = lam * (l * f).dot(eta) + h.dot(eta) * f.dot(eta) - h.cwiseProduct(f).dot(eta);
  CompensatedSum pair;
  for (int a = 0; a < n; ++a) {
    if (eta[a] == 0.0) continue;
    for (int b = 0; b < n; ++b) {
      if (eta[b] == 0.0) continue;
      const double df = f[b] - f[a];
      pair.add(std::max(0.0, h[a] - h[b]) * df * df * eta[a] * eta[b]);
    }
  }
  out.gamma_closed = lam / big_n * carre_du_champ(l, f).dot(eta) + pair.value() / big_n;
  return out;
}

/// mu_0 p_{0,t}, the law of a single particle without selection.
inline Vector baseline_law(const EvolvingFamily& family, const GeneratorSchedule& gens, double t,
                           const Vector& mu0) {
  return (mu0.transpose() * propagator(family, gens, 0.0, t, false).q).transpose();
}

struct BaselineRecord {
  TrajectoryRecord record;
  std::vector<Vector> law;  // mu_0 p_{0,t} at each snapshot
};

/// Selection switched off: particles move independently with lambda_t L_t.
inline BaselineRecord independent_baseline(const EvolvingFamily& family, const GeneratorSchedule& gens,
                                           int n_particles, double t_end, std::uint64_t seed,
                                           const std::vector<double>& grid, std::uint64_t stream = 0) {
  SimulationOptions opt;
  opt.selection = false;
  BaselineRecord out;
  out.record = run_particles(family, gens, n_particles, t_end, grid, seed, stream, opt);
  const Vector mu0 = measure_at(family, 0.0).weights;
  for (double t : out.record.times) out.law.push_back(baseline_law(family, gens, t, mu0));
  return out;
}

/// One JSON object per snapshot: {t, eta, logW, events: {mut, sel}}.
inline void write_trajectory_jsonl(const TrajectoryRecord& rec, std::ostream& out) {
  for (std::size_t k = 0; k < rec.times.size(); ++k) {
    nlohmann::json line;
    line["t"] = rec.times[k];
    line["eta"] = std::vector<double>(rec.eta[k].data(), rec.eta[k].data() + rec.eta[k].size());
    line["logW"] = rec.log_weight[k];
    line["events"] = {{"mut", rec.mutations[k]}, {"sel", rec.selections[k]}};
    out << line.dump() << '\n';
  }
}

}  // namespace seqmc
