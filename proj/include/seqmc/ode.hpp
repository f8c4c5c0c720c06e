#pragma once

// Dormand-Prince 5(4) embedded Runge-Kutta with adaptive step control.
// Works on any Eigen dense type (vector or matrix states) and integrates
// forward or backward in time.

#include "seqmc/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace seqmc {

struct OdeOptions {
  double rel_tol = 1e-10;
  double abs_tol = 1e-10;
  double initial_step = 0.0;  // 0 = automatic
  std::size_t max_steps = 10'000'000;
};

struct OdeDiagnostics {
  std::size_t steps = 0;
  std::size_t rejected = 0;
  double max_local_error = 0.0;  // largest accepted scaled error estimate
  double rel_tol = 0.0;
  double abs_tol = 0.0;
};

namespace detail {

struct DormandPrince {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                          b6 = 11.0 / 84;
  // b - b_hat (error weights).
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;
};

}  // namespace detail

/// Integrates dy/dt = rhs(t, y) from t0 to each time in `outputs` (monotone,
/// in the direction of integration). Returns the state at every output time.
template <class State, class Rhs>
std::vector<State> integrate_ode(Rhs&& rhs, double t0, State y, const std::vector<double>& outputs,
                                 const OdeOptions& opt = {}, OdeDiagnostics* diag = nullptr) {
  using DP = detail::DormandPrince;
  std::vector<State> result;
  result.reserve(outputs.size());
  if (outputs.empty()) return result;
  const double dir = outputs.back() >= t0 ? 1.0 : -1.0;
  OdeDiagnostics local;
  local.rel_tol = opt.rel_tol;
  local.abs_tol = opt.abs_tol;

  double t = t0;
  State k1 = rhs(t, y);
  double span = std::abs(outputs.back() - t0);
  double h = opt.initial_step > 0.0 ? opt.initial_step : std::max(span * 1e-3, 1e-8);

  auto scaled_error = [&](const State& y0, const State& y1, const State& err) {
    double e = 0.0;
    const auto* a = y0.data();
    const auto* b = y1.data();
    const auto* d = err.data();
    for (Eigen::Index i = 0; i < y0.size(); ++i) {
      const double sc = opt.abs_tol + opt.rel_tol * std::max(std::abs(a[i]), std::abs(b[i]));
      e = std::max(e, std::abs(d[i]) / sc);
    }
    return e;
  };

  for (double target : outputs) {
    if ((target - t) * dir < 0.0) throw Error(ErrorKind::Domain, "ODE output times must be monotone");
    while ((target - t) * dir > 0.0) {
      if (local.steps + local.rejected >= opt.max_steps)
        throw Error(ErrorKind::Stiffness, "ODE step budget exhausted at t=" + std::to_string(t));
      bool last = false;
      double step = h;
      if (step >= std::abs(target - t)) {
        step = std::abs(target - t);
        last = true;
      }
      const double hs = dir * step;
      const State k2 = rhs(t + DP::c2 * hs, (y + hs * (DP::a21 * k1)).eval());
      const State k3 = rhs(t + DP::c3 * hs, (y + hs * (DP::a31 * k1 + DP::a32 * k2)).eval());
      const State k4 = rhs(t + DP::c4 * hs, (y + hs * (DP::a41 * k1 + DP::a42 * k2 + DP::a43 * k3)).eval());
      const State k5 =
          rhs(t + DP::c5 * hs, (y + hs * (DP::a51 * k1 + DP::a52 * k2 + DP::a53 * k3 + DP::a54 * k4)).eval());
      const State k6 = rhs(t + hs, (y + hs * (DP::a61 * k1 + DP::a62 * k2 + DP::a63 * k3 + DP::a64 * k4 +
                                              DP::a65 * k5))
                                       .eval());
      const State ynew =
          (y + hs * (DP::b1 * k1 + DP::b3 * k3 + DP::b4 * k4 + DP::b5 * k5 + DP::b6 * k6)).eval();
      const State k7 = rhs(t + hs, ynew);
      const State err =
          (hs * (DP::e1 * k1 + DP::e3 * k3 + DP::e4 * k4 + DP::e5 * k5 + DP::e6 * k6 + DP::e7 * k7)).eval();
      const double e = scaled_error(y, ynew, err);
      if (!std::isfinite(e)) throw Error(ErrorKind::Stiffness, "non-finite ODE state at t=" + std::to_string(t));
      if (e <= 1.0) {
        t = last ? target : t + hs;
        y = ynew;
        k1 = k7;
        ++local.steps;
        local.max_local_error = std::max(local.max_local_error, e);
        const double grow = e == 0.0 ? 5.0 : std::min(5.0, 0.9 * std::pow(e, -0.2));
        if (!last) h = step * grow;
        else h = std::max(h, step * grow);
      } else {
        ++local.rejected;
        h = step * std::max(0.2, 0.9 * std::pow(e, -0.2));
      }
      if (h < 1e-14 * std::max(1.0, std::abs(t)))
        throw Error(ErrorKind::Stiffness, "step size underflow at t=" + std::to_string(t) + " after " +
                                              std::to_string(local.steps) + " steps, " +
                                              std::to_string(local.rejected) + " rejections");
    }
    result.push_back(y);
  }
  if (diag) {
    diag->steps += local.steps;
    diag->rejected += local.rejected;
    diag->max_local_error = std::max(diag->max_local_error, local.max_local_error);
    diag->rel_tol = opt.rel_tol;
    diag->abs_tol = opt.abs_tol;
  }
  return result;
}

}  // namespace seqmc
