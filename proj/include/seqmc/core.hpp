#pragma once

// Shared numerical vocabulary: vector/matrix aliases, the error type,
// compensated sums, weighted L^p norms, adaptive quadrature and the
// counter-based random streams used by every simulation.

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace seqmc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class ErrorKind {
  InvalidModel,
  Configuration,
  Reversibility,
  Size,
  Stiffness,
  Simulation,
  Lookup,
  Domain,
  InfiniteConstant,
  Certification,
  InternalConsistency,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidModel: return "invalid-model";
    case ErrorKind::Configuration: return "configuration";
    case ErrorKind::Reversibility: return "reversibility";
    case ErrorKind::Size: return "size";
    case ErrorKind::Stiffness: return "stiffness";
    case ErrorKind::Simulation: return "simulation";
    case ErrorKind::Lookup: return "lookup";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::InfiniteConstant: return "infinite-constant";
    case ErrorKind::Certification: return "certification";
    case ErrorKind::InternalConsistency: return "internal-consistency";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Neumaier variant of Kahan summation.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// <f, mu> = sum_x f(x) mu(x)
inline double integral(const Vector& f, const Vector& mu) { return f.dot(mu); }

inline double variance(const Vector& f, const Vector& mu) {
  const double m = f.dot(mu);
  return (f.array() - m).square().matrix().dot(mu);
}

/// ||f||_{L^p(mu)}; p = infinity is the max norm over all states.
inline double lp_norm(const Vector& f, const Vector& mu, double p) {
  if (std::isinf(p)) return f.cwiseAbs().maxCoeff();
  if (p == 1.0) return f.cwiseAbs().dot(mu);
  if (p == 2.0) return std::sqrt(f.cwiseAbs2().dot(mu));
  const double scale = f.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  // Scaled to avoid overflow for large p.
  const double s = ((f.cwiseAbs() / scale).array().pow(p).matrix()).dot(mu);
  return scale * std::pow(s, 1.0 / p);
}

inline double oscillation(const Vector& f) { return f.maxCoeff() - f.minCoeff(); }

/// log sum_x exp(a(x)) with a max shift.
inline double log_sum_exp(const Vector& a) {
  const double m = a.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((a.array() - m).exp().sum());
}

/// Adaptive Gauss-Kronrod quadrature with relative tolerance `rel_tol`.
template <class F>
double integrate(F&& fn, double a, double b, double rel_tol = 1e-6) {
  if (b <= a) return 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 21>::integrate(
      std::forward<F>(fn), a, b, 15, rel_tol);
}

/// Composite trapezoid over an arbitrary grid.
inline double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  CompensatedSum acc;
  for (std::size_t i = 1; i < x.size(); ++i) acc.add(0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]));
  return acc.value();
}

inline std::vector<double> uniform_grid(double a, double b, std::size_t points) {
  std::vector<double> g(points);
  if (points == 1) {
    g[0] = a;
    return g;
  }
  for (std::size_t i = 0; i < points; ++i)
    g[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1);
  g.back() = b;
  return g;
}

// ---------------------------------------------------------------------------
// Counter-based random numbers (Philox4x32-10). A stream is identified by
// (seed, stream id); its draws are a pure function of (key, counter), so
// replicate r always sees the same numbers regardless of scheduling.

class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Block encrypt(Block ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += 0x9E3779B9u;
      key[1] += 0xBB67AE85u;
    }
    return ctr;
  }
};

class RandomStream {
 public:
  RandomStream() = default;
  RandomStream(std::uint64_t seed, std::uint64_t stream)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream) {}

  std::uint64_t next_u64() {
    if (buffered_ == 0) {
      const Philox4x32::Block ctr{static_cast<std::uint32_t>(counter_),
                                  static_cast<std::uint32_t>(counter_ >> 32),
                                  static_cast<std::uint32_t>(stream_),
                                  static_cast<std::uint32_t>(stream_ >> 32)};
      block_ = Philox4x32::encrypt(ctr, key_);
      ++counter_;
      buffered_ = 2;
    }
    const int i = 2 - buffered_;
    --buffered_;
    return (std::uint64_t{block_[2 * i]} << 32) | block_[2 * i + 1];
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double uniform_open() { return 1.0 - uniform(); }

  double exponential(double rate) { return -std::log(uniform_open()) / rate; }

  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
  }

  std::uint64_t counter() const { return counter_; }

 private:
  Philox4x32::Key key_{0, 0};
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
  Philox4x32::Block block_{};
  int buffered_ = 0;
};

/// Inverse-CDF draw from a probability vector using cumulative weights.
inline int sample_index(const Vector& cumulative, double u) {
  const double target = u * cumulative[cumulative.size() - 1];
  int lo = 0;
  int hi = static_cast<int>(cumulative.size()) - 1;
  while (lo < hi) {
    const int mid = (lo + hi) / 2;
    if (cumulative[mid] > target) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return lo;
}

inline Vector cumulative_sum(const Vector& w) {
  Vector c(w.size());
  CompensatedSum acc;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    acc.add(w[i]);
    c[i] = acc.value();
  }
  return c;
}

struct MeanAndError {
  double mean = 0.0;
  double std_error = 0.0;
};

inline MeanAndError mean_and_error(const std::vector<double>& xs) {
  MeanAndError r;
  if (xs.empty()) return r;
  CompensatedSum s;
  for (double x : xs) s.add(x);
  r.mean = s.value() / static_cast<double>(xs.size());
  if (xs.size() < 2) return r;
  CompensatedSum v;
  for (double x : xs) v.add((x - r.mean) * (x - r.mean));
  const double var = v.value() / static_cast<double>(xs.size() - 1);
  r.std_error = std::sqrt(var / static_cast<double>(xs.size()));
  return r;
}

/// results[i] = fn(i) for i < count, computed on `workers` threads. Each slot
/// is written by exactly one task, so the output never depends on scheduling.
template <class Fn>
auto parallel_map(std::size_t count, int workers, Fn&& fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using T = decltype(fn(std::size_t{}));
  std::vector<T> results(count);
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) results[i] = fn(i);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (std::size_t i = next++; i < count && !failed; i = next++) {
      try {
        results[i] = fn(i);
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < std::min(threads, count); ++k) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

}  // namespace seqmc
