#include "seqmc/bounds.hpp"

#include <gtest/gtest.h>

using namespace seqmc;

namespace {

struct Model {
  EvolvingFamily family;
  GeneratorSchedule gens;
};

Model flat(int n = 4) {
  Model m;
  Vector w(n);
  for (int i = 0; i < n; ++i) w[i] = 1.0 + i;
  m.family = constant_family(StateSpace::indexed(n), w / w.sum(), 1.0);
  m.gens = metropolis(m.family, complete_proposal(n), Intensity::constant(1.5));
  return m;
}

Model gauss(double rate = 1.0, double lambda = 4.0) {
  Model m;
  m.family = moving_gaussian(0, 6, {2.0, rate}, {1.5, 0.0}, 2.0);
  m.gens = metropolis(m.family, nearest_neighbor_proposal(m.family.space), Intensity::constant(lambda));
  return m;
}

}  // namespace

TEST(Checks, ToleranceSemantics) {
  EXPECT_TRUE(check_le("a", 1.0, 1.0).pass);
  EXPECT_FALSE(check_le("a", 1.1, 1.0).pass);
  EXPECT_TRUE(check_le("a", 1.1, 1.0, 0.04).pass);
  EXPECT_TRUE(check_le("a", 1.1, 1.0, 0.0, 3.0, 0.11).pass);
  EXPECT_TRUE(check_eq("b", 2.0, 2.1, 0.0, 3.0, 0.05).pass);
  EXPECT_FALSE(check_eq("b", 2.0, 2.2, 0.0, 3.0, 0.05).pass);
  nlohmann::json j = check_le("c", kInf, 1.0);
  EXPECT_EQ(j["lhs"], "inf");
  EXPECT_EQ(j["margin"], "-inf");
}

TEST(VSmall, ZeroWithoutPotential) {
  const auto m = flat();
  EXPECT_EQ(v_small(m.family, m.gens, Vector::LinSpaced(4, 0, 1), 0.2, 0.8), 0.0);
}

TEST(VSmall, DoubleLoopOracleOnThreeStates) {
  const Vector mu = (Vector(3) << 0.2, 0.5, 0.3).finished();
  const Vector h = (Vector(3) << 1.0, -0.6, 1.0 / 3.0).finished();
  const Vector g = (Vector(3) << 0.4, -1.0, 2.0).finished();
  double ref = 0.0;
  for (int x = 0; x < 3; ++x) {
    ref -= h[x] * g[x] * g[x] * mu[x];
    for (int y = 0; y < 3; ++y) ref += std::abs(h[x]) * std::pow(g[y] - g[x], 2) * mu[x] * mu[y];
  }
  EXPECT_NEAR(v_small_eval(mu, h, g), ref, 1e-14);
}

TEST(VN, ZeroCases) {
  const Vector nu = (Vector(3) << 0.3, 0.0, 0.9).finished();
  const Vector g = (Vector(3) << 1.0, 2.0, 3.0).finished();
  EXPECT_EQ(vN_eval(nu, Vector::Zero(3), g, g.cwiseAbs2()), 0.0);
  EXPECT_EQ(vN_eval(Vector::Zero(3), (Vector(3) << 1, -1, 0).finished(), g, g.cwiseAbs2()), 0.0);
}

TEST(VN, BruteForceOnFourStates) {
  const Vector nu = (Vector(4) << 0.1, 0.25, 0.0, 0.4).finished();
  const Vector h = (Vector(4) << 0.7, -0.2, 3.0, -1.1).finished();
  const Vector g = (Vector(4) << 0.5, 1.5, -2.0, 0.0).finished();
  const Vector g2 = (Vector(4) << 0.5, 3.0, 4.5, 0.2).finished();
  const double mass = nu.sum();
  double first = 0.0, hn = 0.0, spread = 0.0, pair = 0.0;
  for (int y = 0; y < 4; ++y) {
    first -= h[y] * g[y] * g[y] * nu[y];
    hn += h[y] * nu[y];
    spread += (g2[y] - g[y] * g[y]) * nu[y];
    for (int z = 0; z < 4; ++z) pair += std::abs(h[z] - h[y]) * std::pow(g[z] - g[y], 2) * nu[y] * nu[z];
  }
  EXPECT_NEAR(vN_eval(nu, h, g, g2), mass * first - hn * spread + 0.5 * pair, 1e-14);
}

TEST(EtaErrorBounds, Arithmetic) {
  const auto [l2, l1] = eta_error_bounds(0.01, 0.0025, 1.0);
  EXPECT_NEAR(l2, 0.025, 1e-15);
  EXPECT_NEAR(l1, 0.1 + std::sqrt(2.0) * 0.0025 + std::sqrt(2.0) * 0.1 * 0.05, 1e-15);
  const auto [z2, z1] = eta_error_bounds(0.04, 0.0, 3.0);
  EXPECT_NEAR(z2, 0.08, 1e-15);
  EXPECT_NEAR(z1, 0.2, 1e-15);
  EXPECT_THROW(eta_error_bounds(-1.0, 0.0, 0.0), Error);
}

TEST(GradedNodes, ClusterNearTheEndpoint) {
  const auto nodes = graded_nodes(1.0, 5, 100.0);
  EXPECT_EQ(nodes.front(), 0.0);
  EXPECT_EQ(nodes.back(), 1.0);
  EXPECT_TRUE(std::is_sorted(nodes.begin(), nodes.end()));
  const double last_gap = nodes.back() - nodes[nodes.size() - 2];
  EXPECT_LE(last_gap, 0.05 / 100.0 * std::sqrt(2.0) + 1e-15);
  EXPECT_GT(last_gap, 0.0);
  EXPECT_EQ(graded_nodes(1.0, 5, 0.0), uniform_grid(0.0, 1.0, 5));
}

TEST(VarianceIdentity, TimeZeroIsTheInitialVariance) {
  const auto m = gauss();
  const Vector f = Vector::LinSpaced(6, 0.0, 1.0);
  const auto rep = variance_identity(m.family, m.gens, f, 0.0, 40, 2000, 3);
  EXPECT_EQ(rep.rhs_integral, 0.0);
  EXPECT_NEAR(rep.rhs_var, variance(f, m.family.mu0), 1e-15);
  EXPECT_LE(std::abs(rep.lhs - rep.rhs()), 3.0 * rep.lhs_se);
}

TEST(VarianceIdentity, IndependentChainsWithoutPotential) {
  const auto m = flat();
  const Vector f = (Vector(4) << 1.0, -1.0, 0.5, 2.0).finished();
  const auto rep = variance_identity(m.family, m.gens, f, 1.0, 20, 2000, 5, uniform_grid(0.0, 1.0, 5));
  EXPECT_EQ(rep.rhs_integral, 0.0);
  EXPECT_LE(std::abs(rep.lhs - rep.rhs()), 3.0 * rep.lhs_se);
  EXPECT_LE(std::abs(rep.estimate_mean - rep.exact_mean), 3.0 * rep.estimate_se);
}

TEST(VarianceIdentity, MovingTargetIsUnbiasedAndBalanced) {
  const auto m = gauss(1.0, 4.0);
  const Vector f = Vector::LinSpaced(6, 0.0, 1.0);
  const auto rep =
      variance_identity(m.family, m.gens, f, 1.0, 30, 1500, 8, graded_nodes(1.0, 17, 4.0 * m.gens.exit_rate_bound));
  EXPECT_LE(std::abs(rep.estimate_mean - rep.exact_mean), 3.0 * rep.estimate_se);
  EXPECT_LE(std::abs(rep.lhs - rep.rhs()), 3.0 * std::hypot(rep.lhs_se, rep.rhs_se));
}

TEST(Epsilon, IndependentParticlesScaleLikeOneOverN) {
  const auto m = flat();
  const int n = 25;
  const auto eps = epsilon_estimate(m.family, m.gens, 1.0, n, 2.0, 1000, 2, {}, false, uniform_grid(0.0, 1.0, 3));
  EXPECT_LE(eps.value, 2.0 / n + 3.0 * eps.se);
  EXPECT_GT(eps.value, 0.0);
}

TEST(Exponents, SixAndTwelve) {
  const auto e = exponents(6.0, 12.0);
  EXPECT_DOUBLE_EQ(e.r, 12.0);
  EXPECT_NEAR(e.p_tilde, 2.4, 1e-14);
  EXPECT_NEAR(e.a, std::log(7.0), 1e-14);
  EXPECT_TRUE(admissible_exponents(6.0, 12.0));
  EXPECT_FALSE(admissible_exponents(4.5, 12.0));
  EXPECT_FALSE(admissible_exponents(5.0, 6.0));
  EXPECT_TRUE(admissible_exponents(5.0, kInf));
  EXPECT_THROW(exponents(3.0, 12.0), Error);
}

TEST(IntensityRequirement, BranchesOfTheMaximum) {
  ConstantsReport c;
  c.t = 0.0;
  c.a = 0.0;
  c.b = 0.0;
  c.c_poi = 2.0;
  c.gamma_upper = 3.0;
  const auto e = exponents(6.0, 12.0);
  const auto req = intensity_requirement(c, e, 0.5, 1.0);
  EXPECT_NEAR(req.weighted, 17.0 / 4.0 * std::log(7.0) * 0.5 * 3.0, 1e-12);
  EXPECT_TRUE(req.certified);
  c.a = 100.0;
  EXPECT_NEAR(intensity_requirement(c, e, 0.5, 1.0).weighted, 6.0 * 100.0 / 4.0, 1e-12);
}

TEST(ThmBounds, NoPotentialGivesTwoOverN) {
  const auto m = flat();
  BoundOptions opt;
  opt.compute_cbar = false;
  const auto rep = thm_bounds(m.family, m.gens, 6.0, 12.0, 1.0, 50, opt);
  EXPECT_EQ(rep.omega, 0.0);
  EXPECT_NEAR(rep.uniform_bound, 2.0 / 50.0, 1e-15);
  EXPECT_TRUE(rep.find("uniform-particle-count")->pass);
}

TEST(ThmBounds, RoughParticleCountFlipsAtThreshold) {
  const auto m = gauss(2.0, 4.0);
  BoundOptions opt;
  opt.compute_cbar = false;
  opt.cbar_s_points = 3;
  const auto probe = thm_bounds(m.family, m.gens, 6.0, 12.0, 2.0, 1, opt);
  const double threshold = 40.0 * std::max(probe.omega * 2.0, 1.0);
  const int at = static_cast<int>(std::ceil(threshold));
  EXPECT_TRUE(thm_bounds(m.family, m.gens, 6.0, 12.0, 2.0, at, opt).find("rough-particle-count")->pass);
  EXPECT_FALSE(thm_bounds(m.family, m.gens, 6.0, 12.0, 2.0, at - 1, opt).find("rough-particle-count")->pass);
}

TEST(ThmBounds, BoundsNeedTheirHypotheses) {
  const auto m = gauss(1.0, 4.0);
  BoundOptions opt;
  opt.compute_cbar = false;
  opt.cbar_s_points = 3;
  EpsilonReport eps;
  eps.value = 1e-3;
  opt.epsilon = eps;
  // No constants grid: the intensity condition is unchecked, so the bound is informational.
  const auto rep = thm_bounds(m.family, m.gens, 6.0, 12.0, 1.0, 400, opt);
  EXPECT_EQ(rep.find("uniform-bound"), nullptr);
  const bool listed = std::any_of(rep.informational.begin(), rep.informational.end(),
                                  [](const Inequality& q) { return q.id == "uniform-bound"; });
  EXPECT_TRUE(listed);
}

TEST(ProofChain, UnitFunctionWithoutPotentialIsExact) {
  const auto m = flat();
  ProofChainOptions opt;
  opt.nodes = 5;
  const auto rep = proof_chain_diagnostics(m.family, m.gens, Vector::Ones(4), 1.0, 10, 50, 4, 1, opt);
  EXPECT_EQ(rep.failing(), 0u);
  for (const auto& row : rep.rows)
    if (row.id == "weighted-square-identity") {
      EXPECT_NEAR(row.lhs, 1.0, 1e-14);
    }
}
