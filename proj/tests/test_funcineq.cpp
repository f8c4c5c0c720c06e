#include "seqmc/funcineq.hpp"

#include <gtest/gtest.h>

using namespace seqmc;

namespace {

const Vector kTwoMu = (Vector(2) << 2.0 / 3.0, 1.0 / 3.0).finished();

// L(0,1) = 1/4, L(1,0) = 1/2; gap 3/4.
Matrix two_state_rates() {
  const auto fam = constant_family(StateSpace::indexed(2), kTwoMu, 1.0);
  return metropolis(fam, complete_proposal(2)).rates(0.0) * 0.5;
}

// Ratio on the L^2(mu) unit circle, scanned densely.
double two_state_lsi_scan(const Matrix& l, const Vector& mu) {
  const Matrix w = dirichlet_matrix(l, mu);
  double best = 0.0;
  const int cells = 200000;
  for (int i = 1; i < cells; ++i) {
    const double th = 2.0 * M_PI * i / cells;
    const Vector f = (Vector(2) << std::cos(th) / std::sqrt(mu[0]), std::sin(th) / std::sqrt(mu[1])).finished();
    best = std::max(best, log_sobolev_ratio(w, mu, f));
  }
  return best;
}

BirthDeathSpec random_log_concave(RandomStream& rng) {
  const int delta = 3 + static_cast<int>(rng.index(10));
  const int a = -static_cast<int>(rng.index(static_cast<std::uint64_t>(delta)));
  const double c = std::log(2.0) + rng.uniform();
  const double d = 0.5 * rng.uniform();
  Vector w(delta);
  for (int i = 0; i < delta; ++i) {
    const double x = a + i;
    w[i] = std::exp(-c * std::abs(x) - d * x * x);
  }
  auto spec = BirthDeathSpec::from_weights(a, w);
  spec.s = 0;
  spec.rho = 1.0;
  spec.alpha = 0.5;
  return spec;
}

}  // namespace

TEST(Poincare, TwoStateClosedForm) {
  const auto res = poincare(two_state_rates(), kTwoMu);
  EXPECT_NEAR(res.c_poi, 4.0 / 3.0, 1e-14);
  EXPECT_LE(res.variational_max, res.c_poi * (1 + 1e-12));
  EXPECT_NEAR(res.eigenfunction.dot(kTwoMu), 0.0, 1e-14);
}

TEST(Poincare, DisconnectedChainIsInfinite) {
  Matrix l = Matrix::Zero(3, 3);
  l(0, 1) = 1;
  l(1, 0) = 1;
  l(0, 0) = l(1, 1) = -1;
  try {
    poincare(l, Vector::Constant(3, 1.0 / 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InfiniteConstant);
  }
}

TEST(Poincare, ProductTakesTheWorstComponent) {
  const auto a = moving_gaussian(0, 4, {1.5, 0.0}, {1.0, 0.0}, 1.0);
  const auto b = moving_gaussian(0, 3, {0.5, 0.0}, {3.0, 0.0}, 1.0);
  const auto ga = metropolis(a, nearest_neighbor_proposal(a.space));
  const auto gb = metropolis(b, nearest_neighbor_proposal(b.space));
  const auto [pf, pg] = product_generator({{a, ga}, {b, gb}});
  const double ca = poincare(ga.rates(0), measure_at(a, 0).weights).c_poi;
  const double cb = poincare(gb.rates(0), measure_at(b, 0).weights).c_poi;
  EXPECT_NEAR(poincare(pg.rates(0), measure_at(pf, 0).weights).c_poi, std::max(ca, cb), 1e-10);
}

TEST(WeightedConstants, TwoStateClosedForm) {
  // Mean-zero direction f = (1, -2): E(f) = 3/2.
  const Vector h = (Vector(2) << 1.0, -2.0).finished();
  const auto wc = weighted_constants(two_state_rates(), kTwoMu, h);
  EXPECT_NEAR(wc.a, 4.0 / 3.0, 1e-13);
  EXPECT_NEAR(wc.b, 8.0 / 3.0, 1e-13);
  // Opposite sign: -<H f^2, mu> < 0 so A clamps to zero, B is unchanged.
  const auto neg = weighted_constants(two_state_rates(), kTwoMu, -h);
  EXPECT_EQ(neg.a, 0.0);
  EXPECT_NEAR(neg.b, 8.0 / 3.0, 1e-13);
}

TEST(WeightedConstants, VanishWithoutPotential) {
  const auto wc = weighted_constants(two_state_rates(), kTwoMu, Vector::Zero(2));
  EXPECT_EQ(wc.a, 0.0);
  EXPECT_EQ(wc.b, 0.0);
  EXPECT_THROW(weighted_constants(two_state_rates(), kTwoMu, Vector::Ones(2)), Error);
}

TEST(WeightedConstants, BOnRandomChainsAgreesWithVariationalSup) {
  const auto fam = moving_gaussian(0, 6, {2.0, 0.0}, {1.3, 0.0}, 1.0);
  const Matrix l = metropolis(fam, nearest_neighbor_proposal(fam.space)).rates(0);
  const Vector mu = measure_at(fam, 0).weights;
  RandomStream rng(4, 0);
  Vector h(6);
  for (int i = 0; i < 6; ++i) h[i] = rng.uniform() - 0.5;
  h.array() -= h.dot(mu);
  const auto wc = weighted_constants(l, mu, h);
  for (int k = 0; k < 200; ++k) {
    Vector f(6);
    for (int i = 0; i < 6; ++i) f[i] = rng.uniform() - 0.5;
    f.array() -= f.dot(mu);
    const double e = dirichlet_form(l, mu, f);
    const double hf = h.cwiseProduct(f).dot(mu);
    EXPECT_LE(hf * hf / e, wc.b * (1 + 1e-9));
    EXPECT_LE(-h.cwiseProduct(f.cwiseAbs2()).dot(mu) / e, wc.a * (1 + 1e-9) + 1e-12);
  }
}

TEST(LogSobolev, TwoStateMatchesDenseScan) {
  const Matrix l = two_state_rates();
  const double scan = two_state_lsi_scan(l, kTwoMu);
  const auto res = log_sobolev(l, kTwoMu);
  EXPECT_GE(res.gamma_lower, scan * (1 - 1e-6));
  EXPECT_LE(res.gamma_lower, scan * (1 + 1e-6));
  // Linearization around 1 bounds gamma below by C_Poi / 2.
  EXPECT_GE(res.gamma_lower, poincare(l, kTwoMu).c_poi / 2 * (1 - 1e-6));
}

TEST(LogSobolev, RatioIsEvenInF) {
  const auto fam = moving_gaussian(0, 5, {2.0, 0.0}, {1.0, 0.0}, 1.0);
  const Matrix l = metropolis(fam, nearest_neighbor_proposal(fam.space)).rates(0);
  const Vector mu = measure_at(fam, 0).weights;
  const Matrix w = dirichlet_matrix(l, mu);
  const Vector f = (Vector(5) << 0.3, 1.2, -0.4, 2.0, 0.9).finished();
  EXPECT_DOUBLE_EQ(log_sobolev_ratio(w, mu, f), log_sobolev_ratio(w, mu, -f));
  EXPECT_EQ(log_sobolev_ratio(w, mu, Vector::Ones(5)), 0.0);
}

TEST(Miclo, TwoPointUniform) {
  const auto spec = BirthDeathSpec::from_weights(0, Vector::Ones(2));
  const auto p = miclo_poincare(spec);
  EXPECT_NEAR(p.b_plus, 1.0, 1e-15);
  EXPECT_EQ(p.b_minus, 0.0);
  EXPECT_NEAR(p.bound, 4.0, 1e-15);
  const auto t = miclo_tables(spec);
  EXPECT_NEAR(t.beta_plus_max, 2.0 * std::log(2.0), 1e-15);
  EXPECT_NEAR(miclo_lsi(spec).bound, 40.0 * std::log(2.0), 1e-14);
}

TEST(Miclo, SymmetricMeasureHasSymmetricTables) {
  const auto g = gauss_model(1.7, -4, 9);
  const auto t = miclo_tables(g.spec);
  EXPECT_NEAR(t.b_plus_max, t.b_minus_max, 1e-12 * t.b_plus_max);
  EXPECT_NEAR(t.beta_plus_max, t.beta_minus_max, 1e-12 * t.beta_plus_max);
}

TEST(Miclo, TablesAgreeWithDirectSumsOnSmallChain) {
  const Vector w = (Vector(4) << 0.1, 0.4, 0.3, 0.2).finished();
  const auto spec = BirthDeathSpec::from_weights(-1, w);
  const auto t = miclo_tables(spec);
  // k = 1: 1/min(.4,.3) * (.3+.2); k = 2: (1/.3 + 1/.2) * .2; k = -1: 1/.1 * .1
  ASSERT_EQ(t.b_plus.size(), 2u);
  EXPECT_NEAR(t.b_plus[0], 0.5 / 0.3, 1e-14);
  EXPECT_NEAR(t.b_plus[1], (1 / 0.3 + 1 / 0.2) * 0.2, 1e-14);
  ASSERT_EQ(t.b_minus.size(), 1u);
  EXPECT_NEAR(t.b_minus[0], 1.0, 1e-14);
  EXPECT_NEAR(t.beta_minus[0], 2.0 * 1.0 * std::log(10.0), 1e-13);
}

TEST(Metro, ZeroWindowGivesFourRSquared) {
  auto spec = BirthDeathSpec::from_weights(0, (Vector(3) << 4.0, 2.0, 1.0).finished());
  spec.s = 0;
  spec.alpha = 0.5;
  const auto m = metro_bounds(spec);
  EXPECT_NEAR(m.poincare, 4.0 * 2.0 * 2.0, 1e-14);
  EXPECT_NEAR(m.lsi, 10.0 * 16.0 * std::log(7.0), 1e-12);
}

TEST(Metro, TailFailureIsACertificationError) {
  auto spec = BirthDeathSpec::from_weights(0, (Vector(3) << 1.0, 1.0, 1.0).finished());
  spec.alpha = 0.5;
  try {
    metro_bounds(spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Certification);
  }
}

TEST(GaussModel, SigmaTwoParameters) {
  const auto g = gauss_model(2.0, -5, 10);
  EXPECT_EQ(g.spec.s, 2);
  EXPECT_NEAR(g.spec.rho, std::exp(0.5), 1e-15);
  EXPECT_NEAR(g.spec.alpha, std::exp(-5.0 / 8.0), 1e-15);
  EXPECT_NEAR(g.poincare_display, 120.0, 1e-12);
  EXPECT_TRUE(g.spec.tail_violations().empty());
}

TEST(BirthDeath, RandomLogConcaveChainsRespectAllUpperBounds) {
  RandomStream rng(99, 0);
  for (int k = 0; k < 20; ++k) {
    const auto spec = random_log_concave(rng);
    const Matrix l = birth_death_generator(spec);
    const Vector mu = spec.mu();
    const double c = poincare(l, mu).c_poi;
    const double g = log_sobolev(l, mu, 24).gamma_lower;
    const auto mp = miclo_poincare(spec);
    const auto ml = miclo_lsi(spec);
    const auto mb = metro_bounds(spec);
    EXPECT_LE(c, mp.bound * (1 + 1e-9)) << "case " << k;
    EXPECT_LE(c, mb.poincare * (1 + 1e-9)) << "case " << k;
    EXPECT_LE(g, ml.bound * (1 + 1e-9)) << "case " << k;
    EXPECT_LE(g, mb.lsi * (1 + 1e-9)) << "case " << k;
    EXPECT_LE(ml.bound, ml.rough_bound * (1 + 1e-12)) << "case " << k;
  }
}

TEST(Constants, FrozenFamilyHasNoWeightedConstants) {
  const auto fam = moving_gaussian(0, 8, {3.0, 0.0}, {2.0, 0.0}, 1.0);
  const auto gens = metropolis(fam, nearest_neighbor_proposal(fam.space));
  EXPECT_EQ(osc_and_omega(fam, 1.0).omega, 0.0);
  ConstantsOptions opt;
  opt.birth_death = true;
  const auto rep = constants_at(fam, gens, 0.5, opt);
  EXPECT_EQ(rep.a, 0.0);
  EXPECT_EQ(rep.b, 0.0);
  EXPECT_GT(rep.c_poi, 0.0);
  ASSERT_TRUE(rep.gamma_upper.has_value());
  EXPECT_LE(rep.gamma_lower, *rep.gamma_upper);
}

TEST(Constants, PartitionedUsesBlockMaxima) {
  StateSpace space = StateSpace::indexed(6);
  space.partition = Partition{{0, 1, 2}, {3, 4, 5}};
  const auto fam = exponential_tilt(space, Vector::Constant(6, 1.0 / 6),
                                    (Vector(6) << 0, 0.5, 0, 1, 1, 1).finished(), 1.0);
  const auto gens = metropolis(fam, block_nearest_neighbor_proposal(space));
  ConstantsOptions opt;
  opt.partitioned = true;
  const auto rep = constants_at(fam, gens, 0.3, opt);
  ASSERT_TRUE(rep.a_tilde && rep.b_tilde && rep.c_poi_tilde);
  // Block {3,4,5} has zero potential and contributes nothing to A or B.
  const auto blocks = block_conditionals(fam, 0.3);
  const Matrix l0 = gens.rates(0.3).block(0, 0, 3, 3);
  Matrix l0c = l0;
  for (int i = 0; i < 3; ++i) l0c(i, i) = -(l0.row(i).sum() - l0(i, i));
  const auto wc = weighted_constants(l0c, blocks[0].mu, blocks[0].h);
  EXPECT_NEAR(*rep.a_tilde, wc.a, 1e-12);
  EXPECT_NEAR(*rep.b_tilde, wc.b, 1e-12);
}

TEST(MovingGauss, SlowMeanSatisfiesDriftCondition) {
  const LinearSchedule mean{4.0, 0.25}, sigma{2.0, 0.0};
  const auto fam = moving_gaussian(0, 8, mean, sigma, 1.0);
  const auto chk = moving_gauss_conditions(fam, mean, sigma, 8, 1.0);
  EXPECT_TRUE(chk.holds);
  EXPECT_TRUE(chk.osc_bound_holds);
  EXPECT_LE(chk.max_osc, chk.max_osc_bound * (1 + 1e-9));
  const LinearSchedule fast{4.0, 3.0};
  EXPECT_FALSE(moving_gauss_conditions(moving_gaussian(0, 8, fast, sigma, 1.0), fast, sigma, 8, 1.0).holds);
}
