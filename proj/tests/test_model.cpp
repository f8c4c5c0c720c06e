#include "seqmc/model.hpp"

#include <gtest/gtest.h>

using namespace seqmc;

namespace {

EvolvingFamily two_state_tilt(double horizon = 2.0) {
  return exponential_tilt(StateSpace::indexed(2), Vector::Constant(2, 0.5), (Vector(2) << 0.0, 1.0).finished(),
                          horizon);
}

// <x, mu_s> for the two-state tilt, closed form.
double tilt_mean(double s) { return std::exp(-s) / (1.0 + std::exp(-s)); }

}  // namespace

TEST(MeasureAt, ConstantFamilyKeepsInitialWeights) {
  const Vector w = (Vector(3) << 0.2, 0.3, 0.5).finished();
  const auto fam = constant_family(StateSpace::indexed(3), w, 1.0);
  const auto snap = measure_at(fam, 0.7);
  EXPECT_LT((snap.weights - w).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(snap.logZ, 0.0, 1e-15);
}

TEST(MeasureAt, TwoStateTiltAtLogTwo) {
  const auto snap = measure_at(two_state_tilt(), std::log(2.0));
  EXPECT_NEAR(snap.weights[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(snap.weights[1], 1.0 / 3.0, 1e-15);
}

TEST(MeasureAt, FrozenGaussianMatchesDensity) {
  const auto fam = moving_gaussian(-3, 9, {0.7, 0.0}, {1.5, 0.0}, 1.0);
  const Vector w = measure_at(fam, 0.4).weights;
  Vector ref(9);
  for (int i = 0; i < 9; ++i) ref[i] = std::exp(-std::pow(-3 + i - 0.7, 2) / (2 * 1.5 * 1.5));
  ref /= ref.sum();
  EXPECT_LT((w - ref).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(MeasureAt, HugeTiltDoesNotUnderflowToNaN) {
  Vector tilt = Vector::Constant(4, 5000.0);
  tilt[2] = 0.0;
  const auto fam = exponential_tilt(StateSpace::indexed(4), Vector::Constant(4, 0.25), tilt, 1.0);
  const Vector w = measure_at(fam, 1.0).weights;
  EXPECT_TRUE(w.allFinite());
  EXPECT_NEAR(w[2], 1.0, 1e-15);
}

TEST(HAt, ZeroForConstantFamily) {
  const auto fam = constant_family(StateSpace::indexed(4), Vector::Constant(4, 0.25), 1.0);
  EXPECT_EQ(h_at(fam, 0.3).cwiseAbs().maxCoeff(), 0.0);
}

TEST(HAt, TwoStateTiltAtZero) {
  const Vector h = h_at(two_state_tilt(), 0.0);
  EXPECT_NEAR(h[0], -0.5, 1e-15);
  EXPECT_NEAR(h[1], 0.5, 1e-15);
}

TEST(HAt, CenteredUnderMuForEveryBuiltin) {
  const std::vector<EvolvingFamily> fams{two_state_tilt(), moving_gaussian(0, 12, {3.0, 2.0}, {2.0, 0.5}, 1.0)};
  for (const auto& fam : fams)
    for (double t : {0.0, 0.31, 0.9}) EXPECT_NEAR(h_at(fam, t).dot(measure_at(fam, t).weights), 0.0, 1e-15);
}

TEST(Oscillation, ZeroAndUnitCases) {
  EXPECT_EQ(osc_and_omega(constant_family(StateSpace::indexed(3), Vector::Constant(3, 1.0 / 3), 1.0), 1.0).omega,
            0.0);
  const auto table = osc_and_omega(two_state_tilt(), 2.0, 64);
  for (double o : table.osc) EXPECT_NEAR(o, 1.0, 1e-15);
}

TEST(Oscillation, FrozenScheduleGivesZeroOmega) {
  EXPECT_EQ(osc_and_omega(moving_gaussian(0, 10, {4.0, 0.0}, {2.0, 0.0}, 1.0), 1.0).omega, 0.0);
}

TEST(KNorm, VanishesWithoutPotential) {
  const auto fam = constant_family(StateSpace::indexed(3), Vector::Constant(3, 1.0 / 3), 1.0);
  EXPECT_EQ(k_norm(fam, 1.0, 2.0), 0.0);
  EXPECT_EQ(k_norm(fam, 1.0, kInf), 0.0);
}

TEST(KNorm, TwoStateSupNormAgainstBruteForce) {
  // Midpoint rule with 20000 cells on the closed-form integrand.
  const int cells = 20000;
  double ref = 0.0;
  for (int i = 0; i < cells; ++i) {
    const double s = (i + 0.5) / cells;
    ref += std::max(tilt_mean(s), 1.0 - tilt_mean(s)) / cells;
  }
  EXPECT_NEAR(k_norm(two_state_tilt(), 1.0, kInf), ref, 1e-6);
}

TEST(KNorm, BoundedByOmegaTimesT) {
  const auto fam = moving_gaussian(0, 10, {3.0, 1.5}, {2.0, 0.3}, 1.0);
  const double omega = osc_and_omega(fam, 1.0).omega;
  for (double q : {1.0, 2.0, 12.0, kInf})
    for (double t : {0.25, 1.0}) EXPECT_LE(k_norm(fam, t, q), omega * t * (1 + 1e-6));
}

TEST(Partition, SingleBlockReproducesGlobalQuantities) {
  auto fam = moving_gaussian(0, 6, {2.0, 1.0}, {1.5, 0.0}, 1.0);
  fam.space.partition = Partition{{0, 1, 2, 3, 4, 5}};
  const auto rep = partition_conditionals(fam, 0.6, 4.0, 64);
  ASSERT_EQ(rep.blocks.size(), 1u);
  EXPECT_LT((rep.blocks[0].mu - measure_at(fam, 0.6).weights).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((rep.blocks[0].h - h_at(fam, 0.6)).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_DOUBLE_EQ(rep.m_tilde, 1.0);
  EXPECT_NEAR(rep.k_tilde, k_norm(fam, 0.6, 4.0), 1e-9);
}

TEST(Partition, ZeroPotentialHasZeroBlockDrift) {
  auto fam = constant_family(StateSpace::indexed(4), Vector::Constant(4, 0.25), 1.0);
  fam.space.partition = Partition{{0, 1}, {2, 3}};
  const auto rep = partition_conditionals(fam, 0.5);
  for (const auto& b : rep.blocks) EXPECT_EQ(b.h_mean, 0.0);
  EXPECT_EQ(rep.m_tilde, 1.0);
}

TEST(Partition, BlockDriftIsMinusLogMassDerivative) {
  StateSpace space = StateSpace::indexed(4);
  space.partition = Partition{{0, 1}, {2, 3}};
  const auto fam = exponential_tilt(space, (Vector(4) << 0.1, 0.3, 0.2, 0.4).finished(),
                                    (Vector(4) << 0.0, 0.0, 1.0, 1.0).finished(), 1.0);
  auto log_mass = [&](double t) {
    const Vector w = measure_at(fam, t).weights;
    return std::log(w[0] + w[1]);
  };
  const double t = 0.4, h = 1e-5;
  const double fd = (log_mass(t + h) - log_mass(t - h)) / (2 * h);
  const auto blocks = block_conditionals(fam, t);
  EXPECT_NEAR(blocks[0].h_mean, -fd, 1e-8);
  // Blockwise centering.
  EXPECT_NEAR(blocks[1].h.dot(blocks[1].mu), 0.0, 1e-15);
}

TEST(Partition, MassRatioForShiftingBlocks) {
  StateSpace space = StateSpace::indexed(2);
  space.partition = Partition{{0}, {1}};
  const auto fam = exponential_tilt(space, Vector::Constant(2, 0.5), (Vector(2) << 0.0, 1.0).finished(), 1.0);
  // Block {0} grows monotonically from 1/2 to 1/(1+e^{-1}).
  EXPECT_NEAR(m_tilde(fam, 1.0, 1024), (1.0 / (1.0 + std::exp(-1.0))) / 0.5, 1e-12);
}

TEST(Product, WeightsFactorize) {
  const auto a = moving_gaussian(0, 3, {1.0, 0.5}, {1.0, 0.0}, 1.0);
  const auto b = two_state_tilt(1.0);
  const auto p = product_family({a, b});
  ASSERT_EQ(p.size(), 6);
  const Vector wa = measure_at(a, 0.7).weights, wb = measure_at(b, 0.7).weights, wp = measure_at(p, 0.7).weights;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(wp[2 * i + j], wa[i] * wb[j], 1e-15);
  EXPECT_LE(osc_and_omega(p, 1.0).omega,
            osc_and_omega(a, 1.0).omega + osc_and_omega(b, 1.0).omega + 1e-12);
}

TEST(Tabulated, InterpolatesLinearlyWithPiecewiseDerivative) {
  const auto fam = tabulated_family(StateSpace::indexed(2), Vector::Constant(2, 0.5), {0.0, 1.0, 2.0},
                                    {Vector::Zero(2), (Vector(2) << 0.0, 2.0).finished(),
                                     (Vector(2) << 0.0, 1.0).finished()});
  EXPECT_NEAR(fam.potential(0.5)[1], 1.0, 1e-15);
  EXPECT_NEAR(fam.potential_dt(0.5)[1], 2.0, 1e-15);
  EXPECT_NEAR(fam.potential_dt(1.5)[1], -1.0, 1e-15);
}

TEST(Validation, RejectsBadModels) {
  EXPECT_THROW(moving_gaussian(0, 5, {1.0, 0.0}, {1.0, -2.0}, 1.0), Error);
  auto fam = constant_family(StateSpace::indexed(2), (Vector(2) << 0.5, 0.6).finished(), 1.0);
  EXPECT_THROW(fam.validate(), Error);
  fam = two_state_tilt();
  fam.potential_dt = [](double) { return Vector::Zero(2).eval(); };
  EXPECT_THROW(fam.validate(), Error);
  StateSpace s = StateSpace::indexed(3);
  s.partition = Partition{{0, 1}, {1, 2}};
  EXPECT_THROW(s.validate(), Error);
}
