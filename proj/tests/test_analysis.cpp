#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "icl1nn/analysis.hpp"
#include "icl1nn/training.hpp"

using namespace icl1nn;

namespace {

std::vector<ShiftInstance> integer_set(int N, int d, int n, std::uint64_t seed, int classes = 3) {
  ShiftedTestOptions o;
  o.labels = LabelLaw::UniformInteger;
  o.num_classes = classes;
  return shifted_test_set(N, d, o, n, seed);
}

Eigen::MatrixXd random_orthogonal(int d, Engine& rng) {
  std::normal_distribution<double> n;
  Eigen::MatrixXd A(d, d);
  for (int i = 0; i < d * d; ++i) A.data()[i] = n(rng);
  return Eigen::HouseholderQR<Eigen::MatrixXd>(A).householderQ();
}

// Direct evaluation of the slice: E over Rademacher labels with q_j = 1/(N + e^{-xi2}).
double slice_by_enumeration(int N, double xi2) {
  const double q = 1.0 / (N + std::exp(-xi2));
  double total = 0.0;
  const int n = 1 << N;
  for (int mask = 0; mask < n; ++mask) {
    double s = 0.0;
    for (int j = 0; j < N; ++j) s += (mask >> j & 1) ? 1.0 : -1.0;
    const double r = q * s - ((mask & 1) ? 1.0 : -1.0);  // the nearest label is exchangeable: take j = 0
    total += r * r;
  }
  return total / n;
}

}  // namespace

TEST(Slice, ClosedFormValues) {
  EXPECT_NEAR(loss_slice_xi1_zero(4, 0.0), 0.76, 1e-15);
  EXPECT_NEAR(loss_slice_xi1_zero(4, 40.0), 0.75, 1e-15);
  EXPECT_THROW(loss_slice_xi1_zero(0, 1.0), InvalidDimension);
}

TEST(Slice, MatchesLabelEnumeration) {
  for (int N : {1, 2, 3, 4, 8, 12})
    for (double xi2 : {-2.0, 0.0, 1.5, 6.0}) EXPECT_NEAR(loss_slice_xi1_zero(N, xi2), slice_by_enumeration(N, xi2), 1e-13);
}

TEST(Slice, MatchesMonteCarlo) {
  for (int N : {1, 2, 4, 16})
    for (double xi2 : {-2.0, 0.0, 2.0, 10.0}) {
      const McEstimate e = mc_slice_xi1_zero(N, 4, xi2, 1000000, 7);
      EXPECT_TRUE(within_stderr(e, loss_slice_xi1_zero(N, xi2), 4.0))
          << "N=" << N << " xi2=" << xi2 << ": " << e.mean << " +- " << e.std_err;
    }
}

TEST(Slice, MonteCarloIndependentOfWorkers) {
  const McEstimate a = mc_slice_xi1_zero(4, 4, 1.0, 20000, 8, 1), b = mc_slice_xi1_zero(4, 4, 1.0, 20000, 8, 8);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std_err, b.std_err);
}

TEST(Slice, DerivativeMatchesCentralDifference) {
  for (int N : {1, 4, 16})
    for (double xi2 : {0.0, 1.0, 5.0}) {
      const double h = 1e-5;
      const double fd = 0.5 * (loss_slice_xi1_zero(N, xi2 + h) - loss_slice_xi1_zero(N, xi2 - h)) / (2.0 * h);
      EXPECT_NEAR(fd, loss_slice_derivative(N, xi2), 1e-8);
      const double e = std::exp(-xi2);
      EXPECT_NEAR(loss_slice_derivative(N, xi2), -e * e / std::pow(N + e, 3), 1e-15);
    }
  EXPECT_NEAR(loss_slice_derivative(4, 0.0), -0.008, 1e-15);
}

TEST(Nonconvexity, Certificate) {
  const NonconvexityCertificate c4 = nonconvexity_certificate(4);
  EXPECT_TRUE(c4.nonconvex);
  EXPECT_LT(std::abs(loss_slice_derivative(4, 30.0)), 1e-6);
  for (int N = 1; N <= 64; ++N) EXPECT_TRUE(nonconvexity_certificate(N).nonconvex) << "N=" << N;
}

TEST(Round, HalfRoundsUp) {
  EXPECT_EQ(round_label(0.49), 0);
  EXPECT_EQ(round_label(0.5), 1);
  EXPECT_EQ(round_label(-0.2), 0);
  EXPECT_EQ(round_label(3.0), 3);
  EXPECT_EQ(round_label(-1.5), -1);
  EXPECT_EQ(round_label(-1.6), -2);
  EXPECT_EQ(round_label(2.4999999), 2);
  EXPECT_THROW(round_label(std::nan("")), DomainError);
  EXPECT_THROW(round_label(INFINITY), DomainError);
}

TEST(Shift, UntrainedBaseline) {
  EXPECT_NEAR(uniform_attention_mse(16), 1.0 + 16.0 / 289.0 - 2.0 / 17.0, 1e-15);
  EXPECT_NEAR(uniform_attention_mse(16), 0.938, 1e-3);
  const auto set = shifted_test_set(16, 8, {}, 4000, 11);
  const ShiftReport r = evaluate_shift(AttentionWeights(8), set, false);
  EXPECT_LE(std::abs(r.mse_vs_1nn - uniform_attention_mse(16)), 4.0 * r.mse_stderr);
  EXPECT_EQ(r.n_instances, 4000u);
  EXPECT_FALSE(r.classified);
}

TEST(Shift, TrainedDiagonalModelClassifiesExactly) {
  const auto set = integer_set(16, 8, 1000, 12);
  const ShiftReport r = evaluate_shift(DiagonalParams{50.0, 200.0}, set, true, 0.1);
  EXPECT_EQ(r.mismatch_count, 0u);
  EXPECT_EQ(r.mismatch_rate, 0.0);
  EXPECT_EQ(r.refined_holds, 1000u);
  EXPECT_LT(r.max_refined_bound, 0.5);
  EXPECT_EQ(r.R_observed, 3.0);
  EXPECT_GE(r.min_margin_all, 0.1 - 1e-12);
}

TEST(Shift, DeviationBoundHoldsPastThreshold) {
  const auto set = integer_set(16, 8, 500, 13);
  const double R = 3.0, N = 16.0, delta = 0.1;
  const double xi1 = 1.05 * 2.0 * std::log(4.0 * R * N) / delta;
  const ShiftReport r = evaluate_shift(DiagonalParams{xi1, xi1 + 200.0}, set, true, delta);
  EXPECT_EQ(r.half_delta_holds, 500u);
  EXPECT_LT(r.bound_half_delta, 0.5);
  EXPECT_EQ(r.mismatch_count, 0u);
}

TEST(Shift, ClassificationNeedsIntegerLabels) {
  const auto set = shifted_test_set(8, 4, {}, 10, 14);
  EXPECT_THROW(evaluate_shift(DiagonalParams{1.0, 1.0}, set, true), PreconditionViolation);
  EXPECT_NO_THROW(evaluate_shift(DiagonalParams{1.0, 1.0}, set, false));
}

TEST(Shift, InvalidInstanceIsNamed) {
  auto set = integer_set(8, 4, 5, 15);
  set[3].prompt.query *= 1.1;
  try {
    evaluate_shift(DiagonalParams{1.0, 1.0}, set, true);
    FAIL();
  } catch (const PreconditionViolation& e) {
    EXPECT_NE(std::string(e.what()).find("instance 3"), std::string::npos);
  }
  EXPECT_THROW(evaluate_shift(DiagonalParams{1.0, 1.0}, {}, false), PreconditionViolation);
}

TEST(Shift, InvariantUnderOrderAndRotation) {
  auto set = shifted_test_set(8, 5, {}, 300, 16);
  const Model m = DiagonalParams{6.0, 8.0};
  const ShiftReport a = evaluate_shift(m, set, false);
  auto shuffled = set;
  std::reverse(shuffled.begin(), shuffled.end());
  EXPECT_NEAR(evaluate_shift(m, shuffled, false).mse_vs_1nn, a.mse_vs_1nn, 1e-12);
  Engine rng = make_stream(16, {});
  for (auto& in : set) {
    const Eigen::MatrixXd U = random_orthogonal(5, rng);
    in.prompt.xs = U * in.prompt.xs;
    in.prompt.query = U * in.prompt.query;
  }
  EXPECT_NEAR(evaluate_shift(m, set, false).mse_vs_1nn, a.mse_vs_1nn, 1e-12);
}

TEST(Shift, MismatchCountIsInteger) {
  const auto set = integer_set(8, 4, 333, 17);
  const ShiftReport r = evaluate_shift(DiagonalParams{3.0, 3.0}, set, true);
  EXPECT_DOUBLE_EQ(r.mismatch_rate * r.n_instances, static_cast<double>(r.mismatch_count));
  EXPECT_GT(r.mismatch_count, 0u);
}

TEST(Shift, FullWeightsAgreeWithDiagonalModel) {
  const auto set = integer_set(8, 4, 200, 18);
  const ShiftReport a = evaluate_shift(DiagonalParams{4.0, 6.0}, set, true);
  const ShiftReport b = evaluate_shift(DiagonalParams{4.0, 6.0}.expand(4), set, true);
  EXPECT_NEAR(a.mse_vs_1nn, b.mse_vs_1nn, 1e-12);
  EXPECT_EQ(a.mismatch_count, b.mismatch_count);
  EXPECT_TRUE(std::isnan(b.bound_half_delta));
}

TEST(Shift, MismatchFallsAlongTraining) {
  TrainConfig c;
  c.N = 16;
  c.d = 8;
  c.steps = 400;
  c.mc_samples = 1000;
  c.eta = 2.0;
  c.seed = 3;
  const TrainLog log = train(c);
  const auto set = integer_set(16, 8, 500, 9);
  std::size_t prev = set.size() + 1;
  for (int k = 0; k <= 400; k += 50) {
    const auto& r = log.records[static_cast<std::size_t>(k)];
    const ShiftReport rep = evaluate_shift(DiagonalParams{r.xi1, r.xi2}, set, true, 0.1);
    EXPECT_LE(rep.mismatch_count, prev + 1) << "step " << k;
    prev = rep.mismatch_count;
  }
  EXPECT_LT(prev, set.size() / 4);
}
