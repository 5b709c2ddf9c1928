#include <gtest/gtest.h>

#include <cmath>

#include "icl1nn/gradients.hpp"
#include "icl1nn/training.hpp"

using namespace icl1nn;

namespace {

Eigen::MatrixXd random_orthogonal(int d, Engine& rng) {
  std::normal_distribution<double> n;
  Eigen::MatrixXd A(d, d);
  for (int i = 0; i < d * d; ++i) A.data()[i] = n(rng);
  return Eigen::HouseholderQR<Eigen::MatrixXd>(A).householderQ();
}

// Sum of |analytic - fd| over all active entries of several random pairs.
double fd_total_error(double eps) {
  Engine rng = make_stream(77, {});
  double total = 0.0;
  for (int k = 0; k < 10; ++k) {
    const PromptSet p = gen_training_prompt(4, 4, rng);
    const AttentionWeights W = random_weights(4, 1.0, rng);
    total += (grad_sample(p, W).mean - grad_fd(p, W, eps).mean).cwiseAbs().sum();
  }
  return total;
}

}  // namespace

TEST(GradSample, MatchesFiniteDifferences) {
  for (auto [N, d, scale] : {std::tuple{4, 4, 0.5}, {1, 2, 1.0}, {7, 5, 1.5}, {16, 8, 0.3}, {3, 3, 3.0}}) {
    Engine rng = make_stream(1, {static_cast<std::uint64_t>(N), static_cast<std::uint64_t>(d)});
    for (int k = 0; k < 20; ++k) {
      const PromptSet p = gen_training_prompt(N, d, rng);
      const AttentionWeights W = random_weights(d, scale, rng);
      const BlockGradient a = grad_sample(p, W), f = grad_fd(p, W, 1e-5);
      for (int c = 0; c < d + 2; ++c)
        for (int r = 0; r < d + 2; ++r)
          EXPECT_TRUE(fd_agrees(a.mean(r, c), f.mean(r, c)))
              << "N=" << N << " d=" << d << " entry (" << r << "," << c << "): " << a.mean(r, c) << " vs "
              << f.mean(r, c);
    }
  }
}

TEST(GradSample, GaussianLabelsToo) {
  Engine rng = make_stream(2, {});
  std::normal_distribution<double> n;
  for (int k = 0; k < 20; ++k) {
    PromptSet p = gen_training_prompt(6, 4, rng);
    for (int j = 0; j < 6; ++j) p.ys[j] = 2.0 * n(rng);
    const AttentionWeights W = random_weights(4, 1.0, rng);
    const BlockGradient a = grad_sample(p, W), f = grad_fd(p, W, 1e-5);
    for (int i = 0; i < a.mean.size(); ++i) EXPECT_TRUE(fd_agrees(a.mean.data()[i], f.mean.data()[i]));
  }
}

TEST(GradSample, CompactKernelAgrees) {
  Engine rng = make_stream(3, {});
  GradScratch sc;
  Eigen::MatrixXd G;
  for (int k = 0; k < 100; ++k) {
    const PromptSet p = gen_training_prompt(9, 5, rng);
    const AttentionWeights W = random_weights(5, 1.0, rng);
    const double r = grad_kernel(p, W.matrix(), sc, G);
    EXPECT_LT((G - grad_sample(p, W).mean).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_NEAR(r, forward(p, W) - p.ys[nearest_index(p)], 1e-14);
  }
}

TEST(GradSample, ZeroLabelsGiveZeroGradient) {
  Engine rng = make_stream(4, {});
  PromptSet p = gen_training_prompt(5, 4, rng);
  p.ys.setZero();
  EXPECT_EQ(grad_sample(p, random_weights(4, 1.0, rng)).mean.cwiseAbs().maxCoeff(), 0.0);
}

TEST(GradSample, ConstantLabelsAtZeroWeights) {
  Engine rng = make_stream(5, {});
  PromptSet p = gen_training_prompt(4, 3, rng);
  p.ys.setConstant(1.0);
  // y_hat = N/(N+1), so the residual is -1/(N+1) and the gradient is nonzero.
  EXPECT_NEAR(forward(p, AttentionWeights(3)) - 1.0, -1.0 / 5.0, 1e-15);
  EXPECT_GT(grad_sample(p, AttentionWeights(3)).mean.cwiseAbs().maxCoeff(), 0.0);
}

TEST(GradSample, SecondBlockColumnIsZero) {
  Engine rng = make_stream(6, {});
  for (int k = 0; k < 20; ++k) {
    const PromptSet p = gen_training_prompt(5, 4, rng);
    EXPECT_EQ(grad_sample(p, random_weights(4, 1.0, rng)).g_col2().cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(GradSample, OffPatternBlocksNonzeroPerSample) {
  Engine rng = make_stream(7, {});
  const PromptSet p = gen_training_prompt(4, 4, rng);
  const BlockGradient g = grad_sample(p, DiagonalParams{0.5, 3.0}.expand(4));
  EXPECT_GT(g.g21().norm(), 0.0);
  EXPECT_GT(g.g31().norm(), 0.0);
  EXPECT_GT(g.g13().norm(), 0.0);
  EXPECT_NE(g.g23(), 0.0);
}

TEST(GradFd, EpsDomain) {
  Engine rng = make_stream(8, {});
  const PromptSet p = gen_training_prompt(3, 3, rng);
  EXPECT_THROW(grad_fd(p, AttentionWeights(3), 1e-8), DomainError);
  EXPECT_THROW(grad_fd(p, AttentionWeights(3), 1e-2), DomainError);
}

TEST(GradFd, ErrorIsVShapedInEps) {
  const double big = fd_total_error(1e-3), mid = fd_total_error(1e-5), small = fd_total_error(1e-7);
  EXPECT_GT(big, mid);
  EXPECT_GT(small, mid);
}

TEST(GradFd, TruncationErrorIsSecondOrder) {
  Engine rng = make_stream(9, {});
  const PromptSet p = gen_training_prompt(4, 4, rng);
  const AttentionWeights W = random_weights(4, 1.0, rng);
  const Eigen::MatrixXd a = grad_sample(p, W).mean;
  const double e1 = (grad_fd(p, W, 1e-3).mean - a).norm();
  const double e2 = (grad_fd(p, W, 5e-4).mean - a).norm();
  EXPECT_NEAR(e1 / e2, 4.0, 0.4);
}

TEST(VerifyGradients, ReportsEveryBlock) {
  const auto rows = verify_gradients_fd(4, 4, 20, 1e-5, 0);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_TRUE(all_pass(rows));
  for (const auto& r : rows) EXPECT_LT(r.estimate, 1e-5) << r.block;
}

TEST(Population, SingleSampleEqualsSampleGradient) {
  const AttentionWeights W = DiagonalParams{0.3, 1.0}.expand(4);
  const BlockGradient g = grad_population(5, 4, W, 1, 11, 3);
  Engine rng = make_stream(11, {stream::kGradPopulation, 3, 0});
  std::normal_distribution<double> normal;
  PromptSet p;
  sample_training_prompt(p, 5, 4, rng, normal);
  EXPECT_LT((g.mean - grad_sample(p, W).mean).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ(g.sample_count, 1u);
}

TEST(Population, WorkerCountDoesNotChangeResult) {
  const AttentionWeights W = DiagonalParams{0.5, 3.0}.expand(4);
  const BlockGradient a = grad_population(4, 4, W, 5000, 12, 0, 1), b = grad_population(4, 4, W, 5000, 12, 0, 8);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std_err, b.std_err);
  const DiagGradient c = grad_diag(4, 4, {0.5, 3.0}, 5000, 12, 0, 1), e = grad_diag(4, 4, {0.5, 3.0}, 5000, 12, 0, 8);
  EXPECT_EQ(c.dxi1, e.dxi1);
  EXPECT_EQ(c.dxi2, e.dxi2);
}

TEST(Population, SparseAndDiagonalAtDiagonalPoint) {
  const BlockGradient g = grad_population(4, 4, DiagonalParams{0.5, 3.0}.expand(4), 200000, 13);
  const auto rows = verify_sparsity(g);
  for (const auto& r : rows) EXPECT_TRUE(r.pass) << r.block << " " << r.estimate << " +- " << r.std_err;
}

TEST(Population, SparsityCheckDetectsOffPatternWeights) {
  AttentionWeights W = DiagonalParams{0.5, 3.0}.expand(4);
  W.w13() << 2.0, -1.0, 1.5, 0.5;
  W.w11()(0, 1) = 2.0;
  EXPECT_FALSE(all_pass(verify_sparsity(grad_population(4, 4, W, 50000, 14))));
}

TEST(Population, RotatedDrawsGiveSameW11) {
  Engine rng = make_stream(15, {});
  const Eigen::MatrixXd U = random_orthogonal(4, rng);
  const AttentionWeights W = DiagonalParams{0.5, 3.0}.expand(4);
  const BlockGradient a = grad_population(4, 4, W, 100000, 16);
  const BlockGradient b = grad_population(4, 4, W, 100000, 17, 0, 1, &U);
  const Eigen::MatrixXd diff = a.g11() - b.g11();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      EXPECT_LE(std::abs(diff(r, c)), 4.0 * std::hypot(a.std_err(r, c), b.std_err(r, c))) << r << "," << c;
}

TEST(DiagDrift, MatchesTraceOfFullGradient) {
  for (auto [xi1, xi2] : {std::pair{0.5, 3.0}, {0.0, 5.0}, {2.0, 4.0}}) {
    const BlockGradient g = grad_population(4, 4, DiagonalParams{xi1, xi2}.expand(4), 200000, 18);
    const DiagGradient dg = grad_diag(4, 4, {xi1, xi2}, 200000, 19);
    const double tr = g.g11().trace() / 4.0;
    const double se_tr = std::sqrt(g.std_err.topLeftCorner(4, 4).diagonal().squaredNorm()) / 4.0;
    EXPECT_LE(std::abs(dg.dxi1 - tr), 4.0 * std::hypot(dg.stderr1, se_tr)) << xi1 << "," << xi2;
    // W33's gradient is -dxi2.
    EXPECT_LE(std::abs(dg.dxi2 + g.g33()), 4.0 * std::hypot(dg.stderr2, g.std_err(5, 5))) << xi1 << "," << xi2;
  }
}

TEST(DiagDrift, LossMatchesLabelledEstimate) {
  const DiagGradient dg = grad_diag(6, 4, {1.0, 2.0}, 100000, 20);
  const BlockGradient g = grad_population(6, 4, DiagonalParams{1.0, 2.0}.expand(4), 100000, 21);
  EXPECT_LE(std::abs(dg.loss.mean - g.loss.mean), 4.0 * std::hypot(dg.loss.std_err, g.loss.std_err));
}

TEST(DiagDrift, FirstStepIncreasesXi1) {
  const double sigma = sigma_threshold(16, 4).value;
  const DiagGradient g = grad_diag(16, 4, {0.0, sigma}, 20000, 22);
  EXPECT_LT(g.dxi1 + 4.0 * g.stderr1, 0.0);
}

TEST(DiagDrift, Xi2IncrementLowerBound) {
  for (auto [xi1, xi2] : {std::pair{0.0, 1.0}, {0.5, 3.0}, {1.0, 2.0}, {2.0, 9.0}}) {
    const DiagGradient g = grad_diag(8, 4, {xi1, xi2}, 50000, 23);
    EXPECT_GE(-g.dxi2, g.qstar_qlast_sq.mean - 4.0 * std::hypot(g.stderr2, g.qstar_qlast_sq.std_err));
  }
}

TEST(DiagDrift, CoupledIncrementTrend) {
  double c_hat = 0.0;
  const auto pts = coupled_increment_trend(8, 4, 3.0, {0.0, 0.5, 1.0}, 50000, 24, 1, 4.0, &c_hat);
  EXPECT_GT(c_hat, 0.0);
  for (const auto& p : pts) EXPECT_TRUE(p.pass) << "xi1=" << p.xi1 << " " << p.value.mean << " < " << p.bound;
}
