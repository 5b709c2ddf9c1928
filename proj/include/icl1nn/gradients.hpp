#pragma once

// Per-prompt gradients of 1/2 (y_hat - y_{i*})^2 with respect to every block
// of W, a central-difference oracle, and Monte-Carlo population estimates.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "icl1nn/data.hpp"
#include "icl1nn/model.hpp"
#include "icl1nn/random.hpp"
#include "icl1nn/stats.hpp"

namespace icl1nn {

/// Gradient (or its Monte-Carlo mean) stored as a full (d+2)x(d+2) matrix;
/// the block accessors mirror AttentionWeights.
struct BlockGradient {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd std_err;  // per-entry standard error, zero for a single sample
  std::size_t sample_count = 0;
  McEstimate loss;  // 1/2 (y_hat - y_{i*})^2 over the same prompts

  int dim() const noexcept { return static_cast<int>(mean.rows()) - 2; }

  Eigen::MatrixXd g11() const { return mean.topLeftCorner(dim(), dim()); }
  Eigen::RowVectorXd g21() const { return mean.block(dim(), 0, 1, dim()); }
  Eigen::RowVectorXd g31() const { return mean.block(dim() + 1, 0, 1, dim()); }
  Eigen::VectorXd g13() const { return mean.block(0, dim() + 1, dim(), 1); }
  double g23() const { return mean(dim(), dim() + 1); }
  double g33() const { return mean(dim() + 1, dim() + 1); }
  /// Second block column; zero by construction.
  Eigen::VectorXd g_col2() const { return mean.col(dim()); }
};

/// Scratch buffers for the allocation-free per-prompt kernels.
struct GradScratch {
  Eigen::VectorXd v, s, w, u;
};

/// Writes the per-prompt gradient r u h_{N+1}^T to `G` and returns the
/// residual r = y_hat - y_{i*}, where u = sum_j q_j (y~_j - y_hat) h_j and
/// y~_{N+1} = 0.
inline double grad_kernel(const PromptSet& p, const Eigen::MatrixXd& W, GradScratch& sc,
                          Eigen::MatrixXd& G) {
  const int d = p.dim(), N = p.context_size();
  attention_logits(p, W, sc.v, sc.s);
  softmax_inplace(sc.s);
  const auto& q = sc.s;
  const double yhat = q.head(N).dot(p.ys);
  int best = 0;
  sc.w.noalias() = p.xs.transpose() * p.query;
  sc.w.maxCoeff(&best);
  const double r = yhat - p.ys[best];
  // w_j = q_j (y_j - y_hat)
  sc.w.array() = q.head(N).array() * (p.ys.array() - yhat);
  sc.u.resize(d + 2);
  sc.u.head(d).noalias() = p.xs * sc.w;
  sc.u.head(d) -= (q[N] * yhat) * p.query;
  sc.u[d] = sc.w.dot(p.ys);
  sc.u[d + 1] = -q[N] * yhat;
  G.resize(d + 2, d + 2);
  G.leftCols(d).noalias() = (r * sc.u) * p.query.transpose();
  G.col(d).setZero();
  G.col(d + 1) = r * sc.u;
  return r;
}

/// Per-prompt gradient assembled block by block from the closed-form
/// expressions. i* is recomputed from the prompt on every call.
inline BlockGradient grad_sample(const PromptSet& p, const AttentionWeights& W) {
  check_shapes(p, W);
  const int d = p.dim(), N = p.context_size();
  const Eigen::VectorXd q = attention_q(p, W).q;
  const Eigen::VectorXd& xq = p.query;
  const double ystar = p.ys[nearest_index(p)];

  // y~_j: labels with 0 for the query token; all sums run over N+1 tokens.
  Eigen::VectorXd yt = Eigen::VectorXd::Zero(N + 1);
  yt.head(N) = p.ys;
  Eigen::MatrixXd X(d, N + 1);
  X.leftCols(N) = p.xs;
  X.col(N) = xq;

  const double qy = q.dot(yt);               // sum_j q_j y~_j
  const double resid = qy - ystar * q.sum();  // sum_j q_j (y~_j - y*)
  const Eigen::VectorXd qx = X * q;          // sum_j q_j x_j
  const Eigen::VectorXd qyx = X * q.cwiseProduct(yt);  // sum_j q_j y~_j x_j
  const double qyy_ctx = q.head(N).dot(p.ys.cwiseProduct(p.ys));  // sum_{j<=N} q_j y_j^2
  const double qy_ctx = q.head(N).dot(p.ys);                     // sum_{j<=N} q_j y_j

  BlockGradient g;
  g.mean = Eigen::MatrixXd::Zero(d + 2, d + 2);
  g.std_err = Eigen::MatrixXd::Zero(d + 2, d + 2);
  g.sample_count = 1;
  g.mean.topLeftCorner(d, d) = ((qyx - qx * qy) * xq.transpose()) * resid;
  g.mean.block(d, 0, 1, d) = ((qyy_ctx - qy_ctx * qy) * xq.transpose()) * resid;
  g.mean.block(0, d + 1, d, 1) = (qyx - qx * qy) * resid;
  g.mean(d, d + 1) = (qyy_ctx - qy_ctx * qy) * resid;
  g.mean.block(d + 1, 0, 1, d) = (-qy * q[N] * xq.transpose()) * resid;
  g.mean(d + 1, d + 1) = -qy * q[N] * resid;
  g.loss = {0.5 * resid * resid, 0.0, 1};
  return g;
}

/// Central differences of sample_loss in every active entry of W.
inline BlockGradient grad_fd(const PromptSet& p, const AttentionWeights& W, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw DomainError("grad_fd: eps must lie in [1e-7, 1e-3]");
  check_shapes(p, W);
  const int D = W.dim() + 2;
  BlockGradient g;
  g.mean = Eigen::MatrixXd::Zero(D, D);
  g.std_err = Eigen::MatrixXd::Zero(D, D);
  g.sample_count = 1;
  AttentionWeights Wp = W;
  for (int c = 0; c < D; ++c) {
    if (!W.is_active(0, c)) continue;
    for (int r = 0; r < D; ++r) {
      const double orig = Wp.matrix()(r, c);
      Wp.matrix()(r, c) = orig + eps;
      const double up = sample_loss(p, Wp);
      Wp.matrix()(r, c) = orig - eps;
      const double down = sample_loss(p, Wp);
      Wp.matrix()(r, c) = orig;
      g.mean(r, c) = (up - down) / (2.0 * eps);
    }
  }
  g.loss = {sample_loss(p, W), 0.0, 1};
  return g;
}

/// Entry-wise Welford accumulator for matrices.
struct MatrixStat {
  std::size_t n = 0;
  Eigen::MatrixXd mean, m2;

  void add(const Eigen::MatrixXd& x) {
    if (n == 0) {
      mean = Eigen::MatrixXd::Zero(x.rows(), x.cols());
      m2 = Eigen::MatrixXd::Zero(x.rows(), x.cols());
    }
    ++n;
    const Eigen::ArrayXXd delta = x.array() - mean.array();
    mean.array() += delta / static_cast<double>(n);
    m2.array() += delta * (x.array() - mean.array());
  }
  void merge(const MatrixStat& o) {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double na = static_cast<double>(n), nb = static_cast<double>(o.n), tot = na + nb;
    const Eigen::ArrayXXd delta = o.mean.array() - mean.array();
    mean.array() += delta * (nb / tot);
    m2.array() += o.m2.array() + delta.square() * (na * nb / tot);
    n += o.n;
  }
  Eigen::MatrixXd std_err() const {
    if (n < 2) return Eigen::MatrixXd::Zero(mean.rows(), mean.cols());
    return (m2.array() / static_cast<double>(n - 1) / static_cast<double>(n)).sqrt().matrix();
  }
};

/// Monte-Carlo population gradient over fresh training prompts. The draw is
/// fixed by (seed, step); `rotation`, when given, is applied to every sampled
/// point before evaluation.
inline BlockGradient grad_population(int N, int d, const AttentionWeights& W, std::size_t mc_samples,
                                     std::uint64_t seed, std::uint64_t step = 0, int workers = 1,
                                     const Eigen::MatrixXd* rotation = nullptr) {
  require_context(N);
  require_dimension(d);
  if (W.dim() != d) throw InvalidDimension("grad_population: weight dimension mismatch");
  if (mc_samples < 1) throw InvalidDimension("grad_population: mc_samples must be >= 1");
  struct Partial {
    MatrixStat g;
    RunningStat loss;
  };
  auto parts = run_blocks<Partial>(mc_samples, workers, [&](BlockRange br) {
    Engine rng = make_stream(seed, {stream::kGradPopulation, step, br.index});
    std::normal_distribution<double> normal;
    PromptSet p(N, d);
    GradScratch sc;
    Eigen::MatrixXd G;
    Partial part;
    for (std::size_t k = 0; k < br.count; ++k) {
      sample_training_prompt(p, N, d, rng, normal);
      if (rotation) {
        p.xs = (*rotation) * p.xs;
        p.query = (*rotation) * p.query;
      }
      const double r = grad_kernel(p, W.matrix(), sc, G);
      part.g.add(G);
      part.loss.add(0.5 * r * r);
    }
    return part;
  });
  Partial total;
  for (const auto& part : parts) {
    total.g.merge(part.g);
    total.loss.merge(part.loss);
  }
  return {total.g.mean, total.g.std_err(), total.g.n, McEstimate::from(total.loss)};
}

/// Drifts of the reduced system at a diagonal point. W11's gradient there is
/// dxi1 * I_d and W33's gradient is -dxi2, so descent reads
/// xi1 -= eta * dxi1, xi2 -= eta * dxi2.
struct DiagGradient {
  double dxi1 = 0.0;
  double dxi2 = 0.0;
  double stderr1 = 0.0;
  double stderr2 = 0.0;
  McEstimate qstar_qlast_sq;  // E[q_{i*} q_{N+1}^2]
  McEstimate coupled;         // E[d (-dxi1) + 2 (-dxi2)], per-sample combined
  McEstimate loss;            // 1/2 (1 + sum_j q_j^2 - 2 q_{i*}), labels integrated out
  std::size_t samples = 0;
};

/// Label-free estimate of the two drifts: only points are sampled, since the
/// label moments integrate out of the population gradient.
inline DiagGradient grad_diag(int N, int d, const DiagonalParams& dp, std::size_t mc_samples,
                              std::uint64_t seed, std::uint64_t step = 0, int workers = 1) {
  require_context(N);
  require_dimension(d);
  if (mc_samples < 1) throw InvalidDimension("grad_diag: mc_samples must be >= 1");
  struct Partial {
    RunningStat g1, g2, lower, coupled, loss;
  };
  auto parts = run_blocks<Partial>(mc_samples, workers, [&](BlockRange br) {
    Engine rng = make_stream(seed, {stream::kGradDiag, step, br.index});
    std::normal_distribution<double> normal;
    Eigen::MatrixXd xs(d, N);
    Eigen::VectorXd xq(d), t(N), s(N + 1);
    Partial part;
    for (std::size_t k = 0; k < br.count; ++k) {
      for (int j = 0; j < N; ++j) fill_sphere(xs.col(j), rng, normal);
      fill_sphere(xq, rng, normal);
      t.noalias() = xs.transpose() * xq;
      int best = 0;
      t.maxCoeff(&best);
      s.head(N) = dp.xi1 * t;
      s[N] = dp.xi1 - dp.xi2;
      softmax_inplace(s);
      const double qs = s[best], qn = s[N];
      const double sq = s.head(N).squaredNorm();
      const double m = s.head(N).dot(t) + qn;  // sum_j q_j <x_j, x_{N+1}>, query term is 1
      const double sq_t = s.head(N).cwiseAbs2().dot(t);
      const double g1 = (sq_t - qs * t[best] + qs * m - sq * m) / d;
      const double g2 = -qn * (qs - sq);
      part.g1.add(g1);
      part.g2.add(g2);
      part.lower.add(qs * qn * qn);
      part.coupled.add(-d * g1 - 2.0 * g2);
      part.loss.add(0.5 * (1.0 + sq - 2.0 * qs));
    }
    return part;
  });
  Partial tot;
  for (const auto& part : parts) {
    tot.g1.merge(part.g1);
    tot.g2.merge(part.g2);
    tot.lower.merge(part.lower);
    tot.coupled.merge(part.coupled);
    tot.loss.merge(part.loss);
  }
  DiagGradient out;
  out.dxi1 = tot.g1.mean;
  out.dxi2 = tot.g2.mean;
  out.stderr1 = tot.g1.stderr_of_mean();
  out.stderr2 = tot.g2.stderr_of_mean();
  out.qstar_qlast_sq = McEstimate::from(tot.lower);
  out.coupled = McEstimate::from(tot.coupled);
  out.loss = McEstimate::from(tot.loss);
  out.samples = tot.g1.n;
  return out;
}

/// One row of a verification report.
struct VerifyRow {
  std::string block;
  std::string statistic;
  double estimate = 0.0;
  double std_err = 0.0;
  bool pass = false;
};

inline bool all_pass(const std::vector<VerifyRow>& rows) {
  return std::all_of(rows.begin(), rows.end(), [](const VerifyRow& r) { return r.pass; });
}

/// Analytic-vs-difference agreement: |a - f| <= 1e-8, or relative error
/// |a - f| / max(|a|, |f|) below `rel_tol`.
inline double fd_relative_error(double analytic, double fd) {
  const double diff = std::abs(analytic - fd);
  const double scale = std::max(std::abs(analytic), std::abs(fd));
  return scale > 0.0 ? diff / scale : 0.0;
}
inline bool fd_agrees(double analytic, double fd, double rel_tol = 1e-5, double abs_floor = 1e-8) {
  return std::abs(analytic - fd) <= abs_floor || fd_relative_error(analytic, fd) < rel_tol;
}

/// Random weights with i.i.d. N(0, scale^2) active entries (second block column zero).
inline AttentionWeights random_weights(int d, double scale, Engine& rng) {
  std::normal_distribution<double> normal(0.0, scale);
  AttentionWeights W(d);
  for (int c = 0; c < d + 2; ++c)
    for (int r = 0; r < d + 2; ++r)
      if (W.is_active(r, c)) W.matrix()(r, c) = normal(rng);
  return W;
}

inline const char* block_name(int d, int r, int c) {
  const int br = r < d ? 1 : (r == d ? 2 : 3);
  const int bc = c < d ? 1 : (c == d ? 2 : 3);
  static const char* names[3][3] = {{"W11", "W12", "W13"}, {"W21", "W22", "W23"}, {"W31", "W32", "W33"}};
  return names[br - 1][bc - 1];
}

/// Closed form vs central differences on `pairs` random (prompt, W) draws.
/// One row per active block: the worst relative error over entries of size
/// at least 1e-6, and a verdict from fd_agrees on every entry.
inline std::vector<VerifyRow> verify_gradients_fd(int N, int d, int pairs, double eps, std::uint64_t seed,
                                                  double weight_scale = 0.5) {
  Engine rng = make_stream(seed, {stream::kVerify, 1});
  const char* blocks[] = {"W11", "W21", "W31", "W13", "W23", "W33"};
  std::vector<double> worst(6, 0.0);
  std::vector<bool> ok(6, true);
  auto slot = [&](const char* name) {
    for (int i = 0; i < 6; ++i)
      if (std::string(blocks[i]) == name) return i;
    return -1;
  };
  for (int k = 0; k < pairs; ++k) {
    const PromptSet p = gen_training_prompt(N, d, rng);
    const AttentionWeights W = random_weights(d, weight_scale, rng);
    const BlockGradient a = grad_sample(p, W);
    const BlockGradient f = grad_fd(p, W, eps);
    for (int c = 0; c < d + 2; ++c) {
      if (!W.is_active(0, c)) continue;
      for (int r = 0; r < d + 2; ++r) {
        const int i = slot(block_name(d, r, c));
        const bool agree = fd_agrees(a.mean(r, c), f.mean(r, c));
        if (std::max(std::abs(a.mean(r, c)), std::abs(f.mean(r, c))) >= 1e-6)
          worst[i] = std::max(worst[i], fd_relative_error(a.mean(r, c), f.mean(r, c)));
        ok[i] = ok[i] && agree;
      }
    }
  }
  std::vector<VerifyRow> rows;
  for (int i = 0; i < 6; ++i) rows.push_back({blocks[i], "max_rel_err", worst[i], 0.0, ok[i]});
  return rows;
}

/// Expectation-level sparsity and diagonality at a diagonal point: every
/// entry outside W11's diagonal and W33 has |mean| <= k std-err, and the
/// diagonal of W11 is constant within k combined std-err.
inline std::vector<VerifyRow> verify_sparsity(const BlockGradient& g, double k = 4.0) {
  const int d = g.dim();
  std::vector<VerifyRow> rows;
  auto zero_row = [&](const std::string& block, int r, int c) {
    const double e = g.mean(r, c), s = g.std_err(r, c);
    rows.push_back({block + "[" + std::to_string(r) + "," + std::to_string(c) + "]", "mean", e, s,
                    std::abs(e) <= k * s});
  };
  for (int c = 0; c < d; ++c) zero_row("W21", d, c);
  for (int c = 0; c < d; ++c) zero_row("W31", d + 1, c);
  for (int r = 0; r < d; ++r) zero_row("W13", r, d + 1);
  zero_row("W23", d, d + 1);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c)
      if (r != c) zero_row("W11", r, c);
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      const double diff = g.mean(i, i) - g.mean(j, j);
      const double se = std::hypot(g.std_err(i, i), g.std_err(j, j));
      rows.push_back({"W11[" + std::to_string(i) + "," + std::to_string(i) + "]-W11[" + std::to_string(j) +
                          "," + std::to_string(j) + "]",
                      "diag_difference", diff, se, std::abs(diff) <= k * se});
    }
  return rows;
}

struct CoupledIncrementPoint {
  double xi1 = 0.0;
  McEstimate value;    // E[d (-dxi1) + 2 (-dxi2)]
  double bound = 0.0;  // (1 - 2^-N) C_hat exp(-6 xi1)
  bool pass = false;
};

/// Coupled-increment lower bound along xi1 at fixed xi2. C_hat is calibrated
/// from the first point so that the bound is tight there; later points must
/// stay above the calibrated bound up to k std-err.
inline std::vector<CoupledIncrementPoint> coupled_increment_trend(int N, int d, double xi2,
                                                                  const std::vector<double>& xi1s,
                                                                  std::size_t mc, std::uint64_t seed,
                                                                  int workers = 1, double k = 4.0,
                                                                  double* c_hat_out = nullptr) {
  std::vector<CoupledIncrementPoint> out;
  double c_hat = 0.0;
  const double factor = 1.0 - std::pow(2.0, -N);
  for (std::size_t i = 0; i < xi1s.size(); ++i) {
    const DiagGradient g = grad_diag(N, d, {xi1s[i], xi2}, mc, seed, i, workers);
    if (i == 0) c_hat = g.coupled.mean / (factor * std::exp(-6.0 * xi1s[0]));
    const double bound = factor * c_hat * std::exp(-6.0 * xi1s[i]);
    out.push_back({xi1s[i], g.coupled, bound, g.coupled.mean >= bound - k * g.coupled.std_err});
  }
  if (c_hat_out) *c_hat_out = c_hat;
  return out;
}

}  // namespace icl1nn
