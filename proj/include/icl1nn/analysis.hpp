#pragma once

// Closed-form loss slice at xi1 = 0 and its nonconvexity certificate, the
// rounding classifier, and evaluation on margin-separated shifted test sets.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "icl1nn/data.hpp"
#include "icl1nn/errors.hpp"
#include "icl1nn/model.hpp"
#include "icl1nn/random.hpp"
#include "icl1nn/stats.hpp"

namespace icl1nn {

/// E[(y_hat - y_{i*})^2] on the line xi1 = 0 under the training distribution:
/// 1 - 2/D + N/D^2 with D = N + exp(-xi2).
inline double loss_slice_xi1_zero(int N, double xi2) {
  require_context(N);
  const double D = N + std::exp(-xi2);
  return 1.0 - 2.0 / D + N / (D * D);
}

/// d/dxi2 of the loss 1/2 E[(y_hat - y_{i*})^2] on the same line:
/// -exp(-2 xi2) / D^3, evaluated as -(e/D)^2 / D to stay finite for xi2 << 0.
inline double loss_slice_derivative(int N, double xi2) {
  require_context(N);
  const double e = std::exp(-xi2);
  const double D = N + e;
  if (!std::isfinite(e)) return 0.0;
  const double ratio = e / D;
  return -(ratio * ratio) / D;
}

struct NonconvexityCertificate {
  int N = 0;
  std::vector<double> xi2;    // sorted probe points, tails included
  std::vector<double> slope;  // derivative of 1/2 E[...] at each point
  bool negative_somewhere = false;
  bool tails_vanish = false;   // |slope| < 1e-6 at both tails
  bool slope_decreases = false;  // some later point has a smaller slope
  bool nonconvex = false;
};

/// A convex function of one variable has a non-decreasing derivative. The
/// slice derivative is negative in the middle and vanishes at both ends, so
/// it must decrease somewhere; that certifies nonconvexity of L on xi1 = 0.
inline NonconvexityCertificate nonconvexity_certificate(int N, std::vector<double> probes = {-5.0, 0.0, 5.0},
                                                        double tail = 30.0) {
  require_context(N);
  NonconvexityCertificate c;
  c.N = N;
  probes.push_back(-tail);
  probes.push_back(tail);
  std::sort(probes.begin(), probes.end());
  for (double x : probes) {
    c.xi2.push_back(x);
    c.slope.push_back(loss_slice_derivative(N, x));
  }
  c.negative_somewhere = std::any_of(c.slope.begin(), c.slope.end(), [](double s) { return s < 0.0; });
  c.tails_vanish = std::abs(c.slope.front()) < 1e-6 && std::abs(c.slope.back()) < 1e-6;
  for (std::size_t i = 0; i + 1 < c.slope.size(); ++i)
    for (std::size_t j = i + 1; j < c.slope.size(); ++j)
      if (c.slope[j] < c.slope[i]) c.slope_decreases = true;
  c.nonconvex = c.negative_somewhere && c.tails_vanish && c.slope_decreases;
  return c;
}

/// Monte-Carlo E[(y_hat - y_{i*})^2] at (0, xi2) with Rademacher labels.
inline McEstimate mc_slice_xi1_zero(int N, int d, double xi2, std::size_t samples, std::uint64_t seed,
                                    int workers = 1) {
  require_context(N);
  require_dimension(d);
  const DiagonalParams dp{0.0, xi2};
  auto parts = run_blocks<RunningStat>(samples, workers, [&](BlockRange br) {
    Engine rng = make_stream(seed, {stream::kVerify, 2, br.index});
    std::normal_distribution<double> normal;
    PromptSet p(N, d);
    Eigen::VectorXd t, s;
    RunningStat st;
    for (std::size_t k = 0; k < br.count; ++k) {
      sample_training_prompt(p, N, d, rng, normal);
      diag_weights(p, dp, t, s);
      int best = 0;
      t.maxCoeff(&best);
      const double r = s.head(N).dot(p.ys) - p.ys[best];
      st.add(r * r);
    }
    return st;
  });
  RunningStat tot;
  for (const auto& p : parts) tot.merge(p);
  return McEstimate::from(tot);
}

/// Nearest integer with fractional part t - floor(t); a fractional part of at
/// least 1/2 rounds up.
inline long long round_label(double t) {
  if (!std::isfinite(t)) throw DomainError("round_label: non-finite input");
  const double fl = std::floor(t);
  return static_cast<long long>(t - fl >= 0.5 ? std::ceil(t) : fl);
}

/// E[(sum_j y_j / (N+1) - y_{i*})^2] for i.i.d. unit-variance labels at W = 0.
inline double uniform_attention_mse(int N) {
  require_context(N);
  const double n1 = N + 1.0;
  return 1.0 + N / (n1 * n1) - 2.0 / n1;
}

using Model = std::variant<AttentionWeights, DiagonalParams>;

struct ShiftReport {
  static constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_instances = 0;
  double mse_vs_1nn = 0.0;
  double mse_stderr = 0.0;
  bool classified = false;
  std::size_t mismatch_count = 0;
  double mismatch_rate = 0.0;
  double R_observed = 0.0;         // max |y| over the batch
  double delta_used = nan;         // generator margin, if known
  double min_margin_all = nan;     // smallest squared-distance gap over all competitors
  double min_margin_label = nan;   // ... over label-mismatched competitors only
  double max_abs_deviation = 0.0;  // max |y_hat - y_{i*}|
  // Deviation bounds (diagonal models only). With margin delta in squared
  // distance the logit gap is xi1 delta / 2; the "full" variant uses xi1 delta.
  double bound_half_delta = nan;  // 2 R N exp(-xi1 delta/2) + R exp(xi1 - xi2)
  double bound_full_delta = nan;  // 2 R N exp(-xi1 delta) + R exp(xi1 - xi2)
  std::size_t half_delta_holds = 0;
  std::size_t refined_holds = 0;  // per-instance 2R sum_{y_j != y*} q-ratio bound
  double max_refined_bound = nan;
};

/// Output of `model` on one prompt.
inline double predict(const Model& model, const PromptSet& p) {
  if (const auto* dp = std::get_if<DiagonalParams>(&model)) return forward_diag(p, *dp);
  return forward(p, std::get<AttentionWeights>(model));
}

struct ShiftInstance {
  PromptSet prompt;
  int nearest = -1;  // planted 1-NN index, or -1 to recompute
};

/// Scores the model against the 1-NN label on every instance. `delta` is the
/// margin the set was generated with (NaN: use the observed minimum margin).
/// With `classify`, every label must be an integer.
inline ShiftReport evaluate_shift(const Model& model, const std::vector<ShiftInstance>& instances, bool classify,
                                  double delta = std::numeric_limits<double>::quiet_NaN()) {
  if (instances.empty()) throw PreconditionViolation("evaluate_shift: no instances");
  for (std::size_t i = 0; i < instances.size(); ++i) {
    try {
      instances[i].prompt.validate();
    } catch (const PreconditionViolation& e) {
      throw PreconditionViolation("instance " + std::to_string(i) + ": " + e.what());
    }
    if (classify && (instances[i].prompt.ys.array() != instances[i].prompt.ys.array().round()).any())
      throw PreconditionViolation("instance " + std::to_string(i) + ": classification needs integer labels");
  }
  ShiftReport rep;
  rep.n_instances = instances.size();
  rep.classified = classify;
  rep.min_margin_all = std::numeric_limits<double>::infinity();
  rep.min_margin_label = std::numeric_limits<double>::infinity();
  std::vector<int> star(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& in = instances[i];
    star[i] = in.nearest >= 0 ? in.nearest : nearest_index(in.prompt);
    rep.R_observed = std::max(rep.R_observed, in.prompt.ys.cwiseAbs().maxCoeff());
    if (in.prompt.context_size() >= 2) {
      rep.min_margin_all = std::min(rep.min_margin_all, separation_margin(in.prompt, MarginScope::AllCompetitors));
      rep.min_margin_label =
          std::min(rep.min_margin_label, separation_margin(in.prompt, MarginScope::LabelMismatch));
    }
  }
  if (std::isnan(delta)) delta = rep.min_margin_all;
  rep.delta_used = delta;

  const DiagonalParams* dp = std::get_if<DiagonalParams>(&model);
  const double R = rep.R_observed;
  if (dp) {
    const int N = instances.front().prompt.context_size();
    const double tail = R * std::exp(dp->xi1 - dp->xi2);
    rep.bound_half_delta = 2.0 * R * N * std::exp(-dp->xi1 * delta / 2.0) + tail;
    rep.bound_full_delta = 2.0 * R * N * std::exp(-dp->xi1 * delta) + tail;
    rep.max_refined_bound = 0.0;
  }
  RunningStat st;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const PromptSet& p = instances[i].prompt;
    const double ystar = p.ys[star[i]];
    const double yhat = predict(model, p);
    const double dev = std::abs(yhat - ystar);
    st.add(dev * dev);
    rep.max_abs_deviation = std::max(rep.max_abs_deviation, dev);
    if (classify && static_cast<double>(round_label(yhat)) != ystar) ++rep.mismatch_count;
    if (dp) {
      if (dev <= rep.bound_half_delta) ++rep.half_delta_holds;
      const Eigen::VectorXd t = p.xs.transpose() * p.query;
      const double ts = t[star[i]];
      double sum = 0.0;
      for (int j = 0; j < p.context_size(); ++j)
        if (p.ys[j] != ystar) sum += std::exp(dp->xi1 * (t[j] - ts));
      const double refined = 2.0 * R * sum + R * std::exp(dp->xi1 * (1.0 - ts) - dp->xi2);
      rep.max_refined_bound = std::max(rep.max_refined_bound, refined);
      if (dev <= refined * (1.0 + 1e-12) + 1e-15) ++rep.refined_holds;
    }
  }
  rep.mse_vs_1nn = st.mean;
  rep.mse_stderr = st.stderr_of_mean();
  rep.mismatch_rate = classify ? static_cast<double>(rep.mismatch_count) / rep.n_instances : 0.0;
  return rep;
}

inline std::vector<ShiftInstance> shifted_test_set(int N, int d, const ShiftedTestOptions& opt, int n,
                                                   std::uint64_t seed) {
  Engine rng = make_stream(seed, {stream::kShiftTest});
  std::vector<ShiftInstance> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    ShiftedPrompt sp = gen_shifted_test(N, d, opt, rng);
    out.push_back({std::move(sp.prompt), sp.nearest});
  }
  return out;
}

}  // namespace icl1nn
