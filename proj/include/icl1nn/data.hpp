#pragma once

// In-context prompts: the training distribution (uniform sphere points with
// independent Rademacher labels), the margin-separated shifted test sets, and
// the exact one-nearest-neighbor rule.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

#include "icl1nn/errors.hpp"
#include "icl1nn/geometry.hpp"
#include "icl1nn/random.hpp"

namespace icl1nn {

/// N labeled context points plus one query. Points are stored column-wise:
/// xs.col(j) is x_{j+1}. Indices in this library are 0-based.
struct PromptSet {
  Eigen::MatrixXd xs;     // d x N
  Eigen::VectorXd ys;     // N
  Eigen::VectorXd query;  // d

  PromptSet() = default;
  PromptSet(int N, int d) : xs(d, N), ys(N), query(d) {}
  PromptSet(Eigen::MatrixXd x, Eigen::VectorXd y, Eigen::VectorXd q)
      : xs(std::move(x)), ys(std::move(y)), query(std::move(q)) {}

  int dim() const noexcept { return static_cast<int>(xs.rows()); }
  int context_size() const noexcept { return static_cast<int>(xs.cols()); }

  /// Throws PreconditionViolation unless shapes agree and every point has unit norm.
  void validate(double tol = kUnitNormTol) const {
    if (xs.cols() < 1) throw PreconditionViolation("PromptSet: N must be >= 1");
    if (xs.rows() < 2) throw PreconditionViolation("PromptSet: d must be >= 2");
    if (ys.size() != xs.cols() || query.size() != xs.rows())
      throw PreconditionViolation("PromptSet: inconsistent shapes");
    for (Eigen::Index j = 0; j < xs.cols(); ++j)
      if (std::abs(xs.col(j).norm() - 1.0) > tol)
        throw PreconditionViolation("PromptSet: context point " + std::to_string(j) + " is not unit norm");
    if (std::abs(query.norm() - 1.0) > tol) throw PreconditionViolation("PromptSet: query is not unit norm");
    if (!ys.allFinite()) throw PreconditionViolation("PromptSet: non-finite label");
  }
};

inline void require_context(int N, int min_n = 1) {
  if (N < min_n)
    throw InvalidDimension("context size N must be >= " + std::to_string(min_n) + ", got " + std::to_string(N));
}

inline double rademacher(Engine& rng) { return (rng() >> 63) ? 1.0 : -1.0; }

/// Resamples `out` in place from the training distribution (no allocation
/// when the shape already matches).
inline void sample_training_prompt(PromptSet& out, int N, int d, Engine& rng,
                                   std::normal_distribution<double>& normal) {
  if (out.context_size() != N || out.dim() != d) out = PromptSet(N, d);
  for (int j = 0; j < N; ++j) fill_sphere(out.xs.col(j), rng, normal);
  fill_sphere(out.query, rng, normal);
  for (int j = 0; j < N; ++j) out.ys[j] = rademacher(rng);
}

inline PromptSet gen_training_prompt(int N, int d, Engine& rng) {
  require_context(N);
  require_dimension(d);
  std::normal_distribution<double> normal;
  PromptSet p(N, d);
  sample_training_prompt(p, N, d, rng, normal);
  return p;
}

struct NnResult {
  int index = 0;       // 0-based position of the nearest context point
  double label = 0.0;  // y at that position
  /// min over {j : y_j != label} of |x_j - q|^2 - |x_index - q|^2; +inf if none.
  double margin = std::numeric_limits<double>::infinity();
};

/// Index of the context point nearest the query (squared Euclidean distance,
/// exhaustive scan, lowest index wins ties).
inline int nearest_index(const PromptSet& p) {
  int best = 0;
  double best_d2 = (p.xs.col(0) - p.query).squaredNorm();
  for (int j = 1; j < p.context_size(); ++j) {
    const double d2 = (p.xs.col(j) - p.query).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = j;
    }
  }
  return best;
}

inline NnResult one_nn(const PromptSet& p) {
  require_context(p.context_size());
  NnResult r;
  r.index = nearest_index(p);
  r.label = p.ys[r.index];
  const double base = (p.xs.col(r.index) - p.query).squaredNorm();
  for (int j = 0; j < p.context_size(); ++j) {
    if (j == r.index || p.ys[j] == r.label) continue;
    r.margin = std::min(r.margin, (p.xs.col(j) - p.query).squaredNorm() - base);
  }
  return r;
}

enum class MarginScope {
  AllCompetitors,  // every j != i*
  LabelMismatch,   // only j with y_j != y_{i*}
};

/// Largest delta with |x_j - q|^2 >= |x_{i*} - q|^2 + delta for every competitor j.
inline double separation_margin(const PromptSet& p, MarginScope scope) {
  require_context(p.context_size(), 2);
  const int best = nearest_index(p);
  const double base = (p.xs.col(best) - p.query).squaredNorm();
  double m = std::numeric_limits<double>::infinity();
  for (int j = 0; j < p.context_size(); ++j) {
    if (j == best) continue;
    if (scope == MarginScope::LabelMismatch && p.ys[j] == p.ys[best]) continue;
    m = std::min(m, (p.xs.col(j) - p.query).squaredNorm() - base);
  }
  return m;
}

enum class LabelLaw {
  StandardNormal,   // y ~ N(0, 1)
  UniformInteger,   // y uniform on {1, ..., num_classes}
};

struct ShiftedTestOptions {
  double delta = 0.1;
  LabelLaw labels = LabelLaw::StandardNormal;
  int num_classes = 3;
};

struct ShiftedPrompt {
  PromptSet prompt;
  int nearest = 0;  // the planted i*
};

/// Margin-separated instance: uniform points and labels, a uniformly chosen
/// context point copied into the query, then every other point within squared
/// distance delta of the query reflected through the origin.
inline ShiftedPrompt gen_shifted_test(int N, int d, const ShiftedTestOptions& opt, Engine& rng) {
  require_context(N, 2);
  require_dimension(d);
  if (!(opt.delta > 0.0) || opt.delta > 2.0)
    throw ConfigError("gen_shifted_test: delta must lie in (0, 2]; got " + std::to_string(opt.delta));
  if (opt.labels == LabelLaw::UniformInteger && opt.num_classes < 1)
    throw ConfigError("gen_shifted_test: num_classes must be >= 1");

  std::normal_distribution<double> normal;
  ShiftedPrompt out{PromptSet(N, d), 0};
  PromptSet& p = out.prompt;
  for (int j = 0; j < N; ++j) fill_sphere(p.xs.col(j), rng, normal);
  if (opt.labels == LabelLaw::StandardNormal) {
    for (int j = 0; j < N; ++j) p.ys[j] = normal(rng);
  } else {
    std::uniform_int_distribution<int> cls(1, opt.num_classes);
    for (int j = 0; j < N; ++j) p.ys[j] = cls(rng);
  }
  out.nearest = std::uniform_int_distribution<int>(0, N - 1)(rng);
  p.query = p.xs.col(out.nearest);
  for (int j = 0; j < N; ++j) {
    if (j == out.nearest) continue;
    if ((p.xs.col(j) - p.query).squaredNorm() <= opt.delta) p.xs.col(j) = -p.xs.col(j);
  }
  // Reflection maps squared distance s to 4 - s >= 4 - delta >= delta.
  for (int j = 0; j < N; ++j) {
    if (j == out.nearest) continue;
    if ((p.xs.col(j) - p.query).squaredNorm() < opt.delta - 1e-12)
      throw std::logic_error("gen_shifted_test: separation post-condition violated");
  }
  return out;
}

inline ShiftedPrompt gen_shifted_test(int N, int d, double delta, Engine& rng) {
  return gen_shifted_test(N, d, ShiftedTestOptions{delta}, rng);
}

}  // namespace icl1nn
