#pragma once

// Uniform sampling on S^{d-1} and the law of the inner product between a
// uniform point and a fixed unit vector.

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "icl1nn/errors.hpp"
#include "icl1nn/random.hpp"
#include "icl1nn/stats.hpp"

namespace icl1nn {

inline constexpr double kUnitNormTol = 1e-12;

inline void require_dimension(int d) {
  if (d < 2) throw InvalidDimension("dimension d must be >= 2, got " + std::to_string(d));
}

/// Fills `out` with a uniform point on the unit sphere (normalized Gaussian).
inline void fill_sphere(Eigen::Ref<Eigen::VectorXd> out, Engine& rng,
                        std::normal_distribution<double>& normal) {
  double norm2 = 0.0;
  do {
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = normal(rng);
    norm2 = out.squaredNorm();
  } while (norm2 == 0.0);
  out /= std::sqrt(norm2);
}

/// A point of S^{d-1}; construction checks the unit-norm invariant.
class UnitVector {
 public:
  explicit UnitVector(Eigen::VectorXd coords) : coords_(std::move(coords)) {
    require_dimension(static_cast<int>(coords_.size()));
    if (std::abs(coords_.norm() - 1.0) > kUnitNormTol)
      throw PreconditionViolation("UnitVector: norm differs from 1 by more than 1e-12");
  }

  const Eigen::VectorXd& coords() const noexcept { return coords_; }
  int dim() const noexcept { return static_cast<int>(coords_.size()); }
  double dot(const UnitVector& o) const { return coords_.dot(o.coords_); }

 private:
  Eigen::VectorXd coords_;
};

inline UnitVector sample_sphere(int d, Engine& rng) {
  require_dimension(d);
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(d);
  fill_sphere(v, rng, normal);
  return UnitVector{std::move(v)};
}

/// Normalizing constant of t -> (1 - t^2)^{(d-3)/2} on [-1, 1]:
/// Gamma(d/2) / (sqrt(pi) Gamma((d-1)/2)), evaluated through lgamma.
inline double inner_product_normalizer(int d) {
  require_dimension(d);
  return std::exp(std::lgamma(0.5 * d) - std::lgamma(0.5 * (d - 1)) - 0.5 * std::log(std::numbers::pi));
}

/// The constant 2 Gamma(d/2) / (sqrt(pi) Gamma((d-1)/2)) as it appears in the
/// order-statistic bounds. It normalizes the density over [0, 1] only, i.e. it
/// is twice inner_product_normalizer(d).
inline double kd_one_sided(int d) { return 2.0 * inner_product_normalizer(d); }

/// Density of tau = <x, e> for x uniform on S^{d-1}.
struct InnerProductDensity {
  int d;
  double k_d;

  explicit InnerProductDensity(int dim) : d(dim), k_d(inner_product_normalizer(dim)) {}

  double operator()(double t) const {
    if (!(std::abs(t) <= 1.0)) throw DomainError("density_tau: |t| > 1");
    if (d == 3) return k_d;
    const double base = 1.0 - t * t;
    if (base == 0.0) return d == 2 ? std::numeric_limits<double>::infinity() : 0.0;
    return k_d * std::pow(base, 0.5 * (d - 3));
  }
};

inline double density_tau(double t, int d) { return InnerProductDensity{d}(t); }

/// P(tau <= t). Integrates k_d cos^{d-2}(theta) over [-pi/2, asin t], which
/// is the density after t = sin(theta) and has no endpoint singularity.
inline double cdf_tau(double t, int d) {
  require_dimension(d);
  if (!(std::abs(t) <= 1.0)) throw DomainError("cdf_tau: |t| > 1");
  if (t == -1.0) return 0.0;
  if (t == 1.0) return 1.0;
  const double kd = inner_product_normalizer(d);
  const double upper = std::asin(t);
  if (d == 2) return std::clamp((upper + 0.5 * std::numbers::pi) / std::numbers::pi, 0.0, 1.0);
  const int power = d - 2;
  auto integrand = [power](double theta) { return std::pow(std::cos(theta), power); };
  // Integrate the shorter tail and use symmetry for the other half.
  double value;
  if (upper <= 0.0) {
    value = kd * boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
                     integrand, -0.5 * std::numbers::pi, upper, 20, 1e-12);
  } else {
    value = 1.0 - kd * boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
                           integrand, upper, 0.5 * std::numbers::pi, 20, 1e-12);
  }
  return std::clamp(value, 0.0, 1.0);
}

/// Monte-Carlo estimate of E[max_i <x_i, x_{N+1}>] over N+1 i.i.d. uniform points.
inline McEstimate estimate_max_inner_expectation(int N, int d, std::size_t samples, std::uint64_t seed,
                                                 int workers = 1) {
  require_dimension(d);
  if (N < 1) throw InvalidDimension("N must be >= 1");
  if (samples < 1) throw InvalidDimension("samples must be >= 1");
  auto partials = run_blocks<RunningStat>(samples, workers, [&](BlockRange r) {
    Engine rng = make_stream(seed, {stream::kGeometry, 1, r.index});
    std::normal_distribution<double> normal;
    Eigen::VectorXd q(d), x(d);
    RunningStat s;
    for (std::size_t k = 0; k < r.count; ++k) {
      fill_sphere(q, rng, normal);
      double best = -2.0;
      for (int i = 0; i < N; ++i) {
        fill_sphere(x, rng, normal);
        best = std::max(best, x.dot(q));
      }
      s.add(best);
    }
    return s;
  });
  RunningStat total;
  for (const auto& p : partials) total.merge(p);
  return McEstimate::from(total);
}

/// Threshold 1 - (2 N k_d)^{-2/(d-3)} of the max-inner-product concentration
/// bound (k_d as in kd_one_sided). Only defined for d >= 4.
inline double concentration_threshold(int N, int d) {
  if (d < 4) throw InvalidDimension("concentration threshold needs d >= 4");
  return 1.0 - std::pow(2.0 * N * kd_one_sided(d), -2.0 / (d - 3));
}

/// Monte-Carlo estimate of P(max_i <x_i, x_{N+1}> <= threshold).
inline McEstimate estimate_max_inner_below(int N, int d, double threshold, std::size_t samples,
                                           std::uint64_t seed, int workers = 1) {
  require_dimension(d);
  auto partials = run_blocks<RunningStat>(samples, workers, [&](BlockRange r) {
    Engine rng = make_stream(seed, {stream::kGeometry, 2, r.index});
    std::normal_distribution<double> normal;
    Eigen::VectorXd q(d), x(d);
    RunningStat s;
    for (std::size_t k = 0; k < r.count; ++k) {
      fill_sphere(q, rng, normal);
      double best = -2.0;
      for (int i = 0; i < N; ++i) {
        fill_sphere(x, rng, normal);
        best = std::max(best, x.dot(q));
      }
      s.add(best <= threshold ? 1.0 : 0.0);
    }
    return s;
  });
  RunningStat total;
  for (const auto& p : partials) total.merge(p);
  return McEstimate::from(total);
}

/// The two incompatible definitions of the constant a_{n,d} used by the
/// xi-increment bounds. Both are exposed; neither is preferred.
inline double a_nd_upper_bound_form(int N, int d) {
  if (d < 4) throw InvalidDimension("a_nd needs d >= 4");
  return std::pow(2.0 * N * std::sqrt(static_cast<double>(d)), -2.0 / (d - 3));
}
inline double a_nd_ratio_form(int N, int d) { return concentration_threshold(N, d); }

}  // namespace icl1nn
