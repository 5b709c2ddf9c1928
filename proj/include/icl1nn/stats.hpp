#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "icl1nn/random.hpp"

namespace icl1nn {

/// Monte-Carlo mean with its standard error.
struct McEstimate {
  double mean = 0.0;
  double std_err = 0.0;
  std::size_t samples = 0;

  static McEstimate from(const RunningStat& s) { return {s.mean, s.stderr_of_mean(), s.n}; }
};

/// True when |estimate - reference| <= k standard errors (plus an absolute
/// floor for zero-variance estimators).
inline bool within_stderr(const McEstimate& e, double reference, double k, double floor = 1e-12) {
  return std::abs(e.mean - reference) <= k * e.std_err + floor;
}

/// One-sample Kolmogorov-Smirnov statistic sup |F_n - F|.
inline double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
  if (samples.empty()) throw std::invalid_argument("ks_statistic: empty sample");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Ordinary least squares y ~ slope * x + intercept.
inline LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_line: need >= 2 paired points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LinearFit f;
  f.slope = sxx > 0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  f.r_squared = (sxx > 0 && syy > 0) ? (sxy * sxy) / (sxx * syy) : 0.0;
  return f;
}

/// Trailing moving average; entry i averages values[i-window+1 .. i].
/// The first window-1 entries are omitted.
inline std::vector<double> moving_average(std::span<const double> values, std::size_t window) {
  std::vector<double> out;
  if (window == 0 || values.size() < window) return out;
  out.reserve(values.size() - window + 1);
  for (std::size_t end = window; end <= values.size(); ++end) {
    double acc = 0;
    for (std::size_t i = end - window; i < end; ++i) acc += values[i];
    out.push_back(acc / static_cast<double>(window));
  }
  return out;
}

}  // namespace icl1nn
