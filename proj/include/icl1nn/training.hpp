#pragma once

// Population gradient descent from the structured initialization, the
// reduced (xi1, xi2) dynamics, and mini-batch SGD on a fixed dataset.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "icl1nn/data.hpp"
#include "icl1nn/errors.hpp"
#include "icl1nn/gradients.hpp"
#include "icl1nn/model.hpp"
#include "icl1nn/random.hpp"
#include "icl1nn/stats.hpp"

namespace icl1nn {

enum class Regime { PopulationGd, DiagDynamics, Sgd };

inline std::string regime_name(Regime r) {
  switch (r) {
    case Regime::PopulationGd: return "population-gd";
    case Regime::DiagDynamics: return "diag-dynamics";
    case Regime::Sgd: return "sgd";
  }
  return "?";
}

inline Regime parse_regime(const std::string& s) {
  if (s == "population-gd") return Regime::PopulationGd;
  if (s == "diag-dynamics") return Regime::DiagDynamics;
  if (s == "sgd") return Regime::Sgd;
  throw ConfigError("unknown regime '" + s + "' (expected population-gd, diag-dynamics or sgd)");
}

struct SgdConfig {
  int dataset_size = 10000;
  int batch_size = 128;
  int epochs = 2000;
  double lr = 0.1;
  double init_scale = 0.02;
  /// Shifted test set scored after every epoch; 0 instances disables it.
  int test_instances = 1000;
  double test_delta = 0.1;
};

struct TrainConfig {
  Regime regime = Regime::DiagDynamics;
  int N = 16;
  int d = 8;
  std::optional<double> sigma;  // unset: sigma_threshold(N, d, c_d_hat)
  double c_d_hat = 1.0;
  double eta = 0.5;
  int steps = 500;
  std::size_t mc_samples = 10000;
  /// Size of the fixed prompt set used to log the loss (common random numbers
  /// across steps); 0 means mc_samples.
  std::size_t eval_samples = 0;
  SgdConfig sgd;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const {
    if (N < 1) throw ConfigError("N must be >= 1");
    if (d < 2) throw ConfigError("d must be >= 2");
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be finite and > 0");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
    if (c_d_hat <= 0.0) throw ConfigError("c_d_hat must be > 0");
    if (sigma && !(*sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (regime == Regime::Sgd) {
      if (sgd.dataset_size < 1 || sgd.batch_size < 1 || sgd.epochs < 0)
        throw ConfigError("sgd: dataset_size and batch_size must be >= 1, epochs >= 0");
      if (!(sgd.lr > 0.0) || !std::isfinite(sgd.lr) || !(sgd.init_scale >= 0.0))
        throw ConfigError("sgd: lr must be finite and > 0, init_scale >= 0");
      if (sgd.test_instances < 0) throw ConfigError("sgd: test_instances must be >= 0");
      if (sgd.test_instances > 0 && (N < 2 || !(sgd.test_delta > 0.0) || sgd.test_delta > 2.0))
        throw ConfigError("sgd: shifted test set needs N >= 2 and test_delta in (0, 2]");
    }
  }
  std::size_t eval_size() const { return eval_samples ? eval_samples : mc_samples; }
};

struct SigmaThreshold {
  double value = 0.0;
  bool middle_skipped = false;
};

/// 2 max{log(N d), -log(1 - (N sqrt d)^{1/d}), C_d (1 - 2^{-N})}. The middle
/// term is undefined when (N sqrt d)^{1/d} >= 1 and is then left out.
inline SigmaThreshold sigma_threshold(int N, int d, double c_d_hat = 1.0) {
  if (N < 2 || d < 2) throw InvalidDimension("sigma_threshold needs N, d >= 2");
  if (!(c_d_hat > 0.0)) throw DomainError("sigma_threshold: C_d must be > 0");
  SigmaThreshold out;
  double m = std::max(std::log(static_cast<double>(N) * d), c_d_hat * (1.0 - std::pow(2.0, -N)));
  const double base = std::pow(N * std::sqrt(static_cast<double>(d)), 1.0 / d);
  if (base < 1.0) {
    m = std::max(m, -std::log(1.0 - base));
  } else {
    out.middle_skipped = true;
  }
  out.value = 2.0 * m;
  return out;
}

/// One logged state. Fields that do not apply to a regime stay NaN.
struct TrainRecord {
  static constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  int step = 0;
  double loss = nan;  // 1/2 E[(y_hat - y_{i*})^2]
  double loss_stderr = nan;
  double xi1 = nan;  // mean of diag(W11)
  double xi2 = nan;  // -W33
  // population-gd
  double grad_norm = nan;
  double offpattern_norm = nan;      // distance of W from diag(xi1 I, 0, -xi2)
  double offpattern_envelope = nan;  // 5 x accumulated step noise
  // diag-dynamics
  double dxi1 = nan, dxi1_stderr = nan, dxi2 = nan, dxi2_stderr = nan;
  double qstar_qlast_sq = nan;
  // sgd
  double test_mse = nan, test_mse_stderr = nan;
};

struct TrainLog {
  TrainConfig config;
  double sigma = 0.0;
  bool sigma_middle_skipped = false;
  std::vector<TrainRecord> records;
  std::map<std::string, double> fitted;  // calibrated or fitted constants
  std::string update_convention = "per-entry descent: xi1 -= eta * tr(grad W11)/d, W -= eta * grad";
  double wall_time_s = 0.0;
  AttentionWeights final_weights;
  std::optional<DiagonalParams> final_diag;
  std::optional<std::string> abort_reason;
};

/// Thrown when a run hits non-finite values; carries the records so far.
struct TrainingAborted : NumericOverflow {
  TrainLog partial;
  TrainingAborted(const std::string& what, TrainLog log) : NumericOverflow(what), partial(std::move(log)) {}
};

/// Fixed prompts, drawn once per run, on which the loss is logged at every step.
inline std::vector<PromptSet> make_eval_set(int N, int d, std::size_t n, std::uint64_t seed, int workers) {
  auto blocks = run_blocks<std::vector<PromptSet>>(n, workers, [&](BlockRange br) {
    Engine rng = make_stream(seed, {stream::kEval, br.index});
    std::normal_distribution<double> normal;
    std::vector<PromptSet> out(br.count);
    for (auto& p : out) sample_training_prompt(p, N, d, rng, normal);
    return out;
  });
  std::vector<PromptSet> all;
  all.reserve(n);
  for (auto& b : blocks)
    for (auto& p : b) all.push_back(std::move(p));
  return all;
}

/// Mean and std-err of 1/2 (y_hat - y_{i*})^2 over `set`.
inline McEstimate empirical_loss(const std::vector<PromptSet>& set, const Eigen::MatrixXd& W, int workers) {
  auto parts = run_blocks<RunningStat>(set.size(), workers, [&](BlockRange br) {
    Eigen::VectorXd v, s, t;
    RunningStat st;
    for (std::size_t i = br.begin; i < br.begin + br.count; ++i) {
      const PromptSet& p = set[i];
      attention_logits(p, W, v, s);
      softmax_inplace(s);
      t.noalias() = p.xs.transpose() * p.query;
      int best = 0;
      t.maxCoeff(&best);
      const double r = s.head(p.context_size()).dot(p.ys) - p.ys[best];
      st.add(0.5 * r * r);
    }
    return st;
  });
  RunningStat tot;
  for (const auto& p : parts) tot.merge(p);
  return McEstimate::from(tot);
}

/// Label-integrated loss 1/2 (1 + sum_j q_j^2 - 2 q_{i*}) at a diagonal point.
inline McEstimate diag_loss(const std::vector<PromptSet>& set, const DiagonalParams& dp, int workers) {
  auto parts = run_blocks<RunningStat>(set.size(), workers, [&](BlockRange br) {
    Eigen::VectorXd t, s;
    RunningStat st;
    for (std::size_t i = br.begin; i < br.begin + br.count; ++i) {
      const PromptSet& p = set[i];
      diag_weights(p, dp, t, s);
      int best = 0;
      t.maxCoeff(&best);
      st.add(0.5 * (1.0 + s.head(p.context_size()).squaredNorm() - 2.0 * s[best]));
    }
    return st;
  });
  RunningStat tot;
  for (const auto& p : parts) tot.merge(p);
  return McEstimate::from(tot);
}

inline void fill_xi(TrainRecord& rec, const AttentionWeights& W) {
  rec.xi1 = W.w11().diagonal().mean();
  rec.xi2 = -W.w33();
}

/// Frobenius distance from the nearest diag(c I_d, 0, w33) pattern.
inline double offpattern_norm(const Eigen::MatrixXd& M, int d) {
  Eigen::MatrixXd R = M;
  const double c = R.topLeftCorner(d, d).diagonal().mean();
  R.topLeftCorner(d, d).diagonal().array() -= c;
  R(d + 1, d + 1) = 0.0;
  return R.norm();
}

inline SigmaThreshold resolve_sigma(const TrainConfig& cfg) {
  if (cfg.sigma) return {*cfg.sigma, false};
  return sigma_threshold(cfg.N, cfg.d, cfg.c_d_hat);
}

template <class Body>
TrainLog run_logged(const TrainConfig& cfg, Body&& body) {
  cfg.validate();
  TrainLog log;
  log.config = cfg;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(log);
  } catch (const NumericOverflow& e) {
    log.abort_reason = e.what();
    log.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::string what =
        "training aborted at step " + std::to_string(log.records.size()) + ": " + e.what();
    throw TrainingAborted(what, std::move(log));
  }
  log.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

/// W <- W - eta * grad_population(W), starting from the structured initialization.
inline TrainLog train_population_gd(const TrainConfig& cfg) {
  if (cfg.regime != Regime::PopulationGd) throw ConfigError("train_population_gd: regime must be population-gd");
  return run_logged(cfg, [&](TrainLog& log) {
    const SigmaThreshold sig = resolve_sigma(cfg);
    log.sigma = sig.value;
    log.sigma_middle_skipped = sig.middle_skipped;
    AttentionWeights W = AttentionWeights::initial(cfg.d, sig.value);
    const auto eval = make_eval_set(cfg.N, cfg.d, cfg.eval_size(), cfg.seed, cfg.workers);
    double noise2 = 0.0;
    for (int k = 0; k <= cfg.steps; ++k) {
      TrainRecord rec;
      rec.step = k;
      const McEstimate L = empirical_loss(eval, W.matrix(), cfg.workers);
      rec.loss = L.mean;
      rec.loss_stderr = L.std_err;
      fill_xi(rec, W);
      rec.offpattern_norm = offpattern_norm(W.matrix(), cfg.d);
      rec.offpattern_envelope = 5.0 * std::sqrt(noise2);
      if (k < cfg.steps) {
        const BlockGradient g =
            grad_population(cfg.N, cfg.d, W, cfg.mc_samples, cfg.seed, static_cast<std::uint64_t>(k), cfg.workers);
        rec.grad_norm = g.mean.norm();
        Eigen::MatrixXd se = g.std_err;
        se(cfg.d + 1, cfg.d + 1) = 0.0;
        noise2 += cfg.eta * cfg.eta * se.squaredNorm();
        W.matrix() -= cfg.eta * g.mean;
        if (!W.matrix().allFinite()) throw NumericOverflow("weights became non-finite");
      }
      log.records.push_back(rec);
    }
    log.final_weights = W;
  });
}

/// Iterates the reduced system xi1 -= eta dxi1, xi2 -= eta dxi2 from (0, sigma).
inline TrainLog train_diag(const TrainConfig& cfg) {
  if (cfg.regime != Regime::DiagDynamics) throw ConfigError("train_diag: regime must be diag-dynamics");
  return run_logged(cfg, [&](TrainLog& log) {
    const SigmaThreshold sig = resolve_sigma(cfg);
    log.sigma = sig.value;
    log.sigma_middle_skipped = sig.middle_skipped;
    DiagonalParams dp{0.0, sig.value};
    const auto eval = make_eval_set(cfg.N, cfg.d, cfg.eval_size(), cfg.seed, cfg.workers);
    for (int k = 0; k <= cfg.steps; ++k) {
      TrainRecord rec;
      rec.step = k;
      const McEstimate L = diag_loss(eval, dp, cfg.workers);
      rec.loss = L.mean;
      rec.loss_stderr = L.std_err;
      rec.xi1 = dp.xi1;
      rec.xi2 = dp.xi2;
      if (k < cfg.steps) {
        const DiagGradient g =
            grad_diag(cfg.N, cfg.d, dp, cfg.mc_samples, cfg.seed, static_cast<std::uint64_t>(k), cfg.workers);
        rec.dxi1 = g.dxi1;
        rec.dxi1_stderr = g.stderr1;
        rec.dxi2 = g.dxi2;
        rec.dxi2_stderr = g.stderr2;
        rec.qstar_qlast_sq = g.qstar_qlast_sq.mean;
        dp.xi1 -= cfg.eta * g.dxi1;
        dp.xi2 -= cfg.eta * g.dxi2;
        if (!std::isfinite(dp.xi1) || !std::isfinite(dp.xi2)) throw NumericOverflow("xi became non-finite");
      }
      log.records.push_back(rec);
    }
    log.final_diag = dp;
    log.final_weights = dp.expand(cfg.d);
  });
}

/// Mean squared deviation (y_hat - y_{i*})^2 over shifted instances.
inline McEstimate shift_mse(const std::vector<ShiftedPrompt>& set, const Eigen::MatrixXd& W) {
  RunningStat st;
  Eigen::VectorXd v, s;
  for (const auto& sp : set) {
    attention_logits(sp.prompt, W, v, s);
    softmax_inplace(s);
    const double r = s.head(sp.prompt.context_size()).dot(sp.prompt.ys) - sp.prompt.ys[sp.nearest];
    st.add(r * r);
  }
  return McEstimate::from(st);
}

/// Mini-batch SGD on a fixed dataset of training prompts. Record k holds the
/// full-dataset loss after k epochs and, with a test set attached, the
/// shifted-test MSE against the 1-NN label.
inline TrainLog train_sgd(const TrainConfig& cfg) {
  if (cfg.regime != Regime::Sgd) throw ConfigError("train_sgd: regime must be sgd");
  return run_logged(cfg, [&](TrainLog& log) {
    const SgdConfig& s = cfg.sgd;
    const int N = cfg.N, d = cfg.d;
    std::vector<PromptSet> data(static_cast<std::size_t>(s.dataset_size));
    {
      Engine rng = make_stream(cfg.seed, {stream::kSgdData});
      std::normal_distribution<double> normal;
      for (auto& p : data) sample_training_prompt(p, N, d, rng, normal);
    }
    std::vector<ShiftedPrompt> test;
    if (s.test_instances > 0) {
      Engine rng = make_stream(cfg.seed, {stream::kShiftTest});
      for (int i = 0; i < s.test_instances; ++i) test.push_back(gen_shifted_test(N, d, s.test_delta, rng));
    }
    AttentionWeights W(d);
    {
      Engine rng = make_stream(cfg.seed, {stream::kSgdInit});
      W = random_weights(d, s.init_scale, rng);
    }
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    GradScratch sc;
    Eigen::MatrixXd G, acc(d + 2, d + 2);
    auto record = [&](int epoch) {
      TrainRecord rec;
      rec.step = epoch;
      const McEstimate L = empirical_loss(data, W.matrix(), 1);
      rec.loss = L.mean;
      rec.loss_stderr = L.std_err;
      fill_xi(rec, W);
      if (!test.empty()) {
        const McEstimate T = shift_mse(test, W.matrix());
        rec.test_mse = T.mean;
        rec.test_mse_stderr = T.std_err;
      }
      log.records.push_back(rec);
    };
    record(0);
    for (int epoch = 1; epoch <= s.epochs; ++epoch) {
      Engine shuf = make_stream(cfg.seed, {stream::kSgdShuffle, static_cast<std::uint64_t>(epoch)});
      std::shuffle(order.begin(), order.end(), shuf);
      for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(s.batch_size)) {
        const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(s.batch_size));
        acc.setZero();
        for (std::size_t i = b; i < e; ++i) {
          grad_kernel(data[static_cast<std::size_t>(order[i])], W.matrix(), sc, G);
          acc += G;
        }
        W.matrix() -= (s.lr / static_cast<double>(e - b)) * acc;
      }
      if (!W.matrix().allFinite()) throw NumericOverflow("weights became non-finite");
      record(epoch);
    }
    log.final_weights = W;
  });
}

inline TrainLog train(const TrainConfig& cfg) {
  switch (cfg.regime) {
    case Regime::PopulationGd: return train_population_gd(cfg);
    case Regime::DiagDynamics: return train_diag(cfg);
    case Regime::Sgd: return train_sgd(cfg);
  }
  throw ConfigError("unknown regime");
}

/// Runs seeds seed, seed+1, ... in parallel (one seed per worker); each run
/// itself is single-threaded so the result does not depend on `workers`.
inline std::vector<TrainLog> train_seeds(const TrainConfig& cfg, int n_seeds, int workers) {
  if (n_seeds < 1) throw ConfigError("seeds must be >= 1");
  return parallel_map<TrainLog>(static_cast<std::size_t>(n_seeds), workers, [&](std::size_t i) {
    TrainConfig c = cfg;
    c.seed = cfg.seed + i;
    c.workers = n_seeds > 1 ? 1 : cfg.workers;
    return train(c);
  });
}

/// Qualitative checks on a diag-dynamics log.
struct DynamicsChecks {
  bool xi2_increasing = true;
  int first_xi2_violation = -1;
  bool xi1_nonnegative = true;
  int first_xi1_violation = -1;
  bool ratio_bound = true;  // xi1 <= (7/15) xi2
  int first_ratio_violation = -1;
  double max_ratio = 0.0;   // max xi1 / xi2
  LinearFit xi2_vs_log_step;  // over steps k >= 1
};

inline DynamicsChecks check_dynamics(const TrainLog& log) {
  DynamicsChecks c;
  const auto& r = log.records;
  std::vector<double> lx, y;
  for (std::size_t k = 0; k < r.size(); ++k) {
    if (k > 0 && !(r[k].xi2 > r[k - 1].xi2) && c.xi2_increasing) {
      c.xi2_increasing = false;
      c.first_xi2_violation = r[k].step;
    }
    if (!(r[k].xi1 >= 0.0) && c.xi1_nonnegative) {
      c.xi1_nonnegative = false;
      c.first_xi1_violation = r[k].step;
    }
    if (!(r[k].xi1 <= 7.0 / 15.0 * r[k].xi2) && c.ratio_bound) {
      c.ratio_bound = false;
      c.first_ratio_violation = r[k].step;
    }
    if (r[k].xi2 != 0.0) c.max_ratio = std::max(c.max_ratio, r[k].xi1 / r[k].xi2);
    if (r[k].step >= 1) {
      lx.push_back(std::log(static_cast<double>(r[k].step)));
      y.push_back(r[k].xi2);
    }
  }
  if (lx.size() >= 2) c.xi2_vs_log_step = fit_line(lx, y);
  return c;
}

/// Element-wise mean and standard deviation of one record field across runs.
struct Band {
  std::vector<double> step, mean, std;
};

template <class Field>
Band band_of(const std::vector<TrainLog>& logs, Field field) {
  Band b;
  if (logs.empty()) return b;
  const std::size_t n = logs.front().records.size();
  for (std::size_t i = 0; i < n; ++i) {
    RunningStat st;
    for (const auto& l : logs) st.add(field(l.records.at(i)));
    b.step.push_back(logs.front().records[i].step);
    b.mean.push_back(st.mean);
    b.std.push_back(std::sqrt(st.variance()));
  }
  return b;
}

}  // namespace icl1nn
