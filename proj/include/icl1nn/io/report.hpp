#pragma once

// CSV and JSON forms of training logs, verification reports and shift reports.

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "icl1nn/analysis.hpp"
#include "icl1nn/gradients.hpp"
#include "icl1nn/io/csv.hpp"
#include "icl1nn/training.hpp"

namespace icl1nn::io {

using nlohmann::json;

inline std::vector<std::string> trainlog_columns(Regime r) {
  std::vector<std::string> c{"step", "loss", "loss_stderr", "xi1", "xi2"};
  switch (r) {
    case Regime::PopulationGd:
      c.insert(c.end(), {"grad_norm", "offpattern_norm", "offpattern_envelope"});
      break;
    case Regime::DiagDynamics:
      c.insert(c.end(), {"dxi1", "dxi1_stderr", "dxi2", "dxi2_stderr", "qstar_qlast_sq"});
      break;
    case Regime::Sgd:
      c.insert(c.end(), {"test_mse", "test_mse_stderr"});
      break;
  }
  return c;
}

inline double record_field(const TrainRecord& r, const std::string& name) {
  if (name == "step") return r.step;
  if (name == "loss") return r.loss;
  if (name == "loss_stderr") return r.loss_stderr;
  if (name == "xi1") return r.xi1;
  if (name == "xi2") return r.xi2;
  if (name == "grad_norm") return r.grad_norm;
  if (name == "offpattern_norm") return r.offpattern_norm;
  if (name == "offpattern_envelope") return r.offpattern_envelope;
  if (name == "dxi1") return r.dxi1;
  if (name == "dxi1_stderr") return r.dxi1_stderr;
  if (name == "dxi2") return r.dxi2;
  if (name == "dxi2_stderr") return r.dxi2_stderr;
  if (name == "qstar_qlast_sq") return r.qstar_qlast_sq;
  if (name == "test_mse") return r.test_mse;
  if (name == "test_mse_stderr") return r.test_mse_stderr;
  throw ConfigError("unknown log column " + name);
}

/// One row per logged step; deterministic given config and seed (no timing).
inline std::string trainlog_csv(const TrainLog& log) {
  const auto cols = trainlog_columns(log.config.regime);
  std::string s = join(cols) + "\n";
  for (const auto& r : log.records) {
    std::vector<std::string> row;
    row.push_back(std::to_string(r.step));
    for (std::size_t i = 1; i < cols.size(); ++i) row.push_back(fmt(record_field(r, cols[i])));
    s += join(row) + "\n";
  }
  return s;
}

/// Mean and standard deviation across seeds of loss (and test MSE for sgd).
inline std::string band_csv(const std::vector<TrainLog>& logs) {
  const bool sgd = !logs.empty() && logs.front().config.regime == Regime::Sgd;
  const Band loss = band_of(logs, [](const TrainRecord& r) { return r.loss; });
  Band test;
  if (sgd) test = band_of(logs, [](const TrainRecord& r) { return r.test_mse; });
  std::string s = sgd ? "step,loss_mean,loss_std,test_mse_mean,test_mse_std\n" : "step,loss_mean,loss_std\n";
  for (std::size_t i = 0; i < loss.step.size(); ++i) {
    std::vector<std::string> row{std::to_string(static_cast<long long>(loss.step[i])), fmt(loss.mean[i]),
                                 fmt(loss.std[i])};
    if (sgd) {
      row.push_back(fmt(test.mean[i]));
      row.push_back(fmt(test.std[i]));
    }
    s += join(row) + "\n";
  }
  return s;
}

inline json to_json(const TrainConfig& c) {
  json j = {{"regime", regime_name(c.regime)},
            {"N", c.N},
            {"d", c.d},
            {"c_d_hat", c.c_d_hat},
            {"eta", c.eta},
            {"steps", c.steps},
            {"mc_samples", c.mc_samples},
            {"eval_samples", c.eval_samples},
            {"seed", c.seed},
            {"workers", c.workers},
            {"sgd",
             {{"dataset_size", c.sgd.dataset_size},
              {"batch_size", c.sgd.batch_size},
              {"epochs", c.sgd.epochs},
              {"lr", c.sgd.lr},
              {"init_scale", c.sgd.init_scale},
              {"test_instances", c.sgd.test_instances},
              {"test_delta", c.sgd.test_delta}}}};
  j["sigma"] = c.sigma ? json(*c.sigma) : json(nullptr);
  return j;
}

inline TrainConfig train_config_from_json(const json& j) {
  try {
    TrainConfig c;
    c.regime = parse_regime(j.at("regime").get<std::string>());
    c.N = j.at("N").get<int>();
    c.d = j.at("d").get<int>();
    if (!j.at("sigma").is_null()) c.sigma = j.at("sigma").get<double>();
    c.c_d_hat = j.at("c_d_hat").get<double>();
    c.eta = j.at("eta").get<double>();
    c.steps = j.at("steps").get<int>();
    c.mc_samples = j.at("mc_samples").get<std::size_t>();
    c.eval_samples = j.at("eval_samples").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.workers = j.at("workers").get<int>();
    const json& s = j.at("sgd");
    c.sgd.dataset_size = s.at("dataset_size").get<int>();
    c.sgd.batch_size = s.at("batch_size").get<int>();
    c.sgd.epochs = s.at("epochs").get<int>();
    c.sgd.lr = s.at("lr").get<double>();
    c.sgd.init_scale = s.at("init_scale").get<double>();
    c.sgd.test_instances = s.at("test_instances").get<int>();
    c.sgd.test_delta = s.at("test_delta").get<double>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("manifest config: ") + e.what());
  }
}

inline std::string verify_csv(const std::vector<VerifyRow>& rows) {
  std::string s = "block,statistic,estimate,stderr,verdict\n";
  for (const auto& r : rows)
    s += join({r.block, r.statistic, fmt(r.estimate), fmt(r.std_err), r.pass ? "pass" : "fail"}) + "\n";
  return s;
}

inline json num_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline json to_json(const ShiftReport& r) {
  json j = {{"n_instances", r.n_instances},
            {"mse_vs_1nn", r.mse_vs_1nn},
            {"mse_stderr", r.mse_stderr},
            {"classified", r.classified},
            {"mismatch_count", r.mismatch_count},
            {"mismatch_rate", r.mismatch_rate},
            {"R_observed", r.R_observed},
            {"delta_used", num_or_null(r.delta_used)},
            {"min_margin_all", num_or_null(r.min_margin_all)},
            {"min_margin_label_mismatch", num_or_null(r.min_margin_label)},
            {"max_abs_deviation", r.max_abs_deviation}};
  if (std::isfinite(r.bound_half_delta)) {
    j["deviation_bounds"] = {
        {"half_delta", r.bound_half_delta},
        {"half_delta_note", "2 R N exp(-xi1 delta/2) + R exp(xi1 - xi2); delta is a squared-distance margin"},
        {"full_delta", r.bound_full_delta},
        {"full_delta_note", "2 R N exp(-xi1 delta) + R exp(xi1 - xi2); delta read as an inner-product gap"},
        {"half_delta_holds", r.half_delta_holds},
        {"refined_holds", r.refined_holds},
        {"max_refined_bound", r.max_refined_bound}};
  }
  return j;
}

}  // namespace icl1nn::io
