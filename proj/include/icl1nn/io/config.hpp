#pragma once

// key = value configuration files. '#' starts a comment; keys may be dotted
// (sgd.batch_size). Errors name the file, line and key.

#include <fstream>
#include <map>
#include <set>
#include <string>

#include "icl1nn/errors.hpp"
#include "icl1nn/io/csv.hpp"
#include "icl1nn/training.hpp"

namespace icl1nn::io {

struct ConfigEntry {
  std::string value;
  int line = 0;
};

struct ConfigFile {
  std::string path;
  std::map<std::string, ConfigEntry> entries;

  std::string where(const std::string& key) const {
    auto it = entries.find(key);
    return path + ":" + (it == entries.end() ? std::string("?") : std::to_string(it->second.line)) + ": field '" +
           key + "'";
  }
};

inline ConfigFile parse_config_text(const std::string& text, const std::string& path = "<config>") {
  ConfigFile cf;
  cf.path = path;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    if (cf.entries.count(key))
      throw ConfigError(path + ":" + std::to_string(lineno) + ": duplicate key '" + key + "' (first on line " +
                        std::to_string(cf.entries[key].line) + ")");
    cf.entries[key] = {value, lineno};
  }
  return cf;
}

inline ConfigFile read_config(const std::string& path) { return parse_config_text(read_text(path), path); }

/// Keys understood by apply_train_config, with units for --help.
inline const std::map<std::string, std::string>& train_config_keys() {
  static const std::map<std::string, std::string> keys = {
      {"regime", "population-gd | diag-dynamics | sgd"},
      {"N", "context length (count)"},
      {"d", "input dimension (count)"},
      {"sigma", "initial query self-attention magnitude (dimensionless); omit to use the threshold"},
      {"c_d_hat", "constant C_d in the sigma threshold (dimensionless, default 1)"},
      {"eta", "step size (dimensionless, default 0.5)"},
      {"steps", "gradient steps (count)"},
      {"mc_samples", "Monte-Carlo prompts per step (count, default 10000)"},
      {"eval_samples", "fixed prompts for the logged loss (count, 0 = mc_samples)"},
      {"seed", "master seed (integer)"},
      {"workers", "threads (count)"},
      {"seeds", "independent runs seed, seed+1, ... (count)"},
      {"sgd.dataset_size", "training prompts (count, default 10000)"},
      {"sgd.batch_size", "prompts per step (count, default 128)"},
      {"sgd.epochs", "passes over the dataset (count, default 2000)"},
      {"sgd.lr", "learning rate (dimensionless, default 0.1)"},
      {"sgd.init_scale", "std of the Gaussian initialization per entry (default 0.02)"},
      {"sgd.test_instances", "shifted test prompts scored every epoch (count, 0 disables)"},
      {"sgd.test_delta", "squared-distance margin of the shifted test set (default 0.1)"},
  };
  return keys;
}

struct TrainSettings {
  TrainConfig config;
  int seeds = 1;
};

inline TrainSettings apply_train_config(const ConfigFile& cf, TrainSettings base = {}) {
  const auto& known = train_config_keys();
  for (const auto& [k, e] : cf.entries)
    if (!known.count(k)) throw ConfigError(cf.path + ":" + std::to_string(e.line) + ": unknown field '" + k + "'");
  auto num = [&](const std::string& k) { return parse_double(cf.entries.at(k).value, cf.where(k)); };
  auto integer = [&](const std::string& k) { return parse_int(cf.entries.at(k).value, cf.where(k)); };
  auto has = [&](const std::string& k) { return cf.entries.count(k) > 0; };
  TrainConfig& c = base.config;
  try {
    if (has("regime")) c.regime = parse_regime(cf.entries.at("regime").value);
  } catch (const ConfigError& e) {
    throw ConfigError(cf.where("regime") + ": " + e.what());
  }
  if (has("N")) c.N = static_cast<int>(integer("N"));
  if (has("d")) c.d = static_cast<int>(integer("d"));
  if (has("sigma")) c.sigma = num("sigma");
  if (has("c_d_hat")) c.c_d_hat = num("c_d_hat");
  if (has("eta")) c.eta = num("eta");
  if (has("steps")) c.steps = static_cast<int>(integer("steps"));
  if (has("mc_samples")) {
    const long long v = integer("mc_samples");
    if (v < 1) throw ConfigError(cf.where("mc_samples") + ": must be >= 1");
    c.mc_samples = static_cast<std::size_t>(v);
  }
  if (has("eval_samples")) {
    const long long v = integer("eval_samples");
    if (v < 0) throw ConfigError(cf.where("eval_samples") + ": must be >= 0");
    c.eval_samples = static_cast<std::size_t>(v);
  }
  if (has("seed")) c.seed = static_cast<std::uint64_t>(integer("seed"));
  if (has("workers")) c.workers = static_cast<int>(integer("workers"));
  if (has("seeds")) base.seeds = static_cast<int>(integer("seeds"));
  if (has("sgd.dataset_size")) c.sgd.dataset_size = static_cast<int>(integer("sgd.dataset_size"));
  if (has("sgd.batch_size")) c.sgd.batch_size = static_cast<int>(integer("sgd.batch_size"));
  if (has("sgd.epochs")) c.sgd.epochs = static_cast<int>(integer("sgd.epochs"));
  if (has("sgd.lr")) c.sgd.lr = num("sgd.lr");
  if (has("sgd.init_scale")) c.sgd.init_scale = num("sgd.init_scale");
  if (has("sgd.test_instances")) c.sgd.test_instances = static_cast<int>(integer("sgd.test_instances"));
  if (has("sgd.test_delta")) c.sgd.test_delta = num("sgd.test_delta");
  if (base.seeds < 1) throw ConfigError(cf.where("seeds") + ": must be >= 1");
  c.validate();
  return base;
}

}  // namespace icl1nn::io
