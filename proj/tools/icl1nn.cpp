// Batch driver: train, verify, landscape, shift-eval, gen-data.
//
// Exit codes: 0 ok, 1 configuration error, 2 numeric abort, 3 verification failure.

#include <CLI11.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "icl1nn/icl1nn.hpp"
#include "icl1nn/io/checkpoint.hpp"
#include "icl1nn/io/config.hpp"
#include "icl1nn/io/csv.hpp"
#include "icl1nn/io/dataset.hpp"
#include "icl1nn/io/report.hpp"
#include "icl1nn/io/svg.hpp"

namespace fs = std::filesystem;
using namespace icl1nn;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitVerify = 3;
constexpr const char* kVersion = "icl1nn 1.0.0";

struct Common {
  std::optional<std::uint64_t> seed_opt;
  std::string out;
  int workers = 0;
  long long mc = 0;  // 0: command default

  std::uint64_t seed() const { return seed_opt.value_or(0); }
};

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string out_dir(const Common& c) {
  if (!c.out.empty()) return c.out;
  if (const char* env = std::getenv("ICL1NN_OUT")) return env;
  return "out";
}

int workers_of(const Common& c) { return c.workers > 0 ? c.workers : default_workers(); }

/// Collects outputs in memory and writes them only after the command succeeded.
struct Outputs {
  std::string dir;
  std::vector<std::pair<std::string, std::string>> files;
  void add(const std::string& name, std::string text) { files.emplace_back(name, std::move(text)); }
  std::vector<std::string> commit() const {
    fs::create_directories(dir);
    std::vector<std::string> paths;
    for (const auto& [name, text] : files) {
      const std::string p = (fs::path(dir) / name).string();
      io::write_text(p, text);
      paths.push_back(p);
    }
    return paths;
  }
};

json manifest_base(const std::string& command, const std::vector<std::string>& argv, const std::string& started) {
  return {{"command", command}, {"argv", argv}, {"version", kVersion}, {"started_utc", started}};
}

void finish_manifest(json& m, Outputs& out, double wall) {
  m["finished_utc"] = utc_now();
  m["wall_time_s"] = wall;
  std::vector<std::string> listed;
  for (const auto& f : out.files) listed.push_back((fs::path(out.dir) / f.first).string());
  listed.push_back((fs::path(out.dir) / "manifest.json").string());
  m["outputs"] = listed;
  out.add("manifest.json", m.dump(2) + "\n");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- train

io::LineChart loss_chart(const std::vector<TrainLog>& logs, bool log_x) {
  io::LineChart ch;
  const TrainConfig& c = logs.front().config;
  ch.title = regime_name(c.regime) + "  N=" + std::to_string(c.N) + " d=" + std::to_string(c.d) +
             (logs.size() > 1 ? "  (mean +- 2 std, " + std::to_string(logs.size()) + " runs)" : "");
  ch.xlabel = c.regime == Regime::Sgd ? "epoch" : "step";
  if (log_x) ch.xlabel += " + 1";
  ch.ylabel = "loss";
  ch.log_x = log_x;
  auto add = [&](const std::string& name, const Band& b, const std::string& color) {
    io::Series s;
    s.name = name;
    s.color = color;
    for (std::size_t i = 0; i < b.step.size(); ++i) {
      s.x.push_back(b.step[i] + (log_x ? 1.0 : 0.0));
      s.y.push_back(b.mean[i]);
      if (logs.size() > 1) {
        s.lo.push_back(b.mean[i] - 2.0 * b.std[i]);
        s.hi.push_back(b.mean[i] + 2.0 * b.std[i]);
      }
    }
    ch.series.push_back(std::move(s));
  };
  add("train loss", band_of(logs, [](const TrainRecord& r) { return r.loss; }), "#1f77b4");
  if (c.regime == Regime::Sgd && c.sgd.test_instances > 0)
    add("test MSE vs 1-NN", band_of(logs, [](const TrainRecord& r) { return r.test_mse; }), "#d62728");
  return ch;
}

io::Checkpoint checkpoint_of(const TrainLog& log) {
  io::Checkpoint c;
  c.d = log.config.d;
  c.N = log.config.N;
  if (log.final_diag) c.model = *log.final_diag;
  else c.model = log.final_weights;
  return c;
}

int cmd_train(const Common& com, const std::string& config_path, const std::string& manifest_path, int seeds_flag,
              bool log_x, const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  io::TrainSettings st;
  if (!manifest_path.empty()) {
    const json m = json::parse(io::read_text(manifest_path), nullptr, false);
    if (m.is_discarded() || !m.contains("config")) throw ConfigError(manifest_path + ": not a train manifest");
    st.config = io::train_config_from_json(m.at("config"));
    st.seeds = m.value("seeds", 1);
  } else if (!config_path.empty()) {
    st = io::apply_train_config(io::read_config(config_path));
  } else {
    throw ConfigError("train: one of --config or --from-manifest is required");
  }
  if (com.seed_opt) st.config.seed = *com.seed_opt;
  if (com.mc > 0) st.config.mc_samples = static_cast<std::size_t>(com.mc);
  if (seeds_flag > 0) st.seeds = seeds_flag;
  const int workers = workers_of(com);
  st.config.workers = workers;
  st.config.validate();

  Outputs out{out_dir(com), {}};
  json m = manifest_base("train", argv, started);
  json cfg = io::to_json(st.config);
  cfg["workers"] = 1;  // results do not depend on it; keep the manifest reproducible
  m["config"] = cfg;
  m["seed"] = st.config.seed;
  m["seeds"] = st.seeds;
  m["workers"] = workers;

  std::vector<TrainLog> logs;
  int code = kExitOk;
  try {
    logs = train_seeds(st.config, st.seeds, workers);
  } catch (const TrainingAborted& e) {
    std::cerr << "icl1nn train: " << e.what() << "\n";
    m["abort_reason"] = e.what();
    out.add("train.csv", io::trainlog_csv(e.partial));
    finish_manifest(m, out, seconds_since(t0));
    out.commit();
    return kExitNumeric;
  }
  const TrainLog& first = logs.front();
  m["sigma"] = first.sigma;
  if (first.sigma_middle_skipped)
    m["warnings"].push_back(
        "sigma threshold: the term -log(1 - (N sqrt d)^(1/d)) is undefined for these N, d and was skipped");
  m["update_convention"] = first.update_convention;
  m["loss_scale"] = "loss = 1/2 E[(y_hat - y_1nn)^2]; test_mse = E[(y_hat - y_1nn)^2]";
  json fitted = json::object();
  if (st.config.regime == Regime::DiagDynamics) {
    const DynamicsChecks dc = check_dynamics(first);
    fitted["xi2_vs_log_step_slope"] = dc.xi2_vs_log_step.slope;
    fitted["xi2_vs_log_step_r2"] = dc.xi2_vs_log_step.r_squared;
    fitted["max_xi1_over_xi2"] = dc.max_ratio;
  }
  m["fitted"] = fitted;
  std::vector<double> walls;
  if (logs.size() == 1) {
    out.add("train.csv", io::trainlog_csv(first));
    out.add("checkpoint.csv", io::checkpoint_text(checkpoint_of(first)));
  } else {
    for (std::size_t i = 0; i < logs.size(); ++i) {
      out.add("train_seed" + std::to_string(logs[i].config.seed) + ".csv", io::trainlog_csv(logs[i]));
      out.add("checkpoint_seed" + std::to_string(logs[i].config.seed) + ".csv",
              io::checkpoint_text(checkpoint_of(logs[i])));
    }
    out.add("train_band.csv", io::band_csv(logs));
  }
  for (const auto& l : logs) walls.push_back(l.wall_time_s);
  m["run_wall_time_s"] = walls;
  out.add("loss.svg", io::render_line_chart(loss_chart(logs, log_x)));
  finish_manifest(m, out, seconds_since(t0));
  for (const auto& p : out.commit()) std::cout << p << "\n";
  return code;
}

// ---------------------------------------------------------------- verify

std::vector<VerifyRow> suite_density(std::size_t samples, std::uint64_t seed) {
  std::vector<VerifyRow> rows;
  boost::math::quadrature::tanh_sinh<double> ts;
  for (int d = 2; d <= 32; ++d) {
    const InnerProductDensity f(d);
    // Near the endpoints 1 - t^2 is formed from the endpoint distance xc.
    const double I = ts.integrate(
        [&](double t, double xc) {
          if (std::abs(t) < 0.5) return f(t);
          const double e = std::abs(xc);
          return f.k_d * std::pow(e * (2.0 - e), 0.5 * (d - 3));
        },
        -1.0, 1.0, 1e-13);
    rows.push_back({"d=" + std::to_string(d), "integral_minus_1", I - 1.0, 0.0, std::abs(I - 1.0) < 1e-9});
  }
  for (int d : {3, 8, 16}) {
    Engine rng = make_stream(seed, {stream::kVerify, 3, static_cast<std::uint64_t>(d)});
    const UnitVector e = sample_sphere(d, rng);
    std::vector<double> t(samples);
    for (auto& v : t) v = sample_sphere(d, rng).dot(e);
    const double ks = ks_statistic(t, [d](double x) { return cdf_tau(x, d); });
    rows.push_back({"d=" + std::to_string(d), "ks_statistic", ks, 0.0, ks < 0.01});
  }
  return rows;
}

std::vector<VerifyRow> suite_slice(const std::vector<int>& Ns, int d, std::size_t mc, std::uint64_t seed,
                                   int workers) {
  std::vector<VerifyRow> rows;
  for (int N : Ns)
    for (double xi2 : {0.0, 1.0, 5.0}) {
      const double exact = loss_slice_xi1_zero(N, xi2);
      const McEstimate e = mc_slice_xi1_zero(N, d, xi2, mc, seed + static_cast<std::uint64_t>(N), workers);
      rows.push_back({"N=" + std::to_string(N) + ",xi2=" + io::fmt(xi2), "mc_minus_closed_form", e.mean - exact,
                      e.std_err, within_stderr(e, exact, 4.0)});
      const double h = 1e-5;
      const double fd = 0.5 * (loss_slice_xi1_zero(N, xi2 + h) - loss_slice_xi1_zero(N, xi2 - h)) / (2 * h);
      const double an = loss_slice_derivative(N, xi2);
      rows.push_back({"N=" + std::to_string(N) + ",xi2=" + io::fmt(xi2), "derivative_fd_minus_closed_form", fd - an,
                      0.0, std::abs(fd - an) < 1e-8});
    }
  return rows;
}

std::vector<VerifyRow> suite_dynamics(int N, int d, int steps, std::size_t mc, std::uint64_t seed, int workers,
                                      double c_d_hat) {
  TrainConfig c;
  c.regime = Regime::DiagDynamics;
  c.N = N;
  c.d = d;
  c.steps = steps;
  c.mc_samples = mc;
  c.seed = seed;
  c.workers = workers;
  c.c_d_hat = c_d_hat;
  const TrainLog log = train_diag(c);
  const DynamicsChecks k = check_dynamics(log);
  const double L0 = log.records.front().loss, LK = log.records.back().loss;
  return {
      {"xi2", "first_non_increase_step", static_cast<double>(k.first_xi2_violation), 0.0, k.xi2_increasing},
      {"xi1", "first_negative_step", static_cast<double>(k.first_xi1_violation), 0.0, k.xi1_nonnegative},
      {"xi1/xi2", "max_ratio_vs_7/15", k.max_ratio, 0.0, k.ratio_bound},
      {"xi2~log k", "slope", k.xi2_vs_log_step.slope, 0.0, k.xi2_vs_log_step.slope > 0},
      {"xi2~log k", "r_squared", k.xi2_vs_log_step.r_squared, 0.0, k.xi2_vs_log_step.r_squared > 0.9},
      {"loss", "final_over_initial", LK / L0, 0.0, LK < 0.5 * L0},
  };
}

int cmd_verify(const Common& com, const std::string& suite, int N, int d, double xi1, double xi2, int pairs,
               double eps, int steps, double c_d_hat, const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  const int workers = workers_of(com);
  std::vector<VerifyRow> rows;
  json params;
  if (suite == "gradients") {
    rows = verify_gradients_fd(N, d, pairs, eps, com.seed());
    params = {{"N", N}, {"d", d}, {"pairs", pairs}, {"eps", eps}};
  } else if (suite == "sparsity") {
    const std::size_t mc = com.mc > 0 ? static_cast<std::size_t>(com.mc) : 200000;
    const AttentionWeights W = DiagonalParams{xi1, xi2}.expand(d);
    const BlockGradient g = grad_population(N, d, W, mc, com.seed(), 0, workers);
    rows = verify_sparsity(g);
    const DiagGradient dg = grad_diag(N, d, {xi1, xi2}, mc, com.seed(), 0, workers);
    const double tr = g.g11().trace() / d;
    const double se_tr = std::sqrt(g.std_err.topLeftCorner(d, d).diagonal().squaredNorm()) / d;
    rows.push_back({"dxi1-tr(W11)/d", "difference", dg.dxi1 - tr, std::hypot(dg.stderr1, se_tr),
                    std::abs(dg.dxi1 - tr) <= 4.0 * std::hypot(dg.stderr1, se_tr)});
    params = {{"N", N}, {"d", d}, {"xi1", xi1}, {"xi2", xi2}, {"mc_samples", mc}};
  } else if (suite == "density") {
    const std::size_t mc = com.mc > 0 ? static_cast<std::size_t>(com.mc) : 100000;
    rows = suite_density(mc, com.seed());
    params = {{"mc_samples", mc}};
  } else if (suite == "slice") {
    const std::size_t mc = com.mc > 0 ? static_cast<std::size_t>(com.mc) : 1000000;
    rows = suite_slice({N}, d, mc, com.seed(), workers);
    params = {{"N", N}, {"d", d}, {"mc_samples", mc}};
  } else if (suite == "dynamics") {
    const std::size_t mc = com.mc > 0 ? static_cast<std::size_t>(com.mc) : 10000;
    rows = suite_dynamics(N, d, steps, mc, com.seed(), workers, c_d_hat);
    params = {{"N", N}, {"d", d}, {"steps", steps}, {"mc_samples", mc}, {"c_d_hat", c_d_hat}};
  } else {
    throw ConfigError("unknown suite '" + suite + "' (gradients, sparsity, density, slice, dynamics)");
  }
  Outputs out{out_dir(com), {}};
  out.add("verify_" + suite + ".csv", io::verify_csv(rows));
  json m = manifest_base("verify", argv, started);
  m["suite"] = suite;
  m["params"] = params;
  m["seed"] = com.seed();
  m["all_pass"] = all_pass(rows);
  finish_manifest(m, out, seconds_since(t0));
  for (const auto& p : out.commit()) std::cout << p << "\n";
  std::size_t failed = 0;
  for (const auto& r : rows) failed += !r.pass;
  std::cout << suite << ": " << rows.size() - failed << "/" << rows.size() << " checks pass\n";
  return failed ? kExitVerify : kExitOk;
}

// ---------------------------------------------------------------- landscape

int cmd_landscape(const Common& com, int N, int d, double x0, double x1, double y0, double y1, int gx, int gy,
                  const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  if (gx < 1 || gy < 1) throw ConfigError("landscape: grid sizes must be >= 1");
  if (gx > 200 || gy > 200)
    throw ConfigError("landscape: grid " + std::to_string(gx) + "x" + std::to_string(gy) + " exceeds the 200x200 limit");
  if (!(x1 >= x0) || !(y1 >= y0)) throw ConfigError("landscape: ranges must satisfy min <= max");
  const std::size_t mc = com.mc > 0 ? static_cast<std::size_t>(com.mc) : 10000;
  const int workers = workers_of(com);
  // One prompt set (labels included) shared by every grid point.
  std::vector<PromptSet> prompts(mc);
  {
    auto blocks = run_blocks<std::vector<PromptSet>>(mc, workers, [&](BlockRange br) {
      Engine rng = make_stream(com.seed(), {stream::kLandscape, br.index});
      std::normal_distribution<double> normal;
      std::vector<PromptSet> v(br.count);
      for (auto& p : v) sample_training_prompt(p, N, d, rng, normal);
      return v;
    });
    std::size_t i = 0;
    for (auto& b : blocks)
      for (auto& p : b) prompts[i++] = std::move(p);
  }
  std::vector<int> star(mc);
  for (std::size_t i = 0; i < mc; ++i) star[i] = nearest_index(prompts[i]);
  auto axis = [](double a, double b, int n) {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = n == 1 ? a : a + (b - a) * i / (n - 1);
    return v;
  };
  const auto xs = axis(x0, x1, gx), ys = axis(y0, y1, gy);
  const auto cells = parallel_map<McEstimate>(static_cast<std::size_t>(gx * gy), workers, [&](std::size_t k) {
    const DiagonalParams dp{xs[k % gx], ys[k / gx]};
    RunningStat st;
    Eigen::VectorXd t, s;
    for (std::size_t i = 0; i < mc; ++i) {
      diag_weights(prompts[i], dp, t, s);
      const double r = s.head(N).dot(prompts[i].ys) - prompts[i].ys[star[i]];
      st.add(r * r);
    }
    return McEstimate::from(st);
  });
  std::string csv = "xi1,xi2,loss,loss_stderr\n";
  io::Heatmap h;
  h.title = "E[(y_hat - y_1nn)^2] on W = diag(xi1 I, 0, -xi2), N=" + std::to_string(N) + " d=" + std::to_string(d);
  h.xlabel = "xi1";
  h.ylabel = "xi2";
  h.x = xs;
  h.y = ys;
  h.z.assign(gy, std::vector<double>(gx));
  for (int iy = 0; iy < gy; ++iy)
    for (int ix = 0; ix < gx; ++ix) {
      const McEstimate& e = cells[static_cast<std::size_t>(iy * gx + ix)];
      h.z[iy][ix] = e.mean;
      csv += io::join({io::fmt(xs[ix]), io::fmt(ys[iy]), io::fmt(e.mean), io::fmt(e.std_err)}) + "\n";
    }
  Outputs out{out_dir(com), {}};
  out.add("landscape.csv", csv);
  out.add("landscape.svg", io::render_heatmap(h));
  json m = manifest_base("landscape", argv, started);
  m["params"] = {{"N", N}, {"d", d}, {"xi1", {x0, x1, gx}}, {"xi2", {y0, y1, gy}}, {"mc_samples", mc}};
  m["seed"] = com.seed();
  m["loss_scale"] = "E[(y_hat - y_1nn)^2] (no 1/2), Rademacher labels, one shared prompt set";
  finish_manifest(m, out, seconds_since(t0));
  for (const auto& p : out.commit()) std::cout << p << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- shift-eval / gen-data

struct GenParams {
  int N = 16, d = 8, instances = 1000, classes = 3;
  double delta = 0.1;
  std::string labels = "normal";
  std::string kind = "shifted";
};

ShiftedTestOptions shift_options(const GenParams& g) {
  ShiftedTestOptions o;
  o.delta = g.delta;
  if (g.labels == "normal") o.labels = LabelLaw::StandardNormal;
  else if (g.labels == "integer") o.labels = LabelLaw::UniformInteger;
  else throw ConfigError("--labels must be 'normal' or 'integer'");
  o.num_classes = g.classes;
  return o;
}

std::vector<ShiftInstance> generate(const GenParams& g, std::uint64_t seed) {
  if (g.instances < 1) throw ConfigError("--instances must be >= 1");
  if (g.kind == "shifted") {
    if (g.N < 2) throw ConfigError("--N must be >= 2 for shifted sets");
    if (g.d < 2) throw ConfigError("--d must be >= 2");
    return shifted_test_set(g.N, g.d, shift_options(g), g.instances, seed);
  }
  if (g.kind == "training") {
    if (g.N < 1 || g.d < 2) throw ConfigError("--N must be >= 1 and --d >= 2");
    Engine rng = make_stream(seed, {stream::kSgdData});
    std::vector<ShiftInstance> v;
    for (int i = 0; i < g.instances; ++i) v.push_back({gen_training_prompt(g.N, g.d, rng), -1});
    return v;
  }
  throw ConfigError("--kind must be 'shifted' or 'training'");
}

int cmd_gen_data(const Common& com, const GenParams& g, const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  const auto set = generate(g, com.seed());
  Outputs out{out_dir(com), {}};
  out.add("dataset.csv", io::dataset_text(set));
  json m = manifest_base("gen-data", argv, started);
  m["params"] = {{"kind", g.kind},     {"N", g.N},         {"d", g.d}, {"delta", g.delta},
                 {"labels", g.labels}, {"classes", g.classes}, {"instances", g.instances}};
  m["seed"] = com.seed();
  finish_manifest(m, out, seconds_since(t0));
  for (const auto& p : out.commit()) std::cout << p << "\n";
  return kExitOk;
}

int cmd_shift_eval(const Common& com, const std::string& ckpt_path, const std::string& dataset_path,
                   const GenParams& g, bool classify, double step, const std::string& curve_path,
                   const std::string& train_csv, const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  // Validate every input before any output is written.
  if (ckpt_path.empty()) throw ConfigError("shift-eval: --checkpoint is required");
  const io::Checkpoint ck = io::read_checkpoint(ckpt_path);
  std::vector<ShiftInstance> set;
  double delta = std::nan("");
  if (!dataset_path.empty()) {
    set = io::read_dataset(dataset_path);
  } else {
    set = generate(g, com.seed());
    delta = g.delta;
  }
  for (const auto& s : set)
    if (s.prompt.dim() != ck.d)
      throw ConfigError("shift-eval: checkpoint has d=" + std::to_string(ck.d) + " but dataset has d=" +
                        std::to_string(s.prompt.dim()));
  io::CsvTable train;
  if (!train_csv.empty()) {
    train = io::read_csv(train_csv);
    if (train.column("step") < 0 || train.column("loss") < 0)
      throw ConfigError(train_csv + ": expected 'step' and 'loss' columns");
  }
  const std::string curve = curve_path.empty() ? (fs::path(out_dir(com)) / "test_curve.csv").string() : curve_path;
  io::CsvTable previous;
  if (fs::exists(curve)) {
    previous = io::read_csv(curve);
    if (previous.header != std::vector<std::string>{"step", "mse_vs_1nn", "mse_stderr", "mismatch_rate"})
      throw ConfigError(curve + ": not a test-curve file");
  }
  ShiftReport rep;
  try {
    rep = evaluate_shift(ck.model, set, classify, delta);
  } catch (const PreconditionViolation& e) {
    throw ConfigError(std::string("shift-eval: ") + e.what());
  }

  std::string curve_text = "step,mse_vs_1nn,mse_stderr,mismatch_rate\n";
  for (const auto& r : previous.rows) curve_text += io::join(r) + "\n";
  curve_text += io::join({io::fmt(step), io::fmt(rep.mse_vs_1nn), io::fmt(rep.mse_stderr),
                          classify ? io::fmt(rep.mismatch_rate) : "nan"}) + "\n";

  io::LineChart ch;
  ch.title = "training loss and shifted-test MSE vs 1-NN";
  ch.xlabel = "step";
  ch.ylabel = "value";
  io::Series test;
  test.name = "test MSE vs 1-NN";
  test.color = "#d62728";
  for (const auto& r : previous.rows) {
    test.x.push_back(io::parse_double(r[0], "step"));
    test.y.push_back(io::parse_double(r[1], "mse_vs_1nn"));
  }
  test.x.push_back(step);
  test.y.push_back(rep.mse_vs_1nn);
  if (!train.rows.empty()) {
    io::Series tr;
    tr.name = "train loss";
    for (const auto& r : train.rows) {
      tr.x.push_back(io::parse_double(r[train.column("step")], "step"));
      tr.y.push_back(io::parse_double(r[train.column("loss")], "loss"));
    }
    ch.series.push_back(std::move(tr));
  }
  ch.series.push_back(std::move(test));

  Outputs out{out_dir(com), {}};
  json m = manifest_base("shift-eval", argv, started);
  m["checkpoint"] = ckpt_path;
  m["dataset"] = dataset_path.empty() ? json(nullptr) : json(dataset_path);
  if (dataset_path.empty())
    m["generator"] = {{"N", g.N}, {"d", g.d}, {"delta", g.delta}, {"labels", g.labels}, {"classes", g.classes},
                      {"instances", g.instances}};
  m["seed"] = com.seed();
  out.add("shift_report.json", io::to_json(rep).dump(2) + "\n");
  out.add("test_curve.svg", io::render_line_chart(ch));
  finish_manifest(m, out, seconds_since(t0));
  for (const auto& p : out.commit()) std::cout << p << "\n";
  io::write_text(curve, curve_text);
  std::cout << curve << "\n";
  std::cout << "mse_vs_1nn=" << io::fmt(rep.mse_vs_1nn) << " stderr=" << io::fmt(rep.mse_stderr);
  if (classify) std::cout << " mismatch_rate=" << io::fmt(rep.mismatch_rate);
  std::cout << "\n";
  return kExitOk;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed_opt, "master seed (integer)");
  sub->add_option("--out", c.out, "output directory (default $ICL1NN_OUT or ./out)");
  sub->add_option("--workers", c.workers, "threads (default $ICL1NN_WORKERS or 1); results do not depend on it")
      ->check(CLI::PositiveNumber);
  sub->add_option("--mc-samples", c.mc, "Monte-Carlo samples (count)")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"In-context 1-NN learner: training, verification and evaluation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Common com;
  std::string config_path, manifest_path;
  int seeds = 0;
  bool log_x = false;
  std::string key_help = "config keys (key = value, '#' comments):\n";
  for (const auto& [k, v] : io::train_config_keys()) key_help += "  " + k + ": " + v + "\n";
  auto* train = app.add_subcommand("train", "run a training regime and write its log, plot and manifest");
  train->footer(key_help);
  add_common(train, com);
  train->add_option("--config", config_path, "key = value config file");
  train->add_option("--from-manifest", manifest_path, "rerun the configuration recorded in a manifest.json");
  train->add_option("--seeds", seeds, "independent runs (overrides config)")->check(CLI::PositiveNumber);
  train->add_flag("--log-x", log_x, "logarithmic step axis in the plot");

  std::string suite;
  int N = 4, d = 4, pairs = 20, steps = 2000;
  double xi1 = 0.5, xi2 = 3.0, eps = 1e-5, c_d_hat = 1.0;
  auto* verify = app.add_subcommand("verify", "run a verification suite; exit 3 if any check fails");
  add_common(verify, com);
  verify->add_option("suite", suite, "gradients | sparsity | density | slice | dynamics")->required();
  verify->add_option("--N", N, "context length");
  verify->add_option("--d", d, "dimension");
  verify->add_option("--xi1", xi1, "diagonal point (sparsity)");
  verify->add_option("--xi2", xi2, "diagonal point (sparsity)");
  verify->add_option("--pairs", pairs, "random (prompt, W) pairs (gradients)");
  verify->add_option("--eps", eps, "finite-difference step (gradients)");
  verify->add_option("--steps", steps, "steps (dynamics)");
  verify->add_option("--c-d-hat", c_d_hat, "C_d in the sigma threshold (dynamics)");

  double lx0 = -3, lx1 = 3, ly0 = -3, ly1 = 3;
  int grid = 41, grid_x = 0, grid_y = 0;
  int lN = 4, ld = 4;
  auto* land = app.add_subcommand("landscape", "loss heatmap over (xi1, xi2)");
  add_common(land, com);
  land->add_option("--N", lN, "context length");
  land->add_option("--d", ld, "dimension");
  land->add_option("--xi1-min", lx0);
  land->add_option("--xi1-max", lx1);
  land->add_option("--xi2-min", ly0);
  land->add_option("--xi2-max", ly1);
  land->add_option("--grid", grid, "points per axis (at most 200)");
  land->add_option("--grid-x", grid_x, "points along xi1 (overrides --grid)");
  land->add_option("--grid-y", grid_y, "points along xi2 (overrides --grid)");

  GenParams gen;
  auto add_gen = [&gen](CLI::App* s) {
    s->add_option("--N", gen.N, "context length");
    s->add_option("--d", gen.d, "dimension");
    s->add_option("--delta", gen.delta, "squared-distance margin in (0, 2]");
    s->add_option("--instances", gen.instances, "number of prompts");
    s->add_option("--labels", gen.labels, "normal | integer");
    s->add_option("--classes", gen.classes, "integer labels are uniform on 1..classes");
  };
  std::string ckpt, dataset, curve, train_csv;
  bool classify = false;
  double step = 0;
  auto* shift = app.add_subcommand("shift-eval", "score a checkpoint against the 1-NN label on a shifted test set");
  add_common(shift, com);
  add_gen(shift);
  shift->add_option("--checkpoint", ckpt, "checkpoint CSV")->required();
  shift->add_option("--dataset", dataset, "dataset CSV (default: generate one)");
  shift->add_flag("--classify", classify, "also report the rounding-classifier mismatch rate");
  shift->add_option("--step", step, "x value of the appended test-curve point");
  shift->add_option("--curve", curve, "test-curve CSV to append to (default <out>/test_curve.csv)");
  shift->add_option("--train-log", train_csv, "training log CSV drawn alongside the test curve");

  auto* gd = app.add_subcommand("gen-data", "write a prompt dataset CSV");
  add_common(gd, com);
  add_gen(gd);
  gd->add_option("--kind", gen.kind, "shifted | training");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  try {
    if (*train) return cmd_train(com, config_path, manifest_path, seeds, log_x, args);
    if (*verify) return cmd_verify(com, suite, N, d, xi1, xi2, pairs, eps, steps, c_d_hat, args);
    if (*land)
      return cmd_landscape(com, lN, ld, lx0, lx1, ly0, ly1, grid_x ? grid_x : grid, grid_y ? grid_y : grid, args);
    if (*shift) return cmd_shift_eval(com, ckpt, dataset, gen, classify, step, curve, train_csv, args);
    if (*gd) return cmd_gen_data(com, gen, args);
  } catch (const ConfigError& e) {
    std::cerr << "icl1nn: configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "icl1nn: invalid argument: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericOverflow& e) {
    std::cerr << "icl1nn: numeric abort: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "icl1nn: error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
