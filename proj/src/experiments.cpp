#include "odegan/experiments.hpp"

#include "odegan/analysis.hpp"
#include "odegan/games.hpp"
#include "odegan/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <limits>
#include <sstream>

namespace odegan {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

std::string now_utc() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path.string());
  out << body;
}

std::string cell(double x) { return format_double(x); }
std::string cell(const std::optional<double>& x) { return x ? format_double(*x) : ""; }

// A run directory must exist and be writable before the experiment starts.
void prepare_dir(const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + out_dir.string());
}

StepperKind stepper_kind_from(const std::string& name) {
  if (name == "euler") return StepperKind::Euler;
  if (name == "heun") return StepperKind::Heun;
  if (name == "rk4") return StepperKind::RK4;
  if (name == "embedded23") return StepperKind::Embedded23;
  if (name == "extragradient") return StepperKind::ExtraGradient;
  if (name == "consensus") return StepperKind::ConsensusLike;
  if (name == "sga") return StepperKind::SgaLike;
  if (name == "adaptive") return StepperKind::AdaptiveMomentBaseline;
  throw ConfigError("unknown stepper '" + name +
                    "' (expected euler|heun|rk4|embedded23|extragradient|consensus|sga|"
                    "adaptive)");
}

std::vector<std::pair<long, double>> parse_schedule(const std::string& raw) {
  std::vector<std::pair<long, double>> schedule;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("trainer.schedule entries must look like start:step, got '" + item +
                        "'");
    }
    try {
      schedule.emplace_back(std::stol(item.substr(0, colon)),
                            std::stod(item.substr(colon + 1)));
    } catch (const std::exception&) {
      throw ConfigError("trainer.schedule: cannot parse '" + item + "'");
    }
  }
  if (schedule.empty()) throw ConfigError("trainer.schedule: empty schedule");
  return schedule;
}

struct TrainerDefaults {
  std::string stepper = "rk4";
  double h = 0.03;
  double lambda = 0.0;
  long iterations = 1;
  int batch = 512;
  long log_every = 10;
  bool track_embedded = false;
};

TrainerConfig trainer_from(const KeyValueConfig& cfg, const TrainerDefaults& d,
                           std::uint64_t seed) {
  TrainerConfig t;
  t.stepper.kind = stepper_kind_from(cfg.get_string("trainer.stepper", d.stepper));
  const std::string schedule = cfg.get_string("trainer.schedule", "");
  const double h = cfg.get_double("trainer.h", d.h);
  t.step_schedule = schedule.empty() ? std::vector<std::pair<long, double>>{{0, h}}
                                     : parse_schedule(schedule);
  t.lambda = cfg.get_double("trainer.lambda", d.lambda);
  t.max_iterations = cfg.get_long("trainer.iterations", d.iterations);
  t.batch_size = static_cast<int>(cfg.get_long("trainer.batch", d.batch));
  t.seed = seed;
  t.log_every = cfg.get_long("trainer.log_every", d.log_every);
  t.track_embedded_error = cfg.get_bool("trainer.track_embedded", d.track_embedded);
  t.alpha = cfg.get_double("trainer.alpha", 1.0);
  t.beta = cfg.get_double("trainer.beta", 1.0);
  if (t.stepper.kind == StepperKind::ConsensusLike) {
    t.stepper.a = cfg.get_double("trainer.consensus_a", 1.0);
    t.stepper.b = cfg.get_double("trainer.consensus_b", 1.0);
  }
  if (t.stepper.kind == StepperKind::ConsensusLike || t.stepper.kind == StepperKind::SgaLike) {
    t.stepper.gamma = cfg.get_double("trainer.gamma", 0.0);
  }
  if (t.stepper.kind == StepperKind::AdaptiveMomentBaseline) {
    t.stepper.beta1 = cfg.get_double("trainer.beta1", 0.9);
    t.stepper.beta2 = cfg.get_double("trainer.beta2", 0.999);
    t.stepper.eps_num = cfg.get_double("trainer.eps", 1e-8);
  }
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid trainer configuration: ") + e.what());
  }
  return t;
}

std::vector<int> parse_hidden(const std::string& raw) {
  std::vector<int> hidden;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      hidden.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("gan.hidden: cannot parse '" + item + "'");
    }
  }
  return hidden;
}

Activation activation_from(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "leaky_relu") return Activation::LeakyRelu;
  throw ConfigError("unknown gan.activation '" + name + "' (expected relu|leaky_relu)");
}

struct GanDefaults {
  int latent = 32;
  std::string hidden = "25,25";
  double sigma = 0.05;
};

GanGame build_gan(const KeyValueConfig& cfg, std::uint64_t seed, int batch, double alpha,
                  double beta, const GanDefaults& d) {
  const double sigma = cfg.get_double("mog.sigma", d.sigma);
  const int latent = static_cast<int>(cfg.get_long("gan.latent", d.latent));
  const std::vector<int> hidden = parse_hidden(cfg.get_string("gan.hidden", d.hidden));
  const Activation act = activation_from(cfg.get_string("gan.activation", "relu"));
  const double slope = cfg.get_double("gan.leaky_slope", 0.2);
  const std::uint64_t disc_seed = cfg.get_u64("gan.disc_seed", Rng::mix(seed, 1));
  const std::uint64_t gen_seed = cfg.get_u64("gan.gen_seed", Rng::mix(seed, 2));
  const MLPSpec disc{2, hidden, 1, act, slope, disc_seed};
  const MLPSpec gen{latent, hidden, 2, act, slope, gen_seed};
  try {
    return GanGame(disc, gen, MoGSpec::grid16(sigma), latent, batch, alpha, beta);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid game configuration: ") + e.what());
  }
}

std::string trajectory_csv(const std::vector<TrajectoryRecord>& records) {
  std::string body = "# schema odegan-trajectory-1\n";
  body += "iter,l_d,l_g,grad_norm_d,grad_norm_g,gap_d,gap_g,embedded_err,coverage\n";
  for (const auto& r : records) {
    body += std::to_string(r.iteration) + "," + cell(r.l_d) + "," + cell(r.l_g) + "," +
            cell(r.grad_norm_d) + "," + cell(r.grad_norm_g) + "," + cell(r.gap_d) + "," +
            cell(r.gap_g) + "," + cell(r.embedded_err) + "," + cell(r.coverage) + "\n";
  }
  return body;
}

void note_abort(RunSummary& summary, const TrajectoryLog& log) {
  if (log.status == RunStatus::AbortedNonFinite) {
    summary.status = "aborted";
    summary.abort_reason = log.abort_reason;
    summary.abort_iteration = log.abort_iteration;
  }
}

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (double x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

double median_of(std::vector<double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(xs.begin(), xs.end());
  const size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// Least-squares slope of log(err) against log(h).
double fit_loglog_slope(const std::vector<double>& hs, const std::vector<double>& errs) {
  const size_t n = hs.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    const double x = std::log(hs[i]);
    const double y = std::log(errs[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

void finalize(RunSummary& summary, const std::filesystem::path& out_dir,
              const KeyValueConfig& cfg,
              const std::chrono::steady_clock::time_point& t0) {
  summary.config = cfg.echo();
  summary.wall_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text_file(out_dir / (summary.kind + "_summary.json"),
                  summary.to_json().dump(2) + "\n");
}

}  // namespace

Threshold make_threshold(const std::string& name, double value, std::optional<double> lo,
                         std::optional<double> hi) {
  Threshold t{name, value, lo, hi, false};
  t.pass = std::isfinite(value) && (!lo || value >= *lo) && (!hi || value <= *hi);
  return t;
}

bool RunSummary::thresholds_pass() const {
  return std::all_of(thresholds.begin(), thresholds.end(),
                     [](const Threshold& t) { return t.pass; });
}

int RunSummary::exit_code() const {
  if (status == "aborted") return 3;
  return thresholds_pass() ? 0 : 2;
}

json RunSummary::to_json() const {
  json j;
  j["kind"] = kind;
  j["status"] = status;
  if (status == "aborted") {
    j["abort_reason"] = abort_reason;
    j["abort_iteration"] = abort_iteration;
  }
  j["config"] = config;
  j["metrics"] = metrics;
  j["thresholds"] = json::array();
  for (const auto& t : thresholds) {
    json jt{{"name", t.name}, {"value", t.value}, {"pass", t.pass}};
    if (t.lo) jt["lo"] = *t.lo;
    if (t.hi) jt["hi"] = *t.hi;
    j["thresholds"].push_back(jt);
  }
  j["files"] = files;
  j["started_utc"] = started_utc;
  j["wall_s"] = wall_s;
  j["exit_code"] = exit_code();
  return j;
}

// ---------------------------------------------------------------------------
RunSummary run_toy(KeyValueConfig& cfg, const std::filesystem::path& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  RunSummary summary;
  summary.kind = "toy";
  summary.started_utc = now_utc();
  prepare_dir(out_dir);

  cfg.get_u64("seed", 1);  // toy runs are deterministic and seed-independent
  const double eps = cfg.get_double("toy.epsilon", 0.1);
  const double theta0 = cfg.get_double("toy.theta0", 1.0);
  const double phi0 = cfg.get_double("toy.phi0", 1.0);
  const bool analytic = cfg.get_bool("toy.analytic", true);
  const std::vector<std::string> stepper_names =
      cfg.get_string_list("toy.steppers", {"euler", "heun"});
  TrainerDefaults defaults;
  defaults.stepper = "euler";
  defaults.h = 0.2;
  defaults.iterations = 200;
  defaults.log_every = 1;
  TrainerConfig tcfg = trainer_from(cfg, defaults, 1);
  cfg.require_all_consumed();
  if (eps < 0.0) throw ConfigError("toy.epsilon must be >= 0");
  if (analytic && eps >= 2.0) {
    throw ConfigError("toy.epsilon must lie in [0, 2) when analytic comparison is on");
  }
  ToyGame game(eps);

  const bool reference_setup = eps == 0.1 && theta0 == 1.0 && phi0 == 1.0 &&
                               tcfg.lambda == 0.0 && tcfg.max_iterations == 200 &&
                               tcfg.step_schedule.size() == 1 &&
                               tcfg.step_schedule[0].second == 0.2;

  json per_stepper = json::object();
  for (const std::string& name : stepper_names) {
    TrainerConfig run_cfg = tcfg;
    run_cfg.stepper.kind = stepper_kind_from(name);

    GameState state = ToyGame::make_state(theta0, phi0);
    const double r0 = state.concat().norm();
    double t = 0.0;
    std::string body = "# schema odegan-toy-trajectory-1\n";
    body += "t,theta,phi,state_norm,analytic_theta,analytic_phi,abs_error\n";
    auto row = [&](double tt, const GameState& s) {
      std::string line = cell(tt) + "," + cell(s.theta(0)) + "," + cell(s.phi(0)) + "," +
                         cell(s.concat().norm());
      if (analytic) {
        const auto [ath, aph] = toy_analytic_solution(eps, {theta0, phi0}, tt);
        const double err = std::hypot(s.theta(0) - ath, s.phi(0) - aph);
        line += "," + cell(ath) + "," + cell(aph) + "," + cell(err);
      } else {
        line += ",,,";
      }
      body += line + "\n";
    };
    row(0.0, state);

    MomentState moments = MomentState::zero(2);
    bool aborted = false;
    for (long it = 0; it < run_cfg.max_iterations; ++it) {
      try {
        state = train_step(game, state, run_cfg, it, &moments).state;
      } catch (const ad::NonFiniteError& e) {
        summary.status = "aborted";
        summary.abort_reason = e.what();
        summary.abort_iteration = it;
        aborted = true;
        break;
      }
      t += run_cfg.step_size_at(it);
      row(t, state);
    }

    const std::string file = "toy_" + name + ".csv";
    write_text_file(out_dir / file, body);
    summary.files.push_back(file);

    const double ratio = state.concat().norm() / r0;
    per_stepper[name] = {{"growth_ratio", ratio}, {"aborted", aborted}};
    if (reference_setup && !aborted) {
      if (name == "euler") {
        summary.thresholds.push_back(
            make_threshold("euler_growth_ratio", ratio, 3.0, std::nullopt));
      } else if (name == "heun") {
        summary.thresholds.push_back(
            make_threshold("heun_growth_ratio", ratio, std::nullopt, 0.3));
      }
    }
  }
  summary.metrics["steppers"] = per_stepper;
  summary.metrics["epsilon"] = eps;

  write_text_file(out_dir / "toy_plot_hints.txt",
                  "toy_<stepper>.csv: x=t, y=theta and y=phi (trajectories); x=t, "
                  "y=state_norm (growth/decay); x=t, y=abs_error (vs analytic)\n");
  summary.files.push_back("toy_plot_hints.txt");
  finalize(summary, out_dir, cfg, t0);
  return summary;
}

// ---------------------------------------------------------------------------
RunSummary run_order_test(KeyValueConfig& cfg, const std::filesystem::path& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  RunSummary summary;
  summary.kind = "order-test";
  summary.started_utc = now_utc();
  prepare_dir(out_dir);

  cfg.get_u64("seed", 1);
  const double eps = cfg.get_double("toy.epsilon", 0.1);
  const double theta0 = cfg.get_double("toy.theta0", 1.0);
  const double phi0 = cfg.get_double("toy.phi0", 0.0);
  const double horizon = cfg.get_double("order.horizon", 4.0);
  cfg.require_all_consumed();
  if (!(eps >= 0.0 && eps < 2.0)) {
    throw ConfigError("toy.epsilon must lie in [0, 2) for the analytic reference");
  }

  ToyGame game(eps);
  auto field = [&](const GameState& s) { return game.velocity(s); };
  const std::vector<double> hs = {0.2, 0.1, 0.05, 0.025};
  const std::vector<std::pair<std::string, StepperKind>> steppers = {
      {"euler", StepperKind::Euler},
      {"heun", StepperKind::Heun},
      {"rk4", StepperKind::RK4},
  };

  std::map<std::string, std::vector<double>> errors;
  for (const auto& [name, kind] : steppers) {
    StepperSpec spec;
    spec.kind = kind;
    for (double h : hs) {
      const long steps = std::lround(horizon / h);
      GameState state = ToyGame::make_state(theta0, phi0);
      for (long i = 0; i < steps; ++i) state = step(spec, field, state, h).next;
      const double tf = h * static_cast<double>(steps);
      const auto [ath, aph] = toy_analytic_solution(eps, {theta0, phi0}, tf);
      errors[name].push_back(std::hypot(state.theta(0) - ath, state.phi(0) - aph));
    }
  }

  std::string body = "# schema odegan-order-errors-1\n";
  body += "h,euler,heun,rk4\n";
  for (size_t i = 0; i < hs.size(); ++i) {
    body += cell(hs[i]) + "," + cell(errors["euler"][i]) + "," + cell(errors["heun"][i]) +
            "," + cell(errors["rk4"][i]) + "\n";
  }
  write_text_file(out_dir / "order_errors.csv", body);
  summary.files.push_back("order_errors.csv");

  const std::map<std::string, std::pair<double, double>> bands = {
      {"euler", {0.8, 1.2}}, {"heun", {1.7, 2.3}}, {"rk4", {3.5, 4.5}}};
  for (const auto& [name, band] : bands) {
    const double slope = fit_loglog_slope(hs, errors[name]);
    summary.metrics[name + "_slope"] = slope;
    summary.thresholds.push_back(
        make_threshold(name + "_slope", slope, band.first, band.second));
    summary.thresholds.push_back(make_threshold(name + "_error_monotone",
                                                errors[name].back() / errors[name].front(),
                                                std::nullopt, 1.0));
  }

  write_text_file(out_dir / "order-test_plot_hints.txt",
                  "order_errors.csv: x=h, y=<stepper> on log-log axes; slope = order of "
                  "accuracy\n");
  summary.files.push_back("order-test_plot_hints.txt");
  finalize(summary, out_dir, cfg, t0);
  return summary;
}

// ---------------------------------------------------------------------------
RunSummary run_mog(KeyValueConfig& cfg, const std::filesystem::path& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  RunSummary summary;
  summary.kind = "mog";
  summary.started_utc = now_utc();
  prepare_dir(out_dir);

  const std::uint64_t seed = cfg.get_u64("seed", 1);
  TrainerDefaults defaults;
  defaults.stepper = "rk4";
  defaults.h = 0.03;
  defaults.lambda = 0.07;
  defaults.iterations = 18000;
  defaults.batch = 512;
  defaults.log_every = 10;
  TrainerConfig tcfg = trainer_from(cfg, defaults, seed);
  const GanGame game = build_gan(cfg, seed, tcfg.batch_size, tcfg.alpha, tcfg.beta, {});
  const long window = cfg.get_long("mog.window", 1000);
  const long cross_window = cfg.get_long("mog.cross_window", 25);
  const long dump_n = cfg.get_long("mog.dump_samples", 10000);
  cfg.require_all_consumed();
  if (window < 1 || cross_window < 1 || dump_n < 1) {
    throw ConfigError("mog.window, mog.cross_window and mog.dump_samples must be >= 1");
  }

  const TrajectoryLog log = train(game, tcfg);
  note_abort(summary, log);

  write_text_file(out_dir / "mog_trajectory.csv", trajectory_csv(log.records));
  summary.files.push_back("mog_trajectory.csv");

  // Final-state generator dump for density inspection, on its own stream.
  Rng dump_rng(Rng::mix(seed, 9001));
  MatrixXd z(dump_n, game.latent_dim());
  for (long i = 0; i < dump_n; ++i) {
    for (int j = 0; j < game.latent_dim(); ++j) z(i, j) = dump_rng.normal();
  }
  const MatrixXd samples = game.generate(log.final_state, z);
  std::string dump = "# schema odegan-samples-1\n";
  dump += "x0,x1\n";
  for (long i = 0; i < dump_n; ++i) {
    dump += cell(samples(i, 0)) + "," + cell(samples(i, 1)) + "\n";
  }
  write_text_file(out_dir / "mog_samples.csv", dump);
  summary.files.push_back("mog_samples.csv");

  const double dump_coverage = mode_coverage(samples, game.data());
  summary.metrics["dump_coverage"] = dump_coverage;
  summary.metrics["logged_records"] = log.records.size();

  if (!log.records.empty()) {
    const long w = std::min<long>(window, static_cast<long>(log.records.size()));
    std::vector<double> gd, gg;
    for (size_t i = log.records.size() - w; i < log.records.size(); ++i) {
      gd.push_back(log.records[i].gap_d);
      gg.push_back(log.records[i].gap_g);
    }
    const double mean_gap_d = mean_of(gd);
    const double mean_gap_g = mean_of(gg);
    summary.metrics["window_records"] = w;
    summary.metrics["window_mean_gap_d"] = mean_gap_d;
    summary.metrics["window_mean_gap_g"] = mean_gap_g;
    if (log.records.back().coverage) {
      summary.metrics["final_record_coverage"] = *log.records.back().coverage;
    }

    // Trailing-mean first crossing of both nash gaps under 0.15.
    long first_cross = -1;
    double sum_d = 0.0, sum_g = 0.0;
    for (size_t i = 0; i < log.records.size(); ++i) {
      sum_d += log.records[i].gap_d;
      sum_g += log.records[i].gap_g;
      if (static_cast<long>(i) >= cross_window) {
        sum_d -= log.records[i - cross_window].gap_d;
        sum_g -= log.records[i - cross_window].gap_g;
      }
      const double n = std::min<double>(cross_window, static_cast<double>(i) + 1.0);
      if (sum_d / n < 0.15 && sum_g / n < 0.15 && static_cast<long>(i) >= cross_window - 1) {
        first_cross = log.records[i].iteration;
        break;
      }
    }
    summary.metrics["first_cross_iteration"] = first_cross;

    // Gradient-norm stability after the warm-up phase.
    std::vector<double> late;
    for (const auto& r : log.records) {
      if (r.iteration >= 1000) late.push_back(r.grad_norm_g);
    }
    if (!late.empty()) {
      const double med = median_of(late);
      const double peak = *std::max_element(late.begin(), late.end());
      const double ratio = med > 0.0 ? peak / med : std::numeric_limits<double>::infinity();
      summary.metrics["grad_norm_g_median_after_1000"] = med;
      summary.metrics["grad_norm_g_peak_after_1000"] = peak;
      summary.metrics["grad_norm_g_peak_to_median"] = ratio;
      if (summary.status == "completed") {
        summary.thresholds.push_back(
            make_threshold("grad_norm_g_peak_to_median", ratio, std::nullopt, 10.0));
      }
    }

    if (summary.status == "completed") {
      summary.thresholds.push_back(
          make_threshold("window_mean_gap_d", mean_gap_d, std::nullopt, 0.15));
      summary.thresholds.push_back(
          make_threshold("window_mean_gap_g", mean_gap_g, std::nullopt, 0.15));
      summary.thresholds.push_back(
          make_threshold("dump_coverage", dump_coverage, 14.0 / 16.0, std::nullopt));
    }
  }

  write_text_file(out_dir / "mog_plot_hints.txt",
                  "mog_trajectory.csv: x=iter, y=l_d and y=l_g (losses, targets log4 and "
                  "log2); x=iter, y=gap_d and y=gap_g; x=iter, y=grad_norm_g; x=iter, "
                  "y=coverage; x=iter, y=embedded_err (when tracked)\n"
                  "mog_samples.csv: scatter x0 vs x1 against the 4x4 mode grid\n");
  summary.files.push_back("mog_plot_hints.txt");
  finalize(summary, out_dir, cfg, t0);
  return summary;
}

// ---------------------------------------------------------------------------
RunSummary run_reg_sweep(KeyValueConfig& cfg, const std::filesystem::path& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  RunSummary summary;
  summary.kind = "reg-sweep";
  summary.started_utc = now_utc();
  prepare_dir(out_dir);

  const std::uint64_t seed = cfg.get_u64("seed", 1);
  const std::vector<double> lambdas = cfg.get_double_list("reg.lambdas", {0.0, 0.01, 0.07});
  const long window_start = cfg.get_long("reg.window_start", 100);
  TrainerDefaults defaults;
  defaults.stepper = "rk4";
  defaults.h = 0.03;
  defaults.iterations = 2500;
  defaults.batch = 256;
  defaults.log_every = 10;
  defaults.track_embedded = true;
  TrainerConfig tcfg = trainer_from(cfg, defaults, seed);
  GanDefaults gan_defaults;
  const GanGame game = build_gan(cfg, seed, tcfg.batch_size, tcfg.alpha, tcfg.beta,
                                 gan_defaults);
  cfg.require_all_consumed();
  if (lambdas.size() < 2) throw ConfigError("reg.lambdas needs at least 2 values");
  if (!tcfg.track_embedded_error) {
    throw ConfigError("reg-sweep requires trainer.track_embedded = true");
  }

  std::vector<TrajectoryLog> logs;
  for (size_t i = 0; i < lambdas.size(); ++i) {
    TrainerConfig run_cfg = tcfg;
    run_cfg.lambda = lambdas[i];
    logs.push_back(train(game, run_cfg));
    const std::string file = "reg_trajectory_" + std::to_string(i) + ".csv";
    write_text_file(out_dir / file, trajectory_csv(logs.back().records));
    summary.files.push_back(file);
    if (logs.back().status == RunStatus::AbortedNonFinite) note_abort(summary, logs.back());
  }

  // Matched window: logged iterations shared by every run.
  long window_end = std::numeric_limits<long>::max();
  for (const auto& log : logs) {
    window_end = std::min(window_end,
                          log.records.empty() ? -1 : log.records.back().iteration);
  }
  summary.metrics["window_start"] = window_start;
  summary.metrics["window_end"] = window_end;

  std::vector<double> mean_errs, mean_grads;
  json rows = json::array();
  std::string body = "# schema odegan-regsweep-1\n";
  body += "lambda,mean_embedded_err,mean_grad_norm_g\n";
  for (size_t i = 0; i < lambdas.size(); ++i) {
    std::vector<double> errs, grads;
    for (const auto& r : logs[i].records) {
      if (r.iteration < window_start || r.iteration > window_end) continue;
      if (r.embedded_err) errs.push_back(*r.embedded_err);
      grads.push_back(r.grad_norm_g);
    }
    const double mean_err = mean_of(errs);
    const double mean_grad = mean_of(grads);
    mean_errs.push_back(mean_err);
    mean_grads.push_back(mean_grad);
    body += cell(lambdas[i]) + "," + cell(mean_err) + "," + cell(mean_grad) + "\n";
    rows.push_back({{"lambda", lambdas[i]},
                    {"mean_embedded_err", mean_err},
                    {"mean_grad_norm_g", mean_grad},
                    {"aborted", logs[i].status == RunStatus::AbortedNonFinite}});
  }
  write_text_file(out_dir / "reg_sweep.csv", body);
  summary.files.push_back("reg_sweep.csv");
  summary.metrics["sweep"] = rows;

  if (summary.status == "completed") {
    double max_increase = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i + 1 < mean_errs.size(); ++i) {
      max_increase = std::max(max_increase, mean_errs[i + 1] - mean_errs[i]);
    }
    summary.thresholds.push_back(
        make_threshold("embedded_err_max_increase", max_increase, std::nullopt, 0.0));
  }

  write_text_file(out_dir / "reg-sweep_plot_hints.txt",
                  "reg_sweep.csv: x=lambda, y=mean_embedded_err (expected nonincreasing); "
                  "x=lambda, y=mean_grad_norm_g\n"
                  "reg_trajectory_<i>.csv: x=iter, y=embedded_err per lambda\n");
  summary.files.push_back("reg-sweep_plot_hints.txt");
  finalize(summary, out_dir, cfg, t0);
  return summary;
}

// ---------------------------------------------------------------------------
RunSummary run_eigen_check(KeyValueConfig& cfg, const std::filesystem::path& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  RunSummary summary;
  summary.kind = "eigen-check";
  summary.started_utc = now_utc();
  prepare_dir(out_dir);

  const std::uint64_t seed = cfg.get_u64("seed", 1);
  const long trials = cfg.get_long("eigen.trials", 100);
  const long states = cfg.get_long("eigen.states", 20);
  const int batch = static_cast<int>(cfg.get_long("eigen.batch", 64));
  GanDefaults gan_defaults;
  gan_defaults.latent = 4;
  gan_defaults.hidden = "8,8";
  const GanGame game = build_gan(cfg, seed, batch, 1.0, 1.0, gan_defaults);
  cfg.require_all_consumed();
  if (trials < 1 || states < 1) {
    throw ConfigError("eigen.trials and eigen.states must be >= 1");
  }

  // Randomized instances of the block game matrix with A > 0, C >= 0,
  // B full rank.
  Rng rng(Rng::mix(seed, 101));
  long converged = 0;
  std::string body = "# schema odegan-eigen-trials-1\n";
  body += "trial,n,m,min_real_part,verdict\n";
  for (long trial = 0; trial < trials; ++trial) {
    const int n = 2 + static_cast<int>(rng.index(5));
    const int m = 2 + static_cast<int>(rng.index(5));
    MatrixXd g(n, n), k(m, m), b(m, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) g(i, j) = rng.normal();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) k(i, j) = rng.normal();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) b(i, j) = rng.normal();
    LinearGameBlocks blocks{g * g.transpose() + 0.1 * MatrixXd::Identity(n, n), b,
                            k * k.transpose()};
    const NashCheckReport report = check_differential_nash(blocks);
    const bool ok =
        report.verdict == NashVerdict::ConvergesLocally && report.min_real_part > 0.0;
    if (ok) ++converged;
    body += std::to_string(trial) + "," + std::to_string(n) + "," + std::to_string(m) + "," +
            cell(report.min_real_part) + "," + std::string(to_string(report.verdict)) + "\n";
  }
  write_text_file(out_dir / "eigen_trials.csv", body);
  summary.files.push_back("eigen_trials.csv");
  summary.metrics["trials"] = trials;
  summary.metrics["trials_converged"] = converged;
  summary.thresholds.push_back(make_threshold(
      "trials_converged", static_cast<double>(converged), static_cast<double>(trials),
      std::nullopt));

  // Toy spectrum against the closed-form pair.
  const ToyGame toy(0.1);
  const EigenSpectrum spectrum = eigen_spectrum(jacobian_at(toy, ToyGame::make_state(0, 0)));
  const std::complex<double> target(0.05, 0.99874921777190895);
  double dev = std::numeric_limits<double>::infinity();
  for (const auto& v : spectrum.values) {
    dev = std::min(dev, std::min(std::abs(v - target), std::abs(v - std::conj(target))));
  }
  double worst = 0.0;
  for (const auto& v : spectrum.values) {
    worst = std::max(worst, std::min(std::abs(v - target), std::abs(v - std::conj(target))));
  }
  summary.metrics["toy_spectrum_max_dev"] = worst;
  summary.thresholds.push_back(make_threshold("toy_spectrum_max_dev", worst, std::nullopt,
                                              1e-9));

  // A purely bilinear game only rotates: NonHyperbolic.
  LinearGameBlocks bilinear{MatrixXd::Zero(2, 2), MatrixXd::Identity(2, 2),
                            MatrixXd::Zero(2, 2)};
  const NashCheckReport bl = check_differential_nash(bilinear);
  summary.metrics["bilinear_verdict"] = to_string(bl.verdict);
  summary.thresholds.push_back(make_threshold(
      "bilinear_nonhyperbolic", bl.verdict == NashVerdict::NonHyperbolic ? 1.0 : 0.0, 1.0,
      std::nullopt));

  // Off-diagonal structure: exact opposition for the zero-sum toy game,
  // measured deviation (informational) for the non-zero-sum GAN.
  const OffdiagReport toy_off =
      offdiag_opposites_check(jacobian_at(toy, ToyGame::make_state(0.3, -0.2)), 1, 1);
  summary.metrics["toy_offdiag_deviation"] = toy_off.max_deviation;
  summary.thresholds.push_back(make_threshold("toy_offdiag_opposite",
                                              toy_off.opposite ? 1.0 : 0.0, 1.0,
                                              std::nullopt));

  Rng state_rng(Rng::mix(seed, 202));
  GameState s0 = game.initial_state();
  const GanBatch probe_batch = game.draw_batch(state_rng);
  const OffdiagReport gan_off = offdiag_opposites_check(
      game.dynamics_jacobian(s0, probe_batch), game.theta_dim(), game.phi_dim());
  summary.metrics["gan_offdiag_deviation"] = gan_off.max_deviation;

  // Discriminator-Hessian PSD probe at random states (reported, not gated).
  double min_eig = std::numeric_limits<double>::infinity();
  long psd_count = 0;
  for (long i = 0; i < states; ++i) {
    GameState s = s0;
    for (Eigen::Index j = 0; j < s.theta.size(); ++j) s.theta(j) = 0.5 * state_rng.normal();
    for (Eigen::Index j = 0; j < s.phi.size(); ++j) s.phi(j) = 0.5 * state_rng.normal();
    const GanBatch batch_i = game.draw_batch(state_rng);
    const PsdCheckReport psd = discriminator_hessian_psd_check(game, s, batch_i);
    if (psd.status == PsdCheckStatus::Checked) {
      min_eig = std::min(min_eig, psd.min_eigenvalue);
      if (psd.psd) ++psd_count;
    }
  }
  summary.metrics["disc_hessian_min_eigenvalue"] = min_eig;
  summary.metrics["disc_hessian_psd_states"] = psd_count;
  summary.metrics["disc_hessian_states"] = states;

  write_text_file(out_dir / "eigen-check_plot_hints.txt",
                  "eigen_trials.csv: histogram of min_real_part (all mass should sit right "
                  "of zero)\n");
  summary.files.push_back("eigen-check_plot_hints.txt");
  finalize(summary, out_dir, cfg, t0);
  return summary;
}

// ---------------------------------------------------------------------------
namespace {

MatrixXd matrix_from_json(const json& j, const std::string& name) {
  if (!j.is_array() || j.empty()) {
    throw ConfigError("linear-probe: block '" + name + "' must be a non-empty 2D array");
  }
  const size_t rows = j.size();
  const size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) {
    throw ConfigError("linear-probe: block '" + name + "' must be a non-empty 2D array");
  }
  MatrixXd m(rows, cols);
  for (size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols) {
      throw ConfigError("linear-probe: block '" + name + "' has ragged rows");
    }
    for (size_t c = 0; c < cols; ++c) {
      if (!j[i][c].is_number()) {
        throw ConfigError("linear-probe: block '" + name + "' has a non-numeric entry");
      }
      m(i, c) = j[i][c].get<double>();
    }
  }
  return m;
}

}  // namespace

RunSummary run_linear_probe(KeyValueConfig& cfg, const std::filesystem::path& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  RunSummary summary;
  summary.kind = "linear-probe";
  summary.started_utc = now_utc();
  prepare_dir(out_dir);

  const std::string file = cfg.get_string("probe.file", "");
  const double tol = cfg.get_double("probe.tol", 1e-8);
  cfg.require_all_consumed();
  if (file.empty()) throw ConfigError("linear-probe requires probe.file = <blocks.json>");

  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open probe file: " + file);
  json blocks_json;
  try {
    in >> blocks_json;
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse probe file " + file + ": " + e.what());
  }
  if (!blocks_json.contains("a") || !blocks_json.contains("b") ||
      !blocks_json.contains("c")) {
    throw ConfigError("probe file must contain blocks 'a', 'b' and 'c'");
  }
  LinearGameBlocks blocks{matrix_from_json(blocks_json["a"], "a"),
                          matrix_from_json(blocks_json["b"], "b"),
                          matrix_from_json(blocks_json["c"], "c")};
  if (blocks.a.rows() != blocks.a.cols() || blocks.c.rows() != blocks.c.cols() ||
      blocks.b.rows() != blocks.c.rows() || blocks.b.cols() != blocks.a.rows()) {
    throw ConfigError("probe blocks have inconsistent shapes: need a (n x n), c (m x m), "
                      "b (m x n)");
  }

  NashCheckReport report;
  try {
    report = check_differential_nash(blocks, tol);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("linear-probe: ") + e.what());
  }
  const EigenSpectrum spectrum = eigen_spectrum(linear_dynamics_matrix(blocks));

  std::string body = "# schema odegan-spectrum-1\n";
  body += "re,im\n";
  for (const auto& v : spectrum.values) {
    body += cell(v.real()) + "," + cell(v.imag()) + "\n";
  }
  write_text_file(out_dir / "probe_spectrum.csv", body);
  summary.files.push_back("probe_spectrum.csv");

  summary.metrics["verdict"] = to_string(report.verdict);
  summary.metrics["min_real_part"] = report.min_real_part;
  summary.metrics["a_min_eig"] = report.a_min_eig;
  summary.metrics["c_min_eig"] = report.c_min_eig;
  summary.metrics["b_sigma_min"] = report.b_sigma_min;
  summary.metrics["h_invertible"] = report.h_invertible;
  summary.metrics["report"] = describe(report);

  write_text_file(out_dir / "linear-probe_plot_hints.txt",
                  "probe_spectrum.csv: scatter re vs im (eigenvalues of the game matrix; "
                  "local convergence needs all re > 0)\n");
  summary.files.push_back("linear-probe_plot_hints.txt");
  finalize(summary, out_dir, cfg, t0);
  return summary;
}

// ---------------------------------------------------------------------------
RunSummary run_experiment(const std::string& kind, KeyValueConfig& cfg,
                          const std::filesystem::path& out_dir) {
  if (kind == "toy") return run_toy(cfg, out_dir);
  if (kind == "order-test") return run_order_test(cfg, out_dir);
  if (kind == "mog") return run_mog(cfg, out_dir);
  if (kind == "reg-sweep") return run_reg_sweep(cfg, out_dir);
  if (kind == "eigen-check") return run_eigen_check(cfg, out_dir);
  if (kind == "linear-probe") return run_linear_probe(cfg, out_dir);
  throw ConfigError("unknown experiment kind: " + kind);
}

std::filesystem::path resolve_output_dir(const KeyValueConfig& cfg,
                                         const std::string& cli_out) {
  const std::string from_file = cfg.get_string("output_dir", ".");
  if (!cli_out.empty()) return cli_out;
  if (const char* env = std::getenv("ODEGAN_OUTPUT_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return from_file;
}

}  // namespace odegan
