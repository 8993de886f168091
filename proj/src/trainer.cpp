#include "odegan/trainer.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace odegan {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void TrainerConfig::validate() const {
  stepper.validate();
  if (step_schedule.empty() || step_schedule.front().first != 0) {
    throw std::invalid_argument("step schedule must start at iteration 0");
  }
  long prev = -1;
  for (const auto& [at, h] : step_schedule) {
    if (at <= prev) throw std::invalid_argument("schedule thresholds must be strictly increasing");
    if (!(h > 0.0)) throw std::invalid_argument("schedule step sizes must be positive");
    prev = at;
  }
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (log_every < 1) throw std::invalid_argument("log_every must be >= 1");
  if (!(alpha > 0.0) || !(beta > 0.0)) throw std::invalid_argument("alpha, beta must be > 0");
}

double TrainerConfig::step_size_at(long iteration) const {
  double h = step_schedule.front().second;
  for (const auto& [at, hh] : step_schedule) {
    if (iteration >= at) h = hh;
  }
  return h;
}

std::pair<double, double> nash_gap(const LossPair& losses) {
  return {std::abs(losses.l_d - std::log(4.0)), std::abs(losses.l_g - std::log(2.0))};
}

double mode_coverage(const MatrixXd& samples, const MoGSpec& spec) {
  if (samples.rows() < 1 || samples.cols() != 2) {
    throw std::invalid_argument("mode_coverage: samples must be n x 2 with n >= 1");
  }
  const double need =
      std::max(1.0, static_cast<double>(samples.rows()) / (10.0 * spec.means.size()));
  const double radius = 4.0 * spec.std;
  int covered = 0;
  for (const auto& mean : spec.means) {
    long count = 0;
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
      if ((samples.row(i).transpose() - mean).norm() <= radius) ++count;
    }
    if (static_cast<double>(count) >= need) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(spec.means.size());
}

namespace {

// Units of work the loop needs from a game, with the batch held inside so
// the velocity field stays fixed across a step's stages.
struct ToyAdapter {
  const ToyGame& game;

  void draw(Rng&) {}
  VectorXd reg_grad(const GameState& s) const { return game.reg_grad(s); }
  auto field() const {
    return [this](const GameState& s) { return game.velocity(s); };
  }
  void fill_metrics(const GameState& s, TrajectoryRecord& rec) const {
    const LossPair l = game.losses(s);
    rec.l_d = l.l_d;
    rec.l_g = l.l_g;
    const VectorXd v = game.velocity(s);
    rec.grad_norm_d = std::abs(v(0));
    rec.grad_norm_g = std::abs(v(1));
  }
};

struct GanAdapter {
  const GanGame& game;
  ad::Workspace* ws = nullptr;
  std::uint64_t seed = 0;
  GanBatch batch;

  void draw(Rng& rng) { batch = game.draw_batch(rng); }
  VectorXd reg_grad(const GameState& s) const { return game.reg_grad(s, batch, ws); }
  auto field() const {
    return [this](const GameState& s) { return game.velocity(s, batch, ws); };
  }
  void fill_metrics(const GameState& s, TrajectoryRecord& rec) const {
    const GanGame::Evaluation e = game.evaluate(s, batch, ws);
    rec.l_d = e.losses.l_d;
    rec.l_g = e.losses.l_g;
    rec.grad_norm_d = e.grad_norm_d;
    rec.grad_norm_g = e.grad_norm_g;
  }
  void fill_coverage(const GameState& s, long iteration, TrajectoryRecord& rec) const {
    // Separate stream: coverage sampling never perturbs the training draws.
    Rng cov_rng(Rng::mix(seed, static_cast<std::uint64_t>(iteration)));
    const int n = 512;
    MatrixXd z(n, game.latent_dim());
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < game.latent_dim(); ++j) z(i, j) = cov_rng.normal();
    }
    rec.coverage = mode_coverage(game.generate(s, z), game.data());
  }
};

template <class Adapter>
StepOutcome one_step(Adapter& adapter, const GameState& state, const TrainerConfig& cfg,
                     long iteration, Rng* rng, MomentState* moments, bool want_metrics,
                     bool want_coverage) {
  const double h = cfg.step_size_at(iteration);
  if (rng != nullptr) adapter.draw(*rng);

  VectorXd g_reg;
  if (cfg.lambda > 0.0) g_reg = adapter.reg_grad(state);

  auto field = adapter.field();
  StepOutcome out;
  out.record.iteration = iteration;

  StepResult r = step(cfg.stepper, field, state, h, moments);
  if (cfg.track_embedded_error && want_metrics) {
    if (cfg.stepper.kind == StepperKind::Embedded23) {
      out.record.embedded_err = r.error_estimate;
    } else {
      // Diagnostic probe at the pre-step state; the result is discarded.
      out.record.embedded_err = embedded23_step(field, state, h).error_estimate;
    }
  }
  out.state = std::move(r.next);
  if (cfg.lambda > 0.0) {
    out.state.theta -= (h * cfg.lambda) * g_reg;
  }
  if (!out.state.finite()) throw ad::NonFiniteError("non-finite state after the update");

  if (want_metrics) {
    adapter.fill_metrics(out.state, out.record);
    const auto [gd, gg] = nash_gap({out.record.l_d, out.record.l_g});
    out.record.gap_d = gd;
    out.record.gap_g = gg;
    if constexpr (requires { adapter.fill_coverage(out.state, iteration, out.record); }) {
      if (want_coverage) adapter.fill_coverage(out.state, iteration, out.record);
    }
  }
  return out;
}

template <class Adapter>
TrajectoryLog run_training(Adapter& adapter, GameState state, const TrainerConfig& cfg, Rng* rng,
                           bool coverage_on_log) {
  cfg.validate();
  TrajectoryLog log;
  MomentState moments = MomentState::zero(state.dim());
  const auto t0 = std::chrono::steady_clock::now();

  for (long it = 0; it < cfg.max_iterations; ++it) {
    const bool logged = (it % cfg.log_every == 0) || (it + 1 == cfg.max_iterations);
    try {
      StepOutcome out =
          one_step(adapter, state, cfg, it, rng, &moments, logged, coverage_on_log);
      state = std::move(out.state);
      if (logged) {
        out.record.wall_clock_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.records.push_back(std::move(out.record));
      }
    } catch (const ad::NonFiniteError& e) {
      log.status = RunStatus::AbortedNonFinite;
      log.abort_reason = e.what();
      log.abort_iteration = it;
      break;
    }
  }
  log.final_state = std::move(state);
  return log;
}

}  // namespace

StepOutcome train_step(const ToyGame& game, const GameState& state, const TrainerConfig& config,
                       long iteration, MomentState* moments) {
  config.validate();
  ToyAdapter adapter{game};
  MomentState local = MomentState::zero(state.dim());
  return one_step(adapter, state, config, iteration, nullptr, moments ? moments : &local, true,
                  false);
}

StepOutcome train_step(const GanGame& game, const GameState& state, const TrainerConfig& config,
                       long iteration, Rng& rng, ad::Workspace* ws, MomentState* moments) {
  config.validate();
  GanAdapter adapter{game, ws, config.seed, {}};
  MomentState local = MomentState::zero(state.dim());
  return one_step(adapter, state, config, iteration, &rng, moments ? moments : &local, true,
                  true);
}

TrajectoryLog train(const ToyGame& game, const GameState& init, const TrainerConfig& config) {
  ToyAdapter adapter{game};
  return run_training(adapter, init, config, nullptr, false);
}

TrajectoryLog train(const GanGame& game, const TrainerConfig& config) {
  ad::Workspace ws;
  GanAdapter adapter{game, &ws, config.seed, {}};
  Rng rng(config.seed);
  return run_training(adapter, game.initial_state(), config, &rng, true);
}

}  // namespace odegan
