// The training loop: regulariser gradient at the pre-step state, one ODE
// step over the velocity field (batch fixed across stages), then the
// regulariser applied to theta. Emits a trajectory log suitable for CSV
// export; aborts (never clips) on non-finite states.
#pragma once

#include "odegan/games.hpp"
#include "odegan/integrators.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace odegan {

struct TrainerConfig {
  StepperSpec stepper;
  // Piecewise-constant step sizes: (first iteration, h), thresholds strictly
  // increasing, first threshold 0.
  std::vector<std::pair<long, double>> step_schedule = {{0, 0.03}};
  double lambda = 0.0;
  long max_iterations = 1;
  int batch_size = 512;  // consumed where the game is constructed
  std::uint64_t seed = 1;
  long log_every = 10;
  bool track_embedded_error = false;
  double alpha = 1.0;  // consumed where the game is constructed
  double beta = 1.0;

  void validate() const;
  double step_size_at(long iteration) const;
};

struct TrajectoryRecord {
  long iteration = 0;
  double l_d = 0.0;
  double l_g = 0.0;
  double grad_norm_d = 0.0;
  double grad_norm_g = 0.0;
  std::optional<double> embedded_err;
  double gap_d = 0.0;
  double gap_g = 0.0;
  std::optional<double> coverage;
  double wall_clock_s = 0.0;
};

enum class RunStatus { Completed, AbortedNonFinite };

struct TrajectoryLog {
  std::vector<TrajectoryRecord> records;
  GameState final_state;
  RunStatus status = RunStatus::Completed;
  std::string abort_reason;
  long abort_iteration = -1;
};

// (|l_D - log 4|, |l_G - log 2|); the references are computed, not quoted.
std::pair<double, double> nash_gap(const LossPair& losses);

// Fraction of mixture modes receiving at least max(1, n/(10*#modes)) samples
// within 4*sigma (Euclidean) of their mean.
double mode_coverage(const Eigen::MatrixXd& samples, const MoGSpec& spec);

struct StepOutcome {
  GameState state;
  TrajectoryRecord record;
};

// One Algorithm-1 step. The GanGame form draws its batch from rng; the toy
// form is batchless. Both evaluate the record at the post-step state.
StepOutcome train_step(const ToyGame& game, const GameState& state, const TrainerConfig& config,
                       long iteration, MomentState* moments = nullptr);
StepOutcome train_step(const GanGame& game, const GameState& state, const TrainerConfig& config,
                       long iteration, Rng& rng, ad::Workspace* ws = nullptr,
                       MomentState* moments = nullptr);

TrajectoryLog train(const ToyGame& game, const GameState& init, const TrainerConfig& config);
TrajectoryLog train(const GanGame& game, const TrainerConfig& config);

}  // namespace odegan
