// Explicit ODE steppers over a game velocity field. All steppers are pure:
// they take a callable v(state) -> concatenated velocity vector, a state and
// a step size, and return the advanced state plus bookkeeping. The
// adaptive-moment baseline carries its accumulators in and out explicitly.
//
// Embedded 2(3) pair tableau (shared stages):
//   c = (0, 1, 1/2), a21 = 1, a31 = a32 = 1/4,
//   3rd-order weights b  = (1/6, 1/6, 2/3),
//   embedded 2nd-order b* = (1/2, 1/2, 0);
// the step advances with the 3rd-order solution and reports ||y3 - y2||_2.
#pragma once

#include "odegan/autodiff.hpp"
#include "odegan/games.hpp"

#include <Eigen/Core>

#include <cmath>
#include <optional>
#include <stdexcept>

namespace odegan {

enum class StepperKind {
  Euler,
  Heun,
  RK4,
  Embedded23,
  ExtraGradient,
  ConsensusLike,
  SgaLike,
  AdaptiveMomentBaseline,
};

// Stepper selection plus the parameters of the parameterised kinds.
// gamma == 0 means "use the step size h" (the reductions to Heun and
// extragradient happen at that setting).
struct StepperSpec {
  StepperKind kind = StepperKind::RK4;
  double a = 1.0;
  double b = 1.0;
  double gamma = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_num = 1e-8;

  void validate() const {
    if (!(std::isfinite(a) && std::isfinite(b) && std::isfinite(gamma)))
      throw std::invalid_argument("stepper parameters must be finite");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
      throw std::invalid_argument("moment decays must lie in [0, 1)");
    if (!(std::isfinite(eps_num) && eps_num > 0.0))
      throw std::invalid_argument("eps_num must be positive");
  }
};

struct StepResult {
  GameState next;
  std::optional<double> error_estimate;  // present only for Embedded23
  int evaluations = 0;
};

// First/second moment accumulators for the adaptive baseline.
struct MomentState {
  Eigen::VectorXd m;
  Eigen::VectorXd s;
  long t = 0;

  static MomentState zero(Eigen::Index dim) {
    return MomentState{Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Zero(dim), 0};
  }
};

namespace detail {

inline void check_step_size(double h) {
  if (!(h > 0.0)) throw std::invalid_argument("step size must be positive");
}

template <class F>
Eigen::VectorXd eval_field(F& v, const GameState& s, Eigen::Index dim) {
  Eigen::VectorXd k = v(s);
  if (k.size() != dim) throw std::invalid_argument("velocity dimension mismatch");
  if (!k.allFinite()) throw ad::NonFiniteError("non-finite velocity");
  return k;
}

}  // namespace detail

template <class F>
StepResult euler_step(F&& v, const GameState& y, double h) {
  detail::check_step_size(h);
  const Eigen::VectorXd k1 = detail::eval_field(v, y, y.dim());
  return StepResult{y.advanced(k1, h), std::nullopt, 1};
}

template <class F>
StepResult heun_step(F&& v, const GameState& y, double h) {
  detail::check_step_size(h);
  const Eigen::Index d = y.dim();
  const Eigen::VectorXd k1 = detail::eval_field(v, y, d);
  const Eigen::VectorXd k2 = detail::eval_field(v, y.advanced(k1, h), d);
  return StepResult{y.advanced(k1 + k2, h / 2), std::nullopt, 2};
}

template <class F>
StepResult rk4_step(F&& v, const GameState& y, double h) {
  detail::check_step_size(h);
  const Eigen::Index d = y.dim();
  const Eigen::VectorXd k1 = detail::eval_field(v, y, d);
  const Eigen::VectorXd k2 = detail::eval_field(v, y.advanced(k1, h / 2), d);
  const Eigen::VectorXd k3 = detail::eval_field(v, y.advanced(k2, h / 2), d);
  const Eigen::VectorXd k4 = detail::eval_field(v, y.advanced(k3, h), d);
  return StepResult{y.advanced(k1 + 2 * k2 + 2 * k3 + k4, h / 6), std::nullopt, 4};
}

template <class F>
StepResult embedded23_step(F&& v, const GameState& y, double h) {
  detail::check_step_size(h);
  const Eigen::Index d = y.dim();
  const Eigen::VectorXd k1 = detail::eval_field(v, y, d);
  const Eigen::VectorXd k2 = detail::eval_field(v, y.advanced(k1, h), d);
  const Eigen::VectorXd k3 = detail::eval_field(v, y.advanced(k1 + k2, h / 4), d);
  GameState y3 = y.advanced(k1 / 6 + k2 / 6 + 2 * k3 / 3, h);
  const GameState y2 = y.advanced(k1 + k2, h / 2);
  const double err = (y3.concat() - y2.concat()).norm();
  return StepResult{std::move(y3), err, 3};
}

template <class F>
StepResult extragradient_step(F&& v, const GameState& y, double h) {
  detail::check_step_size(h);
  const Eigen::Index d = y.dim();
  const Eigen::VectorXd k1 = detail::eval_field(v, y, d);
  const Eigen::VectorXd k2 = detail::eval_field(v, y.advanced(k1, h), d);
  return StepResult{y.advanced(k2, h), std::nullopt, 2};
}

template <class F>
StepResult consensus_like_step(F&& v, const GameState& y, double h, double a, double b,
                               double gamma) {
  detail::check_step_size(h);
  if (!(std::isfinite(a) && std::isfinite(b) && std::isfinite(gamma)))
    throw std::invalid_argument("consensus parameters must be finite");
  const Eigen::Index d = y.dim();
  const Eigen::VectorXd k1 = detail::eval_field(v, y, d);
  const Eigen::VectorXd k2 = detail::eval_field(v, y.advanced(k1, gamma), d);
  return StepResult{y.advanced(a * k1 + b * k2, h / 2), std::nullopt, 2};
}

// Mixed-argument two-stage step: the corrector for each player is evaluated
// with only the other player advanced, which keeps the off-diagonal
// (interaction) correction and drops the diagonal one.
template <class F>
StepResult sga_like_step(F&& v, const GameState& y, double h, double gamma) {
  detail::check_step_size(h);
  if (!std::isfinite(gamma)) throw std::invalid_argument("gamma must be finite");
  const Eigen::Index d = y.dim();
  const Eigen::Index td = y.theta.size();
  const Eigen::VectorXd k1 = detail::eval_field(v, y, d);
  const GameState tilde = y.advanced(k1, gamma);

  GameState theta_phit{y.theta, tilde.phi};
  GameState thetat_phi{tilde.theta, y.phi};
  Eigen::VectorXd mixed(d);
  mixed.head(td) = detail::eval_field(v, theta_phit, d).head(td);
  mixed.tail(d - td) = detail::eval_field(v, thetat_phi, d).tail(d - td);
  return StepResult{y.advanced(k1 + mixed, h / 2), std::nullopt, 3};
}

struct AdaptiveStepResult {
  StepResult step;
  MomentState moments;
};

template <class F>
AdaptiveStepResult adaptive_moment_baseline_step(F&& v, const GameState& y, double h,
                                                 const MomentState& moments, double beta1,
                                                 double beta2, double eps_num) {
  detail::check_step_size(h);
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("moment decays must lie in [0, 1)");
  const Eigen::Index d = y.dim();
  if (moments.m.size() != d || moments.s.size() != d)
    throw std::invalid_argument("moment accumulators must be shaped like the state");
  const Eigen::VectorXd k1 = detail::eval_field(v, y, d);

  MomentState next = moments;
  next.t = moments.t + 1;
  next.m = beta1 * moments.m + (1.0 - beta1) * k1;
  next.s = beta2 * moments.s + (1.0 - beta2) * k1.cwiseProduct(k1);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(next.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(next.t));
  const Eigen::VectorXd direction =
      (next.m / c1).cwiseQuotient(((next.s / c2).cwiseSqrt().array() + eps_num).matrix());
  StepResult r{y.advanced(direction, h), std::nullopt, 1};
  return AdaptiveStepResult{std::move(r), std::move(next)};
}

// Dispatch by StepperSpec. AdaptiveMomentBaseline requires a caller-owned
// accumulator, updated in place; other kinds ignore it.
template <class F>
StepResult step(const StepperSpec& spec, F&& v, const GameState& y, double h,
                MomentState* moments = nullptr) {
  spec.validate();
  const double gamma = spec.gamma == 0.0 ? h : spec.gamma;
  switch (spec.kind) {
    case StepperKind::Euler:
      return euler_step(v, y, h);
    case StepperKind::Heun:
      return heun_step(v, y, h);
    case StepperKind::RK4:
      return rk4_step(v, y, h);
    case StepperKind::Embedded23:
      return embedded23_step(v, y, h);
    case StepperKind::ExtraGradient:
      return extragradient_step(v, y, h);
    case StepperKind::ConsensusLike:
      return consensus_like_step(v, y, h, spec.a, spec.b, gamma);
    case StepperKind::SgaLike:
      return sga_like_step(v, y, h, gamma);
    case StepperKind::AdaptiveMomentBaseline: {
      if (moments == nullptr)
        throw std::invalid_argument("adaptive baseline needs a moment accumulator");
      AdaptiveStepResult r =
          adaptive_moment_baseline_step(v, y, h, *moments, spec.beta1, spec.beta2, spec.eps_num);
      *moments = std::move(r.moments);
      return std::move(r.step);
    }
  }
  throw std::logic_error("unknown stepper kind");
}

}  // namespace odegan
