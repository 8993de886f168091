// Linearised-dynamics toolkit: dense Jacobians of game velocity fields, an
// in-repo eigenvalue solver, local-convergence structure checks, the toy
// game's closed-form solution, and the leading truncation-error estimate for
// Euler steps.
#pragma once

#include "odegan/games.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace odegan {

struct EigenSpectrum {
  std::vector<std::complex<double>> values;  // unordered

  double min_real() const;
  double max_abs_real() const;
  double min_modulus() const;
  double max_modulus() const;
};

// Eigenvalues of a real dense matrix (dimension <= 512) via complex
// Hessenberg reduction and shifted QR iteration; deflation tolerance 1e-10.
// Throws std::runtime_error if the iteration cap is hit (never silent).
EigenSpectrum eigen_spectrum(const Eigen::MatrixXd& m);

// Smallest eigenvalue of the symmetric part (M + M^T)/2.
double min_symmetric_eigenvalue(const Eigen::MatrixXd& m);

// Largest and smallest singular values of a rectangular matrix, via the
// smaller Gram matrix.
std::pair<double, double> singular_value_range(const Eigen::MatrixXd& m);

enum class NashVerdict { ConvergesLocally, Inconclusive, NonHyperbolic };

const char* to_string(NashVerdict v);

struct NashCheckReport {
  bool a_psd = false;
  double a_min_eig = 0.0;
  bool c_psd = false;
  double c_min_eig = 0.0;
  bool b_full_rank = false;
  double b_sigma_min = 0.0;
  bool h_invertible = false;
  double min_real_part = 0.0;
  NashVerdict verdict = NashVerdict::Inconclusive;
};

// Local-convergence structure check on the assembled dynamics matrix:
// definiteness of the diagonal blocks (symmetrized, threshold tol), coupling
// rank (relative 1e-8), invertibility, and the spectrum's real parts.
NashCheckReport check_differential_nash(const LinearGameBlocks& blocks, double tol = 1e-8);

// Line-oriented plain-text rendering of the report.
std::string describe(const NashCheckReport& r);

// Damped-oscillation closed form of the toy game; requires 0 <= eps < 2.
std::pair<double, double> toy_analytic_solution(double epsilon,
                                                std::pair<double, double> init, double t);

// -dv/dy at the given state.
Eigen::MatrixXd jacobian_at(const ToyGame& game, const GameState& s);
Eigen::MatrixXd jacobian_at(const LinearGameBlocks& blocks);
Eigen::MatrixXd jacobian_at(const GanGame& game, const GameState& s, const GanBatch& batch);

struct OffdiagReport {
  bool opposite = false;
  double max_deviation = 0.0;
};

// Reports max |H[0:n, n:] + H[n:, 0:n]^T| against tol.
OffdiagReport offdiag_opposites_check(const Eigen::MatrixXd& h, Eigen::Index n, Eigen::Index m,
                                      double tol = 1e-9);

enum class PsdCheckStatus { Checked, SkippedNonPiecewiseLinear };

struct PsdCheckReport {
  PsdCheckStatus status = PsdCheckStatus::Checked;
  bool psd = false;
  double min_eigenvalue = 0.0;
  std::string note;
};

// Minimum eigenvalue of d^2 l_D / dtheta^2; only meaningful for
// piecewise-linear discriminator activations (skipped for sigmoid).
PsdCheckReport discriminator_hessian_psd_check(const GanGame& game, const GameState& s,
                                               const GanBatch& batch, double tol = 1e-6);

struct TruncationEstimate {
  Eigen::VectorXd tau;
  double ratio_check = 0.0;
};

// Leading local truncation error of an Euler step, tau = (h^2/4) J v, with
// the Jacobian taken by central differences; ratio_check compares the
// two-half-steps-vs-one-full-step defect against ||tau|| (→ 1 as h → 0).
template <class F>
TruncationEstimate truncation_estimate(F&& v, const GameState& state, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("truncation_estimate: h must be positive");
  const Eigen::Index d = state.dim();
  const Eigen::Index td = state.theta.size();
  const Eigen::VectorXd y = state.concat();
  const Eigen::VectorXd k = v(state);
  if (k.size() != d) throw std::invalid_argument("truncation_estimate: velocity dim mismatch");

  const double delta = 1e-6;
  Eigen::MatrixXd jac(d, d);
  Eigen::VectorXd probe = y;
  for (Eigen::Index j = 0; j < d; ++j) {
    probe(j) = y(j) + delta;
    const Eigen::VectorXd up = v(GameState::from_concat(probe, td));
    probe(j) = y(j) - delta;
    const Eigen::VectorXd dn = v(GameState::from_concat(probe, td));
    probe(j) = y(j);
    jac.col(j) = (up - dn) / (2.0 * delta);
  }

  TruncationEstimate out;
  out.tau = (h * h / 4.0) * (jac * k);

  const GameState half1 = state.advanced(k, h / 2);
  const GameState half2 = half1.advanced(v(half1), h / 2);
  const GameState full = state.advanced(k, h);
  const double defect = (half2.concat() - full.concat()).norm();
  const double scale = out.tau.norm();
  if (scale == 0.0) {
    out.ratio_check = defect == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  } else {
    out.ratio_check = defect / scale;
  }
  return out;
}

}  // namespace odegan
