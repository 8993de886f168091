#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "odegan/integrators.hpp"
#include "oracles.hpp"

#include <cmath>
#include <complex>
#include <cstring>
#include <vector>

using namespace odegan;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXd;

namespace {

// v(theta, phi) = (-(eps*theta - phi), -theta) for eps = 0.1.
MatrixXd toy_matrix() {
  MatrixXd m(2, 2);
  m << 0.1, -1.0, 1.0, 0.0;
  return m;
}

auto toy_field() {
  return [](const GameState& s) -> VectorXd { return -(toy_matrix() * s.concat()); };
}

GameState state2(double theta, double phi) { return ToyGame::make_state(theta, phi); }

bool same_bits(const GameState& a, const GameState& b) {
  const VectorXd va = a.concat();
  const VectorXd vb = b.concat();
  return va.size() == vb.size() &&
         std::memcmp(va.data(), vb.data(), sizeof(double) * va.size()) == 0;
}

// Scalar complex test problem y' = lambda*y embedded as a 2d real system;
// for this normal system every step amplifies exactly by |R(h*lambda)|.
auto rotation_field(std::complex<double> lambda) {
  return [lambda](const GameState& s) -> VectorXd {
    MatrixXd m(2, 2);
    m << lambda.real(), -lambda.imag(), lambda.imag(), lambda.real();
    return m * s.concat();
  };
}

}  // namespace

TEST_CASE("hand-checked single steps on the toy field") {
  auto v = toy_field();
  const GameState y = state2(1.0, 0.0);

  const StepResult e = euler_step(v, y, 0.2);
  CHECK(e.next.theta(0) == doctest::Approx(0.98));
  CHECK(e.next.phi(0) == doctest::Approx(-0.2));
  CHECK(e.evaluations == 1);
  CHECK_FALSE(e.error_estimate.has_value());

  const StepResult h = heun_step(v, y, 0.2);
  CHECK(h.next.theta(0) == doctest::Approx(0.9602));
  CHECK(h.next.phi(0) == doctest::Approx(-0.198));
  CHECK(h.evaluations == 2);

  const StepResult x = extragradient_step(v, y, 0.2);
  CHECK(x.next.theta(0) == doctest::Approx(0.9404));
  CHECK(x.next.phi(0) == doctest::Approx(-0.196));
  CHECK(x.evaluations == 2);
}

TEST_CASE("rk4 tracks the matrix exponential") {
  auto v = toy_field();
  const GameState y = state2(1.0, 0.0);
  const StepResult r = rk4_step(v, y, 0.2);
  const VectorXd exact = oracles::expm(-0.2 * toy_matrix()) * y.concat();
  CHECK((r.next.concat() - exact).norm() < 1e-4);
  CHECK(r.evaluations == 4);
}

TEST_CASE("rk4 integrates a cubic clock field exactly") {
  // State (x, t), v = (t^3, 1): one step from (0, 0) must land on h^4/4.
  auto v = [](const GameState& s) -> VectorXd {
    VectorXd k(2);
    k << s.phi(0) * s.phi(0) * s.phi(0), 1.0;
    return k;
  };
  const double h = 0.3;
  const StepResult r = rk4_step(v, state2(0.0, 0.0), h);
  CHECK(r.next.theta(0) == doctest::Approx(h * h * h * h / 4.0).epsilon(1e-14));
  CHECK(r.next.phi(0) == doctest::Approx(h).epsilon(1e-15));
}

TEST_CASE("every stepper is the identity on the zero field") {
  auto zero = [](const GameState& s) -> VectorXd { return VectorXd::Zero(s.dim()); };
  const GameState y = state2(0.7, -1.3);
  CHECK(same_bits(euler_step(zero, y, 0.1).next, y));
  CHECK(same_bits(heun_step(zero, y, 0.1).next, y));
  CHECK(same_bits(rk4_step(zero, y, 0.1).next, y));
  const StepResult emb = embedded23_step(zero, y, 0.1);
  CHECK(same_bits(emb.next, y));
  CHECK(emb.error_estimate.value() == 0.0);
  CHECK(same_bits(extragradient_step(zero, y, 0.1).next, y));
  CHECK(same_bits(consensus_like_step(zero, y, 0.1, 1.0, 1.0, 0.1).next, y));
  CHECK(same_bits(sga_like_step(zero, y, 0.1, 0.1).next, y));
  const MomentState m0 = MomentState::zero(2);
  const AdaptiveStepResult ar = adaptive_moment_baseline_step(zero, y, 0.1, m0, 0.9, 0.999, 1e-8);
  CHECK(same_bits(ar.step.next, y));
  CHECK(ar.moments.m.norm() == 0.0);
}

TEST_CASE("single-step amplification equals the stability polynomial on a normal system") {
  const std::complex<double> lambda(-0.05, 0.99875);
  auto v = rotation_field(lambda);
  const GameState y = state2(1.0, 0.0);
  const double h = 0.2;
  const std::complex<double> z = h * lambda;

  const StepResult e = euler_step(v, y, h);
  CHECK(e.next.concat().norm() == doctest::Approx(std::abs(oracles::stability_euler(z))).epsilon(1e-12));
  // Components equal the complex polynomial applied to 1.
  CHECK(e.next.theta(0) == doctest::Approx(oracles::stability_euler(z).real()).epsilon(1e-12));
  CHECK(e.next.phi(0) == doctest::Approx(oracles::stability_euler(z).imag()).epsilon(1e-12));

  const StepResult hn = heun_step(v, y, h);
  CHECK(hn.next.theta(0) == doctest::Approx(oracles::stability_heun(z).real()).epsilon(1e-12));
  CHECK(hn.next.phi(0) == doctest::Approx(oracles::stability_heun(z).imag()).epsilon(1e-12));

  const StepResult r = rk4_step(v, y, h);
  CHECK(r.next.theta(0) == doctest::Approx(oracles::stability_rk4(z).real()).epsilon(1e-12));
  CHECK(r.next.phi(0) == doctest::Approx(oracles::stability_rk4(z).imag()).epsilon(1e-12));

  // Embedded23 propagates its third-order solution: R = 1 + z + z^2/2 + z^3/6.
  const std::complex<double> r3 = 1.0 + z + z * z / 2.0 + z * z * z / 6.0;
  const StepResult em = embedded23_step(v, y, h);
  CHECK(em.next.theta(0) == doctest::Approx(r3.real()).epsilon(1e-12));
  CHECK(em.next.phi(0) == doctest::Approx(r3.imag()).epsilon(1e-12));
}

TEST_CASE("toy-field long-run amplification matches |R(h lambda)| per step") {
  auto v = toy_field();
  const double h = 0.2;
  const std::complex<double> lambda(-0.05, 0.99875);
  const std::complex<double> z = h * lambda;

  GameState ye = state2(1.0, 0.0);
  GameState yh = state2(1.0, 0.0);
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    ye = euler_step(v, ye, h).next;
    yh = heun_step(v, yh, h).next;
  }
  const double rate_e = std::pow(ye.concat().norm(), 1.0 / n);
  const double rate_h = std::pow(yh.concat().norm(), 1.0 / n);
  CHECK(rate_e == doctest::Approx(std::abs(oracles::stability_euler(z))).epsilon(1e-3));
  CHECK(rate_h == doctest::Approx(std::abs(oracles::stability_heun(z))).epsilon(1e-3));
  CHECK(rate_e > 1.0);   // Euler spirals out
  CHECK(rate_h < 1.0);   // Heun decays
}

TEST_CASE("global order of accuracy on the toy field") {
  auto v = toy_field();
  const double T = 4.0;
  const std::vector<double> hs = {0.2, 0.1, 0.05, 0.025};
  const VectorXd ref = oracles::expm(-T * toy_matrix()) * state2(1.0, 0.0).concat();

  auto global_error = [&](StepperKind kind, double h) {
    StepperSpec spec;
    spec.kind = kind;
    GameState y = state2(1.0, 0.0);
    const int n = static_cast<int>(std::lround(T / h));
    for (int i = 0; i < n; ++i) y = step(spec, v, y, h).next;
    return (y.concat() - ref).norm();
  };

  auto slope_for = [&](StepperKind kind) {
    std::vector<double> lx, ly;
    for (const double h : hs) {
      lx.push_back(std::log(h));
      ly.push_back(std::log(global_error(kind, h)));
    }
    return oracles::fit_slope(lx, ly);
  };

  CHECK(slope_for(StepperKind::Euler) == doctest::Approx(1.0).epsilon(0.2));
  CHECK(slope_for(StepperKind::Heun) == doctest::Approx(2.0).epsilon(0.15));
  CHECK(slope_for(StepperKind::RK4) == doctest::Approx(4.0).epsilon(0.125));
  CHECK(slope_for(StepperKind::Embedded23) == doctest::Approx(3.0).epsilon(0.14));
}

TEST_CASE("embedded error estimate scales like h^3 and tracks the true local error") {
  auto v = toy_field();
  const GameState y = state2(1.0, 0.0);

  const double e1 = embedded23_step(v, y, 0.2).error_estimate.value();
  const double e2 = embedded23_step(v, y, 0.1).error_estimate.value();
  CHECK(e1 / e2 == doctest::Approx(8.0).epsilon(0.25));

  for (const double h : {0.01, 0.05, 0.1, 0.2}) {
    const StepResult r = embedded23_step(v, y, h);
    const VectorXd y2 = y.advanced(
        v(y) + v(y.advanced(v(y), h)), h / 2).concat();  // the 2nd-order solution
    const VectorXd exact = oracles::expm(-h * toy_matrix()) * y.concat();
    const double true_err = (exact - y2).norm();
    CHECK(r.error_estimate.value() / true_err > 0.2);
    CHECK(r.error_estimate.value() / true_err < 5.0);
  }
}

TEST_CASE("consensus reductions are bit-identical") {
  auto v = toy_field();
  for (const double h : {0.05, 0.2, 0.31}) {
    for (const auto& y : {state2(1.0, 0.0), state2(-0.4, 0.9), state2(2.3, -1.7)}) {
      const StepResult heun = heun_step(v, y, h);
      const StepResult cons_h = consensus_like_step(v, y, h, 1.0, 1.0, h);
      CHECK(same_bits(heun.next, cons_h.next));

      const StepResult xg = extragradient_step(v, y, h);
      const StepResult cons_x = consensus_like_step(v, y, h, 0.0, 2.0, h);
      CHECK(same_bits(xg.next, cons_x.next));

      const StepResult eu = euler_step(v, y, h);
      const StepResult cons_e = consensus_like_step(v, y, h, 2.0, 0.0, h);
      CHECK(same_bits(eu.next, cons_e.next));
    }
  }
}

TEST_CASE("consensus inner step adds the exact Jacobian correction on a linear field") {
  auto v = toy_field();
  const GameState y = state2(0.8, -0.3);
  const double h = 0.1, gamma = 0.05;
  const MatrixXd J = -toy_matrix();  // dv/dy
  const VectorXd k1 = v(y);
  const VectorXd predicted = y.concat() + h * k1 + (h * gamma / 2.0) * (J * k1);
  const StepResult r = consensus_like_step(v, y, h, 1.0, 1.0, gamma);
  CHECK((r.next.concat() - predicted).norm() < 1e-14);
}

TEST_CASE("sga keeps only the off-diagonal Jacobian correction on the toy field") {
  auto v = toy_field();
  const GameState y = state2(0.8, -0.3);
  const double h = 0.1, gamma = 0.05;
  MatrixXd J_off(2, 2);  // off-diagonal blocks of dv/dy = -M
  J_off << 0.0, 1.0, -1.0, 0.0;
  const VectorXd k1 = v(y);
  const VectorXd predicted = y.concat() + h * k1 + (h * gamma / 2.0) * (J_off * k1);
  const StepResult r = sga_like_step(v, y, h, gamma);
  CHECK((r.next.concat() - predicted).norm() < 1e-14);
  CHECK(r.evaluations == 3);
}

TEST_CASE("sga equals heun on a purely bilinear game") {
  LinearGameBlocks blocks;
  blocks.a = MatrixXd::Zero(3, 3);
  blocks.c = MatrixXd::Zero(2, 2);
  MatrixXd b(2, 3);
  b << 1.0, -0.5, 0.2, 0.7, 0.3, -1.1;
  blocks.b = b;
  auto v = [&](const GameState& s) -> VectorXd { return linear_velocity(blocks, s); };

  GameState y;
  y.theta = Eigen::Vector3d(0.4, -1.0, 0.6);
  y.phi = Vector2d(0.9, -0.2);
  for (const double h : {0.05, 0.2}) {
    const StepResult sga = sga_like_step(v, y, h, h);
    const StepResult heun = heun_step(v, y, h);
    CHECK((sga.next.concat() - heun.next.concat()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("adaptive baseline approaches unit-scaled steps on a constant field") {
  const VectorXd c = (VectorXd(2) << 3.0, -2.0).finished();
  auto v = [&](const GameState&) -> VectorXd { return c; };
  const double h = 0.01;
  GameState y = state2(0.0, 0.0);
  MomentState m = MomentState::zero(2);
  VectorXd last = y.concat();
  VectorXd delta(2);
  for (int i = 0; i < 2000; ++i) {
    const AdaptiveStepResult r = adaptive_moment_baseline_step(v, y, h, m, 0.9, 0.999, 1e-8);
    y = r.step.next;
    m = r.moments;
    delta = y.concat() - last;
    last = y.concat();
  }
  CHECK(delta(0) == doctest::Approx(h * 1.0).epsilon(1e-3));
  CHECK(delta(1) == doctest::Approx(-h * 1.0).epsilon(1e-3));
}

TEST_CASE("adaptive baseline decays stale moments") {
  auto zero = [](const GameState& s) -> VectorXd { return VectorXd::Zero(s.dim()); };
  MomentState m = MomentState::zero(2);
  m.m = Vector2d(1.0, -1.0);
  m.s = Vector2d(0.5, 0.5);
  m.t = 10;
  const AdaptiveStepResult r =
      adaptive_moment_baseline_step(zero, state2(0.0, 0.0), 0.1, m, 0.9, 0.999, 1e-8);
  CHECK(r.moments.m.norm() < m.m.norm());
  CHECK(r.moments.s.norm() < m.s.norm());
  CHECK(r.moments.t == 11);
}

TEST_CASE("dispatcher matches the named steppers and handles gamma defaulting") {
  auto v = toy_field();
  const GameState y = state2(1.0, 0.0);
  const double h = 0.2;

  StepperSpec spec;
  spec.kind = StepperKind::Heun;
  CHECK(same_bits(step(spec, v, y, h).next, heun_step(v, y, h).next));

  spec.kind = StepperKind::ConsensusLike;
  spec.a = 0.0;
  spec.b = 2.0;
  spec.gamma = 0.0;  // defaults to h
  CHECK(same_bits(step(spec, v, y, h).next, extragradient_step(v, y, h).next));

  spec.kind = StepperKind::SgaLike;
  spec.gamma = 0.07;
  CHECK(same_bits(step(spec, v, y, h).next, sga_like_step(v, y, h, 0.07).next));

  spec.kind = StepperKind::AdaptiveMomentBaseline;
  MomentState m = MomentState::zero(2);
  const StepResult r = step(spec, v, y, h, &m);
  CHECK(m.t == 1);
  CHECK(r.evaluations == 1);
  CHECK_THROWS_AS(step(spec, v, y, h, nullptr), std::invalid_argument);
}

TEST_CASE("evaluation counts match stage counts") {
  int calls = 0;
  auto v = [&](const GameState& s) -> VectorXd {
    ++calls;
    return -(toy_matrix() * s.concat());
  };
  const GameState y = state2(1.0, 0.0);
  auto count = [&](auto&& fn) {
    calls = 0;
    const StepResult r = fn();
    CHECK(r.evaluations == calls);
    return r.evaluations;
  };
  CHECK(count([&] { return euler_step(v, y, 0.1); }) == 1);
  CHECK(count([&] { return heun_step(v, y, 0.1); }) == 2);
  CHECK(count([&] { return rk4_step(v, y, 0.1); }) == 4);
  CHECK(count([&] { return embedded23_step(v, y, 0.1); }) == 3);
  CHECK(count([&] { return extragradient_step(v, y, 0.1); }) == 2);
  CHECK(count([&] { return consensus_like_step(v, y, 0.1, 1.0, 1.0, 0.1); }) == 2);
  CHECK(count([&] { return sga_like_step(v, y, 0.1, 0.1); }) == 3);
}

TEST_CASE("guards: step size, finiteness, shape, spec validation") {
  auto v = toy_field();
  const GameState y = state2(1.0, 0.0);
  CHECK_THROWS_AS(euler_step(v, y, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(heun_step(v, y, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(rk4_step(v, y, std::nan("")), std::invalid_argument);

  auto bad = [](const GameState& s) -> VectorXd {
    return VectorXd::Constant(s.dim(), std::numeric_limits<double>::quiet_NaN());
  };
  CHECK_THROWS_AS(euler_step(bad, y, 0.1), ad::NonFiniteError);

  auto wrong = [](const GameState&) -> VectorXd { return VectorXd::Zero(5); };
  CHECK_THROWS_AS(euler_step(wrong, y, 0.1), std::invalid_argument);

  StepperSpec spec;
  spec.beta1 = 1.0;
  spec.kind = StepperKind::Euler;
  CHECK_THROWS_AS(step(spec, v, y, 0.1), std::invalid_argument);
  spec = StepperSpec{};
  spec.a = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(step(spec, v, y, 0.1), std::invalid_argument);
}
