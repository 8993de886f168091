#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "odegan/games.hpp"
#include "oracles.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

using namespace odegan;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Small GAN used by the finite-difference tests: 17 + 26 parameters.
GanGame tiny_game(double alpha = 1.0, double beta = 1.0) {
  MLPSpec disc{2, {4}, 1, Activation::Relu, 0.2, 11};
  MLPSpec gen{3, {4}, 2, Activation::Relu, 0.2, 12};
  return GanGame(disc, gen, MoGSpec::grid16(0.05), 3, 4, alpha, beta);
}

}  // namespace

TEST_CASE("toy losses at pinned points") {
  ToyGame game(0.1);
  auto l1 = game.losses(ToyGame::make_state(1.0, 0.0));
  CHECK(l1.l_d == doctest::Approx(0.05));
  CHECK(l1.l_g == doctest::Approx(0.0));
  auto l0 = game.losses(ToyGame::make_state(0.0, 0.0));
  CHECK(l0.l_d == 0.0);
  CHECK(l0.l_g == 0.0);
  auto l2 = game.losses(ToyGame::make_state(1.0, 1.0));
  CHECK(l2.l_d == doctest::Approx(-0.95));
  CHECK(l2.l_g == doctest::Approx(1.0));
}

TEST_CASE("toy velocity matches the closed-form field") {
  ToyGame game(0.1);
  const VectorXd v = game.velocity(ToyGame::make_state(1.0, 0.0));
  CHECK(v(0) == doctest::Approx(-0.1));
  CHECK(v(1) == doctest::Approx(-1.0));
  const VectorXd v0 = game.velocity(ToyGame::make_state(0.0, 0.0));
  CHECK(v0.norm() == 0.0);
}

TEST_CASE("toy velocity equals the linearised game exactly") {
  const double eps = 0.1;
  ToyGame game(eps);
  LinearGameBlocks blocks;
  blocks.a = MatrixXd::Constant(1, 1, eps);
  blocks.b = MatrixXd::Constant(1, 1, 1.0);
  blocks.c = MatrixXd::Zero(1, 1);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int t = 0; t < 25; ++t) {
    const GameState s = ToyGame::make_state(u(rng), u(rng));
    const VectorXd vt = game.velocity(s);
    const VectorXd vl = linear_velocity(blocks, s);
    CHECK(vt(0) == vl(0));  // bit-for-bit
    CHECK(vt(1) == vl(1));
  }
}

TEST_CASE("toy regulariser gradient is 2*theta") {
  ToyGame game(0.3);
  const VectorXd g = game.reg_grad(ToyGame::make_state(3.0, -1.0));
  CHECK(g.size() == 1);
  CHECK(g(0) == doctest::Approx(6.0));
}

TEST_CASE("linear velocity: toy blocks, origin, random blocks vs dense multiply") {
  LinearGameBlocks toy;
  toy.a = MatrixXd::Constant(1, 1, 0.1);
  toy.b = MatrixXd::Constant(1, 1, 1.0);
  toy.c = MatrixXd::Zero(1, 1);
  const VectorXd v = linear_velocity(toy, ToyGame::make_state(1.0, 0.0));
  CHECK(v(0) == doctest::Approx(-0.1));
  CHECK(v(1) == doctest::Approx(-1.0));

  GameState origin;
  origin.theta = VectorXd::Zero(1);
  origin.phi = VectorXd::Zero(1);
  CHECK(linear_velocity(toy, origin).norm() == 0.0);

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  LinearGameBlocks rnd;
  rnd.a = MatrixXd::NullaryExpr(3, 3, [&]() { return u(rng); });
  rnd.b = MatrixXd::NullaryExpr(3, 3, [&]() { return u(rng); });
  rnd.c = MatrixXd::NullaryExpr(3, 3, [&]() { return u(rng); });
  GameState s;
  s.theta = VectorXd::NullaryExpr(3, [&]() { return u(rng); });
  s.phi = VectorXd::NullaryExpr(3, [&]() { return u(rng); });
  MatrixXd H(6, 6);
  H.topLeftCorner(3, 3) = rnd.a;
  H.topRightCorner(3, 3) = -rnd.b.transpose();
  H.bottomLeftCorner(3, 3) = rnd.b;
  H.bottomRightCorner(3, 3) = rnd.c;
  const VectorXd direct = -(H * s.concat());
  CHECK((linear_velocity(rnd, s) - direct).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mog_sample: degenerate sigma, mode balance, seed determinism") {
  MoGSpec tight = MoGSpec::grid16(1e-12);
  Rng rng(5);
  const MatrixXd s = mog_sample(tight, 64, rng);
  for (int i = 0; i < s.rows(); ++i) {
    double best = 1e18;
    for (const auto& m : tight.means) best = std::min(best, (s.row(i).transpose() - m).norm());
    CHECK(best < 1e-9);
  }

  // Per-mode counts of 1e5 draws stay within 5 binomial standard deviations.
  MoGSpec spec = MoGSpec::grid16(0.05);
  Rng rng2(123);
  const int n = 100000;
  const MatrixXd big = mog_sample(spec, n, rng2);
  std::vector<int> counts(spec.means.size(), 0);
  for (int i = 0; i < n; ++i) {
    int arg = 0;
    double best = 1e18;
    for (std::size_t m = 0; m < spec.means.size(); ++m) {
      const double d = (big.row(i).transpose() - spec.means[m]).norm();
      if (d < best) { best = d; arg = static_cast<int>(m); }
    }
    counts[static_cast<std::size_t>(arg)]++;
  }
  const double p = 1.0 / 16.0;
  const double sd = std::sqrt(n * p * (1 - p));
  for (const int c : counts) CHECK(std::abs(c - n * p) < 5.0 * sd);

  Rng ra(777), rb(777);
  const MatrixXd sa = mog_sample(spec, 32, ra);
  const MatrixXd sb = mog_sample(spec, 32, rb);
  CHECK(std::memcmp(sa.data(), sb.data(), sizeof(double) * sa.size()) == 0);
}

TEST_CASE("gan losses: uninformative discriminator gives (log 4, log 2)") {
  GanGame game = tiny_game();
  GameState s = game.initial_state();
  // Zero the discriminator output layer: logit identically 0.
  // theta layout: W0 (2x4), b0 (4), W1 (4x1), b1 (1).
  s.theta.tail(5).setZero();
  Rng rng(3);
  const GanBatch batch = game.draw_batch(rng);
  const LossPair l = game.losses(s, batch);
  CHECK(l.l_d == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(l.l_g == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("gan losses: perfect discriminator drives l_D to zero under the clamp") {
  MLPSpec disc{2, {2}, 1, Activation::Relu, 0.2, 1};
  MLPSpec gen{3, {2}, 2, Activation::Relu, 0.2, 2};
  GanGame game(disc, gen, MoGSpec::grid16(0.05), 3, 4);
  GameState s = game.initial_state();
  // Generator constant at (-1, 0): zero weights, output bias (-1, 0).
  s.phi.setZero();
  s.phi(s.phi.size() - 2) = -1.0;
  // Discriminator approximates logit = K^2 * x0 via two one-sided ReLU rails.
  const double K = 50.0;
  s.theta.setZero();
  // W0 (2x2) column-major: h0 = K*x0, h1 = -K*x0.
  s.theta(0) = K;   // W0(0,0)
  s.theta(1) = 0.0; // W0(1,0)
  s.theta(2) = -K;  // W0(0,1)
  s.theta(3) = 0.0; // W0(1,1)
  // W1 (2x1): logit = K*h0 - K*h1.
  s.theta(6) = K;
  s.theta(7) = -K;
  MatrixXd x(4, 2), z(4, 3);
  x.setZero();
  x.col(0).setConstant(1.0);  // data at x0 = +1 -> logit +2500
  z.setZero();
  const LossPair l = game.losses(s, GanBatch{x, z});
  CHECK(l.l_d == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(l.l_g == doctest::Approx(-std::log(1e-12)));  // clamp floor semantics
  CHECK(std::isfinite(l.l_g));
}

TEST_CASE("gan gradients match finite differences of the losses") {
  GanGame game = tiny_game();
  GameState s0 = game.initial_state();
  Rng rng(17);
  const GanBatch batch = game.draw_batch(rng);

  const VectorXd v = game.velocity(s0, batch);
  REQUIRE(v.size() == game.theta_dim() + game.phi_dim());

  auto f_d = [&](const VectorXd& th) {
    GameState s = s0;
    s.theta = th;
    return game.losses(s, batch).l_d;
  };
  auto f_g = [&](const VectorXd& ph) {
    GameState s = s0;
    s.phi = ph;
    return game.losses(s, batch).l_g;
  };
  const VectorXd fd_d = oracles::fd_gradient(f_d, s0.theta);
  const VectorXd fd_g = oracles::fd_gradient(f_g, s0.phi);
  const VectorXd got_d = -v.head(game.theta_dim());
  const VectorXd got_g = -v.tail(game.phi_dim());
  CHECK((got_d - fd_d).norm() / fd_d.norm() < 1e-5);
  CHECK((got_g - fd_g).norm() / fd_g.norm() < 1e-5);
}

TEST_CASE("gan losses are invariant under row permutations within each batch") {
  GanGame game = tiny_game();
  const GameState s = game.initial_state();
  Rng rng(23);
  GanBatch batch = game.draw_batch(rng);
  const LossPair l1 = game.losses(s, batch);

  GanBatch perm = batch;
  std::vector<int> order(static_cast<std::size_t>(batch.x.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  for (std::size_t i = 0; i < order.size(); ++i) {
    perm.x.row(static_cast<int>(i)) = batch.x.row(order[i]);
    perm.z.row(static_cast<int>(i)) = batch.z.row(order[i]);
  }
  const LossPair l2 = game.losses(s, perm);
  CHECK(l2.l_d == doctest::Approx(l1.l_d).epsilon(1e-12));
  CHECK(l2.l_g == doctest::Approx(l1.l_g).epsilon(1e-12));
}

TEST_CASE("doubling alpha doubles exactly the theta segment of velocity") {
  GanGame g1 = tiny_game(1.0, 1.0);
  GanGame g2 = tiny_game(2.0, 1.0);
  const GameState s = g1.initial_state();
  Rng rng(31);
  const GanBatch batch = g1.draw_batch(rng);
  const VectorXd v1 = g1.velocity(s, batch);
  const VectorXd v2 = g2.velocity(s, batch);
  const Eigen::Index td = g1.theta_dim();
  CHECK((v2.head(td) - 2.0 * v1.head(td)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((v2.tail(v2.size() - td) - v1.tail(v1.size() - td)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gan reg_grad matches finite differences of the gradient-norm scalar") {
  GanGame game = tiny_game();
  GameState s0 = game.initial_state();
  Rng rng(41);
  const GanBatch batch = game.draw_batch(rng);

  auto norm2 = [&](const VectorXd& th) {
    GameState s = s0;
    s.theta = th;
    const VectorXd v = game.velocity(s, batch);
    return v.tail(game.phi_dim()).squaredNorm();  // beta=1: ||dl_G/dphi||^2
  };
  const VectorXd fd = oracles::fd_gradient(norm2, s0.theta, 1e-5);
  const VectorXd got = game.reg_grad(s0, batch);
  CHECK((got - fd).norm() / (fd.norm() + 1e-300) < 1e-4);
}

TEST_CASE("generate matches the graph forward pass and batches are reproducible") {
  GanGame game = tiny_game();
  const GameState s = game.initial_state();
  Rng r1(55), r2(55);
  const GanBatch b1 = game.draw_batch(r1);
  const GanBatch b2 = game.draw_batch(r2);
  CHECK(std::memcmp(b1.x.data(), b2.x.data(), sizeof(double) * b1.x.size()) == 0);
  CHECK(std::memcmp(b1.z.data(), b2.z.data(), sizeof(double) * b1.z.size()) == 0);

  // Velocity evaluated twice is bitwise identical.
  const VectorXd va = game.velocity(s, b1);
  const VectorXd vb = game.velocity(s, b1);
  CHECK(std::memcmp(va.data(), vb.data(), sizeof(double) * va.size()) == 0);

  // discriminate() agrees with a hand-computed logit for the zeroed output
  // layer (logit == 0 regardless of input).
  GameState sz = s;
  sz.theta.tail(5).setZero();
  const VectorXd logits = game.discriminate(sz, b1.x);
  CHECK(logits.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("construction guards") {
  MLPSpec no_hidden{2, {}, 1, Activation::Relu, 0.2, 1};
  MLPSpec gen{3, {4}, 2, Activation::Relu, 0.2, 2};
  CHECK_THROWS_AS(GanGame(no_hidden, gen, MoGSpec::grid16(), 3, 4), std::invalid_argument);
  MLPSpec disc{2, {4}, 1, Activation::Relu, 0.2, 1};
  MLPSpec bad_gen{3, {4}, 3, Activation::Relu, 0.2, 2};  // output dim != 2
  CHECK_THROWS_AS(GanGame(disc, bad_gen, MoGSpec::grid16(), 3, 4), std::invalid_argument);
  CHECK_THROWS_AS(ToyGame(-0.5), std::invalid_argument);
}
