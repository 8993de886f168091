// Loss pairs and velocity fields for the games under study: the scalar
// rotational toy game, linearised games given by their block structure, and a
// mixture-of-Gaussians GAN with the non-saturating loss.
//
// Game evaluators are immutable after construction; their expression graphs
// are built once and shared by copies. Evaluation scratch space is either
// allocated per call (thread-safe default) or supplied by the caller for
// allocation-free inner loops.
#pragma once

#include "odegan/autodiff.hpp"
#include "odegan/rng.hpp"

#include <Eigen/Dense>

#include <memory>
#include <string>
#include <vector>

namespace odegan {

// Partitioned flat parameter vector: discriminator segment theta, generator
// segment phi.
struct GameState {
  Eigen::VectorXd theta;
  Eigen::VectorXd phi;

  Eigen::Index dim() const { return theta.size() + phi.size(); }

  bool finite() const { return theta.allFinite() && phi.allFinite(); }

  Eigen::VectorXd concat() const {
    Eigen::VectorXd v(dim());
    v << theta, phi;
    return v;
  }

  // state + scale * direction, with the direction given as a concatenated
  // vector in (theta, phi) order.
  GameState advanced(const Eigen::VectorXd& direction, double scale) const;

  static GameState from_concat(const Eigen::VectorXd& v, Eigen::Index theta_dim);
};

struct LossPair {
  double l_d = 0.0;
  double l_g = 0.0;
};

// ---------------------------------------------------------------------------
// Toy rotational game: l_D = eps/2 * theta^2 - theta*phi, l_G = theta*phi.
// Velocity and the regulariser gradient run through the autodiff engine so
// the toy game exercises the same machinery as the GAN.
class ToyGame {
 public:
  explicit ToyGame(double epsilon);

  double epsilon() const { return epsilon_; }
  LossPair losses(const GameState& s) const;
  Eigen::VectorXd velocity(const GameState& s) const;
  // grad_theta ||dl_G/dphi||^2 (= 2*theta for this game).
  Eigen::VectorXd reg_grad(const GameState& s) const;
  // -dv/dy, rows (d^2 l_D/dtheta dy; d^2 l_G/dphi dy), via double backward:
  // [[eps, -1], [1, 0]].
  Eigen::MatrixXd dynamics_jacobian(const GameState& s) const;

  static GameState make_state(double theta0, double phi0);

 private:
  struct Impl;
  double epsilon_;
  std::shared_ptr<const Impl> impl_;
};

// ---------------------------------------------------------------------------
// Blocks of a linearised game. The dynamics matrix is assembled as
//   H = [[a, -b^T], [b, c]],  velocity = -H * [theta; phi],
// with b stored as it appears in the lower-left block of H. For the toy game
// (a=[[eps]], b=[[1]], c=[[0]]) this reproduces H = [[eps, -1], [1, 0]].
struct LinearGameBlocks {
  Eigen::MatrixXd a;  // n x n, discriminator curvature
  Eigen::MatrixXd b;  // m x n, coupling
  Eigen::MatrixXd c;  // m x m, generator curvature
};

Eigen::MatrixXd linear_dynamics_matrix(const LinearGameBlocks& blocks);
Eigen::VectorXd linear_velocity(const LinearGameBlocks& blocks, const GameState& s);

// ---------------------------------------------------------------------------
// Mixture of Gaussians data source: equally weighted isotropic modes.
struct MoGSpec {
  std::vector<Eigen::Vector2d> means;
  double std = 0.05;

  // The default 16-mode layout: a 4x4 grid with coordinates in
  // {-1.5, -0.5, 0.5, 1.5}.
  static MoGSpec grid16(double sigma = 0.05);
};

// Each row: uniformly chosen mode mean + std * standard normal pair. Draw
// order per row is (mode index, normal x0, normal x1).
Eigen::MatrixXd mog_sample(const MoGSpec& spec, int n, Rng& rng);

// ---------------------------------------------------------------------------
enum class Activation { Relu, LeakyRelu, Sigmoid };

struct MLPSpec {
  int input_dim = 0;
  std::vector<int> hidden;  // at least one hidden layer
  int output_dim = 0;
  Activation activation = Activation::Relu;
  double leaky_slope = 0.2;
  std::uint64_t seed = 0;

  Eigen::Index parameter_count() const;
};

// ---------------------------------------------------------------------------
struct GanBatch {
  Eigen::MatrixXd x;  // n x 2 data samples
  Eigen::MatrixXd z;  // n x latent_dim prior samples
};

// Two-player GAN on 2-D data. The discriminator outputs a raw logit; the
// logistic function lives in the loss:
//   l_D = -mean log sig(D(x)) - mean log(1 - sig(D(G(z))))
//   l_G = -mean log sig(D(G(z)))
// Velocity is -[alpha * dl_D/dtheta, beta * dl_G/dphi]. The expression graph
// (losses, both gradients, and the double-backprop regulariser gradient) is
// built once per instance for a fixed batch size.
class GanGame {
 public:
  GanGame(MLPSpec discriminator, MLPSpec generator, MoGSpec data, int latent_dim,
          int batch_size, double alpha = 1.0, double beta = 1.0);

  // Fan-in scaled uniform init (+-sqrt(6/fan_in)), zero biases, seeded per
  // player from the MLPSpec seeds.
  GameState initial_state() const;

  GanBatch draw_batch(Rng& rng) const;

  LossPair losses(const GameState& s, const GanBatch& batch,
                  ad::Workspace* ws = nullptr) const;
  Eigen::VectorXd velocity(const GameState& s, const GanBatch& batch,
                           ad::Workspace* ws = nullptr) const;
  // grad_theta ||dl_G/dphi||^2 at the given state (lambda is applied by the
  // caller, per the update rule).
  Eigen::VectorXd reg_grad(const GameState& s, const GanBatch& batch,
                           ad::Workspace* ws = nullptr) const;

  // Losses, raw gradient norms, and velocity from one evaluation pass.
  struct Evaluation {
    LossPair losses;
    double grad_norm_d = 0.0;
    double grad_norm_g = 0.0;
    Eigen::VectorXd velocity;
  };
  Evaluation evaluate(const GameState& s, const GanBatch& batch,
                      ad::Workspace* ws = nullptr) const;

  // -dv/dy: alpha- and beta-scaled loss second derivatives, assembled row
  // blocks (theta rows from l_D, phi rows from l_G). Dense-guarded.
  Eigen::MatrixXd dynamics_jacobian(const GameState& s, const GanBatch& batch) const;
  // d^2 l_D / dtheta^2 (unscaled), dense-guarded on the theta dimension.
  Eigen::MatrixXd disc_loss_hessian(const GameState& s, const GanBatch& batch) const;

  // Plain generator forward pass (no autodiff) for sampling and coverage.
  Eigen::MatrixXd generate(const GameState& s, const Eigen::MatrixXd& z) const;
  // Plain discriminator forward pass returning one logit per row of x.
  Eigen::VectorXd discriminate(const GameState& s, const Eigen::MatrixXd& x) const;

  Eigen::Index theta_dim() const;
  Eigen::Index phi_dim() const;
  int batch_size() const;
  int latent_dim() const;
  double alpha() const;
  double beta() const;
  const MoGSpec& data() const;
  const MLPSpec& discriminator_spec() const;
  const MLPSpec& generator_spec() const;

 private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

// ---------------------------------------------------------------------------
// Operation-style wrappers.
inline LossPair toy_losses(const ToyGame& game, const GameState& s) { return game.losses(s); }
inline Eigen::VectorXd velocity(const ToyGame& game, const GameState& s) {
  return game.velocity(s);
}
inline Eigen::VectorXd velocity(const GanGame& game, const GameState& s, const GanBatch& batch) {
  return game.velocity(s, batch);
}
inline LossPair gan_losses(const GanGame& game, const GameState& s, const Eigen::MatrixXd& x,
                           const Eigen::MatrixXd& z) {
  return game.losses(s, GanBatch{x, z});
}

}  // namespace odegan
