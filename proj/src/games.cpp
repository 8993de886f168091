#include "odegan/games.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace odegan {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

GameState GameState::advanced(const VectorXd& direction, double scale) const {
  if (direction.size() != dim()) throw std::invalid_argument("advanced: direction dim mismatch");
  GameState out;
  out.theta = theta + scale * direction.head(theta.size());
  out.phi = phi + scale * direction.tail(phi.size());
  return out;
}

GameState GameState::from_concat(const VectorXd& v, Index theta_dim) {
  if (theta_dim < 0 || theta_dim > v.size()) {
    throw std::invalid_argument("from_concat: bad theta dimension");
  }
  GameState s;
  s.theta = v.head(theta_dim);
  s.phi = v.tail(v.size() - theta_dim);
  return s;
}

// ---------------------------------------------------------------------------

struct ToyGame::Impl {
  ad::Graph graph;
  ad::NodeId l_d, l_g;
  ad::NodeId grad_d_theta, grad_g_phi, reg_theta;
  ad::EvalPlan plan_losses, plan_velocity, plan_reg;

  explicit Impl(double eps) {
    auto& g = graph;
    const auto th = g.input("theta", 1, 1);
    const auto ph = g.input("phi", 1, 1);
    const auto cross = g.mul(th, ph);
    l_d = g.sub(g.mul(g.scalar(0.5 * eps), g.square(th)), cross);
    l_g = cross;
    grad_d_theta = ad::backward(g, l_d, {th})[0];
    grad_g_phi = ad::backward(g, l_g, {ph})[0];
    const auto norm2 = g.sum(g.square(grad_g_phi));
    reg_theta = ad::backward(g, norm2, {th})[0];
    plan_losses = ad::make_plan(g, {l_d, l_g});
    plan_velocity = ad::make_plan(g, {grad_d_theta, grad_g_phi});
    plan_reg = ad::make_plan(g, {reg_theta});
  }

  ad::Bindings bind(const GameState& s) const {
    if (s.theta.size() != 1 || s.phi.size() != 1) {
      throw std::invalid_argument("ToyGame: state must be one scalar per player");
    }
    ad::Bindings b;
    b["theta"] = MatrixXd::Constant(1, 1, s.theta(0));
    b["phi"] = MatrixXd::Constant(1, 1, s.phi(0));
    return b;
  }
};

ToyGame::ToyGame(double epsilon) : epsilon_(epsilon) {
  if (epsilon < 0.0) throw std::invalid_argument("ToyGame: epsilon must be >= 0");
  impl_ = std::make_shared<const Impl>(epsilon);
}

LossPair ToyGame::losses(const GameState& s) const {
  ad::Workspace ws;
  ad::execute(impl_->graph, impl_->plan_losses, impl_->bind(s), ws);
  return {ws.values[impl_->l_d](0, 0), ws.values[impl_->l_g](0, 0)};
}

VectorXd ToyGame::velocity(const GameState& s) const {
  ad::Workspace ws;
  ad::execute(impl_->graph, impl_->plan_velocity, impl_->bind(s), ws);
  VectorXd v(2);
  v(0) = -ws.values[impl_->grad_d_theta](0, 0);
  v(1) = -ws.values[impl_->grad_g_phi](0, 0);
  return v;
}

VectorXd ToyGame::reg_grad(const GameState& s) const {
  ad::Workspace ws;
  ad::execute(impl_->graph, impl_->plan_reg, impl_->bind(s), ws);
  VectorXd g(1);
  g(0) = ws.values[impl_->reg_theta](0, 0);
  return g;
}

MatrixXd ToyGame::dynamics_jacobian(const GameState& s) const {
  const auto bindings = impl_->bind(s);
  MatrixXd h(2, 2);
  {
    ad::Graph g = impl_->graph;  // hessian appends nodes; work on a copy
    h.row(0) = ad::hessian(g, impl_->l_d, bindings, {"theta", "phi"}).row(0);
  }
  {
    ad::Graph g = impl_->graph;
    h.row(1) = ad::hessian(g, impl_->l_g, bindings, {"theta", "phi"}).row(1);
  }
  return h;
}

GameState ToyGame::make_state(double theta0, double phi0) {
  GameState s;
  s.theta = VectorXd::Constant(1, theta0);
  s.phi = VectorXd::Constant(1, phi0);
  return s;
}

// ---------------------------------------------------------------------------

MatrixXd linear_dynamics_matrix(const LinearGameBlocks& blocks) {
  const Index n = blocks.a.rows();
  const Index m = blocks.c.rows();
  if (blocks.a.cols() != n || blocks.c.cols() != m || blocks.b.rows() != m ||
      blocks.b.cols() != n) {
    throw std::invalid_argument("linear game blocks: inconsistent dimensions");
  }
  MatrixXd H(n + m, n + m);
  H.topLeftCorner(n, n) = blocks.a;
  H.topRightCorner(n, m) = -blocks.b.transpose();
  H.bottomLeftCorner(m, n) = blocks.b;
  H.bottomRightCorner(m, m) = blocks.c;
  return H;
}

VectorXd linear_velocity(const LinearGameBlocks& blocks, const GameState& s) {
  const MatrixXd H = linear_dynamics_matrix(blocks);
  if (s.dim() != H.rows()) throw std::invalid_argument("linear_velocity: state dim mismatch");
  return -(H * s.concat());
}

// ---------------------------------------------------------------------------

MoGSpec MoGSpec::grid16(double sigma) {
  MoGSpec spec;
  spec.std = sigma;
  const double coords[4] = {-1.5, -0.5, 0.5, 1.5};
  for (double cx : coords)
    for (double cy : coords) spec.means.emplace_back(cx, cy);
  return spec;
}

MatrixXd mog_sample(const MoGSpec& spec, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("mog_sample: n must be >= 1");
  if (spec.means.empty() || spec.std <= 0.0) {
    throw std::invalid_argument("mog_sample: need at least one mode and std > 0");
  }
  MatrixXd out(n, 2);
  for (int i = 0; i < n; ++i) {
    const auto& mean = spec.means[rng.index(spec.means.size())];
    out(i, 0) = mean.x() + spec.std * rng.normal();
    out(i, 1) = mean.y() + spec.std * rng.normal();
  }
  return out;
}

// ---------------------------------------------------------------------------

Index MLPSpec::parameter_count() const {
  Index total = 0;
  Index fan_in = input_dim;
  for (const int w : hidden) {
    total += fan_in * w + w;
    fan_in = w;
  }
  total += fan_in * output_dim + output_dim;
  return total;
}

namespace {

std::vector<std::pair<Index, Index>> layer_shapes(const MLPSpec& spec) {
  // Alternating (W: fan_in x width, b: 1 x width) shapes, output layer last.
  std::vector<std::pair<Index, Index>> shapes;
  Index fan_in = spec.input_dim;
  auto push_layer = [&](Index width) {
    shapes.emplace_back(fan_in, width);
    shapes.emplace_back(1, width);
    fan_in = width;
  };
  for (const int w : spec.hidden) push_layer(w);
  push_layer(spec.output_dim);
  return shapes;
}

void validate_mlp(const MLPSpec& spec, const char* who) {
  if (spec.hidden.empty()) {
    throw std::invalid_argument(std::string(who) + ": at least one hidden layer required");
  }
  if (spec.input_dim < 1 || spec.output_dim < 1) {
    throw std::invalid_argument(std::string(who) + ": dimensions must be >= 1");
  }
  for (const int w : spec.hidden) {
    if (w < 1) throw std::invalid_argument(std::string(who) + ": widths must be >= 1");
  }
}

// Seeded fan-in scaled uniform init, biases zero. Weight entries are drawn
// column-major so the draw order matches the flattening convention.
VectorXd init_mlp(const MLPSpec& spec) {
  Rng rng(spec.seed);
  VectorXd params(spec.parameter_count());
  Index at = 0;
  const auto shapes = layer_shapes(spec);
  for (std::size_t l = 0; l < shapes.size(); l += 2) {
    const auto [fan_in, width] = shapes[l];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (Index j = 0; j < fan_in * width; ++j) params(at++) = rng.uniform(-limit, limit);
    for (Index j = 0; j < width; ++j) params(at++) = 0.0;
  }
  return params;
}

void apply_activation(MatrixXd& h, const MLPSpec& spec) {
  switch (spec.activation) {
    case Activation::Relu:
      h = h.array().max(0.0).matrix();
      break;
    case Activation::LeakyRelu: {
      const double s = spec.leaky_slope;
      h = h.unaryExpr([s](double v) { return v > 0.0 ? v : s * v; });
      break;
    }
    case Activation::Sigmoid:
      h = h.unaryExpr([](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
      break;
  }
}

// Plain (non-autodiff) MLP forward pass over a flat parameter vector.
MatrixXd mlp_forward(const MLPSpec& spec, const VectorXd& params, const MatrixXd& x) {
  MatrixXd h = x;
  Index at = 0;
  const auto shapes = layer_shapes(spec);
  for (std::size_t l = 0; l < shapes.size(); l += 2) {
    const auto [fan_in, width] = shapes[l];
    const Eigen::Map<const MatrixXd> W(params.data() + at, fan_in, width);
    at += fan_in * width;
    const Eigen::Map<const Eigen::RowVectorXd> b(params.data() + at, width);
    at += width;
    h = (h * W).rowwise() + b;
    if (l + 2 < shapes.size()) apply_activation(h, spec);
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------

struct GanGame::Impl {
  MLPSpec disc, gen;
  MoGSpec mog;
  int latent = 0;
  int batch = 0;
  double alpha = 1.0, beta = 1.0;

  ad::Graph graph;
  std::vector<std::string> theta_names, phi_names;
  ad::NodeId l_d{ad::kNoNode}, l_g{ad::kNoNode};
  std::vector<ad::NodeId> grad_d, grad_g, reg;
  ad::EvalPlan plan_losses, plan_eval, plan_reg;
  Index theta_total = 0, phi_total = 0;

  Impl(MLPSpec d, MLPSpec gn, MoGSpec m, int latent_dim, int batch_size, double a, double b)
      : disc(std::move(d)), gen(std::move(gn)), mog(std::move(m)), latent(latent_dim),
        batch(batch_size), alpha(a), beta(b) {
    validate_mlp(disc, "discriminator");
    validate_mlp(gen, "generator");
    if (disc.input_dim != 2 || disc.output_dim != 1) {
      throw std::invalid_argument("discriminator must map 2 -> 1 (logit)");
    }
    if (gen.input_dim != latent || gen.output_dim != 2) {
      throw std::invalid_argument("generator must map latent_dim -> 2");
    }
    if (batch < 1) throw std::invalid_argument("batch size must be >= 1");
    if (alpha <= 0.0 || beta <= 0.0) throw std::invalid_argument("alpha, beta must be > 0");
    theta_total = disc.parameter_count();
    phi_total = gen.parameter_count();

    auto& g = graph;
    const auto x = g.input("x", batch, 2);
    const auto z = g.input("z", batch, latent);
    const auto ones = g.constant(MatrixXd::Ones(batch, 1));

    auto build_mlp = [&](const MLPSpec& spec, const std::string& prefix,
                         std::vector<std::string>& names, ad::NodeId in) {
      const auto shapes = layer_shapes(spec);
      ad::NodeId h = in;
      for (std::size_t l = 0; l < shapes.size(); l += 2) {
        const auto [fan_in, width] = shapes[l];
        const std::string wn = prefix + "_W" + std::to_string(l / 2);
        const std::string bn = prefix + "_b" + std::to_string(l / 2);
        const auto W = g.input(wn, fan_in, width);
        const auto bias = g.input(bn, 1, width);
        names.push_back(wn);
        names.push_back(bn);
        h = g.add(g.matmul(h, W), g.matmul(ones, bias));
        if (l + 2 < shapes.size()) {
          switch (spec.activation) {
            case Activation::Relu: h = g.relu(h); break;
            case Activation::LeakyRelu: h = g.leaky_relu(h, spec.leaky_slope); break;
            case Activation::Sigmoid: h = g.sigmoid(h); break;
          }
        }
      }
      return h;
    };

    const auto fake = build_mlp(gen, "g", phi_names, z);
    // The discriminator is built once; both batches pass through the same
    // parameter inputs. Building D twice (on x and on fake) reuses the same
    // input nodes, so gradients accumulate over both terms as they should.
    std::vector<std::string> disc_names;
    const auto shapes_d = layer_shapes(disc);
    std::vector<ad::NodeId> d_params;
    for (std::size_t l = 0; l < shapes_d.size(); l += 2) {
      const auto [fan_in, width] = shapes_d[l];
      const std::string wn = "d_W" + std::to_string(l / 2);
      const std::string bn = "d_b" + std::to_string(l / 2);
      d_params.push_back(g.input(wn, fan_in, width));
      d_params.push_back(g.input(bn, 1, width));
      theta_names.push_back(wn);
      theta_names.push_back(bn);
    }
    auto disc_forward = [&](ad::NodeId in) {
      ad::NodeId h = in;
      for (std::size_t l = 0; l < shapes_d.size(); l += 2) {
        h = g.add(g.matmul(h, d_params[l]), g.matmul(ones, d_params[l + 1]));
        if (l + 2 < shapes_d.size()) {
          switch (disc.activation) {
            case Activation::Relu: h = g.relu(h); break;
            case Activation::LeakyRelu: h = g.leaky_relu(h, disc.leaky_slope); break;
            case Activation::Sigmoid: h = g.sigmoid(h); break;
          }
        }
      }
      return h;
    };

    const auto logit_real = disc_forward(x);
    const auto logit_fake = disc_forward(fake);
    const auto sig_real = g.sigmoid(logit_real);
    const auto sig_fake = g.sigmoid(logit_fake);
    l_d = g.add(g.neg(g.mean(g.log(sig_real))),
                g.neg(g.mean(g.log(g.sub(g.scalar(1.0), sig_fake)))));
    l_g = g.neg(g.mean(g.log(sig_fake)));

    std::vector<ad::NodeId> theta_ids, phi_ids;
    for (const auto& n : theta_names) theta_ids.push_back(g.find_input(n));
    for (const auto& n : phi_names) phi_ids.push_back(g.find_input(n));

    grad_d = ad::backward(g, l_d, theta_ids);
    grad_g = ad::backward(g, l_g, phi_ids);

    ad::NodeId norm2 = ad::kNoNode;
    for (const auto gi : grad_g) {
      const auto term = g.sum(g.square(gi));
      norm2 = norm2 == ad::kNoNode ? term : g.add(norm2, term);
    }
    reg = ad::backward(g, norm2, theta_ids);

    plan_losses = ad::make_plan(g, {l_d, l_g});
    std::vector<ad::NodeId> eval_roots{l_d, l_g};
    eval_roots.insert(eval_roots.end(), grad_d.begin(), grad_d.end());
    eval_roots.insert(eval_roots.end(), grad_g.begin(), grad_g.end());
    plan_eval = ad::make_plan(g, eval_roots);
    plan_reg = ad::make_plan(g, reg);
  }

  ad::Bindings bind(const GameState& s, const GanBatch& b) const {
    if (s.theta.size() != theta_total || s.phi.size() != phi_total) {
      throw std::invalid_argument("GanGame: state dims do not match the networks");
    }
    if (b.x.rows() != batch || b.x.cols() != 2 || b.z.rows() != batch || b.z.cols() != latent) {
      throw std::invalid_argument("GanGame: batch shapes must be batch x 2 and batch x latent");
    }
    ad::Bindings out;
    out["x"] = b.x;
    out["z"] = b.z;
    unpack_segment(out, theta_names, disc, s.theta);
    unpack_segment(out, phi_names, gen, s.phi);
    return out;
  }

  void unpack_segment(ad::Bindings& out, const std::vector<std::string>& names,
                      const MLPSpec& spec, const VectorXd& flat) const {
    const auto shapes = layer_shapes(spec);
    Index at = 0;
    for (std::size_t l = 0; l < shapes.size(); ++l) {
      const auto [r, c] = shapes[l];
      out[names[l]] = Eigen::Map<const MatrixXd>(flat.data() + at, r, c);
      at += r * c;
    }
  }

  // Flattens adjoint values (column-major per parameter) into a segment.
  void flatten(const ad::Workspace& ws, const std::vector<ad::NodeId>& nodes,
               VectorXd& out) const {
    Index at = 0;
    for (const auto id : nodes) {
      const MatrixXd& m = ws.values[id];
      out.segment(at, m.size()) = Eigen::Map<const VectorXd>(m.data(), m.size());
      at += m.size();
    }
  }
};

GanGame::GanGame(MLPSpec discriminator, MLPSpec generator, MoGSpec data, int latent_dim,
                 int batch_size, double alpha, double beta)
    : impl_(std::make_shared<const Impl>(std::move(discriminator), std::move(generator),
                                         std::move(data), latent_dim, batch_size, alpha, beta)) {}

GameState GanGame::initial_state() const {
  GameState s;
  s.theta = init_mlp(impl_->disc);
  s.phi = init_mlp(impl_->gen);
  return s;
}

GanBatch GanGame::draw_batch(Rng& rng) const {
  GanBatch b;
  b.x = mog_sample(impl_->mog, impl_->batch, rng);
  b.z.resize(impl_->batch, impl_->latent);
  for (Index i = 0; i < b.z.rows(); ++i)
    for (Index j = 0; j < b.z.cols(); ++j) b.z(i, j) = rng.normal();
  return b;
}

LossPair GanGame::losses(const GameState& s, const GanBatch& batch, ad::Workspace* ws) const {
  ad::Workspace local;
  ad::Workspace& w = ws ? *ws : local;
  ad::execute(impl_->graph, impl_->plan_losses, impl_->bind(s, batch), w);
  return {w.values[impl_->l_d](0, 0), w.values[impl_->l_g](0, 0)};
}

VectorXd GanGame::velocity(const GameState& s, const GanBatch& batch, ad::Workspace* ws) const {
  return evaluate(s, batch, ws).velocity;
}

GanGame::Evaluation GanGame::evaluate(const GameState& s, const GanBatch& batch,
                                      ad::Workspace* ws) const {
  ad::Workspace local;
  ad::Workspace& w = ws ? *ws : local;
  ad::execute(impl_->graph, impl_->plan_eval, impl_->bind(s, batch), w);
  Evaluation out;
  out.losses = {w.values[impl_->l_d](0, 0), w.values[impl_->l_g](0, 0)};
  VectorXd gd(impl_->theta_total), gg(impl_->phi_total);
  impl_->flatten(w, impl_->grad_d, gd);
  impl_->flatten(w, impl_->grad_g, gg);
  out.grad_norm_d = gd.norm();
  out.grad_norm_g = gg.norm();
  out.velocity.resize(impl_->theta_total + impl_->phi_total);
  out.velocity.head(impl_->theta_total) = -impl_->alpha * gd;
  out.velocity.tail(impl_->phi_total) = -impl_->beta * gg;
  return out;
}

VectorXd GanGame::reg_grad(const GameState& s, const GanBatch& batch, ad::Workspace* ws) const {
  ad::Workspace local;
  ad::Workspace& w = ws ? *ws : local;
  ad::execute(impl_->graph, impl_->plan_reg, impl_->bind(s, batch), w);
  VectorXd g(impl_->theta_total);
  impl_->flatten(w, impl_->reg, g);
  return g;
}

MatrixXd GanGame::dynamics_jacobian(const GameState& s, const GanBatch& batch) const {
  const Index td = impl_->theta_total;
  const Index total = td + impl_->phi_total;
  if (total > ad::kDenseGuard) {
    throw ad::GuardError("dynamics_jacobian: parameter dimension exceeds the dense guard");
  }
  std::vector<std::string> all = impl_->theta_names;
  all.insert(all.end(), impl_->phi_names.begin(), impl_->phi_names.end());
  const auto bindings = impl_->bind(s, batch);
  MatrixXd h(total, total);
  {
    ad::Graph g = impl_->graph;  // hessian appends nodes; work on a copy
    h.topRows(td) = impl_->alpha * ad::hessian(g, impl_->l_d, bindings, all).topRows(td);
  }
  {
    ad::Graph g = impl_->graph;
    h.bottomRows(total - td) =
        impl_->beta * ad::hessian(g, impl_->l_g, bindings, all).bottomRows(total - td);
  }
  return h;
}

MatrixXd GanGame::disc_loss_hessian(const GameState& s, const GanBatch& batch) const {
  if (impl_->theta_total > ad::kDenseGuard) {
    throw ad::GuardError("disc_loss_hessian: theta dimension exceeds the dense guard");
  }
  ad::Graph g = impl_->graph;
  return ad::hessian(g, impl_->l_d, impl_->bind(s, batch), impl_->theta_names);
}

MatrixXd GanGame::generate(const GameState& s, const MatrixXd& z) const {
  if (z.cols() != impl_->latent) throw std::invalid_argument("generate: latent dim mismatch");
  return mlp_forward(impl_->gen, s.phi, z);
}

VectorXd GanGame::discriminate(const GameState& s, const MatrixXd& x) const {
  if (x.cols() != 2) throw std::invalid_argument("discriminate: data dim mismatch");
  return mlp_forward(impl_->disc, s.theta, x).col(0);
}

Index GanGame::theta_dim() const { return impl_->theta_total; }
Index GanGame::phi_dim() const { return impl_->phi_total; }
int GanGame::batch_size() const { return impl_->batch; }
int GanGame::latent_dim() const { return impl_->latent; }
double GanGame::alpha() const { return impl_->alpha; }
double GanGame::beta() const { return impl_->beta; }
const MoGSpec& GanGame::data() const { return impl_->mog; }
const MLPSpec& GanGame::discriminator_spec() const { return impl_->disc; }
const MLPSpec& GanGame::generator_spec() const { return impl_->gen; }

}  // namespace odegan
