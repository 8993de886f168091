#include "odegan/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace odegan::ad {

namespace {

bool is_scalar(const Node& n) { return n.rows == 1 && n.cols == 1; }

double stable_sigmoid(double v) {
  if (v >= 0.0) {
    const double e = std::exp(-v);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

const char* kind_name(Kind kind) {
  switch (kind) {
    case Kind::Input: return "input";
    case Kind::Constant: return "constant";
    case Kind::Add: return "add";
    case Kind::Sub: return "sub";
    case Kind::Mul: return "mul";
    case Kind::MatMul: return "matmul";
    case Kind::Sum: return "sum";
    case Kind::Mean: return "mean";
    case Kind::Square: return "square";
    case Kind::Relu: return "relu";
    case Kind::LeakyRelu: return "leaky_relu";
    case Kind::Sigmoid: return "sigmoid";
    case Kind::Log: return "log";
    case Kind::Exp: return "exp";
    case Kind::Neg: return "neg";
    case Kind::Step: return "step";
    case Kind::Recip: return "recip";
    case Kind::Transpose: return "transpose";
  }
  return "?";
}

void Graph::check(NodeId id) const {
  if (id >= nodes_.size()) throw ShapeError("node id out of range");
}

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::input(std::string name, Eigen::Index rows, Eigen::Index cols) {
  if (rows < 1 || cols < 1) throw ShapeError("input '" + name + "': dimensions must be positive");
  if (inputs_.count(name)) throw ShapeError("duplicate input name '" + name + "'");
  Node n;
  n.kind = Kind::Input;
  n.rows = rows;
  n.cols = cols;
  n.name = name;
  const NodeId id = push(std::move(n));
  inputs_.emplace(std::move(name), id);
  return id;
}

NodeId Graph::constant(Value v) {
  Node n;
  n.kind = Kind::Constant;
  n.rows = v.rows();
  n.cols = v.cols();
  n.value = std::move(v);
  return push(std::move(n));
}

NodeId Graph::scalar(double v) {
  Value m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

NodeId Graph::elementwise(Kind kind, NodeId x, NodeId y) {
  check(x);
  check(y);
  const Node& nx = nodes_[x];
  const Node& ny = nodes_[y];
  Node n;
  n.kind = kind;
  n.a = x;
  n.b = y;
  if (nx.rows == ny.rows && nx.cols == ny.cols) {
    n.rows = nx.rows;
    n.cols = nx.cols;
  } else if (is_scalar(nx)) {
    n.rows = ny.rows;
    n.cols = ny.cols;
  } else if (is_scalar(ny)) {
    n.rows = nx.rows;
    n.cols = nx.cols;
  } else {
    throw ShapeError(std::string(kind_name(kind)) + ": incompatible shapes " +
                     std::to_string(nx.rows) + "x" + std::to_string(nx.cols) + " vs " +
                     std::to_string(ny.rows) + "x" + std::to_string(ny.cols));
  }
  return push(std::move(n));
}

NodeId Graph::unary(Kind kind, NodeId x, double param) {
  check(x);
  const Node& nx = nodes_[x];
  Node n;
  n.kind = kind;
  n.a = x;
  n.param = param;
  switch (kind) {
    case Kind::Sum:
    case Kind::Mean:
      n.rows = 1;
      n.cols = 1;
      break;
    case Kind::Transpose:
      n.rows = nx.cols;
      n.cols = nx.rows;
      break;
    default:
      n.rows = nx.rows;
      n.cols = nx.cols;
      break;
  }
  return push(std::move(n));
}

NodeId Graph::add(NodeId x, NodeId y) { return elementwise(Kind::Add, x, y); }
NodeId Graph::sub(NodeId x, NodeId y) { return elementwise(Kind::Sub, x, y); }
NodeId Graph::mul(NodeId x, NodeId y) { return elementwise(Kind::Mul, x, y); }

NodeId Graph::matmul(NodeId x, NodeId y) {
  check(x);
  check(y);
  const Node& nx = nodes_[x];
  const Node& ny = nodes_[y];
  if (nx.cols != ny.rows) {
    throw ShapeError("matmul: inner dimensions differ (" + std::to_string(nx.cols) + " vs " +
                     std::to_string(ny.rows) + ")");
  }
  Node n;
  n.kind = Kind::MatMul;
  n.a = x;
  n.b = y;
  n.rows = nx.rows;
  n.cols = ny.cols;
  return push(std::move(n));
}

NodeId Graph::sum(NodeId x) { return unary(Kind::Sum, x); }
NodeId Graph::mean(NodeId x) { return unary(Kind::Mean, x); }
NodeId Graph::square(NodeId x) { return unary(Kind::Square, x); }
NodeId Graph::relu(NodeId x) { return unary(Kind::Relu, x); }
NodeId Graph::leaky_relu(NodeId x, double slope) { return unary(Kind::LeakyRelu, x, slope); }
NodeId Graph::sigmoid(NodeId x) { return unary(Kind::Sigmoid, x); }
NodeId Graph::log(NodeId x) { return unary(Kind::Log, x); }
NodeId Graph::exp(NodeId x) { return unary(Kind::Exp, x); }
NodeId Graph::neg(NodeId x) { return unary(Kind::Neg, x); }
NodeId Graph::step(NodeId x) { return unary(Kind::Step, x); }
NodeId Graph::recip(NodeId x) { return unary(Kind::Recip, x); }
NodeId Graph::transpose(NodeId x) { return unary(Kind::Transpose, x); }

NodeId Graph::find_input(std::string_view name) const {
  const auto it = inputs_.find(name);
  return it == inputs_.end() ? kNoNode : it->second;
}

std::string node_path(const Graph& g, NodeId id) {
  std::string out;
  int depth = 0;
  while (id != kNoNode && depth < 6) {
    const Node& n = g.node(id);
    if (!out.empty()) out += " <- ";
    out += kind_name(n.kind);
    out += "#" + std::to_string(id);
    if (n.kind == Kind::Input) out += "[" + n.name + "]";
    id = n.a;
    ++depth;
  }
  return out;
}

EvalPlan make_plan(const Graph& g, const std::vector<NodeId>& roots) {
  EvalPlan plan;
  std::vector<char> visited(g.size(), 0);
  // Iterative DFS post-order: second visit of a frame emits the node.
  std::vector<std::pair<NodeId, bool>> stack;
  for (const NodeId root : roots) {
    if (root >= g.size()) throw ShapeError("plan root out of range");
    stack.emplace_back(root, false);
    while (!stack.empty()) {
      auto [id, emitted] = stack.back();
      stack.pop_back();
      if (emitted) {
        plan.order.push_back(id);
        continue;
      }
      if (visited[id]) continue;
      visited[id] = 1;
      stack.emplace_back(id, true);
      const Node& n = g.node(id);
      if (n.b != kNoNode && !visited[n.b]) stack.emplace_back(n.b, false);
      if (n.a != kNoNode && !visited[n.a]) stack.emplace_back(n.a, false);
    }
  }
  return plan;
}

void execute(const Graph& g, const EvalPlan& plan, const Bindings& bindings, Workspace& ws) {
  if (ws.values.size() < g.size()) ws.values.resize(g.size());
  for (const NodeId id : plan.order) {
    const Node& n = g.node(id);
    Value& out = ws.values[id];
    switch (n.kind) {
      case Kind::Input: {
        const auto it = bindings.find(n.name);
        if (it == bindings.end()) throw BindingError("unbound input '" + n.name + "'");
        if (it->second.rows() != n.rows || it->second.cols() != n.cols) {
          throw ShapeError("binding for '" + n.name + "' has shape " +
                           std::to_string(it->second.rows()) + "x" +
                           std::to_string(it->second.cols()) + ", expected " +
                           std::to_string(n.rows) + "x" + std::to_string(n.cols));
        }
        out = it->second;
        break;
      }
      case Kind::Constant:
        out = n.value;
        break;
      case Kind::Add:
      case Kind::Sub:
      case Kind::Mul: {
        const Value& x = ws.values[n.a];
        const Value& y = ws.values[n.b];
        const bool xs = x.size() == 1 && (n.rows != 1 || n.cols != 1);
        const bool ys = y.size() == 1 && (n.rows != 1 || n.cols != 1);
        if (n.kind == Kind::Add) {
          if (xs) out = (x(0, 0) + y.array()).matrix();
          else if (ys) out = (x.array() + y(0, 0)).matrix();
          else out = x + y;
        } else if (n.kind == Kind::Sub) {
          if (xs) out = (x(0, 0) - y.array()).matrix();
          else if (ys) out = (x.array() - y(0, 0)).matrix();
          else out = x - y;
        } else {
          if (xs) out = x(0, 0) * y;
          else if (ys) out = y(0, 0) * x;
          else out = x.cwiseProduct(y);
        }
        break;
      }
      case Kind::MatMul:
        out.noalias() = ws.values[n.a] * ws.values[n.b];
        break;
      case Kind::Sum:
        out.resize(1, 1);
        out(0, 0) = ws.values[n.a].sum();
        break;
      case Kind::Mean:
        out.resize(1, 1);
        out(0, 0) = ws.values[n.a].mean();
        break;
      case Kind::Square:
        out = ws.values[n.a].array().square().matrix();
        break;
      case Kind::Relu:
        out = ws.values[n.a].array().max(0.0).matrix();
        break;
      case Kind::LeakyRelu: {
        const double s = n.param;
        out = ws.values[n.a].unaryExpr([s](double v) { return v > 0.0 ? v : s * v; });
        break;
      }
      case Kind::Sigmoid:
        out = ws.values[n.a].unaryExpr([](double v) { return stable_sigmoid(v); });
        break;
      case Kind::Log:
        out = ws.values[n.a].unaryExpr(
            [](double v) { return std::log(std::max(v, kLogClamp)); });
        break;
      case Kind::Exp:
        out = ws.values[n.a].array().exp().matrix();
        break;
      case Kind::Neg:
        out = -ws.values[n.a];
        break;
      case Kind::Step:
        out = ws.values[n.a].unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
        break;
      case Kind::Recip:
        out = ws.values[n.a].unaryExpr(
            [](double v) { return 1.0 / std::max(v, kLogClamp); });
        break;
      case Kind::Transpose:
        out = ws.values[n.a].transpose();
        break;
    }
    if (!out.allFinite()) {
      throw NonFiniteError("non-finite value at " + node_path(g, id));
    }
  }
}

Value evaluate(const Graph& g, NodeId root, const Bindings& bindings) {
  const EvalPlan plan = make_plan(g, {root});
  Workspace ws;
  execute(g, plan, bindings, ws);
  return ws.values[root];
}

std::vector<NodeId> backward(Graph& g, NodeId root, const std::vector<NodeId>& wrt) {
  const Node& r = g.node(root);
  if (!is_scalar(r)) throw ShapeError("backward: root must be scalar, got " +
                                      std::to_string(r.rows) + "x" + std::to_string(r.cols));
  const std::size_t snapshot = g.size();
  const EvalPlan order = make_plan(g, {root});

  std::vector<NodeId> adj(snapshot, kNoNode);
  adj[root] = g.scalar(1.0);

  // Adds a contribution to a node's adjoint, reducing a full-shape
  // contribution to 1x1 when the operand was scalar-broadcast.
  auto accumulate = [&g, &adj](NodeId target, NodeId contrib) {
    const Node& t = g.node(target);
    const Node& c = g.node(contrib);
    if (c.rows != t.rows || c.cols != t.cols) {
      if (is_scalar(t)) contrib = g.sum(contrib);
      else throw ShapeError("backward: adjoint shape mismatch");
    }
    adj[target] = adj[target] == kNoNode ? contrib : g.add(adj[target], contrib);
  };

  for (auto it = order.order.rbegin(); it != order.order.rend(); ++it) {
    const NodeId id = *it;
    const NodeId a = adj[id];
    if (a == kNoNode) continue;
    // Copy the node: accumulate() appends and may invalidate references.
    const Node n = g.node(id);
    switch (n.kind) {
      case Kind::Input:
      case Kind::Constant:
      case Kind::Step:  // derivative defined as zero everywhere
        break;
      case Kind::Add:
        accumulate(n.a, a);
        accumulate(n.b, a);
        break;
      case Kind::Sub:
        accumulate(n.a, a);
        accumulate(n.b, g.neg(a));
        break;
      case Kind::Mul:
        accumulate(n.a, g.mul(a, n.b));
        accumulate(n.b, g.mul(a, n.a));
        break;
      case Kind::MatMul:
        accumulate(n.a, g.matmul(a, g.transpose(n.b)));
        accumulate(n.b, g.matmul(g.transpose(n.a), a));
        break;
      case Kind::Sum: {
        const Node& op = g.node(n.a);
        accumulate(n.a, g.mul(g.constant(Value::Ones(op.rows, op.cols)), a));
        break;
      }
      case Kind::Mean: {
        const Node& op = g.node(n.a);
        const double inv = 1.0 / static_cast<double>(op.rows * op.cols);
        accumulate(n.a, g.mul(g.constant(Value::Constant(op.rows, op.cols, inv)), a));
        break;
      }
      case Kind::Square:
        accumulate(n.a, g.mul(a, g.mul(n.a, g.scalar(2.0))));
        break;
      case Kind::Relu:
        accumulate(n.a, g.mul(a, g.step(n.a)));
        break;
      case Kind::LeakyRelu: {
        // slope s below zero, 1 above: derivative = s + (1-s)*step(x).
        const NodeId d = g.add(g.scalar(n.param), g.mul(g.scalar(1.0 - n.param), g.step(n.a)));
        accumulate(n.a, g.mul(a, d));
        break;
      }
      case Kind::Sigmoid: {
        const NodeId d = g.mul(id, g.sub(g.scalar(1.0), id));  // sigma(1-sigma)
        accumulate(n.a, g.mul(a, d));
        break;
      }
      case Kind::Log: {
        // Derivative of log(max(x, clamp)): 1/x above the clamp, 0 below.
        const NodeId gate = g.step(g.sub(n.a, g.scalar(kLogClamp)));
        accumulate(n.a, g.mul(a, g.mul(gate, g.recip(n.a))));
        break;
      }
      case Kind::Exp:
        accumulate(n.a, g.mul(a, id));
        break;
      case Kind::Neg:
        accumulate(n.a, g.neg(a));
        break;
      case Kind::Recip: {
        const NodeId gate = g.step(g.sub(n.a, g.scalar(kLogClamp)));
        accumulate(n.a, g.mul(a, g.mul(gate, g.neg(g.mul(id, id)))));
        break;
      }
      case Kind::Transpose:
        accumulate(n.a, g.transpose(a));
        break;
    }
  }

  std::vector<NodeId> out;
  out.reserve(wrt.size());
  for (const NodeId w : wrt) {
    if (w >= snapshot) throw ShapeError("backward: wrt node out of range");
    if (adj[w] != kNoNode) {
      out.push_back(adj[w]);
    } else {
      const Node& wn = g.node(w);
      out.push_back(g.constant(Value::Zero(wn.rows, wn.cols)));
    }
  }
  return out;
}

namespace {

std::vector<NodeId> input_ids(const Graph& g, const std::vector<std::string>& names) {
  std::vector<NodeId> ids;
  ids.reserve(names.size());
  for (const auto& name : names) {
    const NodeId id = g.find_input(name);
    if (id == kNoNode) throw BindingError("unknown input '" + name + "'");
    ids.push_back(id);
  }
  return ids;
}

}  // namespace

Gradients gradient(Graph& g, NodeId root, const Bindings& bindings,
                   const std::vector<std::string>& wrt) {
  const std::vector<NodeId> adj = backward(g, root, input_ids(g, wrt));
  Workspace ws;
  execute(g, make_plan(g, adj), bindings, ws);
  Gradients out;
  for (std::size_t i = 0; i < wrt.size(); ++i) out.by_input[wrt[i]] = ws.values[adj[i]];
  return out;
}

Gradients grad_of_grad_norm(Graph& g, NodeId root, const Bindings& bindings,
                            const std::vector<std::string>& inner,
                            const std::vector<std::string>& outer) {
  for (const auto& name : inner) {
    if (std::find(outer.begin(), outer.end(), name) != outer.end()) {
      throw Error("grad_of_grad_norm: input '" + name + "' appears in both sets");
    }
  }
  const std::vector<NodeId> ginner = backward(g, root, input_ids(g, inner));
  NodeId norm2 = kNoNode;
  for (const NodeId gi : ginner) {
    const NodeId term = g.sum(g.square(gi));
    norm2 = norm2 == kNoNode ? term : g.add(norm2, term);
  }
  const std::vector<NodeId> gouter = backward(g, norm2, input_ids(g, outer));
  Workspace ws;
  execute(g, make_plan(g, gouter), bindings, ws);
  Gradients out;
  for (std::size_t i = 0; i < outer.size(); ++i) out.by_input[outer[i]] = ws.values[gouter[i]];
  return out;
}

Value hessian(Graph& g, NodeId root, const Bindings& bindings,
              const std::vector<std::string>& wrt) {
  const std::vector<NodeId> ids = input_ids(g, wrt);
  Eigen::Index total = 0;
  for (const NodeId id : ids) {
    const Node& n = g.node(id);
    total += n.rows * n.cols;
  }
  if (total > kDenseGuard) {
    throw GuardError("hessian: dimension " + std::to_string(total) + " exceeds dense guard " +
                     std::to_string(kDenseGuard));
  }

  const std::vector<NodeId> grads = backward(g, root, ids);

  // One scalar per flat index: s = sum(grad .* onehot); its gradient is one
  // Hessian row. All rows are built first and evaluated in a single pass.
  std::vector<std::vector<NodeId>> rows;
  rows.reserve(static_cast<std::size_t>(total));
  std::vector<NodeId> all_roots;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    // Copy the dimensions: graph building below reallocates the node arena.
    const Eigen::Index nr = g.node(ids[k]).rows;
    const Eigen::Index nc = g.node(ids[k]).cols;
    const Eigen::Index sz = nr * nc;
    for (Eigen::Index i = 0; i < sz; ++i) {
      Value onehot = Value::Zero(nr, nc);
      onehot.data()[i] = 1.0;  // column-major flat index
      const NodeId s = g.sum(g.mul(grads[k], g.constant(std::move(onehot))));
      rows.push_back(backward(g, s, ids));
      for (const NodeId r : rows.back()) all_roots.push_back(r);
    }
  }

  Workspace ws;
  execute(g, make_plan(g, all_roots), bindings, ws);

  Value H(total, total);
  for (Eigen::Index r = 0; r < total; ++r) {
    Eigen::Index col = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const Value& block = ws.values[rows[static_cast<std::size_t>(r)][k]];
      const Eigen::Index sz = block.rows() * block.cols();
      H.row(r).segment(col, sz) =
          Eigen::Map<const Eigen::VectorXd>(block.data(), sz).transpose();
      col += sz;
    }
  }
  return H;
}

}  // namespace odegan::ad
