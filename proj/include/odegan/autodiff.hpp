// Reverse-mode differentiation over dense 64-bit matrices.
//
// Expressions live in an append-only arena (Graph). Differentiation is a
// graph transformation: backward() appends the adjoint computation as
// ordinary nodes, so second-order gradients fall out of running backward()
// on a first backward pass. ReLU's derivative is encoded with a step node
// whose own derivative is zero, which is exactly the subgradient convention
// the training dynamics assume away from kinks.
//
// Shapes are fixed at construction. Elementwise ops accept equal shapes or a
// 1x1 scalar against any shape; no other broadcasting exists.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace odegan::ad {

using Value = Eigen::MatrixXd;
using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = static_cast<NodeId>(-1);

// log(x) is evaluated as log(max(x, kLogClamp)) so saturated sigmoids cannot
// produce -inf losses; recip shares the clamp. Gradients are gated to zero in
// the clamped region, matching finite differences of the clamped function.
inline constexpr double kLogClamp = 1e-12;

// Dense second-order computations refuse to build above this total dimension.
inline constexpr int kDenseGuard = 512;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct BindingError : Error {
  using Error::Error;
};
struct NonFiniteError : Error {
  using Error::Error;
};
struct GuardError : Error {
  using Error::Error;
};

enum class Kind : std::uint8_t {
  Input,
  Constant,
  Add,
  Sub,
  Mul,
  MatMul,
  Sum,
  Mean,
  Square,
  Relu,
  LeakyRelu,
  Sigmoid,
  Log,
  Exp,
  Neg,
  // Internal kinds produced by backward(); they are ordinary differentiable
  // nodes so a second backward pass can run over them.
  Step,       // x > 0 ? 1 : 0; derivative defined as 0 everywhere
  Recip,      // 1 / max(x, kLogClamp)
  Transpose,
};

const char* kind_name(Kind kind);

struct Node {
  Kind kind;
  Eigen::Index rows = 1;
  Eigen::Index cols = 1;
  NodeId a = kNoNode;
  NodeId b = kNoNode;
  double param = 0.0;  // leaky_relu slope
  Value value;         // constants only
  std::string name;    // inputs only
};

class Graph {
 public:
  NodeId input(std::string name, Eigen::Index rows, Eigen::Index cols);
  NodeId constant(Value v);
  NodeId scalar(double v);

  NodeId add(NodeId x, NodeId y);
  NodeId sub(NodeId x, NodeId y);
  NodeId mul(NodeId x, NodeId y);
  NodeId matmul(NodeId x, NodeId y);
  NodeId sum(NodeId x);
  NodeId mean(NodeId x);
  NodeId square(NodeId x);
  NodeId relu(NodeId x);
  NodeId leaky_relu(NodeId x, double slope);
  NodeId sigmoid(NodeId x);
  NodeId log(NodeId x);
  NodeId exp(NodeId x);
  NodeId neg(NodeId x);
  NodeId step(NodeId x);
  NodeId recip(NodeId x);
  NodeId transpose(NodeId x);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_[id]; }
  NodeId find_input(std::string_view name) const;
  const std::map<std::string, NodeId, std::less<>>& inputs() const { return inputs_; }

 private:
  NodeId push(Node n);
  NodeId elementwise(Kind kind, NodeId x, NodeId y);
  NodeId unary(Kind kind, NodeId x, double param = 0.0);
  void check(NodeId id) const;

  std::vector<Node> nodes_;
  std::map<std::string, NodeId, std::less<>> inputs_;
};

using Bindings = std::map<std::string, Value, std::less<>>;

struct Gradients {
  std::map<std::string, Value, std::less<>> by_input;
};

// A topologically ordered list of the nodes reachable from a set of roots.
// Building the plan once and re-executing it is the hot path for training.
struct EvalPlan {
  std::vector<NodeId> order;
};

EvalPlan make_plan(const Graph& g, const std::vector<NodeId>& roots);

// Scratch values indexed by NodeId. Reusing one workspace across calls keeps
// matrix allocations out of steady-state evaluation; distinct threads must
// use distinct workspaces.
struct Workspace {
  std::vector<Value> values;
};

// Computes every node in the plan. Throws BindingError/ShapeError for bad
// bindings and NonFiniteError (with a node path) on non-finite intermediates.
void execute(const Graph& g, const EvalPlan& plan, const Bindings& bindings, Workspace& ws);

// One-shot forward evaluation of a single root.
Value evaluate(const Graph& g, NodeId root, const Bindings& bindings);

// Appends the adjoint computation of a scalar-valued root with respect to the
// given nodes; returns one adjoint node per entry of wrt (a zero constant for
// nodes the root does not depend on).
std::vector<NodeId> backward(Graph& g, NodeId root, const std::vector<NodeId>& wrt);

// d(root)/d(input) for each named input, as values.
Gradients gradient(Graph& g, NodeId root, const Bindings& bindings,
                   const std::vector<std::string>& wrt);

// grad_outer ||grad_inner root||^2, via a second backward pass over the first.
Gradients grad_of_grad_norm(Graph& g, NodeId root, const Bindings& bindings,
                            const std::vector<std::string>& inner,
                            const std::vector<std::string>& outer);

// Dense Hessian of a scalar root over the concatenation of the named inputs
// (column-major flattening within each input, inputs in the order given).
// Guarded to kDenseGuard total dimensions.
Value hessian(Graph& g, NodeId root, const Bindings& bindings,
              const std::vector<std::string>& wrt);

// Human-readable chain from a node toward its inputs, for error messages.
std::string node_path(const Graph& g, NodeId id);

}  // namespace odegan::ad
