#ifndef STRDAN_AUTODIFF_HPP_
#define STRDAN_AUTODIFF_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "strdan/error.hpp"
#include "strdan/tensor.hpp"

// Define-then-run reverse-mode differentiation over 2-D tensors.
//
// A Graph is built by appending nodes; a node only references earlier nodes,
// so creation order is a topological order. forward() binds
// named inputs and evaluates every node, caching values. backward() walks the
// nodes reachable from a scalar loss in reverse creation order, visiting each
// exactly once, and returns a gradient for every leaf (zero for leaves that do
// not reach the loss).
namespace strdan::ad {

struct Node {
  std::size_t index = 0;
  friend bool operator==(Node, Node) = default;
};

enum class OpKind {
  kInput,
  kVariable,
  kMatMul,
  kAddBias,
  kAdd,
  kMul,
  kScale,
  kSum,
  kRelu,
  kGradReversal,
  kL2NormalizeRows,
  kSoftmaxCrossEntropy,
  kTripletBatchHard,
};

const char* op_name(OpKind kind);

enum class Distance { kEuclidean, kSquaredEuclidean };
enum class Reduction { kSum, kMean };

struct TripletOptions {
  double margin = 0.3;
  Distance distance = Distance::kEuclidean;
  Reduction reduction = Reduction::kSum;
};

// Hardest positive / negative picked for one anchor during forward.
struct TripletSelection {
  std::size_t positive = 0;
  std::size_t negative = 0;
  double positive_distance = 0.0;
  double negative_distance = 0.0;
  // margin + positive_distance - negative_distance, before the hinge.
  double margin_term = 0.0;
};

// Thrown when a node cannot be evaluated; carries the offending node label.
class NodeError : public ShapeError {
 public:
  NodeError(std::string node, const std::string& what)
      : ShapeError(node + ": " + what), node_(std::move(node)) {}
  const std::string& node() const { return node_; }

 private:
  std::string node_;
};

using Bindings = std::map<std::string, Tensor>;
using Gradients = std::map<std::string, Tensor>;

class Graph {
 public:
  // Leaves. Inputs must be bound at every forward(); variables carry a value
  // and may optionally be overridden by a binding of the same name.
  Node input(std::string name);
  Node variable(std::string name, Tensor value);

  Node matmul(Node a, Node b);
  // x (N x C) + bias (1 x C), broadcast over rows.
  Node add_bias(Node x, Node bias);
  Node add(Node a, Node b);
  Node mul(Node a, Node b);
  Node scale(Node x, double factor);
  Node sum(Node x);
  Node relu(Node x);
  // Identity forward; backward multiplies the upstream gradient by -lambda.
  Node grad_reversal(Node x, double lambda);
  Node l2_normalize_rows(Node x);

  // Fused softmax + cross-entropy:
  //   L = -(1/N) sum_i mask_i * log softmax(logits_i)[labels_i]
  // An empty mask means every row counts. Rows with mask 0 receive an exact
  // zero gradient and their labels are never read.
  Node softmax_cross_entropy(Node logits, std::vector<int> labels,
                             std::vector<std::uint8_t> mask = {});

  // Batch-hard triplet loss over the rows of `embeddings`.
  Node triplet_batch_hard(Node embeddings, std::vector<int> ids,
                          TripletOptions options = {});

  void forward(const Bindings& bindings = {});
  Gradients backward(Node loss);

  const Tensor& value(Node n) const;
  double scalar(Node n) const;
  const Tensor& grad(Node n) const;
  // Softmax probabilities cached by a cross-entropy node.
  const Tensor& probabilities(Node n) const;
  std::span<const TripletSelection> triplet_selection(Node n) const;

  OpKind kind(Node n) const { return nodes_.at(n.index).kind; }
  const std::string& label(Node n) const { return nodes_.at(n.index).label; }
  std::size_t size() const { return nodes_.size(); }
  bool has_forward() const { return forward_done_; }

 private:
  struct NodeData {
    OpKind kind;
    std::string label;
    std::vector<std::size_t> inputs;
    double factor = 0.0;  // scale factor or reversal lambda
    std::vector<int> labels;
    std::vector<std::uint8_t> mask;
    TripletOptions triplet;
    Tensor value;
    Tensor grad;
    Tensor aux;  // softmax probabilities / row norms
    std::vector<TripletSelection> selection;
  };

  Node push(OpKind kind, std::vector<std::size_t> inputs, std::string label = {});
  const NodeData& checked(Node n) const;
  void evaluate(NodeData& node);
  void propagate(NodeData& node);

  std::vector<NodeData> nodes_;
  bool forward_done_ = false;
  bool backward_done_ = false;
};

struct ValueAndGradient {
  double value = 0.0;
  Tensor gradient;
};

using ScalarFunction = std::function<ValueAndGradient(const Tensor&)>;

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double finite_difference_check(const ScalarFunction& fn, const Tensor& point,
                               double eps);

// Builds a fresh graph per call, binds `leaf` to the evaluation point (on top
// of `fixed`), runs forward/backward and reports the loss and d loss / d leaf.
using GraphBuilder = std::function<Node(Graph&)>;
ScalarFunction graph_function(GraphBuilder build, std::string leaf,
                              Bindings fixed = {});

}  // namespace strdan::ad

#endif  // STRDAN_AUTODIFF_HPP_
