#include "strdan/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace strdan::ad {

namespace {

constexpr double kNormFloor = 1e-12;

double pair_distance(std::span<const double> a, std::span<const double> b,
                     Distance distance) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return distance == Distance::kEuclidean ? std::sqrt(s) : s;
}

// Adds scale * d D(a, b) / d a to grad_a and the opposite to grad_b.
void accumulate_distance_grad(std::span<const double> a, std::span<const double> b,
                              double dist, Distance distance, double scale,
                              std::span<double> grad_a, std::span<double> grad_b) {
  double coef;
  if (distance == Distance::kEuclidean) {
    if (dist <= 0.0) return;  // subgradient 0 at coincident points
    coef = scale / dist;
  } else {
    coef = 2.0 * scale;
  }
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = coef * (a[k] - b[k]);
    grad_a[k] += d;
    grad_b[k] -= d;
  }
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kVariable: return "variable";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kSum: return "sum";
    case OpKind::kRelu: return "relu";
    case OpKind::kGradReversal: return "grad_reversal";
    case OpKind::kL2NormalizeRows: return "l2_normalize_rows";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::kTripletBatchHard: return "triplet_batch_hard";
  }
  return "?";
}

Node Graph::push(OpKind kind, std::vector<std::size_t> inputs, std::string label) {
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) {
      throw NodeError(op_name(kind), "refers to a node outside this graph");
    }
  }
  NodeData node{};
  node.kind = kind;
  node.inputs = std::move(inputs);
  node.label = label.empty()
                   ? std::string(op_name(kind)) + "#" + std::to_string(nodes_.size())
                   : std::move(label);
  nodes_.push_back(std::move(node));
  forward_done_ = false;
  backward_done_ = false;
  return Node{nodes_.size() - 1};
}

const Graph::NodeData& Graph::checked(Node n) const {
  if (n.index >= nodes_.size()) {
    throw ValueError("node index " + std::to_string(n.index) + " out of range");
  }
  return nodes_[n.index];
}

Node Graph::input(std::string name) {
  return push(OpKind::kInput, {}, std::move(name));
}

Node Graph::variable(std::string name, Tensor value) {
  Node n = push(OpKind::kVariable, {}, std::move(name));
  nodes_[n.index].value = std::move(value);
  return n;
}

Node Graph::matmul(Node a, Node b) { return push(OpKind::kMatMul, {a.index, b.index}); }
Node Graph::add_bias(Node x, Node bias) {
  return push(OpKind::kAddBias, {x.index, bias.index});
}
Node Graph::add(Node a, Node b) { return push(OpKind::kAdd, {a.index, b.index}); }
Node Graph::mul(Node a, Node b) { return push(OpKind::kMul, {a.index, b.index}); }

Node Graph::scale(Node x, double factor) {
  Node n = push(OpKind::kScale, {x.index});
  nodes_[n.index].factor = factor;
  return n;
}

Node Graph::sum(Node x) { return push(OpKind::kSum, {x.index}); }
Node Graph::relu(Node x) { return push(OpKind::kRelu, {x.index}); }

Node Graph::grad_reversal(Node x, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ValueError("grad_reversal: lambda must be a finite value >= 0");
  }
  Node n = push(OpKind::kGradReversal, {x.index});
  nodes_[n.index].factor = lambda;
  return n;
}

Node Graph::l2_normalize_rows(Node x) { return push(OpKind::kL2NormalizeRows, {x.index}); }

Node Graph::softmax_cross_entropy(Node logits, std::vector<int> labels,
                                  std::vector<std::uint8_t> mask) {
  if (labels.empty()) {
    throw ValueError("softmax_cross_entropy: empty batch (N = 0)");
  }
  if (!mask.empty() && mask.size() != labels.size()) {
    throw ValueError("softmax_cross_entropy: mask has " + std::to_string(mask.size()) +
                     " entries for " + std::to_string(labels.size()) + " labels");
  }
  Node n = push(OpKind::kSoftmaxCrossEntropy, {logits.index});
  nodes_[n.index].labels = std::move(labels);
  nodes_[n.index].mask = std::move(mask);
  return n;
}

Node Graph::triplet_batch_hard(Node embeddings, std::vector<int> ids,
                               TripletOptions options) {
  if (!(options.margin >= 0.0)) {
    throw ValueError("triplet_batch_hard: margin must be >= 0");
  }
  std::map<int, std::size_t> counts;
  for (int id : ids) ++counts[id];
  if (counts.size() < 2) {
    throw ValueError("triplet_batch_hard: batch needs at least two identities");
  }
  for (const auto& [id, count] : counts) {
    if (count < 2) {
      throw ValueError("triplet_batch_hard: identity " + std::to_string(id) +
                       " has a single sample; no positive exists");
    }
  }
  Node n = push(OpKind::kTripletBatchHard, {embeddings.index});
  nodes_[n.index].labels = std::move(ids);
  nodes_[n.index].triplet = options;
  return n;
}

void Graph::forward(const Bindings& bindings) {
  for (const auto& [name, tensor] : bindings) {
    const bool known = std::any_of(nodes_.begin(), nodes_.end(), [&](const NodeData& n) {
      return (n.kind == OpKind::kInput || n.kind == OpKind::kVariable) && n.label == name;
    });
    if (!known) throw ValueError("binding '" + name + "' matches no leaf of the graph");
  }
  forward_done_ = false;
  backward_done_ = false;
  for (NodeData& node : nodes_) {
    if (node.kind == OpKind::kInput || node.kind == OpKind::kVariable) {
      auto it = bindings.find(node.label);
      if (it == bindings.end()) {
        if (node.kind == OpKind::kInput) throw NodeError(node.label, "input is not bound");
        continue;
      }
      if (!it->second.all_finite()) {
        throw ValueError(node.label + ": bound tensor contains non-finite values");
      }
      node.value = it->second;
      continue;
    }
    evaluate(node);
  }
  forward_done_ = true;
}

void Graph::evaluate(NodeData& node) {
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[node.inputs[k]].value; };
  switch (node.kind) {
    case OpKind::kInput:
    case OpKind::kVariable:
      break;
    case OpKind::kMatMul: {
      if (in(0).cols() != in(1).rows()) {
        throw NodeError(node.label, "cannot multiply " + in(0).shape_string() + " by " +
                                        in(1).shape_string());
      }
      node.value = strdan::matmul(in(0), in(1));
      break;
    }
    case OpKind::kAddBias: {
      const Tensor& x = in(0);
      const Tensor& b = in(1);
      if (b.rows() != 1 || b.cols() != x.cols()) {
        throw NodeError(node.label, "bias " + b.shape_string() +
                                        " does not broadcast over " + x.shape_string());
      }
      node.value = x;
      for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = node.value.row_span(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
      }
      break;
    }
    case OpKind::kAdd:
    case OpKind::kMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (!a.same_shape(b)) {
        throw NodeError(node.label, "operand shapes " + a.shape_string() + " and " +
                                        b.shape_string() + " differ");
      }
      node.value = a;
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (node.kind == OpKind::kAdd) {
          node.value[i] += b[i];
        } else {
          node.value[i] *= b[i];
        }
      }
      break;
    }
    case OpKind::kScale: {
      node.value = in(0);
      for (double& v : node.value.values()) v *= node.factor;
      break;
    }
    case OpKind::kSum: {
      double s = 0.0;
      for (double v : in(0).values()) s += v;
      node.value = Tensor(1, 1, s);
      break;
    }
    case OpKind::kRelu: {
      node.value = in(0);
      for (double& v : node.value.values()) v = v > 0.0 ? v : 0.0;
      break;
    }
    case OpKind::kGradReversal:
      node.value = in(0);
      break;
    case OpKind::kL2NormalizeRows: {
      const Tensor& x = in(0);
      node.value = x;
      node.aux = Tensor(x.rows(), 1);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        double s = 0.0;
        for (double v : x.row_span(r)) s += v * v;
        const double norm = std::max(std::sqrt(s), kNormFloor);
        node.aux(r, 0) = norm;
        for (double& v : node.value.row_span(r)) v /= norm;
      }
      break;
    }
    case OpKind::kSoftmaxCrossEntropy: {
      const Tensor& z = in(0);
      const std::size_t n = z.rows();
      const std::size_t classes = z.cols();
      if (node.labels.size() != n) {
        throw NodeError(node.label, std::to_string(node.labels.size()) + " labels for " +
                                        std::to_string(n) + " logit rows");
      }
      node.aux = Tensor(n, classes);
      double total = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        auto row = z.row_span(r);
        const double shift = *std::max_element(row.begin(), row.end());
        double denom = 0.0;
        for (double v : row) denom += std::exp(v - shift);
        const double log_denom = std::log(denom);
        auto p = node.aux.row_span(r);
        for (std::size_t c = 0; c < classes; ++c) p[c] = std::exp(row[c] - shift) / denom;
        if (!node.mask.empty() && node.mask[r] == 0) continue;
        const int y = node.labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
          throw ValueError(node.label + ": label " + std::to_string(y) + " at row " +
                           std::to_string(r) + " outside [0, " + std::to_string(classes) +
                           ")");
        }
        total -= row[static_cast<std::size_t>(y)] - shift - log_denom;
      }
      node.value = Tensor(1, 1, total / static_cast<double>(n));
      break;
    }
    case OpKind::kTripletBatchHard: {
      const Tensor& v = in(0);
      const std::size_t n = v.rows();
      if (node.labels.size() != n) {
        throw NodeError(node.label, std::to_string(node.labels.size()) + " ids for " +
                                        std::to_string(n) + " embedding rows");
      }
      const Distance kind = node.triplet.distance;
      Tensor dist(n, n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          const double d = pair_distance(v.row_span(i), v.row_span(j), kind);
          dist(i, j) = d;
          dist(j, i) = d;
        }
      }
      node.selection.assign(n, TripletSelection{});
      double total = 0.0;
      for (std::size_t a = 0; a < n; ++a) {
        TripletSelection& s = node.selection[a];
        double hardest_pos = -1.0;
        double hardest_neg = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          if (j == a) continue;
          const double d = dist(a, j);
          if (node.labels[j] == node.labels[a]) {
            if (d > hardest_pos) {
              hardest_pos = d;
              s.positive = j;
            }
          } else if (d < hardest_neg) {
            hardest_neg = d;
            s.negative = j;
          }
        }
        s.positive_distance = hardest_pos;
        s.negative_distance = hardest_neg;
        s.margin_term = node.triplet.margin + hardest_pos - hardest_neg;
        if (s.margin_term > 0.0) total += s.margin_term;
      }
      if (node.triplet.reduction == Reduction::kMean) total /= static_cast<double>(n);
      node.value = Tensor(1, 1, total);
      break;
    }
  }
}

Gradients Graph::backward(Node loss) {
  const NodeData& root = checked(loss);
  if (!forward_done_) throw Error("backward called before forward");
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    throw NodeError(root.label, "backward needs a scalar loss, got " +
                                    root.value.shape_string());
  }
  std::vector<char> reachable(nodes_.size(), 0);
  reachable[loss.index] = 1;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    if (!reachable[i]) continue;
    for (std::size_t in : nodes_[i].inputs) reachable[in] = 1;
  }
  for (NodeData& node : nodes_) node.grad = Tensor(node.value.rows(), node.value.cols());
  nodes_[loss.index].grad[0] = 1.0;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    if (reachable[i]) propagate(nodes_[i]);
  }
  backward_done_ = true;

  Gradients grads;
  for (const NodeData& node : nodes_) {
    if (node.kind == OpKind::kInput || node.kind == OpKind::kVariable) {
      grads[node.label] = node.grad;
    }
  }
  return grads;
}

void Graph::propagate(NodeData& node) {
  const Tensor& g = node.grad;
  auto in_value = [&](std::size_t k) -> const Tensor& { return nodes_[node.inputs[k]].value; };
  auto in_grad = [&](std::size_t k) -> Tensor& { return nodes_[node.inputs[k]].grad; };
  switch (node.kind) {
    case OpKind::kInput:
    case OpKind::kVariable:
      break;
    case OpKind::kMatMul: {
      Tensor da = matmul_nt(g, in_value(1));
      Tensor db = matmul_tn(in_value(0), g);
      Tensor& ga = in_grad(0);
      for (std::size_t i = 0; i < da.size(); ++i) ga[i] += da[i];
      Tensor& gb = in_grad(1);
      for (std::size_t i = 0; i < db.size(); ++i) gb[i] += db[i];
      break;
    }
    case OpKind::kAddBias: {
      Tensor& gx = in_grad(0);
      Tensor& gb = in_grad(1);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) {
          gx(r, c) += g(r, c);
          gb[c] += g(r, c);
        }
      }
      break;
    }
    case OpKind::kAdd: {
      Tensor& ga = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      Tensor& gb = in_grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      break;
    }
    case OpKind::kMul: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      Tensor& ga = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      Tensor& gb = in_grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      break;
    }
    case OpKind::kScale: {
      Tensor& gx = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += node.factor * g[i];
      break;
    }
    case OpKind::kSum: {
      Tensor& gx = in_grad(0);
      for (double& v : gx.values()) v += g[0];
      break;
    }
    case OpKind::kRelu: {
      const Tensor& x = in_value(0);
      Tensor& gx = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] > 0.0) gx[i] += g[i];
      }
      break;
    }
    case OpKind::kGradReversal: {
      const double factor = -node.factor;
      Tensor& gx = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
      break;
    }
    case OpKind::kL2NormalizeRows: {
      Tensor& gx = in_grad(0);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto y = node.value.row_span(r);
        auto gr = g.row_span(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < y.size(); ++c) dot += y[c] * gr[c];
        const double norm = node.aux(r, 0);
        for (std::size_t c = 0; c < y.size(); ++c) gx(r, c) += (gr[c] - y[c] * dot) / norm;
      }
      break;
    }
    case OpKind::kSoftmaxCrossEntropy: {
      const std::size_t n = node.aux.rows();
      const double scale = g[0] / static_cast<double>(n);
      Tensor& gz = in_grad(0);
      for (std::size_t r = 0; r < n; ++r) {
        if (!node.mask.empty() && node.mask[r] == 0) continue;
        auto p = node.aux.row_span(r);
        auto out = gz.row_span(r);
        const auto y = static_cast<std::size_t>(node.labels[r]);
        for (std::size_t c = 0; c < p.size(); ++c) {
          out[c] += scale * (p[c] - (c == y ? 1.0 : 0.0));
        }
      }
      break;
    }
    case OpKind::kTripletBatchHard: {
      const Tensor& v = in_value(0);
      Tensor& gv = in_grad(0);
      double scale = g[0];
      if (node.triplet.reduction == Reduction::kMean) {
        scale /= static_cast<double>(v.rows());
      }
      const Distance kind = node.triplet.distance;
      for (std::size_t a = 0; a < node.selection.size(); ++a) {
        const TripletSelection& s = node.selection[a];
        if (!(s.margin_term > 0.0)) continue;
        accumulate_distance_grad(v.row_span(a), v.row_span(s.positive), s.positive_distance,
                                 kind, scale, gv.row_span(a), gv.row_span(s.positive));
        accumulate_distance_grad(v.row_span(a), v.row_span(s.negative), s.negative_distance,
                                 kind, -scale, gv.row_span(a), gv.row_span(s.negative));
      }
      break;
    }
  }
}

const Tensor& Graph::value(Node n) const {
  const NodeData& node = checked(n);
  if (!forward_done_) throw Error(node.label + ": value requested before forward");
  return node.value;
}

double Graph::scalar(Node n) const {
  const Tensor& v = value(n);
  if (v.size() != 1) throw NodeError(label(n), "not a scalar: " + v.shape_string());
  return v[0];
}

const Tensor& Graph::grad(Node n) const {
  const NodeData& node = checked(n);
  if (!backward_done_) throw Error(node.label + ": gradient requested before backward");
  return node.grad;
}

const Tensor& Graph::probabilities(Node n) const {
  const NodeData& node = checked(n);
  if (node.kind != OpKind::kSoftmaxCrossEntropy) {
    throw NodeError(node.label, "not a cross-entropy node");
  }
  if (!forward_done_) throw Error(node.label + ": probabilities requested before forward");
  return node.aux;
}

std::span<const TripletSelection> Graph::triplet_selection(Node n) const {
  const NodeData& node = checked(n);
  if (node.kind != OpKind::kTripletBatchHard) {
    throw NodeError(node.label, "not a triplet node");
  }
  if (!forward_done_) throw Error(node.label + ": selection requested before forward");
  return node.selection;
}

double finite_difference_check(const ScalarFunction& fn, const Tensor& point, double eps) {
  if (!(eps > 0.0)) throw ValueError("finite_difference_check: eps must be > 0");
  const ValueAndGradient analytic = fn(point);
  if (!analytic.gradient.same_shape(point)) {
    throw ShapeError("finite_difference_check: gradient shape " +
                     analytic.gradient.shape_string() + " differs from point " +
                     point.shape_string());
  }
  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + eps;
    const double up = fn(probe).value;
    probe[i] = point[i] - eps;
    const double down = fn(probe).value;
    probe[i] = point[i];
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic.gradient[i];
    worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
  }
  return worst;
}

ScalarFunction graph_function(GraphBuilder build, std::string leaf, Bindings fixed) {
  return [build = std::move(build), leaf = std::move(leaf),
          fixed = std::move(fixed)](const Tensor& point) {
    Graph g;
    const Node loss = build(g);
    Bindings bindings = fixed;
    bindings[leaf] = point;
    g.forward(bindings);
    Gradients grads = g.backward(loss);
    return ValueAndGradient{g.scalar(loss), std::move(grads.at(leaf))};
  };
}

}  // namespace strdan::ad
