#include "strdan/network.hpp"

#include <cmath>

#include "strdan/error.hpp"
#include "strdan/random.hpp"

namespace strdan {

const char* head_name(Head head) {
  switch (head) {
    case Head::kId: return "id";
    case Head::kDomain: return "domain";
    case Head::kColor: return "color";
    case Head::kType: return "type";
    case Head::kOrientation: return "orientation";
  }
  return "?";
}

Head parse_head(std::string_view name) {
  for (Head h : kAllHeads) {
    if (name == head_name(h)) return h;
  }
  throw ValueError("unknown head '" + std::string(name) + "'");
}

std::size_t ModelConfig::head_classes(Head head) const {
  switch (head) {
    case Head::kId: return id_classes;
    case Head::kDomain: return domain_classes;
    case Head::kColor: return color_classes;
    case Head::kType: return type_classes;
    case Head::kOrientation: return orientation_bins;
  }
  return 0;
}

std::vector<std::size_t> ModelConfig::layer_dims() const {
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  dims.push_back(embed_dim);
  return dims;
}

void ModelConfig::validate() const {
  for (std::size_t d : layer_dims()) {
    if (d == 0) throw ValueError("model config: layer dimensions must be >= 1");
  }
  if (domain_classes != 2) {
    throw ValueError("model config: the domain head must have exactly 2 classes");
  }
  for (Head h : kAllHeads) {
    if (head_classes(h) == 0) {
      throw ValueError(std::string("model config: head '") + head_name(h) +
                       "' needs at least one class");
    }
  }
}

namespace {

template <typename Params, typename Ptr>
void collect_named(Params& params, std::vector<std::pair<std::string, Ptr>>& out) {
  for (std::size_t k = 0; k < params.embedder.size(); ++k) {
    const std::string prefix = "embed." + std::to_string(k);
    out.emplace_back(prefix + ".weight", &params.embedder[k].weight);
    out.emplace_back(prefix + ".bias", &params.embedder[k].bias);
  }
  for (Head h : kAllHeads) {
    const std::string prefix = std::string("head.") + head_name(h);
    out.emplace_back(prefix + ".weight", &params.head(h).weight);
    out.emplace_back(prefix + ".bias", &params.head(h).bias);
  }
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  collect_named(*this, out);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  collect_named(*this, out);
  return out;
}

std::size_t ModelParams::input_dim() const {
  return embedder.empty() ? 0 : embedder.front().weight.rows();
}

std::size_t ModelParams::embed_dim() const {
  return embedder.empty() ? 0 : embedder.back().weight.cols();
}

bool ModelParams::all_finite() const {
  for (const auto& [name, t] : named()) {
    if (!t->all_finite()) return false;
  }
  return true;
}

namespace {

Layer init_layer(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Layer layer{Tensor(fan_in, fan_out), Tensor(1, fan_out)};
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& w : layer.weight.values()) w = uniform(rng, -bound, bound);
  return layer;
}

}  // namespace

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModelParams params;
  const auto dims = config.layer_dims();
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    params.embedder.push_back(init_layer(dims[k], dims[k + 1], rng));
  }
  for (Head h : kAllHeads) {
    params.head(h) = init_layer(config.embed_dim, config.head_classes(h), rng);
  }
  return params;
}

ParamNodes add_params(ad::Graph& graph, const ModelParams& params) {
  ParamNodes nodes;
  for (std::size_t k = 0; k < params.embedder.size(); ++k) {
    const std::string prefix = "embed." + std::to_string(k);
    nodes.embedder.emplace_back(graph.variable(prefix + ".weight", params.embedder[k].weight),
                                graph.variable(prefix + ".bias", params.embedder[k].bias));
  }
  for (Head h : kAllHeads) {
    const std::string prefix = std::string("head.") + head_name(h);
    nodes.heads[static_cast<std::size_t>(h)] = {
        graph.variable(prefix + ".weight", params.head(h).weight),
        graph.variable(prefix + ".bias", params.head(h).bias)};
  }
  return nodes;
}

ad::Node embed(ad::Graph& graph, const ParamNodes& nodes, ad::Node features) {
  ad::Node x = features;
  for (const auto& [w, b] : nodes.embedder) {
    x = graph.relu(graph.add_bias(graph.matmul(x, w), b));
  }
  return x;
}

ad::Node head_logits(ad::Graph& graph, const ParamNodes& nodes, ad::Node embeddings,
                     Head head) {
  const auto& [w, b] = nodes.heads[static_cast<std::size_t>(head)];
  return graph.add_bias(graph.matmul(embeddings, w), b);
}

namespace {

Tensor affine(const Tensor& x, const Layer& layer) {
  Tensor out = matmul(x, layer.weight);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row_span(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias[c];
  }
  return out;
}

}  // namespace

Tensor embed(const ModelParams& params, const Tensor& features) {
  if (features.cols() != params.input_dim()) {
    throw ShapeError("embed: features have " + std::to_string(features.cols()) +
                     " columns, model expects " + std::to_string(params.input_dim()));
  }
  Tensor x = features;
  for (const Layer& layer : params.embedder) {
    x = affine(x, layer);
    for (double& v : x.values()) v = v > 0.0 ? v : 0.0;
  }
  return x;
}

Tensor head_logits(const ModelParams& params, const Tensor& embeddings, Head head) {
  const Layer& layer = params.head(head);
  if (embeddings.cols() != layer.weight.rows()) {
    throw ShapeError(std::string("head_logits(") + head_name(head) + "): embeddings have " +
                     std::to_string(embeddings.cols()) + " columns, head expects " +
                     std::to_string(layer.weight.rows()));
  }
  return affine(embeddings, layer);
}

Tensor head_logits(const ModelParams& params, const Tensor& embeddings,
                   std::string_view head) {
  return head_logits(params, embeddings, parse_head(head));
}

}  // namespace strdan
