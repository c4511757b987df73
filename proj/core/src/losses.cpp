#include "strdan/losses.hpp"

#include <cmath>
#include <string>

#include "strdan/error.hpp"

namespace strdan {

void LossWeights::validate() const {
  auto check = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ValueError(std::string("loss weights: ") + name + " must be a finite value >= 0");
    }
  };
  check(disjoint_weight, "disjoint_weight");
  check(grl_lambda, "grl_lambda");
  check(triplet_margin, "triplet_margin");
}

ad::Node cross_entropy(ad::Graph& graph, ad::Node logits, std::vector<int> labels) {
  return graph.softmax_cross_entropy(logits, std::move(labels));
}

ad::Node masked_cross_entropy(ad::Graph& graph, ad::Node logits, std::vector<int> labels,
                              std::vector<std::uint8_t> mask) {
  if (mask.size() != labels.size()) {
    throw ValueError("masked_cross_entropy: " + std::to_string(mask.size()) +
                     " mask entries for " + std::to_string(labels.size()) + " labels");
  }
  return graph.softmax_cross_entropy(logits, std::move(labels), std::move(mask));
}

ad::Node domain_loss(ad::Graph& graph, ad::Node embeddings, std::vector<int> domain_labels,
                     double lambda, ad::Node head_weight, ad::Node head_bias) {
  for (std::size_t i = 0; i < domain_labels.size(); ++i) {
    if (domain_labels[i] != 0 && domain_labels[i] != 1) {
      throw ValueError("domain_loss: label " + std::to_string(domain_labels[i]) +
                       " at row " + std::to_string(i) + " is not 0 (real) or 1 (synthetic)");
    }
  }
  const ad::Node reversed = graph.grad_reversal(embeddings, lambda);
  const ad::Node logits = graph.add_bias(graph.matmul(reversed, head_weight), head_bias);
  return graph.softmax_cross_entropy(logits, std::move(domain_labels));
}

ad::Node triplet_batch_hard(ad::Graph& graph, ad::Node embeddings, std::vector<int> ids,
                            const ad::TripletOptions& options) {
  return graph.triplet_batch_hard(embeddings, std::move(ids), options);
}

LossBreakdown TotalLossNodes::breakdown(const ad::Graph& graph) const {
  LossBreakdown b;
  b.id_loss = graph.scalar(id);
  b.triplet_loss = graph.scalar(triplet);
  if (domain) b.domain_loss = graph.scalar(*domain);
  if (color) b.color_loss = graph.scalar(*color);
  if (type) b.type_loss = graph.scalar(*type);
  if (orientation) b.orientation_loss = graph.scalar(*orientation);
  b.total = graph.scalar(total);
  return b;
}

TotalLossNodes total_loss(ad::Graph& graph, const ParamNodes& params, ad::Node embeddings,
                          const BatchTargets& targets, const ModelConfig& model,
                          const LossOptions& options) {
  options.weights.validate();
  const std::size_t n = targets.id_classes.size();
  auto require = [n](std::size_t size, const char* what) {
    if (size != n) {
      throw ValueError(std::string("total_loss: ") + what + " has " + std::to_string(size) +
                       " entries for a batch of " + std::to_string(n));
    }
  };
  require(targets.identities.size(), "identities");
  require(targets.domains.size(), "domains");

  TotalLossNodes out{};
  out.id_logits = head_logits(graph, params, embeddings, Head::kId);
  out.id = cross_entropy(graph, out.id_logits, targets.id_classes);

  ad::Node triplet_input =
      model.triplet_source == TripletSource::kIdLogits ? out.id_logits : embeddings;
  if (model.normalize_embeddings) triplet_input = graph.l2_normalize_rows(triplet_input);
  out.triplet = triplet_batch_hard(
      graph, triplet_input, targets.identities,
      {options.weights.triplet_margin, options.triplet_distance, options.triplet_reduction});

  ad::Node total = graph.add(out.id, out.triplet);

  const auto& [dw, db] = params.heads[static_cast<std::size_t>(Head::kDomain)];
  if (options.enabled.domain) {
    out.domain = domain_loss(graph, embeddings, targets.domains, options.weights.grl_lambda,
                             dw, db);
    total = graph.add(total, *out.domain);
  } else if (options.domain_probe) {
    out.domain_probe = domain_loss(graph, embeddings, targets.domains, 0.0, dw, db);
  }

  const bool any_disjoint =
      options.enabled.color || options.enabled.type || options.enabled.orientation;
  if (any_disjoint) {
    require(targets.mask.size(), "mask");
    std::optional<ad::Node> disjoint;
    auto add_masked = [&](bool enabled, const std::vector<int>& labels, Head head,
                          const char* what) -> std::optional<ad::Node> {
      if (!enabled) return std::nullopt;
      require(labels.size(), what);
      const ad::Node logits = head_logits(graph, params, embeddings, head);
      const ad::Node loss = masked_cross_entropy(graph, logits, labels, targets.mask);
      disjoint = disjoint ? graph.add(*disjoint, loss) : loss;
      return loss;
    };
    out.color = add_masked(options.enabled.color, targets.colors, Head::kColor, "colors");
    out.type = add_masked(options.enabled.type, targets.types, Head::kType, "types");
    out.orientation = add_masked(options.enabled.orientation, targets.orientation_bins,
                                 Head::kOrientation, "orientation_bins");
    total = graph.add(total, graph.scale(*disjoint, options.weights.disjoint_weight));
  }

  out.total = total;
  out.objective = out.domain_probe ? graph.add(total, *out.domain_probe) : total;
  // The domain logits are useful for monitoring even when no domain term exists.
  out.domain_logits = head_logits(graph, params, embeddings, Head::kDomain);
  return out;
}

}  // namespace strdan
