#ifndef STRDAN_LOSSES_HPP_
#define STRDAN_LOSSES_HPP_

#include <cstdint>
#include <optional>
#include <vector>

#include "strdan/autodiff.hpp"
#include "strdan/network.hpp"

namespace strdan {

struct LossWeights {
  double disjoint_weight = 1.0;  // w, scales the color/type/orientation sum
  double grl_lambda = 1.0;       // reversal strength on the domain branch
  double triplet_margin = 0.3;

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

// Every field is the loss's contribution to `total`; a disabled term reads 0.
struct LossBreakdown {
  double id_loss = 0.0;
  double domain_loss = 0.0;
  double triplet_loss = 0.0;
  double color_loss = 0.0;
  double type_loss = 0.0;
  double orientation_loss = 0.0;
  double total = 0.0;
};

// Mean softmax cross-entropy over all N rows. Throws for N == 0 and, at
// forward time, for labels outside [0, C).
ad::Node cross_entropy(ad::Graph& graph, ad::Node logits, std::vector<int> labels);

// -(1/N) sum_i mask_i log softmax(logits_i)[label_i]. The denominator is the
// full batch size N, not the number of unmasked rows.
ad::Node masked_cross_entropy(ad::Graph& graph, ad::Node logits, std::vector<int> labels,
                              std::vector<std::uint8_t> mask);

// Two-class cross-entropy of the domain head evaluated on
// grad_reversal(embeddings, lambda). The returned value is the discriminator's
// (positive) loss; the encoder sees its gradient multiplied by -lambda.
ad::Node domain_loss(ad::Graph& graph, ad::Node embeddings, std::vector<int> domain_labels,
                     double lambda, ad::Node head_weight, ad::Node head_bias);

// Sum (or mean) over anchors of
//   [margin + max_{same id} D(a, p) - min_{other id} D(a, n)]_+
ad::Node triplet_batch_hard(ad::Graph& graph, ad::Node embeddings, std::vector<int> ids,
                            const ad::TripletOptions& options);

// Which optional terms are switched on. The ID cross-entropy and the triplet
// loss are always part of the objective.
struct EnabledLosses {
  bool domain = true;
  bool color = true;
  bool type = true;
  bool orientation = true;

  friend bool operator==(const EnabledLosses&, const EnabledLosses&) = default;
};

struct LossOptions {
  LossWeights weights;
  EnabledLosses enabled;
  ad::Distance triplet_distance = ad::Distance::kEuclidean;
  ad::Reduction triplet_reduction = ad::Reduction::kSum;
  // With the domain term disabled, keep training the domain head on detached
  // embeddings (reversal strength 0). Its loss stays out of `total`.
  bool domain_probe = true;
};

// Per-row targets for one batch. Disjoint labels are only read where mask is 1.
struct BatchTargets {
  std::vector<int> id_classes;   // ID-head class index
  std::vector<int> identities;   // raw identity, grouping rows for the triplet loss
  std::vector<int> domains;      // 0 real, 1 synthetic
  std::vector<int> colors;
  std::vector<int> types;
  std::vector<int> orientation_bins;
  std::vector<std::uint8_t> mask;  // 1 iff the row carries disjoint labels
};

struct TotalLossNodes {
  ad::Node total;
  // total plus the detached domain-probe term when present; this is what the
  // optimizer differentiates.
  ad::Node objective;
  ad::Node id;
  ad::Node triplet;
  std::optional<ad::Node> domain;
  std::optional<ad::Node> domain_probe;
  std::optional<ad::Node> color;
  std::optional<ad::Node> type;
  std::optional<ad::Node> orientation;
  ad::Node id_logits;
  ad::Node domain_logits;

  LossBreakdown breakdown(const ad::Graph& graph) const;
};

// Builds the combined objective
//   total = L_id + L_domain + L_tri + w (L_color + L_type + L_orientation)
// on top of `embeddings`.
TotalLossNodes total_loss(ad::Graph& graph, const ParamNodes& params, ad::Node embeddings,
                          const BatchTargets& targets, const ModelConfig& model,
                          const LossOptions& options);

}  // namespace strdan

#endif  // STRDAN_LOSSES_HPP_
