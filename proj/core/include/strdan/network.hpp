#ifndef STRDAN_NETWORK_HPP_
#define STRDAN_NETWORK_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "strdan/autodiff.hpp"
#include "strdan/tensor.hpp"

namespace strdan {

// The five softmax heads fed by the embedding.
enum class Head { kId = 0, kDomain, kColor, kType, kOrientation };
inline constexpr std::array<Head, 5> kAllHeads = {Head::kId, Head::kDomain, Head::kColor,
                                                  Head::kType, Head::kOrientation};
inline constexpr std::size_t kNumHeads = kAllHeads.size();

const char* head_name(Head head);
// Throws ValueError for names other than id/domain/color/type/orientation.
Head parse_head(std::string_view name);

enum class TripletSource { kEmbedding, kIdLogits };

struct ModelConfig {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden_dims;
  std::size_t embed_dim = 64;
  std::size_t id_classes = 2;
  std::size_t domain_classes = 2;
  std::size_t color_classes = 12;
  std::size_t type_classes = 11;
  std::size_t orientation_bins = 6;
  // L2-normalize embeddings before the triplet loss.
  bool normalize_embeddings = false;
  TripletSource triplet_source = TripletSource::kEmbedding;

  std::size_t head_classes(Head head) const;
  // Layer widths from input to embedding: input_dim, hidden..., embed_dim.
  std::vector<std::size_t> layer_dims() const;
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Layer {
  Tensor weight;  // fan_in x fan_out
  Tensor bias;    // 1 x fan_out

  friend bool operator==(const Layer&, const Layer&) = default;
};

// The trainable parameters: an MLP embedder plus one affine layer per head.
struct ModelParams {
  std::vector<Layer> embedder;
  std::array<Layer, kNumHeads> heads;

  Layer& head(Head h) { return heads[static_cast<std::size_t>(h)]; }
  const Layer& head(Head h) const { return heads[static_cast<std::size_t>(h)]; }

  // Stable parameter names: "embed.<k>.weight", "head.<name>.bias", ...
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  std::size_t input_dim() const;
  std::size_t embed_dim() const;
  bool all_finite() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// Graph handles for every parameter, registered as variables under their
// stable names; backward() reports gradients under the same names.
struct ParamNodes {
  std::vector<std::pair<ad::Node, ad::Node>> embedder;
  std::array<std::pair<ad::Node, ad::Node>, kNumHeads> heads;
};

ParamNodes add_params(ad::Graph& graph, const ModelParams& params);
// relu(x W + b) for every embedder layer.
ad::Node embed(ad::Graph& graph, const ParamNodes& nodes, ad::Node features);
ad::Node head_logits(ad::Graph& graph, const ParamNodes& nodes, ad::Node embeddings,
                     Head head);

// Eager versions for evaluation.
Tensor embed(const ModelParams& params, const Tensor& features);
Tensor head_logits(const ModelParams& params, const Tensor& embeddings, Head head);
Tensor head_logits(const ModelParams& params, const Tensor& embeddings,
                   std::string_view head);

}  // namespace strdan

#endif  // STRDAN_NETWORK_HPP_
