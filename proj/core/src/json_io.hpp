// JSON (de)serialization shared by the checkpoint, dataset and trainer code.
// Internal header: nlohmann/json does not leak into the public API.
#ifndef STRDAN_SRC_JSON_IO_HPP_
#define STRDAN_SRC_JSON_IO_HPP_

#include <json.hpp>

#include "strdan/error.hpp"
#include "strdan/network.hpp"
#include "strdan/optimizer.hpp"

namespace strdan {

using json = nlohmann::json;

inline const char* triplet_source_name(TripletSource s) {
  return s == TripletSource::kEmbedding ? "embedding" : "id_logits";
}

inline TripletSource parse_triplet_source(const std::string& s) {
  if (s == "embedding") return TripletSource::kEmbedding;
  if (s == "id_logits") return TripletSource::kIdLogits;
  throw FormatError("unknown triplet source '" + s + "'");
}

inline json model_config_to_json(const ModelConfig& c) {
  return json{{"input_dim", c.input_dim},
              {"hidden_dims", c.hidden_dims},
              {"embed_dim", c.embed_dim},
              {"id_classes", c.id_classes},
              {"domain_classes", c.domain_classes},
              {"color_classes", c.color_classes},
              {"type_classes", c.type_classes},
              {"orientation_bins", c.orientation_bins},
              {"normalize_embeddings", c.normalize_embeddings},
              {"triplet_source", triplet_source_name(c.triplet_source)}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.id_classes = j.at("id_classes").get<std::size_t>();
  c.domain_classes = j.at("domain_classes").get<std::size_t>();
  c.color_classes = j.at("color_classes").get<std::size_t>();
  c.type_classes = j.at("type_classes").get<std::size_t>();
  c.orientation_bins = j.at("orientation_bins").get<std::size_t>();
  c.normalize_embeddings = j.at("normalize_embeddings").get<bool>();
  c.triplet_source = parse_triplet_source(j.at("triplet_source").get<std::string>());
  return c;
}

inline json amsgrad_hyper_to_json(const AmsgradHyper& h) {
  return json{{"beta1", h.beta1},
              {"beta2", h.beta2},
              {"eps", h.eps},
              {"weight_decay", h.weight_decay}};
}

inline AmsgradHyper amsgrad_hyper_from_json(const json& j) {
  AmsgradHyper h;
  h.beta1 = j.at("beta1").get<double>();
  h.beta2 = j.at("beta2").get<double>();
  h.eps = j.at("eps").get<double>();
  h.weight_decay = j.at("weight_decay").get<double>();
  return h;
}

}  // namespace strdan

#endif  // STRDAN_SRC_JSON_IO_HPP_
