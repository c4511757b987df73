#include "strdan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json_io.hpp"

namespace strdan {

const char* metric_name(Metric metric) {
  return metric == Metric::kEuclidean ? "euclidean" : "squared_euclidean";
}

Metric parse_metric(const std::string& name) {
  if (name == "euclidean") return Metric::kEuclidean;
  if (name == "squared_euclidean" || name == "squared-euclidean") {
    return Metric::kSquaredEuclidean;
  }
  throw ValueError("unknown metric '" + name + "'");
}

void RerankConfig::validate() const {
  if (k1 < 1 || k2 < 1) throw ValueError("rerank: k1 and k2 must be >= 1");
  if (k2 > k1) throw ValueError("rerank: k2 must not exceed k1");
  if (!(lambda_orig >= 0.0 && lambda_orig <= 1.0)) {
    throw ValueError("rerank: lambda_orig must lie in [0, 1]");
  }
}

void EvalConfig::validate() const {
  if (top_k < 1) throw ValueError("eval config: K must be >= 1");
  if (rerank) rerank->validate();
}

namespace {

std::string join_indices(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(v[i]);
  }
  return s;
}

void check_eval_shapes(const Tensor& dist, std::span<const int> query_ids,
                       std::span<const int> gallery_ids, std::span<const std::uint8_t> exclude) {
  if (dist.rows() != query_ids.size() || dist.cols() != gallery_ids.size()) {
    throw ShapeError("evaluation: distance matrix " + dist.shape_string() + " does not match " +
                     std::to_string(query_ids.size()) + " queries x " +
                     std::to_string(gallery_ids.size()) + " gallery items");
  }
  if (!exclude.empty() && exclude.size() != dist.size()) {
    throw ShapeError("evaluation: exclusion mask has " + std::to_string(exclude.size()) +
                     " entries, expected " + std::to_string(dist.size()));
  }
}

bool excluded(std::span<const std::uint8_t> exclude, std::size_t q, std::size_t ng,
              std::size_t g) {
  return !exclude.empty() && exclude[q * ng + g] != 0;
}

// Relevance flags of the ranked, non-excluded gallery list of one query.
std::vector<char> ranked_relevance(const Tensor& dist, std::size_t q, int qid,
                                   std::span<const int> gallery_ids,
                                   std::span<const std::uint8_t> exclude) {
  const std::size_t ng = gallery_ids.size();
  std::vector<char> rel;
  rel.reserve(ng);
  for (std::size_t g : rank_gallery(dist.row_span(q))) {
    if (excluded(exclude, q, ng, g)) continue;
    rel.push_back(gallery_ids[g] == qid ? 1 : 0);
  }
  return rel;
}

}  // namespace

MissingRelevantError::MissingRelevantError(std::vector<std::size_t> queries)
    : ValueError("queries without any relevant gallery item: " + join_indices(queries)),
      queries_(std::move(queries)) {}

ExclusionMask self_exclusion(std::size_t n) {
  ExclusionMask mask(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = 1;
  return mask;
}

ExclusionMask same_camera_exclusion(std::span<const int> query_cams,
                                    std::span<const int> gallery_cams) {
  ExclusionMask mask(query_cams.size() * gallery_cams.size(), 0);
  for (std::size_t q = 0; q < query_cams.size(); ++q) {
    for (std::size_t g = 0; g < gallery_cams.size(); ++g) {
      mask[q * gallery_cams.size() + g] = query_cams[q] == gallery_cams[g] ? 1 : 0;
    }
  }
  return mask;
}

Tensor pairwise_distances(const Tensor& queries, const Tensor& gallery, Metric metric) {
  if (queries.cols() != gallery.cols()) {
    throw ShapeError("pairwise_distances: query dim " + std::to_string(queries.cols()) +
                     " != gallery dim " + std::to_string(gallery.cols()));
  }
  Tensor out(queries.rows(), gallery.rows());
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    auto q = queries.row_span(i);
    for (std::size_t j = 0; j < gallery.rows(); ++j) {
      auto g = gallery.row_span(j);
      double s = 0.0;
      for (std::size_t k = 0; k < q.size(); ++k) {
        const double d = q[k] - g[k];
        s += d * d;
      }
      out(i, j) = metric == Metric::kEuclidean ? std::sqrt(s) : s;
    }
  }
  return out;
}

std::vector<std::size_t> rank_gallery(std::span<const double> distances) {
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
  return order;
}

ApResult mean_average_precision(const Tensor& dist, std::span<const int> query_ids,
                                std::span<const int> gallery_ids, std::size_t top_k,
                                std::span<const std::uint8_t> exclude) {
  if (top_k < 1) throw ValueError("mean_average_precision: K must be >= 1");
  check_eval_shapes(dist, query_ids, gallery_ids, exclude);
  ApResult result;
  std::vector<std::size_t> missing;
  for (std::size_t q = 0; q < query_ids.size(); ++q) {
    const auto rel = ranked_relevance(dist, q, query_ids[q], gallery_ids, exclude);
    const auto relevant = static_cast<std::size_t>(std::count(rel.begin(), rel.end(), 1));
    if (relevant == 0) {
      missing.push_back(q);
      continue;
    }
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < rel.size() && r < top_k; ++r) {
      if (!rel[r]) continue;
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
    result.per_query.push_back(sum / static_cast<double>(std::min(relevant, top_k)));
  }
  if (!missing.empty()) throw MissingRelevantError(std::move(missing));
  if (!result.per_query.empty()) {
    result.mean_ap = std::accumulate(result.per_query.begin(), result.per_query.end(), 0.0) /
                     static_cast<double>(result.per_query.size());
  }
  return result;
}

std::vector<double> cmc(const Tensor& dist, std::span<const int> query_ids,
                        std::span<const int> gallery_ids, std::span<const std::size_t> ranks,
                        std::span<const std::uint8_t> exclude) {
  check_eval_shapes(dist, query_ids, gallery_ids, exclude);
  std::vector<std::size_t> first_hit;
  std::vector<std::size_t> missing;
  for (std::size_t q = 0; q < query_ids.size(); ++q) {
    const auto rel = ranked_relevance(dist, q, query_ids[q], gallery_ids, exclude);
    auto it = std::find(rel.begin(), rel.end(), 1);
    if (it == rel.end()) {
      missing.push_back(q);
      continue;
    }
    first_hit.push_back(static_cast<std::size_t>(it - rel.begin()) + 1);
  }
  if (!missing.empty()) throw MissingRelevantError(std::move(missing));
  std::vector<double> out;
  for (std::size_t r : ranks) {
    const auto within = std::count_if(first_hit.begin(), first_hit.end(),
                                      [r](std::size_t h) { return h <= r; });
    out.push_back(first_hit.empty() ? 0.0
                                    : static_cast<double>(within) /
                                          static_cast<double>(first_hit.size()));
  }
  return out;
}

std::vector<std::vector<std::pair<double, double>>> precision_recall(
    const Tensor& dist, std::span<const int> query_ids, std::span<const int> gallery_ids,
    std::size_t top_k, std::span<const std::uint8_t> exclude) {
  check_eval_shapes(dist, query_ids, gallery_ids, exclude);
  std::vector<std::vector<std::pair<double, double>>> curves;
  for (std::size_t q = 0; q < query_ids.size(); ++q) {
    const auto rel = ranked_relevance(dist, q, query_ids[q], gallery_ids, exclude);
    const auto relevant = static_cast<double>(std::count(rel.begin(), rel.end(), 1));
    std::vector<std::pair<double, double>> curve;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < rel.size() && r < top_k; ++r) {
      if (!rel[r]) continue;
      ++hits;
      curve.emplace_back(static_cast<double>(hits) / relevant,
                         static_cast<double>(hits) / static_cast<double>(r + 1));
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

EvalReport evaluate_embeddings(const EvalInputs& in, const EvalConfig& config) {
  config.validate();
  const std::size_t nq = in.query_embeddings.rows();
  const std::size_t ng = in.gallery_embeddings.rows();
  if (in.query_ids.size() != nq || in.gallery_ids.size() != ng) {
    throw ShapeError("evaluate: id vectors do not match embedding rows");
  }

  ExclusionMask exclude;
  if (config.exclude_self) {
    if (nq != ng) throw ValueError("evaluate: exclude_self needs query == gallery");
    exclude = self_exclusion(nq);
  }
  if (config.same_camera_exclusion) {
    if (in.query_cams.size() != nq || in.gallery_cams.size() != ng) {
      throw ValueError("evaluate: same-camera exclusion needs a camera for every sample");
    }
    const ExclusionMask cams = same_camera_exclusion(in.query_cams, in.gallery_cams);
    if (exclude.empty()) {
      exclude = cams;
    } else {
      for (std::size_t i = 0; i < exclude.size(); ++i) exclude[i] |= cams[i];
    }
  }

  const Tensor original =
      pairwise_distances(in.query_embeddings, in.gallery_embeddings, config.metric);
  Tensor final_dist = original;
  EvalReport report;
  report.config = config;
  if (config.rerank) {
    final_dist = k_reciprocal_rerank(in.query_embeddings, in.gallery_embeddings, *config.rerank);
    report.reranked = true;
    report.mean_ap_original =
        mean_average_precision(original, in.query_ids, in.gallery_ids, config.top_k, exclude)
            .mean_ap;
  }
  ApResult ap =
      mean_average_precision(final_dist, in.query_ids, in.gallery_ids, config.top_k, exclude);
  report.mean_ap = ap.mean_ap;
  report.per_query_ap = std::move(ap.per_query);
  const auto hit_rates = cmc(final_dist, in.query_ids, in.gallery_ids, kCmcRanks, exclude);
  for (std::size_t i = 0; i < std::size(kCmcRanks); ++i) {
    report.cmc.emplace_back(kCmcRanks[i], hit_rates[i]);
  }
  report.pr_curves =
      precision_recall(final_dist, in.query_ids, in.gallery_ids, config.top_k, exclude);
  return report;
}

std::string report_to_json(const EvalReport& r) {
  json cmc_json = json::object();
  for (const auto& [rank, rate] : r.cmc) cmc_json[std::to_string(rank)] = rate;
  json config{{"top_k", r.config.top_k},
              {"metric", metric_name(r.config.metric)},
              {"same_camera_exclusion", r.config.same_camera_exclusion},
              {"exclude_self", r.config.exclude_self},
              {"rerank", nullptr}};
  if (r.config.rerank) {
    config["rerank"] = {{"k1", r.config.rerank->k1},
                        {"k2", r.config.rerank->k2},
                        {"lambda_orig", r.config.rerank->lambda_orig}};
  }
  json out{{"mAP", r.mean_ap},
           {"per_query_ap", r.per_query_ap},
           {"cmc", cmc_json},
           {"config", config},
           {"reranked", r.reranked},
           {"mAP_original", r.mean_ap_original ? json(*r.mean_ap_original) : json(nullptr)},
           {"source", r.source}};
  return out.dump(2);
}

std::string per_query_csv(const EvalReport& report, std::span<const int> query_ids) {
  std::ostringstream out;
  out.precision(17);
  out << "query,id,ap\n";
  for (std::size_t q = 0; q < report.per_query_ap.size(); ++q) {
    out << q << ',' << (q < query_ids.size() ? query_ids[q] : -1) << ','
        << report.per_query_ap[q] << '\n';
  }
  return out.str();
}

std::string precision_recall_csv(
    const std::vector<std::vector<std::pair<double, double>>>& curves) {
  std::ostringstream out;
  out.precision(17);
  out << "query,recall,precision\n";
  for (std::size_t q = 0; q < curves.size(); ++q) {
    for (const auto& [recall, precision] : curves[q]) {
      out << q << ',' << recall << ',' << precision << '\n';
    }
  }
  return out.str();
}

}  // namespace strdan
