#ifndef STRDAN_EVALUATION_HPP_
#define STRDAN_EVALUATION_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "strdan/error.hpp"
#include "strdan/tensor.hpp"

namespace strdan {

enum class Metric { kEuclidean, kSquaredEuclidean };

const char* metric_name(Metric metric);
Metric parse_metric(const std::string& name);

struct RerankConfig {
  int k1 = 20;
  int k2 = 6;
  double lambda_orig = 0.3;

  void validate() const;
  friend bool operator==(const RerankConfig&, const RerankConfig&) = default;
};

struct EvalConfig {
  std::size_t top_k = 100;
  Metric metric = Metric::kEuclidean;
  bool same_camera_exclusion = false;
  // Query and gallery are the same set; drop gallery item i for query i.
  bool exclude_self = false;
  std::optional<RerankConfig> rerank;

  void validate() const;
};

inline constexpr std::size_t kCmcRanks[] = {1, 5, 10};

struct EvalReport {
  double mean_ap = 0.0;
  std::vector<double> per_query_ap;
  std::vector<std::pair<std::size_t, double>> cmc;  // (rank, hit rate)
  EvalConfig config;
  bool reranked = false;
  // mAP on the original distances when the report is re-ranked.
  std::optional<double> mean_ap_original;
  std::string source;  // free-form provenance, e.g. the checkpoint fingerprint
  // (recall, precision) points per query on the final distances.
  std::vector<std::vector<std::pair<double, double>>> pr_curves;
};

// Row-major Nq x Ng mask; 1 removes the gallery item from that query's ranking.
// An empty mask excludes nothing.
using ExclusionMask = std::vector<std::uint8_t>;

ExclusionMask self_exclusion(std::size_t n);
ExclusionMask same_camera_exclusion(std::span<const int> query_cams,
                                    std::span<const int> gallery_cams);

// Thrown when queries have no relevant gallery item after exclusion.
class MissingRelevantError : public ValueError {
 public:
  explicit MissingRelevantError(std::vector<std::size_t> queries);
  const std::vector<std::size_t>& queries() const { return queries_; }

 private:
  std::vector<std::size_t> queries_;
};

Tensor pairwise_distances(const Tensor& queries, const Tensor& gallery, Metric metric);

// Gallery indices sorted by ascending distance, ties by index.
std::vector<std::size_t> rank_gallery(std::span<const double> distances);

struct ApResult {
  double mean_ap = 0.0;
  std::vector<double> per_query;
};

// AP@K per query: sum of precision at each relevant hit within the top K
// (excluded items do not occupy ranks), divided by min(#relevant, K).
ApResult mean_average_precision(const Tensor& dist, std::span<const int> query_ids,
                                std::span<const int> gallery_ids, std::size_t top_k,
                                std::span<const std::uint8_t> exclude = {});

// Fraction of queries whose first relevant item sits at rank <= r, per r.
std::vector<double> cmc(const Tensor& dist, std::span<const int> query_ids,
                        std::span<const int> gallery_ids, std::span<const std::size_t> ranks,
                        std::span<const std::uint8_t> exclude = {});

// (recall, precision) after every relevant hit within the top K, per query.
std::vector<std::vector<std::pair<double, double>>> precision_recall(
    const Tensor& dist, std::span<const int> query_ids, std::span<const int> gallery_ids,
    std::size_t top_k, std::span<const std::uint8_t> exclude = {});

// k-reciprocal re-ranking over features. Distances are squared Euclidean,
// each row scaled by its maximum over query+gallery; the result is
//   lambda_orig * d_original + (1 - lambda_orig) * d_jaccard
// for the Nq x Ng query/gallery block.
Tensor k_reciprocal_rerank(const Tensor& queries, const Tensor& gallery,
                           const RerankConfig& config);

// Same, starting from the (Nq+Ng) x (Nq+Ng) matrix of squared distances over
// the stacked [queries; gallery] set.
Tensor k_reciprocal_rerank_distances(const Tensor& all_squared, std::size_t num_queries,
                                     const RerankConfig& config);

struct EvalInputs {
  const Tensor& query_embeddings;
  const Tensor& gallery_embeddings;
  std::span<const int> query_ids;
  std::span<const int> gallery_ids;
  std::span<const int> query_cams = {};
  std::span<const int> gallery_cams = {};
};

EvalReport evaluate_embeddings(const EvalInputs& inputs, const EvalConfig& config);

std::string report_to_json(const EvalReport& report);
std::string per_query_csv(const EvalReport& report, std::span<const int> query_ids);
std::string precision_recall_csv(
    const std::vector<std::vector<std::pair<double, double>>>& curves);

}  // namespace strdan

#endif  // STRDAN_EVALUATION_HPP_
