// k-reciprocal encoding re-ranking with local query expansion.
#include <algorithm>
#include <cmath>
#include <numeric>

#include "strdan/evaluation.hpp"

namespace strdan {

namespace {

// Sparse row of the k-reciprocal encoding matrix, sorted by column.
using SparseRow = std::vector<std::pair<std::size_t, double>>;

std::vector<std::size_t> k_reciprocal_set(const std::vector<std::vector<std::size_t>>& rank,
                                          std::size_t i, std::size_t k) {
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f <= k; ++f) {
    const std::size_t candidate = rank[i][f];
    const auto& back = rank[candidate];
    if (std::find(back.begin(), back.begin() + static_cast<std::ptrdiff_t>(k + 1), i) !=
        back.begin() + static_cast<std::ptrdiff_t>(k + 1)) {
      out.push_back(candidate);
    }
  }
  return out;
}

}  // namespace

Tensor k_reciprocal_rerank_distances(const Tensor& all_squared, std::size_t num_queries,
                                     const RerankConfig& config) {
  config.validate();
  const std::size_t n = all_squared.rows();
  if (all_squared.cols() != n) {
    throw ShapeError("rerank: distance matrix must be square, got " +
                     all_squared.shape_string());
  }
  if (num_queries > n) throw ValueError("rerank: more queries than stacked items");
  const std::size_t num_gallery = n - num_queries;
  const auto k1 = static_cast<std::size_t>(config.k1);
  const auto k2 = static_cast<std::size_t>(config.k2);
  if (k1 >= num_gallery) {
    throw ValueError("rerank: k1 = " + std::to_string(k1) + " must be below the gallery size " +
                     std::to_string(num_gallery));
  }

  // Each row scaled by its maximum.
  Tensor original = all_squared;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = original.row_span(i);
    const double peak = *std::max_element(row.begin(), row.end());
    if (peak > 0.0) {
      for (double& v : row) v /= peak;
    }
  }

  std::vector<std::vector<std::size_t>> rank(n);
  for (std::size_t i = 0; i < n; ++i) rank[i] = rank_gallery(original.row_span(i));

  const auto half_k = static_cast<std::size_t>(std::nearbyint(static_cast<double>(k1) / 2.0));
  std::vector<SparseRow> encoding(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto reciprocal = k_reciprocal_set(rank, i, k1);
    std::vector<std::size_t> expanded = reciprocal;
    for (std::size_t candidate : reciprocal) {
      const auto candidate_set = k_reciprocal_set(rank, candidate, half_k);
      const auto overlap = std::count_if(
          candidate_set.begin(), candidate_set.end(), [&](std::size_t c) {
            return std::find(reciprocal.begin(), reciprocal.end(), c) != reciprocal.end();
          });
      if (static_cast<double>(overlap) > 2.0 / 3.0 * static_cast<double>(candidate_set.size())) {
        expanded.insert(expanded.end(), candidate_set.begin(), candidate_set.end());
      }
    }
    std::sort(expanded.begin(), expanded.end());
    expanded.erase(std::unique(expanded.begin(), expanded.end()), expanded.end());

    double total = 0.0;
    SparseRow row;
    for (std::size_t j : expanded) {
      const double w = std::exp(-original(i, j));
      row.emplace_back(j, w);
      total += w;
    }
    for (auto& entry : row) entry.second /= total;
    encoding[i] = std::move(row);
  }

  if (k2 != 1) {
    std::vector<SparseRow> expanded(n);
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t t = 0; t < k2; ++t) {
        for (const auto& [j, v] : encoding[rank[i][t]]) acc[j] += v;
      }
      for (std::size_t j = 0; j < n; ++j) {
        if (acc[j] != 0.0) expanded[i].emplace_back(j, acc[j] / static_cast<double>(k2));
      }
    }
    encoding = std::move(expanded);
  }

  // Inverted index: for each column, the rows with a nonzero entry.
  std::vector<std::vector<std::pair<std::size_t, double>>> inverted(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& [j, v] : encoding[i]) inverted[j].emplace_back(i, v);
  }

  Tensor out(num_queries, num_gallery);
  std::vector<double> shared(n);
  for (std::size_t q = 0; q < num_queries; ++q) {
    std::fill(shared.begin(), shared.end(), 0.0);
    for (const auto& [col, vq] : encoding[q]) {
      for (const auto& [row, vr] : inverted[col]) shared[row] += std::min(vq, vr);
    }
    for (std::size_t g = 0; g < num_gallery; ++g) {
      const std::size_t j = num_queries + g;
      const double jaccard = 1.0 - shared[j] / (2.0 - shared[j]);
      out(q, g) = jaccard * (1.0 - config.lambda_orig) + original(q, j) * config.lambda_orig;
    }
  }
  return out;
}

Tensor k_reciprocal_rerank(const Tensor& queries, const Tensor& gallery,
                           const RerankConfig& config) {
  if (queries.cols() != gallery.cols()) {
    throw ShapeError("rerank: query dim " + std::to_string(queries.cols()) +
                     " != gallery dim " + std::to_string(gallery.cols()));
  }
  Tensor stacked(queries.rows() + gallery.rows(), queries.cols());
  std::copy(queries.values().begin(), queries.values().end(), stacked.values().begin());
  std::copy(gallery.values().begin(), gallery.values().end(),
            stacked.values().begin() + static_cast<std::ptrdiff_t>(queries.size()));
  return k_reciprocal_rerank_distances(
      pairwise_distances(stacked, stacked, Metric::kSquaredEuclidean), queries.rows(), config);
}

}  // namespace strdan
