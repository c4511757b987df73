#include "strdan/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "strdan/error.hpp"

namespace strdan {

const char* domain_name(Domain domain) {
  return domain == Domain::kReal ? "real" : "synthetic";
}

Domain parse_domain(std::string_view name) {
  if (name == "real") return Domain::kReal;
  if (name == "synthetic") return Domain::kSynthetic;
  throw ValueError("unknown domain '" + std::string(name) + "'");
}

std::size_t IdentityIndex::total() const {
  std::size_t n = 0;
  for (const auto& [id, rows] : real) n += rows.size();
  for (const auto& [id, rows] : synthetic) n += rows.size();
  return n;
}

IdentityIndex build_identity_index(std::span<const Sample> dataset) {
  IdentityIndex index;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto& buckets = dataset[i].domain == Domain::kReal ? index.real : index.synthetic;
    buckets[dataset[i].id].push_back(i);
  }
  return index;
}

void BatchSpec::validate() const {
  if (n < 2 || m < 2) {
    throw ValueError("batch spec: n and m must both be >= 2 (got n=" + std::to_string(n) +
                     ", m=" + std::to_string(m) + ")");
  }
}

std::size_t bin_orientation(double angle_deg, std::size_t num_bins) {
  if (num_bins == 0) throw ValueError("bin_orientation: num_bins must be >= 1");
  if (!std::isfinite(angle_deg)) throw ValueError("bin_orientation: angle is not finite");
  double a = std::fmod(angle_deg, 360.0);
  if (a < 0.0) a += 360.0;
  if (a >= 360.0) a = 0.0;
  const double width = 360.0 / static_cast<double>(num_bins);
  const auto bin = static_cast<std::size_t>(std::floor(a / width));
  return std::min(bin, num_bins - 1);
}

namespace {

// Partial Fisher-Yates: the first k entries of `pool` become a uniform draw
// without replacement.
template <typename T>
void shuffle_prefix(std::vector<T>& pool, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + uniform_index(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
}

void append_identity(const std::vector<std::size_t>& rows, std::size_t m, Rng& rng,
                     std::vector<std::size_t>& out) {
  if (rows.size() >= m) {
    std::vector<std::size_t> pool = rows;
    shuffle_prefix(pool, m, rng);
    out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m));
  } else {
    for (std::size_t k = 0; k < m; ++k) out.push_back(rows[uniform_index(rng, rows.size())]);
  }
}

void draw_domain(const IdentityIndex& index, Domain domain, std::size_t identities, std::size_t m, Rng& rng,
                 std::vector<std::size_t>& out) {
  const auto& buckets = index.of(domain);
  if (buckets.size() < identities) {
    throw ValueError(std::string("sample_batch: ") + domain_name(domain) + " domain has " +
                     std::to_string(buckets.size()) + " identities, batch needs " +
                     std::to_string(identities));
  }
  std::vector<const std::vector<std::size_t>*> pool;
  pool.reserve(buckets.size());
  for (const auto& [id, rows] : buckets) pool.push_back(&rows);
  shuffle_prefix(pool, identities, rng);
  for (std::size_t k = 0; k < identities; ++k) append_identity(*pool[k], m, rng, out);
}

Batch assemble(std::span<const Sample> dataset, const std::vector<std::size_t>& rows,
               std::size_t num_orientation_bins) {
  Batch batch;
  const std::size_t dim = rows.empty() ? 0 : dataset[rows.front()].features.size();
  batch.features = Tensor(rows.size(), dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Sample& s = dataset[rows[r]];
    if (s.features.size() != dim) {
      throw ShapeError("sample_batch: dataset row " + std::to_string(rows[r]) + " has " +
                       std::to_string(s.features.size()) + " features, expected " +
                       std::to_string(dim));
    }
    std::copy(s.features.begin(), s.features.end(), batch.features.row_span(r).begin());
    batch.ids.push_back(s.id);
    batch.domains.push_back(static_cast<int>(s.domain));
    const bool synthetic = s.domain == Domain::kSynthetic;
    if (synthetic && !s.has_disjoint_labels()) {
      throw ValueError("sample_batch: synthetic dataset row " + std::to_string(rows[r]) +
                       " lacks color/type/orientation labels");
    }
    batch.mask.push_back(synthetic ? 1 : 0);
    batch.colors.push_back(synthetic ? *s.color : -1);
    batch.types.push_back(synthetic ? *s.type : -1);
    batch.orientation_bins.push_back(
        synthetic ? static_cast<int>(bin_orientation(*s.orientation_deg, num_orientation_bins))
                  : -1);
  }
  batch.source_rows = rows;
  return batch;
}

}  // namespace

Batch sample_batch(std::span<const Sample> dataset, const IdentityIndex& index,
                   const BatchSpec& spec, std::size_t num_orientation_bins, Rng& rng) {
  spec.validate();
  std::vector<std::size_t> rows;
  rows.reserve(spec.batch_size());
  draw_domain(index, Domain::kReal, spec.n, spec.m, rng, rows);
  draw_domain(index, Domain::kSynthetic, spec.n, spec.m, rng, rows);
  return assemble(dataset, rows, num_orientation_bins);
}

Batch sample_domain_batch(std::span<const Sample> dataset, const IdentityIndex& index,
                          Domain domain, std::size_t identities, std::size_t m,
                          std::size_t num_orientation_bins, Rng& rng) {
  if (identities < 2 || m < 2) {
    throw ValueError("sample_domain_batch: need >= 2 identities and >= 2 samples each");
  }
  std::vector<std::size_t> rows;
  draw_domain(index, domain, identities, m, rng, rows);
  return assemble(dataset, rows, num_orientation_bins);
}

}  // namespace strdan
