#ifndef STRDAN_SAMPLING_HPP_
#define STRDAN_SAMPLING_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "strdan/random.hpp"
#include "strdan/tensor.hpp"

namespace strdan {

enum class Domain { kReal = 0, kSynthetic = 1 };

const char* domain_name(Domain domain);
Domain parse_domain(std::string_view name);

// One data point. Real samples carry no color/type/orientation; synthetic
// samples carry all three.
struct Sample {
  Domain domain = Domain::kReal;
  int id = 0;
  std::vector<double> features;
  std::optional<int> color;
  std::optional<int> type;
  std::optional<double> orientation_deg;
  std::optional<int> camera;

  bool has_disjoint_labels() const {
    return color.has_value() && type.has_value() && orientation_deg.has_value();
  }
  friend bool operator==(const Sample&, const Sample&) = default;
};

// Dataset positions grouped by (domain, identity).
struct IdentityIndex {
  std::map<int, std::vector<std::size_t>> real;
  std::map<int, std::vector<std::size_t>> synthetic;

  const std::map<int, std::vector<std::size_t>>& of(Domain d) const {
    return d == Domain::kReal ? real : synthetic;
  }
  std::size_t total() const;
  bool empty() const { return real.empty() && synthetic.empty(); }
};

IdentityIndex build_identity_index(std::span<const Sample> dataset);

// n identities per domain, m samples per identity: 2 n m rows.
struct BatchSpec {
  std::size_t n = 2;
  std::size_t m = 4;

  void validate() const;
  std::size_t batch_size() const { return 2 * n * m; }
  friend bool operator==(const BatchSpec&, const BatchSpec&) = default;
};

struct Batch {
  Tensor features;
  std::vector<int> ids;
  std::vector<int> domains;
  // Disjoint labels; -1 where mask is 0.
  std::vector<int> colors;
  std::vector<int> types;
  std::vector<int> orientation_bins;
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> source_rows;

  std::size_t size() const { return ids.size(); }
};

// Draws n distinct identities from each domain and m samples from each chosen
// identity (with replacement when the identity has fewer than m samples).
// Rows are ordered real identities first, each identity's m rows contiguous.
Batch sample_batch(std::span<const Sample> dataset, const IdentityIndex& index,
                   const BatchSpec& spec, std::size_t num_orientation_bins, Rng& rng);

// Same draw restricted to one domain: `identities` distinct ids x m samples.
Batch sample_domain_batch(std::span<const Sample> dataset, const IdentityIndex& index,
                          Domain domain, std::size_t identities, std::size_t m,
                          std::size_t num_orientation_bins, Rng& rng);

// Half-open bins [k * 360/B, (k+1) * 360/B) after reducing the angle to [0, 360).
std::size_t bin_orientation(double angle_deg, std::size_t num_bins);

}  // namespace strdan

#endif  // STRDAN_SAMPLING_HPP_
