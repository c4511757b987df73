#ifndef STRDAN_DATAGEN_HPP_
#define STRDAN_DATAGEN_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "strdan/error.hpp"
#include "strdan/sampling.hpp"
#include "strdan/tensor.hpp"

namespace strdan {

inline constexpr int kDatasetFormatVersion = 1;

// A dataset row that cannot be parsed or violates the label schema.
class DatasetLineError : public FormatError {
 public:
  DatasetLineError(std::size_t line, const std::string& what)
      : FormatError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// x_synthetic = matrix * x + offset, applied to every synthetic sample.
struct AffineShift {
  Tensor matrix;  // dim x dim
  std::vector<double> offset;

  static AffineShift identity(std::size_t dim);
  // I + scale * G / sqrt(dim) with G standard normal, plus an offset of the
  // given Euclidean norm along a random direction within coordinates
  // [offset_begin, dim).
  static AffineShift random(std::size_t dim, double scale, double offset_norm,
                            std::uint64_t seed, std::size_t offset_begin = 0);
  std::vector<double> apply(std::span<const double> x) const;
  friend bool operator==(const AffineShift&, const AffineShift&) = default;
};

struct ToySpec {
  std::size_t num_ids_real = 8;
  std::size_t num_ids_synth = 16;
  // Extra real identities for query/gallery splits; never used for training.
  std::size_t num_ids_test = 0;
  std::size_t samples_per_id = 10;
  std::size_t input_dim = 16;
  std::size_t num_colors = 12;
  std::size_t num_types = 11;
  // The first `shared_centers` synthetic identities reuse the cluster centers
  // of the first real identities (same vehicle model, rendered).
  std::size_t shared_centers = 0;
  // Identity centers occupy the first signal_dim coordinates (0 = all); the
  // rest are zero before noise.
  std::size_t signal_dim = 0;
  double center_scale = 1.0;
  double cluster_sep = 0.5;
  double noise_sigma = 0.1;
  // Per-sample orientation a adds orientation_amplitude * (cos a, sin a) to
  // the two coordinates after the signal block (the last two if none).
  double orientation_amplitude = 0.0;
  AffineShift domain_shift;  // empty matrix = identity
  std::uint64_t seed = 0;

  void validate() const;
};

struct IdRange {
  int begin = 0;  // inclusive
  int end = 0;    // exclusive
  bool contains(int id) const { return id >= begin && id < end; }
  friend bool operator==(const IdRange&, const IdRange&) = default;
};

struct DatasetManifest {
  int version = kDatasetFormatVersion;
  IdRange real_ids;
  IdRange synthetic_ids;
  // Held-out real identities (a sub-range of real_ids); empty when unused.
  IdRange test_ids;
  std::size_t input_dim = 0;
  std::size_t num_colors = 0;
  std::size_t num_types = 0;
  // Opaque JSON object string echoing the generation parameters.
  std::string generator = "{}";

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct GeneratedDataset {
  std::vector<Sample> samples;
  DatasetManifest manifest;
};

// Real training identities take ids [0, R), held-out real identities
// [R, R + T), synthetic identities [R + T, R + T + S). Samples are grouped by
// identity in id order.
GeneratedDataset generate_toy_dataset(const ToySpec& spec);

// Splits: real training rows, synthetic rows, and the held-out real rows
// divided into query (first `queries_per_id` samples of each identity) and
// gallery (the rest).
struct DatasetSplits {
  std::vector<Sample> real;
  std::vector<Sample> synthetic;
  std::vector<Sample> query;
  std::vector<Sample> gallery;
};
DatasetSplits split_dataset(const GeneratedDataset& data, std::size_t queries_per_id = 1);

// JSON-lines, one sample per line:
//   {"domain":"real"|"synthetic","id":<int>,"features":[...],
//    "color":<int>,"type":<int>,"orientation_deg":<number>,"camera":<int>}
// color/type/orientation_deg are present exactly for synthetic rows; camera is
// optional. Numbers are written in shortest round-trip form, so
// read(write(x)) == x bit for bit. The manifest goes to the sibling
// "<stem>.manifest.json".
void write_dataset(std::span<const Sample> samples, const DatasetManifest& manifest,
                   const std::filesystem::path& path);

struct LoadedDataset {
  std::vector<Sample> samples;
  DatasetManifest manifest;
};

// Reads a dataset file and its sibling manifest. Without a manifest one is
// derived from the rows. Malformed or schema-violating rows raise FormatError
// carrying the 1-based line number.
LoadedDataset read_dataset(const std::filesystem::path& path);

std::filesystem::path manifest_path_for(const std::filesystem::path& dataset_path);

std::string encode_sample(const Sample& sample);
Sample decode_sample(const std::string& line, std::size_t line_number);

DatasetManifest derive_manifest(std::span<const Sample> samples);
// Every row's id lies in its domain's range, the ranges are disjoint and the
// features match input_dim. Throws FormatError.
void validate_against_manifest(std::span<const Sample> samples,
                               const DatasetManifest& manifest);

Tensor features_matrix(std::span<const Sample> samples);
std::vector<int> ids_of(std::span<const Sample> samples);

}  // namespace strdan

#endif  // STRDAN_DATAGEN_HPP_
