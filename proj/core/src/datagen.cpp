#include "strdan/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>

#include "json_io.hpp"
#include "strdan/random.hpp"

namespace strdan {

using ordered_json = nlohmann::ordered_json;

AffineShift AffineShift::identity(std::size_t dim) {
  return AffineShift{Tensor::identity(dim), std::vector<double>(dim, 0.0)};
}

AffineShift AffineShift::random(std::size_t dim, double scale, double offset_norm,
                                std::uint64_t seed, std::size_t offset_begin) {
  if (offset_begin >= dim && offset_norm > 0.0) {
    throw ValueError("affine shift: offset_begin " + std::to_string(offset_begin) +
                     " leaves no coordinate for the offset");
  }
  Rng rng(seed);
  AffineShift shift = identity(dim);
  const double s = scale / std::sqrt(static_cast<double>(dim));
  for (double& v : shift.matrix.values()) v += s * standard_normal(rng);
  double norm = 0.0;
  for (std::size_t i = offset_begin; i < dim; ++i) {
    shift.offset[i] = standard_normal(rng);
    norm += shift.offset[i] * shift.offset[i];
  }
  norm = std::sqrt(norm);
  for (double& v : shift.offset) v *= norm > 0.0 ? offset_norm / norm : 0.0;
  return shift;
}

std::vector<double> AffineShift::apply(std::span<const double> x) const {
  if (matrix.empty()) return {x.begin(), x.end()};
  if (matrix.rows() != x.size() || matrix.cols() != x.size() || offset.size() != x.size()) {
    throw ShapeError("affine shift of shape " + matrix.shape_string() +
                     " cannot act on a vector of length " + std::to_string(x.size()));
  }
  std::vector<double> out(offset);
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto row = matrix.row_span(i);
    for (std::size_t k = 0; k < x.size(); ++k) out[i] += row[k] * x[k];
  }
  return out;
}

void ToySpec::validate() const {
  if (num_ids_real < 1 || num_ids_synth < 1 || samples_per_id < 1 || input_dim < 1) {
    throw ValueError("toy spec: identity counts, samples per id and input_dim must be >= 1");
  }
  if (num_colors < 1 || num_types < 1) {
    throw ValueError("toy spec: color and type vocabularies must be non-empty");
  }
  if (!(cluster_sep > 0.0)) throw ValueError("toy spec: cluster_sep must be > 0");
  if (!(noise_sigma >= 0.0)) throw ValueError("toy spec: noise_sigma must be >= 0");
  if (!(center_scale > 0.0)) throw ValueError("toy spec: center_scale must be > 0");
  if (!(orientation_amplitude >= 0.0)) {
    throw ValueError("toy spec: orientation_amplitude must be >= 0");
  }
  if (signal_dim > input_dim) throw ValueError("toy spec: signal_dim exceeds input_dim");
  if (shared_centers > std::min(num_ids_real, num_ids_synth)) {
    throw ValueError("toy spec: shared_centers exceeds the identity counts");
  }
  if (!domain_shift.matrix.empty() &&
      (domain_shift.matrix.rows() != input_dim || domain_shift.matrix.cols() != input_dim ||
       domain_shift.offset.size() != input_dim)) {
    throw ValueError("toy spec: domain shift does not match input_dim");
  }
}

namespace {

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

constexpr int kCenterRetries = 10000;

std::string spec_echo(const ToySpec& s) {
  json j{{"num_ids_real", s.num_ids_real},
         {"num_ids_synth", s.num_ids_synth},
         {"num_ids_test", s.num_ids_test},
         {"samples_per_id", s.samples_per_id},
         {"input_dim", s.input_dim},
         {"num_colors", s.num_colors},
         {"num_types", s.num_types},
         {"shared_centers", s.shared_centers},
         {"signal_dim", s.signal_dim},
         {"center_scale", s.center_scale},
         {"cluster_sep", s.cluster_sep},
         {"noise_sigma", s.noise_sigma},
         {"orientation_amplitude", s.orientation_amplitude},
         {"seed", s.seed}};
  if (!s.domain_shift.matrix.empty()) {
    j["domain_shift"] = {{"matrix", s.domain_shift.matrix.values()},
                         {"offset", s.domain_shift.offset}};
  }
  return j.dump();
}

}  // namespace

GeneratedDataset generate_toy_dataset(const ToySpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t dim = spec.input_dim;
  const std::size_t signal = spec.signal_dim == 0 ? dim : spec.signal_dim;

  // Orientation plane: the two coordinates after the signal block when
  // available, otherwise the last two.
  const std::size_t u_col = signal + 2 <= dim ? signal : (dim >= 2 ? dim - 2 : 0);
  const std::size_t v_col = dim >= 2 ? u_col + 1 : 0;

  const std::size_t R = spec.num_ids_real;
  const std::size_t T = spec.num_ids_test;
  const std::size_t S = spec.num_ids_synth;

  std::vector<std::vector<double>> centers;
  auto draw_center = [&]() {
    for (int attempt = 0; attempt < kCenterRetries; ++attempt) {
      std::vector<double> c(dim, 0.0);
      for (std::size_t k = 0; k < signal; ++k) c[k] = spec.center_scale * standard_normal(rng);
      const bool separated = std::all_of(centers.begin(), centers.end(), [&](const auto& o) {
        return distance(c, o) >= spec.cluster_sep;
      });
      if (separated) return c;
    }
    throw ValueError("generate_toy_dataset: cannot place " +
                     std::to_string(centers.size() + 1) + " centers with separation " +
                     std::to_string(spec.cluster_sep) + " after " +
                     std::to_string(kCenterRetries) + " attempts");
  };
  // Id order: real train, real test, synthetic.
  for (std::size_t i = 0; i < R + T; ++i) centers.push_back(draw_center());
  for (std::size_t j = 0; j < S; ++j) {
    centers.push_back(j < spec.shared_centers ? centers[j] : draw_center());
  }

  GeneratedDataset out;
  for (std::size_t id = 0; id < R + T + S; ++id) {
    const bool synthetic = id >= R + T;
    const int color = static_cast<int>(uniform_index(rng, spec.num_colors));
    const int type = static_cast<int>(uniform_index(rng, spec.num_types));
    for (std::size_t k = 0; k < spec.samples_per_id; ++k) {
      const double angle = uniform(rng, 0.0, 360.0);
      std::vector<double> x = centers[id];
      if (spec.orientation_amplitude > 0.0 && dim >= 2) {
        const double rad = angle * std::numbers::pi / 180.0;
        x[u_col] += spec.orientation_amplitude * std::cos(rad);
        x[v_col] += spec.orientation_amplitude * std::sin(rad);
      }
      if (spec.noise_sigma > 0.0) {
        for (double& v : x) v += spec.noise_sigma * standard_normal(rng);
      }
      Sample s;
      s.domain = synthetic ? Domain::kSynthetic : Domain::kReal;
      s.id = static_cast<int>(id);
      if (synthetic) {
        s.features = spec.domain_shift.apply(x);
        s.color = color;
        s.type = type;
        s.orientation_deg = angle;
      } else {
        s.features = std::move(x);
      }
      out.samples.push_back(std::move(s));
    }
  }

  DatasetManifest& m = out.manifest;
  m.real_ids = {0, static_cast<int>(R + T)};
  m.test_ids = {static_cast<int>(R), static_cast<int>(R + T)};
  m.synthetic_ids = {static_cast<int>(R + T), static_cast<int>(R + T + S)};
  m.input_dim = dim;
  m.num_colors = spec.num_colors;
  m.num_types = spec.num_types;
  m.generator = spec_echo(spec);
  return out;
}

DatasetSplits split_dataset(const GeneratedDataset& data, std::size_t queries_per_id) {
  DatasetSplits out;
  std::map<int, std::size_t> seen;
  for (const Sample& s : data.samples) {
    if (s.domain == Domain::kSynthetic) {
      out.synthetic.push_back(s);
    } else if (data.manifest.test_ids.contains(s.id)) {
      (seen[s.id]++ < queries_per_id ? out.query : out.gallery).push_back(s);
    } else {
      out.real.push_back(s);
    }
  }
  return out;
}

std::filesystem::path manifest_path_for(const std::filesystem::path& dataset_path) {
  std::filesystem::path p = dataset_path;
  p.replace_extension(".manifest.json");
  return p;
}

std::string encode_sample(const Sample& s) {
  ordered_json j;
  j["domain"] = domain_name(s.domain);
  j["id"] = s.id;
  j["features"] = s.features;
  if (s.color) j["color"] = *s.color;
  if (s.type) j["type"] = *s.type;
  if (s.orientation_deg) j["orientation_deg"] = *s.orientation_deg;
  if (s.camera) j["camera"] = *s.camera;
  return j.dump();
}

Sample decode_sample(const std::string& line, std::size_t line_number) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw DatasetLineError(line_number, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw DatasetLineError(line_number, "row is not a JSON object");
  for (const auto& [key, value] : j.items()) {
    static const char* kKeys[] = {"domain", "id", "features", "color",
                                  "type", "orientation_deg", "camera"};
    if (std::find_if(std::begin(kKeys), std::end(kKeys),
                     [&](const char* k) { return key == k; }) == std::end(kKeys)) {
      throw DatasetLineError(line_number, "unknown field '" + key + "'");
    }
  }
  auto require_int = [&](const char* key) {
    if (!j.contains(key)) throw DatasetLineError(line_number, std::string("missing '") + key + "'");
    const json& v = j.at(key);
    if (!v.is_number_integer()) {
      throw DatasetLineError(line_number, std::string("'") + key + "' is not an integer");
    }
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
      throw DatasetLineError(line_number, std::string("'") + key + "' out of range");
    }
    return static_cast<int>(x);
  };

  Sample s;
  if (!j.contains("domain") || !j.at("domain").is_string()) {
    throw DatasetLineError(line_number, "missing or non-string 'domain'");
  }
  const auto domain = j.at("domain").get<std::string>();
  if (domain == "real") {
    s.domain = Domain::kReal;
  } else if (domain == "synthetic") {
    s.domain = Domain::kSynthetic;
  } else {
    throw DatasetLineError(line_number, "unknown domain '" + domain + "'");
  }
  s.id = require_int("id");
  if (!j.contains("features") || !j.at("features").is_array() || j.at("features").empty()) {
    throw DatasetLineError(line_number, "'features' must be a non-empty array");
  }
  for (const json& v : j.at("features")) {
    if (!v.is_number()) throw DatasetLineError(line_number, "non-numeric feature value");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw DatasetLineError(line_number, "non-finite feature value");
    s.features.push_back(x);
  }

  const bool synthetic = s.domain == Domain::kSynthetic;
  for (const char* key : {"color", "type", "orientation_deg"}) {
    if (j.contains(key) && !synthetic) {
      throw DatasetLineError(line_number,
                             std::string("real-domain row carries the synthetic-only field '") +
                                 key + "'");
    }
    if (!j.contains(key) && synthetic) {
      throw DatasetLineError(line_number,
                             std::string("synthetic row lacks '") + key + "'");
    }
  }
  if (synthetic) {
    s.color = require_int("color");
    s.type = require_int("type");
    const json& o = j.at("orientation_deg");
    if (!o.is_number() || !std::isfinite(o.get<double>())) {
      throw DatasetLineError(line_number, "'orientation_deg' must be a finite number");
    }
    s.orientation_deg = o.get<double>();
  }
  if (j.contains("camera")) s.camera = require_int("camera");
  return s;
}

namespace {

json range_json(const IdRange& r) { return json::array({r.begin, r.end}); }

IdRange range_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw FormatError("manifest: id range must be [begin, end)");
  return {j.at(0).get<int>(), j.at(1).get<int>()};
}

bool overlaps(const IdRange& a, const IdRange& b) {
  return a.begin < a.end && b.begin < b.end && a.begin < b.end && b.begin < a.end;
}

}  // namespace

DatasetManifest derive_manifest(std::span<const Sample> samples) {
  DatasetManifest m;
  auto widen = [](IdRange& r, bool& first, int id) {
    if (first) {
      r = {id, id + 1};
      first = false;
    } else {
      r.begin = std::min(r.begin, id);
      r.end = std::max(r.end, id + 1);
    }
  };
  bool first_real = true;
  bool first_synth = true;
  for (const Sample& s : samples) {
    if (s.domain == Domain::kReal) {
      widen(m.real_ids, first_real, s.id);
    } else {
      widen(m.synthetic_ids, first_synth, s.id);
      m.num_colors = std::max(m.num_colors, static_cast<std::size_t>(*s.color + 1));
      m.num_types = std::max(m.num_types, static_cast<std::size_t>(*s.type + 1));
    }
  }
  m.input_dim = samples.empty() ? 0 : samples.front().features.size();
  return m;
}

void validate_against_manifest(std::span<const Sample> samples,
                               const DatasetManifest& m) {
  if (overlaps(m.real_ids, m.synthetic_ids)) {
    throw FormatError("manifest: real and synthetic id ranges overlap");
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const std::size_t line = i + 1;
    const IdRange& range = s.domain == Domain::kReal ? m.real_ids : m.synthetic_ids;
    if (!range.contains(s.id)) {
      throw DatasetLineError(line, "id " + std::to_string(s.id) + " outside the " +
                                       domain_name(s.domain) + " id range of the manifest");
    }
    if (s.features.size() != m.input_dim) {
      throw DatasetLineError(line, std::to_string(s.features.size()) +
                                       " features, manifest input_dim is " +
                                       std::to_string(m.input_dim));
    }
    if (s.domain == Domain::kSynthetic) {
      if (*s.color < 0 || static_cast<std::size_t>(*s.color) >= m.num_colors) {
        throw DatasetLineError(line, "color outside the manifest vocabulary");
      }
      if (*s.type < 0 || static_cast<std::size_t>(*s.type) >= m.num_types) {
        throw DatasetLineError(line, "type outside the manifest vocabulary");
      }
    }
  }
}

void write_dataset(std::span<const Sample> samples, const DatasetManifest& manifest,
                   const std::filesystem::path& path) {
  {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    for (const Sample& s : samples) out << encode_sample(s) << '\n';
    if (!out) throw Error("failed writing '" + path.string() + "'");
  }
  ordered_json m;
  m["format"] = "strdan-dataset";
  m["version"] = manifest.version;
  m["real_ids"] = range_json(manifest.real_ids);
  m["synthetic_ids"] = range_json(manifest.synthetic_ids);
  m["test_ids"] = range_json(manifest.test_ids);
  m["input_dim"] = manifest.input_dim;
  m["num_colors"] = manifest.num_colors;
  m["num_types"] = manifest.num_types;
  m["generator"] = json::parse(manifest.generator);
  const auto mpath = manifest_path_for(path);
  std::ofstream out(mpath, std::ios::trunc);
  if (!out) throw Error("cannot open '" + mpath.string() + "' for writing");
  out << m.dump(2) << '\n';
}

LoadedDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset '" + path.string() + "'");
  LoadedDataset out;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Sample s = decode_sample(line, line_number);
    if (!out.samples.empty() && s.features.size() != out.samples.front().features.size()) {
      throw DatasetLineError(line_number, "feature length " + std::to_string(s.features.size()) +
                                              " differs from earlier rows");
    }
    out.samples.push_back(std::move(s));
  }

  const auto mpath = manifest_path_for(path);
  if (!std::filesystem::exists(mpath)) {
    out.manifest = derive_manifest(out.samples);
    return out;
  }
  std::ifstream min(mpath);
  try {
    const json m = json::parse(min);
    if (m.at("format").get<std::string>() != "strdan-dataset") {
      throw FormatError("manifest: unexpected format tag");
    }
    out.manifest.version = m.at("version").get<int>();
    if (out.manifest.version != kDatasetFormatVersion) {
      throw FormatError("manifest: unsupported version " + std::to_string(out.manifest.version));
    }
    out.manifest.real_ids = range_from(m.at("real_ids"));
    out.manifest.synthetic_ids = range_from(m.at("synthetic_ids"));
    out.manifest.test_ids = range_from(m.at("test_ids"));
    out.manifest.input_dim = m.at("input_dim").get<std::size_t>();
    out.manifest.num_colors = m.at("num_colors").get<std::size_t>();
    out.manifest.num_types = m.at("num_types").get<std::size_t>();
    out.manifest.generator = m.at("generator").dump();
  } catch (const json::exception& e) {
    throw FormatError("manifest '" + mpath.string() + "': " + e.what());
  }
  validate_against_manifest(out.samples, out.manifest);
  return out;
}

Tensor features_matrix(std::span<const Sample> samples) {
  if (samples.empty()) return {};
  Tensor out(samples.size(), samples.front().features.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].features.size() != out.cols()) {
      throw ShapeError("features_matrix: row " + std::to_string(i) + " has " +
                       std::to_string(samples[i].features.size()) + " features");
    }
    std::copy(samples[i].features.begin(), samples[i].features.end(),
              out.row_span(i).begin());
  }
  return out;
}

std::vector<int> ids_of(std::span<const Sample> samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(s.id);
  return out;
}

}  // namespace strdan
