#include <cmath>
#include <set>

#include "doctest.h"
#include "strdan/datagen.hpp"
#include "support.hpp"

using namespace strdan;

namespace {

ToySpec small_spec() {
  ToySpec s;
  s.num_ids_real = 4;
  s.num_ids_synth = 6;
  s.samples_per_id = 5;
  s.input_dim = 6;
  s.num_colors = 3;
  s.num_types = 2;
  s.seed = 42;
  return s;
}

std::size_t count_domain(const std::vector<Sample>& v, Domain d) {
  return static_cast<std::size_t>(
      std::count_if(v.begin(), v.end(), [d](const Sample& s) { return s.domain == d; }));
}

}  // namespace

TEST_CASE("generate_toy_dataset") {
  SUBCASE("counts and label schema") {
    const auto data = generate_toy_dataset(small_spec());
    CHECK(count_domain(data.samples, Domain::kReal) == 20);
    CHECK(count_domain(data.samples, Domain::kSynthetic) == 30);
    for (const Sample& s : data.samples) {
      if (s.domain == Domain::kReal) {
        CHECK_FALSE(s.color.has_value());
        CHECK_FALSE(s.type.has_value());
        CHECK_FALSE(s.orientation_deg.has_value());
      } else {
        REQUIRE(s.has_disjoint_labels());
        CHECK(*s.orientation_deg >= 0.0);
        CHECK(*s.orientation_deg < 360.0);
        CHECK(*s.color < 3);
        CHECK(*s.type < 2);
      }
      CHECK(s.features.size() == 6);
    }
  }
  SUBCASE("same seed, same data") {
    const auto a = generate_toy_dataset(small_spec());
    const auto b = generate_toy_dataset(small_spec());
    CHECK(a.samples == b.samples);
    CHECK(a.manifest == b.manifest);
    ToySpec other = small_spec();
    other.seed = 43;
    CHECK_FALSE(generate_toy_dataset(other).samples == a.samples);
  }
  SUBCASE("matched centers coincide without shift and noise") {
    ToySpec s = small_spec();
    s.shared_centers = 2;
    s.noise_sigma = 0.0;
    const auto data = generate_toy_dataset(s);
    const auto first_synth = std::find_if(data.samples.begin(), data.samples.end(),
                                          [](const Sample& x) { return x.domain == Domain::kSynthetic; });
    REQUIRE(first_synth != data.samples.end());
    CHECK(first_synth->id == 4);
    CHECK(first_synth->features == data.samples[0].features);
  }
  SUBCASE("manifest ranges partition the ids present") {
    ToySpec s = small_spec();
    s.num_ids_test = 3;
    const auto data = generate_toy_dataset(s);
    const DatasetManifest& m = data.manifest;
    CHECK(m.real_ids == IdRange{0, 7});
    CHECK(m.test_ids == IdRange{4, 7});
    CHECK(m.synthetic_ids == IdRange{7, 13});
    std::set<int> real, synth;
    for (const Sample& x : data.samples) {
      (x.domain == Domain::kReal ? real : synth).insert(x.id);
      CHECK((x.domain == Domain::kReal ? m.real_ids : m.synthetic_ids).contains(x.id));
    }
    CHECK(real.size() == 7);
    CHECK(synth.size() == 6);
  }
  SUBCASE("identity colors and types are fixed per identity") {
    const auto data = generate_toy_dataset(small_spec());
    std::map<int, std::pair<int, int>> seen;
    for (const Sample& x : data.samples) {
      if (x.domain != Domain::kSynthetic) continue;
      auto [it, fresh] = seen.emplace(x.id, std::pair{*x.color, *x.type});
      if (!fresh) CHECK(it->second == std::pair{*x.color, *x.type});
    }
  }
  SUBCASE("clusters respect the separation") {
    ToySpec s = small_spec();
    s.noise_sigma = 0.0;
    s.cluster_sep = 1.5;
    const auto data = generate_toy_dataset(s);
    std::map<int, std::vector<double>> centers;
    for (const Sample& x : data.samples) {
      if (x.domain == Domain::kReal) centers.emplace(x.id, x.features);
    }
    for (const auto& [a, ca] : centers) {
      for (const auto& [b, cb] : centers) {
        if (a < b) CHECK(oracle::euclidean(ca, cb) >= 1.5);
      }
    }
  }
  SUBCASE("infeasible separation is reported") {
    ToySpec s = small_spec();
    s.input_dim = 1;
    s.cluster_sep = 50.0;
    CHECK_THROWS_AS(generate_toy_dataset(s), ValueError);
  }
  SUBCASE("invalid specs") {
    ToySpec s = small_spec();
    s.cluster_sep = 0.0;
    CHECK_THROWS_AS(s.validate(), ValueError);
    s = small_spec();
    s.noise_sigma = -1.0;
    CHECK_THROWS_AS(s.validate(), ValueError);
    s = small_spec();
    s.samples_per_id = 0;
    CHECK_THROWS_AS(s.validate(), ValueError);
    s = small_spec();
    s.domain_shift = AffineShift::identity(5);
    CHECK_THROWS_AS(s.validate(), ValueError);
  }
}

TEST_CASE("AffineShift") {
  SUBCASE("identity") {
    const AffineShift id = AffineShift::identity(3);
    CHECK(id.apply(std::vector<double>{1, -2, 3}) == std::vector<double>{1, -2, 3});
  }
  SUBCASE("random offset stays in the requested coordinates") {
    const AffineShift s = AffineShift::random(6, 0.0, 2.5, 9, 4);
    CHECK(s.offset[0] == 0.0);
    CHECK(s.offset[3] == 0.0);
    CHECK(std::hypot(s.offset[4], s.offset[5]) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(s.apply(std::vector<double>(6, 1.0))[4] == doctest::Approx(1.0 + s.offset[4]));
  }
  SUBCASE("empty offset range") {
    CHECK_THROWS_AS(AffineShift::random(4, 0.0, 1.0, 1, 4), ValueError);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(AffineShift::identity(3).apply(std::vector<double>{1, 2}), ShapeError);
  }
}

TEST_CASE("split_dataset") {
  ToySpec s = small_spec();
  s.num_ids_test = 3;
  const auto data = generate_toy_dataset(s);
  const DatasetSplits sp = split_dataset(data, 2);
  CHECK(sp.real.size() == 20);
  CHECK(sp.synthetic.size() == 30);
  CHECK(sp.query.size() == 6);
  CHECK(sp.gallery.size() == 9);
  for (const Sample& x : sp.query) CHECK(data.manifest.test_ids.contains(x.id));
  for (const Sample& x : sp.real) CHECK_FALSE(data.manifest.test_ids.contains(x.id));
}

TEST_CASE("dataset files") {
  const auto dir = test::temp_dir("datagen");
  SUBCASE("round trip is exact") {
    ToySpec s = small_spec();
    s.domain_shift = AffineShift::random(6, 0.3, 1.0, 5);
    s.orientation_amplitude = 0.5;
    const auto data = generate_toy_dataset(s);
    write_dataset(data.samples, data.manifest, dir / "all.jsonl");
    CHECK(std::filesystem::exists(dir / "all.manifest.json"));
    const LoadedDataset back = read_dataset(dir / "all.jsonl");
    CHECK(back.samples == data.samples);
    CHECK(back.manifest == data.manifest);
  }
  SUBCASE("hand-written file parses to the literal values") {
    test::spit(dir / "two.jsonl",
               "{\"domain\":\"real\",\"id\":3,\"features\":[0.5,-1.25]}\n"
               "{\"domain\":\"synthetic\",\"id\":10,\"features\":[2,1e-3],\"color\":1,"
               "\"type\":0,\"orientation_deg\":45.5,\"camera\":2}\n");
    const LoadedDataset d = read_dataset(dir / "two.jsonl");
    REQUIRE(d.samples.size() == 2);
    CHECK(d.samples[0].domain == Domain::kReal);
    CHECK(d.samples[0].id == 3);
    CHECK(d.samples[0].features == std::vector<double>{0.5, -1.25});
    CHECK(d.samples[1].features == std::vector<double>{2.0, 0.001});
    CHECK(*d.samples[1].color == 1);
    CHECK(*d.samples[1].type == 0);
    CHECK(*d.samples[1].orientation_deg == 45.5);
    CHECK(*d.samples[1].camera == 2);
    CHECK(d.manifest.real_ids == IdRange{3, 4});
    CHECK(d.manifest.synthetic_ids == IdRange{10, 11});
    CHECK(d.manifest.input_dim == 2);
  }
  SUBCASE("a real row with an orientation is rejected at its line") {
    test::spit(dir / "bad.jsonl",
               "{\"domain\":\"real\",\"id\":0,\"features\":[1]}\n"
               "\n"
               "{\"domain\":\"real\",\"id\":1,\"features\":[1],\"orientation_deg\":30}\n");
    try {
      read_dataset(dir / "bad.jsonl");
      FAIL("expected DatasetLineError");
    } catch (const DatasetLineError& e) {
      CHECK(e.line() == 3);
    }
  }
  SUBCASE("schema violations") {
    CHECK_THROWS_AS(decode_sample("{\"domain\":\"synthetic\",\"id\":1,\"features\":[1]}", 1),
                    DatasetLineError);
    CHECK_THROWS_AS(decode_sample("{\"domain\":\"real\",\"id\":1,\"features\":[1],\"x\":0}", 1),
                    DatasetLineError);
    CHECK_THROWS_AS(decode_sample("{\"domain\":\"real\",\"id\":1.5,\"features\":[1]}", 1),
                    DatasetLineError);
    CHECK_THROWS_AS(decode_sample("{\"domain\":\"real\",\"id\":1,\"features\":[]}", 1),
                    DatasetLineError);
    CHECK_THROWS_AS(decode_sample("not json", 7), DatasetLineError);
  }
  SUBCASE("rows must agree with the manifest") {
    const auto data = generate_toy_dataset(small_spec());
    DatasetManifest m = data.manifest;
    m.real_ids = {0, 2};
    CHECK_THROWS_AS(validate_against_manifest(data.samples, m), FormatError);
    m = data.manifest;
    m.synthetic_ids = {3, 10};
    CHECK_THROWS_AS(validate_against_manifest(data.samples, m), FormatError);
  }
  SUBCASE("encode then decode is exact") {
    Sample s{Domain::kSynthetic, 9, {0.1, 1.0 / 3.0, -2e-300}, 2, 1, 359.99999999999994, 4};
    CHECK(decode_sample(encode_sample(s), 1) == s);
  }
  std::filesystem::remove_all(dir);
}
