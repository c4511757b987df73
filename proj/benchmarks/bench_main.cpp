#include <benchmark/benchmark.h>

#include "strdan/datagen.hpp"
#include "strdan/evaluation.hpp"
#include "strdan/losses.hpp"
#include "strdan/optimizer.hpp"
#include "strdan/sampling.hpp"

using namespace strdan;

namespace {

Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor t(rows, cols);
  for (double& v : t.values()) v = standard_normal(rng);
  return t;
}

void bm_train_step(benchmark::State& state) {
  ToySpec spec;
  spec.num_ids_real = 16;
  spec.num_ids_synth = 16;
  spec.input_dim = 32;
  spec.seed = 1;
  const auto data = generate_toy_dataset(spec);
  const IdentityIndex index = build_identity_index(data.samples);
  ModelConfig mc;
  mc.input_dim = 32;
  mc.hidden_dims = {static_cast<std::size_t>(state.range(0))};
  mc.embed_dim = 32;
  mc.id_classes = 32;
  ModelParams params = init_params(mc, 1);
  OptimState opt;
  Rng rng(2);
  LossOptions lo;
  for (auto _ : state) {
    const Batch b = sample_batch(data.samples, index, {4, 4}, mc.orientation_bins, rng);
    BatchTargets t;
    t.id_classes = b.ids;
    t.identities = b.ids;
    t.domains = b.domains;
    t.colors = b.colors;
    t.types = b.types;
    t.orientation_bins = b.orientation_bins;
    t.mask = b.mask;
    ad::Graph g;
    const ParamNodes nodes = add_params(g, params);
    ad::Node e = embed(g, nodes, g.input("x"));
    const TotalLossNodes tl = total_loss(g, nodes, e, t, mc, lo);
    g.forward({{"x", b.features}});
    amsgrad_step(opt, params, g.backward(tl.objective), 3e-4);
  }
}
BENCHMARK(bm_train_step)->Arg(64)->Arg(256);

void bm_map(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  const Tensor d = random_tensor(rng, n, 4 * n);
  std::vector<int> qids(n), gids(4 * n);
  for (int& v : qids) v = static_cast<int>(uniform_index(rng, 20));
  for (std::size_t i = 0; i < gids.size(); ++i) gids[i] = static_cast<int>(i % 20);
  for (auto _ : state) benchmark::DoNotOptimize(mean_average_precision(d, qids, gids, 100));
}
BENCHMARK(bm_map)->Arg(50)->Arg(200);

void bm_rerank(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  const Tensor q = random_tensor(rng, n, 16);
  const Tensor g = random_tensor(rng, 4 * n, 16);
  for (auto _ : state) benchmark::DoNotOptimize(k_reciprocal_rerank(q, g, RerankConfig{}));
}
BENCHMARK(bm_rerank)->Arg(25)->Arg(100);

}  // namespace

BENCHMARK_MAIN();
