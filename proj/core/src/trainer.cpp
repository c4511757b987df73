#include "strdan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "json_io.hpp"
#include "strdan/datagen.hpp"
#include "strdan/random.hpp"

namespace strdan {

namespace {

using ordered_json = nlohmann::ordered_json;

const char* distance_name(ad::Distance d) {
  return d == ad::Distance::kEuclidean ? "euclidean" : "squared_euclidean";
}

ad::Distance parse_distance(const std::string& s) {
  if (s == "euclidean") return ad::Distance::kEuclidean;
  if (s == "squared_euclidean") return ad::Distance::kSquaredEuclidean;
  throw ValueError("unknown triplet distance '" + s + "'");
}

const char* reduction_name(ad::Reduction r) { return r == ad::Reduction::kSum ? "sum" : "mean"; }

ad::Reduction parse_reduction(const std::string& s) {
  if (s == "sum") return ad::Reduction::kSum;
  if (s == "mean") return ad::Reduction::kMean;
  throw ValueError("unknown triplet reduction '" + s + "'");
}

ordered_json breakdown_json(const LossBreakdown& b) {
  ordered_json j;
  j["id"] = b.id_loss;
  j["triplet"] = b.triplet_loss;
  j["domain"] = b.domain_loss;
  j["color"] = b.color_loss;
  j["type"] = b.type_loss;
  j["orientation"] = b.orientation_loss;
  j["total"] = b.total;
  return j;
}

std::size_t argmax_row(const Tensor& t, std::size_t r) {
  auto row = t.row_span(r);
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

bool gradients_finite(const ad::Gradients& grads) {
  return std::all_of(grads.begin(), grads.end(),
                     [](const auto& kv) { return kv.second.all_finite(); });
}

constexpr std::uint64_t kInitSalt = 0;
constexpr std::uint64_t kEpochSalt = 1000;

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ValueError("train config: epochs must be >= 1");
  batch.validate();
  weights.validate();
  schedule.validate();
  if (!use_synthetic && (use_domain_loss || use_orientation || use_color || use_type)) {
    throw ValueError(
        "train config: the domain and color/type/orientation losses need synthetic data");
  }
}

LossOptions TrainConfig::loss_options() const {
  LossOptions o;
  o.weights = weights;
  o.enabled = {use_domain_loss, use_color, use_type, use_orientation};
  o.triplet_distance = triplet_distance;
  o.triplet_reduction = triplet_reduction;
  o.domain_probe = domain_probe;
  return o;
}

double grl_lambda_at(const TrainConfig& config, std::int64_t done, std::int64_t total) {
  const double lambda = config.weights.grl_lambda;
  if (config.grl_schedule == GrlSchedule::kConstant || total <= 0) return lambda;
  const double p = std::clamp(static_cast<double>(done) / static_cast<double>(total), 0.0, 1.0);
  return lambda * (2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0);
}

std::string train_config_to_json(const TrainConfig& c) {
  ordered_json j;
  j["model"] = model_config_to_json(c.model);
  j["batch"] = {{"n", c.batch.n}, {"m", c.batch.m}};
  j["weights"] = {{"disjoint_weight", c.weights.disjoint_weight},
                  {"grl_lambda", c.weights.grl_lambda},
                  {"triplet_margin", c.weights.triplet_margin}};
  j["schedule"] = {{"base_lr", c.schedule.base_lr},
                   {"decay", c.schedule.decay},
                   {"milestones", c.schedule.milestones},
                   {"epochs", c.schedule.epochs}};
  j["optimizer"] = amsgrad_hyper_to_json(c.optimizer);
  j["epochs"] = c.epochs;
  j["iterations_per_epoch"] = c.iterations_per_epoch;
  j["seed"] = c.seed;
  j["use_orientation"] = c.use_orientation;
  j["use_color"] = c.use_color;
  j["use_type"] = c.use_type;
  j["use_domain_loss"] = c.use_domain_loss;
  j["use_synthetic"] = c.use_synthetic;
  j["triplet_distance"] = distance_name(c.triplet_distance);
  j["triplet_reduction"] = reduction_name(c.triplet_reduction);
  j["domain_probe"] = c.domain_probe;
  j["grl_schedule"] = c.grl_schedule == GrlSchedule::kConstant ? "constant" : "ramp";
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    TrainConfig c;
    c.model = model_config_from_json(j.at("model"));
    c.batch.n = j.at("batch").at("n").get<std::size_t>();
    c.batch.m = j.at("batch").at("m").get<std::size_t>();
    const json& w = j.at("weights");
    c.weights.disjoint_weight = w.at("disjoint_weight").get<double>();
    c.weights.grl_lambda = w.at("grl_lambda").get<double>();
    c.weights.triplet_margin = w.at("triplet_margin").get<double>();
    const json& s = j.at("schedule");
    c.schedule.base_lr = s.at("base_lr").get<double>();
    c.schedule.decay = s.at("decay").get<double>();
    c.schedule.milestones = s.at("milestones").get<std::vector<int>>();
    c.schedule.epochs = s.at("epochs").get<int>();
    c.optimizer = amsgrad_hyper_from_json(j.at("optimizer"));
    c.epochs = j.at("epochs").get<int>();
    c.iterations_per_epoch = j.at("iterations_per_epoch").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.use_orientation = j.at("use_orientation").get<bool>();
    c.use_color = j.at("use_color").get<bool>();
    c.use_type = j.at("use_type").get<bool>();
    c.use_domain_loss = j.at("use_domain_loss").get<bool>();
    c.use_synthetic = j.at("use_synthetic").get<bool>();
    c.triplet_distance = parse_distance(j.at("triplet_distance").get<std::string>());
    c.triplet_reduction = parse_reduction(j.at("triplet_reduction").get<std::string>());
    c.domain_probe = j.at("domain_probe").get<bool>();
    const auto schedule = j.at("grl_schedule").get<std::string>();
    if (schedule != "constant" && schedule != "ramp") {
      throw ValueError("unknown grl schedule '" + schedule + "'");
    }
    c.grl_schedule = schedule == "constant" ? GrlSchedule::kConstant : GrlSchedule::kRamp;
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
}

std::map<std::pair<Domain, int>, int> id_class_map(const TrainData& data, bool use_synthetic) {
  std::map<std::pair<Domain, int>, int> out;
  for (const Sample& s : data.real) out.emplace(std::pair{Domain::kReal, s.id}, 0);
  if (use_synthetic) {
    for (const Sample& s : data.synthetic) out.emplace(std::pair{Domain::kSynthetic, s.id}, 0);
  }
  // Map order is (domain, id): real ascending first, then synthetic.
  int next = 0;
  for (auto& [key, cls] : out) cls = next++;
  return out;
}

ModelConfig resolve_model_config(const TrainConfig& config, const TrainData& data) {
  if (data.real.empty()) throw ValueError("train: no real training rows");
  ModelConfig m = config.model;
  m.input_dim = data.real.front().features.size();
  m.id_classes = id_class_map(data, config.use_synthetic).size();
  m.validate();
  return m;
}

double id_accuracy(const ModelParams& params, std::span<const Sample> samples,
                   const std::map<std::pair<Domain, int>, int>& classes) {
  if (samples.empty()) return 0.0;
  const Tensor logits = head_logits(params, embed(params, features_matrix(samples)), Head::kId);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto it = classes.find({samples[i].domain, samples[i].id});
    if (it != classes.end() && argmax_row(logits, i) == static_cast<std::size_t>(it->second)) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

TrainResult train(const TrainConfig& config, const TrainData& data,
                  const std::optional<Checkpoint>& resume_from, const LogSink& sink) {
  config.validate();
  if (config.use_synthetic && data.synthetic.empty()) {
    throw ValueError("train: synthetic data enabled but no synthetic rows given");
  }
  const ModelConfig model = resolve_model_config(config, data);
  const auto classes = id_class_map(data, config.use_synthetic);
  LossOptions loss_options = config.loss_options();

  std::vector<Sample> pool(data.real.begin(), data.real.end());
  if (config.use_synthetic) pool.insert(pool.end(), data.synthetic.begin(), data.synthetic.end());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].features.size() != model.input_dim) {
      throw ShapeError("train: row " + std::to_string(i) + " has " +
                       std::to_string(pool[i].features.size()) + " features, expected " +
                       std::to_string(model.input_dim));
    }
  }
  const IdentityIndex index = build_identity_index(pool);
  const std::size_t batch_size = config.batch.batch_size();
  const std::size_t iterations = config.iterations_per_epoch != 0
                                     ? config.iterations_per_epoch
                                     : (pool.size() + batch_size - 1) / batch_size;

  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  if (resume_from) {
    ck = *resume_from;
    if (ck.config != model) {
      throw ValueError("train: checkpoint model does not match the config and data");
    }
    if (ck.seed != config.seed) throw ValueError("train: checkpoint seed differs from config");
  } else {
    ck.config = model;
    ck.params = init_params(model, derive_seed(config.seed, kInitSalt));
    ck.optimizer.hyper = config.optimizer;
    ck.seed = config.seed;
  }
  ck.metadata = train_config_to_json(config);

  auto emit = [&](const ordered_json& line) {
    result.log.push_back(line.dump());
    if (sink) sink(result.log.back());
  };
  {
    ordered_json head;
    head["type"] = "config";
    head["config"] = json::parse(ck.metadata);
    head["resolved_model"] = model_config_to_json(model);
    head["iterations_per_epoch"] = iterations;
    head["start_epoch"] = ck.epoch;
    emit(head);
  }

  const bool has_eval = !data.query.empty() && !data.gallery.empty();
  const std::vector<int> query_ids = ids_of(data.query);
  const std::vector<int> gallery_ids = ids_of(data.gallery);
  const Tensor query_x = features_matrix(data.query);
  const Tensor gallery_x = features_matrix(data.gallery);

  auto diverge = [&](int epoch, std::int64_t iteration, std::string reason) {
    result.status = TrainStatus::kDiverged;
    result.diverged_iteration = iteration;
    result.divergence_reason = std::move(reason);
    ordered_json line;
    line["type"] = "diverged";
    line["iteration"] = iteration;
    line["epoch"] = epoch;
    line["reason"] = result.divergence_reason;
    emit(line);
  };

  for (int epoch = ck.epoch; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, kEpochSalt + static_cast<std::uint64_t>(epoch)));
    const double lr = lr_at_epoch(config.schedule, epoch);
    for (std::size_t it = 0; it < iterations; ++it) {
      const Batch batch =
          config.use_synthetic
              ? sample_batch(pool, index, config.batch, model.orientation_bins, rng)
              : sample_domain_batch(pool, index, Domain::kReal, 2 * config.batch.n,
                                    config.batch.m, model.orientation_bins, rng);
      BatchTargets targets;
      for (std::size_t r = 0; r < batch.size(); ++r) {
        const int cls = classes.at({static_cast<Domain>(batch.domains[r]), batch.ids[r]});
        targets.id_classes.push_back(cls);
      }
      // Class indices double as triplet identities: they stay distinct even
      // if a real and a synthetic identity share a raw id.
      targets.identities = targets.id_classes;
      targets.domains = batch.domains;
      targets.colors = batch.colors;
      targets.types = batch.types;
      targets.orientation_bins = batch.orientation_bins;
      targets.mask = batch.mask;

      const std::int64_t total_iterations =
          static_cast<std::int64_t>(iterations) * config.epochs;
      loss_options.weights.grl_lambda =
          grl_lambda_at(config, ck.optimizer.step, total_iterations);

      ad::Graph graph;
      const ParamNodes nodes = add_params(graph, ck.params);
      const ad::Node x = graph.input("features");
      const ad::Node emb = embed(graph, nodes, x);
      const TotalLossNodes loss = total_loss(graph, nodes, emb, targets, model, loss_options);
      graph.forward({{"features", batch.features}});

      const std::int64_t step = ck.optimizer.step + 1;
      const LossBreakdown breakdown = loss.breakdown(graph);
      if (!std::isfinite(graph.scalar(loss.objective))) {
        diverge(epoch, step, "non-finite loss");
        return result;
      }
      const ad::Gradients grads = graph.backward(loss.objective);
      if (!gradients_finite(grads)) {
        diverge(epoch, step, "non-finite gradient");
        return result;
      }
      const ModelParams before = ck.params;
      const OptimState before_opt = ck.optimizer;
      amsgrad_step(ck.optimizer, ck.params, grads, lr);
      if (!ck.params.all_finite()) {
        ck.params = before;
        ck.optimizer = before_opt;
        diverge(epoch, step, "non-finite parameters after update");
        return result;
      }

      const Tensor& logits = graph.value(loss.id_logits);
      std::size_t hits = 0;
      for (std::size_t r = 0; r < batch.size(); ++r) {
        if (argmax_row(logits, r) == static_cast<std::size_t>(targets.id_classes[r])) ++hits;
      }
      result.losses.push_back(breakdown);
      ordered_json line;
      line["type"] = "iteration";
      line["iteration"] = step;
      line["epoch"] = epoch;
      line["lr"] = lr;
      if (config.use_domain_loss) line["grl_lambda"] = loss_options.weights.grl_lambda;
      line["losses"] = breakdown_json(breakdown);
      if (loss.domain_probe) line["domain_probe"] = graph.scalar(*loss.domain_probe);
      line["batch_id_accuracy"] = static_cast<double>(hits) / static_cast<double>(batch.size());
      emit(line);
    }

    ck.epoch = epoch + 1;
    result.train_id_accuracy = id_accuracy(ck.params, data.real, classes);
    ordered_json snap;
    snap["type"] = "epoch";
    snap["epoch"] = ck.epoch;
    snap["train_id_accuracy"] = result.train_id_accuracy;
    if (has_eval) {
      const Tensor q = embed(ck.params, query_x);
      const Tensor g = embed(ck.params, gallery_x);
      EvalConfig eval;
      const EvalReport report = evaluate_embeddings({q, g, query_ids, gallery_ids}, eval);
      snap["eval"] = {{"mAP", report.mean_ap}, {"top_k", eval.top_k}};
      for (const auto& [rank, rate] : report.cmc) {
        snap["eval"]["rank" + std::to_string(rank)] = rate;
      }
    }
    emit(snap);
  }
  return result;
}

std::string checkpoint_fingerprint(const Checkpoint& checkpoint) {
  const std::string bytes = encode_checkpoint(checkpoint);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

EvalReport evaluate(const Checkpoint& checkpoint, std::span<const Sample> query,
                    std::span<const Sample> gallery, const EvalConfig& config) {
  config.validate();
  if (query.empty() || gallery.empty()) throw ValueError("evaluate: empty query or gallery");
  const std::size_t dim = checkpoint.params.input_dim();
  for (std::span<const Sample> set : {query, gallery}) {
    for (const Sample& s : set) {
      if (s.features.size() != dim) {
        throw ShapeError("evaluate: sample of dimension " + std::to_string(s.features.size()) +
                         ", checkpoint expects " + std::to_string(dim));
      }
    }
  }
  const Tensor q = embed(checkpoint.params, features_matrix(query));
  const Tensor g = embed(checkpoint.params, features_matrix(gallery));
  const std::vector<int> qid = ids_of(query);
  const std::vector<int> gid = ids_of(gallery);
  std::vector<int> qcam;
  std::vector<int> gcam;
  if (config.same_camera_exclusion) {
    for (const Sample& s : query) {
      if (!s.camera) throw ValueError("evaluate: same-camera exclusion needs camera ids");
      qcam.push_back(*s.camera);
    }
    for (const Sample& s : gallery) {
      if (!s.camera) throw ValueError("evaluate: same-camera exclusion needs camera ids");
      gcam.push_back(*s.camera);
    }
  }
  EvalReport report = evaluate_embeddings({q, g, qid, gid, qcam, gcam}, config);
  report.source = "checkpoint:" + checkpoint_fingerprint(checkpoint) +
                  " epoch:" + std::to_string(checkpoint.epoch);
  return report;
}

double domain_probe_accuracy(const ModelParams& params, std::span<const Sample> real,
                             std::span<const Sample> synthetic, std::uint64_t seed, int steps) {
  // Identities alternate between the probe's training and test halves.
  auto split = [](std::span<const Sample> rows, std::vector<Sample>& train_rows,
                  std::vector<Sample>& test_rows) {
    std::set<int> ids;
    for (const Sample& s : rows) ids.insert(s.id);
    std::map<int, bool> to_train;
    bool flip = true;
    for (int id : ids) {
      to_train[id] = flip;
      flip = !flip;
    }
    for (const Sample& s : rows) (to_train[s.id] ? train_rows : test_rows).push_back(s);
  };
  std::vector<Sample> real_train, real_test, synth_train, synth_test;
  split(real, real_train, real_test);
  split(synthetic, synth_train, synth_test);
  if (real_test.empty() || synth_test.empty()) {
    throw ValueError("domain probe: need at least two identities per domain");
  }

  // Equal rows per domain in each half, evenly spaced, so chance level is 0.5.
  auto gather = [&](const std::vector<Sample>& r, const std::vector<Sample>& s, Tensor& x,
                    std::vector<int>& y) {
    const std::size_t k = std::min(r.size(), s.size());
    std::vector<Sample> rows;
    y.clear();
    for (std::size_t i = 0; i < k; ++i) {
      rows.push_back(r[i * r.size() / k]);
      rows.push_back(s[i * s.size() / k]);
      y.push_back(0);
      y.push_back(1);
    }
    x = embed(params, features_matrix(rows));
  };
  Tensor xtr;
  Tensor xte;
  std::vector<int> ytr;
  std::vector<int> yte;
  gather(real_train, synth_train, xtr, ytr);
  gather(real_test, synth_test, xte, yte);
  const std::size_t dim = xtr.cols();

  // Standardize with training statistics.
  for (std::size_t c = 0; c < dim; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < xtr.rows(); ++r) mean += xtr(r, c);
    mean /= static_cast<double>(xtr.rows());
    double var = 0.0;
    for (std::size_t r = 0; r < xtr.rows(); ++r) var += (xtr(r, c) - mean) * (xtr(r, c) - mean);
    const double sd = std::sqrt(var / static_cast<double>(xtr.rows()));
    const double scale = sd > 1e-12 ? 1.0 / sd : 0.0;
    for (std::size_t r = 0; r < xtr.rows(); ++r) xtr(r, c) = (xtr(r, c) - mean) * scale;
    for (std::size_t r = 0; r < xte.rows(); ++r) xte(r, c) = (xte(r, c) - mean) * scale;
  }

  Rng rng(seed);
  Tensor w(dim, 2);
  for (double& v : w.values()) v = uniform(rng, -0.01, 0.01);
  Tensor b(1, 2);
  OptimState state;
  state.hyper.weight_decay = 1e-3;
  for (int step = 0; step < steps; ++step) {
    ad::Graph graph;
    const ad::Node x = graph.input("x");
    const ad::Node wn = graph.variable("w", w);
    const ad::Node bn = graph.variable("b", b);
    const ad::Node loss =
        graph.softmax_cross_entropy(graph.add_bias(graph.matmul(x, wn), bn), ytr);
    graph.forward({{"x", xtr}});
    const ad::Gradients grads = graph.backward(loss);
    amsgrad_step(state, {{"w", &w}, {"b", &b}}, grads, 0.05);
  }

  const Tensor logits = matmul(xte, w);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < xte.rows(); ++r) {
    const double s0 = logits(r, 0) + b(0, 0);
    const double s1 = logits(r, 1) + b(0, 1);
    if ((s1 > s0 ? 1 : 0) == yte[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(xte.rows());
}

double domain_head_accuracy(const ModelParams& params, std::span<const Sample> real,
                            std::span<const Sample> synthetic) {
  if (real.empty() || synthetic.empty()) {
    throw ValueError("domain head accuracy: both domains need rows");
  }
  auto rate = [&](std::span<const Sample> rows, std::size_t label) {
    const Tensor logits =
        head_logits(params, embed(params, features_matrix(rows)), Head::kDomain);
    std::size_t hits = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) hits += argmax_row(logits, r) == label;
    return static_cast<double>(hits) / static_cast<double>(rows.size());
  };
  return 0.5 * (rate(real, 0) + rate(synthetic, 1));
}

}  // namespace strdan
