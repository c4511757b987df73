#ifndef STRDAN_TRAINER_HPP_
#define STRDAN_TRAINER_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "strdan/checkpoint.hpp"
#include "strdan/evaluation.hpp"
#include "strdan/losses.hpp"
#include "strdan/network.hpp"
#include "strdan/optimizer.hpp"
#include "strdan/sampling.hpp"

namespace strdan {

// Reversal strength over training. kRamp scales grl_lambda by
// 2 / (1 + exp(-10 p)) - 1, p the fraction of iterations done.
enum class GrlSchedule { kConstant, kRamp };

struct TrainConfig {
  ModelConfig model;
  BatchSpec batch;
  LossWeights weights;
  LrSchedule schedule;
  AmsgradHyper optimizer;
  int epochs = 60;
  // 0 means ceil(training rows / batch size).
  std::size_t iterations_per_epoch = 0;
  std::uint64_t seed = 0;
  // The O, C and T columns.
  bool use_orientation = false;
  bool use_color = false;
  bool use_type = false;
  // The D column.
  bool use_domain_loss = false;
  // R+S when true, R only otherwise.
  bool use_synthetic = false;
  ad::Distance triplet_distance = ad::Distance::kEuclidean;
  ad::Reduction triplet_reduction = ad::Reduction::kSum;
  bool domain_probe = true;
  GrlSchedule grl_schedule = GrlSchedule::kConstant;

  // Throws ValueError. Domain and disjoint losses need synthetic data.
  void validate() const;
  LossOptions loss_options() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Effective reversal strength at iteration `done` (0-based) of `total`.
double grl_lambda_at(const TrainConfig& config, std::int64_t done, std::int64_t total);

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);

struct TrainData {
  std::span<const Sample> real;
  std::span<const Sample> synthetic;
  // Optional held-out real sets; when both are present every epoch snapshot
  // carries their mAP.
  std::span<const Sample> query = {};
  std::span<const Sample> gallery = {};
};

// Class index of the ID head: real identities ascending, then synthetic
// identities ascending.
std::map<std::pair<Domain, int>, int> id_class_map(const TrainData& data, bool use_synthetic);

// The model config actually trained: input_dim and id_classes follow the data.
ModelConfig resolve_model_config(const TrainConfig& config, const TrainData& data);

enum class TrainStatus { kCompleted, kDiverged };

struct TrainResult {
  TrainStatus status = TrainStatus::kCompleted;
  Checkpoint checkpoint;
  // JSONL run log: a config line, one line per iteration, one per epoch.
  std::vector<std::string> log;
  std::vector<LossBreakdown> losses;  // per iteration
  std::int64_t diverged_iteration = 0;
  std::string divergence_reason;
  double train_id_accuracy = 0.0;  // after the last completed epoch
};

// Called with each log line as it is produced.
using LogSink = std::function<void(const std::string&)>;

// Trains from a fresh initialization, or continues `resume_from` (a
// checkpoint written by an earlier run with the same config) up to
// config.epochs. The sampler of epoch e is seeded from (seed, e), so a resumed
// run repeats the uninterrupted run's iterations exactly.
TrainResult train(const TrainConfig& config, const TrainData& data,
                  const std::optional<Checkpoint>& resume_from = std::nullopt,
                  const LogSink& sink = {});

// Fraction of rows whose ID-head argmax equals their class.
double id_accuracy(const ModelParams& params, std::span<const Sample> samples,
                   const std::map<std::pair<Domain, int>, int>& classes);

// Embeds query and gallery with the checkpoint's model and evaluates. The
// report's source field carries the checkpoint fingerprint.
EvalReport evaluate(const Checkpoint& checkpoint, std::span<const Sample> query,
                    std::span<const Sample> gallery, const EvalConfig& config);

// Hex digest of the encoded checkpoint (FNV-1a 64).
std::string checkpoint_fingerprint(const Checkpoint& checkpoint);

// Held-out accuracy of a freshly trained linear real/synthetic classifier on
// the model's embeddings. Within each domain, identities alternate between
// the probe's training half and its scoring half.
double domain_probe_accuracy(const ModelParams& params, std::span<const Sample> real,
                             std::span<const Sample> synthetic, std::uint64_t seed,
                             int steps = 300);

// Balanced real/synthetic accuracy of the model's own domain head.
double domain_head_accuracy(const ModelParams& params, std::span<const Sample> real,
                            std::span<const Sample> synthetic);

}  // namespace strdan

#endif  // STRDAN_TRAINER_HPP_
