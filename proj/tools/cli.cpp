#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "strdan/checkpoint.hpp"
#include "strdan/datagen.hpp"
#include "strdan/evaluation.hpp"
#include "strdan/random.hpp"
#include "strdan/trainer.hpp"

namespace strdan::cli {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// Config or flag values that parse but make no sense together.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void make_app(CLI::App& app) {
  app.set_config("--config", "", "flat key=value file; keys are the long flag names");
  app.allow_config_extras(false);
  app.set_help_flag("-h,--help", "print help and exit");
}

// Returns an exit code when parsing ends the command (help or error).
std::optional<int> parse(CLI::App& app, const std::vector<std::string>& args,
                         std::ostream& out, std::ostream& err) {
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << app.get_name() << ": " << e.what() << "\n";
    return kUsage;
  }
  return std::nullopt;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw Error("failed writing '" + path.string() + "'");
}

void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error("cannot create output directory '" + dir.string() + "'");
  }
}

std::string echo(const CLI::App& app) { return app.config_to_str(true, false); }

struct LossLetters {
  bool o = false, c = false, t = false, v = false, d = false;
};

LossLetters parse_losses(const std::string& text) {
  LossLetters l;
  for (char ch : text) {
    switch (ch) {
      case 'O': case 'o': l.o = true; break;
      case 'C': case 'c': l.c = true; break;
      case 'T': case 't': l.t = true; break;
      case 'V': case 'v': l.v = true; break;
      case 'D': case 'd': l.d = true; break;
      case ',': case ' ': case '+': break;
      default:
        throw UsageError(std::string("--losses: unknown letter '") + ch +
                         "' (expected O, C, T, V, D)");
    }
  }
  if (!l.v) throw UsageError("--losses must include V (the ID losses are always on)");
  return l;
}

int cmd_gen(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"generate a two-domain toy dataset", "strdan gen"};
  make_app(app);
  ToySpec spec;
  std::string out_dir;
  std::size_t queries_per_id = 1;
  double shift_scale = 0.0;
  double shift_offset = 0.0;
  std::size_t shift_offset_from = 0;
  app.add_option("--out", out_dir, "output directory")->required();
  app.add_option("--ids-real", spec.num_ids_real, "real training identities")->capture_default_str();
  app.add_option("--ids-synth", spec.num_ids_synth, "synthetic identities")->capture_default_str();
  app.add_option("--ids-test", spec.num_ids_test, "held-out real identities (query/gallery)")
      ->capture_default_str();
  app.add_option("--per-id", spec.samples_per_id, "samples per identity")->capture_default_str();
  app.add_option("--dim", spec.input_dim, "feature dimension")->capture_default_str();
  app.add_option("--colors", spec.num_colors, "color vocabulary size")->capture_default_str();
  app.add_option("--types", spec.num_types, "type vocabulary size")->capture_default_str();
  app.add_option("--shared-centers", spec.shared_centers,
                 "synthetic identities reusing real cluster centers")->capture_default_str();
  app.add_option("--signal-dim", spec.signal_dim, "dimension of the center subspace, 0 = dim")
      ->capture_default_str();
  app.add_option("--center-scale", spec.center_scale, "std of center coordinates")
      ->capture_default_str();
  app.add_option("--cluster-sep", spec.cluster_sep, "minimum center distance")
      ->capture_default_str();
  app.add_option("--noise", spec.noise_sigma, "per-sample noise std")->capture_default_str();
  app.add_option("--orientation-amplitude", spec.orientation_amplitude,
                 "orientation nuisance amplitude")->capture_default_str();
  app.add_option("--shift-scale", shift_scale, "random linear part of the domain shift")
      ->capture_default_str();
  app.add_option("--shift-offset", shift_offset, "norm of the domain shift offset")
      ->capture_default_str();
  app.add_option("--shift-offset-from", shift_offset_from,
                 "first coordinate the offset may use (e.g. the signal dim)")
      ->capture_default_str();
  app.add_option("--queries-per-id", queries_per_id, "query samples per held-out identity")
      ->capture_default_str();
  app.add_option("--seed", spec.seed, "generator seed")->capture_default_str();
  if (auto code = parse(app, args, out, err)) return *code;

  try {
    if (shift_scale < 0.0 || shift_offset < 0.0) {
      throw UsageError("--shift-scale and --shift-offset must be >= 0");
    }
    if (shift_scale > 0.0 || shift_offset > 0.0) {
      spec.domain_shift = AffineShift::random(spec.input_dim, shift_scale, shift_offset,
                                              derive_seed(spec.seed, 0x5348), shift_offset_from);
    }
    spec.validate();
    if (spec.num_ids_test > 0 && queries_per_id >= spec.samples_per_id) {
      throw UsageError("--queries-per-id must leave gallery samples for every test identity");
    }
  } catch (const std::exception& e) {
    err << "strdan gen: " << e.what() << "\n";
    return kUsage;
  }

  const GeneratedDataset data = generate_toy_dataset(spec);
  const DatasetSplits splits = split_dataset(data, queries_per_id);
  const fs::path dir(out_dir);
  prepare_out_dir(dir);
  write_dataset(splits.real, data.manifest, dir / "real.jsonl");
  write_dataset(splits.synthetic, data.manifest, dir / "synth.jsonl");
  if (spec.num_ids_test > 0) {
    write_dataset(splits.query, data.manifest, dir / "query.jsonl");
    write_dataset(splits.gallery, data.manifest, dir / "gallery.jsonl");
  }
  write_text(dir / "config.echo", echo(app));
  out << "real " << splits.real.size() << " synthetic " << splits.synthetic.size() << " query "
      << splits.query.size() << " gallery " << splits.gallery.size() << "\n";
  return kOk;
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

int cmd_train(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"train an embedder", "strdan train"};
  make_app(app);
  TrainConfig cfg;
  std::string out_dir, data_path, synth_path, query_path, gallery_path, resume_path;
  std::string losses = "V";
  std::string distance = "euclidean";
  std::string reduction = "sum";
  std::string triplet_source = "embedding";
  std::string grl_schedule = "constant";
  app.add_option("--out", out_dir, "output directory")->required();
  app.add_option("--data", data_path, "real training rows (JSONL)")->required();
  app.add_option("--synth", synth_path, "synthetic training rows; enables R+S");
  app.add_option("--query", query_path, "held-out query rows for per-epoch mAP");
  app.add_option("--gallery", gallery_path, "held-out gallery rows for per-epoch mAP");
  app.add_option("--resume", resume_path, "checkpoint to continue from");
  app.add_option("--losses", losses, "letters from O,C,T,V,D; V is required")
      ->capture_default_str();
  app.add_option("--epochs", cfg.epochs, "training epochs")->capture_default_str();
  app.add_option("--iters-per-epoch", cfg.iterations_per_epoch,
                 "iterations per epoch, 0 = ceil(rows / batch)")->capture_default_str();
  app.add_option("--seed", cfg.seed, "training seed")->capture_default_str();
  app.add_option("--n", cfg.batch.n, "identities per domain in a batch")->capture_default_str();
  app.add_option("--m", cfg.batch.m, "samples per identity in a batch")->capture_default_str();
  app.add_option("--lr", cfg.schedule.base_lr, "base learning rate")->capture_default_str();
  app.add_option("--lr-decay", cfg.schedule.decay, "factor applied at each milestone")
      ->capture_default_str();
  app.add_option("--milestones", cfg.schedule.milestones, "epochs where the lr decays")
      ->delimiter(',')->capture_default_str();
  app.add_option("--beta1", cfg.optimizer.beta1)->capture_default_str();
  app.add_option("--beta2", cfg.optimizer.beta2)->capture_default_str();
  app.add_option("--eps", cfg.optimizer.eps)->capture_default_str();
  app.add_option("--weight-decay", cfg.optimizer.weight_decay)->capture_default_str();
  app.add_option("--hidden", cfg.model.hidden_dims, "hidden layer widths")
      ->delimiter(',')->capture_default_str();
  app.add_option("--embed-dim", cfg.model.embed_dim, "embedding width")->capture_default_str();
  app.add_option("--orientation-bins", cfg.model.orientation_bins)->capture_default_str();
  app.add_flag("--normalize", cfg.model.normalize_embeddings,
               "L2-normalize embeddings before the triplet loss");
  app.add_option("--triplet-source", triplet_source, "embedding or id_logits")
      ->check(CLI::IsMember({"embedding", "id_logits"}))->capture_default_str();
  app.add_option("--triplet-distance", distance, "euclidean or squared_euclidean")
      ->check(CLI::IsMember({"euclidean", "squared_euclidean"}))->capture_default_str();
  app.add_option("--triplet-reduction", reduction, "sum or mean")
      ->check(CLI::IsMember({"sum", "mean"}))->capture_default_str();
  app.add_option("--margin", cfg.weights.triplet_margin)->capture_default_str();
  app.add_option("--disjoint-weight", cfg.weights.disjoint_weight,
                 "weight of the color/type/orientation sum")->capture_default_str();
  app.add_option("--grl-lambda", cfg.weights.grl_lambda, "gradient reversal strength")
      ->capture_default_str();
  app.add_option("--grl-schedule", grl_schedule, "constant or ramp")
      ->check(CLI::IsMember({"constant", "ramp"}))->capture_default_str();
  if (auto code = parse(app, args, out, err)) return *code;

  try {
    const LossLetters l = parse_losses(losses);
    cfg.use_orientation = l.o;
    cfg.use_color = l.c;
    cfg.use_type = l.t;
    cfg.use_domain_loss = l.d;
    cfg.use_synthetic = !synth_path.empty();
    if ((l.o || l.c || l.t || l.d) && synth_path.empty()) {
      throw UsageError("--losses with O, C, T or D needs --synth");
    }
    if (query_path.empty() != gallery_path.empty()) {
      throw UsageError("--query and --gallery go together");
    }
    cfg.model.triplet_source =
        triplet_source == "embedding" ? TripletSource::kEmbedding : TripletSource::kIdLogits;
    cfg.triplet_distance =
        distance == "euclidean" ? ad::Distance::kEuclidean : ad::Distance::kSquaredEuclidean;
    cfg.triplet_reduction = reduction == "sum" ? ad::Reduction::kSum : ad::Reduction::kMean;
    cfg.grl_schedule = grl_schedule == "ramp" ? GrlSchedule::kRamp : GrlSchedule::kConstant;
    cfg.schedule.epochs = cfg.epochs;
    cfg.validate();
  } catch (const std::exception& e) {
    err << "strdan train: " << e.what() << "\n";
    return kUsage;
  }

  const LoadedDataset real = read_dataset(data_path);
  LoadedDataset synth;
  if (!synth_path.empty()) {
    synth = read_dataset(synth_path);
    cfg.model.color_classes = std::max<std::size_t>(1, synth.manifest.num_colors);
    cfg.model.type_classes = std::max<std::size_t>(1, synth.manifest.num_types);
  }
  LoadedDataset query, gallery;
  if (!query_path.empty()) {
    query = read_dataset(query_path);
    gallery = read_dataset(gallery_path);
  }
  std::optional<Checkpoint> resume;
  if (!resume_path.empty()) resume = read_checkpoint(resume_path);

  const fs::path dir(out_dir);
  prepare_out_dir(dir);
  write_text(dir / "config.echo", echo(app));
  std::ofstream log(dir / "run.log.jsonl", std::ios::binary | std::ios::trunc);
  if (!log) throw Error("cannot open run log in '" + dir.string() + "'");

  TrainData data{real.samples, synth.samples, query.samples, gallery.samples};
  const auto started = std::chrono::steady_clock::now();
  const TrainResult result =
      train(cfg, data, resume, [&log](const std::string& line) { log << line << '\n'; });
  log.close();
  write_checkpoint(result.checkpoint, dir / "checkpoint.bin");

  const bool diverged = result.status == TrainStatus::kDiverged;
  ordered_json report;
  report["format"] = "strdan-train-report";
  report["version"] = 1;
  report["status"] = diverged ? "diverged" : "completed";
  report["losses"] = losses;
  report["use_synthetic"] = cfg.use_synthetic;
  report["epochs_completed"] = result.checkpoint.epoch;
  report["iterations"] = result.checkpoint.optimizer.step;
  report["diverged_iteration"] = diverged ? ordered_json(result.diverged_iteration) : nullptr;
  report["divergence_reason"] = diverged ? ordered_json(result.divergence_reason) : nullptr;
  report["final_losses"] =
      result.losses.empty() ? ordered_json(nullptr) : breakdown_json(result.losses.back());
  report["train_id_accuracy"] = result.train_id_accuracy;
  report["checkpoint"] = checkpoint_fingerprint(result.checkpoint);
  report["eval"] = nullptr;
  if (!query.samples.empty()) {
    const EvalReport eval = evaluate(result.checkpoint, query.samples, gallery.samples, {});
    report["eval"] = ordered_json::parse(report_to_json(eval));
  }
  write_text(dir / "report.json", report.dump(2) + "\n");

  if (diverged) {
    err << "strdan train: diverged at iteration " << result.diverged_iteration << " ("
        << result.divergence_reason << ")\n";
    return kDiverged;
  }
  out << "epochs " << result.checkpoint.epoch << " iterations "
      << result.checkpoint.optimizer.step << " train_id_accuracy "
      << result.train_id_accuracy << " wall_seconds "
      << std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()
      << "\n";
  return kOk;
}

int cmd_eval(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"evaluate a checkpoint on query/gallery rows", "strdan eval"};
  make_app(app);
  std::string checkpoint_path, query_path, gallery_path, out_dir;
  std::string metric = "euclidean";
  EvalConfig cfg;
  RerankConfig rr;
  bool rerank = false;
  app.add_option("--checkpoint", checkpoint_path, "checkpoint.bin from train")->required();
  app.add_option("--query", query_path, "query rows (JSONL)")->required();
  app.add_option("--gallery", gallery_path, "gallery rows (JSONL)")->required();
  app.add_option("--out", out_dir, "output directory")->required();
  app.add_option("--topk", cfg.top_k, "mAP cutoff K")->capture_default_str();
  app.add_option("--metric", metric, "euclidean or squared_euclidean")
      ->check(CLI::IsMember({"euclidean", "squared_euclidean"}))->capture_default_str();
  app.add_flag("--exclude-self", cfg.exclude_self, "query i never matches gallery i");
  app.add_flag("--same-camera", cfg.same_camera_exclusion,
               "drop gallery items sharing id and camera with the query");
  app.add_flag("--rerank", rerank, "apply k-reciprocal re-ranking");
  app.add_option("--k1", rr.k1)->capture_default_str();
  app.add_option("--k2", rr.k2)->capture_default_str();
  app.add_option("--lambda", rr.lambda_orig, "weight of the original distance")
      ->capture_default_str();
  if (auto code = parse(app, args, out, err)) return *code;

  try {
    cfg.metric = parse_metric(metric);
    if (rerank) cfg.rerank = rr;
    cfg.validate();
  } catch (const std::exception& e) {
    err << "strdan eval: " << e.what() << "\n";
    return kUsage;
  }

  const Checkpoint ck = read_checkpoint(checkpoint_path);
  const LoadedDataset query = read_dataset(query_path);
  const LoadedDataset gallery = read_dataset(gallery_path);
  EvalReport report;
  try {
    report = evaluate(ck, query.samples, gallery.samples, cfg);
  } catch (const MissingRelevantError& e) {
    err << "strdan eval: queries without a relevant gallery item:";
    for (std::size_t q : e.queries()) err << ' ' << q;
    err << "\n";
    return kRuntime;
  }
  const fs::path dir(out_dir);
  prepare_out_dir(dir);
  write_text(dir / "config.echo", echo(app));
  write_text(dir / "report.json", report_to_json(report) + "\n");
  write_text(dir / "per_query.csv", per_query_csv(report, ids_of(query.samples)));
  write_text(dir / "precision_recall.csv", precision_recall_csv(report.pr_curves));
  out << "mAP@" << cfg.top_k << ' ' << report.mean_ap;
  if (report.mean_ap_original) out << " (original " << *report.mean_ap_original << ")";
  for (const auto& [rank, rate] : report.cmc) out << " rank" << rank << ' ' << rate;
  out << "\n";
  return kOk;
}

const char* kUsageText =
    "usage: strdan <command> [options]\n"
    "\n"
    "commands:\n"
    "  gen     generate a toy two-domain dataset\n"
    "  train   train an embedder (exit 3 when the divergence guard stops it)\n"
    "  eval    score a checkpoint on query/gallery rows\n"
    "\n"
    "run 'strdan <command> --help' for the options of a command\n";

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    err << kUsageText;
    return kUsage;
  }
  const std::string& command = args.front();
  const std::vector<std::string> rest(args.begin() + 1, args.end());
  try {
    if (command == "gen") return cmd_gen(rest, out, err);
    if (command == "train") return cmd_train(rest, out, err);
    if (command == "eval") return cmd_eval(rest, out, err);
    if (command == "-h" || command == "--help" || command == "help") {
      out << kUsageText;
      return kOk;
    }
  } catch (const std::exception& e) {
    err << "strdan " << command << ": " << e.what() << "\n";
    return kRuntime;
  }
  err << "strdan: unknown command '" << command << "'\n" << kUsageText;
  return kUsage;
}

}  // namespace strdan::cli
