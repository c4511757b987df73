#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "strdan/checkpoint.hpp"
#include "strdan/datagen.hpp"
#include "strdan/evaluation.hpp"
#include "support.hpp"

using namespace strdan;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t line_count(const fs::path& p) {
  const std::string s = test::slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

// A small dataset with held-out identities, shared by the train/eval cases.
fs::path make_data(const std::string& name) {
  const fs::path dir = test::temp_dir(name);
  const Run r = run({"gen", "--out", (dir / "data").string(), "--ids-real", "4", "--ids-synth",
                     "4", "--ids-test", "3", "--per-id", "4", "--dim", "6", "--colors", "3",
                     "--types", "2", "--shift-offset", "1.5", "--seed", "3"});
  REQUIRE(r.code == 0);
  return dir;
}

std::vector<std::string> train_args(const fs::path& dir, const std::string& out,
                                    const std::string& losses, bool synth) {
  std::vector<std::string> a = {"train", "--out", (dir / out).string(), "--data",
                                (dir / "data/real.jsonl").string(), "--losses", losses,
                                "--epochs", "2", "--iters-per-epoch", "3", "--embed-dim", "4",
                                "--hidden", "8", "--seed", "1"};
  if (synth) {
    a.push_back("--synth");
    a.push_back((dir / "data/synth.jsonl").string());
  }
  return a;
}

}  // namespace

TEST_CASE("top level") {
  CHECK(run({}).code == cli::kUsage);
  CHECK(run({"bogus"}).code == cli::kUsage);
  CHECK(run({"--help"}).code == cli::kOk);
  CHECK(run({"gen", "--help"}).code == cli::kOk);
}

TEST_CASE("gen") {
  const fs::path dir = test::temp_dir("cli_gen");
  const std::vector<std::string> args = {"gen", "--out", (dir / "a").string(), "--ids-real",
                                         "4", "--ids-synth", "8", "--per-id", "5", "--dim",
                                         "16", "--seed", "7"};
  SUBCASE("counts rows per domain") {
    REQUIRE(run(args).code == 0);
    CHECK(line_count(dir / "a/real.jsonl") == 20);
    CHECK(line_count(dir / "a/synth.jsonl") == 40);
    CHECK(fs::exists(dir / "a/real.manifest.json"));
    CHECK(fs::exists(dir / "a/config.echo"));
    CHECK_NOTHROW(read_dataset(dir / "a/synth.jsonl"));
  }
  SUBCASE("reruns are byte-identical") {
    REQUIRE(run(args).code == 0);
    std::vector<std::string> again = args;
    again[2] = (dir / "b").string();
    REQUIRE(run(again).code == 0);
    for (const char* f : {"real.jsonl", "synth.jsonl", "real.manifest.json", "synth.manifest.json"}) {
      CHECK(test::slurp(dir / "a" / f) == test::slurp(dir / "b" / f));
    }
  }
  SUBCASE("invalid spec is a usage error") {
    std::vector<std::string> bad = args;
    bad.push_back("--per-id");
    bad.push_back("0");
    const Run r = run(bad);
    CHECK(r.code == cli::kUsage);
    CHECK_FALSE(r.err.empty());
  }
  SUBCASE("unknown flag") {
    std::vector<std::string> bad = args;
    bad.push_back("--colour");
    bad.push_back("3");
    CHECK(run(bad).code == cli::kUsage);
  }
  SUBCASE("config file, overridden by flags") {
    test::spit(dir / "gen.cfg", "ids-real = 3\nids-synth = 2\nper-id = 4\ndim = 5\nseed = 11\n");
    REQUIRE(run({"gen", "--config", (dir / "gen.cfg").string(), "--out", (dir / "c").string(),
                 "--per-id", "2"})
                .code == 0);
    CHECK(line_count(dir / "c/real.jsonl") == 6);
    CHECK(line_count(dir / "c/synth.jsonl") == 4);
  }
  SUBCASE("unknown config key is rejected") {
    test::spit(dir / "bad.cfg", "ids-real = 3\nwidth = 5\n");
    CHECK(run({"gen", "--config", (dir / "bad.cfg").string(), "--out", (dir / "d").string()})
              .code == cli::kUsage);
  }
  SUBCASE("the echoed config reproduces the run") {
    REQUIRE(run(args).code == 0);
    REQUIRE(run({"gen", "--config", (dir / "a/config.echo").string(), "--out",
                 (dir / "e").string()})
                .code == 0);
    CHECK(test::slurp(dir / "a/synth.jsonl") == test::slurp(dir / "e/synth.jsonl"));
  }
  SUBCASE("held-out identities produce query and gallery files") {
    std::vector<std::string> more = args;
    more.insert(more.end(), {"--ids-test", "3", "--queries-per-id", "2"});
    REQUIRE(run(more).code == 0);
    CHECK(line_count(dir / "a/query.jsonl") == 6);
    CHECK(line_count(dir / "a/gallery.jsonl") == 9);
  }
  fs::remove_all(dir);
}

TEST_CASE("train") {
  const fs::path dir = make_data("cli_train");
  SUBCASE("baseline run writes the frozen layout") {
    const Run r = run(train_args(dir, "base", "V", false));
    REQUIRE(r.code == 0);
    for (const char* f : {"config.echo", "run.log.jsonl", "checkpoint.bin", "report.json"}) {
      CHECK(fs::exists(dir / "base" / f));
    }
    const json rep = json::parse(test::slurp(dir / "base/report.json"));
    CHECK(rep["status"] == "completed");
    CHECK(rep["iterations"] == 6);
    CHECK(rep["use_synthetic"] == false);
    CHECK(line_count(dir / "base/run.log.jsonl") == 1 + 6 + 2);
  }
  SUBCASE("adapted run with domain and type losses") {
    const Run r = run(train_args(dir, "vdt", "V,D,T", true));
    REQUIRE(r.code == 0);
    const json rep = json::parse(test::slurp(dir / "vdt/report.json"));
    CHECK(rep["final_losses"]["domain"].get<double>() > 0.0);
    CHECK(rep["final_losses"]["type"].get<double>() > 0.0);
    CHECK(rep["final_losses"]["color"] == 0.0);
  }
  SUBCASE("identical invocations give identical logs and checkpoints") {
    REQUIRE(run(train_args(dir, "x", "OCTVD", true)).code == 0);
    REQUIRE(run(train_args(dir, "y", "OCTVD", true)).code == 0);
    CHECK(test::slurp(dir / "x/run.log.jsonl") == test::slurp(dir / "y/run.log.jsonl"));
    CHECK(test::slurp(dir / "x/checkpoint.bin") == test::slurp(dir / "y/checkpoint.bin"));
  }
  SUBCASE("query and gallery give a per-epoch mAP and a final eval") {
    std::vector<std::string> a = train_args(dir, "q", "V", false);
    a.insert(a.end(), {"--query", (dir / "data/query.jsonl").string(), "--gallery",
                       (dir / "data/gallery.jsonl").string()});
    REQUIRE(run(a).code == 0);
    const json rep = json::parse(test::slurp(dir / "q/report.json"));
    CHECK(rep["eval"]["config"]["top_k"] == 100);
  }
  SUBCASE("resume continues to the requested epoch") {
    REQUIRE(run(train_args(dir, "full", "V", false)).code == 0);
    std::vector<std::string> first = train_args(dir, "half", "V", false);
    first[8] = "1";
    REQUIRE(run(first).code == 0);
    std::vector<std::string> rest = train_args(dir, "rest", "V", false);
    rest.insert(rest.end(), {"--resume", (dir / "half/checkpoint.bin").string()});
    REQUIRE(run(rest).code == 0);
    CHECK(test::slurp(dir / "full/checkpoint.bin") == test::slurp(dir / "rest/checkpoint.bin"));
  }
  SUBCASE("usage errors") {
    CHECK(run(train_args(dir, "u1", "D", true)).code == cli::kUsage);
    CHECK(run(train_args(dir, "u2", "V,D", false)).code == cli::kUsage);
    CHECK(run(train_args(dir, "u3", "VX", false)).code == cli::kUsage);
    std::vector<std::string> a = train_args(dir, "u4", "V", false);
    a.insert(a.end(), {"--n", "1"});
    CHECK(run(a).code == cli::kUsage);
  }
  SUBCASE("runtime errors") {
    std::vector<std::string> a = train_args(dir, "r1", "V", false);
    a[4] = (dir / "missing.jsonl").string();
    CHECK(run(a).code == cli::kRuntime);
    test::spit(dir / "bad.jsonl", "{\"domain\":\"real\",\"id\":0,\"features\":[1],\"color\":1}\n");
    a[4] = (dir / "bad.jsonl").string();
    const Run r = run(a);
    CHECK(r.code == cli::kRuntime);
    CHECK(r.err.find("line 1") != std::string::npos);
  }
  SUBCASE("divergence exits with its own code") {
    std::vector<std::string> a = train_args(dir, "div", "V", false);
    a.insert(a.end(), {"--lr", "1e300"});
    const Run r = run(a);
    CHECK(r.code == cli::kDiverged);
    const json rep = json::parse(test::slurp(dir / "div/report.json"));
    CHECK(rep["status"] == "diverged");
    CHECK(rep["diverged_iteration"].get<int>() >= 1);
  }
  fs::remove_all(dir);
}

TEST_CASE("eval") {
  const fs::path dir = make_data("cli_eval");
  REQUIRE(run(train_args(dir, "m", "V", false)).code == 0);
  auto eval_args = [&](const std::string& out) {
    return std::vector<std::string>{"eval", "--checkpoint", (dir / "m/checkpoint.bin").string(),
                                    "--query", (dir / "data/query.jsonl").string(), "--gallery",
                                    (dir / "data/gallery.jsonl").string(), "--out",
                                    (dir / out).string()};
  };
  SUBCASE("default K is 100 and outputs are written") {
    REQUIRE(run(eval_args("e")).code == 0);
    const json rep = json::parse(test::slurp(dir / "e/report.json"));
    CHECK(rep["config"]["top_k"] == 100);
    CHECK(rep["reranked"] == false);
    CHECK(line_count(dir / "e/per_query.csv") == 1 + 3);
    CHECK(fs::exists(dir / "e/precision_recall.csv"));
    CHECK(fs::exists(dir / "e/config.echo"));
  }
  SUBCASE("re-ranking with lambda one keeps mAP") {
    REQUIRE(run(eval_args("plain")).code == 0);
    std::vector<std::string> a = eval_args("rr");
    a.insert(a.end(), {"--rerank", "--lambda", "1.0", "--k1", "4", "--k2", "2"});
    REQUIRE(run(a).code == 0);
    const json p = json::parse(test::slurp(dir / "plain/report.json"));
    const json r = json::parse(test::slurp(dir / "rr/report.json"));
    CHECK(r["reranked"] == true);
    CHECK(r["mAP"] == p["mAP"]);
  }
  SUBCASE("random checkpoint matches the oracle on its embeddings") {
    Checkpoint ck;
    ck.config.input_dim = 6;
    ck.config.hidden_dims = {5};
    ck.config.embed_dim = 4;
    ck.config.id_classes = 4;
    ck.params = init_params(ck.config, 77);
    write_checkpoint(ck, dir / "random.bin");
    std::vector<std::string> a = eval_args("rand");
    a[2] = (dir / "random.bin").string();
    REQUIRE(run(a).code == 0);
    const json rep = json::parse(test::slurp(dir / "rand/report.json"));
    const auto q = read_dataset(dir / "data/query.jsonl").samples;
    const auto g = read_dataset(dir / "data/gallery.jsonl").samples;
    const auto d = oracle::distances(test::to_matrix(embed(ck.params, features_matrix(q))),
                                     test::to_matrix(embed(ck.params, features_matrix(g))), false);
    CHECK(std::abs(rep["mAP"].get<double>() - oracle::mean_ap(d, ids_of(q), ids_of(g), 100)) <
          1e-12);
  }
  SUBCASE("queries without a relevant item are listed") {
    std::vector<std::string> a = eval_args("miss");
    a[6] = (dir / "data/real.jsonl").string();
    const Run r = run(a);
    CHECK(r.code == cli::kRuntime);
    CHECK(r.err.find("0") != std::string::npos);
  }
  SUBCASE("invalid re-rank parameters") {
    std::vector<std::string> a = eval_args("bad");
    a.insert(a.end(), {"--rerank", "--k1", "2", "--k2", "5"});
    CHECK(run(a).code == cli::kUsage);
  }
  fs::remove_all(dir);
}
