#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "sevbench/io.hpp"
#include "support.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

/// Runs the CLI through the shell with `args` appended verbatim.
Run run_cli(const testing::TempDir& dir, const std::string& args, const std::string& env = "") {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = "cd '" + dir.path().string() + "' && " + env + " '" SEVBENCH_CLI "' " + args + " >'" +
                          out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = sevbench::read_text(out);
  r.err = sevbench::read_text(err);
  return r;
}

std::string slurp(const fs::path& p) { return sevbench::read_text(p); }

}  // namespace

TEST_CASE("tree validate and export") {
  testing::TempDir dir;
  auto r = run_cli(dir, "tree validate --tree '" SEVBENCH_CONFIG_DIR "/default_tree.json'");
  CHECK(r.code == 0);
  CHECK(json::parse(r.out)["valid"] == true);

  r = run_cli(dir, "tree export --out exported.json");
  CHECK(r.code == 0);
  CHECK(json::parse(slurp(dir / "exported.json")) == json::parse(slurp(SEVBENCH_CONFIG_DIR "/default_tree.json")));

  auto tree = json::parse(slurp(dir / "exported.json"));
  tree["nodes"].erase("leaf_sev0");
  std::ofstream(dir / "broken.json") << tree.dump();
  r = run_cli(dir, "tree validate --tree broken.json");
  CHECK(r.code == 1);
  const auto err = json::parse(r.err);
  CHECK(err["error"]["kind"] == "invalid_tree");
  CHECK_FALSE(err["error"]["violations"].empty());
}

TEST_CASE("usage errors exit 2 and domain errors exit 1 with JSON") {
  testing::TempDir dir;
  CHECK(run_cli(dir, "--help").code == 0);
  CHECK(run_cli(dir, "").code == 2);
  CHECK(run_cli(dir, "sample --vectors v.bin --k 0").code == 2);
  CHECK(run_cli(dir, "sample --vectors v.bin --k 3 --solver magic").code == 2);
  CHECK(run_cli(dir, "frobnicate").code == 2);

  const auto r = run_cli(dir, "sample --vectors missing.bin --k 3");
  CHECK(r.code == 1);
  const auto err = json::parse(r.err);
  CHECK(err["error"].contains("kind"));
  CHECK(err["error"].contains("message"));
  CHECK(r.err.find('\n') == r.err.size() - 1);
}

TEST_CASE("synth, embed, sample and estimate") {
  testing::TempDir dir;
  REQUIRE(run_cli(dir, "--seed 4 synth --out-dir fx --size 300 --dim 16 --clusters 4").code == 0);
  for (const auto* f : {"interactions.jsonl", "vectors.bin", "gold.jsonl", "truth.json"}) {
    CHECK(fs::exists(dir / "fx" / f));
  }
  REQUIRE(run_cli(dir,
                   "embed --interactions fx/interactions.jsonl --out emb.bin --embedder external_file "
                   "--vector-file fx/vectors.bin")
              .code == 0);
  CHECK(slurp(dir / "emb.bin") == slurp(dir / "fx" / "vectors.bin"));
  REQUIRE(run_cli(dir, "sample --vectors emb.bin --k 100 --solver giga --out cs.json").code == 0);
  const auto cs = json::parse(slurp(dir / "cs.json"));
  CHECK(cs["solver"] == "giga");
  const auto r = run_cli(dir, "estimate --coreset cs.json --annotations fx/gold.jsonl");
  REQUIRE(r.code == 0);
  const auto est = json::parse(r.out);
  const auto truth = json::parse(slurp(dir / "fx" / "truth.json"));
  double sum = 0.0;
  for (const auto* label : {"NoError", "Sev0", "Sev1", "Sev2"}) {
    const double p = est["category_proportions"][label];
    sum += p;
    CHECK(std::abs(p - truth["category_proportions"][label].get<double>()) <= 0.1);
  }
  CHECK(sum == doctest::Approx(1.0));

  REQUIRE(run_cli(dir, "embed --interactions fx/interactions.jsonl --out hashed.bin --dim 32").code == 0);
  CHECK(run_cli(dir, "sample --vectors hashed.bin --k 20").code == 0);
}

TEST_CASE("outputs are byte-identical across runs") {
  testing::TempDir dir;
  REQUIRE(run_cli(dir, "--seed 2 synth --out-dir a --size 200 --dim 8").code == 0);
  REQUIRE(run_cli(dir, "--seed 2 synth --out-dir b --size 200 --dim 8").code == 0);
  for (const auto* f : {"interactions.jsonl", "vectors.bin", "gold.jsonl", "truth.json"}) {
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  }
  for (const auto* solver : {"giga", "uniform"}) {
    const std::string s = solver;
    REQUIRE(run_cli(dir, "--seed 7 sample --vectors a/vectors.bin --k 30 --solver " + s + " --out 1.json").code == 0);
    REQUIRE(run_cli(dir, "--seed 7 sample --vectors a/vectors.bin --k 30 --solver " + s + " --out 2.json").code == 0);
    CHECK(slurp(dir / "1.json") == slurp(dir / "2.json"));
  }
  const std::string eval = "eval-sampling --vectors a/vectors.bin --gold a/gold.jsonl --ks 20,60 --iterations 5 ";
  REQUIRE(run_cli(dir, eval + "--out-dir e1").code == 0);
  REQUIRE(run_cli(dir, eval + "--out-dir e2 --threads 3").code == 0);
  CHECK(slurp(dir / "e1" / "curves.json") == slurp(dir / "e2" / "curves.json"));
  CHECK(slurp(dir / "e1" / "reductions.csv") == slurp(dir / "e2" / "reductions.csv"));
  CHECK(slurp(dir / "e1" / "reductions.csv").starts_with("coreset_k,unif_k,reduction_pct\n"));
}

TEST_CASE("seed precedence: flag over environment over config file") {
  testing::TempDir dir;
  REQUIRE(run_cli(dir, "synth --out-dir fx --size 100 --dim 4").code == 0);
  const std::string sample = "sample --vectors fx/vectors.bin --k 10 --solver uniform";
  const auto with = [&](const std::string& prefix, const std::string& env = "") {
    return run_cli(dir, prefix + " " + sample, env).out;
  };
  const auto s3 = with("--seed 3");
  const auto s5 = with("--seed 5");
  REQUIRE(s3 != s5);
  std::ofstream(dir / "sevbench.toml") << "seed = 3\n";
  CHECK(with("") == s3);
  CHECK(with("", "SEVBENCH_SEED=5") == s5);
  CHECK(with("--seed 3", "SEVBENCH_SEED=5") == s3);
}

TEST_CASE("enqueue into a data directory is idempotent") {
  testing::TempDir dir;
  REQUIRE(run_cli(dir, "synth --out-dir fx --size 50 --dim 4").code == 0);
  REQUIRE(run_cli(dir, "sample --vectors fx/vectors.bin --k 5 --out cs.json").code == 0);
  const std::string cmd = "enqueue --coreset cs.json --interactions fx/interactions.jsonl --data-dir data";
  auto r = run_cli(dir, cmd);
  REQUIRE(r.code == 0);
  const auto created = json::parse(r.out)["created"].get<int>();
  CHECK(created >= 2);
  CHECK(created % 2 == 0);
  r = run_cli(dir, cmd);
  CHECK(json::parse(r.out)["created"] == 0);
  CHECK(fs::exists(dir / "data" / "events.jsonl"));
  CHECK(run_cli(dir, "enqueue --coreset cs.json --interactions fx/interactions.jsonl").code == 1);
}

TEST_CASE("bench partition, merge, replay and adopt") {
  testing::TempDir dir;
  REQUIRE(run_cli(dir, "synth --out-dir fx --size 60 --dim 4").code == 0);
  auto r = run_cli(dir, "--seed 1 bench partition --gold fx/gold.jsonl --period 2024Q1 --holdout-fraction 0.25 "
                         "--out-dir deltas");
  REQUIRE(r.code == 0);
  const auto counts = json::parse(r.out);
  CHECK(counts["development"] == 45);
  CHECK(counts["holdout"] == 15);

  REQUIRE(run_cli(dir, "bench merge --name bench --delta deltas/delta-development-2024Q1.json --out-dir m").code == 0);
  REQUIRE(run_cli(dir, "bench merge --name bench --delta deltas/delta-holdout-2024Q1.json --out-dir m").code == 0);
  const std::string dev = "m/manifest-bench-development-2024Q1.json";
  CHECK(fs::exists(dir / dev));
  CHECK(fs::exists(dir / "m/manifest-bench-holdout-2024Q1.json"));

  // Everything is already a member, so a second partition conflicts.
  r = run_cli(dir, "bench partition --gold fx/gold.jsonl --period 2024Q2 --manifest-dir m --out-dir d2");
  CHECK(r.code == 1);
  CHECK(json::parse(r.err)["error"]["kind"] == "conflict");

  r = run_cli(dir, "bench replay --manifest " + dev +
                        " --baseline fx/interactions.jsonl --candidate fx/interactions.jsonl");
  REQUIRE(r.code == 0);
  const auto report = json::parse(r.out);
  CHECK(report["summary"]["changed"] == 0);
  CHECK(report["summary"]["unchanged"] == 45);

  r = run_cli(dir, "bench adopt --manifest " + dev + " --gold fx/gold.jsonl --period 2024Q2 --out-dir m2");
  CHECK(r.code == 1);  // the gold file covers holdout items too
  CHECK(json::parse(r.err)["error"]["kind"] == "not_found");

  const auto manifest = json::parse(slurp(dir / dev));
  std::set<std::string> members;
  for (const auto& id : manifest["member_ids"]) members.insert(id.get<std::string>());
  std::ifstream gold(dir / "fx" / "gold.jsonl");
  std::ofstream subset(dir / "dev-gold.jsonl");
  for (std::string line; std::getline(gold, line);) {
    if (members.contains(json::parse(line)["interaction_id"].get<std::string>())) subset << line << "\n";
  }
  subset.close();
  r = run_cli(dir, "bench adopt --manifest " + dev + " --gold dev-gold.jsonl --period 2024Q2 --out-dir m2");
  REQUIRE(r.code == 0);
  const auto adopted = json::parse(slurp(dir / "m2/manifest-bench-development-2024Q1.json"));
  CHECK(adopted["gold_labels"] == manifest["gold_labels"]);
  CHECK(adopted["lineage"].size() == manifest["lineage"].size() + 1);
}

TEST_CASE("serve answers HTTP and stops on SIGTERM") {
  testing::TempDir dir;
  const auto log = dir / "serve.txt";
  const std::string cmd = "cd '" + dir.path().string() + "' && ('" SEVBENCH_CLI
                          "' serve --data-dir data --listen 127.0.0.1:0 > '" + log.string() +
                          "' 2>&1 & echo $! > pid.txt)";
  REQUIRE(std::system(cmd.c_str()) == 0);
  std::string line;
  for (int i = 0; i < 200 && line.empty(); ++i) {
    std::ifstream in(log);
    std::getline(in, line);
    if (line.empty()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  REQUIRE_FALSE(line.empty());
  const std::string addr = json::parse(line)["listening"];
  const auto port = addr.substr(addr.rfind(':') + 1);
  CHECK(std::system(("curl -sf http://127.0.0.1:" + port + "/v1/tree > '" + (dir / "tree.json").string() + "'")
                        .c_str()) == 0);
  CHECK(json::parse(slurp(dir / "tree.json"))["root"] == "answered");
  const std::string pid = "$(cat '" + (dir / "pid.txt").string() + "')";
  CHECK(std::system(("kill -TERM " + pid).c_str()) == 0);
  // Gone within five seconds.
  CHECK(std::system(("for i in $(seq 100); do kill -0 " + pid + " 2>/dev/null || exit 0; sleep 0.05; done; exit 1")
                        .c_str()) == 0);
}
