// Acceptance run: one PASS/FAIL line per criterion. Exits 1 if any fails.

#include <sys/wait.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sevbench/benchmark.hpp"
#include "sevbench/coreset.hpp"
#include "sevbench/error.hpp"
#include "sevbench/estimation.hpp"
#include "sevbench/io.hpp"
#include "sevbench/service/store.hpp"
#include "sevbench/severity.hpp"
#include "sevbench/synth.hpp"

using namespace sevbench;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

double norm2(const std::vector<double>& v) { return std::inner_product(v.begin(), v.end(), v.begin(), 0.0); }

coreset::VectorPool gaussian_pool(std::size_t n, std::size_t d, std::mt19937_64& gen) {
  std::normal_distribution<double> normal;
  coreset::VectorPool pool(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& x : pool.row(i)) x = normal(gen);
  }
  return pool;
}

class ScratchDir {
 public:
  ScratchDir() {
    std::mt19937_64 gen(std::random_device{}());
    path_ = fs::temp_directory_path() / ("sevbench-acceptance-" + std::to_string(gen()));
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

Outcome oracle_comparison() {
  const auto start = Clock::now();
  std::mt19937_64 gen(1);
  std::size_t worse = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + gen() % 10;
    const std::size_t d = 1 + gen() % 3;
    const std::size_t k = 1 + gen() % std::min<std::size_t>(3, n);
    const auto pool = gaussian_pool(n, d, gen);
    const auto giga = coreset::solve_giga(pool, k);
    const auto oracle = coreset::solve_oracle(pool, k);
    if (giga.objective < oracle.objective - 1e-9 * (1.0 + norm2(pool.total()))) ++worse;
  }
  // Collinear-target fixtures: the last vector is a positive multiple of the
  // sum of the others, so it alone spans the target.
  std::size_t missed = 0;
  std::uniform_real_distribution<double> scale(0.1, 3.0);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + gen() % 9;
    const std::size_t d = 1 + gen() % 3;
    auto pool = gaussian_pool(n, d, gen);
    std::vector<double> rest(d, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) rest[j] += pool.row(i)[j];
    }
    if (norm2(rest) < 1e-6) continue;
    const double c = scale(gen);
    for (std::size_t j = 0; j < d; ++j) pool.row(n - 1)[j] = c * rest[j];
    const double tol = 1e-12 * norm2(pool.total());
    const auto oracle = coreset::solve_oracle(pool, 1);
    const auto giga = coreset::solve_giga(pool, 1);
    if (oracle.objective <= tol && giga.objective > tol) ++missed;
  }
  const double secs = seconds_since(start);
  return {worse == 0 && missed == 0 && secs < 10.0,
          fmt("200 instances, giga below oracle %zu times; collinear fixtures missed %zu/50; %.2fs", worse, missed,
              secs)};
}

Outcome exact_reconstruction() {
  std::mt19937_64 gen(2);
  std::size_t failures = 0;
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + gen() % 32;
    const std::size_t d = n + gen() % 8;
    const auto pool = gaussian_pool(n, d, gen);
    const double rel = coreset::solve_giga(pool, n).objective / norm2(pool.total());
    worst = std::max(worst, rel);
    failures += rel > 1e-6;
  }
  return {failures == 0, fmt("k=N on 50 pools with d>=N: %zu above 1e-6 relative, worst %.3g", failures, worst)};
}

struct SamplingRun {
  estimation::BootstrapCurves curves;
  std::vector<std::size_t> ks;
  double seconds;
};

SamplingRun sampling_run() {
  synth::SynthConfig cfg;  // N=1000, d=64, 8 clusters
  const auto fixture = synth::generate(cfg);
  const coreset::VectorPool pool(fixture.vectors);
  SamplingRun run;
  run.ks = {100, 200, 300, 400};
  estimation::BootstrapOptions opt;
  opt.uniform_ks = run.ks;
  const auto subpool = static_cast<std::size_t>(std::ceil(opt.subpool_fraction * double(pool.size())));
  for (std::size_t k = 10; k <= subpool; k += 10) opt.uniform_ks.push_back(k);
  const auto start = Clock::now();
  run.curves = estimation::bootstrap_compare(pool, fixture.labels, run.ks, 200, 0, opt);
  run.seconds = seconds_since(start);
  return run;
}

Outcome sampling_trend(const SamplingRun& run) {
  bool below = true, nondecreasing = true;
  std::string detail;
  std::optional<double> previous_gap;
  for (std::size_t k : run.ks) {
    const double u = run.curves.uniform.at(k);
    const double c = run.curves.coreset.at(k);
    const double gap = u - c;
    below = below && c < u;
    if (previous_gap && gap < *previous_gap) nondecreasing = false;
    previous_gap = gap;
    detail += fmt("k=%zu coreset %.4f uniform %.4f gap %.4f; ", k, c, u, gap);
  }
  detail += fmt("coreset below uniform: %s; gap nondecreasing: %s; %.1fs", below ? "yes" : "no",
                nondecreasing ? "yes" : "no", run.seconds);
  return {below && nondecreasing && run.seconds < 300.0, detail};
}

Outcome equivalent_reduction(const SamplingRun& run) {
  bool ok = true;
  std::string detail;
  for (std::size_t k : run.ks) {
    if (k < 200) continue;
    try {
      const auto eq = estimation::equivalent_uniform_size(run.curves.coreset, run.curves.uniform, k);
      ok = ok && eq.reduction >= 0.10;
      detail += fmt("k=%zu uniform %zu reduction %.1f%%; ", k, eq.unif_size, 100.0 * eq.reduction);
    } catch (const Error& e) {
      ok = false;
      detail += fmt("k=%zu %s; ", k, e.kind().c_str());
    }
  }
  std::printf("reductions.csv:\n%s", estimation::reductions_csv(run.curves.coreset, run.curves.uniform).c_str());
  return {ok, detail + "threshold 10% for k>=200"};
}

Outcome rmse_formula() {
  std::mt19937_64 gen(3);
  std::exponential_distribution<double> e;
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    ProportionEstimate a, b;
    double sa = 0.0, sb = 0.0;
    for (std::size_t j = 0; j < kNumLabels; ++j) {
      sa += a.proportions[j] = e(gen);
      sb += b.proportions[j] = e(gen);
    }
    for (std::size_t j = 0; j < kNumLabels; ++j) {
      a.proportions[j] /= sa;
      b.proportions[j] /= sb;
    }
    double sq = 0.0;
    for (std::size_t j = 0; j < kNumLabels; ++j) {
      const double d = a.proportions[j] - b.proportions[j];
      sq += d * d;
    }
    const double direct = std::sqrt(sq / double(kNumLabels));
    worst = std::max(worst, std::abs(estimation::rmse(a, b) - direct));
  }
  return {worst <= 1e-12, fmt("1000 simplex pairs, max deviation %.3g", worst)};
}

Outcome severity_engine() {
  const auto tree = severity::default_tree();
  std::set<SeverityLabel> labels;
  for (const auto& p : severity::enumerate_paths(tree)) labels.insert(p.label);

  std::vector<std::pair<std::string, std::vector<std::string>>> judgment_nodes;
  for (const auto& [id, node] : tree.nodes) {
    if (const auto* j = std::get_if<severity::JudgmentNode>(&node)) judgment_nodes.push_back({id, j->answer_options});
  }
  std::mt19937_64 gen(4);
  std::size_t derived = 0, declared = 0, undeclared = 0, unstable = 0;
  const std::vector<std::string> decisions{"yes", "no", "maybe", ""};
  for (int t = 0; t < 10000; ++t) {
    std::map<std::string, std::string> system;
    if (const auto& v = decisions[gen() % decisions.size()]; !v.empty()) system["answered"] = v;
    severity::Judgments judgments;
    for (const auto& [id, options] : judgment_nodes) {
      switch (gen() % 4) {
        case 0: break;
        case 1: judgments[id] = "not-an-option"; break;
        default: judgments[id] = options[gen() % options.size()];
      }
    }
    if (gen() % 5 == 0) judgments["unknown_node"] = "yes";
    try {
      const auto a = severity::derive_severity(tree, system, judgments);
      const auto b = severity::derive_severity(tree, system, judgments);
      if (a.label != b.label || a.path != b.path) ++unstable;
      ++derived;
    } catch (const Error& e) {
      if (e.kind() == "missing_judgment" || e.kind() == "invalid_judgment") {
        ++declared;
      } else {
        ++undeclared;
      }
    } catch (...) {
      ++undeclared;
    }
  }
  const bool ok = labels.size() == kNumLabels && undeclared == 0 && unstable == 0;
  return {ok, fmt("paths reach %zu labels; 10000 sets: %zu derived, %zu declared errors, %zu other, %zu unstable",
                  labels.size(), derived, declared, undeclared, unstable)};
}

Outcome disagreement_flow() {
  std::mt19937_64 gen(5);
  std::size_t violations = 0, unanimous = 0, expert_wins = 0;
  for (int t = 0; t < 10000; ++t) {
    std::vector<severity::AnnotationRecord> records;
    const std::size_t annotators = 1 + gen() % 4;
    const std::size_t experts = gen() % 3;
    for (std::size_t i = 0; i < annotators + experts; ++i) {
      severity::AnnotationRecord r;
      r.interaction_id = "x";
      r.annotator_id = "a" + std::to_string(i);
      r.is_expert = i >= annotators;
      r.derived_label = kAllLabels[gen() % (gen() % 2 ? 2 : 4)];
      r.timestamp = Timestamp{std::chrono::milliseconds{static_cast<long long>(i)}};
      records.push_back(r);
    }
    std::set<SeverityLabel> slot_labels;
    for (std::size_t i = 0; i < annotators; ++i) slot_labels.insert(records[i].derived_label);
    const auto res = severity::resolve_disagreement(records);
    if (slot_labels.size() == 1) {
      ++unanimous;
      if (res.label != *slot_labels.begin()) ++violations;
    } else if (experts > 0) {
      ++expert_wins;
      if (res.label != records.back().derived_label) ++violations;
    } else if (res.label) {
      ++violations;
    }
  }
  return {violations == 0, fmt("10000 assignments (%zu unanimous, %zu expert-resolved): %zu violations", unanimous,
                               expert_wins, violations)};
}

Outcome benchmark_lifecycle() {
  using namespace benchmark;
  std::mt19937_64 gen(6);
  auto dev = empty_manifest("bench", Split::kDevelopment, "2024Q1");
  auto hold = empty_manifest("bench", Split::kHoldout, "2024Q1");
  std::vector<Delta> dev_deltas;
  std::size_t next = 0, overlaps = 0;
  bool associative = true, replay_exact = true;
  for (const auto* period : {"2024Q1", "2024Q2", "2024Q3", "2024Q4"}) {
    std::vector<Candidate> candidates;
    for (int i = 0; i < 40; ++i) candidates.push_back({fmt("q-%04zu", next++), kAllLabels[gen() % 4]});
    const std::vector<DatasetManifest> existing{dev, hold};
    const auto part = partition_delta(candidates, 0.25, gen(), existing, period);
    dev = merge_period(dev, part.development);
    hold = merge_period(hold, part.holdout);
    dev_deltas.push_back(part.development);

    const std::set<std::string> d(dev.member_ids.begin(), dev.member_ids.end());
    for (const auto& id : hold.member_ids) overlaps += d.contains(id);
    try {
      check_disjoint(std::vector<DatasetManifest>{dev, hold});
    } catch (const Error&) {
      ++overlaps;
    }

    Delta all{Split::kDevelopment, period, {}};
    for (const auto& delta : dev_deltas) all.items.insert(all.items.end(), delta.items.begin(), delta.items.end());
    const auto at_once = merge_period(empty_manifest("bench", Split::kDevelopment, "2024Q1"), all);
    associative = associative && at_once.gold_labels == dev.gold_labels &&
                  std::set<std::string>(at_once.member_ids.begin(), at_once.member_ids.end()) == d;

    for (const auto* m : {&dev, &hold}) {
      std::map<std::string, std::string> responses;
      std::vector<SeverityLabel> gold;
      for (const auto& [id, label] : m->gold_labels) {
        responses[id] = "response for " + id;
        gold.push_back(label);
      }
      const auto report = replay(*m, responses, responses);
      replay_exact = replay_exact && report.changed == 0 && report.forecast &&
                     report.forecast->proportions == estimation::exact_proportions(gold).proportions;
    }
  }
  return {overlaps == 0 && associative && replay_exact,
          fmt("4 periods, %zu dev / %zu holdout members; overlaps %zu; associative %s; replay exact %s",
              dev.member_ids.size(), hold.member_ids.size(), overlaps, associative ? "yes" : "no",
              replay_exact ? "yes" : "no")};
}

Outcome service_linearizability() {
  using namespace service;
  ScratchDir dir;
  StoreConfig cfg;
  cfg.log_path = dir.path() / "events.jsonl";
  auto store = std::make_unique<Store>(cfg);
  std::vector<std::string> ids;
  coreset::CoresetResult result;
  for (std::size_t i = 0; i < 250; ++i) {
    Interaction x;
    x.id = fmt("svc-%04zu", i);
    x.query = "question " + x.id;
    x.answer = "answer " + x.id;
    x.system_decisions["answered"] = "yes";
    store->add_interaction(x);
    ids.push_back(x.id);
    result.support.push_back(i);
    result.weights[i] = 4.0;
  }
  result.k = result.pool_size = 250;
  result.solver = coreset::Solver::kUniform;
  store->enqueue(result, ids);
  const std::size_t initial = store->tasks().size();
  constexpr int kWorkers = 16;
  for (int w = 0; w < kWorkers; ++w) store->register_annotator(fmt("w%02d", w), w < 3);

  const severity::Judgments options[] = {{{"looks_correct_to_user", "yes"}, {"factually_correct", "yes"}},
                                         {{"looks_correct_to_user", "yes"}, {"factually_correct", "no"}},
                                         {{"looks_correct_to_user", "no"}, {"rephrase_recovers", "yes"}}};
  std::mutex mu;
  std::map<std::string, std::string> holders;
  std::atomic<std::size_t> double_leases{0}, errors{0};
  std::vector<std::thread> threads;
  const auto deadline = Clock::now() + std::chrono::seconds(120);
  for (int w = 0; w < kWorkers; ++w) {
    threads.emplace_back([&, w] {
      const auto me = fmt("w%02d", w);
      std::mt19937_64 gen(w);
      while (store->final_labels().size() < ids.size() && Clock::now() < deadline) {
        std::optional<TaskLease> lease;
        try {
          lease = store->lease_next(me, w < 3);
        } catch (const std::exception&) {
          ++errors;
        }
        if (!lease) {
          std::this_thread::yield();
          continue;
        }
        {
          std::lock_guard lock(mu);
          if (!holders.emplace(lease->task_id, me).second) ++double_leases;
        }
        try {
          store->submit(lease->task_id, me, options[gen() % 3]);
        } catch (const std::exception&) {
          ++errors;
        }
        std::lock_guard lock(mu);
        holders.erase(lease->task_id);
      }
    });
  }
  for (auto& t : threads) t.join();

  std::size_t not_final = 0;
  for (const auto& t : store->tasks()) not_final += t.state != TaskState::kFinalized;
  const auto live = store->snapshot();
  const auto escalations = store->tasks().size() - initial;
  store.reset();
  const bool replay_same = Store(cfg).snapshot() == live;
  const bool ok = double_leases == 0 && errors == 0 && not_final == 0 && replay_same;
  return {ok, fmt("16 annotators, %zu tasks (+%zu escalations): double leases %zu, errors %zu, not finalized %zu, "
                  "log replay identical %s",
                  initial, escalations, double_leases.load(), errors.load(), not_final, replay_same ? "yes" : "no")};
}

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome end_to_end() {
  ScratchDir dir;
  const std::string cli = SEVBENCH_CLI;
  const std::string cd = "cd '" + dir.path().string() + "' && '" + cli + "' ";
  const std::string quiet = " > /dev/null";
  if (shell(cd + "synth --out-dir fx" + quiet) != 0 ||
      shell(cd + "embed --interactions fx/interactions.jsonl --embedder external_file --vector-file fx/vectors.bin "
                 "--out vectors.bin" + quiet) != 0 ||
      shell(cd + "sample --vectors vectors.bin --k 300 --solver giga --out coreset.json" + quiet) != 0 ||
      shell(cd + "estimate --coreset coreset.json --annotations fx/gold.jsonl --out estimate.json" + quiet) != 0) {
    return {false, "pipeline command failed"};
  }
  const auto estimate = json::parse(read_text(dir.path() / "estimate.json"))["category_proportions"];
  const auto truth = json::parse(read_text(dir.path() / "fx" / "truth.json"))["category_proportions"];
  double linf = 0.0;
  for (auto label : kAllLabels) {
    const std::string name(to_string(label));
    linf = std::max(linf, std::abs(estimate[name].get<double>() - truth[name].get<double>()));
  }
  return {linf <= 0.05, fmt("synth -> embed -> sample k=300 -> estimate: L-inf error %.4f (limit 0.05)", linf)};
}

}  // namespace

int main() {
  std::size_t failed = 0;
  auto report = [&](const char* name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  };
  report("coreset-vs-oracle", oracle_comparison);
  report("exact-reconstruction", exact_reconstruction);
  SamplingRun run;
  report("sampling-curve-trend", [&] {
    run = sampling_run();
    return sampling_trend(run);
  });
  report("equivalent-uniform-reduction", [&] { return equivalent_reduction(run); });
  report("rmse-formula", rmse_formula);
  report("severity-engine", severity_engine);
  report("disagreement-flow", disagreement_flow);
  report("benchmark-lifecycle", benchmark_lifecycle);
  report("service-linearizability", service_linearizability);
  report("end-to-end", end_to_end);
  std::printf("%zu of 10 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
