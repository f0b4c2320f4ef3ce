// sevbench: command-line driver for sampling, estimation, benchmarks and the
// annotation service.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "sevbench/benchmark.hpp"
#include "sevbench/coreset.hpp"
#include "sevbench/embedding.hpp"
#include "sevbench/error.hpp"
#include "sevbench/estimation.hpp"
#include "sevbench/interaction_io.hpp"
#include "sevbench/io.hpp"
#include "sevbench/service/server.hpp"
#include "sevbench/service/store.hpp"
#include "sevbench/severity.hpp"
#include "sevbench/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sevbench;

namespace {

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ParseError("", path.string() + ": malformed JSON: " + e.what());
  }
}

/// Writes to `out`, or stdout when empty.
void emit(const std::string& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text_atomic(out, text);
  }
}

std::vector<double> parse_doubles(const std::string& text, const char* field) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ParseError(field, "'" + item + "' is not a number");
    }
  }
  return out;
}

std::map<std::string, SeverityLabel> resolved_gold(const fs::path& path,
                                                   std::vector<std::string>* pending = nullptr) {
  const auto records = severity::read_annotations(path);
  return severity::resolve_all(records, pending);
}

json delta_to_json(const benchmark::Delta& delta) {
  json items = json::array();
  for (const auto& c : delta.items) items.push_back({{"id", c.id}, {"label", std::string(to_string(c.label))}});
  return {{"split", std::string(benchmark::to_string(delta.split))},
          {"period", delta.period},
          {"items", std::move(items)}};
}

benchmark::Delta delta_from_json(const json& j) {
  try {
    benchmark::Delta d;
    auto split = benchmark::parse_split(j.at("split").get<std::string>());
    if (!split) throw ParseError("split", "unknown split");
    d.split = *split;
    d.period = j.at("period").get<std::string>();
    for (const auto& item : j.at("items")) {
      auto label = parse_label(item.at("label").get<std::string>());
      if (!label) throw ParseError("label", "unknown label");
      d.items.push_back({item.at("id").get<std::string>(), *label});
    }
    return d;
  } catch (const json::exception& e) {
    throw ParseError("delta", std::string("malformed delta: ") + e.what());
  }
}

std::vector<benchmark::DatasetManifest> manifests_in(const std::string& dir) {
  std::vector<benchmark::DatasetManifest> out;
  if (dir.empty() || !fs::exists(dir)) return out;
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.starts_with("manifest-") && name.ends_with(".json")) paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) out.push_back(benchmark::read_manifest(p));
  return out;
}

std::map<std::string, std::string> answers(const fs::path& path) {
  std::map<std::string, std::string> out;
  for (const auto& i : read_interactions(path)) out.emplace(i.id, i.answer);
  return out;
}

std::pair<std::string, int> split_listen(const std::string& listen) {
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos) throw ParseError("listen", "expected host:port");
  try {
    return {listen.substr(0, colon), std::stoi(listen.substr(colon + 1))};
  } catch (const std::logic_error&) {
    throw ParseError("listen", "bad port in '" + listen + "'");
  }
}

/// TOML config that yields to environment variables: an entry is dropped when
/// the matching option's env var is set, so flags > env > config file.
class EnvFirstConfig : public CLI::ConfigTOML {
 public:
  explicit EnvFirstConfig(const CLI::App* app) : app_(app) {}

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = CLI::ConfigTOML::from_config(input);
    std::erase_if(items, [this](const CLI::ConfigItem& item) { return env_overrides(item); });
    return items;
  }

 private:
  bool env_overrides(const CLI::ConfigItem& item) const {
    const CLI::App* app = app_;
    for (const auto& parent : item.parents) {
      try {
        app = app->get_subcommand(parent);
      } catch (const CLI::Error&) {
        return false;
      }
    }
    std::string name = item.name;
    std::replace(name.begin(), name.end(), '_', '-');
    const CLI::Option* opt = app->get_option_no_throw("--" + name);
    if (opt == nullptr || opt->get_envname().empty()) return false;
    return std::getenv(opt->get_envname().c_str()) != nullptr;
  }

  const CLI::App* app_;
};

service::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sevbench: error-severity sampling, estimation and benchmarking"};
  app.set_config("--config", "sevbench.toml", "TOML config file mirroring the flags");
  app.config_formatter(std::make_shared<EnvFirstConfig>(&app));
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed for every randomized step")->envname("SEVBENCH_SEED");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a Gaussian-mixture fixture pool");
  synth::SynthConfig synth_cfg;
  std::string synth_out, synth_mixing, synth_dists;
  synth_cmd->add_option("--out-dir", synth_out, "Output directory")->required();
  synth_cmd->add_option("--size", synth_cfg.size)->check(CLI::PositiveNumber)->capture_default_str();
  synth_cmd->add_option("--dim", synth_cfg.dimension)->check(CLI::PositiveNumber)->capture_default_str();
  synth_cmd->add_option("--clusters", synth_cfg.clusters)->check(CLI::PositiveNumber)->capture_default_str();
  synth_cmd->add_option("--shared-offset", synth_cfg.shared_offset)->capture_default_str();
  synth_cmd->add_option("--cluster-spread", synth_cfg.cluster_spread)->capture_default_str();
  synth_cmd->add_option("--label-offset", synth_cfg.label_offset)->capture_default_str();
  synth_cmd->add_option("--noise", synth_cfg.noise)->capture_default_str();
  synth_cmd->add_option("--concentration", synth_cfg.label_concentration)->capture_default_str();
  synth_cmd->add_option("--mixing", synth_mixing, "Cluster weights, comma separated");
  synth_cmd->add_option("--label-dists", synth_dists,
                        "Per-cluster Sev0,Sev1,Sev2,NoError distributions separated by ';'");

  // embed
  auto* embed_cmd = app.add_subcommand("embed", "Embed interactions into a vector file");
  std::string embed_in, embed_out, embed_kind = "feature_hash", embed_file;
  std::uint32_t embed_dim = 64;
  std::uint64_t embed_hash_seed = 0;
  embed_cmd->add_option("--interactions", embed_in)->required();
  embed_cmd->add_option("--out", embed_out)->required();
  embed_cmd->add_option("--embedder", embed_kind)
      ->check(CLI::IsMember({"feature_hash", "external_file"}))
      ->capture_default_str();
  embed_cmd->add_option("--dim", embed_dim, "Dimension (0 with external_file accepts the file's)")
      ->capture_default_str();
  embed_cmd->add_option("--hash-seed", embed_hash_seed)->capture_default_str();
  embed_cmd->add_option("--vector-file", embed_file, "Source vectors for external_file");

  // sample
  auto* sample_cmd = app.add_subcommand("sample", "Select a weighted coreset for annotation");
  std::string sample_vectors, sample_out, sample_solver = "giga";
  std::size_t sample_k = 0;
  sample_cmd->add_option("--vectors", sample_vectors)->required();
  sample_cmd->add_option("--k", sample_k, "Budget")->required()->check(CLI::PositiveNumber);
  sample_cmd->add_option("--solver", sample_solver)
      ->check(CLI::IsMember({"giga", "uniform", "oracle"}))
      ->capture_default_str();
  sample_cmd->add_option("--out", sample_out, "Coreset JSON (stdout when omitted)");

  // enqueue
  auto* enqueue_cmd = app.add_subcommand("enqueue", "Create annotation tasks for a coreset");
  std::string enqueue_coreset, enqueue_interactions, enqueue_url, enqueue_data_dir;
  std::size_t enqueue_per_item = 2;
  enqueue_cmd->add_option("--coreset", enqueue_coreset)->required();
  enqueue_cmd->add_option("--interactions", enqueue_interactions)->required();
  auto* url_opt = enqueue_cmd->add_option("--url", enqueue_url, "Running service")
                      ->envname("SEVBENCH_SERVICE_URL");
  auto* dir_opt = enqueue_cmd->add_option("--data-dir", enqueue_data_dir, "Write the event log directly")
                      ->envname("SEVBENCH_DATA_DIR");
  url_opt->excludes(dir_opt);
  enqueue_cmd->add_option("--annotators-per-item", enqueue_per_item)
      ->check(CLI::PositiveNumber)
      ->envname("SEVBENCH_ANNOTATORS_PER_ITEM")
      ->capture_default_str();

  // estimate
  auto* estimate_cmd = app.add_subcommand("estimate", "Weighted severity proportions from annotations");
  std::string estimate_coreset, estimate_annotations, estimate_out;
  estimate_cmd->add_option("--coreset", estimate_coreset)->required();
  estimate_cmd->add_option("--annotations", estimate_annotations, "AnnotationRecord JSONL")->required();
  estimate_cmd->add_option("--out", estimate_out);

  // eval-sampling
  auto* eval_cmd = app.add_subcommand("eval-sampling", "Bootstrap comparison of coreset and uniform sampling");
  std::string eval_vectors, eval_gold, eval_out, eval_aggregate = "mean";
  std::vector<std::size_t> eval_ks{100, 200, 300, 400}, eval_uniform_ks;
  std::size_t eval_iterations = 200, eval_uniform_step = 10;
  double eval_fraction = 0.8;
  unsigned eval_threads = 1;
  eval_cmd->add_option("--vectors", eval_vectors)->required();
  eval_cmd->add_option("--gold", eval_gold, "AnnotationRecord JSONL covering the pool")->required();
  eval_cmd->add_option("--out-dir", eval_out)->required();
  eval_cmd->add_option("--ks", eval_ks)->delimiter(',')->check(CLI::PositiveNumber)->capture_default_str();
  eval_cmd->add_option("--iterations", eval_iterations)->check(CLI::PositiveNumber)->capture_default_str();
  eval_cmd->add_option("--uniform-ks", eval_uniform_ks, "Uniform budgets (default: the ks plus a grid)")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--uniform-step", eval_uniform_step)->check(CLI::PositiveNumber)->capture_default_str();
  eval_cmd->add_option("--subpool-fraction", eval_fraction)
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  eval_cmd->add_option("--aggregate", eval_aggregate)
      ->check(CLI::IsMember({"mean", "median"}))
      ->capture_default_str();
  eval_cmd->add_option("--threads", eval_threads)->check(CLI::PositiveNumber)->capture_default_str();

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Benchmark manifest operations");
  bench_cmd->require_subcommand(1);
  auto* partition_cmd = bench_cmd->add_subcommand("partition", "Split gold-labeled items into deltas");
  std::string part_gold, part_period, part_manifests, part_out;
  double part_fraction = 0.2;
  partition_cmd->add_option("--gold", part_gold, "AnnotationRecord JSONL")->required();
  partition_cmd->add_option("--period", part_period)->required();
  partition_cmd->add_option("--holdout-fraction", part_fraction)->capture_default_str();
  partition_cmd->add_option("--manifest-dir", part_manifests, "Existing manifests to check against");
  partition_cmd->add_option("--out-dir", part_out)->required();

  auto* merge_cmd = bench_cmd->add_subcommand("merge", "Merge a delta into a manifest");
  std::string merge_manifest, merge_name, merge_delta, merge_out;
  merge_cmd->add_option("--manifest", merge_manifest, "Prior manifest");
  merge_cmd->add_option("--name", merge_name, "Start a new manifest with this name");
  merge_cmd->add_option("--delta", merge_delta)->required();
  merge_cmd->add_option("--out-dir", merge_out)->required();

  auto* replay_cmd = bench_cmd->add_subcommand("replay", "Diff candidate responses against a baseline");
  std::string replay_manifest, replay_baseline, replay_candidate, replay_out;
  replay_cmd->add_option("--manifest", replay_manifest)->required();
  replay_cmd->add_option("--baseline", replay_baseline, "Baseline interactions JSONL")->required();
  replay_cmd->add_option("--candidate", replay_candidate, "Candidate interactions JSONL")->required();
  replay_cmd->add_option("--out", replay_out);

  auto* adopt_cmd = bench_cmd->add_subcommand("adopt", "Adopt newly resolved gold labels");
  std::string adopt_manifest, adopt_gold, adopt_period, adopt_out;
  adopt_cmd->add_option("--manifest", adopt_manifest)->required();
  adopt_cmd->add_option("--gold", adopt_gold, "AnnotationRecord JSONL")->required();
  adopt_cmd->add_option("--period", adopt_period)->required();
  adopt_cmd->add_option("--out-dir", adopt_out)->required();

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run the annotation service");
  std::string serve_dir, serve_listen = "127.0.0.1:8080", serve_ttl = "30m", serve_tree;
  std::size_t serve_per_item = 2;
  serve_cmd->add_option("--data-dir", serve_dir)->required()->envname("SEVBENCH_DATA_DIR");
  serve_cmd->add_option("--listen", serve_listen)->envname("SEVBENCH_LISTEN")->capture_default_str();
  serve_cmd->add_option("--lease-ttl", serve_ttl)->envname("SEVBENCH_LEASE_TTL")->capture_default_str();
  serve_cmd->add_option("--annotators-per-item", serve_per_item)
      ->check(CLI::PositiveNumber)
      ->envname("SEVBENCH_ANNOTATORS_PER_ITEM")
      ->capture_default_str();
  serve_cmd->add_option("--tree", serve_tree, "Decision tree JSON (default: shipped tree)");

  // tree
  auto* tree_cmd = app.add_subcommand("tree", "Decision tree tools");
  tree_cmd->require_subcommand(1);
  auto* validate_cmd = tree_cmd->add_subcommand("validate", "Check a decision tree");
  std::string validate_tree;
  validate_cmd->add_option("--tree", validate_tree)->required();
  auto* export_cmd = tree_cmd->add_subcommand("export", "Write the shipped tree");
  std::string export_out;
  export_cmd->add_option("--out", export_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*synth_cmd) {
      synth_cfg.seed = seed;
      if (!synth_mixing.empty()) synth_cfg.mixing = parse_doubles(synth_mixing, "mixing");
      if (!synth_dists.empty()) {
        std::stringstream ss(synth_dists);
        std::string row;
        while (std::getline(ss, row, ';')) {
          const auto p = parse_doubles(row, "label-dists");
          if (p.size() != kNumLabels) throw ParseError("label-dists", "each distribution needs 4 values");
          synth_cfg.label_distributions.push_back({p[0], p[1], p[2], p[3]});
        }
      }
      const auto pool = synth::generate(synth_cfg);
      const fs::path dir = synth_out;
      fs::create_directories(dir);
      write_interactions(dir / "interactions.jsonl", pool.interactions);
      embedding::write_vectors(pool.vectors, dir / "vectors.bin");
      severity::write_annotations(dir / "gold.jsonl", pool.gold_records);
      json dists = json::array();
      for (const auto& d : pool.label_distributions) dists.push_back(d);
      json truth = estimation::to_json(estimation::exact_proportions(pool.labels));
      truth["cluster_label_distributions"] = std::move(dists);
      write_text_atomic(dir / "truth.json", truth.dump(2) + "\n");
      std::cout << json{{"interactions", pool.interactions.size()}, {"out_dir", dir.string()}}.dump()
                << "\n";
    } else if (*embed_cmd) {
      embedding::EmbedderSpec spec;
      spec.kind = *embedding::parse_embedder_kind(embed_kind);
      spec.dimension = embed_dim;
      if (spec.kind == embedding::EmbedderKind::kExternalFile && embed_cmd->count("--dim") == 0) {
        spec.dimension = 0;
      }
      spec.hash_seed = embed_hash_seed;
      if (!embed_file.empty()) spec.vector_file = embed_file;
      const auto pool = read_interactions(embed_in);
      embedding::write_vectors(embedding::embed(spec, pool), embed_out);
    } else if (*sample_cmd) {
      const auto vectors = embedding::read_vectors(sample_vectors);
      std::vector<std::string> ids;
      for (const auto& v : vectors) ids.push_back(v.interaction_id);
      const coreset::VectorPool pool(vectors);
      coreset::CoresetResult result;
      if (sample_solver == "giga") {
        result = coreset::solve_giga(pool, sample_k);
      } else if (sample_solver == "uniform") {
        result = coreset::solve_uniform(pool, sample_k, seed);
      } else {
        result = coreset::solve_oracle(pool, sample_k);
      }
      emit(sample_out, coreset::to_json(result, ids).dump(2) + "\n");
    } else if (*enqueue_cmd) {
      std::vector<std::string> ids;
      const auto coreset_json = read_json(enqueue_coreset);
      const auto result = coreset::from_json(coreset_json, &ids);
      const std::set<std::string> wanted(ids.begin(), ids.end());
      std::vector<Interaction> support;
      for (auto& i : read_interactions(enqueue_interactions)) {
        if (wanted.contains(i.id)) support.push_back(std::move(i));
      }
      std::size_t created = 0;
      if (!enqueue_url.empty()) {
        json payload = {{"coreset", coreset_json},
                        {"annotators_per_item", enqueue_per_item},
                        {"interactions", json::array()}};
        for (const auto& i : support) payload["interactions"].push_back(json::parse(serialize_interaction(i)));
        httplib::Client client(enqueue_url);
        auto res = client.Post("/v1/tasks/enqueue", payload.dump(), "application/json");
        if (!res) throw Error("io", "cannot reach " + enqueue_url);
        const auto body = json::parse(res->body, nullptr, false);
        if (res->status != 200) {
          const auto& err = body.contains("error") ? body["error"] : json::object();
          throw Error(err.value("kind", "http"), err.value("message", "status " + std::to_string(res->status)));
        }
        created = body.at("created").get<std::size_t>();
      } else if (!enqueue_data_dir.empty()) {
        fs::create_directories(enqueue_data_dir);
        service::StoreConfig cfg;
        cfg.log_path = fs::path(enqueue_data_dir) / "events.jsonl";
        service::Store store(cfg);
        for (const auto& i : support) store.add_interaction(i);
        created = store.enqueue(result, ids, enqueue_per_item);
      } else {
        throw precondition_error("enqueue needs --url or --data-dir");
      }
      std::cout << json{{"created", created}}.dump() << "\n";
    } else if (*estimate_cmd) {
      std::vector<std::string> ids;
      const auto result = coreset::from_json(read_json(estimate_coreset), &ids);
      std::vector<std::string> id_map(result.pool_size);
      for (std::size_t i = 0; i < ids.size(); ++i) id_map[result.support[i]] = ids[i];
      const auto estimate = estimation::estimate_proportions(resolved_gold(estimate_annotations), result, id_map);
      emit(estimate_out, estimation::to_json(estimate).dump(2) + "\n");
    } else if (*eval_cmd) {
      const auto vectors = embedding::read_vectors(eval_vectors);
      const auto gold = resolved_gold(eval_gold);
      std::vector<SeverityLabel> labels;
      for (const auto& v : vectors) {
        auto it = gold.find(v.interaction_id);
        if (it == gold.end()) {
          throw Error("missing_annotation", "no gold label for '" + v.interaction_id + "'");
        }
        labels.push_back(it->second);
      }
      estimation::BootstrapOptions opt;
      opt.subpool_fraction = eval_fraction;
      opt.aggregate = eval_aggregate == "median" ? estimation::Aggregate::kMedian : estimation::Aggregate::kMean;
      opt.threads = eval_threads;
      opt.uniform_ks = eval_uniform_ks;
      if (opt.uniform_ks.empty()) {
        const auto subpool = static_cast<std::size_t>(std::ceil(eval_fraction * static_cast<double>(vectors.size())));
        opt.uniform_ks = eval_ks;
        for (std::size_t k = eval_uniform_step; k <= subpool; k += eval_uniform_step) opt.uniform_ks.push_back(k);
      }
      const coreset::VectorPool pool(vectors);
      const auto curves = estimation::bootstrap_compare(pool, labels, eval_ks, eval_iterations, seed, opt);
      const fs::path dir = eval_out;
      fs::create_directories(dir);
      json out = {{"uniform", estimation::to_json(curves.uniform)},
                  {"coreset", estimation::to_json(curves.coreset)},
                  {"full_truth", estimation::to_json(curves.full_truth)},
                  {"subpool_fraction", eval_fraction},
                  {"aggregate", eval_aggregate}};
      write_text_atomic(dir / "curves.json", out.dump(2) + "\n");
      write_text_atomic(dir / "reductions.csv", estimation::reductions_csv(curves.coreset, curves.uniform));
    } else if (*partition_cmd) {
      std::vector<std::string> pending;
      const auto gold = resolved_gold(part_gold, &pending);
      std::vector<benchmark::Candidate> candidates;
      for (const auto& [id, label] : gold) candidates.push_back({id, label});
      const auto existing = manifests_in(part_manifests);
      const auto part = benchmark::partition_delta(candidates, part_fraction, seed, existing, part_period);
      const fs::path dir = part_out;
      fs::create_directories(dir);
      for (const auto* delta : {&part.development, &part.holdout}) {
        write_text_atomic(dir / ("delta-" + std::string(benchmark::to_string(delta->split)) + "-" +
                                 part_period + ".json"),
                          delta_to_json(*delta).dump(2) + "\n");
      }
      std::cout << json{{"development", part.development.items.size()},
                        {"holdout", part.holdout.items.size()},
                        {"pending", pending}}
                       .dump()
                << "\n";
    } else if (*merge_cmd) {
      const auto delta = delta_from_json(read_json(merge_delta));
      benchmark::DatasetManifest prior;
      if (!merge_manifest.empty()) {
        prior = benchmark::read_manifest(merge_manifest);
      } else if (!merge_name.empty()) {
        prior = benchmark::empty_manifest(merge_name, delta.split, delta.period);
      } else {
        throw precondition_error("merge needs --manifest or --name");
      }
      fs::create_directories(merge_out);
      const auto path = benchmark::write_manifest(merge_out, benchmark::merge_period(prior, delta));
      std::cout << json{{"manifest", path.string()}}.dump() << "\n";
    } else if (*replay_cmd) {
      const auto report = benchmark::replay(benchmark::read_manifest(replay_manifest),
                                            answers(replay_baseline), answers(replay_candidate));
      emit(replay_out, benchmark::to_json(report).dump(2) + "\n");
    } else if (*adopt_cmd) {
      const auto manifest = benchmark::read_manifest(adopt_manifest);
      fs::create_directories(adopt_out);
      const auto path = benchmark::write_manifest(
          adopt_out, benchmark::adopt_labels(manifest, resolved_gold(adopt_gold), adopt_period));
      std::cout << json{{"manifest", path.string()}}.dump() << "\n";
    } else if (*serve_cmd) {
      service::StoreConfig cfg;
      if (!serve_tree.empty()) cfg.tree = severity::read_tree(serve_tree);
      cfg.lease_ttl = service::parse_duration(serve_ttl);
      cfg.annotators_per_item = serve_per_item;
      fs::create_directories(serve_dir);
      cfg.log_path = fs::path(serve_dir) / "events.jsonl";
      service::Store store(cfg);
      service::Server server(store);
      const auto [host, port] = split_listen(serve_listen);
      const int bound = server.bind(host, port);
      if (bound < 0) throw Error("io", "cannot bind " + serve_listen);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << json{{"listening", host + ":" + std::to_string(bound)}}.dump() << std::endl;
      server.run();
      g_server = nullptr;
    } else if (*validate_cmd) {
      const auto tree = severity::read_tree(validate_tree);
      const auto violations = severity::validate_tree(tree);
      if (!violations.empty()) {
        json list = json::array();
        for (const auto& v : violations) {
          list.push_back({{"node_id", v.node_id}, {"rule", v.rule}, {"message", v.message}});
        }
        std::cerr << json{{"error", {{"kind", "invalid_tree"},
                                     {"message", violations.front().message},
                                     {"violations", std::move(list)}}}}
                         .dump()
                  << "\n";
        return 1;
      }
      std::cout << json{{"valid", true}, {"version", tree.version}}.dump() << "\n";
    } else if (*export_cmd) {
      emit(export_out, severity::to_json(severity::default_tree()).dump(2) + "\n");
    }
  } catch (const ParseError& e) {
    std::cerr << json{{"error", {{"kind", e.kind()}, {"field", e.field()}, {"message", e.what()}}}}.dump()
              << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << json{{"error", {{"kind", e.kind()}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  }
  return 0;
}
