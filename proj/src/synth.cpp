#include "sevbench/synth.hpp"

#include <cmath>
#include <cstdio>
#include <span>

#include "sevbench/error.hpp"
#include "sevbench/rng.hpp"

namespace sevbench::synth {

namespace {

std::size_t draw_categorical(Rng& rng, const std::vector<double>& cumulative) {
  const double u = rng.uniform01() * cumulative.back();
  for (std::size_t i = 0; i < cumulative.size(); ++i) {
    if (u < cumulative[i]) return i;
  }
  return cumulative.size() - 1;
}

std::vector<double> cumulative_of(std::span<const double> weights) {
  std::vector<double> out;
  double acc = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw precondition_error("weights must be nonnegative");
    acc += w;
    out.push_back(acc);
  }
  if (!(acc > 0.0)) throw precondition_error("weights must not all be zero");
  return out;
}

}  // namespace

SynthPool generate(const SynthConfig& config, const severity::DecisionTree& tree) {
  if (config.size == 0 || config.dimension == 0 || config.clusters == 0) {
    throw precondition_error("synth size, dimension and clusters must be >= 1");
  }
  if (!config.mixing.empty() && config.mixing.size() != config.clusters) {
    throw precondition_error("mixing weights must have one entry per cluster");
  }
  if (!config.label_distributions.empty() &&
      config.label_distributions.size() != config.clusters) {
    throw precondition_error("label distributions must have one entry per cluster");
  }

  Rng rng(config.seed);
  const std::size_t d = config.dimension;
  SynthPool pool;

  std::vector<double> offset(d);
  double offset_norm = 0.0;
  for (auto& x : offset) {
    x = rng.normal();
    offset_norm += x * x;
  }
  offset_norm = std::sqrt(offset_norm);
  for (auto& x : offset) x *= config.shared_offset / offset_norm;

  std::vector<std::vector<double>> means(config.clusters, std::vector<double>(d));
  for (auto& mean : means) {
    for (std::size_t j = 0; j < d; ++j) mean[j] = offset[j] + config.cluster_spread * rng.normal();
  }

  // One direction per label, shared by every cluster.
  std::array<std::vector<double>, kNumLabels> label_shift;
  for (auto& shift : label_shift) {
    shift.resize(d);
    double norm_sq = 0.0;
    for (auto& x : shift) {
      x = rng.normal();
      norm_sq += x * x;
    }
    const double scale = config.label_offset / std::sqrt(norm_sq);
    for (auto& x : shift) x *= scale;
  }

  pool.label_distributions = config.label_distributions;
  if (pool.label_distributions.empty()) {
    for (std::size_t c = 0; c < config.clusters; ++c) {
      std::array<double, kNumLabels> dist{};
      double total = 0.0;
      for (auto& p : dist) {
        p = std::exp(config.label_concentration * rng.normal());
        total += p;
      }
      for (auto& p : dist) p /= total;
      pool.label_distributions.push_back(dist);
    }
  }

  const std::vector<double> uniform_mixing(config.clusters, 1.0);
  const auto cluster_cdf = cumulative_of(config.mixing.empty() ? uniform_mixing : config.mixing);
  std::vector<std::vector<double>> label_cdfs;
  for (const auto& dist : pool.label_distributions) label_cdfs.push_back(cumulative_of(dist));

  // Tree paths per label, so gold records go through the real derivation.
  std::array<std::vector<severity::TreePath>, kNumLabels> paths_for;
  for (auto& path : severity::enumerate_paths(tree)) {
    paths_for[label_index(path.label)].push_back(std::move(path));
  }

  const Timestamp base = std::chrono::sys_days{std::chrono::year{2024} / 7 / 1} +
                         std::chrono::hours{0};
  char id[32];
  for (std::size_t i = 0; i < config.size; ++i) {
    const std::size_t c = draw_categorical(rng, cluster_cdf);
    const auto label = kAllLabels[draw_categorical(rng, label_cdfs[c])];

    EmbeddingVector v;
    std::snprintf(id, sizeof(id), "synth-%06zu", i);
    v.interaction_id = id;
    v.values.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      v.values[j] = static_cast<float>(means[c][j] + label_shift[label_index(label)][j] +
                                       config.noise * rng.normal());
    }

    const auto& candidates = paths_for[label_index(label)];
    if (candidates.empty()) throw invariant_error("tree cannot produce every label");
    const auto& path = candidates[rng.uniform_index(candidates.size())];

    Interaction interaction;
    interaction.id = id;
    interaction.query = "synthetic question about topic-" + std::to_string(c) + " item " +
                        std::to_string(i);
    interaction.answer = "synthetic answer for topic-" + std::to_string(c);
    interaction.timestamp = base + std::chrono::minutes{static_cast<long>(i)};
    interaction.agent_route = c % 2 == 0 ? AgentRoute::kConceptualDocs : AgentRoute::kStructuredData;
    interaction.system_decisions = path.system_decisions;

    pool.gold_records.push_back(severity::make_record(
        tree, interaction, "synth-gold", severity::to_map(path.judgments), true,
        interaction.timestamp + std::chrono::hours{24}));
    pool.interactions.push_back(std::move(interaction));
    pool.vectors.push_back(std::move(v));
    pool.labels.push_back(label);
    pool.cluster_of.push_back(c);
  }
  return pool;
}

}  // namespace sevbench::synth
