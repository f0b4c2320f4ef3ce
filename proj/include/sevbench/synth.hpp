#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "sevbench/severity.hpp"
#include "sevbench/types.hpp"

namespace sevbench::synth {

/// Gaussian-mixture embedding pool with per-cluster severity distributions.
struct SynthConfig {
  std::size_t size = 1000;
  std::size_t dimension = 64;
  std::size_t clusters = 8;
  /// Norm of the offset shared by every cluster mean.
  double shared_offset = 0.0;
  /// Standard deviation of each cluster mean around the shared offset, per coordinate.
  double cluster_spread = 1.0;
  /// Norm of a per-label offset shared by all clusters, so the label is partly
  /// encoded in the embedding; 0 makes labels depend on the cluster only.
  double label_offset = 3.0;
  /// Within-cluster standard deviation, per coordinate.
  double noise = 0.2;
  /// Cluster mixing weights; empty means uniform.
  std::vector<double> mixing;
  /// Per-cluster label distributions (Sev0, Sev1, Sev2, NoError); empty means
  /// drawn from the seed with `label_concentration` controlling how peaked they are.
  std::vector<std::array<double, kNumLabels>> label_distributions;
  double label_concentration = 2.0;
  std::uint64_t seed = 0;
};

struct SynthPool {
  std::vector<Interaction> interactions;
  std::vector<EmbeddingVector> vectors;
  std::vector<SeverityLabel> labels;
  std::vector<std::size_t> cluster_of;
  std::vector<std::array<double, kNumLabels>> label_distributions;
  /// One expert record per interaction whose judgments derive its label
  /// through `tree`, with system decisions set on the interaction to match.
  std::vector<severity::AnnotationRecord> gold_records;
};

SynthPool generate(const SynthConfig& config,
                   const severity::DecisionTree& tree = severity::default_tree());

}  // namespace sevbench::synth
