#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sevbench/coreset.hpp"
#include "sevbench/types.hpp"

namespace sevbench::estimation {

/// theta_j = sum_{i in support} w_i [label_i = j] / sum_{i in support} w_i.
ProportionEstimate estimate_proportions(const std::map<std::string, SeverityLabel>& annotations,
                                        const coreset::CoresetResult& result,
                                        const std::vector<std::string>& id_map);

/// Same estimator with labels addressed by pool index.
ProportionEstimate estimate_proportions(std::span<const SeverityLabel> labels,
                                        const coreset::CoresetResult& result);

/// Exact proportions over every label in `labels`.
ProportionEstimate exact_proportions(std::span<const SeverityLabel> labels);

/// sqrt(mean over the four labels of (estimate_j - truth_j)^2).
double rmse(const ProportionEstimate& estimate, const ProportionEstimate& truth);

struct RmseCurve {
  EstimatorKind estimator = EstimatorKind::kUniform;
  std::vector<std::pair<std::size_t, double>> points;  // (k, rmse), k ascending
  std::size_t bootstrap_iterations = 0;
  std::uint64_t seed = 0;

  /// Throws precondition Error when k is not a curve point.
  double at(std::size_t k) const;

  bool operator==(const RmseCurve&) const = default;
};

enum class Aggregate : std::uint8_t { kMean, kMedian };

struct BootstrapOptions {
  /// Each iteration draws ceil(fraction * N) items without replacement.
  double subpool_fraction = 0.8;
  Aggregate aggregate = Aggregate::kMean;
  /// Budgets for the uniform curve; empty means the coreset budgets. A denser
  /// or longer uniform grid lets equivalent_uniform_size bracket its target.
  std::vector<std::size_t> uniform_ks;
  /// Worker threads for iterations; results do not depend on it.
  unsigned threads = 1;
};

struct BootstrapCurves {
  RmseCurve uniform;
  RmseCurve coreset;
  ProportionEstimate full_truth;
};

/// For each iteration b: subpool from (seed, b), subpool truth, GIGA and
/// uniform (seed ^ b) estimates per budget, RMSE against the subpool truth.
/// Curve points aggregate the B per-iteration values in iteration order.
BootstrapCurves bootstrap_compare(const coreset::VectorPool& vectors,
                                  std::span<const SeverityLabel> gold,
                                  std::span<const std::size_t> ks, std::size_t iterations,
                                  std::uint64_t seed, const BootstrapOptions& options = {});

struct EquivalentSize {
  std::size_t unif_size = 0;
  double reduction = 0.0;  // (unif_size - k) / unif_size
};

/// Smallest uniform budget whose (linearly interpolated) RMSE reaches the
/// coreset RMSE at k, rounded up. Throws Error("unreachable") when the target
/// lies below every uniform point.
EquivalentSize equivalent_uniform_size(const RmseCurve& coreset_curve,
                                       const RmseCurve& uniform_curve, std::size_t k);

/// "coreset_k,unif_k,reduction_pct" rows for every coreset point; unreachable
/// targets are written as NA.
std::string reductions_csv(const RmseCurve& coreset_curve, const RmseCurve& uniform_curve);

nlohmann::json to_json(const RmseCurve& curve);
RmseCurve curve_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ProportionEstimate& estimate);
ProportionEstimate estimate_from_json(const nlohmann::json& j);

}  // namespace sevbench::estimation
