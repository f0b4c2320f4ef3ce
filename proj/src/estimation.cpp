#include "sevbench/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>

#include "sevbench/error.hpp"
#include "sevbench/rng.hpp"

namespace sevbench::estimation {

using coreset::CoresetResult;
using coreset::VectorPool;

namespace {

ProportionEstimate normalize(const std::array<double, kNumLabels>& mass, double total,
                             std::size_t sample_size, EstimatorKind estimator) {
  if (!(total > 0.0)) throw precondition_error("zero total weight");
  ProportionEstimate out;
  for (std::size_t j = 0; j < kNumLabels; ++j) out.proportions[j] = mass[j] / total;
  out.sample_size = sample_size;
  out.estimator = estimator;
  return out;
}

EstimatorKind estimator_for(const CoresetResult& result) {
  return result.solver == coreset::Solver::kUniform ? EstimatorKind::kUniform
                                                    : EstimatorKind::kCoreset;
}

double aggregate(std::vector<double> values, Aggregate how) {
  if (how == Aggregate::kMean) {
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
  }
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<std::size_t> sorted_unique(std::span<const std::size_t> ks) {
  std::vector<std::size_t> out(ks.begin(), ks.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

ProportionEstimate estimate_proportions(const std::map<std::string, SeverityLabel>& annotations,
                                        const CoresetResult& result,
                                        const std::vector<std::string>& id_map) {
  std::array<double, kNumLabels> mass{};
  double total = 0.0;
  for (const auto& [index, weight] : result.weights) {
    if (index >= id_map.size()) {
      throw precondition_error("support index " + std::to_string(index) + " has no interaction id");
    }
    auto it = annotations.find(id_map[index]);
    if (it == annotations.end()) {
      throw Error("missing_annotation", "no annotation for support member '" + id_map[index] + "'");
    }
    mass[label_index(it->second)] += weight;
    total += weight;
  }
  return normalize(mass, total, result.support.size(), estimator_for(result));
}

ProportionEstimate estimate_proportions(std::span<const SeverityLabel> labels,
                                        const CoresetResult& result) {
  std::array<double, kNumLabels> mass{};
  double total = 0.0;
  for (const auto& [index, weight] : result.weights) {
    if (index >= labels.size()) {
      throw Error("missing_annotation", "no label for support index " + std::to_string(index));
    }
    mass[label_index(labels[index])] += weight;
    total += weight;
  }
  return normalize(mass, total, result.support.size(), estimator_for(result));
}

ProportionEstimate exact_proportions(std::span<const SeverityLabel> labels) {
  std::array<double, kNumLabels> mass{};
  for (auto label : labels) mass[label_index(label)] += 1.0;
  return normalize(mass, static_cast<double>(labels.size()), labels.size(),
                   EstimatorKind::kUniform);
}

double rmse(const ProportionEstimate& estimate, const ProportionEstimate& truth) {
  double sum = 0.0;
  for (std::size_t j = 0; j < kNumLabels; ++j) {
    const double diff = estimate.proportions[j] - truth.proportions[j];
    sum += diff * diff;
  }
  return std::sqrt(sum / static_cast<double>(kNumLabels));
}

double RmseCurve::at(std::size_t k) const {
  for (const auto& [point_k, value] : points) {
    if (point_k == k) return value;
  }
  throw precondition_error("budget " + std::to_string(k) + " is not on the " +
                           std::string(to_string(estimator)) + " curve");
}

BootstrapCurves bootstrap_compare(const VectorPool& vectors, std::span<const SeverityLabel> gold,
                                  std::span<const std::size_t> ks, std::size_t iterations,
                                  std::uint64_t seed, const BootstrapOptions& options) {
  const std::size_t n = vectors.size();
  if (gold.size() != n) {
    throw Error("missing_annotation", "gold labels cover " + std::to_string(gold.size()) +
                                          " of " + std::to_string(n) + " pool items");
  }
  if (iterations < 1) throw precondition_error("bootstrap iterations must be >= 1");
  if (!(options.subpool_fraction > 0.0 && options.subpool_fraction <= 1.0)) {
    throw precondition_error("subpool fraction must be in (0, 1]");
  }
  const auto subpool_size =
      static_cast<std::size_t>(std::ceil(options.subpool_fraction * static_cast<double>(n)));
  const auto coreset_ks = sorted_unique(ks);
  const auto uniform_ks = options.uniform_ks.empty() ? coreset_ks : sorted_unique(options.uniform_ks);
  if (coreset_ks.empty()) throw precondition_error("no budgets given");
  for (auto k : {coreset_ks.front(), coreset_ks.back(), uniform_ks.front(), uniform_ks.back()}) {
    if (k < 1 || k > subpool_size) {
      throw precondition_error("budget " + std::to_string(k) + " outside [1, subpool size " +
                               std::to_string(subpool_size) + "]");
    }
  }

  BootstrapCurves out;
  out.full_truth = exact_proportions(gold);

  // Per-iteration values stored by [iteration][k index]; aggregation below
  // walks iterations in order so the result does not depend on scheduling.
  std::vector<std::vector<double>> coreset_rmse(iterations, std::vector<double>(coreset_ks.size()));
  std::vector<std::vector<double>> uniform_rmse(iterations, std::vector<double>(uniform_ks.size()));

  auto run_iteration = [&](std::size_t b) {
    Rng rng = Rng::derive(seed, b);
    auto members = rng.sample_without_replacement(n, subpool_size);
    std::sort(members.begin(), members.end());
    const VectorPool sub = vectors.subset(members);
    std::vector<SeverityLabel> sub_gold(members.size());
    for (std::size_t i = 0; i < members.size(); ++i) sub_gold[i] = gold[members[i]];
    const auto truth = exact_proportions(sub_gold);

    const auto path = coreset::solve_giga_path(sub, coreset_ks);
    for (std::size_t i = 0; i < coreset_ks.size(); ++i) {
      coreset_rmse[b][i] = rmse(estimate_proportions(sub_gold, path[i]), truth);
    }
    for (std::size_t i = 0; i < uniform_ks.size(); ++i) {
      const auto sample = coreset::solve_uniform(sub, uniform_ks[i], seed ^ b);
      uniform_rmse[b][i] = rmse(estimate_proportions(sub_gold, sample), truth);
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, iterations));
  if (threads == 1) {
    for (std::size_t b = 0; b < iterations; ++b) run_iteration(b);
  } else {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned t = 0; t < threads; ++t) {
      workers.emplace_back([&, t] {
        try {
          for (std::size_t b = t; b < iterations; b += threads) run_iteration(b);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  auto build = [&](EstimatorKind kind, const std::vector<std::size_t>& grid,
                   const std::vector<std::vector<double>>& values) {
    RmseCurve curve;
    curve.estimator = kind;
    curve.bootstrap_iterations = iterations;
    curve.seed = seed;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      std::vector<double> column(iterations);
      for (std::size_t b = 0; b < iterations; ++b) column[b] = values[b][i];
      curve.points.emplace_back(grid[i], aggregate(std::move(column), options.aggregate));
    }
    return curve;
  };
  out.coreset = build(EstimatorKind::kCoreset, coreset_ks, coreset_rmse);
  out.uniform = build(EstimatorKind::kUniform, uniform_ks, uniform_rmse);
  return out;
}

EquivalentSize equivalent_uniform_size(const RmseCurve& coreset_curve,
                                       const RmseCurve& uniform_curve, std::size_t k) {
  const double target = coreset_curve.at(k);
  const auto& points = uniform_curve.points;
  if (points.empty()) throw precondition_error("uniform curve is empty");

  std::optional<double> crossing;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto [ki, ri] = points[i];
    if (ri > target) continue;
    if (i == 0) {
      crossing = static_cast<double>(ki);
    } else {
      const auto [kp, rp] = points[i - 1];
      const double frac = (rp - target) / (rp - ri);
      crossing = static_cast<double>(kp) + frac * static_cast<double>(ki - kp);
    }
    break;
  }
  if (!crossing) {
    throw Error("unreachable", "coreset RMSE at k=" + std::to_string(k) +
                                   " is below every point of the uniform curve");
  }
  EquivalentSize out;
  // Guard against interpolation landing a hair above an integer.
  out.unif_size = static_cast<std::size_t>(std::ceil(*crossing - 1e-9));
  out.reduction = out.unif_size == 0
                      ? 0.0
                      : (static_cast<double>(out.unif_size) - static_cast<double>(k)) /
                            static_cast<double>(out.unif_size);
  return out;
}

std::string reductions_csv(const RmseCurve& coreset_curve, const RmseCurve& uniform_curve) {
  std::string out = "coreset_k,unif_k,reduction_pct\n";
  char buf[96];
  for (const auto& [k, value] : coreset_curve.points) {
    try {
      const auto eq = equivalent_uniform_size(coreset_curve, uniform_curve, k);
      std::snprintf(buf, sizeof(buf), "%zu,%zu,%.2f\n", k, eq.unif_size, 100.0 * eq.reduction);
    } catch (const Error& e) {
      if (e.kind() != "unreachable") throw;
      std::snprintf(buf, sizeof(buf), "%zu,NA,NA\n", k);
    }
    out += buf;
  }
  return out;
}

nlohmann::json to_json(const RmseCurve& curve) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& [k, value] : curve.points) points.push_back({{"k", k}, {"rmse", value}});
  return {{"estimator", std::string(to_string(curve.estimator))},
          {"bootstrap_iterations", curve.bootstrap_iterations},
          {"seed", curve.seed},
          {"points", std::move(points)}};
}

RmseCurve curve_from_json(const nlohmann::json& j) {
  try {
    RmseCurve curve;
    auto kind = parse_estimator(j.at("estimator").get<std::string>());
    if (!kind) throw ParseError("estimator", "unknown estimator");
    curve.estimator = *kind;
    curve.bootstrap_iterations = j.at("bootstrap_iterations").get<std::size_t>();
    curve.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& p : j.at("points")) {
      curve.points.emplace_back(p.at("k").get<std::size_t>(), p.at("rmse").get<double>());
    }
    return curve;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("curve", std::string("malformed RMSE curve: ") + e.what());
  }
}

nlohmann::json to_json(const ProportionEstimate& estimate) {
  nlohmann::json proportions = nlohmann::json::object();
  for (auto label : kAllLabels) proportions[std::string(to_string(label))] = estimate[label];
  return {{"category_proportions", std::move(proportions)},
          {"sample_size", estimate.sample_size},
          {"estimator", std::string(to_string(estimate.estimator))}};
}

ProportionEstimate estimate_from_json(const nlohmann::json& j) {
  try {
    ProportionEstimate out;
    for (auto label : kAllLabels) {
      out.proportions[label_index(label)] =
          j.at("category_proportions").at(std::string(to_string(label))).get<double>();
    }
    out.sample_size = j.at("sample_size").get<std::size_t>();
    auto kind = parse_estimator(j.at("estimator").get<std::string>());
    if (!kind) throw ParseError("estimator", "unknown estimator");
    out.estimator = *kind;
    validate(out);
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("estimate", std::string("malformed proportion estimate: ") + e.what());
  }
}

}  // namespace sevbench::estimation
