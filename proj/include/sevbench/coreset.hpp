#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sevbench/types.hpp"

namespace sevbench::coreset {

/// Dense row-major pool of covariate vectors in double precision.
class VectorPool {
 public:
  VectorPool() = default;
  VectorPool(std::size_t size, std::size_t dim);
  explicit VectorPool(const std::vector<EmbeddingVector>& vectors);
  static VectorPool from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t size() const { return size_; }
  std::size_t dim() const { return dim_; }

  std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }

  /// Rows at `indices`, in that order.
  VectorPool subset(std::span<const std::size_t> indices) const;

  /// Sum over all rows.
  std::vector<double> total() const;

 private:
  std::size_t size_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

using SparseWeights = std::map<std::size_t, double>;

enum class Solver : std::uint8_t { kGiga, kUniform, kOracle };

std::string_view to_string(Solver solver);

struct CoresetResult {
  SparseWeights weights;
  /// Ascending; equals the key set of `weights`.
  std::vector<std::size_t> support;
  std::size_t k = 0;
  std::size_t pool_size = 0;
  /// ||sum_i w_i phi_i - sum_i phi_i||^2
  double objective = 0.0;
  Solver solver = Solver::kGiga;

  bool operator==(const CoresetResult&) const = default;
};

/// Squared Euclidean norm of (weighted sum - full sum). Throws on a bad index
/// or a negative weight.
double discrepancy(const VectorPool& vectors, const SparseWeights& weights);

/// Greedy iterative geodesic ascent with at most `k` greedy steps followed by
/// a nonnegative optimal rescaling. Requires 1 <= k <= N and at least one
/// nonzero vector.
CoresetResult solve_giga(const VectorPool& vectors, std::size_t k);

/// One GIGA run reporting the result after each budget in `ks` (ascending,
/// each in [1, N]). Entry i equals solve_giga(vectors, ks[i]).
std::vector<CoresetResult> solve_giga_path(const VectorPool& vectors,
                                           std::span<const std::size_t> ks);

/// Uniform without-replacement sample of exactly k indices, each weighted N/k.
CoresetResult solve_uniform(const VectorPool& vectors, std::size_t k, std::uint64_t seed);

/// Exhaustive search over all supports of size <= k, each solved by projected
/// coordinate descent on the nonnegative least-squares subproblem. Ties keep
/// the first support in (size, lexicographic) order. Limited to N <= 12,
/// k <= 4, d <= 4.
CoresetResult solve_oracle(const VectorPool& vectors, std::size_t k);

inline constexpr std::size_t kOracleMaxPool = 12;
inline constexpr std::size_t kOracleMaxBudget = 4;
inline constexpr std::size_t kOracleMaxDim = 4;

/// Checks support/weight/objective invariants against `vectors`.
void validate(const CoresetResult& result, const VectorPool& vectors);

/// JSON with support ids resolved through `ids` (index -> interaction id).
nlohmann::json to_json(const CoresetResult& result, const std::vector<std::string>& ids);
/// Inverse of to_json; fills `ids_out` (same order as support) when non-null.
CoresetResult from_json(const nlohmann::json& j, std::vector<std::string>* ids_out = nullptr);

}  // namespace sevbench::coreset
