#include "sevbench/coreset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "sevbench/error.hpp"
#include "sevbench/rng.hpp"

namespace sevbench::coreset {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void check_budget(std::size_t k, std::size_t n) {
  if (k < 1 || k > n) {
    throw precondition_error("budget k=" + std::to_string(k) + " outside [1, " +
                             std::to_string(n) + "]");
  }
}

CoresetResult make_result(const VectorPool& vectors, SparseWeights weights, std::size_t k,
                          Solver solver) {
  CoresetResult r;
  for (auto it = weights.begin(); it != weights.end();) {
    it = it->second > 0.0 ? std::next(it) : weights.erase(it);
  }
  r.weights = std::move(weights);
  for (const auto& [i, w] : r.weights) r.support.push_back(i);
  r.k = k;
  r.pool_size = vectors.size();
  r.objective = discrepancy(vectors, r.weights);
  r.solver = solver;
  return r;
}

/// State of the geodesic ascent on the unit sphere. `point` is the current
/// iterate sum_n w_n u_n with u_n = phi_n / |phi_n|; it stays unit norm.
class GeodesicAscent {
 public:
  explicit GeodesicAscent(const VectorPool& vectors)
      : n_(vectors.size()),
        d_(vectors.dim()),
        units_(n_, d_),
        norms_(n_, 0.0),
        target_align_(n_, 0.0),
        point_align_(n_, 0.0),
        weights_(n_, 0.0),
        point_(d_, 0.0) {
    total_ = vectors.total();
    const double total_norm = norm(total_);
    bool any_nonzero = false;
    for (std::size_t i = 0; i < n_; ++i) {
      norms_[i] = norm(vectors.row(i));
      if (norms_[i] > 0.0) {
        any_nonzero = true;
        auto u = units_.row(i);
        auto phi = vectors.row(i);
        for (std::size_t j = 0; j < d_; ++j) u[j] = phi[j] / norms_[i];
      }
    }
    if (!any_nonzero) throw precondition_error("all vectors have zero norm");
    target_.assign(d_, 0.0);
    if (total_norm > 0.0) {
      for (std::size_t j = 0; j < d_; ++j) target_[j] = total_[j] / total_norm;
      for (std::size_t i = 0; i < n_; ++i) {
        if (norms_[i] > 0.0) target_align_[i] = dot(target_, units_.row(i));
      }
    } else {
      // Nothing to approximate: the empty weighting is already exact.
      done_ = true;
    }
  }

  /// One greedy step. Returns false once no step can improve the alignment.
  bool step() {
    if (done_) return false;
    if (!started_) {
      const auto m = argmax([&](std::size_t i) { return target_align_[i]; });
      if (!m) return finish();
      weights_[*m] = 1.0;
      auto u = units_.row(*m);
      std::copy(u.begin(), u.end(), point_.begin());
      refresh_point_alignment();
      started_ = true;
      return true;
    }

    const double zeta1 = dot(target_, point_);
    std::vector<double> residual(d_);
    for (std::size_t j = 0; j < d_; ++j) residual[j] = target_[j] - zeta1 * point_[j];
    const double residual_norm = norm(residual);
    if (residual_norm <= 1e-12) return finish();

    // Alignment between the geodesic direction toward the target and the
    // geodesic direction toward u_n, both taken at the current point.
    const auto m = argmax([&](std::size_t i) {
      const double c = point_align_[i];
      const double sin_sq = 1.0 - c * c;
      if (sin_sq <= 1e-14) return -std::numeric_limits<double>::infinity();
      return (target_align_[i] - zeta1 * c) / (residual_norm * std::sqrt(sin_sq));
    });
    if (!m) return finish();

    const double zeta0 = target_align_[*m];
    const double zeta2 = point_align_[*m];
    const double toward = zeta0 - zeta1 * zeta2;
    const double denom = toward + (zeta1 - zeta0 * zeta2);
    if (!(toward > 0.0) || !(denom > 0.0)) return finish();
    const double gamma = std::clamp(toward / denom, 0.0, 1.0);
    if (gamma == 0.0) return finish();

    auto u = units_.row(*m);
    for (std::size_t j = 0; j < d_; ++j) point_[j] = (1.0 - gamma) * point_[j] + gamma * u[j];
    const double z = norm(point_);
    if (!(z > 0.0)) return finish();
    for (auto& x : point_) x /= z;
    for (auto& w : weights_) w *= (1.0 - gamma) / z;
    weights_[*m] += gamma / z;
    refresh_point_alignment();
    return true;
  }

  /// Current weights mapped back to the original vectors, then scaled by the
  /// nonnegative scalar minimizing ||L - s * S||^2 with S = sum w_n phi_n.
  SparseWeights rescaled_weights() const {
    SparseWeights out;
    if (!started_) return out;
    std::vector<double> s(d_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      if (weights_[i] <= 0.0) continue;
      auto u = units_.row(i);
      for (std::size_t j = 0; j < d_; ++j) s[j] += weights_[i] * u[j];
    }
    const double ss = dot(s, s);
    if (!(ss > 0.0)) return out;
    const double scale = std::max(0.0, dot(total_, s) / ss);
    if (scale == 0.0) return out;
    for (std::size_t i = 0; i < n_; ++i) {
      if (weights_[i] > 0.0) out.emplace(i, scale * weights_[i] / norms_[i]);
    }
    return out;
  }

 private:
  bool finish() {
    done_ = true;
    return false;
  }

  void refresh_point_alignment() {
    for (std::size_t i = 0; i < n_; ++i) {
      point_align_[i] = norms_[i] > 0.0 ? dot(units_.row(i), point_) : 0.0;
    }
  }

  /// Highest finite score among nonzero vectors; lowest index wins ties.
  template <typename Score>
  std::optional<std::size_t> argmax(Score&& score) const {
    std::optional<std::size_t> best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n_; ++i) {
      if (norms_[i] <= 0.0) continue;
      const double s = score(i);
      if (std::isfinite(s) && s > best_score) {
        best_score = s;
        best = i;
      }
    }
    return best;
  }

  std::size_t n_;
  std::size_t d_;
  VectorPool units_;
  std::vector<double> norms_;
  std::vector<double> target_align_;
  std::vector<double> point_align_;
  std::vector<double> weights_;
  std::vector<double> point_;
  std::vector<double> total_;
  std::vector<double> target_;
  bool started_ = false;
  bool done_ = false;
};

/// Projected coordinate descent for min_{w >= 0} ||A w - b||^2 given the Gram
/// matrix G = A^T A and c = A^T b.
std::vector<double> nnls_coordinate_descent(const std::vector<std::vector<double>>& gram,
                                            const std::vector<double>& rhs) {
  const std::size_t s = rhs.size();
  std::vector<double> w(s, 0.0);
  constexpr double kTolerance = 1e-10;
  constexpr int kMaxSweeps = 200000;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double max_delta = 0.0;
    for (std::size_t j = 0; j < s; ++j) {
      if (gram[j][j] <= 0.0) continue;
      double grad = rhs[j];
      for (std::size_t l = 0; l < s; ++l) grad -= gram[j][l] * w[l];
      const double next = std::max(0.0, w[j] + grad / gram[j][j]);
      max_delta = std::max(max_delta, std::abs(next - w[j]));
      w[j] = next;
    }
    if (max_delta < kTolerance) break;
  }
  return w;
}

}  // namespace

VectorPool::VectorPool(std::size_t size, std::size_t dim)
    : size_(size), dim_(dim), data_(size * dim, 0.0) {}

VectorPool::VectorPool(const std::vector<EmbeddingVector>& vectors) {
  validate_pool(vectors);
  size_ = vectors.size();
  dim_ = vectors.empty() ? 0 : vectors.front().values.size();
  data_.reserve(size_ * dim_);
  for (const auto& v : vectors) {
    for (float x : v.values) data_.push_back(static_cast<double>(x));
  }
}

VectorPool VectorPool::from_rows(const std::vector<std::vector<double>>& rows) {
  VectorPool pool(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != pool.dim()) throw invariant_error("rows have different dimensions");
    std::copy(rows[i].begin(), rows[i].end(), pool.row(i).begin());
  }
  return pool;
}

VectorPool VectorPool::subset(std::span<const std::size_t> indices) const {
  VectorPool out(indices.size(), dim_);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    auto src = row(indices[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

std::vector<double> VectorPool::total() const {
  std::vector<double> sum(dim_, 0.0);
  for (std::size_t i = 0; i < size_; ++i) {
    auto r = row(i);
    for (std::size_t j = 0; j < dim_; ++j) sum[j] += r[j];
  }
  return sum;
}

std::string_view to_string(Solver solver) {
  switch (solver) {
    case Solver::kGiga: return "giga";
    case Solver::kUniform: return "uniform";
    case Solver::kOracle: return "oracle";
  }
  return "?";
}

double discrepancy(const VectorPool& vectors, const SparseWeights& weights) {
  auto diff = vectors.total();
  for (auto& x : diff) x = -x;
  for (const auto& [i, w] : weights) {
    if (i >= vectors.size()) {
      throw precondition_error("weight index " + std::to_string(i) + " out of range");
    }
    if (!(w >= 0.0)) throw precondition_error("negative weight at index " + std::to_string(i));
    auto r = vectors.row(i);
    for (std::size_t j = 0; j < diff.size(); ++j) diff[j] += w * r[j];
  }
  return dot(diff, diff);
}

std::vector<CoresetResult> solve_giga_path(const VectorPool& vectors,
                                           std::span<const std::size_t> ks) {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    check_budget(ks[i], vectors.size());
    if (i > 0 && ks[i] < ks[i - 1]) throw precondition_error("budgets must be ascending");
  }
  GeodesicAscent ascent(vectors);
  std::vector<CoresetResult> out;
  out.reserve(ks.size());
  std::size_t steps = 0;
  for (std::size_t k : ks) {
    while (steps < k) {
      ++steps;
      if (!ascent.step()) steps = k;
    }
    out.push_back(make_result(vectors, ascent.rescaled_weights(), k, Solver::kGiga));
  }
  return out;
}

CoresetResult solve_giga(const VectorPool& vectors, std::size_t k) {
  const std::size_t ks[] = {k};
  return solve_giga_path(vectors, ks).front();
}

CoresetResult solve_uniform(const VectorPool& vectors, std::size_t k, std::uint64_t seed) {
  const std::size_t n = vectors.size();
  check_budget(k, n);
  Rng rng(seed);
  const double w = static_cast<double>(n) / static_cast<double>(k);
  SparseWeights weights;
  for (std::size_t i : rng.sample_without_replacement(n, k)) weights.emplace(i, w);
  return make_result(vectors, std::move(weights), k, Solver::kUniform);
}

CoresetResult solve_oracle(const VectorPool& vectors, std::size_t k) {
  const std::size_t n = vectors.size();
  check_budget(k, n);
  if (n > kOracleMaxPool || k > kOracleMaxBudget || vectors.dim() > kOracleMaxDim) {
    throw Error("too_large", "oracle instance too large (N=" + std::to_string(n) +
                                 ", k=" + std::to_string(k) + ", d=" +
                                 std::to_string(vectors.dim()) + ")");
  }
  const auto total = vectors.total();
  const double scale = 1.0 + dot(total, total);

  SparseWeights best_weights;
  double best = discrepancy(vectors, best_weights);

  std::vector<std::size_t> subset;
  // Lexicographic enumeration of all subsets of each size.
  for (std::size_t size = 1; size <= k; ++size) {
    subset.resize(size);
    for (std::size_t i = 0; i < size; ++i) subset[i] = i;
    while (true) {
      std::vector<std::vector<double>> gram(size, std::vector<double>(size));
      std::vector<double> rhs(size);
      for (std::size_t a = 0; a < size; ++a) {
        rhs[a] = dot(vectors.row(subset[a]), total);
        for (std::size_t b = 0; b < size; ++b) {
          gram[a][b] = dot(vectors.row(subset[a]), vectors.row(subset[b]));
        }
      }
      const auto w = nnls_coordinate_descent(gram, rhs);
      SparseWeights candidate;
      for (std::size_t a = 0; a < size; ++a) {
        if (w[a] > 0.0) candidate.emplace(subset[a], w[a]);
      }
      const double objective = discrepancy(vectors, candidate);
      if (objective < best - 1e-12 * scale) {
        best = objective;
        best_weights = std::move(candidate);
      }

      std::size_t pos = size;
      while (pos > 0 && subset[pos - 1] == n - size + pos - 1) --pos;
      if (pos == 0) break;
      ++subset[pos - 1];
      for (std::size_t i = pos; i < size; ++i) subset[i] = subset[i - 1] + 1;
    }
  }
  return make_result(vectors, std::move(best_weights), k, Solver::kOracle);
}

void validate(const CoresetResult& result, const VectorPool& vectors) {
  if (result.pool_size != vectors.size()) throw invariant_error("pool_size mismatch");
  if (result.support.size() > result.k) throw invariant_error("support larger than k");
  if (!std::is_sorted(result.support.begin(), result.support.end()) ||
      std::adjacent_find(result.support.begin(), result.support.end()) != result.support.end()) {
    throw invariant_error("support must be strictly ascending");
  }
  if (result.support.size() != result.weights.size()) {
    throw invariant_error("support and weight keys differ");
  }
  std::size_t pos = 0;
  for (const auto& [i, w] : result.weights) {
    if (i >= vectors.size()) throw invariant_error("weight index out of range");
    if (!(w > 0.0)) throw invariant_error("weights must be strictly positive");
    if (result.support[pos++] != i) throw invariant_error("support and weight keys differ");
  }
  const double recomputed = discrepancy(vectors, result.weights);
  if (std::abs(recomputed - result.objective) > 1e-6 * std::max(1.0, std::abs(recomputed))) {
    throw invariant_error("objective does not match recomputation");
  }
}

nlohmann::json to_json(const CoresetResult& result, const std::vector<std::string>& ids) {
  nlohmann::json support = nlohmann::json::array();
  for (const auto& [i, w] : result.weights) {
    if (i >= ids.size()) throw precondition_error("support index has no interaction id");
    support.push_back({{"index", i}, {"id", ids[i]}, {"weight", w}});
  }
  return {{"solver", std::string(to_string(result.solver))},
          {"k", result.k},
          {"pool_size", result.pool_size},
          {"objective", result.objective},
          {"support", std::move(support)}};
}

CoresetResult from_json(const nlohmann::json& j, std::vector<std::string>* ids_out) {
  try {
    CoresetResult r;
    const auto solver = j.at("solver").get<std::string>();
    if (solver == "giga") {
      r.solver = Solver::kGiga;
    } else if (solver == "uniform") {
      r.solver = Solver::kUniform;
    } else if (solver == "oracle") {
      r.solver = Solver::kOracle;
    } else {
      throw ParseError("solver", "unknown solver '" + solver + "'");
    }
    r.k = j.at("k").get<std::size_t>();
    r.pool_size = j.at("pool_size").get<std::size_t>();
    r.objective = j.at("objective").get<double>();
    for (const auto& entry : j.at("support")) {
      const auto index = entry.at("index").get<std::size_t>();
      r.weights.emplace(index, entry.at("weight").get<double>());
      r.support.push_back(index);
      if (ids_out) ids_out->push_back(entry.at("id").get<std::string>());
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("coreset", std::string("malformed coreset JSON: ") + e.what());
  }
}

}  // namespace sevbench::coreset
