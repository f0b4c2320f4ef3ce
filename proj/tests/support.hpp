#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sevbench/coreset.hpp"
#include "sevbench/types.hpp"

namespace testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 gen(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("sevbench-test-" + std::to_string(gen()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline sevbench::coreset::VectorPool gaussian_pool(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal;
  std::vector<std::vector<double>> rows(n, std::vector<double>(d));
  for (auto& row : rows) {
    for (auto& x : row) x = normal(gen);
  }
  return sevbench::coreset::VectorPool::from_rows(rows);
}

inline sevbench::Interaction make_interaction(const std::string& id, const std::string& answer = "an answer") {
  sevbench::Interaction i;
  i.id = id;
  i.query = "how do I " + id;
  i.answer = answer;
  i.timestamp = std::chrono::sys_days{std::chrono::year{2024} / 7 / 1};
  i.agent_route = sevbench::AgentRoute::kConceptualDocs;
  return i;
}

}  // namespace testing
