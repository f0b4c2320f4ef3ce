#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "sevbench/types.hpp"

namespace sevbench::embedding {

enum class EmbedderKind : std::uint8_t { kExternalFile, kFeatureHash };

std::string_view to_string(EmbedderKind kind);
std::optional<EmbedderKind> parse_embedder_kind(std::string_view text);

struct EmbedderSpec {
  EmbedderKind kind = EmbedderKind::kFeatureHash;
  /// Required (>= 1) for feature_hash; for external_file, 0 accepts the file's dimension.
  std::uint32_t dimension = 0;
  std::uint64_t hash_seed = 0;
  /// Required for external_file.
  std::optional<std::filesystem::path> vector_file;
};

/// One vector per interaction, aligned with `pool`.
///
/// feature_hash: every whitespace-delimited token of the query and then the
/// answer is hashed to a bucket in [0, d) with a sign from an independent
/// hash; the accumulated vector is L2-normalized (an empty text maps to e_0).
///
/// external_file: vectors are looked up by interaction id in `vector_file`.
std::vector<EmbeddingVector> embed(const EmbedderSpec& spec, const std::vector<Interaction>& pool);

/// Deterministic feature-hash embedding of a single (query, answer) pair.
std::vector<float> feature_hash(std::string_view query, std::string_view answer,
                                std::uint32_t dimension, std::uint64_t seed);

/// Binary layout (all integers little-endian):
///   "SEVBVEC1" | u32 dimension | u64 count | count x (u16 id_len | id bytes | dimension x f32)
void write_vectors(const std::vector<EmbeddingVector>& vectors, const std::filesystem::path& path);
std::vector<EmbeddingVector> read_vectors(const std::filesystem::path& path);

std::string encode_vectors(const std::vector<EmbeddingVector>& vectors);
std::vector<EmbeddingVector> decode_vectors(std::string_view bytes);

}  // namespace sevbench::embedding
