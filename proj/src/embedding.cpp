#include "sevbench/embedding.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <unordered_map>

#include "sevbench/error.hpp"
#include "sevbench/io.hpp"
#include "sevbench/rng.hpp"

namespace sevbench::embedding {

namespace {

constexpr char kMagic[8] = {'S', 'E', 'V', 'B', 'V', 'E', 'C', '1'};
constexpr std::uint64_t kSignSalt = 0xa0761d6478bd642fULL;

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

template <typename Fn>
void for_each_token(std::string_view text, Fn&& fn) {
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) fn(text.substr(start, i - start));
  }
}

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out += static_cast<char>((value >> (8 * i)) & 0xff);
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw Error("truncated", std::string("vector file truncated while reading ") + what +
                                   " at byte offset " + std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view to_string(EmbedderKind kind) {
  return kind == EmbedderKind::kFeatureHash ? "feature_hash" : "external_file";
}

std::optional<EmbedderKind> parse_embedder_kind(std::string_view text) {
  if (text == "feature_hash") return EmbedderKind::kFeatureHash;
  if (text == "external_file") return EmbedderKind::kExternalFile;
  return std::nullopt;
}

std::vector<float> feature_hash(std::string_view query, std::string_view answer,
                                std::uint32_t dimension, std::uint64_t seed) {
  if (dimension == 0) throw precondition_error("feature_hash dimension must be >= 1");
  std::vector<double> acc(dimension, 0.0);
  const std::uint64_t seed_mix = splitmix64(seed);
  auto add = [&](std::string_view token) {
    const std::uint64_t h = fnv1a(token);
    const std::uint64_t bucket = splitmix64(h ^ seed_mix) % dimension;
    const bool negative = (splitmix64(h ^ seed_mix ^ kSignSalt) >> 63) != 0;
    acc[bucket] += negative ? -1.0 : 1.0;
  };
  for_each_token(query, add);
  for_each_token(answer, add);

  double norm_sq = 0.0;
  for (double x : acc) norm_sq += x * x;
  std::vector<float> out(dimension, 0.0f);
  if (norm_sq == 0.0) {
    out[0] = 1.0f;
    return out;
  }
  const double inv = 1.0 / std::sqrt(norm_sq);
  for (std::uint32_t i = 0; i < dimension; ++i) out[i] = static_cast<float>(acc[i] * inv);
  return out;
}

std::vector<EmbeddingVector> embed(const EmbedderSpec& spec, const std::vector<Interaction>& pool) {
  if (pool.empty()) throw precondition_error("cannot embed an empty pool");
  std::vector<EmbeddingVector> out;
  out.reserve(pool.size());

  if (spec.kind == EmbedderKind::kFeatureHash) {
    if (spec.dimension == 0) throw precondition_error("feature_hash requires dimension >= 1");
    for (const auto& interaction : pool) {
      out.push_back({interaction.id,
                     feature_hash(interaction.query, interaction.answer, spec.dimension,
                                  spec.hash_seed)});
    }
    return out;
  }

  if (!spec.vector_file) throw precondition_error("external_file embedder requires a vector file");
  auto stored = read_vectors(*spec.vector_file);
  if (!stored.empty() && spec.dimension != 0 && stored.front().values.size() != spec.dimension) {
    throw Error("dimension_mismatch", "vector file dimension " +
                                          std::to_string(stored.front().values.size()) +
                                          " does not match requested dimension " +
                                          std::to_string(spec.dimension));
  }
  std::unordered_map<std::string_view, const EmbeddingVector*> by_id;
  for (const auto& v : stored) by_id.emplace(v.interaction_id, &v);
  for (const auto& interaction : pool) {
    auto it = by_id.find(interaction.id);
    if (it == by_id.end()) {
      throw Error("not_found", "no vector for interaction id '" + interaction.id + "'");
    }
    out.push_back(*it->second);
  }
  return out;
}

std::string encode_vectors(const std::vector<EmbeddingVector>& vectors) {
  validate_pool(vectors);
  const std::uint32_t dim =
      vectors.empty() ? 0 : static_cast<std::uint32_t>(vectors.front().values.size());
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, dim);
  put_le<std::uint64_t>(out, vectors.size());
  for (const auto& v : vectors) {
    if (v.interaction_id.size() > 0xffff) {
      throw precondition_error("interaction id longer than 65535 bytes");
    }
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(v.interaction_id.size()));
    out += v.interaction_id;
    for (float x : v.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(x));
  }
  return out;
}

std::vector<EmbeddingVector> decode_vectors(std::string_view bytes) {
  Reader reader(bytes);
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error("bad_magic", "not a vector file (magic mismatch)");
  }
  reader.take(sizeof(kMagic), "magic");
  const auto dim = reader.get<std::uint32_t>("dimension");
  const auto count = reader.get<std::uint64_t>("count");
  if (count > 0 && dim == 0) throw Error("dimension_mismatch", "vector file has dimension 0");

  std::vector<EmbeddingVector> out;
  for (std::uint64_t r = 0; r < count; ++r) {
    EmbeddingVector v;
    const auto id_len = reader.get<std::uint16_t>("id length");
    v.interaction_id = std::string(reader.take(id_len, "id"));
    v.values.resize(dim);
    for (auto& x : v.values) x = std::bit_cast<float>(reader.get<std::uint32_t>("vector values"));
    out.push_back(std::move(v));
  }
  if (reader.remaining() != 0) {
    throw Error("dimension_mismatch", std::to_string(reader.remaining()) +
                                          " trailing bytes: records disagree with header "
                                          "dimension/count");
  }
  return out;
}

void write_vectors(const std::vector<EmbeddingVector>& vectors, const std::filesystem::path& path) {
  write_text_atomic(path, encode_vectors(vectors));
}

std::vector<EmbeddingVector> read_vectors(const std::filesystem::path& path) {
  return decode_vectors(read_text(path));
}

}  // namespace sevbench::embedding
