#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "semfsl/feature_bank.hpp"
#include "semfsl/tensor.hpp"

namespace semfsl {

// Semantic vectors keyed by normalized name. Used both for raw word-vector
// tokens and for per-class embeddings; a key may hold several words.
struct EmbeddingTable {
  Index dim = 0;
  std::map<std::string, Vector> entries;

  const Vector* find(std::string_view normalized) const;
  void insert(std::string_view name, Vector v);
};

// GloVe-style text: one entry per line, a token followed by `dim`
// whitespace-separated floats. dim == 0 infers the width from the first
// non-empty line. Keys are normalized; on collisions the first line wins.
EmbeddingTable parse_word_vectors(std::istream& in, Index dim = 0);
EmbeddingTable load_word_vectors(const std::filesystem::path& path, Index dim = 0);
void save_word_vectors(const EmbeddingTable& table, const std::filesystem::path& path);

// Exact normalized-name entry if present, otherwise the mean of the vectors
// of the constituent tokens (split on space/underscore/hyphen). Throws
// MissingEmbeddingError naming the first unresolved token.
Vector embedding_for_class(const EmbeddingTable& table, std::string_view class_name);

// Names of bank classes with no resolvable embedding, in bank order.
std::vector<std::string> coverage_check(const EmbeddingTable& table, const FeatureBank& bank);

// One row per bank class, in bank order. With `unit_norm`, rows are scaled
// to unit Euclidean length (zero rows stay zero).
Matrix align_embeddings(const EmbeddingTable& table, const FeatureBank& bank,
                        bool unit_norm = false);

}  // namespace semfsl
