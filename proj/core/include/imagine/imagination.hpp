#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "imagine/backend.hpp"
#include "imagine/forge.hpp"
#include "imagine/records.hpp"
#include "imagine/types.hpp"

namespace imagine::imagination {

/// Immutable exact-search index over image embeddings. Rows are stored as
/// given; cosine norms are cached at build time without touching the data.
class ImageIndex {
 public:
  const std::vector<std::string>& ids() const { return ids_; }
  size_t size() const { return ids_.size(); }
  int dim() const { return dim_; }
  const std::string& built_from() const { return built_from_; }
  std::span<const float> row(size_t i) const {
    return {data_.data() + i * static_cast<size_t>(dim_), static_cast<size_t>(dim_)};
  }
  const std::vector<double>& norms() const { return norms_; }
  uint64_t content_hash() const;

  friend ImageIndex build_index(const std::vector<EmbeddingRecord>& records,
                                const std::string& built_from);

 private:
  std::vector<std::string> ids_;
  std::vector<float> data_;  // N x dim, row-major
  std::vector<double> norms_;
  int dim_ = 0;
  std::string built_from_;

  friend struct IndexSearch;
};

ImageIndex build_index(const std::vector<EmbeddingRecord>& records,
                       const std::string& built_from = "");

struct Hit {
  std::string id;
  double similarity = 0.0;
  size_t row = 0;
};

/// Exact top-k by cosine similarity, descending; ties resolve to the lower
/// row index. Returns min(k, N) hits.
std::vector<Hit> retrieve(std::span<const float> query, const ImageIndex& index, int k);
std::vector<Hit> retrieve(const EmbeddingVector& query, const ImageIndex& index, int k);

/// Persist/load an index in the embedding binary format plus id sidecar.
void save_index(const ImageIndex& index, const std::filesystem::path& bin,
                const std::filesystem::path& ids);
ImageIndex load_index(const std::filesystem::path& bin, const std::filesystem::path& ids);

/// term -> related concept phrases, file-backed as repeated
/// term<TAB>phrase lines (file order preserved per term).
class ConceptExpander {
 public:
  static ConceptExpander load(const std::filesystem::path& path);
  explicit ConceptExpander(std::map<std::string, std::vector<std::string>> entries);

  const std::vector<std::string>* lookup(const std::string& term) const;

 private:
  std::map<std::string, std::vector<std::string>> entries_;
};

/// Query embedding enriched with up to three expansion phrases: the mean of
/// the question embedding and the phrase embeddings, renormalized to unit
/// norm. Phrases are collected per question word in word order, first three
/// distinct ones win. No expansions -> normalized question embedding.
EmbeddingVector expand_query(const std::string& question, const ConceptExpander& expander,
                             const forge::SentenceEmbeddingProvider& embed);

enum class Strategy { generate, retrieve, concept_retrieve };

Strategy strategy_from_string(const std::string& s);
const char* to_string(Strategy s);

struct ImaginationProviders {
  const ImageIndex* index = nullptr;
  const ConceptExpander* expander = nullptr;
  const forge::SentenceEmbeddingProvider* embeddings = nullptr;
  const forge::GenerationManifest* manifest = nullptr;
  const backend::FeatureProvider* features = nullptr;
};

/// Supplies an image for a question. `generate` resolves pre-generated
/// features through the manifest (the generator itself is external);
/// `retrieve`/`concept_retrieve` take the top-1 index hit, differing only in
/// the query embedding. Patch features are attached when the feature
/// provider knows the chosen image.
ImageRef imagine(const std::string& question_id, const std::string& question, Strategy strategy,
                 const ImaginationProviders& providers);

}  // namespace imagine::imagination
