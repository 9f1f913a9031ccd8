#include "imagine/imagination.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "imagine/math.hpp"
#include "imagine/text.hpp"

namespace imagine::imagination {

ImageIndex build_index(const std::vector<EmbeddingRecord>& records,
                       const std::string& built_from) {
  if (records.empty()) throw DataError("build_index: no records");
  ImageIndex index;
  index.dim_ = static_cast<int>(records[0].values.size());
  index.built_from_ = built_from;
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    if (static_cast<int>(r.values.size()) != index.dim_) {
      throw DataError("build_index: dimension mismatch for id " + r.id + " (" +
                      std::to_string(r.values.size()) + " vs " + std::to_string(index.dim_) + ")");
    }
    if (!seen.insert(r.id).second) throw DataError("build_index: duplicate id " + r.id);
    const double n = norm(std::span<const float>(r.values));
    if (n == 0.0) throw DataError("build_index: zero-norm embedding for id " + r.id);
    if (!std::isfinite(n)) throw NumericError("build_index: non-finite embedding for id " + r.id);
    index.ids_.push_back(r.id);
    index.data_.insert(index.data_.end(), r.values.begin(), r.values.end());
    index.norms_.push_back(n);
  }
  return index;
}

uint64_t ImageIndex::content_hash() const {
  uint64_t h = fnv1a_bytes(data_.data(), data_.size() * sizeof(float));
  for (const auto& id : ids_) h = fnv1a_bytes(id.data(), id.size(), h);
  return h;
}

std::vector<Hit> retrieve(std::span<const float> query, const ImageIndex& index, int k) {
  if (k < 1) throw DataError("retrieve: k must be >= 1");
  if (static_cast<int>(query.size()) != index.dim()) {
    throw DataError("retrieve: query dim " + std::to_string(query.size()) +
                    " does not match index dim " + std::to_string(index.dim()));
  }
  const double qn = norm(query);
  if (qn == 0.0) throw NumericError("retrieve: zero-norm query");

  const size_t n = index.size();
  std::vector<std::pair<double, size_t>> sims(n);
  for (size_t i = 0; i < n; ++i) {
    sims[i] = {dot(query, index.row(i)) / (qn * index.norms()[i]), i};
  }
  const size_t kk = std::min(static_cast<size_t>(k), n);
  auto better = [](const std::pair<double, size_t>& a, const std::pair<double, size_t>& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;  // tie -> lower row index
  };
  std::partial_sort(sims.begin(), sims.begin() + static_cast<long>(kk), sims.end(), better);

  std::vector<Hit> hits;
  hits.reserve(kk);
  for (size_t i = 0; i < kk; ++i) {
    hits.push_back({index.ids()[sims[i].second], sims[i].first, sims[i].second});
  }
  return hits;
}

std::vector<Hit> retrieve(const EmbeddingVector& query, const ImageIndex& index, int k) {
  return retrieve(std::span<const float>(query.values), index, k);
}

void save_index(const ImageIndex& index, const std::filesystem::path& bin,
                const std::filesystem::path& ids) {
  std::vector<EmbeddingRecord> records;
  records.reserve(index.size());
  for (size_t i = 0; i < index.size(); ++i) {
    auto row = index.row(i);
    records.push_back({index.ids()[i], std::vector<float>(row.begin(), row.end())});
  }
  write_embeddings(bin, ids, records);
}

ImageIndex load_index(const std::filesystem::path& bin, const std::filesystem::path& ids) {
  return build_index(to_records(read_embeddings(bin, ids)), bin.string());
}

ConceptExpander::ConceptExpander(std::map<std::string, std::vector<std::string>> entries)
    : entries_(std::move(entries)) {}

ConceptExpander ConceptExpander::load(const std::filesystem::path& path) {
  std::map<std::string, std::vector<std::string>> entries;
  size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected term<TAB>phrase");
    }
    entries[normalize_text(line.substr(0, tab))].push_back(line.substr(tab + 1));
  }
  return ConceptExpander(std::move(entries));
}

const std::vector<std::string>* ConceptExpander::lookup(const std::string& term) const {
  auto it = entries_.find(normalize_text(term));
  return it == entries_.end() ? nullptr : &it->second;
}

EmbeddingVector expand_query(const std::string& question, const ConceptExpander& expander,
                             const forge::SentenceEmbeddingProvider& embed) {
  constexpr size_t kMaxExpansions = 3;
  std::vector<std::string> expansions;
  std::unordered_set<std::string> seen;
  for (const auto& word : split_words(normalize_text(question))) {
    const auto* phrases = expander.lookup(word);
    if (phrases == nullptr) continue;
    for (const auto& p : *phrases) {
      if (expansions.size() >= kMaxExpansions) break;
      if (seen.insert(normalize_text(p)).second) expansions.push_back(p);
    }
    if (expansions.size() >= kMaxExpansions) break;
  }

  const std::vector<float>& q = embed.get(question);
  std::vector<double> mean(q.begin(), q.end());
  for (const auto& p : expansions) {
    const std::vector<float>& e = embed.get(p);
    if (e.size() != mean.size()) {
      throw DataError("expand_query: expansion embedding dim mismatch for \"" + p + "\"");
    }
    for (size_t i = 0; i < mean.size(); ++i) mean[i] += e[i];
  }
  const double inv = 1.0 / static_cast<double>(expansions.size() + 1);
  for (auto& v : mean) v *= inv;
  const double n = norm(std::span<const double>(mean));
  if (n == 0.0) throw NumericError("expand_query: zero-norm expanded query");
  EmbeddingVector out;
  out.values.resize(mean.size());
  for (size_t i = 0; i < mean.size(); ++i) out.values[i] = static_cast<float>(mean[i] / n);
  return out;
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "generate") return Strategy::generate;
  if (s == "retrieve") return Strategy::retrieve;
  if (s == "concept_retrieve") return Strategy::concept_retrieve;
  throw ConfigError("unknown imagination strategy: " + s);
}

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::generate: return "generate";
    case Strategy::retrieve: return "retrieve";
    case Strategy::concept_retrieve: return "concept_retrieve";
  }
  return "?";
}

ImageRef imagine(const std::string& question_id, const std::string& question, Strategy strategy,
                 const ImaginationProviders& providers) {
  ImageRef ref;
  if (strategy == Strategy::generate) {
    if (providers.manifest == nullptr) {
      throw ConfigError("imagine: generate strategy requires a generation manifest");
    }
    if (providers.features == nullptr) {
      throw ConfigError("imagine: generate strategy requires a feature provider");
    }
    ref.id = providers.manifest->get(question_id);
  } else {
    if (providers.index == nullptr) {
      throw ConfigError("imagine: retrieval strategies require an image index");
    }
    if (providers.embeddings == nullptr) {
      throw ConfigError("imagine: retrieval strategies require a sentence embedding provider");
    }
    EmbeddingVector query;
    if (strategy == Strategy::concept_retrieve) {
      if (providers.expander == nullptr) {
        throw ConfigError("imagine: concept_retrieve requires a concept expander");
      }
      query = expand_query(question, *providers.expander, *providers.embeddings);
    } else {
      query.values = providers.embeddings->get(question);
    }
    const auto hits = retrieve(query, *providers.index, 1);
    ref.id = hits[0].id;
    auto row = providers.index->row(hits[0].row);
    ref.embedding = EmbeddingVector{std::vector<float>(row.begin(), row.end())};
  }
  if (providers.features != nullptr) {
    if (strategy == Strategy::generate || providers.features->has(ref.id)) {
      ref.features = providers.features->get(ref.id);
    }
  }
  return ref;
}

}  // namespace imagine::imagination
