#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "imagine/types.hpp"

namespace imagine::forge {

struct ForgeConfig {
  double band_low = 0.4;
  double band_high = 0.7;
  double plausibility_threshold = 0.5;
  int n_distractors = 2;
  uint64_t seed = 7;
  std::string caption_separator = ". ";

  // Pipeline plumbing on top of the core knobs above.
  double dev_fraction = 0.1;  // seeded hash split, by image id when present
  std::string sherlock_question_prefix = "What can be inferred? ";
  bool caption_vcr = true;        // prepend captions to VCR-style records
  bool caption_sherlock = false;  // and optionally to Sherlock-style records

  void validate() const;
};

/// relation -> natural-language template with a {head} slot. Rendering
/// substitutes the head event; the tail becomes the gold candidate.
class TemplateTable {
 public:
  static TemplateTable load(const std::filesystem::path& path);  // relation<TAB>template lines
  static TemplateTable builtin();  // default ATOMIC-style relations
  explicit TemplateTable(std::map<std::string, std::string> entries);

  bool has(const std::string& relation) const;
  std::string render(const std::string& relation, const std::string& head) const;

 private:
  std::map<std::string, std::string> entries_;
};

/// text (normalized) -> embedding. Missing entries are errors, not defaults.
class SentenceEmbeddingProvider {
 public:
  static SentenceEmbeddingProvider load(const std::filesystem::path& bin,
                                        const std::filesystem::path& ids);
  explicit SentenceEmbeddingProvider(std::map<std::string, std::vector<float>> entries);

  const std::vector<float>& get(const std::string& text) const;
  bool has(const std::string& text) const;

 private:
  std::map<std::string, std::vector<float>> entries_;  // keyed by normalize_text
};

/// (question, answer) -> plausibility score in [0, 1].
/// File format: question<TAB>answer<TAB>score lines; keys are normalized.
class PlausibilityProvider {
 public:
  static PlausibilityProvider load(const std::filesystem::path& path);
  explicit PlausibilityProvider(std::map<std::pair<std::string, std::string>, double> entries);

  double get(const std::string& question, const std::string& answer) const;

 private:
  std::map<std::pair<std::string, std::string>, double> entries_;
};

/// image id -> caption text. File format: id<TAB>caption lines.
class CaptionProvider {
 public:
  static CaptionProvider load(const std::filesystem::path& path);
  explicit CaptionProvider(std::map<std::string, std::string> entries);

  const std::string& get(const std::string& image_id) const;
  bool has(const std::string& image_id) const;

 private:
  std::map<std::string, std::string> entries_;
};

/// question id -> image id, the contract between the forge/eval pipelines and
/// an external image generator whose outputs were materialized into a
/// feature provider. File format: question_id<TAB>image_id lines.
class GenerationManifest {
 public:
  static GenerationManifest load(const std::filesystem::path& path);
  explicit GenerationManifest(std::map<std::string, std::string> entries);

  const std::string& get(const std::string& question_id) const;
  bool has(const std::string& question_id) const;

 private:
  std::map<std::string, std::string> entries_;
};

/// Replaces PersonX/PersonY/... placeholder names (word-boundary matches of
/// Person[A-Z]) with the bare "Person".
std::string standardize_names(const std::string& text);

/// Keeps the first occurrence per normalized question, stable order.
std::vector<QAPair> dedupe(const std::vector<QAPair>& pairs);

struct DistractorDraw {
  std::vector<std::string> texts;
  int widen_steps = 0;  // symmetric 0.05-band widenings that were needed
  double band_low = 0.0;
  double band_high = 0.0;
};

/// Samples n_distractors pool texts whose cosine similarity to the gold text
/// lies inside [band_low, band_high]. If too few qualify, the band widens
/// symmetrically in 0.05 steps (clamped to [0, 1]) until satisfied; a pool
/// that cannot satisfy the request even at [0, 1] is an error. Sampling is
/// uniform without replacement, seeded by (cfg.seed, gold text).
DistractorDraw sample_distractors(const std::string& gold, const std::vector<std::string>& pool,
                                  const SentenceEmbeddingProvider& embed, const ForgeConfig& cfg);

/// One knowledge triple -> QAPair: question from the relation template, gold
/// candidate = tail, distractors from the answer pool, gold position
/// randomized by a content-derived seed.
QAPair triple_to_qa(const KnowledgeTriple& triple, const TemplateTable& templates,
                    const std::vector<std::string>& answer_pool,
                    const SentenceEmbeddingProvider& embed, const ForgeConfig& cfg);

/// Partition into (kept, removed) by gold-answer plausibility; the boundary
/// score equal to the threshold is kept.
std::pair<std::vector<QAPair>, std::vector<QAPair>> filter_plausible(
    const std::vector<QAPair>& pairs, const PlausibilityProvider& prov, const ForgeConfig& cfg);

/// Prepends the image caption to the question via the stored caption field
/// (which keeps the separator, so effective_question() needs no config).
/// Empty captions skip prefixing; attaching twice is an error.
VQAInstance attach_caption(const VQAInstance& inst, const CaptionProvider& prov,
                           const ForgeConfig& cfg);

struct VcrRecord {
  std::string id;
  std::string question;
  std::vector<std::string> candidates;
  int gold_index = 0;
  std::string image_id;
};

struct SherlockRecord {
  std::string id;
  std::string clue;
  std::string inference;
  std::string image_id;
};

std::vector<KnowledgeTriple> read_triples_jsonl(const std::filesystem::path& path);
std::vector<VcrRecord> read_vcr_jsonl(const std::filesystem::path& path);
std::vector<SherlockRecord> read_sherlock_jsonl(const std::filesystem::path& path);

struct ForgeSources {
  std::vector<KnowledgeTriple> triples;
  std::vector<VcrRecord> vcr;
  std::vector<SherlockRecord> sherlock;
};

struct ForgeProviders {
  const TemplateTable* templates = nullptr;
  const SentenceEmbeddingProvider* embeddings = nullptr;
  const PlausibilityProvider* plausibility = nullptr;  // null disables filtering
  const CaptionProvider* captions = nullptr;
  const GenerationManifest* generation = nullptr;  // null: triple pairs stay imageless
};

/// Per-source dataset statistics in the shape of the released dataset tables
/// (train/dev image and QA-pair counts per source plus totals), with pipeline
/// counters on the side.
struct StatsReport {
  struct Counts {
    int64_t train_pairs = 0, dev_pairs = 0;
    int64_t train_images = 0, dev_images = 0;
    int64_t pairs() const { return train_pairs + dev_pairs; }
    int64_t images() const { return train_images + dev_images; }
  };
  std::map<SourceTag, Counts> per_source;
  int64_t pairs_templated = 0;
  int64_t duplicates_removed = 0;
  int64_t pairs_pre_filter = 0;
  int64_t filtered_removed = 0;
  int64_t widen_events = 0;

  Counts totals() const;
  std::string render_table() const;  // human-readable, row labels per source
  std::string to_json() const;
};

struct ForgeResult {
  std::vector<VQAInstance> instances;
  std::vector<bool> is_dev;  // parallel to instances
  StatsReport stats;
};

/// Full pipeline: template -> standardize -> dedupe -> distractors ->
/// captions -> plausibility filter, with per-stage errors naming the stage.
ForgeResult build_dataset(const ForgeSources& sources, const ForgeProviders& providers,
                          const ForgeConfig& cfg);

}  // namespace imagine::forge
