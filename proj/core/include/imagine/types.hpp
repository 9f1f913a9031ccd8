#pragma once

#include <optional>
#include <string>
#include <vector>

#include "imagine/errors.hpp"
#include "imagine/mat.hpp"

namespace imagine {

enum class SourceTag { AbsAT, VCR, Sherlock, Eval, Synthetic };

const char* to_string(SourceTag tag);
SourceTag source_tag_from_string(const std::string& s);

/// P patch feature vectors of dimension d_v for one image.
struct VisualFeatureSet {
  Mat patches;  // P x d_v

  int patch_count() const { return patches.rows; }
  int dim() const { return patches.cols; }
  void validate() const;
};

/// Global embedding used for retrieval and relevance analysis.
struct EmbeddingVector {
  std::vector<float> values;

  size_t dim() const { return values.size(); }
};

struct ImageRef {
  std::string id;
  std::optional<VisualFeatureSet> features;
  std::optional<EmbeddingVector> embedding;
};

/// A question with n answer candidates, exactly one of which is correct.
struct QAPair {
  std::string id;
  std::string question;
  std::vector<std::string> candidates;
  int gold_index = 0;
  SourceTag source_tag = SourceTag::Synthetic;

  int n() const { return static_cast<int>(candidates.size()); }
  /// Enforces: n >= 2, gold_index in range, candidates pairwise distinct
  /// after normalization.
  void validate() const;
};

struct VQAInstance {
  QAPair qa;
  std::optional<ImageRef> image;
  std::optional<std::string> caption;

  /// Question text as fed to the scorer: "caption<sep>question" when a
  /// caption is attached, the raw question otherwise. The separator is fixed
  /// at attach time by joining it into the stored caption.
  std::string effective_question() const;
};

/// Per-candidate goodness values, higher is better. LM scores are stored as
/// mean token log-probability (so a *less negative* value is better); ITM
/// scores are cosine similarities in [-1, 1].
struct ScoreSet {
  std::vector<double> s_lm;
  std::vector<double> s_itm;
  std::vector<double> s_joint;
  bool has_lm = false;
  bool has_itm = false;

  int n() const;
  bool has_joint() const { return has_lm && has_itm; }
};

struct KnowledgeTriple {
  std::string head;
  std::string relation;
  std::string tail;
};

}  // namespace imagine
