#pragma once

#include <span>
#include <utility>
#include <vector>

#include "imagine/inference.hpp"
#include "imagine/scoring.hpp"
#include "imagine/types.hpp"

namespace imagine::analysis {

struct RelevanceReport {
  double mean = 0.0;
  std::vector<double> per_pair;
};

/// Image-text relevance: 100 * max(0, cosine) per (text, image) embedding
/// pair, plus the mean. The clamp keeps anti-aligned pairs at zero.
RelevanceReport relevance(
    std::span<const std::pair<std::vector<float>, std::vector<float>>> pairs);

struct ImpactReport {
  double helpful_pct = 0.0;  // LM wrong, ensemble right
  double harmful_pct = 0.0;  // LM right, ensemble wrong
  int64_t total = 0;
};

/// Helpful/harmful imagination ratios over the full log, as percentages.
/// Requires pred_lm and pred_ensemble on every record.
ImpactReport imagination_impact(std::span<const inference::PredictionRecord> log);

/// Patch indices by ascending attention weight; ties -> lower index first.
std::vector<int> rank_patches(const scoring::ContextualizedVisual& cv);

/// Default erase count: 100 when P > 100, else floor(P / 2).
int default_mask_count(int patch_count);

/// Zeroes the k lowest-attention patch rows, leaving the rest untouched.
VisualFeatureSet mask_lowest(const VisualFeatureSet& features,
                             const scoring::ContextualizedVisual& cv, int k);

}  // namespace imagine::analysis
