#include "imagine/analysis.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

#include "imagine/math.hpp"

namespace imagine::analysis {

RelevanceReport relevance(
    std::span<const std::pair<std::vector<float>, std::vector<float>>> pairs) {
  if (pairs.empty()) throw DataError("relevance: empty input");
  RelevanceReport rep;
  for (const auto& [text, image] : pairs) {
    const double cos = cosine_similarity(text, image);
    rep.per_pair.push_back(100.0 * std::max(0.0, cos));
  }
  rep.mean = std::accumulate(rep.per_pair.begin(), rep.per_pair.end(), 0.0) /
             static_cast<double>(rep.per_pair.size());
  return rep;
}

ImpactReport imagination_impact(std::span<const inference::PredictionRecord> log) {
  if (log.empty()) throw DataError("imagination_impact: empty log");
  int64_t helpful = 0;
  int64_t harmful = 0;
  for (const auto& rec : log) {
    if (!rec.pred_lm) {
      throw DataError("imagination_impact: record " + rec.id + " is missing pred_lm");
    }
    const bool lm_right = *rec.pred_lm == rec.gold;
    const bool ens_right = rec.pred_ensemble == rec.gold;
    if (!lm_right && ens_right) ++helpful;
    if (lm_right && !ens_right) ++harmful;
  }
  ImpactReport rep;
  rep.total = static_cast<int64_t>(log.size());
  rep.helpful_pct = 100.0 * static_cast<double>(helpful) / static_cast<double>(rep.total);
  rep.harmful_pct = 100.0 * static_cast<double>(harmful) / static_cast<double>(rep.total);
  return rep;
}

std::vector<int> rank_patches(const scoring::ContextualizedVisual& cv) {
  std::vector<int> order(cv.attention.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return cv.attention[a] < cv.attention[b]; });
  return order;
}

int default_mask_count(int patch_count) {
  return patch_count > 100 ? 100 : patch_count / 2;
}

VisualFeatureSet mask_lowest(const VisualFeatureSet& features,
                             const scoring::ContextualizedVisual& cv, int k) {
  const int P = features.patch_count();
  if (static_cast<int>(cv.attention.size()) != P) {
    throw DataError("mask_lowest: attention length does not match patch count");
  }
  if (k < 0 || k > P) {
    throw DataError("mask_lowest: k = " + std::to_string(k) + " outside [0, " + std::to_string(P) +
                    "]");
  }
  VisualFeatureSet out = features;
  const auto order = rank_patches(cv);
  for (int i = 0; i < k; ++i) {
    double* row = out.patches.row(order[i]);
    std::memset(row, 0, sizeof(double) * static_cast<size_t>(out.patches.cols));
  }
  return out;
}

}  // namespace imagine::analysis
