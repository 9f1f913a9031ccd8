#pragma once

#include <span>
#include <string>
#include <vector>

#include "imagine/backend.hpp"
#include "imagine/types.hpp"

namespace imagine::scoring {

/// Attention over patches plus their attention-weighted pooled vector.
struct ContextualizedVisual {
  std::vector<double> attention;  // length P, probability vector
  std::vector<double> pooled;     // d_v, attention^T * V
};

struct ScoreFlags {
  bool use_lm = true;
  bool use_itm = true;
};

/// Text fed to the scorer for candidate i: effective question, a single
/// space, then the candidate.
std::string candidate_text(const VQAInstance& inst, int candidate);

/// Mean token log-probability (goodness, <= 0). Encoder mode runs one masked
/// forward pass per token (pseudo-log-likelihood); decoder mode runs a single
/// causal pass. Throws on an empty token sequence.
double lm_score(const backend::Backbone& bb, const backend::AdapterParams& params,
                std::span<const int> tokens, backend::Adapter route = backend::Adapter::lm);
double lm_score(const backend::Backbone& bb, const backend::AdapterParams& params,
                std::string_view text, backend::Adapter route = backend::Adapter::lm);

/// Attention-contextualized visual features: projects the text context vector
/// into the visual space, attends over patch rows with a stable softmax, and
/// pools them. a = softmax((W_p^T t) V^T / sqrt(d_v)), C = a^T V.
ContextualizedVisual contextualize(std::span<const double> text_context, const Mat& patches,
                                   const Mat& w_p);

/// Cosine similarity between the projected text vector and the pooled visual
/// vector from contextualize(). Throws if the projected vector has zero norm.
double itm_score(std::span<const double> text_context, const Mat& patches, const Mat& w_p);

double joint_score(double s_lm, double s_itm);

/// Scores every candidate of the instance with the enabled components.
/// Disabled components stay zero with their presence flag cleared; the joint
/// column is populated only when both are enabled.
ScoreSet score_instance(const VQAInstance& inst, const backend::Backbone& bb,
                        const backend::AdapterParams& params, const ScoreFlags& flags);

// Gradient entry points used by the training loop. Each recomputes the
// forward value, accumulates weight * d(score)/d(adapter params) into grads,
// and returns the score.

double lm_score_backward(const backend::Backbone& bb, const backend::AdapterParams& params,
                         std::span<const int> tokens, double weight,
                         backend::AdapterParams& grads);

double itm_score_backward(const backend::Backbone& bb, const backend::AdapterParams& params,
                          std::span<const int> tokens, const Mat& patches, double weight,
                          backend::AdapterParams& grads);

}  // namespace imagine::scoring
