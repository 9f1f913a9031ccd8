#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imagine/types.hpp"

namespace imagine::inference {

/// Which goodness vector feeds the text side of the ensemble. The joint
/// variant softmaxes s_joint instead of s_lm.
enum class TextSource { lm, joint };

struct EnsembleConfig {
  double lambda = 0.5;  // weight of the visual distribution
  TextSource text_source = TextSource::lm;
  std::map<std::string, double> per_task;

  double lambda_for(const std::string& task) const;
  void validate() const;
};

struct Prediction {
  std::vector<double> probs;
  int predicted_index = 0;  // argmax, ties -> lowest index
  std::vector<double> p_lm;   // empty when the LM side is absent
  std::vector<double> p_itm;  // empty when the ITM side is absent
};

/// Stable softmax over a goodness vector; throws on non-finite input or n < 2.
std::vector<double> candidate_softmax(std::span<const double> scores);

/// Convex mix of the two candidate distributions:
///   probs = (1 - lambda) * softmax(text) + lambda * softmax(s_itm)
/// where text is s_lm by default (s_joint with TextSource::joint). The
/// missing side is tolerated only at the endpoints lambda = 0 / 1.
Prediction ensemble_predict(const ScoreSet& scores, double lambda,
                            TextSource text_source = TextSource::lm);

struct ScoredInstance {
  std::string id;
  int gold = 0;
  ScoreSet scores;
};

struct SweepResult {
  double best_lambda = 0.0;
  std::vector<std::pair<double, double>> curve;  // (lambda, accuracy), grid order
};

/// Accuracy over cached ScoreSets for every grid point; no re-scoring.
/// best_lambda is the accuracy argmax, ties -> smaller lambda.
SweepResult sweep_lambda(std::span<const ScoredInstance> dev, std::span<const double> grid);

std::vector<double> default_lambda_grid();  // {0.00, 0.05, ..., 1.00}

struct PredictionRecord {
  std::string id;
  int gold = 0;
  std::optional<int> pred_lm;
  std::optional<int> pred_itm;
  int pred_ensemble = 0;
  std::vector<double> probs;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<PredictionRecord> log;
};

/// Fraction of instances whose ensemble argmax hits the gold index, plus a
/// per-instance log carrying the component predictions for later analysis.
EvalResult evaluate(std::span<const ScoredInstance> dataset, double lambda);

// Prediction log JSONL: {"id", "gold", "pred_lm"?, "pred_itm"?,
// "pred_ensemble", "probs"}; absent components omit their field.
void write_prediction_log(const std::filesystem::path& path,
                          std::span<const PredictionRecord> log);
std::vector<PredictionRecord> read_prediction_log(const std::filesystem::path& path);

}  // namespace imagine::inference
