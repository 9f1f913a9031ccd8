#include "imagine/inference.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "imagine/math.hpp"
#include "imagine/records.hpp"

namespace imagine::inference {

double EnsembleConfig::lambda_for(const std::string& task) const {
  auto it = per_task.find(task);
  return it == per_task.end() ? lambda : it->second;
}

void EnsembleConfig::validate() const {
  auto check = [](double l) {
    if (!(l >= 0.0 && l <= 1.0)) {
      throw ConfigError("ensemble lambda must be in [0, 1], got " + std::to_string(l));
    }
  };
  check(lambda);
  for (const auto& [task, l] : per_task) check(l);
}

std::vector<double> candidate_softmax(std::span<const double> scores) {
  if (scores.size() < 2) throw DataError("candidate_softmax: need at least 2 candidates");
  return softmax(scores);
}

Prediction ensemble_predict(const ScoreSet& scores, double lambda, TextSource text_source) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("ensemble_predict: lambda must be in [0, 1], got " + std::to_string(lambda));
  }
  const bool need_lm = lambda < 1.0;
  const bool need_itm = lambda > 0.0;
  const bool text_has = text_source == TextSource::lm ? scores.has_lm : scores.has_joint();
  if (need_lm && !text_has) {
    throw DataError("ensemble_predict: text scores absent but lambda < 1");
  }
  if (need_itm && !scores.has_itm) {
    throw DataError("ensemble_predict: ITM scores absent but lambda > 0");
  }

  Prediction out;
  if (text_source == TextSource::lm) {
    if (scores.has_lm) out.p_lm = candidate_softmax(scores.s_lm);
  } else if (scores.has_joint()) {
    out.p_lm = candidate_softmax(scores.s_joint);
  }
  if (scores.has_itm) out.p_itm = candidate_softmax(scores.s_itm);

  const size_t n = need_lm ? out.p_lm.size() : out.p_itm.size();
  if (need_lm && need_itm && out.p_lm.size() != out.p_itm.size()) {
    throw DataError("ensemble_predict: component length mismatch");
  }
  out.probs.assign(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    double p = 0.0;
    if (need_lm) p += (1.0 - lambda) * out.p_lm[i];
    if (need_itm) p += lambda * out.p_itm[i];
    out.probs[i] = p;
  }
  out.predicted_index = argmax_lowest(out.probs);
  return out;
}

SweepResult sweep_lambda(std::span<const ScoredInstance> dev, std::span<const double> grid) {
  if (dev.empty()) throw DataError("sweep_lambda: empty dev set");
  if (grid.empty()) throw DataError("sweep_lambda: empty grid");
  SweepResult result;
  double best_acc = -1.0;
  bool first = true;
  for (double lambda : grid) {
    long hits = 0;
    for (const auto& inst : dev) {
      if (ensemble_predict(inst.scores, lambda).predicted_index == inst.gold) ++hits;
    }
    const double acc = static_cast<double>(hits) / static_cast<double>(dev.size());
    result.curve.emplace_back(lambda, acc);
    if (first || acc > best_acc || (acc == best_acc && lambda < result.best_lambda)) {
      best_acc = acc;
      result.best_lambda = lambda;
      first = false;
    }
  }
  return result;
}

std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(static_cast<double>(i) * 0.05);
  return grid;
}

EvalResult evaluate(std::span<const ScoredInstance> dataset, double lambda) {
  if (dataset.empty()) throw DataError("empty evaluation set");
  EvalResult result;
  long hits = 0;
  for (const auto& inst : dataset) {
    const Prediction pred = ensemble_predict(inst.scores, lambda);
    PredictionRecord rec;
    rec.id = inst.id;
    rec.gold = inst.gold;
    if (inst.scores.has_lm) rec.pred_lm = argmax_lowest(inst.scores.s_lm);
    if (inst.scores.has_itm) rec.pred_itm = argmax_lowest(inst.scores.s_itm);
    rec.pred_ensemble = pred.predicted_index;
    rec.probs = pred.probs;
    if (rec.pred_ensemble == rec.gold) ++hits;
    result.log.push_back(std::move(rec));
  }
  result.accuracy = static_cast<double>(hits) / static_cast<double>(dataset.size());
  return result;
}

void write_prediction_log(const std::filesystem::path& path,
                          std::span<const PredictionRecord> log) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open prediction log for write: " + path.string());
  for (const auto& rec : log) {
    nlohmann::json j;
    j["id"] = rec.id;
    j["gold"] = rec.gold;
    if (rec.pred_lm) j["pred_lm"] = *rec.pred_lm;
    if (rec.pred_itm) j["pred_itm"] = *rec.pred_itm;
    j["pred_ensemble"] = rec.pred_ensemble;
    j["probs"] = rec.probs;
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("prediction log write failed: " + path.string());
}

std::vector<PredictionRecord> read_prediction_log(const std::filesystem::path& path) {
  std::vector<PredictionRecord> out;
  size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PredictionRecord rec;
      rec.id = j.at("id").get<std::string>();
      rec.gold = j.at("gold").get<int>();
      if (j.contains("pred_lm")) rec.pred_lm = j.at("pred_lm").get<int>();
      if (j.contains("pred_itm")) rec.pred_itm = j.at("pred_itm").get<int>();
      rec.pred_ensemble = j.at("pred_ensemble").get<int>();
      if (j.contains("probs")) rec.probs = j.at("probs").get<std::vector<double>>();
      out.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace imagine::inference
