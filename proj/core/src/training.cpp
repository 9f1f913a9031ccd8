#include "imagine/training.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "imagine/math.hpp"
#include "imagine/parallel.hpp"
#include "imagine/scoring.hpp"

namespace imagine::training {

using backend::AdapterParams;
using backend::Backbone;

void TrainConfig::validate() const {
  if (margin <= 0.0) throw ConfigError("training: margin must be > 0");
  if (learning_rate <= 0.0) throw ConfigError("training: learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("training: epochs must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("training: momentum must be in [0, 1)");
  if (!objectives.any()) throw ConfigError("training: no objective enabled");
}

double ranking_loss(std::span<const double> scores, int gold, double margin) {
  const int n = static_cast<int>(scores.size());
  if (n < 2) throw DataError("ranking_loss: need at least 2 candidates");
  if (gold < 0 || gold >= n) throw DataError("ranking_loss: gold index out of range");
  double acc = 0.0;
  const double sy = scores[gold];
  for (int i = 0; i < n; ++i) {
    if (i == gold) continue;
    const double v = margin - sy + scores[i];
    if (v > 0.0) acc += v;
  }
  return acc / n;
}

namespace {

/// dL/ds for the ranking loss; subgradient 0 at the kink.
std::vector<double> ranking_loss_grad(std::span<const double> scores, int gold, double margin) {
  const int n = static_cast<int>(scores.size());
  std::vector<double> g(n, 0.0);
  const double sy = scores[gold];
  const double inv_n = 1.0 / n;
  for (int i = 0; i < n; ++i) {
    if (i == gold) continue;
    if (margin - sy + scores[i] > 0.0) {
      g[i] = inv_n;
      g[gold] -= inv_n;
    }
  }
  return g;
}

struct InstanceLoss {
  double l_lm = 0.0, l_itm = 0.0, l_joint = 0.0, total = 0.0;
};

void check_finite(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite ") + what + " score");
  }
}

InstanceLoss instance_loss(const ScoreSet& s, int gold, const TrainConfig& cfg) {
  // NaNs would otherwise vanish inside the hinge (NaN > 0 is false).
  if (cfg.objectives.need_lm()) check_finite(s.s_lm, "lm");
  if (cfg.objectives.need_itm()) check_finite(s.s_itm, "itm");
  InstanceLoss out;
  if (cfg.objectives.lm) out.l_lm = ranking_loss(s.s_lm, gold, cfg.margin);
  if (cfg.objectives.itm) out.l_itm = ranking_loss(s.s_itm, gold, cfg.margin);
  if (cfg.objectives.joint) out.l_joint = ranking_loss(s.s_joint, gold, cfg.margin);
  out.total = out.l_lm + out.l_itm + out.l_joint;
  return out;
}

scoring::ScoreFlags score_flags_for(const TrainConfig& cfg) {
  return {cfg.objectives.need_lm(), cfg.objectives.need_itm()};
}

LossReport reduce_reports(const std::vector<InstanceLoss>& per_inst) {
  LossReport rep;
  const double inv = per_inst.empty() ? 0.0 : 1.0 / static_cast<double>(per_inst.size());
  for (const auto& il : per_inst) {
    rep.l_lm += il.l_lm * inv;
    rep.l_itm += il.l_itm * inv;
    rep.l_joint += il.l_joint * inv;
    rep.total += il.total * inv;
    rep.per_instance.push_back(il.total);
  }
  return rep;
}

}  // namespace

LossReport batch_loss(std::span<const VQAInstance> batch, const Backbone& bb,
                      const AdapterParams& params, const TrainConfig& cfg) {
  cfg.validate();
  const auto flags = score_flags_for(cfg);
  std::vector<InstanceLoss> per_inst(batch.size());
  parallel_for(batch.size(), cfg.jobs, [&](size_t i) {
    const ScoreSet s = scoring::score_instance(batch[i], bb, params, flags);
    per_inst[i] = instance_loss(s, batch[i].qa.gold_index, cfg);
  });
  return reduce_reports(per_inst);
}

LossReport gradients(std::span<const VQAInstance> batch, const Backbone& bb,
                     const AdapterParams& params, const TrainConfig& cfg, AdapterParams& grads) {
  cfg.validate();
  if (batch.empty()) throw DataError("gradients: empty batch");
  const auto flags = score_flags_for(cfg);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  const bool joint_flows = cfg.objectives.joint && cfg.joint_routing == JointRouting::both;

  std::vector<InstanceLoss> per_inst(batch.size());
  std::vector<AdapterParams> per_grads(batch.size());
  parallel_for(batch.size(), cfg.jobs, [&](size_t idx) {
    const VQAInstance& inst = batch[idx];
    const ScoreSet s = scoring::score_instance(inst, bb, params, flags);
    const int gold = inst.qa.gold_index;
    per_inst[idx] = instance_loss(s, gold, cfg);

    const int n = inst.qa.n();
    std::vector<double> w_lm(n, 0.0), w_itm(n, 0.0);
    if (cfg.objectives.lm) {
      const auto g = ranking_loss_grad(s.s_lm, gold, cfg.margin);
      for (int i = 0; i < n; ++i) w_lm[i] += g[i];
    }
    if (cfg.objectives.itm) {
      const auto g = ranking_loss_grad(s.s_itm, gold, cfg.margin);
      for (int i = 0; i < n; ++i) w_itm[i] += g[i];
    }
    if (joint_flows) {
      const auto g = ranking_loss_grad(s.s_joint, gold, cfg.margin);
      for (int i = 0; i < n; ++i) {
        w_lm[i] += 0.5 * g[i];
        w_itm[i] += 0.5 * g[i];
      }
    }

    AdapterParams g = AdapterParams::zeros_like(params);
    for (int i = 0; i < n; ++i) {
      const auto tokens = bb.tokenizer().tokenize(scoring::candidate_text(inst, i));
      if (w_lm[i] != 0.0) {
        scoring::lm_score_backward(bb, params, tokens, w_lm[i] * inv_batch, g);
      }
      if (w_itm[i] != 0.0) {
        scoring::itm_score_backward(bb, params, tokens, inst.image->features->patches,
                                    w_itm[i] * inv_batch, g);
      }
    }
    per_grads[idx] = std::move(g);
  });

  for (const auto& g : per_grads) grads.axpy(1.0, g);
  return reduce_reports(per_inst);
}

TrainResult train(const std::vector<VQAInstance>& dataset, const std::vector<VQAInstance>& dev,
                  const Backbone& bb, const AdapterParams& initial, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw DataError("train: empty dataset");
  initial.check_compatible(bb.config());

  TrainResult result;
  result.params = initial;
  if (cfg.epochs == 0) return result;

  const auto flags = score_flags_for(cfg);
  const bool dev_uses_joint = flags.use_lm && flags.use_itm;

  auto dev_accuracy = [&](const AdapterParams& p) {
    if (dev.empty()) return 0.0;
    std::vector<int> correct(dev.size(), 0);
    parallel_for(dev.size(), cfg.jobs, [&](size_t i) {
      const ScoreSet s = scoring::score_instance(dev[i], bb, p, flags);
      const std::vector<double>& v = dev_uses_joint ? s.s_joint : (flags.use_lm ? s.s_lm : s.s_itm);
      correct[i] = argmax_lowest(v) == dev[i].qa.gold_index ? 1 : 0;
    });
    long hits = 0;
    for (int c : correct) hits += c;
    return static_cast<double>(hits) / static_cast<double>(dev.size());
  };

  AdapterParams params = initial;
  AdapterParams velocity = AdapterParams::zeros_like(initial);
  double best_acc = -1.0;
  long step = 0;

  std::vector<size_t> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double sum_lm = 0.0, sum_itm = 0.0, sum_joint = 0.0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<VQAInstance> batch;
      batch.reserve(end - start);
      for (size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);

      ++step;
      AdapterParams grads = AdapterParams::zeros_like(params);
      LossReport rep;
      try {
        rep = gradients(batch, bb, params, cfg, grads);
      } catch (const NumericError& e) {
        throw NumericError("train: " + std::string(e.what()) + " at step " + std::to_string(step));
      }
      if (!std::isfinite(rep.total)) {
        throw NumericError("train: non-finite loss at step " + std::to_string(step));
      }
      sum_lm += rep.l_lm * static_cast<double>(batch.size());
      sum_itm += rep.l_itm * static_cast<double>(batch.size());
      sum_joint += rep.l_joint * static_cast<double>(batch.size());

      if (cfg.momentum > 0.0) {
        velocity.scale(cfg.momentum);
        velocity.axpy(-cfg.learning_rate, grads);
        params.axpy(1.0, velocity);
      } else {
        params.axpy(-cfg.learning_rate, grads);
      }
    }

    EpochMetrics m;
    m.epoch = epoch;
    const double inv_n = 1.0 / static_cast<double>(dataset.size());
    m.l_lm = sum_lm * inv_n;
    m.l_itm = sum_itm * inv_n;
    m.l_joint = sum_joint * inv_n;
    m.dev_acc = dev_accuracy(params);
    result.metrics.push_back(m);

    if (m.dev_acc > best_acc) {
      best_acc = m.dev_acc;
      result.params = params;
      result.best_epoch = epoch;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints and metrics

namespace {
constexpr char kCheckpointMagic[8] = {'I', 'M', 'G', 'A', 'D', 'P', 'T', '1'};
}

void save_checkpoint(const std::filesystem::path& path, const backend::EncoderConfig& cfg,
                     const AdapterParams& params) {
  params.check_compatible(cfg);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for write: " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const uint32_t header[4] = {
      static_cast<uint32_t>(cfg.layers),
      static_cast<uint32_t>(cfg.hidden_dim),
      static_cast<uint32_t>(cfg.bottleneck()),
      static_cast<uint32_t>(cfg.visual_dim),
  };
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  backend::visit_params(params, [&](const Mat& m) {
    out.write(reinterpret_cast<const char*>(m.a.data()),
              static_cast<std::streamsize>(m.a.size() * sizeof(double)));
  });
  if (!out) throw DataError("checkpoint write failed: " + path.string());
}

AdapterParams load_checkpoint(const std::filesystem::path& path,
                              const backend::EncoderConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw DataError("bad checkpoint magic: " + path.string());
  }
  uint32_t header[4];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (in.gcount() != sizeof(header)) throw DataError("truncated checkpoint: " + path.string());
  if (header[0] != static_cast<uint32_t>(cfg.layers) ||
      header[1] != static_cast<uint32_t>(cfg.hidden_dim) ||
      header[2] != static_cast<uint32_t>(cfg.bottleneck()) ||
      header[3] != static_cast<uint32_t>(cfg.visual_dim)) {
    throw DataError("checkpoint " + path.string() + " does not match the backend config");
  }
  AdapterParams params = AdapterParams::zeros_like(AdapterParams::init(cfg));
  bool ok = true;
  backend::visit_params(params, [&](Mat& m) {
    in.read(reinterpret_cast<char*>(m.a.data()),
            static_cast<std::streamsize>(m.a.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(m.a.size() * sizeof(double))) ok = false;
  });
  if (!ok) throw DataError("truncated checkpoint: " + path.string());
  return params;
}

void write_metrics(const std::filesystem::path& path, std::span<const EpochMetrics> metrics) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open metrics file for write: " + path.string());
  for (const auto& m : metrics) {
    std::ostringstream line;
    line << "{\"epoch\":" << m.epoch << ",\"l_lm\":" << m.l_lm << ",\"l_itm\":" << m.l_itm
         << ",\"l_joint\":" << m.l_joint << ",\"dev_acc\":" << m.dev_acc << "}";
    out << line.str() << '\n';
  }
  if (!out) throw DataError("metrics write failed: " + path.string());
}

}  // namespace imagine::training
