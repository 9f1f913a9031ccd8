#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "imagine/backend.hpp"
#include "imagine/types.hpp"

namespace imagine::training {

struct ObjectiveFlags {
  bool lm = true;
  bool itm = true;
  bool joint = true;

  bool any() const { return lm || itm || joint; }
  bool need_lm() const { return lm || joint; }
  bool need_itm() const { return itm || joint; }
};

/// Gradient routing for the joint-score loss: `both` backpropagates it into
/// both adapters; `none` keeps it in the reported loss but stops its
/// gradients entirely (the stricter per-objective separation).
enum class JointRouting { both, none };

struct TrainConfig {
  double margin = 1.0;  // eta
  double learning_rate = 1e-5;
  int batch_size = 32;
  int epochs = 2;
  ObjectiveFlags objectives;
  uint64_t seed = 7;
  double momentum = 0.0;
  JointRouting joint_routing = JointRouting::both;
  int jobs = 1;

  void validate() const;
};

struct LossReport {
  double l_lm = 0.0;
  double l_itm = 0.0;
  double l_joint = 0.0;
  double total = 0.0;
  std::vector<double> per_instance;  // enabled-loss sum per instance
};

/// Marginal ranking loss over a goodness vector:
///   (1/n) * sum_{i != y} max(0, margin - s[y] + s[i])
/// Zero iff the gold score clears every other score by the margin. The
/// subgradient at the hinge kink is 0, so margin-satisfied batches are exact
/// fixed points of the optimizer.
double ranking_loss(std::span<const double> scores, int gold, double margin);

/// Mean of the enabled ranking losses over the batch.
LossReport batch_loss(std::span<const VQAInstance> batch, const backend::Backbone& bb,
                      const backend::AdapterParams& params, const TrainConfig& cfg);

/// batch_loss plus adapter gradients, accumulated into `grads` (which must be
/// zero-initialized with the right shapes). Routing: the LM loss touches only
/// the LM adapter, the ITM loss only the ITM adapter (including W_p), and the
/// joint loss follows cfg.joint_routing.
LossReport gradients(std::span<const VQAInstance> batch, const backend::Backbone& bb,
                     const backend::AdapterParams& params, const TrainConfig& cfg,
                     backend::AdapterParams& grads);

struct EpochMetrics {
  int epoch = 0;
  double l_lm = 0.0;
  double l_itm = 0.0;
  double l_joint = 0.0;
  double dev_acc = 0.0;
};

struct TrainResult {
  backend::AdapterParams params;  // best dev epoch (initial params when epochs == 0)
  std::vector<EpochMetrics> metrics;
  int best_epoch = 0;  // 1-based; 0 when no epoch ran
};

/// Deterministic minibatch gradient descent (optional momentum) over the
/// adapter parameters. Shuffling, batching and reduction order are all fixed
/// by cfg.seed. Throws NumericError naming the step if the loss goes
/// non-finite.
TrainResult train(const std::vector<VQAInstance>& dataset, const std::vector<VQAInstance>& dev,
                  const backend::Backbone& bb, const backend::AdapterParams& initial,
                  const TrainConfig& cfg);

// Checkpoint file: 8-byte magic "IMGADPT1", then u32 layers, u32 hidden_dim,
// u32 bottleneck, u32 visual_dim (little-endian), then every adapter matrix
// as little-endian float64 in visit_params order.
void save_checkpoint(const std::filesystem::path& path, const backend::EncoderConfig& cfg,
                     const backend::AdapterParams& params);
backend::AdapterParams load_checkpoint(const std::filesystem::path& path,
                                       const backend::EncoderConfig& cfg);

/// Metrics as line-delimited JSON records (epoch, l_lm, l_itm, l_joint, dev_acc).
void write_metrics(const std::filesystem::path& path, std::span<const EpochMetrics> metrics);

}  // namespace imagine::training
