#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dfmed/dualflow.hpp"
#include "dfmed/generator.hpp"
#include "dfmed/params.hpp"

namespace dfmed {

struct TrainConfig {
  double lr{1e-3};
  int batch_size{12};
  int warmup_steps{1000};
  int epochs{10};
  double weight_decay{0.01};
  double grad_clip{1.0};
  std::uint64_t seed{1};

  void validate() const;
};

/// Decoupled-weight-decay Adam with bias-corrected moments.
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// One update over every parameter. Steps with any non-finite gradient are
  /// skipped and counted.
  void step(ParamStore& params, double lr, double weight_decay);
  int skipped_steps() const { return skipped_; }
  long steps_taken() const { return t_; }

 private:
  std::map<std::string, std::vector<double>> m_, v_;
  long t_{0};
  double beta1_, beta2_, eps_;
  int skipped_{0};
};

/// Scales all gradients so their global L2 norm is at most max_norm;
/// returns the pre-clip norm.
double clip_grad_norm(ParamStore& params, double max_norm);

/// Linear warmup to base_lr, then linear decay to zero at max_steps.
double lr_schedule(long step, double base_lr, int warmup_steps, long max_steps);

struct FlowValMetrics {
  double wf1{0.0};
  std::optional<double> r_at_k;
  double combined() const { return 0.5 * (wf1 + r_at_k.value_or(0.0)); }
};

FlowValMetrics evaluate_flow_quick(const FlowModel& model,
                                   const std::vector<TrainingExample>& examples,
                                   const std::array<double, kNumActs>& thresholds);

struct TrainLog {
  std::vector<double> epoch_train_loss;
  std::vector<double> epoch_val_metric;
};

struct FlowCheckpointData {
  std::map<std::string, std::vector<double>> params;
  std::array<double, kNumActs> thresholds;
  long steps{0};
  int best_epoch{0};
  FlowValMetrics best_metrics;
};

/// Shuffled mini-batch AdamW training with per-epoch validation; the best
/// checkpoint by (Weighted-F1 + R@topk)/2 is restored into the model and
/// returned. Throws on loss divergence.
FlowCheckpointData train_flow(FlowModel& model, const std::vector<TrainingExample>& train,
                              const std::vector<TrainingExample>& valid,
                              const TrainConfig& cfg, TrainLog* log = nullptr);

/// Per-act threshold grid search maximizing per-act F1 on the validation
/// set; ties break toward the lower threshold; acts without validation
/// positives fall back to 0.5 (with a warning).
std::array<double, kNumActs> calibrate_act_thresholds(
    const FlowModel& model, const std::vector<TrainingExample>& valid,
    double grid_step = 0.05);

/// Grid search over pre-computed probabilities (the core of the above).
std::array<double, kNumActs> calibrate_thresholds_from_probs(
    const std::vector<std::array<double, kNumActs>>& probs, const std::vector<ActSet>& gold,
    double grid_step = 0.05);

/// Frozen-flow guidance for generator training (gold acts) or evaluation
/// (predicted acts); entities are always the flow's ranked top-k.
std::vector<Guidance> precompute_guidance(const FlowModel& flow,
                                          const std::vector<TrainingExample>& examples,
                                          bool gold_acts);

struct GenCheckpointData {
  std::map<std::string, std::vector<double>> params;
  long steps{0};
  int best_epoch{0};
  double best_val_bleu4{0.0};
};

/// Teacher-forced NLL training; checkpoint selection by validation BLEU-4
/// (decode over at most val_decode_limit validation examples per epoch).
GenCheckpointData train_generator(GenModel& model,
                                  const std::vector<TrainingExample>& train,
                                  const std::vector<Guidance>& train_guidance,
                                  const std::vector<TrainingExample>& valid,
                                  const std::vector<Guidance>& valid_guidance,
                                  const TrainConfig& cfg, TrainLog* log = nullptr,
                                  int val_decode_limit = 200);

}  // namespace dfmed
