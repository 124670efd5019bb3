#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dfmed/checkpoint.hpp"
#include "dfmed/dualflow.hpp"
#include "dfmed/generator.hpp"
#include "dfmed/metrics.hpp"
#include "dfmed/synth.hpp"
#include "dfmed/training.hpp"

namespace dfmed {

struct CorpusSplit {
  Corpus train, valid, test;
};

/// Deterministic index split (no shuffling): the first train_frac of
/// dialogues, then valid_frac, then the remainder.
CorpusSplit split_corpus(const Corpus& corpus, double train_frac = 0.8,
                         double valid_frac = 0.1);

struct PredictionRecord {
  std::string id;
  int t{1};
  std::vector<std::string> acts;      // predicted act names
  std::vector<std::string> entities;  // ranked predicted entity names
  std::vector<std::string> hypothesis;
  std::vector<std::string> reference;
};

std::string prediction_to_json_line(const PredictionRecord& p);

struct EvalOutput {
  EvalReport report;
  std::vector<PredictionRecord> predictions;
};

/// Flow metrics (Weighted-F1, R@topk, analytic baselines) and, when a
/// generator is given, decode-based generation metrics with the inference
/// contract: predicted acts + the flow's ranked top-k entities as guidance.
EvalOutput evaluate_pipeline(const FlowModel& flow, const GenModel* gen,
                             const std::vector<TrainingExample>& test,
                             const KnowledgeGraph& kg);

/// One flat key space covering TrainConfig, FlowConfig, GenConfig, and
/// SynthConfig; the config file is a flat JSON object of these fields and
/// every field has a CLI override.
struct AppConfig {
  // training
  double lr{1e-3};
  int batch_size{12};
  int warmup_steps{1000};
  int epochs{10};
  double weight_decay{0.01};
  double grad_clip{1.0};
  std::uint64_t seed{1};
  // flow model
  int dim{64};
  int gat_heads{2};
  int ctx_layers{1};
  int ctx_heads{4};
  int max_ctx{72};
  int negatives{32};
  int topk{20};
  double lambda_e{1.0};
  double lambda_a{0.05};
  bool act_flow{true};
  bool entity_flow{true};
  bool interweave_e2a{true};
  bool interweave_a2e{true};
  // generator
  int gen_layers{2};
  int gen_heads{4};
  int gen_max_ctx{64};
  int max_gen_len{32};
  int beam{1};
  bool use_guidance{true};
  // calibration
  double threshold_grid{0.05};
  // synthetic corpus
  int n_entities{200};
  int kg_degree{4};
  int n_dialogues{2000};
  int turns_min{5};
  int turns_max{8};
  double p_hop{0.9};
  int synth_vocab{160};
  // splits
  double train_frac{0.8};
  double valid_frac{0.1};

  FlowConfig flow_config() const;
  GenConfig gen_config() const;
  TrainConfig train_config() const;
  SynthConfig synth_config() const;

  /// Merge fields present in a flat JSON object into this config.
  void merge_json_file(const std::string& path);
};

}  // namespace dfmed
