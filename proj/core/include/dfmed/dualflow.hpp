#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dfmed/corpus.hpp"
#include "dfmed/encoder.hpp"
#include "dfmed/params.hpp"
#include "dfmed/tensor.hpp"
#include "dfmed/vocab.hpp"

namespace dfmed {

struct FlowConfig {
  int dim{64};        // d
  int gat_heads{2};   // K, d divisible by K
  int ctx_layers{1};  // context self-attention depth
  int ctx_heads{4};
  int max_ctx{72};    // context window, left-truncated
  int negatives{32};  // sampled negatives per example
  int topk{20};
  double lambda_e{1.0};
  double lambda_a{0.05};

  // ablation switches
  bool act_flow{true};     // off: act state degenerates to the context state
  bool entity_flow{true};  // off: entity state degenerates to the context state
  bool interweave_e2a{true};  // entity side attends to act history
  bool interweave_a2e{true};  // act side attends to entity graphs
  // with both interweave flags off the whole component is removed and the
  // GRUs consume pure embeddings padded with zeros

  bool interweaving_off() const { return !interweave_e2a && !interweave_a2e; }
  void validate() const;
};

/// Per-turn intermediates, kept for tests and the inspect command.
struct FlowTrace {
  std::vector<int> cum_nodes;      // G_{<=t} node ids, sorted
  Tensor node_embeddings;          // GAT outputs h^e, [N,d]
  std::vector<Tensor> ctx_states;  // S^c_k, [1,d]
  std::vector<Tensor> graph_pool;  // mean-pooled graph embedding per turn
  std::vector<Tensor> act_pool;    // mean-pooled act embedding per turn
  std::vector<Tensor> entity_input;  // GRU inputs [1,3d]
  std::vector<Tensor> act_input;
};

struct FlowForward {
  std::vector<int> candidates;  // pool G¹_{<=t}
  std::vector<double> scores;   // aligned with candidates
  Tensor scores_t;              // [1,C], undefined when the pool is empty
  std::vector<int> topk_entities;
  Tensor act_logits;  // [1,7]
  std::array<double, kNumActs> act_probs{};
  ActSet predicted_acts;
  Tensor entity_state;  // S^e_t
  Tensor act_state;     // S^a_t
  FlowTrace trace;
};

struct FlowLoss {
  Tensor total;
  double entity_nll{0.0};
  double act_bce{0.0};
  bool has_entity_term{false};
};

/// Thresholded multi-label decision with argmax fallback so the predicted
/// set is never empty.
ActSet acts_from_probs(const std::array<double, kNumActs>& probs,
                       const std::array<double, kNumActs>& thresholds);

class FlowModel {
 public:
  FlowModel(const FlowConfig& cfg, const Vocab& vocab, const KnowledgeGraph& kg,
            std::uint64_t init_seed);

  FlowForward forward(const TrainingExample& ex) const;
  FlowLoss loss(const TrainingExample& ex, Rng& negative_rng) const;

  // building blocks, exposed for verification
  Tensor encoder_states(const std::vector<int>& ids) const;  // causal, [L,d]
  std::vector<Tensor> context_states(const TrainingExample& ex) const;
  Tensor embed_entity(int entity_id) const;                        // raw h^{e0}
  Tensor raw_entity_embeddings(const std::vector<int>& ids) const; // [n,d]
  Tensor gat(const std::vector<int>& nodes,
             const std::vector<std::pair<int, int>>& edges, const Tensor& raw) const;

  const FlowConfig& config() const { return cfg_; }
  /// Inference-time ablation overrides (parameters stay untouched).
  void set_ablations(bool act, bool entity, bool e2a, bool a2e) {
    cfg_.act_flow = act;
    cfg_.entity_flow = entity;
    cfg_.interweave_e2a = e2a;
    cfg_.interweave_a2e = a2e;
  }
  const Vocab& vocab() const { return vocab_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::array<double, kNumActs>& thresholds() { return thresholds_; }
  const std::array<double, kNumActs>& thresholds() const { return thresholds_; }
  int entity_count() const { return static_cast<int>(entity_tokens_.size()); }

 private:
  struct GatHead {
    Tensor W, a_src, a_dst;
  };
  struct CaSite {
    Tensor Wq, Wk, Wv;
  };

  Tensor ca(const CaSite& site, const Tensor& query_vec, const Tensor& keys) const;

  FlowConfig cfg_;
  Vocab vocab_;
  std::vector<std::vector<int>> entity_tokens_;  // name token ids per entity
  ParamStore params_;
  TransformerEncoder ctx_;
  Tensor tok_embed_, act_embed_, act_query_;
  std::vector<GatHead> gat_;
  CaSite ec_, ea_, ac_, ae_;
  GruParams gru_e_, gru_a_;
  Tensor act_W_, act_b_;
  std::array<double, kNumActs> thresholds_;
};

}  // namespace dfmed
