#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dfmed/corpus.hpp"
#include "dfmed/encoder.hpp"
#include "dfmed/params.hpp"
#include "dfmed/tensor.hpp"
#include "dfmed/vocab.hpp"

namespace dfmed {

struct GenConfig {
  int dim{64};
  int layers{2};  // encoder depth = decoder depth
  int heads{4};
  int max_ctx{64};      // history window, left-truncated
  int max_gen_len{32};  // decode cap
  int beam{1};          // 1 = greedy
  bool use_guidance{true};

  void validate() const;
};

/// Encoder input for the guidance stream: predicted (or gold) acts followed
/// by the ranked entity selection.
struct Guidance {
  ActSet acts;
  std::vector<int> entities;  // ranked entity ids
};

struct GenDiagnostics {
  std::vector<double> avg_gate_per_layer;
};

class GenModel {
 public:
  GenModel(const GenConfig& cfg, const Vocab& vocab, const KnowledgeGraph& kg,
           std::uint64_t init_seed);

  /// Act tokens in canonical order, then entity name tokens in rank order.
  std::vector<int> guidance_token_ids(const Guidance& g) const;
  std::vector<int> history_window(const TrainingExample& ex) const;

  /// Both streams run through the one shared encoder.
  Tensor encoder_states(const std::vector<int>& ids) const;  // bidirectional
  Tensor encode_guidance(const Guidance& g) const;           // H^ea
  Tensor encode_history(const TrainingExample& ex) const;    // H^c

  /// Per-layer encoder key/value projections, computed once per example.
  struct EncCache {
    Tensor Hea, Hc;
    std::vector<Tensor> cK, cV, eK, eV;
  };
  EncCache make_cache(const Tensor& Hea, const Tensor& Hc) const;

  /// Teacher-forced next-token logits for the [BOS]-prefixed input, [T, V].
  Tensor decoder_logits(const std::vector<int>& input_ids, const EncCache& cache,
                        GenDiagnostics* diag = nullptr) const;

  /// Mean NLL per target token (target = D_t tokens + [EOS]).
  Tensor loss(const TrainingExample& ex, const Guidance& g,
              GenDiagnostics* diag = nullptr) const;

  /// Greedy or beam decode; deterministic; stops at [EOS] or max_gen_len.
  std::vector<int> decode(const TrainingExample& ex, const Guidance& g,
                          GenDiagnostics* diag = nullptr) const;

  const GenConfig& config() const { return cfg_; }
  void set_use_guidance(bool on) { cfg_.use_guidance = on; }
  const Vocab& vocab() const { return vocab_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

 private:
  struct DecLayer {
    Tensor Wq, Wk, Wv, Wo;  // causal self-attention
    Tensor ln1_g, ln1_b;
    Tensor cWq, cWk, cWv;  // cross-attention over the history states
    Tensor eWq, eWk, eWv;  // cross-attention over the guidance states
    Tensor gate_W;         // gate from the context branch
    Tensor ln2_g, ln2_b;
    FfnParams ffn;
    Tensor ln3_g, ln3_b;
  };

  GenConfig cfg_;
  Vocab vocab_;
  std::vector<std::vector<int>> entity_tokens_;
  ParamStore params_;
  Tensor tok_embed_;
  TransformerEncoder enc_;
  std::vector<DecLayer> dec_;
  Tensor out_W_, out_b_;
};

}  // namespace dfmed
