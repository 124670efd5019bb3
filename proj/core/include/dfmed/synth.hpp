#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dfmed/corpus.hpp"
#include "dfmed/dialogue.hpp"
#include "dfmed/kg.hpp"

namespace dfmed {

/// Markov grammar over act sets for doctor turns. Rows of `trans` sum to 1;
/// `close_state` (when >= 0) is forced on the final turn of each dialogue.
struct ActGrammar {
  std::vector<ActSet> states;
  std::vector<double> initial;
  std::vector<std::vector<double>> trans;
  int close_state{-1};

  void validate() const;
};

/// Consultation-shaped default: open with {Chitchat, Inquire}, an
/// inquire/inform middle, a diagnosis followed by prescription or test,
/// and an entity-free closing turn.
ActGrammar default_act_grammar();

/// Memoryless grammar drawing one act per turn with the given occurrence
/// probabilities; used to shape empirical act frequencies to a target.
ActGrammar iid_act_grammar(const std::array<double, kNumActs>& probs);

struct SynthConfig {
  int n_entities{200};
  int kg_degree{4};
  int n_dialogues{2000};
  int turns_min{5};  // rounds (P,D pairs) per dialogue
  int turns_max{8};
  /// probability that a newly mentioned entity is drawn one-hop from the
  /// planted source set (otherwise uniform over all entities)
  double p_hop{0.9};
  ActGrammar grammar = default_act_grammar();
  /// size of the token inventory entity names are assembled from
  int vocab_size{160};
  std::uint64_t seed{7};

  void validate() const;
};

struct SynthOutput {
  KnowledgeGraph kg;
  Corpus corpus;
  /// Planted-dynamics record (grammar, hop rule, config) for test assertions.
  std::string oracle_json;
};

/// Deterministic under (config.seed); per-dialogue RNG streams are derived
/// from (seed, dialogue index) so the corpus does not depend on generation
/// order.
SynthOutput generate_synthetic(const SynthConfig& config);

}  // namespace dfmed
