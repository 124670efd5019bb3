#pragma once

#include <string>
#include <vector>

#include "dfmed/dialogue.hpp"
#include "dfmed/kg.hpp"
#include "dfmed/vocab.hpp"

namespace dfmed {

/// JSONL, one dialogue object per line:
/// {"id": str, "utterances": [{"role","tokens","entities","acts"}]}.
/// Schema violations raise with the dialogue id and offending field.
Corpus load_corpus(const std::string& path);
void save_corpus(const Corpus& corpus, const std::string& path);

std::string dialogue_to_json_line(const Dialogue& d);
Dialogue dialogue_from_json_line(const std::string& line);

/// Returns false iff any utterance contains one of the placeholder phrases
/// as a substring of its space-joined tokens.
const std::vector<std::string>& default_privacy_placeholders();
bool filter_privacy(const Dialogue& d);
bool filter_privacy(const Dialogue& d, const std::vector<std::string>& placeholders);
/// Keeps only dialogues passing the privacy filter; returns dropped count.
int apply_privacy_filter(Corpus& corpus);

/// One training example per doctor turn t: the history U_t, the per-turn
/// graphs G_1..G_t, gold act history A_1..A_{t-1}, the candidate pool
/// G¹_{≤t}, and the targets of D_t.
struct TrainingExample {
  std::string dialogue_id;
  int target_turn{1};

  /// Role-tagged token ids of U_t: [P] p1... [D] d1... ... [P] pt...
  std::vector<int> history_ids;
  /// Exclusive end offset in history_ids after each utterance of U_t
  /// (2t-1 entries; entry 2k-2 closes P_k, entry 2k-1 closes D_k).
  std::vector<int> utterance_ends;

  std::vector<TurnGraph> graphs;    // G_1..G_t (turn t without its doctor side)
  std::vector<ActSet> act_history;  // A_1..A_{t-1}

  std::vector<int> cum_nodes;  // nodes of G_{<=t}, sorted
  std::vector<std::pair<int, int>> cum_edges;  // KG edges among cum_nodes, a < b

  std::vector<int> candidates;        // final frontier G¹_{<=t}, sorted
  std::vector<int> target_entities;   // gold of D_t ∩ candidates, sorted
  std::vector<int> unreachable_gold;  // gold KG entities outside the pool
  ActSet target_acts;

  std::vector<std::string> target_tokens;      // D_t surface tokens
  std::vector<int> target_ids;                 // D_t token ids
  std::vector<std::string> gold_entity_names;  // all annotated entities of D_t
};

std::vector<TrainingExample> build_examples(const Dialogue& d, const KnowledgeGraph& kg,
                                            const Vocab& vocab);
std::vector<TrainingExample> build_examples(const Corpus& corpus, const KnowledgeGraph& kg,
                                            const Vocab& vocab);

/// Example for an in-progress dialogue whose last utterance is the patient
/// turn P_t (odd utterance count); target fields stay empty.
TrainingExample build_inference_example(const Dialogue& partial, const KnowledgeGraph& kg,
                                        const Vocab& vocab);

}  // namespace dfmed
