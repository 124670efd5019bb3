#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dfmed/dialogue.hpp"
#include "dfmed/kg.hpp"

namespace dfmed {

using TokenSeq = std::vector<std::string>;

/// Corpus-level BLEU-n, percent scale: geometric mean of clipped k-gram
/// precisions (k = 1..n, uniform weights), add-one smoothing when a k >= 2
/// count is zero, multiplicative brevity penalty exp(1 - r/c) for c < r.
double bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references,
            int n);

struct RougeResult {
  double f1{0.0};  // percent
  int pairs_used{0};
  int pairs_skipped{0};  // empty-reference pairs
};

/// Macro-averaged per-pair ROUGE-n F1 (beta = 1), percent scale.
RougeResult rouge(const std::vector<TokenSeq>& hypotheses,
                  const std::vector<TokenSeq>& references, int n);

struct EntityPrf {
  double precision{0.0}, recall{0.0}, f1{0.0};  // percent, micro-averaged
  long matched{0}, predicted{0}, gold{0};
};

/// Predicted sets come from string-matching each hypothesis against the KG;
/// gold sets are the (deduplicated) annotation names.
EntityPrf entity_prf(const std::vector<TokenSeq>& hypotheses,
                     const std::vector<std::vector<std::string>>& gold_sets,
                     const KnowledgeGraph& kg);

struct ScoredCandidates {
  std::vector<int> ids;
  std::vector<double> scores;  // aligned
};

/// Micro top-k recall over examples with at least one gold target; ties in
/// the ranking break toward the lower entity id. nullopt when no example
/// has gold.
std::optional<double> recall_at_k(const std::vector<ScoredCandidates>& scored,
                                  const std::vector<std::vector<int>>& gold_sets, int k = 20);

/// Expected top-k recall of a uniformly random ranking, computed analytically
/// from candidate-pool sizes: E[hits] = |gold| * min(1, k / |pool|).
std::optional<double> random_ranking_recall_at_k(const std::vector<int>& pool_sizes,
                                                 const std::vector<int>& gold_counts, int k = 20);

struct ActF1 {
  double precision{0.0}, recall{0.0}, f1{0.0};  // percent
  int support{0};                               // gold positive count
};

struct WeightedF1Result {
  double weighted{0.0};  // percent, support-weighted over acts with support > 0
  std::array<ActF1, kNumActs> per_act{};
  int total_support{0};
};

WeightedF1Result weighted_f1(const std::vector<ActSet>& predicted,
                             const std::vector<ActSet>& gold);

/// Everything the eval command reports; serialized as versioned JSON and
/// printed as an aligned table.
struct EvalReport {
  // generation metrics (percent)
  double b1{0}, b2{0}, b4{0}, r1{0}, r2{0};
  double e_p{0}, e_r{0}, e_f1{0};
  // flow metrics
  std::optional<double> r_at_k;
  int topk{20};
  double wf1{0};
  std::array<ActF1, kNumActs> per_act{};
  std::array<double, kNumActs> thresholds{};
  // analytic baselines
  std::optional<double> random_r_at_k;
  double majority_wf1{0};
  std::string majority_act;
  // decoder gate statistics per layer
  std::vector<double> avg_gate;
  // counts
  int n_examples{0};
  int n_examples_with_gold{0};
  int rouge_pairs_skipped{0};

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  std::string to_table() const;
};

}  // namespace dfmed
