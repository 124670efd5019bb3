#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dfmed/dialogue.hpp"

namespace dfmed {

/// Undirected entity graph. Entity names are token sequences (space-joined
/// in files); adjacency lists are sorted, symmetric, and self-loop free.
/// Immutable after load; all query operations are read-only.
class KnowledgeGraph {
 public:
  int add_entity(const std::vector<std::string>& name_tokens);
  /// Symmetric insert; duplicate edges are ignored, self-loops rejected.
  void add_edge(int a, int b);

  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& name(int id) const;
  std::string joined_name(int id) const;
  const std::vector<int>& neighbors(int id) const;
  /// -1 when the (space-joined) name is unknown.
  int find(const std::string& joined) const;

 private:
  std::vector<std::vector<std::string>> names_;
  std::vector<std::vector<int>> adj_;
  std::map<std::string, int> by_name_;
};

/// TSV edge list, one `entityA<TAB>entityB` per line. Duplicate edges are
/// ignored; malformed lines raise with their line number.
KnowledgeGraph load_kg(const std::string& path);
void save_kg(const KnowledgeGraph& kg, const std::string& path);

/// Left-to-right greedy longest match of entity names against the token
/// sequence; non-overlapping; result deduplicated in first-occurrence order.
std::vector<int> match_entities(const std::vector<std::string>& tokens,
                                const KnowledgeGraph& kg);

/// Union of the seeds' neighbors minus the seeds themselves, sorted.
/// Unknown seed ids raise.
std::vector<int> one_hop(const KnowledgeGraph& kg, const std::vector<int>& seeds);

/// Per-turn entity graph: the turn's mentioned entities plus the one-hop
/// frontier of everything mentioned so far. GAT adds self-loops transiently;
/// they are not stored here.
struct TurnGraph {
  int turn{0};
  std::vector<int> mentions;  // sorted
  std::vector<int> frontier;  // sorted, disjoint from all mentions <= turn
  std::vector<std::pair<int, int>> edges;  // KG edges among nodes(), a < b

  std::vector<int> nodes() const;  // mentions ∪ frontier, sorted
  bool empty() const { return mentions.empty() && frontier.empty(); }
};

/// Builds G_k. Mentions come from the turn's patient utterance and, when
/// `include_doctor_of_k`, from its doctor utterance (callers pass false for
/// the target turn, whose doctor side is what gets predicted). The frontier
/// is the turn's own one-hop neighborhood minus everything mentioned in
/// turns 1..k, so consecutive turn graphs stay distinct; the growing
/// candidate pool G¹_{<=k} is the union of these frontiers.
TurnGraph build_turn_graph(const Dialogue& d, int k, const KnowledgeGraph& kg,
                           bool include_doctor_of_k = true);

/// Fills utterance entity annotations by string matching (for corpora that
/// arrive unannotated).
void annotate_with_matches(Dialogue& d, const KnowledgeGraph& kg);

}  // namespace dfmed
