#include "dfmed/kg.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dfmed {

namespace {

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

}  // namespace

int KnowledgeGraph::add_entity(const std::vector<std::string>& name_tokens) {
  if (name_tokens.empty()) throw std::invalid_argument("kg: empty entity name");
  std::string joined = join_tokens(name_tokens);
  auto it = by_name_.find(joined);
  if (it != by_name_.end()) return it->second;
  int id = size();
  names_.push_back(name_tokens);
  adj_.emplace_back();
  by_name_[joined] = id;
  return id;
}

void KnowledgeGraph::add_edge(int a, int b) {
  if (a < 0 || a >= size() || b < 0 || b >= size())
    throw std::out_of_range("kg: edge endpoint out of range");
  if (a == b) throw std::invalid_argument("kg: self-loop rejected for entity " + joined_name(a));
  auto insert_sorted = [](std::vector<int>& v, int x) {
    auto it = std::lower_bound(v.begin(), v.end(), x);
    if (it == v.end() || *it != x) v.insert(it, x);
  };
  insert_sorted(adj_[static_cast<std::size_t>(a)], b);
  insert_sorted(adj_[static_cast<std::size_t>(b)], a);
}

const std::vector<std::string>& KnowledgeGraph::name(int id) const {
  return names_.at(static_cast<std::size_t>(id));
}

std::string KnowledgeGraph::joined_name(int id) const { return join_tokens(name(id)); }

const std::vector<int>& KnowledgeGraph::neighbors(int id) const {
  return adj_.at(static_cast<std::size_t>(id));
}

int KnowledgeGraph::find(const std::string& joined) const {
  auto it = by_name_.find(joined);
  return it == by_name_.end() ? -1 : it->second;
}

KnowledgeGraph load_kg(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open kg file: " + path);
  KnowledgeGraph kg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
      throw std::runtime_error("kg file " + path + " line " + std::to_string(lineno) +
                               ": expected `entityA<TAB>entityB`");
    std::vector<std::string> a = split_ws(line.substr(0, tab));
    std::vector<std::string> b = split_ws(line.substr(tab + 1));
    if (a.empty() || b.empty())
      throw std::runtime_error("kg file " + path + " line " + std::to_string(lineno) +
                               ": empty entity name");
    kg.add_edge(kg.add_entity(a), kg.add_entity(b));
  }
  return kg;
}

void save_kg(const KnowledgeGraph& kg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write kg file: " + path);
  for (int a = 0; a < kg.size(); ++a)
    for (int b : kg.neighbors(a))
      if (a < b) out << kg.joined_name(a) << '\t' << kg.joined_name(b) << '\n';
}

std::vector<int> match_entities(const std::vector<std::string>& tokens,
                                const KnowledgeGraph& kg) {
  // index entity names by first token, longest first
  std::map<std::string, std::vector<int>> by_first;
  for (int id = 0; id < kg.size(); ++id) by_first[kg.name(id)[0]].push_back(id);
  for (auto& [tok, ids] : by_first) {
    std::sort(ids.begin(), ids.end(), [&kg](int x, int y) {
      if (kg.name(x).size() != kg.name(y).size()) return kg.name(x).size() > kg.name(y).size();
      return x < y;
    });
  }

  std::vector<int> out;
  std::set<int> seen;
  std::size_t i = 0;
  while (i < tokens.size()) {
    std::size_t advance = 1;
    auto it = by_first.find(tokens[i]);
    if (it != by_first.end()) {
      for (int id : it->second) {
        const auto& name = kg.name(id);
        if (i + name.size() > tokens.size()) continue;
        if (std::equal(name.begin(), name.end(), tokens.begin() + static_cast<long>(i))) {
          if (seen.insert(id).second) out.push_back(id);
          advance = name.size();
          break;
        }
      }
    }
    i += advance;
  }
  return out;
}

std::vector<int> one_hop(const KnowledgeGraph& kg, const std::vector<int>& seeds) {
  std::set<int> seed_set;
  for (int s : seeds) {
    if (s < 0 || s >= kg.size())
      throw std::out_of_range("one_hop: unknown entity id " + std::to_string(s));
    seed_set.insert(s);
  }
  std::set<int> out;
  for (int s : seed_set)
    for (int n : kg.neighbors(s))
      if (!seed_set.count(n)) out.insert(n);
  return {out.begin(), out.end()};
}

std::vector<int> TurnGraph::nodes() const {
  std::vector<int> v;
  v.reserve(mentions.size() + frontier.size());
  std::merge(mentions.begin(), mentions.end(), frontier.begin(), frontier.end(),
             std::back_inserter(v));
  return v;
}

namespace {

std::vector<int> utterance_entity_ids(const Utterance& u, const KnowledgeGraph& kg) {
  std::set<int> ids;
  for (const auto& name : u.entities) {
    int id = kg.find(name);
    if (id >= 0) ids.insert(id);
  }
  return {ids.begin(), ids.end()};
}

}  // namespace

TurnGraph build_turn_graph(const Dialogue& d, int k, const KnowledgeGraph& kg,
                           bool include_doctor_of_k) {
  if (k < 1 || k > d.rounds())
    throw std::out_of_range("build_turn_graph: turn " + std::to_string(k) + " of dialogue '" +
                            d.id + "' with " + std::to_string(d.rounds()) + " rounds");
  std::set<int> cumulative;
  std::set<int> turn_mentions;
  for (int j = 1; j <= k; ++j) {
    std::set<int> here;
    for (int id : utterance_entity_ids(d.patient(j), kg)) here.insert(id);
    if (j < k || include_doctor_of_k)
      for (int id : utterance_entity_ids(d.doctor(j), kg)) here.insert(id);
    cumulative.insert(here.begin(), here.end());
    if (j == k) turn_mentions = here;
  }

  TurnGraph g;
  g.turn = k;
  g.mentions.assign(turn_mentions.begin(), turn_mentions.end());
  // the turn's own one-hop frontier, excluding anything already mentioned;
  // this keeps consecutive turn graphs distinct so their pooled embeddings
  // actually carry the flow
  std::vector<int> mention_vec(turn_mentions.begin(), turn_mentions.end());
  for (int id : one_hop(kg, mention_vec))
    if (!cumulative.count(id)) g.frontier.push_back(id);

  std::vector<int> nodes = g.nodes();
  std::set<int> node_set(nodes.begin(), nodes.end());
  for (int a : nodes)
    for (int b : kg.neighbors(a))
      if (a < b && node_set.count(b)) g.edges.emplace_back(a, b);
  return g;
}

void annotate_with_matches(Dialogue& d, const KnowledgeGraph& kg) {
  for (auto& u : d.utterances) {
    u.entities.clear();
    for (int id : match_entities(u.tokens, kg)) u.entities.push_back(kg.joined_name(id));
  }
}

}  // namespace dfmed
