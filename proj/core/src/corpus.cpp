#include "dfmed/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace dfmed {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

[[noreturn]] void schema_error(const std::string& id, const std::string& field,
                               const std::string& what) {
  throw std::invalid_argument("corpus: dialogue '" + id + "', field '" + field + "': " + what);
}

}  // namespace

std::string dialogue_to_json_line(const Dialogue& d) {
  ordered_json j;
  j["id"] = d.id;
  j["utterances"] = ordered_json::array();
  for (const auto& u : d.utterances) {
    ordered_json ju;
    ju["role"] = u.role == Role::Patient ? "patient" : "doctor";
    ju["tokens"] = u.tokens;
    ju["entities"] = u.entities;
    std::vector<std::string> acts;
    for (ActLabel a : u.acts.list()) acts.push_back(act_name(a));
    ju["acts"] = acts;
    j["utterances"].push_back(std::move(ju));
  }
  return j.dump();
}

Dialogue dialogue_from_json_line(const std::string& line) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("corpus: invalid json line: ") + e.what());
  }
  Dialogue d;
  if (!j.contains("id") || !j["id"].is_string()) schema_error("?", "id", "missing string id");
  d.id = j["id"].get<std::string>();
  if (!j.contains("utterances") || !j["utterances"].is_array())
    schema_error(d.id, "utterances", "missing array");
  for (const auto& ju : j["utterances"]) {
    Utterance u;
    if (!ju.contains("role") || !ju["role"].is_string())
      schema_error(d.id, "role", "missing string");
    std::string role = ju["role"].get<std::string>();
    if (role == "patient")
      u.role = Role::Patient;
    else if (role == "doctor")
      u.role = Role::Doctor;
    else
      schema_error(d.id, "role", "must be 'patient' or 'doctor', got '" + role + "'");
    if (!ju.contains("tokens") || !ju["tokens"].is_array())
      schema_error(d.id, "tokens", "missing array");
    for (const auto& t : ju["tokens"]) u.tokens.push_back(t.get<std::string>());
    if (ju.contains("entities"))
      for (const auto& e : ju["entities"]) u.entities.push_back(e.get<std::string>());
    if (ju.contains("acts")) {
      for (const auto& a : ju["acts"]) {
        auto act = act_from_name(a.get<std::string>());
        if (!act)
          schema_error(d.id, "acts", "unknown act '" + a.get<std::string>() + "'");
        u.acts.insert(*act);
      }
    }
    d.utterances.push_back(std::move(u));
  }
  try {
    validate_dialogue(d);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("corpus: ") + e.what());
  }
  return d;
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  Corpus corpus;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    corpus.push_back(dialogue_from_json_line(line));
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  for (const auto& d : corpus) out << dialogue_to_json_line(d) << '\n';
}

const std::vector<std::string>& default_privacy_placeholders() {
  static const std::vector<std::string> v = {
      "The image is not available for privacy concerns",
      "The voice is not available for privacy concerns"};
  return v;
}

bool filter_privacy(const Dialogue& d) {
  return filter_privacy(d, default_privacy_placeholders());
}

bool filter_privacy(const Dialogue& d, const std::vector<std::string>& placeholders) {
  for (const auto& u : d.utterances) {
    std::string text = join_tokens(u.tokens);
    for (const auto& p : placeholders)
      if (text.find(p) != std::string::npos) return false;
  }
  return true;
}

int apply_privacy_filter(Corpus& corpus) {
  std::size_t before = corpus.size();
  corpus.erase(std::remove_if(corpus.begin(), corpus.end(),
                              [](const Dialogue& d) { return !filter_privacy(d); }),
               corpus.end());
  return static_cast<int>(before - corpus.size());
}

namespace {

TrainingExample make_example(const Dialogue& d, int t, const KnowledgeGraph& kg,
                             const Vocab& vocab, bool with_target) {
  TrainingExample ex;
  ex.dialogue_id = d.id;
  ex.target_turn = t;

  for (int k = 1; k <= t; ++k) {
    auto append_utt = [&](const Utterance& u, int role_token) {
      ex.history_ids.push_back(role_token);
      for (const auto& tok : u.tokens) ex.history_ids.push_back(vocab.id(tok));
      ex.utterance_ends.push_back(static_cast<int>(ex.history_ids.size()));
    };
    append_utt(d.patient(k), Vocab::kPatient);
    if (k < t) append_utt(d.doctor(k), Vocab::kDoctor);
  }

  for (int k = 1; k <= t; ++k)
    ex.graphs.push_back(build_turn_graph(d, k, kg, /*include_doctor_of_k=*/k < t));
  for (int k = 1; k < t; ++k) ex.act_history.push_back(d.doctor(k).acts);

  // candidate pool G¹_{<=t}: one-hop of everything mentioned so far
  // (mentioned entities are never candidates)
  std::set<int> all_mentions;
  for (const auto& g : ex.graphs) all_mentions.insert(g.mentions.begin(), g.mentions.end());
  std::vector<int> mention_vec(all_mentions.begin(), all_mentions.end());
  ex.candidates = one_hop(kg, mention_vec);
  std::set<int> pool(ex.candidates.begin(), ex.candidates.end());

  std::set<int> cum;
  for (const auto& g : ex.graphs) {
    auto nodes = g.nodes();
    cum.insert(nodes.begin(), nodes.end());
  }
  cum.insert(pool.begin(), pool.end());
  ex.cum_nodes.assign(cum.begin(), cum.end());
  for (int a : ex.cum_nodes)
    for (int b : kg.neighbors(a))
      if (a < b && cum.count(b)) ex.cum_edges.emplace_back(a, b);

  if (with_target) {
    const Utterance& target = d.doctor(t);
    ex.gold_entity_names = target.entities;
    std::set<int> gold_ids;
    for (const auto& name : target.entities) {
      int id = kg.find(name);
      if (id >= 0) gold_ids.insert(id);
    }
    for (int id : gold_ids) {
      if (pool.count(id))
        ex.target_entities.push_back(id);
      else
        ex.unreachable_gold.push_back(id);
    }
    ex.target_acts = target.acts;
    ex.target_tokens = target.tokens;
    ex.target_ids = vocab.encode(target.tokens);
  }
  return ex;
}

}  // namespace

std::vector<TrainingExample> build_examples(const Dialogue& d, const KnowledgeGraph& kg,
                                            const Vocab& vocab) {
  validate_dialogue(d);
  std::vector<TrainingExample> out;
  for (int t = 1; t <= d.rounds(); ++t) out.push_back(make_example(d, t, kg, vocab, true));
  return out;
}

TrainingExample build_inference_example(const Dialogue& partial, const KnowledgeGraph& kg,
                                        const Vocab& vocab) {
  if (partial.utterances.empty() || partial.utterances.size() % 2 == 0 ||
      partial.utterances.back().role != Role::Patient)
    throw std::invalid_argument("inference example: dialogue must end on a patient utterance");
  int t = static_cast<int>(partial.utterances.size() + 1) / 2;
  // pad a copy with a placeholder doctor turn; the target turn's doctor side
  // is excluded from every graph and never read
  Dialogue padded = partial;
  Utterance dummy;
  dummy.role = Role::Doctor;
  dummy.tokens = {"[PAD]"};
  dummy.acts.insert(ActLabel::Chitchat);
  padded.utterances.push_back(std::move(dummy));
  return make_example(padded, t, kg, vocab, false);
}

std::vector<TrainingExample> build_examples(const Corpus& corpus, const KnowledgeGraph& kg,
                                            const Vocab& vocab) {
  std::vector<TrainingExample> out;
  for (const auto& d : corpus) {
    auto exs = build_examples(d, kg, vocab);
    out.insert(out.end(), std::make_move_iterator(exs.begin()),
               std::make_move_iterator(exs.end()));
  }
  return out;
}

}  // namespace dfmed
