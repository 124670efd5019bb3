#include "dfmed/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "dfmed/rng.hpp"

namespace dfmed {

namespace {

constexpr double kProbTol = 1e-9;

void check_prob_row(const std::vector<double>& row, const std::string& what) {
  double s = 0.0;
  for (double p : row) {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("synth: " + what + " outside [0,1]");
    s += p;
  }
  if (std::abs(s - 1.0) > kProbTol)
    throw std::invalid_argument("synth: " + what + " sums to " + std::to_string(s));
}

int sample_index(const std::vector<double>& probs, Rng& rng) {
  double r = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (r < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

// ---------------------------------------------------------------------------
// entity names
// ---------------------------------------------------------------------------

std::vector<std::string> make_name_tokens(int count) {
  static const std::string cons = "bdfgklmnprstvz";
  static const std::string vows = "aeiou";
  int nc = static_cast<int>(cons.size()), nv = static_cast<int>(vows.size());
  if (count > nc * nv * nc * nv)
    throw std::invalid_argument("synth: vocab_size exceeds the name-token space");
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    std::string t;
    t += cons[static_cast<std::size_t>(i % nc)];
    t += vows[static_cast<std::size_t>((i / nc) % nv)];
    t += cons[static_cast<std::size_t>((i / (nc * nv)) % nc)];
    t += vows[static_cast<std::size_t>((i / (nc * nv * nc)) % nv)];
    out.push_back(std::move(t));
  }
  return out;
}

KnowledgeGraph make_kg(const SynthConfig& cfg, Rng& rng) {
  KnowledgeGraph kg;
  std::vector<std::string> pool = make_name_tokens(cfg.vocab_size);
  std::set<std::string> used;
  for (int i = 0; i < cfg.n_entities; ++i) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 2000) throw std::runtime_error("synth: cannot generate distinct entity names");
      std::vector<std::string> name;
      name.push_back(rng.choice(pool));
      if (rng.chance(0.6)) name.push_back(rng.choice(pool));
      std::string joined = name.size() == 1 ? name[0] : name[0] + " " + name[1];
      if (used.insert(joined).second) {
        kg.add_entity(name);
        break;
      }
    }
  }

  // degree-capped random pairing ("regular-ish")
  std::vector<int> deg(static_cast<std::size_t>(cfg.n_entities), 0);
  auto open_nodes = [&]() {
    std::vector<int> v;
    for (int i = 0; i < cfg.n_entities; ++i)
      if (deg[static_cast<std::size_t>(i)] < cfg.kg_degree) v.push_back(i);
    return v;
  };
  int stale = 0;
  while (stale < 200) {
    std::vector<int> open = open_nodes();
    if (open.size() < 2) break;
    int a = rng.choice(open);
    int b = rng.choice(open);
    const auto& na = kg.neighbors(a);
    if (a == b || std::binary_search(na.begin(), na.end(), b)) {
      ++stale;
      continue;
    }
    kg.add_edge(a, b);
    ++deg[static_cast<std::size_t>(a)];
    ++deg[static_cast<std::size_t>(b)];
    stale = 0;
  }
  // no isolated entities
  for (int i = 0; i < cfg.n_entities; ++i) {
    if (kg.neighbors(i).empty()) {
      int j = rng.uniform_int(0, cfg.n_entities - 1);
      if (j == i) j = (i + 1) % cfg.n_entities;
      kg.add_edge(i, j);
    }
  }
  return kg;
}

// ---------------------------------------------------------------------------
// utterance templates
// ---------------------------------------------------------------------------

struct Segment {
  std::vector<std::string> before;
  std::vector<std::string> after;
};

std::vector<std::string> render(const Segment& seg, const std::vector<int>& entities,
                                const KnowledgeGraph& kg) {
  std::vector<std::string> out = seg.before;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (i) out.push_back("and");
    const auto& name = kg.name(entities[i]);
    out.insert(out.end(), name.begin(), name.end());
  }
  out.insert(out.end(), seg.after.begin(), seg.after.end());
  return out;
}

Segment patient_open_template(Rng& rng) {
  switch (rng.uniform_int(0, 1)) {
    case 0: return {{"hello", "doctor", "i", "feel"}, {"these", "days"}};
    default: return {{"hi", "doctor", "lately", "i", "have"}, {}};
  }
}

Segment patient_followup_template(Rng& rng) {
  switch (rng.uniform_int(0, 2)) {
    case 0: return {{"yes"}, {"bothers", "me", "too"}};
    case 1: return {{"i", "also", "noticed"}, {}};
    default: return {{"okay", "and"}, {"as", "well"}};
  }
}

Segment act_template(ActLabel act, Rng& rng) {
  switch (act) {
    case ActLabel::Inquire:
      return rng.chance(0.5) ? Segment{{"how", "long", "has"}, {"been", "going", "on"}}
                             : Segment{{"do", "you", "also", "notice"}, {"lately"}};
    case ActLabel::MakeDiagnosis:
      return rng.chance(0.5) ? Segment{{"this", "looks", "like"}, {"to", "me"}}
                             : Segment{{"you", "may", "have"}, {}};
    case ActLabel::PrescribeMedications:
      return rng.chance(0.5) ? Segment{{"please", "take"}, {"twice", "daily"}}
                             : Segment{{"i", "will", "prescribe"}, {"for", "one", "week"}};
    case ActLabel::StateRequiredTest:
      return rng.chance(0.5) ? Segment{{"please", "schedule", "a"}, {"to", "confirm"}}
                             : Segment{{"we", "should", "run", "a"}, {"first"}};
    case ActLabel::ProvideDailyPrecautions:
      return rng.chance(0.5)
                 ? Segment{{"drink", "water", "rest", "well", "and", "avoid", "heavy", "meals"}, {}}
                 : Segment{{"keep", "a", "light", "diet", "and", "sleep", "early"}, {}};
    case ActLabel::Inform:
      return rng.chance(0.5) ? Segment{{}, {"is", "common", "and", "usually", "mild"}}
                             : Segment{{}, {"often", "improves", "within", "days"}};
    case ActLabel::Chitchat:
      switch (rng.uniform_int(0, 2)) {
        case 0: return {{"hello", "there"}, {}};
        case 1: return {{"you", "are", "welcome", "take", "care"}, {}};
        default: return {{"wish", "you", "a", "speedy", "recovery"}, {}};
      }
  }
  return {};
}

int entity_slots(ActLabel act, Rng& rng) {
  switch (act) {
    case ActLabel::Inquire:
    case ActLabel::MakeDiagnosis:
    case ActLabel::StateRequiredTest:
    case ActLabel::Inform:
      return 1;
    case ActLabel::PrescribeMedications:
      return 2;
    default:
      return 0;
  }
}

/// Probability an act's entity is a fresh one-hop draw rather than a
/// re-mention of something already on the table. Inquiring and informing
/// mostly revisit known entities; diagnoses, prescriptions, and tests
/// introduce new ones.
double fresh_entity_prob(ActLabel act) {
  switch (act) {
    case ActLabel::Inquire: return 0.15;
    case ActLabel::Inform: return 0.15;
    default: return 1.0;
  }
}

// ---------------------------------------------------------------------------
// planted entity walk
// ---------------------------------------------------------------------------

struct EntityWalk {
  const KnowledgeGraph& kg;
  double p_hop;
  std::set<int> mentioned;

  /// One-hop pick: fresh neighbor of the source set when possible, then any
  /// fresh frontier node, then a source neighbor again (re-mention). An
  /// empty source falls back to the cumulative mention set so the hop branch
  /// stays one-hop even after entity-free turns. The uniform branch
  /// (probability 1 - p_hop) draws from all entities.
  int draw(const std::vector<int>& source_in, Rng& rng) {
    if (!mentioned.empty() && rng.uniform() < p_hop) {
      std::vector<int> source = source_in;
      if (source.empty()) source.assign(mentioned.begin(), mentioned.end());
      std::vector<int> fresh;
      for (int s : source)
        for (int n : kg.neighbors(s))
          if (!mentioned.count(n)) fresh.push_back(n);
      std::sort(fresh.begin(), fresh.end());
      fresh.erase(std::unique(fresh.begin(), fresh.end()), fresh.end());
      if (fresh.empty()) {
        std::vector<int> seeds(mentioned.begin(), mentioned.end());
        fresh = one_hop(kg, seeds);
      }
      if (!fresh.empty()) return rng.choice(fresh);
      std::vector<int> any;
      for (int s : source) {
        const auto& ns = kg.neighbors(s);
        any.insert(any.end(), ns.begin(), ns.end());
      }
      if (!any.empty()) {
        std::sort(any.begin(), any.end());
        return rng.choice(any);
      }
    }
    return rng.uniform_int(0, kg.size() - 1);
  }

  void mark(int id) { mentioned.insert(id); }
};

}  // namespace

// ---------------------------------------------------------------------------
// grammars
// ---------------------------------------------------------------------------

void ActGrammar::validate() const {
  if (states.empty()) throw std::invalid_argument("synth: grammar has no states");
  for (const auto& s : states)
    if (s.empty()) throw std::invalid_argument("synth: grammar state with empty act set");
  if (initial.size() != states.size() || trans.size() != states.size())
    throw std::invalid_argument("synth: grammar table sizes do not match state count");
  check_prob_row(initial, "grammar initial distribution");
  for (const auto& row : trans) {
    if (row.size() != states.size())
      throw std::invalid_argument("synth: grammar transition row has wrong width");
    check_prob_row(row, "grammar transition row");
  }
  if (close_state >= static_cast<int>(states.size()))
    throw std::invalid_argument("synth: close_state out of range");
}

ActGrammar default_act_grammar() {
  using A = ActLabel;
  ActGrammar g;
  g.states = {
      ActSet::of({A::Chitchat, A::Inquire}),                        // 0 open
      ActSet::of({A::Inquire}),                                     // 1
      ActSet::of({A::Inform}),                                      // 2
      ActSet::of({A::Inquire, A::Inform}),                          // 3
      ActSet::of({A::MakeDiagnosis}),                               // 4
      ActSet::of({A::MakeDiagnosis, A::StateRequiredTest}),         // 5
      ActSet::of({A::PrescribeMedications}),                        // 6
      ActSet::of({A::StateRequiredTest}),                           // 7
      ActSet::of({A::PrescribeMedications, A::ProvideDailyPrecautions}),  // 8
      ActSet::of({A::ProvideDailyPrecautions, A::Chitchat}),        // 9 close
      ActSet::of({A::PrescribeMedications, A::StateRequiredTest}),  // 10
  };
  g.initial = {0.7, 0.2, 0.0, 0.1, 0, 0, 0, 0, 0, 0, 0};
  g.trans = {
      {0.00, 0.40, 0.15, 0.30, 0.10, 0.05, 0.00, 0.00, 0.00, 0.00, 0.00},
      {0.00, 0.30, 0.20, 0.20, 0.20, 0.10, 0.00, 0.00, 0.00, 0.00, 0.00},
      {0.00, 0.35, 0.00, 0.25, 0.25, 0.15, 0.00, 0.00, 0.00, 0.00, 0.00},
      {0.00, 0.20, 0.15, 0.00, 0.40, 0.25, 0.00, 0.00, 0.00, 0.00, 0.00},
      {0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.35, 0.20, 0.15, 0.00, 0.30},
      {0.00, 0.00, 0.10, 0.00, 0.00, 0.00, 0.40, 0.00, 0.20, 0.00, 0.30},
      {0.00, 0.00, 0.15, 0.00, 0.00, 0.00, 0.00, 0.20, 0.30, 0.05, 0.30},
      {0.00, 0.00, 0.15, 0.00, 0.00, 0.00, 0.55, 0.00, 0.00, 0.05, 0.25},
      {0.00, 0.00, 0.15, 0.00, 0.00, 0.00, 0.00, 0.20, 0.00, 0.10, 0.55},
      {0.00, 0.35, 0.35, 0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.30, 0.00},
      {0.00, 0.00, 0.10, 0.00, 0.00, 0.00, 0.00, 0.00, 0.30, 0.10, 0.50},
  };
  g.close_state = 9;
  g.validate();
  return g;
}

ActGrammar iid_act_grammar(const std::array<double, kNumActs>& probs) {
  ActGrammar g;
  std::vector<double> row(probs.begin(), probs.end());
  for (int i = 0; i < kNumActs; ++i) g.states.push_back(ActSet::of({static_cast<ActLabel>(i)}));
  g.initial = row;
  g.trans.assign(static_cast<std::size_t>(kNumActs), row);
  g.close_state = -1;
  g.validate();
  return g;
}

void SynthConfig::validate() const {
  if (n_entities < 2) throw std::invalid_argument("synth: n_entities < 2");
  if (kg_degree < 1 || kg_degree >= n_entities)
    throw std::invalid_argument("synth: kg_degree out of range");
  if (n_dialogues < 1) throw std::invalid_argument("synth: n_dialogues < 1");
  if (turns_min < 1 || turns_min > turns_max)
    throw std::invalid_argument("synth: bad turns range");
  if (p_hop < 0.0 || p_hop > 1.0) throw std::invalid_argument("synth: p_hop outside [0,1]");
  if (vocab_size < 20) throw std::invalid_argument("synth: vocab_size < 20");
  grammar.validate();
}

// ---------------------------------------------------------------------------
// generation
// ---------------------------------------------------------------------------

SynthOutput generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  SynthOutput out;
  Rng kg_rng = Rng::derive(cfg.seed, 0);
  out.kg = make_kg(cfg, kg_rng);
  const KnowledgeGraph& kg = out.kg;

  for (int di = 0; di < cfg.n_dialogues; ++di) {
    Rng rng = Rng::derive(cfg.seed, 1000 + static_cast<std::uint64_t>(di));
    Dialogue d;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "synth-%06d", di);
    d.id = idbuf;

    int rounds = rng.uniform_int(cfg.turns_min, cfg.turns_max);
    std::vector<int> states(static_cast<std::size_t>(rounds));
    states[0] = sample_index(cfg.grammar.initial, rng);
    for (int k = 1; k < rounds; ++k)
      states[static_cast<std::size_t>(k)] =
          sample_index(cfg.grammar.trans[static_cast<std::size_t>(states[static_cast<std::size_t>(k - 1)])], rng);
    if (cfg.grammar.close_state >= 0 && rounds > 1)
      states[static_cast<std::size_t>(rounds - 1)] = cfg.grammar.close_state;

    EntityWalk walk{kg, cfg.p_hop, {}};
    std::vector<int> prev_utt_entities;   // entities of the utterance just before
    std::vector<int> diag_anchor;         // entities of the latest diagnosis segment

    auto finish_utterance = [&](Utterance& u, const std::vector<int>& ids) {
      std::vector<int> dedup;
      for (int id : ids)
        if (std::find(dedup.begin(), dedup.end(), id) == dedup.end()) dedup.push_back(id);
      for (int id : dedup) {
        u.entities.push_back(kg.joined_name(id));
        walk.mark(id);
      }
      prev_utt_entities = dedup;
    };

    for (int k = 1; k <= rounds; ++k) {
      // patient utterance: a rich opening symptom description, then 2-3
      // mentions per follow-up
      Utterance p;
      p.role = Role::Patient;
      std::vector<int> p_ents;
      if (k == 1) {
        int n_p = rng.uniform_int(5, 6);
        int seed_entity = rng.uniform_int(0, kg.size() - 1);
        p_ents.push_back(seed_entity);
        walk.mark(seed_entity);
        for (int j = 1; j < n_p; ++j) {
          int e = walk.draw(p_ents, rng);
          p_ents.push_back(e);
          walk.mark(e);
        }
        p.tokens = render(patient_open_template(rng), p_ents, kg);
      } else {
        int n_p = 3;
        std::vector<int> source = prev_utt_entities;
        for (int j = 0; j < n_p; ++j) {
          int e = walk.draw(source, rng);
          walk.mark(e);
          p_ents.push_back(e);
        }
        p.tokens = render(patient_followup_template(rng), p_ents, kg);
      }
      finish_utterance(p, p_ents);
      d.utterances.push_back(std::move(p));

      // doctor utterance: one template segment per act, canonical order.
      // Sources only use entities visible before this utterance (the
      // diagnosis anchor updates after the turn), and each fresh draw is
      // marked immediately so a turn never repeats itself.
      Utterance doc;
      doc.role = Role::Doctor;
      doc.acts = cfg.grammar.states[static_cast<std::size_t>(states[static_cast<std::size_t>(k - 1)])];
      std::vector<int> doc_ents;
      std::vector<int> new_anchor;
      std::vector<int> patient_source = prev_utt_entities;
      for (ActLabel act : doc.acts.list()) {
        int slots = entity_slots(act, rng);
        std::vector<int> seg_ents;
        for (int j = 0; j < slots; ++j) {
          if (!rng.chance(fresh_entity_prob(act)) && !patient_source.empty()) {
            seg_ents.push_back(rng.choice(patient_source));  // re-mention
            continue;
          }
          std::vector<int> source;
          if (act == ActLabel::PrescribeMedications || act == ActLabel::StateRequiredTest)
            source = !diag_anchor.empty() ? diag_anchor : patient_source;
          else
            source = patient_source;
          int e = walk.draw(source, rng);
          walk.mark(e);
          seg_ents.push_back(e);
        }
        if (act == ActLabel::MakeDiagnosis && !seg_ents.empty()) new_anchor = seg_ents;
        auto seg_tokens = render(act_template(act, rng), seg_ents, kg);
        doc.tokens.insert(doc.tokens.end(), seg_tokens.begin(), seg_tokens.end());
        doc_ents.insert(doc_ents.end(), seg_ents.begin(), seg_ents.end());
      }
      if (!new_anchor.empty()) diag_anchor = new_anchor;
      finish_utterance(doc, doc_ents);
      d.utterances.push_back(std::move(doc));
    }
    out.corpus.push_back(std::move(d));
  }

  nlohmann::ordered_json oracle;
  oracle["seed"] = cfg.seed;
  oracle["p_hop"] = cfg.p_hop;
  oracle["n_entities"] = cfg.n_entities;
  oracle["kg_degree"] = cfg.kg_degree;
  oracle["n_dialogues"] = cfg.n_dialogues;
  oracle["turns_min"] = cfg.turns_min;
  oracle["turns_max"] = cfg.turns_max;
  oracle["vocab_size"] = cfg.vocab_size;
  nlohmann::ordered_json jg;
  jg["close_state"] = cfg.grammar.close_state;
  jg["states"] = nlohmann::ordered_json::array();
  for (const auto& s : cfg.grammar.states) {
    std::vector<std::string> names;
    for (ActLabel a : s.list()) names.push_back(act_name(a));
    jg["states"].push_back(names);
  }
  jg["initial"] = cfg.grammar.initial;
  jg["transitions"] = cfg.grammar.trans;
  oracle["grammar"] = jg;
  oracle["hop_rule"] =
      "with probability p_hop each new mention is a fresh KG neighbor of its planted source "
      "set (previous utterance; diagnosis anchor for prescriptions and tests), falling back "
      "to any fresh frontier node, then to a source neighbor; otherwise uniform over all "
      "entities";
  out.oracle_json = oracle.dump(2);
  return out;
}

}  // namespace dfmed
