#include "dfmed/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace dfmed {

CorpusSplit split_corpus(const Corpus& corpus, double train_frac, double valid_frac) {
  if (train_frac <= 0 || valid_frac < 0 || train_frac + valid_frac >= 1.0)
    throw std::invalid_argument("split_corpus: fractions must satisfy 0 < train, train+valid < 1");
  CorpusSplit s;
  std::size_t n = corpus.size();
  std::size_t n_train = static_cast<std::size_t>(train_frac * static_cast<double>(n));
  std::size_t n_valid = static_cast<std::size_t>(valid_frac * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train)
      s.train.push_back(corpus[i]);
    else if (i < n_train + n_valid)
      s.valid.push_back(corpus[i]);
    else
      s.test.push_back(corpus[i]);
  }
  return s;
}

std::string prediction_to_json_line(const PredictionRecord& p) {
  nlohmann::ordered_json j;
  j["id"] = p.id;
  j["t"] = p.t;
  j["acts"] = p.acts;
  j["entities"] = p.entities;
  j["hypothesis"] = p.hypothesis;
  j["reference"] = p.reference;
  return j.dump();
}

EvalOutput evaluate_pipeline(const FlowModel& flow, const GenModel* gen,
                             const std::vector<TrainingExample>& test,
                             const KnowledgeGraph& kg) {
  NoGradGuard ng;
  EvalOutput out;
  EvalReport& rep = out.report;
  rep.topk = flow.config().topk;
  rep.thresholds = flow.thresholds();
  rep.n_examples = static_cast<int>(test.size());

  std::vector<ActSet> pred_acts, gold_acts;
  std::vector<ScoredCandidates> scored;
  std::vector<std::vector<int>> gold_entities;
  std::vector<int> pool_sizes, gold_counts;
  std::vector<TokenSeq> hyps, refs;
  std::vector<std::vector<std::string>> gold_names;
  std::vector<double> gate_sums;
  long gate_examples = 0;

  for (const auto& ex : test) {
    FlowForward f = flow.forward(ex);
    pred_acts.push_back(f.predicted_acts);
    gold_acts.push_back(ex.target_acts);
    scored.push_back({f.candidates, f.scores});
    gold_entities.push_back(ex.target_entities);
    pool_sizes.push_back(static_cast<int>(f.candidates.size()));
    gold_counts.push_back(static_cast<int>(ex.target_entities.size()));
    if (!ex.target_entities.empty()) ++rep.n_examples_with_gold;

    PredictionRecord pr;
    pr.id = ex.dialogue_id;
    pr.t = ex.target_turn;
    for (ActLabel a : f.predicted_acts.list()) pr.acts.push_back(act_name(a));
    for (int id : f.topk_entities) pr.entities.push_back(kg.joined_name(id));
    pr.reference = ex.target_tokens;

    if (gen) {
      Guidance g{f.predicted_acts, f.topk_entities};
      GenDiagnostics diag;
      pr.hypothesis = gen->vocab().decode(gen->decode(ex, g, &diag));
      hyps.push_back(pr.hypothesis);
      refs.push_back(ex.target_tokens);
      gold_names.push_back(ex.gold_entity_names);
      if (!diag.avg_gate_per_layer.empty()) {
        if (gate_sums.empty()) gate_sums.assign(diag.avg_gate_per_layer.size(), 0.0);
        for (std::size_t l = 0; l < diag.avg_gate_per_layer.size(); ++l)
          gate_sums[l] += diag.avg_gate_per_layer[l];
        ++gate_examples;
      }
    }
    out.predictions.push_back(std::move(pr));
  }

  WeightedF1Result wf = weighted_f1(pred_acts, gold_acts);
  rep.wf1 = wf.weighted;
  rep.per_act = wf.per_act;
  rep.r_at_k = recall_at_k(scored, gold_entities, rep.topk);
  rep.random_r_at_k = random_ranking_recall_at_k(pool_sizes, gold_counts, rep.topk);

  // always-predict-the-majority-act baseline
  std::array<long, kNumActs> occurrence{};
  for (const auto& g : gold_acts)
    for (ActLabel a : g.list()) ++occurrence[static_cast<std::size_t>(a)];
  int majority = 0;
  for (int j = 1; j < kNumActs; ++j)
    if (occurrence[static_cast<std::size_t>(j)] > occurrence[static_cast<std::size_t>(majority)])
      majority = j;
  rep.majority_act = act_name(static_cast<ActLabel>(majority));
  std::vector<ActSet> majority_pred(gold_acts.size(),
                                    ActSet::of({static_cast<ActLabel>(majority)}));
  rep.majority_wf1 = weighted_f1(majority_pred, gold_acts).weighted;

  if (gen && !hyps.empty()) {
    rep.b1 = bleu(hyps, refs, 1);
    rep.b2 = bleu(hyps, refs, 2);
    rep.b4 = bleu(hyps, refs, 4);
    RougeResult r1 = rouge(hyps, refs, 1);
    RougeResult r2 = rouge(hyps, refs, 2);
    rep.r1 = r1.f1;
    rep.r2 = r2.f1;
    rep.rouge_pairs_skipped = r1.pairs_skipped;
    EntityPrf prf = entity_prf(hyps, gold_names, kg);
    rep.e_p = prf.precision;
    rep.e_r = prf.recall;
    rep.e_f1 = prf.f1;
    if (gate_examples > 0)
      for (double s : gate_sums) rep.avg_gate.push_back(s / static_cast<double>(gate_examples));
  }
  return out;
}

FlowConfig AppConfig::flow_config() const {
  FlowConfig f;
  f.dim = dim;
  f.gat_heads = gat_heads;
  f.ctx_layers = ctx_layers;
  f.ctx_heads = ctx_heads;
  f.max_ctx = max_ctx;
  f.negatives = negatives;
  f.topk = topk;
  f.lambda_e = lambda_e;
  f.lambda_a = lambda_a;
  f.act_flow = act_flow;
  f.entity_flow = entity_flow;
  f.interweave_e2a = interweave_e2a;
  f.interweave_a2e = interweave_a2e;
  return f;
}

GenConfig AppConfig::gen_config() const {
  GenConfig g;
  g.dim = dim;
  g.layers = gen_layers;
  g.heads = gen_heads;
  g.max_ctx = gen_max_ctx;
  g.max_gen_len = max_gen_len;
  g.beam = beam;
  g.use_guidance = use_guidance;
  return g;
}

TrainConfig AppConfig::train_config() const {
  TrainConfig t;
  t.lr = lr;
  t.batch_size = batch_size;
  t.warmup_steps = warmup_steps;
  t.epochs = epochs;
  t.weight_decay = weight_decay;
  t.grad_clip = grad_clip;
  t.seed = seed;
  return t;
}

SynthConfig AppConfig::synth_config() const {
  SynthConfig s;
  s.n_entities = n_entities;
  s.kg_degree = kg_degree;
  s.n_dialogues = n_dialogues;
  s.turns_min = turns_min;
  s.turns_max = turns_max;
  s.p_hop = p_hop;
  s.vocab_size = synth_vocab;
  s.seed = seed;
  return s;
}

void AppConfig::merge_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  if (!j.is_object()) throw std::invalid_argument("config file must be a flat JSON object");

  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("lr", lr);
  get("batch_size", batch_size);
  get("warmup_steps", warmup_steps);
  get("epochs", epochs);
  get("weight_decay", weight_decay);
  get("grad_clip", grad_clip);
  get("seed", seed);
  get("dim", dim);
  get("gat_heads", gat_heads);
  get("ctx_layers", ctx_layers);
  get("ctx_heads", ctx_heads);
  get("max_ctx", max_ctx);
  get("negatives", negatives);
  get("topk", topk);
  get("lambda_e", lambda_e);
  get("lambda_a", lambda_a);
  get("act_flow", act_flow);
  get("entity_flow", entity_flow);
  get("interweave_e2a", interweave_e2a);
  get("interweave_a2e", interweave_a2e);
  get("gen_layers", gen_layers);
  get("gen_heads", gen_heads);
  get("gen_max_ctx", gen_max_ctx);
  get("max_gen_len", max_gen_len);
  get("beam", beam);
  get("use_guidance", use_guidance);
  get("threshold_grid", threshold_grid);
  get("n_entities", n_entities);
  get("kg_degree", kg_degree);
  get("n_dialogues", n_dialogues);
  get("turns_min", turns_min);
  get("turns_max", turns_max);
  get("p_hop", p_hop);
  get("synth_vocab", synth_vocab);
  get("train_frac", train_frac);
  get("valid_frac", valid_frac);

  static const std::set<std::string> known = {
      "lr", "batch_size", "warmup_steps", "epochs", "weight_decay", "grad_clip", "seed",
      "dim", "gat_heads", "ctx_layers", "ctx_heads", "max_ctx", "negatives", "topk",
      "lambda_e", "lambda_a", "act_flow", "entity_flow", "interweave_e2a", "interweave_a2e",
      "gen_layers", "gen_heads", "gen_max_ctx", "max_gen_len", "beam", "use_guidance",
      "threshold_grid", "n_entities", "kg_degree", "n_dialogues", "turns_min", "turns_max",
      "p_hop", "synth_vocab", "train_frac", "valid_frac"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key))
      throw std::invalid_argument("config file: unknown field '" + key + "'");
}

}  // namespace dfmed
