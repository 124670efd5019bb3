// dfmed: corpus generation, dual-flow and generator training, evaluation,
// flow inspection, and an interactive consultation REPL.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "dfmed/checkpoint.hpp"
#include "dfmed/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dfmed;

namespace {

struct ConfigBinder {
  AppConfig parsed;  // values written by CLI11
  std::string config_path;
  std::vector<std::string> ablations;
  struct Entry {
    CLI::Option* opt;
    std::function<void(AppConfig&, const AppConfig&)> copy;
  };
  std::vector<Entry> entries;

  template <typename T>
  void bind(CLI::App* cmd, const std::string& flag, T AppConfig::*field,
            const std::string& desc) {
    CLI::Option* opt = cmd->add_option(flag, parsed.*field, desc);
    entries.push_back({opt, [field](AppConfig& dst, const AppConfig& src) {
                         dst.*field = src.*field;
                       }});
  }

  void bind_ablation_flag(CLI::App* cmd, const std::string& flag, bool AppConfig::*field,
                          const std::string& desc) {
    CLI::Option* opt = cmd->add_flag(flag, desc);
    entries.push_back({opt, [field](AppConfig& dst, const AppConfig&) { dst.*field = false; }});
  }

  void add_common(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat JSON config file; flags override its fields");
    bind(cmd, "--lr", &AppConfig::lr, "learning rate");
    bind(cmd, "--batch-size", &AppConfig::batch_size, "minibatch size");
    bind(cmd, "--warmup", &AppConfig::warmup_steps, "linear warmup steps");
    bind(cmd, "--epochs", &AppConfig::epochs, "training epochs");
    bind(cmd, "--weight-decay", &AppConfig::weight_decay, "decoupled weight decay");
    bind(cmd, "--grad-clip", &AppConfig::grad_clip, "global gradient-norm clip");
    bind(cmd, "--seed", &AppConfig::seed, "RNG seed");
    bind(cmd, "--dim", &AppConfig::dim, "model dimension d");
    bind(cmd, "--gat-heads", &AppConfig::gat_heads, "GAT attention heads");
    bind(cmd, "--ctx-layers", &AppConfig::ctx_layers, "context encoder layers");
    bind(cmd, "--ctx-heads", &AppConfig::ctx_heads, "context encoder heads");
    bind(cmd, "--max-ctx", &AppConfig::max_ctx, "flow context window (tokens)");
    bind(cmd, "--negatives", &AppConfig::negatives, "sampled negatives per example");
    bind(cmd, "--topk", &AppConfig::topk, "entity selection size");
    bind(cmd, "--lambda-e", &AppConfig::lambda_e, "entity ranking loss weight");
    bind(cmd, "--lambda-a", &AppConfig::lambda_a, "act classification loss weight");
    bind(cmd, "--gen-layers", &AppConfig::gen_layers, "generator encoder/decoder layers");
    bind(cmd, "--gen-heads", &AppConfig::gen_heads, "generator attention heads");
    bind(cmd, "--gen-max-ctx", &AppConfig::gen_max_ctx, "generator history window");
    bind(cmd, "--max-gen-len", &AppConfig::max_gen_len, "decode length cap");
    bind(cmd, "--beam", &AppConfig::beam, "beam width (1 = greedy)");
    bind(cmd, "--threshold-grid", &AppConfig::threshold_grid, "calibration grid step");
    bind(cmd, "--n-entities", &AppConfig::n_entities, "synthetic KG entity count");
    bind(cmd, "--kg-degree", &AppConfig::kg_degree, "synthetic KG target degree");
    bind(cmd, "--n-dialogues", &AppConfig::n_dialogues, "synthetic corpus size");
    bind(cmd, "--turns-min", &AppConfig::turns_min, "min rounds per dialogue");
    bind(cmd, "--turns-max", &AppConfig::turns_max, "max rounds per dialogue");
    bind(cmd, "--p-hop", &AppConfig::p_hop, "one-hop transition probability");
    bind(cmd, "--synth-vocab", &AppConfig::synth_vocab, "entity-name token inventory");
    bind(cmd, "--train-frac", &AppConfig::train_frac, "train split fraction");
    bind(cmd, "--valid-frac", &AppConfig::valid_frac, "validation split fraction");
    bind_ablation_flag(cmd, "--no-act-flow", &AppConfig::act_flow, "ablate the act flow");
    bind_ablation_flag(cmd, "--no-entity-flow", &AppConfig::entity_flow,
                       "ablate the entity flow");
    bind_ablation_flag(cmd, "--no-e2a", &AppConfig::interweave_e2a,
                       "entity side stops attending to acts");
    bind_ablation_flag(cmd, "--no-a2e", &AppConfig::interweave_a2e,
                       "act side stops attending to entities");
    bind_ablation_flag(cmd, "--no-guidance", &AppConfig::use_guidance,
                       "decoder ignores the guidance stream");
    CLI::Option* no_iw = cmd->add_flag("--no-interweave", "remove the interweaver entirely");
    entries.push_back({no_iw, [](AppConfig& dst, const AppConfig&) {
                         dst.interweave_e2a = false;
                         dst.interweave_a2e = false;
                       }});
    cmd->add_option("--ablate", ablations,
                    "named ablation (no-act-flow|no-entity-flow|no-interweave|no-e2a|no-a2e|"
                    "no-guidance); repeatable")
        ->delimiter(',');
  }

  AppConfig finalize() {
    AppConfig final_cfg;
    if (!config_path.empty()) final_cfg.merge_json_file(config_path);
    for (const auto& e : entries)
      if (e.opt->count() > 0) e.copy(final_cfg, parsed);
    for (const auto& name : ablations) {
      if (name == "no-act-flow")
        final_cfg.act_flow = false;
      else if (name == "no-entity-flow")
        final_cfg.entity_flow = false;
      else if (name == "no-interweave")
        final_cfg.interweave_e2a = final_cfg.interweave_a2e = false;
      else if (name == "no-e2a")
        final_cfg.interweave_e2a = false;
      else if (name == "no-a2e")
        final_cfg.interweave_a2e = false;
      else if (name == "no-guidance")
        final_cfg.use_guidance = false;
      else
        throw CLI::ValidationError("--ablate", "unknown ablation '" + name + "'");
    }
    return final_cfg;
  }
};

struct LoadedData {
  KnowledgeGraph kg;
  Corpus corpus;
  Vocab vocab;
  CorpusSplit split;
};

LoadedData load_data(const std::string& kg_path, const std::string& corpus_path,
                     const AppConfig& cfg) {
  LoadedData d;
  d.kg = load_kg(kg_path);
  d.corpus = load_corpus(corpus_path);
  int dropped = apply_privacy_filter(d.corpus);
  if (dropped > 0)
    std::cerr << "[data] privacy filter dropped " << dropped << " dialogues\n";
  d.vocab = Vocab::build(d.corpus, d.kg);
  d.split = split_corpus(d.corpus, cfg.train_frac, cfg.valid_frac);
  std::cerr << "[data] " << d.corpus.size() << " dialogues (" << d.split.train.size() << "/"
            << d.split.valid.size() << "/" << d.split.test.size() << " train/valid/test), vocab "
            << d.vocab.size() << "\n";
  return d;
}

int cmd_gen_corpus(const AppConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  SynthOutput out = generate_synthetic(cfg.synth_config());
  save_kg(out.kg, out_dir + "/kg.tsv");
  save_corpus(out.corpus, out_dir + "/corpus.jsonl");
  std::ofstream oracle(out_dir + "/oracle.json");
  oracle << out.oracle_json << "\n";
  std::cout << "wrote " << out.corpus.size() << " dialogues, " << out.kg.size()
            << " entities to " << out_dir << "\n";
  return 0;
}

int cmd_train_flow(const AppConfig& cfg, const std::string& kg_path,
                   const std::string& corpus_path, const std::string& out_prefix) {
  LoadedData d = load_data(kg_path, corpus_path, cfg);
  auto train = build_examples(d.split.train, d.kg, d.vocab);
  auto valid = build_examples(d.split.valid, d.kg, d.vocab);
  FlowModel model(cfg.flow_config(), d.vocab, d.kg, cfg.seed);
  FlowCheckpointData best = train_flow(model, train, valid, cfg.train_config());
  save_flow_checkpoint(model, out_prefix);
  std::cout << "best epoch " << best.best_epoch << " (step " << best.steps << "): Weighted-F1 "
            << best.best_metrics.wf1 << ", R@" << cfg.topk << " "
            << (best.best_metrics.r_at_k ? std::to_string(*best.best_metrics.r_at_k) : "n/a")
            << "\ncheckpoint written to " << out_prefix << ".json/.bin\n";
  return 0;
}

int cmd_calibrate(const AppConfig& cfg, const std::string& kg_path,
                  const std::string& corpus_path, const std::string& ckpt,
                  const std::string& out_prefix) {
  LoadedData d = load_data(kg_path, corpus_path, cfg);
  auto model = load_flow_checkpoint(ckpt, d.kg);
  auto valid = build_examples(d.split.valid, d.kg, d.vocab);
  FlowValMetrics before = evaluate_flow_quick(*model, valid, model->thresholds());
  model->thresholds() = calibrate_act_thresholds(*model, valid, cfg.threshold_grid);
  FlowValMetrics after = evaluate_flow_quick(*model, valid, model->thresholds());
  std::string out = out_prefix.empty() ? ckpt : out_prefix;
  save_flow_checkpoint(*model, out);
  std::cout << "validation Weighted-F1: " << before.wf1 << " -> " << after.wf1
            << "\nthresholds:";
  for (int j = 0; j < kNumActs; ++j)
    std::cout << " " << act_name(static_cast<ActLabel>(j)) << "="
              << model->thresholds()[static_cast<std::size_t>(j)];
  std::cout << "\ncheckpoint written to " << out << ".json/.bin\n";
  return 0;
}

int cmd_train_gen(const AppConfig& cfg, const std::string& kg_path,
                  const std::string& corpus_path, const std::string& flow_ckpt,
                  const std::string& out_prefix) {
  LoadedData d = load_data(kg_path, corpus_path, cfg);
  auto flow = load_flow_checkpoint(flow_ckpt, d.kg);
  auto train = build_examples(d.split.train, d.kg, d.vocab);
  auto valid = build_examples(d.split.valid, d.kg, d.vocab);
  // gold acts for training guidance, predicted acts for validation decoding
  auto train_guid = precompute_guidance(*flow, train, /*gold_acts=*/true);
  auto valid_guid = precompute_guidance(*flow, valid, /*gold_acts=*/false);
  GenModel model(cfg.gen_config(), flow->vocab(), d.kg, cfg.seed);
  GenCheckpointData best =
      train_generator(model, train, train_guid, valid, valid_guid, cfg.train_config());
  save_gen_checkpoint(model, out_prefix);
  std::cout << "best epoch " << best.best_epoch << ": validation B-4 " << best.best_val_bleu4
            << "\ncheckpoint written to " << out_prefix << ".json/.bin\n";
  return 0;
}

int cmd_eval(const AppConfig& cfg, bool cfg_has_ablations, const std::string& kg_path,
             const std::string& corpus_path, const std::string& flow_ckpt,
             const std::string& gen_ckpt, const std::string& report_path,
             const std::string& dump_path, const std::string& split_name) {
  LoadedData d = load_data(kg_path, corpus_path, cfg);
  const Corpus* part = &d.split.test;
  if (split_name == "valid")
    part = &d.split.valid;
  else if (split_name == "train")
    part = &d.split.train;
  else if (split_name != "test")
    throw CLI::ValidationError("--split", "must be train|valid|test");
  auto examples = build_examples(*part, d.kg, d.vocab);

  auto flow = load_flow_checkpoint(flow_ckpt, d.kg);
  if (cfg_has_ablations)
    flow->set_ablations(cfg.act_flow, cfg.entity_flow, cfg.interweave_e2a, cfg.interweave_a2e);
  std::unique_ptr<GenModel> gen;
  if (!gen_ckpt.empty()) {
    gen = load_gen_checkpoint(gen_ckpt, d.kg);
    if (!cfg.use_guidance) gen->set_use_guidance(false);
  }

  EvalOutput out = evaluate_pipeline(*flow, gen.get(), examples, d.kg);
  std::cout << out.report.to_table();
  if (!report_path.empty()) {
    std::ofstream rf(report_path);
    rf << out.report.to_json() << "\n";
    std::cerr << "[eval] report written to " << report_path << "\n";
  }
  if (!dump_path.empty()) {
    std::ofstream df(dump_path);
    for (const auto& p : out.predictions) df << prediction_to_json_line(p) << "\n";
    std::cerr << "[eval] predictions written to " << dump_path << "\n";
  }
  return 0;
}

int cmd_inspect(const AppConfig& cfg, const std::string& kg_path,
                const std::string& corpus_path, const std::string& flow_ckpt,
                const std::string& gen_ckpt, const std::string& dialogue_id) {
  LoadedData d = load_data(kg_path, corpus_path, cfg);
  auto flow = load_flow_checkpoint(flow_ckpt, d.kg);
  std::unique_ptr<GenModel> gen;
  if (!gen_ckpt.empty()) gen = load_gen_checkpoint(gen_ckpt, d.kg);

  const Dialogue* dialogue = nullptr;
  for (const auto& dd : d.corpus)
    if (dd.id == dialogue_id) dialogue = &dd;
  if (!dialogue && !dialogue_id.empty() &&
      dialogue_id.find_first_not_of("0123456789") == std::string::npos) {
    std::size_t idx = std::stoul(dialogue_id);
    if (idx < d.corpus.size()) dialogue = &d.corpus[idx];
  }
  if (!dialogue) {
    std::cerr << "error: no dialogue '" << dialogue_id << "' in " << corpus_path << "\n";
    return 1;
  }

  auto examples = build_examples(*dialogue, d.kg, d.vocab);
  std::cout << "dialogue " << dialogue->id << " (" << dialogue->rounds() << " rounds)\n";
  for (const auto& ex : examples) {
    FlowForward f = flow->forward(ex);
    std::cout << "\nturn " << ex.target_turn << "\n  act probabilities:";
    for (int j = 0; j < kNumActs; ++j)
      std::cout << " " << act_name(static_cast<ActLabel>(j)) << "="
                << f.act_probs[static_cast<std::size_t>(j)];
    std::cout << "\n  predicted acts:";
    for (ActLabel a : f.predicted_acts.list()) std::cout << " " << act_name(a);
    std::cout << "\n  top-" << flow->config().topk << " entities:";
    for (std::size_t i = 0; i < f.topk_entities.size(); ++i) {
      auto it = std::find(f.candidates.begin(), f.candidates.end(), f.topk_entities[i]);
      std::cout << " " << d.kg.joined_name(f.topk_entities[i]) << "("
                << f.scores[static_cast<std::size_t>(it - f.candidates.begin())] << ")";
    }
    std::cout << "\n  gold acts:";
    for (ActLabel a : ex.target_acts.list()) std::cout << " " << act_name(a);
    if (gen) {
      Guidance g{f.predicted_acts, f.topk_entities};
      GenDiagnostics diag;
      auto hyp = gen->vocab().decode(gen->decode(ex, g, &diag));
      std::cout << "\n  generated:";
      for (const auto& tok : hyp) std::cout << " " << tok;
      std::cout << "\n  decoder gate mean per layer:";
      for (double gv : diag.avg_gate_per_layer) std::cout << " " << gv;
    }
    std::cout << "\n";
  }
  return 0;
}

int cmd_chat(const AppConfig& cfg, const std::string& kg_path, const std::string& flow_ckpt,
             const std::string& gen_ckpt) {
  (void)cfg;
  KnowledgeGraph kg = load_kg(kg_path);
  auto flow = load_flow_checkpoint(flow_ckpt, kg);
  auto gen = load_gen_checkpoint(gen_ckpt, kg);
  const Vocab& vocab = flow->vocab();

  Dialogue history;
  history.id = "chat";
  std::cout << "type a patient utterance per line; EOF (Ctrl-D) ends the session\n";
  std::string line;
  while (std::cout << "patient> " << std::flush, std::getline(std::cin, line)) {
    std::istringstream is(line);
    Utterance patient;
    patient.role = Role::Patient;
    std::string tok;
    while (is >> tok) patient.tokens.push_back(tok);
    if (patient.tokens.empty()) continue;
    for (int id : match_entities(patient.tokens, kg))
      patient.entities.push_back(kg.joined_name(id));
    history.utterances.push_back(patient);

    TrainingExample ex = build_inference_example(history, kg, vocab);
    FlowForward f = flow->forward(ex);
    std::cout << "  acts:";
    for (ActLabel a : f.predicted_acts.list()) std::cout << " " << act_name(a);
    std::cout << "\n  top entities:";
    for (int id : f.topk_entities) std::cout << " " << kg.joined_name(id);
    Guidance g{f.predicted_acts, f.topk_entities};
    auto response = gen->vocab().decode(gen->decode(ex, g));
    std::cout << "\ndoctor>";
    for (const auto& t : response) std::cout << " " << t;
    std::cout << "\n";

    Utterance doctor;
    doctor.role = Role::Doctor;
    doctor.tokens = response.empty() ? std::vector<std::string>{"[UNK]"} : response;
    for (int id : match_entities(doctor.tokens, kg)) doctor.entities.push_back(kg.joined_name(id));
    doctor.acts = f.predicted_acts;
    history.utterances.push_back(doctor);
  }
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* f64 = std::getenv("DFMED_F64"); f64 && std::string(f64) == "1")
    set_precision(Precision::F64);

  CLI::App app{"dual-flow medical dialogue modeling"};
  app.require_subcommand(1);

  std::string out_dir = "data";
  std::string kg_path, corpus_path, flow_ckpt, gen_ckpt, out_prefix, report_path, dump_path;
  std::string split_name = "test", dialogue_id;

  auto* gen_corpus = app.add_subcommand("gen-corpus", "generate a synthetic corpus + KG");
  ConfigBinder b_gen;
  b_gen.add_common(gen_corpus);
  gen_corpus->add_option("--out", out_dir, "output directory")->required();

  auto* train_flow_cmd = app.add_subcommand("train-flow", "train the dual-flow model");
  ConfigBinder b_tf;
  b_tf.add_common(train_flow_cmd);
  train_flow_cmd->add_option("--kg", kg_path, "KG edge list (TSV)")->required();
  train_flow_cmd->add_option("--corpus", corpus_path, "corpus JSONL")->required();
  train_flow_cmd->add_option("--out", out_prefix, "checkpoint prefix")->required();

  auto* calibrate_cmd =
      app.add_subcommand("calibrate", "per-act threshold selection on the validation split");
  ConfigBinder b_cal;
  b_cal.add_common(calibrate_cmd);
  calibrate_cmd->add_option("--kg", kg_path)->required();
  calibrate_cmd->add_option("--corpus", corpus_path)->required();
  calibrate_cmd->add_option("--flow-ckpt", flow_ckpt)->required();
  calibrate_cmd->add_option("--out", out_prefix, "output prefix (default: overwrite input)");

  auto* train_gen_cmd = app.add_subcommand("train-gen", "train the response generator");
  ConfigBinder b_tg;
  b_tg.add_common(train_gen_cmd);
  train_gen_cmd->add_option("--kg", kg_path)->required();
  train_gen_cmd->add_option("--corpus", corpus_path)->required();
  train_gen_cmd->add_option("--flow-ckpt", flow_ckpt, "frozen flow checkpoint for guidance")
      ->required();
  train_gen_cmd->add_option("--out", out_prefix)->required();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoints on a split");
  ConfigBinder b_ev;
  b_ev.add_common(eval_cmd);
  eval_cmd->add_option("--kg", kg_path)->required();
  eval_cmd->add_option("--corpus", corpus_path)->required();
  eval_cmd->add_option("--flow-ckpt", flow_ckpt)->required();
  eval_cmd->add_option("--gen-ckpt", gen_ckpt, "optional generator checkpoint");
  eval_cmd->add_option("--report", report_path, "EvalReport JSON output");
  eval_cmd->add_option("--dump", dump_path, "prediction dump JSONL output");
  eval_cmd->add_option("--split", split_name, "train|valid|test (default test)");

  auto* inspect_cmd = app.add_subcommand("inspect", "per-turn flow and gate diagnostics");
  ConfigBinder b_in;
  b_in.add_common(inspect_cmd);
  inspect_cmd->add_option("--kg", kg_path)->required();
  inspect_cmd->add_option("--corpus", corpus_path)->required();
  inspect_cmd->add_option("--flow-ckpt", flow_ckpt)->required();
  inspect_cmd->add_option("--gen-ckpt", gen_ckpt);
  inspect_cmd->add_option("--dialogue", dialogue_id, "dialogue id or index")->required();

  auto* chat_cmd = app.add_subcommand("chat", "interactive consultation REPL");
  ConfigBinder b_ch;
  b_ch.add_common(chat_cmd);
  chat_cmd->add_option("--kg", kg_path)->required();
  chat_cmd->add_option("--flow-ckpt", flow_ckpt)->required();
  chat_cmd->add_option("--gen-ckpt", gen_ckpt)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_corpus->parsed()) return cmd_gen_corpus(b_gen.finalize(), out_dir);
    if (train_flow_cmd->parsed())
      return cmd_train_flow(b_tf.finalize(), kg_path, corpus_path, out_prefix);
    if (calibrate_cmd->parsed())
      return cmd_calibrate(b_cal.finalize(), kg_path, corpus_path, flow_ckpt, out_prefix);
    if (train_gen_cmd->parsed())
      return cmd_train_gen(b_tg.finalize(), kg_path, corpus_path, flow_ckpt, out_prefix);
    if (eval_cmd->parsed()) {
      AppConfig cfg = b_ev.finalize();
      bool has_ablation = !cfg.act_flow || !cfg.entity_flow || !cfg.interweave_e2a ||
                          !cfg.interweave_a2e;
      return cmd_eval(cfg, has_ablation, kg_path, corpus_path, flow_ckpt, gen_ckpt,
                      report_path, dump_path, split_name);
    }
    if (inspect_cmd->parsed())
      return cmd_inspect(b_in.finalize(), kg_path, corpus_path, flow_ckpt, gen_ckpt,
                         dialogue_id);
    if (chat_cmd->parsed()) return cmd_chat(b_ch.finalize(), kg_path, flow_ckpt, gen_ckpt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
