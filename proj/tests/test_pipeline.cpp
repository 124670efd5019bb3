#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dfmed/pipeline.hpp"

using namespace dfmed;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(DFMED_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::string run_cli_capture(const std::string& args) {
  std::string cmd = std::string(DFMED_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::string out;
  char buf[512];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), p)) out.append(buf, n);
  pclose(p);
  return out;
}

struct TinySetup {
  SynthOutput synth;
  Vocab vocab;
  std::vector<TrainingExample> test_examples;
  FlowModel flow;

  TinySetup()
      : synth(generate_synthetic([] {
          SynthConfig c;
          c.n_entities = 40;
          c.kg_degree = 3;
          c.n_dialogues = 30;
          c.turns_min = 2;
          c.turns_max = 4;
          c.seed = 9;
          return c;
        }())),
        vocab(Vocab::build(synth.corpus, synth.kg)),
        test_examples(build_examples(
            Corpus(synth.corpus.end() - 5, synth.corpus.end()), synth.kg, vocab)),
        flow(
            [] {
              FlowConfig f;
              f.dim = 16;
              f.gat_heads = 2;
              f.ctx_heads = 2;
              return f;
            }(),
            vocab, synth.kg, 3) {}
};

}  // namespace

TEST_CASE("split_corpus is a deterministic index split") {
  Corpus c;
  for (int i = 0; i < 10; ++i) {
    Dialogue d;
    d.id = "d" + std::to_string(i);
    d.utterances = {Utterance{Role::Patient, {"hi"}, {}, {}},
                    Utterance{Role::Doctor, {"yes"}, {}, ActSet::of({ActLabel::Chitchat})}};
    c.push_back(d);
  }
  CorpusSplit s = split_corpus(c, 0.8, 0.1);
  CHECK(s.train.size() == 8);
  CHECK(s.valid.size() == 1);
  CHECK(s.test.size() == 1);
  CHECK(s.train[0].id == "d0");
  CHECK(s.test[0].id == "d9");
  CHECK_THROWS_AS(split_corpus(c, 0.9, 0.2), std::invalid_argument);
}

TEST_CASE("evaluate_pipeline fills flow metrics and baselines") {
  TinySetup ts;
  EvalOutput out = evaluate_pipeline(ts.flow, nullptr, ts.test_examples, ts.synth.kg);
  CHECK(out.report.n_examples == static_cast<int>(ts.test_examples.size()));
  CHECK(out.report.wf1 >= 0.0);
  CHECK(out.report.majority_wf1 > 0.0);
  CHECK(!out.report.majority_act.empty());
  CHECK(out.predictions.size() == ts.test_examples.size());
  // without a generator there are no generation metrics
  CHECK(out.report.b1 == 0.0);
  // report json round-trips
  EvalReport back = EvalReport::from_json(out.report.to_json());
  CHECK(back.to_json() == out.report.to_json());
}

TEST_CASE("evaluate_pipeline with a generator produces hypotheses and gate stats") {
  TinySetup ts;
  GenConfig gc;
  gc.dim = 16;
  gc.layers = 1;
  gc.heads = 2;
  gc.max_gen_len = 6;
  GenModel gen(gc, ts.vocab, ts.synth.kg, 4);
  EvalOutput out = evaluate_pipeline(ts.flow, &gen, ts.test_examples, ts.synth.kg);
  CHECK(out.report.avg_gate.size() == 1);
  CHECK(out.report.avg_gate[0] > 0.0);
  CHECK(out.report.avg_gate[0] < 1.0);
  bool any_hyp = false;
  for (const auto& p : out.predictions) any_hyp |= !p.hypothesis.empty();
  CHECK(any_hyp);
  // prediction dump schema
  std::string line = prediction_to_json_line(out.predictions[0]);
  CHECK(line.find("\"id\"") != std::string::npos);
  CHECK(line.find("\"t\"") != std::string::npos);
  CHECK(line.find("\"acts\"") != std::string::npos);
  CHECK(line.find("\"entities\"") != std::string::npos);
  CHECK(line.find("\"hypothesis\"") != std::string::npos);
  CHECK(line.find("\"reference\"") != std::string::npos);
}

TEST_CASE("app config file merge and overrides") {
  AppConfig cfg;
  std::ofstream("/tmp/dfmed_test_cfg.json")
      << R"({"lr": 0.005, "dim": 32, "use_guidance": false, "p_hop": 0.5})";
  cfg.merge_json_file("/tmp/dfmed_test_cfg.json");
  CHECK(cfg.lr == doctest::Approx(0.005));
  CHECK(cfg.dim == 32);
  CHECK_FALSE(cfg.use_guidance);
  CHECK(cfg.p_hop == doctest::Approx(0.5));
  CHECK(cfg.flow_config().dim == 32);
  CHECK_FALSE(cfg.gen_config().use_guidance);
  CHECK(cfg.synth_config().p_hop == doctest::Approx(0.5));

  std::ofstream("/tmp/dfmed_test_cfg_bad.json") << R"({"learning_rate": 1})";
  AppConfig cfg2;
  CHECK_THROWS_WITH_AS(cfg2.merge_json_file("/tmp/dfmed_test_cfg_bad.json"),
                       doctest::Contains("learning_rate"), std::invalid_argument);
}

TEST_CASE("cli gen-corpus is byte-identical under the same seed") {
  REQUIRE(run_cli("gen-corpus --out /tmp/dfmed_cli_a --seed 7 --n-dialogues 20 "
                  "--n-entities 30 --turns-min 2 --turns-max 3") == 0);
  REQUIRE(run_cli("gen-corpus --out /tmp/dfmed_cli_b --seed 7 --n-dialogues 20 "
                  "--n-entities 30 --turns-min 2 --turns-max 3") == 0);
  CHECK(slurp("/tmp/dfmed_cli_a/corpus.jsonl") == slurp("/tmp/dfmed_cli_b/corpus.jsonl"));
  CHECK(slurp("/tmp/dfmed_cli_a/kg.tsv") == slurp("/tmp/dfmed_cli_b/kg.tsv"));
  CHECK(slurp("/tmp/dfmed_cli_a/oracle.json") == slurp("/tmp/dfmed_cli_b/oracle.json"));

  REQUIRE(run_cli("gen-corpus --out /tmp/dfmed_cli_c --seed 8 --n-dialogues 20 "
                  "--n-entities 30 --turns-min 2 --turns-max 3") == 0);
  CHECK(slurp("/tmp/dfmed_cli_a/corpus.jsonl") != slurp("/tmp/dfmed_cli_c/corpus.jsonl"));
}

TEST_CASE("cli end-to-end: train, calibrate, train-gen, eval with ablation, inspect") {
  std::string base = "gen-corpus --out /tmp/dfmed_cli_e2e --seed 11 --n-dialogues 40 "
                     "--n-entities 30 --turns-min 2 --turns-max 3";
  REQUIRE(run_cli(base) == 0);
  std::string data = "--kg /tmp/dfmed_cli_e2e/kg.tsv --corpus /tmp/dfmed_cli_e2e/corpus.jsonl";
  REQUIRE(run_cli("train-flow " + data +
                  " --out /tmp/dfmed_cli_e2e/flow --epochs 1 --dim 16 --gat-heads 2 "
                  "--ctx-heads 2 --warmup 5 --seed 1") == 0);
  REQUIRE(run_cli("calibrate " + data + " --flow-ckpt /tmp/dfmed_cli_e2e/flow") == 0);
  REQUIRE(run_cli("train-gen " + data +
                  " --flow-ckpt /tmp/dfmed_cli_e2e/flow --out /tmp/dfmed_cli_e2e/gen "
                  "--epochs 1 --dim 16 --gen-layers 1 --gen-heads 2 --warmup 5 --seed 1 "
                  "--max-gen-len 8") == 0);

  std::string eval_out = run_cli_capture(
      "eval " + data +
      " --flow-ckpt /tmp/dfmed_cli_e2e/flow --gen-ckpt /tmp/dfmed_cli_e2e/gen "
      "--report /tmp/dfmed_cli_e2e/report.json --dump /tmp/dfmed_cli_e2e/preds.jsonl "
      "--ablate no-interweave");
  CHECK(eval_out.find("B-1") != std::string::npos);
  CHECK(eval_out.find("E-F1") != std::string::npos);
  CHECK(eval_out.find("Weighted-F1") != std::string::npos);
  EvalReport rep = EvalReport::from_json(slurp("/tmp/dfmed_cli_e2e/report.json"));
  CHECK(rep.n_examples > 0);
  CHECK(slurp("/tmp/dfmed_cli_e2e/preds.jsonl").find("\"hypothesis\"") != std::string::npos);

  std::string inspect_out = run_cli_capture(
      "inspect " + data +
      " --flow-ckpt /tmp/dfmed_cli_e2e/flow --gen-ckpt /tmp/dfmed_cli_e2e/gen --dialogue 0");
  CHECK(inspect_out.find("act probabilities") != std::string::npos);
  CHECK(inspect_out.find("gate mean per layer") != std::string::npos);

  // missing checkpoint -> nonzero exit
  CHECK(run_cli("eval " + data + " --flow-ckpt /tmp/dfmed_cli_e2e/nonexistent") != 0);
}

TEST_CASE("cli chat surfaces one-hop candidates for a mentioned entity") {
  // p_hop 1.0 toy: every candidate is one-hop from a mention by construction
  REQUIRE(run_cli("gen-corpus --out /tmp/dfmed_cli_chat --seed 13 --n-dialogues 30 "
                  "--n-entities 25 --kg-degree 3 --p-hop 1.0 --turns-min 2 --turns-max 3") == 0);
  std::string data =
      "--kg /tmp/dfmed_cli_chat/kg.tsv --corpus /tmp/dfmed_cli_chat/corpus.jsonl";
  REQUIRE(run_cli("train-flow " + data +
                  " --out /tmp/dfmed_cli_chat/flow --epochs 1 --dim 16 --gat-heads 2 "
                  "--ctx-heads 2 --warmup 5 --seed 1") == 0);
  REQUIRE(run_cli("train-gen " + data +
                  " --flow-ckpt /tmp/dfmed_cli_chat/flow --out /tmp/dfmed_cli_chat/gen "
                  "--epochs 1 --dim 16 --gen-layers 1 --gen-heads 2 --warmup 5 --seed 1 "
                  "--max-gen-len 8") == 0);

  KnowledgeGraph kg = load_kg("/tmp/dfmed_cli_chat/kg.tsv");
  std::string mention = kg.joined_name(0);
  std::string cmd = std::string("echo 'i feel ") + mention + " today' | " + DFMED_CLI_PATH +
                    " chat --kg /tmp/dfmed_cli_chat/kg.tsv --flow-ckpt "
                    "/tmp/dfmed_cli_chat/flow --gen-ckpt /tmp/dfmed_cli_chat/gen 2>/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::string out;
  char buf[512];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), p)) out.append(buf, n);
  pclose(p);

  auto pos = out.find("top entities:");
  REQUIRE(pos != std::string::npos);
  std::string line = out.substr(pos, out.find('\n', pos) - pos);
  // at least one listed candidate is a one-hop neighbor of the mention
  bool found_neighbor = false;
  for (int nb : kg.neighbors(0))
    if (line.find(kg.joined_name(nb)) != std::string::npos) found_neighbor = true;
  CHECK(found_neighbor);
  CHECK(out.find("doctor>") != std::string::npos);
}
