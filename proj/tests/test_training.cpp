#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dfmed/checkpoint.hpp"
#include "dfmed/metrics.hpp"
#include "dfmed/synth.hpp"
#include "dfmed/training.hpp"

using namespace dfmed;

TEST_CASE("adamw: zero grad and zero decay is the identity") {
  PrecisionGuard f64(Precision::F64);
  ParamStore ps;
  Tensor t = ps.constant("w", 1, 3, 1.5);
  ps.zero_grad();
  AdamW opt;
  opt.step(ps, 0.1, 0.0);
  for (int j = 0; j < 3; ++j) CHECK(t.at(0, j) == 1.5);
}

TEST_CASE("adamw single step matches the hand-computed update") {
  PrecisionGuard f64(Precision::F64);
  ParamStore ps;
  Tensor t = ps.constant("w", 1, 2, 1.0);
  // plant gradients g = (0.5, -0.25)
  {
    Tensor loss = sum_all(mul(t, Tensor::row({0.5, -0.25})));
    loss.backward();
  }
  AdamW opt;
  double lr = 0.1;
  opt.step(ps, lr, 0.0);
  // from zero moments: m̂ = g, v̂ = g², update = lr * g / (|g| + eps)
  auto expect = [&](double g) { return 1.0 - lr * (g / (std::sqrt(g * g) + 1e-8)); };
  CHECK(std::abs(t.at(0, 0) - expect(0.5)) < 1e-7);
  CHECK(std::abs(t.at(0, 1) - expect(-0.25)) < 1e-7);
}

TEST_CASE("adamw decay-only shrinks parameters by lr*wd*theta") {
  PrecisionGuard f64(Precision::F64);
  ParamStore ps;
  Tensor t = ps.constant("w", 1, 1, 2.0);
  ps.zero_grad();
  AdamW opt;
  opt.step(ps, 0.1, 0.01);
  CHECK(t.at(0, 0) == doctest::Approx(2.0 - 0.1 * 0.01 * 2.0).epsilon(1e-12));
}

TEST_CASE("adamw skips steps with non-finite gradients") {
  ParamStore ps;
  Tensor t = ps.constant("w", 1, 1, 1.0);
  t.node()->ensure_grad();
  t.node()->grad[0] = std::nan("");
  AdamW opt;
  opt.step(ps, 0.1, 0.0);
  CHECK(opt.skipped_steps() == 1);
  CHECK(t.at(0, 0) == 1.0);
}

TEST_CASE("gradient clipping rescales to the max norm") {
  PrecisionGuard f64(Precision::F64);
  ParamStore ps;
  Tensor t = ps.constant("w", 1, 2, 0.0);
  {
    Tensor loss = sum_all(mul(t, Tensor::row({3.0, 4.0})));
    loss.backward();
  }
  double pre = clip_grad_norm(ps, 1.0);
  CHECK(pre == doctest::Approx(5.0));
  CHECK(ps.grad_norm() == doctest::Approx(1.0));
  CHECK(t.grad_at(0, 0) == doctest::Approx(0.6));
}

TEST_CASE("lr schedule: warmup then linear decay, continuous at the boundary") {
  CHECK(lr_schedule(0, 1.0, 100, 1000) == 0.0);
  CHECK(lr_schedule(50, 1.0, 100, 1000) == doctest::Approx(0.5));
  CHECK(lr_schedule(100, 1.0, 100, 1000) == doctest::Approx(1.0));
  CHECK(lr_schedule(99, 1.0, 100, 1000) == doctest::Approx(0.99));
  CHECK(lr_schedule(101, 1.0, 100, 1000) == doctest::Approx(1.0 - 1.0 / 900).epsilon(1e-9));
  // halfway through the decay
  CHECK(lr_schedule(550, 1.0, 100, 1000) == doctest::Approx(0.5));
  CHECK(lr_schedule(1000, 1.0, 100, 1000) == 0.0);
  CHECK(lr_schedule(2000, 1.0, 100, 1000) == 0.0);
}

TEST_CASE("threshold calibration on separable probabilities picks the first perfect cut") {
  std::vector<std::array<double, kNumActs>> probs;
  std::vector<ActSet> gold;
  for (int i = 0; i < 20; ++i) {
    std::array<double, kNumActs> p;
    p.fill(0.0);
    bool positive = i % 2 == 0;
    p[0] = positive ? 0.9 : 0.1;
    probs.push_back(p);
    ActSet g;
    if (positive) g.insert(ActLabel::Inquire);
    g.insert(ActLabel::Inform);  // keep every act set nonempty
    gold.push_back(g);
  }
  auto tau = calibrate_thresholds_from_probs(probs, gold, 0.05);
  CHECK(tau[0] == doctest::Approx(0.15));
  // act with no validation positives falls back to 0.5
  CHECK(tau[static_cast<std::size_t>(ActLabel::Chitchat)] == 0.5);
}

TEST_CASE("calibrated thresholds never lose to fixed 0.5 on the same set") {
  Rng rng(3);
  std::vector<std::array<double, kNumActs>> probs;
  std::vector<ActSet> gold;
  for (int i = 0; i < 200; ++i) {
    std::array<double, kNumActs> p;
    ActSet g;
    for (int j = 0; j < kNumActs; ++j) {
      bool pos = rng.chance(0.3);
      if (pos) g.insert(static_cast<ActLabel>(j));
      // noisy, miscalibrated probabilities
      p[static_cast<std::size_t>(j)] =
          std::clamp(rng.normal(pos ? 0.55 : 0.35, 0.15), 0.001, 0.999);
    }
    if (g.empty()) g.insert(ActLabel::Chitchat);
    probs.push_back(p);
    gold.push_back(g);
  }
  auto tau = calibrate_thresholds_from_probs(probs, gold, 0.05);
  std::array<double, kNumActs> fixed;
  fixed.fill(0.5);
  auto score = [&](const std::array<double, kNumActs>& t) {
    std::vector<ActSet> pred;
    for (const auto& p : probs) pred.push_back(acts_from_probs(p, t));
    return weighted_f1(pred, gold).weighted;
  };
  CHECK(score(tau) >= score(fixed));
}

namespace {

struct TinyRun {
  SynthOutput synth;
  Vocab vocab;
  std::vector<TrainingExample> train, valid;

  TinyRun() {
    SynthConfig cfg;
    cfg.n_entities = 30;
    cfg.kg_degree = 3;
    cfg.n_dialogues = 14;
    cfg.turns_min = 2;
    cfg.turns_max = 3;
    cfg.p_hop = 1.0;
    cfg.seed = 5;
    synth = generate_synthetic(cfg);
    vocab = Vocab::build(synth.corpus, synth.kg);
    Corpus train_c(synth.corpus.begin(), synth.corpus.end() - 4);
    Corpus valid_c(synth.corpus.end() - 4, synth.corpus.end());
    train = build_examples(train_c, synth.kg, vocab);
    valid = build_examples(valid_c, synth.kg, vocab);
  }

  FlowConfig flow_cfg() const {
    FlowConfig f;
    f.dim = 16;
    f.gat_heads = 2;
    f.ctx_heads = 2;
    f.negatives = 8;
    return f;
  }

  TrainConfig train_cfg() const {
    TrainConfig t;
    t.lr = 2e-3;
    t.batch_size = 8;
    t.warmup_steps = 10;
    t.epochs = 3;
    t.seed = 11;
    return t;
  }
};

}  // namespace

TEST_CASE("flow training loss decreases and is seed-reproducible") {
  TinyRun run;
  TrainLog log1, log2;

  FlowModel m1(run.flow_cfg(), run.vocab, run.synth.kg, 1);
  FlowCheckpointData c1 = train_flow(m1, run.train, run.valid, run.train_cfg(), &log1);
  REQUIRE(log1.epoch_train_loss.size() == 3);
  CHECK(log1.epoch_train_loss[2] < log1.epoch_train_loss[0]);

  FlowModel m2(run.flow_cfg(), run.vocab, run.synth.kg, 1);
  FlowCheckpointData c2 = train_flow(m2, run.train, run.valid, run.train_cfg(), &log2);
  CHECK(log1.epoch_train_loss == log2.epoch_train_loss);
  CHECK(c1.best_metrics.wf1 == c2.best_metrics.wf1);
  CHECK(c1.best_metrics.r_at_k.value_or(-1) == c2.best_metrics.r_at_k.value_or(-1));
  CHECK(c1.best_epoch == c2.best_epoch);
}

TEST_CASE("generator training uses gold acts for training guidance") {
  TinyRun run;
  FlowModel flow(run.flow_cfg(), run.vocab, run.synth.kg, 1);
  auto train_guid = precompute_guidance(flow, run.train, /*gold_acts=*/true);
  auto eval_guid = precompute_guidance(flow, run.train, /*gold_acts=*/false);
  REQUIRE(train_guid.size() == run.train.size());
  for (std::size_t i = 0; i < run.train.size(); ++i) {
    CHECK(train_guid[i].acts == run.train[i].target_acts);
    // entities always come from the flow's ranking
    CHECK(train_guid[i].entities == eval_guid[i].entities);
  }
  // predicted-act guidance comes from the model, not the labels
  bool any_differs = false;
  for (std::size_t i = 0; i < run.train.size(); ++i)
    any_differs |= !(eval_guid[i].acts == run.train[i].target_acts);
  CHECK(any_differs);
}

TEST_CASE("generator training is seed-reproducible") {
  TinyRun run;
  FlowModel flow(run.flow_cfg(), run.vocab, run.synth.kg, 1);
  auto tg = precompute_guidance(flow, run.train, true);
  auto vg = precompute_guidance(flow, run.valid, false);

  GenConfig g;
  g.dim = 16;
  g.layers = 1;
  g.heads = 2;
  TrainConfig t = run.train_cfg();
  t.epochs = 2;

  TrainLog log1, log2;
  GenModel m1(g, run.vocab, run.synth.kg, 2);
  train_generator(m1, run.train, tg, run.valid, vg, t, &log1, 10);
  GenModel m2(g, run.vocab, run.synth.kg, 2);
  train_generator(m2, run.train, tg, run.valid, vg, t, &log2, 10);
  CHECK(log1.epoch_train_loss == log2.epoch_train_loss);
  CHECK(log1.epoch_val_metric == log2.epoch_val_metric);
}

TEST_CASE("checkpoint round trip preserves the forward pass") {
  TinyRun run;
  FlowModel flow(run.flow_cfg(), run.vocab, run.synth.kg, 7);
  flow.thresholds()[2] = 0.35;
  FlowForward before = flow.forward(run.valid[0]);
  save_flow_checkpoint(flow, "/tmp/dfmed_test_flowckpt");
  auto loaded = load_flow_checkpoint("/tmp/dfmed_test_flowckpt", run.synth.kg);
  CHECK(loaded->thresholds()[2] == doctest::Approx(0.35));
  FlowForward after = loaded->forward(run.valid[0]);
  CHECK(before.scores == after.scores);
  CHECK(before.topk_entities == after.topk_entities);
  for (int j = 0; j < kNumActs; ++j)
    CHECK(before.act_probs[static_cast<std::size_t>(j)] ==
          doctest::Approx(after.act_probs[static_cast<std::size_t>(j)]).epsilon(1e-12));

  GenConfig gc;
  gc.dim = 16;
  gc.layers = 1;
  gc.heads = 2;
  GenModel gen(gc, run.vocab, run.synth.kg, 7);
  Guidance guid{ActSet::of({ActLabel::Inquire}), {0, 1}};
  double loss_before = gen.loss(run.valid[0], guid).item();
  save_gen_checkpoint(gen, "/tmp/dfmed_test_genckpt");
  auto gen2 = load_gen_checkpoint("/tmp/dfmed_test_genckpt", run.synth.kg);
  CHECK(gen2->loss(run.valid[0], guid).item() == doctest::Approx(loss_before).epsilon(1e-12));
  CHECK(gen2->decode(run.valid[0], guid) == gen.decode(run.valid[0], guid));
}

TEST_CASE("checkpoint loading validates kind and files") {
  CHECK_THROWS_AS(load_flow_checkpoint("/tmp/dfmed_no_such_ckpt", KnowledgeGraph{}),
                  std::runtime_error);
  TinyRun run;
  GenConfig gc;
  gc.dim = 16;
  gc.layers = 1;
  gc.heads = 2;
  GenModel gen(gc, run.vocab, run.synth.kg, 7);
  save_gen_checkpoint(gen, "/tmp/dfmed_test_kindckpt");
  CHECK_THROWS_WITH_AS(load_flow_checkpoint("/tmp/dfmed_test_kindckpt", run.synth.kg),
                       doctest::Contains("kind"), std::runtime_error);
}
