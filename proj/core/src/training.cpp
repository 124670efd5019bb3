#include "dfmed/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>
#include <stdexcept>

#include "dfmed/metrics.hpp"

namespace dfmed {

void TrainConfig::validate() const {
  if (lr <= 0) throw std::invalid_argument("train: lr must be positive");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size < 1");
  if (warmup_steps < 0) throw std::invalid_argument("train: warmup_steps < 0");
  if (epochs < 1) throw std::invalid_argument("train: epochs < 1");
  if (weight_decay < 0) throw std::invalid_argument("train: weight_decay < 0");
  if (grad_clip <= 0) throw std::invalid_argument("train: grad_clip must be positive");
}

void AdamW::step(ParamStore& params, double lr, double weight_decay) {
  // reject the whole step on any non-finite gradient
  for (const auto& [name, t] : params.items())
    for (double g : t.grad())
      if (!std::isfinite(g)) {
        ++skipped_;
        std::cerr << "[train] warning: non-finite gradient in '" << name
                  << "', step skipped\n";
        return;
      }

  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, t] : params.items()) {
    Tensor tensor = t;
    auto& theta = tensor.values_mut();
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) m.assign(theta.size(), 0.0);
    if (v.empty()) v.assign(theta.size(), 0.0);
    const auto& grad = tensor.grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      double g = grad.empty() ? 0.0 : grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      theta[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay * theta[i]);
    }
    tensor.requantize();
  }
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  double norm = params.grad_norm();
  if (std::isfinite(norm) && norm > max_norm && norm > 0.0) {
    double factor = max_norm / norm;
    for (auto& [name, t] : params.items()) {
      Tensor tensor = t;
      auto g = tensor.node();
      for (auto& e : g->grad) e *= factor;
    }
  }
  return norm;
}

double lr_schedule(long step, double base_lr, int warmup_steps, long max_steps) {
  if (step < 0) throw std::invalid_argument("lr_schedule: negative step");
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (max_steps <= warmup_steps) return base_lr;
  double remaining = static_cast<double>(max_steps - step) /
                     static_cast<double>(max_steps - warmup_steps);
  return base_lr * std::clamp(remaining, 0.0, 1.0);
}

FlowValMetrics evaluate_flow_quick(const FlowModel& model,
                                   const std::vector<TrainingExample>& examples,
                                   const std::array<double, kNumActs>& thresholds) {
  NoGradGuard ng;
  std::vector<ActSet> pred_acts, gold_acts;
  std::vector<ScoredCandidates> scored;
  std::vector<std::vector<int>> gold_entities;
  for (const auto& ex : examples) {
    FlowForward f = model.forward(ex);
    pred_acts.push_back(acts_from_probs(f.act_probs, thresholds));
    gold_acts.push_back(ex.target_acts);
    scored.push_back({f.candidates, f.scores});
    gold_entities.push_back(ex.target_entities);
  }
  FlowValMetrics out;
  out.wf1 = weighted_f1(pred_acts, gold_acts).weighted;
  out.r_at_k = recall_at_k(scored, gold_entities, model.config().topk);
  return out;
}

namespace {

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch_size)) {
    std::size_t end = std::min(n, i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<long>(i),
                         order.begin() + static_cast<long>(end));
  }
  return batches;
}

}  // namespace

FlowCheckpointData train_flow(FlowModel& model, const std::vector<TrainingExample>& train,
                              const std::vector<TrainingExample>& valid,
                              const TrainConfig& cfg, TrainLog* log) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train_flow: empty training set");
  Rng rng(cfg.seed);
  AdamW opt;
  long steps_per_epoch =
      static_cast<long>((train.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                        static_cast<std::size_t>(cfg.batch_size));
  long max_steps = steps_per_epoch * cfg.epochs;
  long step = 0;

  FlowCheckpointData best;
  best.thresholds = model.thresholds();
  double best_metric = -1.0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    long loss_count = 0;
    for (const auto& batch : make_batches(train.size(), cfg.batch_size, rng)) {
      model.params().zero_grad();
      for (std::size_t idx : batch) {
        FlowLoss l = model.loss(train[idx], rng);
        scale(l.total, 1.0 / static_cast<double>(batch.size())).backward();
        loss_sum += l.total.item();
        ++loss_count;
      }
      clip_grad_norm(model.params(), cfg.grad_clip);
      ++step;
      opt.step(model.params(), lr_schedule(step, cfg.lr, cfg.warmup_steps, max_steps),
               cfg.weight_decay);
    }
    double train_loss = loss_sum / static_cast<double>(loss_count);
    FlowValMetrics val = valid.empty()
                             ? FlowValMetrics{}
                             : evaluate_flow_quick(model, valid, model.thresholds());
    if (log) {
      log->epoch_train_loss.push_back(train_loss);
      log->epoch_val_metric.push_back(val.combined());
    }
    std::cerr << "[flow] epoch " << epoch << " loss " << train_loss << " val-wf1 " << val.wf1
              << " val-r@" << model.config().topk
              << (val.r_at_k ? " " + std::to_string(*val.r_at_k) : " n/a") << "\n";
    double metric = valid.empty() ? -train_loss : val.combined();
    if (metric > best_metric) {
      best_metric = metric;
      best.params = model.params().snapshot();
      best.steps = step;
      best.best_epoch = epoch;
      best.best_metrics = val;
    }
  }
  model.params().restore(best.params);
  return best;
}

std::array<double, kNumActs> calibrate_act_thresholds(
    const FlowModel& model, const std::vector<TrainingExample>& valid, double grid_step) {
  NoGradGuard ng;
  std::vector<std::array<double, kNumActs>> probs;
  std::vector<ActSet> gold;
  probs.reserve(valid.size());
  for (const auto& ex : valid) {
    probs.push_back(model.forward(ex).act_probs);
    gold.push_back(ex.target_acts);
  }
  return calibrate_thresholds_from_probs(probs, gold, grid_step);
}

std::array<double, kNumActs> calibrate_thresholds_from_probs(
    const std::vector<std::array<double, kNumActs>>& probs, const std::vector<ActSet>& gold,
    double grid_step) {
  if (grid_step <= 0.0 || grid_step >= 1.0)
    throw std::invalid_argument("calibrate: grid step must be in (0,1)");
  std::array<double, kNumActs> out;
  for (int j = 0; j < kNumActs; ++j) {
    ActLabel a = static_cast<ActLabel>(j);
    long positives = 0;
    for (const auto& g : gold) positives += g.contains(a);
    if (positives == 0) {
      std::cerr << "[calibrate] warning: act '" << act_name(a)
                << "' absent from validation, keeping threshold 0.5\n";
      out[static_cast<std::size_t>(j)] = 0.5;
      continue;
    }
    double best_tau = grid_step, best_f1 = -1.0;
    for (double tau = grid_step; tau < 1.0 - 1e-9; tau += grid_step) {
      long tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < probs.size(); ++i) {
        bool p = probs[i][static_cast<std::size_t>(j)] >= tau;
        bool g = gold[i].contains(a);
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
      }
      double prec = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
      double rec = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
      double f1 = (prec + rec) > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
      if (f1 > best_f1) {
        best_f1 = f1;
        best_tau = tau;
      }
    }
    out[static_cast<std::size_t>(j)] = best_tau;
  }
  return out;
}

std::vector<Guidance> precompute_guidance(const FlowModel& flow,
                                          const std::vector<TrainingExample>& examples,
                                          bool gold_acts) {
  NoGradGuard ng;
  std::vector<Guidance> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    FlowForward f = flow.forward(ex);
    Guidance g;
    g.acts = gold_acts ? ex.target_acts : f.predicted_acts;
    if (g.acts.empty()) g.acts = f.predicted_acts;  // gold always nonempty by invariant
    g.entities = f.topk_entities;
    out.push_back(std::move(g));
  }
  return out;
}

GenCheckpointData train_generator(GenModel& model,
                                  const std::vector<TrainingExample>& train,
                                  const std::vector<Guidance>& train_guidance,
                                  const std::vector<TrainingExample>& valid,
                                  const std::vector<Guidance>& valid_guidance,
                                  const TrainConfig& cfg, TrainLog* log,
                                  int val_decode_limit) {
  cfg.validate();
  if (train.size() != train_guidance.size() || valid.size() != valid_guidance.size())
    throw std::invalid_argument("train_generator: guidance misaligned with examples");
  if (train.empty()) throw std::invalid_argument("train_generator: empty training set");
  Rng rng(cfg.seed);
  AdamW opt;
  long steps_per_epoch =
      static_cast<long>((train.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                        static_cast<std::size_t>(cfg.batch_size));
  long max_steps = steps_per_epoch * cfg.epochs;
  long step = 0;

  GenCheckpointData best;
  double best_metric = -1.0;

  std::size_t val_n = std::min<std::size_t>(valid.size(), static_cast<std::size_t>(val_decode_limit));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    long loss_count = 0;
    for (const auto& batch : make_batches(train.size(), cfg.batch_size, rng)) {
      model.params().zero_grad();
      for (std::size_t idx : batch) {
        Tensor l = model.loss(train[idx], train_guidance[idx]);
        if (!std::isfinite(l.item()))
          throw std::runtime_error("train_generator: non-finite loss on dialogue '" +
                                   train[idx].dialogue_id + "'");
        scale(l, 1.0 / static_cast<double>(batch.size())).backward();
        loss_sum += l.item();
        ++loss_count;
      }
      clip_grad_norm(model.params(), cfg.grad_clip);
      ++step;
      opt.step(model.params(), lr_schedule(step, cfg.lr, cfg.warmup_steps, max_steps),
               cfg.weight_decay);
    }
    double train_loss = loss_sum / static_cast<double>(loss_count);

    double val_bleu = 0.0;
    if (val_n > 0) {
      std::vector<TokenSeq> hyps, refs;
      for (std::size_t i = 0; i < val_n; ++i) {
        hyps.push_back(model.vocab().decode(model.decode(valid[i], valid_guidance[i])));
        refs.push_back(valid[i].target_tokens);
      }
      val_bleu = bleu(hyps, refs, 4);
    }
    if (log) {
      log->epoch_train_loss.push_back(train_loss);
      log->epoch_val_metric.push_back(val_bleu);
    }
    std::cerr << "[gen] epoch " << epoch << " loss " << train_loss << " val-B4 " << val_bleu
              << "\n";
    double metric = val_n > 0 ? val_bleu : -train_loss;
    if (metric > best_metric) {
      best_metric = metric;
      best.params = model.params().snapshot();
      best.steps = step;
      best.best_epoch = epoch;
      best.best_val_bleu4 = val_bleu;
    }
  }
  model.params().restore(best.params);
  return best;
}

}  // namespace dfmed
