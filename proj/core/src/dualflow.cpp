#include "dfmed/dualflow.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <set>
#include <stdexcept>

namespace dfmed {

void FlowConfig::validate() const {
  if (dim < 1) throw std::invalid_argument("flow: dim < 1");
  if (gat_heads < 1 || dim % gat_heads != 0)
    throw std::invalid_argument("flow: dim must be divisible by gat_heads");
  if (ctx_heads < 1 || dim % ctx_heads != 0)
    throw std::invalid_argument("flow: dim must be divisible by ctx_heads");
  if (ctx_layers < 0) throw std::invalid_argument("flow: ctx_layers < 0");
  if (max_ctx < 1) throw std::invalid_argument("flow: max_ctx < 1");
  if (negatives < 1) throw std::invalid_argument("flow: negatives < 1");
  if (topk < 1) throw std::invalid_argument("flow: topk < 1");
  if (lambda_e < 0 || lambda_a < 0) throw std::invalid_argument("flow: negative loss weight");
}

ActSet acts_from_probs(const std::array<double, kNumActs>& probs,
                       const std::array<double, kNumActs>& thresholds) {
  ActSet s;
  for (int j = 0; j < kNumActs; ++j)
    if (probs[static_cast<std::size_t>(j)] >= thresholds[static_cast<std::size_t>(j)])
      s.insert(static_cast<ActLabel>(j));
  if (s.empty()) {
    int best = 0;
    for (int j = 1; j < kNumActs; ++j)
      if (probs[static_cast<std::size_t>(j)] > probs[static_cast<std::size_t>(best)]) best = j;
    s.insert(static_cast<ActLabel>(best));
  }
  return s;
}

FlowModel::FlowModel(const FlowConfig& cfg, const Vocab& vocab, const KnowledgeGraph& kg,
                     std::uint64_t init_seed)
    : cfg_(cfg), vocab_(vocab) {
  cfg_.validate();
  thresholds_.fill(0.5);

  entity_tokens_.reserve(static_cast<std::size_t>(kg.size()));
  int all_unk = 0;
  for (int id = 0; id < kg.size(); ++id) {
    std::vector<int> ids = vocab_.encode(kg.name(id));
    bool known = false;
    for (int tok : ids) known |= tok != Vocab::kUnk;
    if (!known) ++all_unk;
    entity_tokens_.push_back(std::move(ids));
  }
  if (all_unk > 0)
    std::cerr << "[flow] warning: " << all_unk
              << " entity names tokenize entirely to [UNK]\n";

  Rng rng = Rng::derive(init_seed, 101);
  int d = cfg_.dim;
  tok_embed_ = params_.gaussian("embed.tok", vocab_.size(), d, 0.1, rng);
  ctx_ = TransformerEncoder::create(params_, "ctx", d, cfg_.ctx_layers, cfg_.ctx_heads, rng);

  act_embed_ = params_.gaussian("act.embed", kNumActs, d, 0.1, rng);
  act_query_ = params_.gaussian("act.query", 1, d, 0.1, rng);

  int dh = d / cfg_.gat_heads;
  for (int k = 0; k < cfg_.gat_heads; ++k) {
    std::string p = "gat." + std::to_string(k) + ".";
    GatHead head;
    head.W = params_.xavier(p + "W", dh, d, rng);
    head.a_src = params_.xavier(p + "a_src", 1, dh, rng);
    head.a_dst = params_.xavier(p + "a_dst", 1, dh, rng);
    gat_.push_back(std::move(head));
  }

  auto make_site = [&](const std::string& name) {
    CaSite s;
    s.Wq = params_.xavier("iw." + name + ".Wq", d, d, rng);
    s.Wk = params_.xavier("iw." + name + ".Wk", d, d, rng);
    s.Wv = params_.xavier("iw." + name + ".Wv", d, d, rng);
    return s;
  };
  ec_ = make_site("ec");
  ea_ = make_site("ea");
  ac_ = make_site("ac");
  ae_ = make_site("ae");

  auto make_gru = [&](const std::string& name, int in) {
    GruParams g;
    g.Wz = params_.xavier(name + ".Wz", d, in, rng);
    g.Uz = params_.xavier(name + ".Uz", d, d, rng);
    g.bz = params_.zeros(name + ".bz", 1, d);
    g.Wr = params_.xavier(name + ".Wr", d, in, rng);
    g.Ur = params_.xavier(name + ".Ur", d, d, rng);
    g.br = params_.zeros(name + ".br", 1, d);
    g.Wh = params_.xavier(name + ".Wh", d, in, rng);
    g.Uh = params_.xavier(name + ".Uh", d, d, rng);
    g.bh = params_.zeros(name + ".bh", 1, d);
    return g;
  };
  gru_e_ = make_gru("gru_e", 3 * d);
  gru_a_ = make_gru("gru_a", 3 * d);

  act_W_ = params_.xavier("act.W", kNumActs, d, rng);
  act_b_ = params_.zeros("act.b", 1, kNumActs);
}

Tensor FlowModel::encoder_states(const std::vector<int>& ids) const {
  return ctx_.forward(gather_rows(tok_embed_, ids), /*causal=*/true);
}

std::vector<Tensor> FlowModel::context_states(const TrainingExample& ex) const {
  // left truncation to the most recent max_ctx tokens
  int len = static_cast<int>(ex.history_ids.size());
  int offset = std::max(0, len - cfg_.max_ctx);
  std::vector<int> window(ex.history_ids.begin() + offset, ex.history_ids.end());
  Tensor states = encoder_states(window);

  std::vector<Tensor> out;
  int t = ex.target_turn;
  for (int k = 1; k <= t; ++k) {
    int end = ex.utterance_ends[static_cast<std::size_t>(2 * (k - 1))] - offset;
    end = std::clamp(end, 0, static_cast<int>(window.size()));
    std::vector<int> idx(static_cast<std::size_t>(end));
    for (int i = 0; i < end; ++i) idx[static_cast<std::size_t>(i)] = i;
    out.push_back(mean_rows_subset(states, idx));  // zeros when fully truncated
  }
  return out;
}

Tensor FlowModel::embed_entity(int entity_id) const {
  const auto& toks = entity_tokens_.at(static_cast<std::size_t>(entity_id));
  return mean_rows(gather_rows(tok_embed_, toks));
}

Tensor FlowModel::raw_entity_embeddings(const std::vector<int>& ids) const {
  std::vector<Tensor> rows;
  rows.reserve(ids.size());
  for (int id : ids) rows.push_back(embed_entity(id));
  return concat_rows(rows);
}

Tensor FlowModel::gat(const std::vector<int>& nodes,
                      const std::vector<std::pair<int, int>>& edges,
                      const Tensor& raw) const {
  int n = static_cast<int>(nodes.size());
  if (n == 0) return Tensor();
  std::map<int, int> row_of;
  for (int i = 0; i < n; ++i) row_of[nodes[static_cast<std::size_t>(i)]] = i;

  // additive mask: self-loops plus KG edges, both directions
  std::vector<double> mask_v(static_cast<std::size_t>(n) * n, -1e30);
  for (int i = 0; i < n; ++i) mask_v[static_cast<std::size_t>(i) * n + i] = 0.0;
  for (const auto& [a, b] : edges) {
    auto ia = row_of.find(a), ib = row_of.find(b);
    if (ia == row_of.end() || ib == row_of.end())
      throw std::invalid_argument("gat: edge endpoint not in node list");
    mask_v[static_cast<std::size_t>(ia->second) * n + ib->second] = 0.0;
    mask_v[static_cast<std::size_t>(ib->second) * n + ia->second] = 0.0;
  }
  Tensor mask = Tensor::from_data(n, n, std::move(mask_v));

  std::vector<Tensor> heads;
  heads.reserve(gat_.size());
  for (const auto& head : gat_) {
    Tensor hw = matmul_nt(raw, head.W);                       // [n, dh]
    Tensor u = matmul_nt(hw, head.a_src);                     // [n, 1]
    Tensor v = matmul_nt(hw, head.a_dst);                     // [n, 1]
    Tensor scores = add(leaky_relu(outer_add(u, v), 0.2), mask);
    Tensor alpha = softmax(scores, 1);
    heads.push_back(elu(matmul(alpha, hw)));
  }
  return concat_cols(heads);
}

Tensor FlowModel::ca(const CaSite& site, const Tensor& query_vec, const Tensor& keys) const {
  if (!keys.defined() || keys.rows() == 0) return Tensor::zeros(1, cfg_.dim);
  Tensor q = matmul_nt(query_vec, site.Wq);
  Tensor k = matmul_nt(keys, site.Wk);
  Tensor v = matmul_nt(keys, site.Wv);
  return scaled_dot_attention(q, k, v);
}

FlowForward FlowModel::forward(const TrainingExample& ex) const {
  const int d = cfg_.dim;
  const int t = ex.target_turn;
  FlowForward out;
  FlowTrace& tr = out.trace;
  out.candidates = ex.candidates;

  const bool iw_removed = cfg_.interweaving_off();
  const bool eff_e2a = cfg_.interweave_e2a && cfg_.act_flow && !iw_removed;
  const bool eff_a2e = cfg_.interweave_a2e && cfg_.entity_flow && !iw_removed;
  const bool need_ctx = !iw_removed || !cfg_.act_flow || !cfg_.entity_flow;

  if (need_ctx) tr.ctx_states = context_states(ex);

  // GAT over the cumulative graph
  tr.cum_nodes = ex.cum_nodes;
  int n_nodes = static_cast<int>(tr.cum_nodes.size());
  std::map<int, int> row_of;
  for (int i = 0; i < n_nodes; ++i) row_of[tr.cum_nodes[static_cast<std::size_t>(i)]] = i;
  if (n_nodes > 0)
    tr.node_embeddings = gat(tr.cum_nodes, ex.cum_edges, raw_entity_embeddings(tr.cum_nodes));

  // per-turn row subsets
  std::vector<std::vector<int>> g_rows(static_cast<std::size_t>(t));
  std::vector<std::vector<int>> cum_rows(static_cast<std::size_t>(t));
  std::set<int> cum_acc;
  for (int k = 1; k <= t; ++k) {
    const TurnGraph& g = ex.graphs[static_cast<std::size_t>(k - 1)];
    for (int id : g.nodes()) {
      int row = row_of.at(id);
      g_rows[static_cast<std::size_t>(k - 1)].push_back(row);
      cum_acc.insert(row);
    }
    cum_rows[static_cast<std::size_t>(k - 1)].assign(cum_acc.begin(), cum_acc.end());
  }
  std::vector<std::vector<int>> act_rows(static_cast<std::size_t>(t - 1));
  for (int k = 1; k < t; ++k)
    for (ActLabel a : ex.act_history[static_cast<std::size_t>(k - 1)].list())
      act_rows[static_cast<std::size_t>(k - 1)].push_back(static_cast<int>(a));

  // pooled per-turn embeddings
  for (int k = 1; k <= t; ++k) {
    const auto& rows = g_rows[static_cast<std::size_t>(k - 1)];
    tr.graph_pool.push_back(n_nodes > 0 && !rows.empty()
                                ? mean_rows_subset(tr.node_embeddings, rows)
                                : Tensor::zeros(1, d));
    tr.act_pool.push_back(k < t ? mean_rows_subset(act_embed_,
                                                   act_rows[static_cast<std::size_t>(k - 1)])
                                : act_query_);
  }

  // interweaving
  Tensor K_ec, V_ec, K_ae, V_ae, K_ea_tab, V_ea_tab, K_ac_tab, V_ac_tab;
  if (!iw_removed) {
    if (n_nodes > 0) {
      if (cfg_.entity_flow) {
        K_ec = matmul_nt(tr.node_embeddings, ec_.Wk);
        V_ec = matmul_nt(tr.node_embeddings, ec_.Wv);
      }
      if (eff_a2e) {
        K_ae = matmul_nt(tr.node_embeddings, ae_.Wk);
        V_ae = matmul_nt(tr.node_embeddings, ae_.Wv);
      }
    }
    if (eff_e2a) {
      K_ea_tab = matmul_nt(act_embed_, ea_.Wk);
      V_ea_tab = matmul_nt(act_embed_, ea_.Wv);
    }
    if (cfg_.act_flow) {
      K_ac_tab = matmul_nt(act_embed_, ac_.Wk);
      V_ac_tab = matmul_nt(act_embed_, ac_.Wv);
    }
  }

  auto attend = [&](const CaSite& site, const Tensor& query_vec, const Tensor& K,
                    const Tensor& V, const std::vector<int>& rows) {
    if (!K.defined() || rows.empty()) return Tensor::zeros(1, d);
    Tensor q = matmul_nt(query_vec, site.Wq);
    return scaled_dot_attention(q, gather_rows(K, rows), gather_rows(V, rows));
  };

  Tensor zero_third = Tensor::zeros(1, d);
  for (int k = 1; k <= t; ++k) {
    std::size_t ki = static_cast<std::size_t>(k - 1);
    if (cfg_.entity_flow) {
      Tensor e_c = iw_removed ? zero_third
                              : attend(ec_, tr.ctx_states[ki], K_ec, V_ec, g_rows[ki]);
      Tensor e_a = zero_third;
      if (eff_e2a && k > 1) {
        std::vector<int> prior_acts;
        for (int j = 1; j < k; ++j)
          prior_acts.insert(prior_acts.end(), act_rows[static_cast<std::size_t>(j - 1)].begin(),
                            act_rows[static_cast<std::size_t>(j - 1)].end());
        e_a = attend(ea_, tr.graph_pool[ki], K_ea_tab, V_ea_tab, prior_acts);
      }
      tr.entity_input.push_back(concat_cols({tr.graph_pool[ki], e_c, e_a}));
    }
    if (cfg_.act_flow) {
      Tensor a_c = zero_third;
      if (!iw_removed) {
        if (k < t) {
          a_c = attend(ac_, tr.ctx_states[ki], K_ac_tab, V_ac_tab, act_rows[ki]);
        } else {
          Tensor q = matmul_nt(tr.ctx_states[ki], ac_.Wq);
          a_c = scaled_dot_attention(q, matmul_nt(act_query_, ac_.Wk),
                                     matmul_nt(act_query_, ac_.Wv));
        }
      }
      Tensor a_e = eff_a2e ? attend(ae_, tr.act_pool[ki], K_ae, V_ae, cum_rows[ki])
                           : zero_third;
      tr.act_input.push_back(concat_cols({tr.act_pool[ki], a_c, a_e}));
    }
  }

  // sequential flow states
  if (cfg_.entity_flow) {
    Tensor s = Tensor::zeros(1, d);
    for (int k = 1; k <= t; ++k) s = gru_cell(tr.entity_input[static_cast<std::size_t>(k - 1)], s, gru_e_);
    out.entity_state = s;
  } else {
    out.entity_state = tr.ctx_states[static_cast<std::size_t>(t - 1)];
  }
  if (cfg_.act_flow) {
    Tensor s = Tensor::zeros(1, d);
    for (int k = 1; k <= t; ++k) s = gru_cell(tr.act_input[static_cast<std::size_t>(k - 1)], s, gru_a_);
    out.act_state = s;
  } else {
    out.act_state = tr.ctx_states[static_cast<std::size_t>(t - 1)];
  }

  // entity scoring over the candidate pool
  if (!out.candidates.empty() && n_nodes > 0) {
    std::vector<int> cand_rows;
    cand_rows.reserve(out.candidates.size());
    for (int id : out.candidates) cand_rows.push_back(row_of.at(id));
    out.scores_t = matmul_nt(out.entity_state, gather_rows(tr.node_embeddings, cand_rows));
    out.scores = out.scores_t.values();
    std::vector<int> order(out.candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int x, int y) {
      double sx = out.scores[static_cast<std::size_t>(x)];
      double sy = out.scores[static_cast<std::size_t>(y)];
      if (sx != sy) return sx > sy;
      return out.candidates[static_cast<std::size_t>(x)] < out.candidates[static_cast<std::size_t>(y)];
    });
    int k = std::min<int>(cfg_.topk, static_cast<int>(order.size()));
    for (int i = 0; i < k; ++i)
      out.topk_entities.push_back(out.candidates[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
  }

  // act probabilities
  out.act_logits = linear(out.act_state, act_W_, act_b_);
  for (int j = 0; j < kNumActs; ++j) {
    double z = out.act_logits.at(0, j);
    out.act_probs[static_cast<std::size_t>(j)] =
        z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  out.predicted_acts = acts_from_probs(out.act_probs, thresholds_);
  return out;
}

FlowLoss FlowModel::loss(const TrainingExample& ex, Rng& negative_rng) const {
  FlowForward fwd = forward(ex);
  FlowLoss out;

  std::vector<double> bits(kNumActs, 0.0);
  for (ActLabel a : ex.target_acts.list()) bits[static_cast<std::size_t>(a)] = 1.0;
  Tensor l_act = bce_with_logits_mean(fwd.act_logits, bits);
  out.act_bce = l_act.item();

  Tensor total = scale(l_act, cfg_.lambda_a);
  if (!ex.target_entities.empty() && fwd.scores_t.defined()) {
    // candidate-space indices of positives and sampled negatives
    std::map<int, int> cand_idx;
    for (std::size_t i = 0; i < fwd.candidates.size(); ++i)
      cand_idx[fwd.candidates[i]] = static_cast<int>(i);
    std::set<int> positive_set(ex.target_entities.begin(), ex.target_entities.end());
    std::vector<int> negatives;
    for (int id : fwd.candidates)
      if (!positive_set.count(id)) negatives.push_back(id);
    negatives = negative_rng.sample(negatives, static_cast<std::size_t>(cfg_.negatives));

    Tensor scores_col = reshape(fwd.scores_t, static_cast<int>(fwd.candidates.size()), 1);
    std::vector<Tensor> per_positive;
    for (int pos : ex.target_entities) {
      std::vector<int> rows{cand_idx.at(pos)};
      for (int neg : negatives) rows.push_back(cand_idx.at(neg));
      Tensor logits = reshape(gather_rows(scores_col, rows), 1, static_cast<int>(rows.size()));
      per_positive.push_back(scale(pick_per_row(log_softmax(logits), {0}), -1.0));
    }
    Tensor l_ent = mean_all(concat_rows(per_positive));
    out.entity_nll = l_ent.item();
    out.has_entity_term = true;
    total = add(total, scale(l_ent, cfg_.lambda_e));
  }
  out.total = total;
  if (!std::isfinite(out.total.item()))
    throw std::runtime_error("flow loss non-finite (entity=" + std::to_string(out.entity_nll) +
                             ", act=" + std::to_string(out.act_bce) + ") on dialogue '" +
                             ex.dialogue_id + "' turn " + std::to_string(ex.target_turn));
  return out;
}

}  // namespace dfmed
