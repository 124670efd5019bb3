#include "dfmed/generator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dfmed {

void GenConfig::validate() const {
  if (dim < 1) throw std::invalid_argument("gen: dim < 1");
  if (heads < 1 || dim % heads != 0)
    throw std::invalid_argument("gen: dim must be divisible by heads");
  if (layers < 1) throw std::invalid_argument("gen: layers < 1");
  if (max_ctx < 1 || max_gen_len < 1) throw std::invalid_argument("gen: bad length limits");
  if (beam < 1) throw std::invalid_argument("gen: beam width < 1");
}

GenModel::GenModel(const GenConfig& cfg, const Vocab& vocab, const KnowledgeGraph& kg,
                   std::uint64_t init_seed)
    : cfg_(cfg), vocab_(vocab) {
  cfg_.validate();
  for (int id = 0; id < kg.size(); ++id) entity_tokens_.push_back(vocab_.encode(kg.name(id)));

  Rng rng = Rng::derive(init_seed, 202);
  int d = cfg_.dim;
  tok_embed_ = params_.gaussian("embed.tok", vocab_.size(), d, 0.1, rng);
  enc_ = TransformerEncoder::create(params_, "enc", d, cfg_.layers, cfg_.heads, rng);

  for (int l = 0; l < cfg_.layers; ++l) {
    std::string p = "dec." + std::to_string(l) + ".";
    DecLayer layer;
    layer.Wq = params_.xavier(p + "Wq", d, d, rng);
    layer.Wk = params_.xavier(p + "Wk", d, d, rng);
    layer.Wv = params_.xavier(p + "Wv", d, d, rng);
    layer.Wo = params_.xavier(p + "Wo", d, d, rng);
    layer.ln1_g = params_.constant(p + "ln1.g", 1, d, 1.0);
    layer.ln1_b = params_.zeros(p + "ln1.b", 1, d);
    layer.cWq = params_.xavier(p + "c.Wq", d, d, rng);
    layer.cWk = params_.xavier(p + "c.Wk", d, d, rng);
    layer.cWv = params_.xavier(p + "c.Wv", d, d, rng);
    layer.eWq = params_.xavier(p + "e.Wq", d, d, rng);
    layer.eWk = params_.xavier(p + "e.Wk", d, d, rng);
    layer.eWv = params_.xavier(p + "e.Wv", d, d, rng);
    layer.gate_W = params_.xavier(p + "gate.W", d, d, rng);
    layer.ln2_g = params_.constant(p + "ln2.g", 1, d, 1.0);
    layer.ln2_b = params_.zeros(p + "ln2.b", 1, d);
    layer.ffn.W1 = params_.xavier(p + "ffn.W1", 4 * d, d, rng);
    layer.ffn.b1 = params_.zeros(p + "ffn.b1", 1, 4 * d);
    layer.ffn.W2 = params_.xavier(p + "ffn.W2", d, 4 * d, rng);
    layer.ffn.b2 = params_.zeros(p + "ffn.b2", 1, d);
    layer.ln3_g = params_.constant(p + "ln3.g", 1, d, 1.0);
    layer.ln3_b = params_.zeros(p + "ln3.b", 1, d);
    dec_.push_back(std::move(layer));
  }
  out_W_ = params_.xavier("out.W", vocab_.size(), d, rng);
  out_b_ = params_.zeros("out.b", 1, vocab_.size());
}

std::vector<int> GenModel::guidance_token_ids(const Guidance& g) const {
  if (g.acts.empty()) throw std::invalid_argument("gen: guidance act set must be nonempty");
  std::vector<int> ids;
  for (ActLabel a : g.acts.list()) ids.push_back(vocab_.act_id(a));
  for (int e : g.entities) {
    const auto& toks = entity_tokens_.at(static_cast<std::size_t>(e));
    ids.insert(ids.end(), toks.begin(), toks.end());
  }
  return ids;
}

std::vector<int> GenModel::history_window(const TrainingExample& ex) const {
  int len = static_cast<int>(ex.history_ids.size());
  int offset = std::max(0, len - cfg_.max_ctx);
  return {ex.history_ids.begin() + offset, ex.history_ids.end()};
}

Tensor GenModel::encoder_states(const std::vector<int>& ids) const {
  return enc_.forward(gather_rows(tok_embed_, ids), /*causal=*/false);
}

Tensor GenModel::encode_guidance(const Guidance& g) const {
  return encoder_states(guidance_token_ids(g));
}

Tensor GenModel::encode_history(const TrainingExample& ex) const {
  return encoder_states(history_window(ex));
}

GenModel::EncCache GenModel::make_cache(const Tensor& Hea, const Tensor& Hc) const {
  EncCache cache;
  cache.Hea = Hea;
  cache.Hc = Hc;
  for (const auto& layer : dec_) {
    cache.cK.push_back(matmul_nt(Hc, layer.cWk));
    cache.cV.push_back(matmul_nt(Hc, layer.cWv));
    if (cfg_.use_guidance && Hea.defined()) {
      cache.eK.push_back(matmul_nt(Hea, layer.eWk));
      cache.eV.push_back(matmul_nt(Hea, layer.eWv));
    } else {
      cache.eK.emplace_back();
      cache.eV.emplace_back();
    }
  }
  return cache;
}

Tensor GenModel::decoder_logits(const std::vector<int>& input_ids, const EncCache& cache,
                                GenDiagnostics* diag) const {
  int n = static_cast<int>(input_ids.size());
  if (n == 0) throw std::invalid_argument("gen: empty decoder input");
  Tensor x = add(gather_rows(tok_embed_, input_ids), sinusoidal_positions(n, cfg_.dim));
  std::optional<Tensor> mask;
  if (n > 1) mask = causal_mask(n);
  if (diag) diag->avg_gate_per_layer.clear();

  for (std::size_t l = 0; l < dec_.size(); ++l) {
    const DecLayer& layer = dec_[l];
    Tensor att = scaled_dot_attention(matmul_nt(x, layer.Wq), matmul_nt(x, layer.Wk),
                                      matmul_nt(x, layer.Wv), cfg_.heads, mask);
    Tensor h = layernorm(add(x, matmul_nt(att, layer.Wo)), layer.ln1_g, layer.ln1_b);

    Tensor cc = scaled_dot_attention(matmul_nt(h, layer.cWq), cache.cK[l], cache.cV[l],
                                     cfg_.heads);
    Tensor fused;
    if (cfg_.use_guidance && cache.eK[l].defined()) {
      Tensor cea = scaled_dot_attention(matmul_nt(h, layer.eWq), cache.eK[l], cache.eV[l],
                                        cfg_.heads);
      Tensor gate = sigmoid(matmul_nt(cc, layer.gate_W));
      if (diag) diag->avg_gate_per_layer.push_back(mean_all(gate).item());
      fused = add(mul(gate, cc), mul(affine(gate, -1.0, 1.0), cea));
    } else {
      fused = cc;
    }
    Tensor y = layernorm(add(h, fused), layer.ln2_g, layer.ln2_b);
    x = layernorm(add(y, feed_forward(y, layer.ffn)), layer.ln3_g, layer.ln3_b);
  }
  return add_rowvec(matmul_nt(x, out_W_), out_b_);
}

Tensor GenModel::loss(const TrainingExample& ex, const Guidance& g,
                      GenDiagnostics* diag) const {
  for (std::size_t i = 0; i < ex.target_tokens.size(); ++i) {
    if (ex.target_ids[i] == Vocab::kUnk && ex.target_tokens[i] != vocab_.token(Vocab::kUnk))
      throw std::invalid_argument("gen: target token outside vocabulary: '" +
                                  ex.target_tokens[i] + "'");
  }
  if (ex.target_ids.empty()) throw std::invalid_argument("gen: empty target");

  EncCache cache =
      make_cache(cfg_.use_guidance ? encode_guidance(g) : Tensor(), encode_history(ex));
  std::vector<int> input{Vocab::kBos};
  input.insert(input.end(), ex.target_ids.begin(), ex.target_ids.end());
  std::vector<int> targets(ex.target_ids.begin(), ex.target_ids.end());
  targets.push_back(Vocab::kEos);

  Tensor logits = decoder_logits(input, cache, diag);
  return scale(mean_all(pick_per_row(log_softmax(logits), targets)), -1.0);
}

std::vector<int> GenModel::decode(const TrainingExample& ex, const Guidance& g,
                                  GenDiagnostics* diag) const {
  NoGradGuard no_grad;
  EncCache cache =
      make_cache(cfg_.use_guidance ? encode_guidance(g) : Tensor(), encode_history(ex));

  struct Beam {
    std::vector<int> ids;  // starts with [BOS]
    double logprob{0.0};
    bool finished{false};
    int emitted{0};
    double norm() const { return emitted > 0 ? logprob / emitted : 0.0; }
  };
  std::vector<Beam> beams{Beam{{Vocab::kBos}, 0.0, false, 0}};
  std::vector<Beam> finished;

  for (int step = 0; step < cfg_.max_gen_len; ++step) {
    struct Cand {
      int beam;
      int token;
      double logprob;
      double norm;
    };
    std::vector<Cand> cands;
    for (std::size_t b = 0; b < beams.size(); ++b) {
      Tensor logits = decoder_logits(beams[b].ids, cache, diag && step == 0 ? diag : nullptr);
      Tensor lp = log_softmax(gather_rows(logits, {logits.rows() - 1}));
      for (int v = 0; v < lp.cols(); ++v) {
        if (v == Vocab::kPad || v == Vocab::kBos) continue;
        double sum = beams[b].logprob + lp.at(0, v);
        cands.push_back({static_cast<int>(b), v, sum,
                         sum / static_cast<double>(beams[b].emitted + 1)});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.norm != b.norm) return a.norm > b.norm;
      if (a.token != b.token) return a.token < b.token;
      return a.beam < b.beam;
    });
    std::vector<Beam> next;
    for (const Cand& c : cands) {
      if (static_cast<int>(next.size()) >= cfg_.beam) break;
      Beam nb = beams[static_cast<std::size_t>(c.beam)];
      nb.ids.push_back(c.token);
      nb.logprob = c.logprob;
      nb.emitted += 1;
      if (c.token == Vocab::kEos) {
        nb.finished = true;
        finished.push_back(nb);
      } else {
        next.push_back(nb);
      }
    }
    if (next.empty()) break;
    beams = std::move(next);
    if (static_cast<int>(finished.size()) >= cfg_.beam) break;
  }
  for (const Beam& b : beams) finished.push_back(b);

  const Beam* best = nullptr;
  for (const Beam& b : finished)
    if (!best || b.norm() > best->norm()) best = &b;

  std::vector<int> out;
  for (std::size_t i = 1; i < best->ids.size(); ++i)
    if (best->ids[i] != Vocab::kEos) out.push_back(best->ids[i]);
  return out;
}

}  // namespace dfmed
