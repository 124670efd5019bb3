#include "dfmed/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace dfmed {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, long> ngram_counts(const TokenSeq& toks, int n) {
  std::map<Ngram, long> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i)
    ++counts[Ngram(toks.begin() + static_cast<long>(i),
                   toks.begin() + static_cast<long>(i) + n)];
  return counts;
}

long clipped_overlap(const std::map<Ngram, long>& a, const std::map<Ngram, long>& b) {
  long total = 0;
  for (const auto& [g, ca] : a) {
    auto it = b.find(g);
    if (it != b.end()) total += std::min(ca, it->second);
  }
  return total;
}

void check_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw std::invalid_argument(std::string(what) + ": hypothesis/reference counts differ (" +
                                std::to_string(a) + " vs " + std::to_string(b) + ")");
}

}  // namespace

double bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references,
            int n) {
  check_aligned(hypotheses.size(), references.size(), "bleu");
  if (n < 1) throw std::invalid_argument("bleu: n < 1");
  std::vector<long> correct(static_cast<std::size_t>(n), 0);
  std::vector<long> total(static_cast<std::size_t>(n), 0);
  long hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    hyp_len += static_cast<long>(hypotheses[i].size());
    ref_len += static_cast<long>(references[i].size());
    for (int k = 1; k <= n; ++k) {
      auto h = ngram_counts(hypotheses[i], k);
      auto r = ngram_counts(references[i], k);
      long t = 0;
      for (const auto& [g, c] : h) t += c;
      total[static_cast<std::size_t>(k - 1)] += t;
      correct[static_cast<std::size_t>(k - 1)] += clipped_overlap(h, r);
    }
  }
  if (hyp_len == 0 || total[0] == 0) return 0.0;

  double log_prec = 0.0;
  for (int k = 1; k <= n; ++k) {
    long c = correct[static_cast<std::size_t>(k - 1)];
    long t = total[static_cast<std::size_t>(k - 1)];
    double p;
    if (k >= 2 && c == 0)
      p = static_cast<double>(c + 1) / static_cast<double>(t + 1);
    else if (t == 0)
      p = 0.0;
    else
      p = static_cast<double>(c) / static_cast<double>(t);
    if (p <= 0.0) return 0.0;
    log_prec += std::log(p);
  }
  double bp = hyp_len < ref_len
                  ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len))
                  : 1.0;
  return 100.0 * bp * std::exp(log_prec / n);
}

RougeResult rouge(const std::vector<TokenSeq>& hypotheses,
                  const std::vector<TokenSeq>& references, int n) {
  check_aligned(hypotheses.size(), references.size(), "rouge");
  if (n < 1) throw std::invalid_argument("rouge: n < 1");
  RougeResult out;
  double sum_f1 = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    auto r = ngram_counts(references[i], n);
    if (r.empty()) {
      ++out.pairs_skipped;
      continue;
    }
    auto h = ngram_counts(hypotheses[i], n);
    long h_total = 0, r_total = 0;
    for (const auto& [g, c] : h) h_total += c;
    for (const auto& [g, c] : r) r_total += c;
    long overlap = clipped_overlap(h, r);
    double p = h_total > 0 ? static_cast<double>(overlap) / h_total : 0.0;
    double rec = static_cast<double>(overlap) / r_total;
    double f1 = (p + rec) > 0 ? 2.0 * p * rec / (p + rec) : 0.0;
    sum_f1 += f1;
    ++out.pairs_used;
  }
  out.f1 = out.pairs_used > 0 ? 100.0 * sum_f1 / out.pairs_used : 0.0;
  return out;
}

EntityPrf entity_prf(const std::vector<TokenSeq>& hypotheses,
                     const std::vector<std::vector<std::string>>& gold_sets,
                     const KnowledgeGraph& kg) {
  check_aligned(hypotheses.size(), gold_sets.size(), "entity_prf");
  EntityPrf out;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    std::set<std::string> pred;
    for (int id : match_entities(hypotheses[i], kg)) pred.insert(kg.joined_name(id));
    std::set<std::string> gold(gold_sets[i].begin(), gold_sets[i].end());
    out.predicted += static_cast<long>(pred.size());
    out.gold += static_cast<long>(gold.size());
    for (const auto& name : pred)
      if (gold.count(name)) ++out.matched;
  }
  out.precision = out.predicted > 0 ? 100.0 * out.matched / out.predicted : 0.0;
  out.recall = out.gold > 0 ? 100.0 * out.matched / out.gold : 0.0;
  out.f1 = (out.precision + out.recall) > 0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

std::optional<double> recall_at_k(const std::vector<ScoredCandidates>& scored,
                                  const std::vector<std::vector<int>>& gold_sets, int k) {
  check_aligned(scored.size(), gold_sets.size(), "recall_at_k");
  long hits = 0, total_gold = 0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (gold_sets[i].empty()) continue;
    total_gold += static_cast<long>(gold_sets[i].size());
    const auto& sc = scored[i];
    std::vector<int> order(sc.ids.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = static_cast<int>(j);
    std::sort(order.begin(), order.end(), [&sc](int a, int b) {
      if (sc.scores[static_cast<std::size_t>(a)] != sc.scores[static_cast<std::size_t>(b)])
        return sc.scores[static_cast<std::size_t>(a)] > sc.scores[static_cast<std::size_t>(b)];
      return sc.ids[static_cast<std::size_t>(a)] < sc.ids[static_cast<std::size_t>(b)];
    });
    std::set<int> gold(gold_sets[i].begin(), gold_sets[i].end());
    int upto = std::min<int>(k, static_cast<int>(order.size()));
    for (int j = 0; j < upto; ++j)
      if (gold.count(sc.ids[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])])) ++hits;
  }
  if (total_gold == 0) return std::nullopt;
  return 100.0 * hits / total_gold;
}

std::optional<double> random_ranking_recall_at_k(const std::vector<int>& pool_sizes,
                                                 const std::vector<int>& gold_counts, int k) {
  check_aligned(pool_sizes.size(), gold_counts.size(), "random_ranking_recall_at_k");
  double expected_hits = 0.0;
  long total_gold = 0;
  for (std::size_t i = 0; i < pool_sizes.size(); ++i) {
    if (gold_counts[i] == 0) continue;
    total_gold += gold_counts[i];
    double frac = pool_sizes[i] > 0
                      ? std::min(1.0, static_cast<double>(k) / pool_sizes[i])
                      : 0.0;
    expected_hits += gold_counts[i] * frac;
  }
  if (total_gold == 0) return std::nullopt;
  return 100.0 * expected_hits / total_gold;
}

WeightedF1Result weighted_f1(const std::vector<ActSet>& predicted,
                             const std::vector<ActSet>& gold) {
  check_aligned(predicted.size(), gold.size(), "weighted_f1");
  WeightedF1Result out;
  double weighted_sum = 0.0;
  for (int j = 0; j < kNumActs; ++j) {
    ActLabel a = static_cast<ActLabel>(j);
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      bool p = predicted[i].contains(a), g = gold[i].contains(a);
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
    ActF1& f = out.per_act[static_cast<std::size_t>(j)];
    f.support = static_cast<int>(tp + fn);
    f.precision = (tp + fp) > 0 ? 100.0 * tp / (tp + fp) : 0.0;
    f.recall = (tp + fn) > 0 ? 100.0 * tp / (tp + fn) : 0.0;
    f.f1 = (f.precision + f.recall) > 0
               ? 2.0 * f.precision * f.recall / (f.precision + f.recall)
               : 0.0;
    if (f.support > 0) {
      weighted_sum += f.f1 * f.support;
      out.total_support += f.support;
    }
  }
  out.weighted = out.total_support > 0 ? weighted_sum / out.total_support : 0.0;
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["counts"] = {{"examples", n_examples},
                 {"examples_with_gold_entities", n_examples_with_gold},
                 {"rouge_pairs_skipped", rouge_pairs_skipped}};
  j["generation"] = {{"B-1", b1}, {"B-2", b2}, {"B-4", b4},
                     {"R-1", r1}, {"R-2", r2},
                     {"E-P", e_p}, {"E-R", e_r}, {"E-F1", e_f1}};
  nlohmann::ordered_json flow;
  flow["topk"] = topk;
  if (r_at_k)
    flow["R@k"] = *r_at_k;
  else
    flow["R@k"] = nullptr;
  flow["Weighted-F1"] = wf1;
  flow["per_act"] = nlohmann::ordered_json::array();
  for (int a = 0; a < kNumActs; ++a) {
    const ActF1& f = per_act[static_cast<std::size_t>(a)];
    flow["per_act"].push_back({{"act", act_name(static_cast<ActLabel>(a))},
                               {"f1", f.f1},
                               {"precision", f.precision},
                               {"recall", f.recall},
                               {"support", f.support},
                               {"threshold", thresholds[static_cast<std::size_t>(a)]}});
  }
  j["flow"] = flow;
  nlohmann::ordered_json base;
  if (random_r_at_k)
    base["random_ranking_R@k"] = *random_r_at_k;
  else
    base["random_ranking_R@k"] = nullptr;
  base["majority_act_Weighted-F1"] = majority_wf1;
  base["majority_act"] = majority_act;
  j["baselines"] = base;
  j["gate"] = {{"avg_per_layer", avg_gate}};
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  auto j = nlohmann::ordered_json::parse(text);
  if (!j.contains("version") || j["version"].get<int>() != 1)
    throw std::invalid_argument("eval report: unsupported version");
  EvalReport r;
  r.n_examples = j["counts"]["examples"].get<int>();
  r.n_examples_with_gold = j["counts"]["examples_with_gold_entities"].get<int>();
  r.rouge_pairs_skipped = j["counts"]["rouge_pairs_skipped"].get<int>();
  const auto& g = j["generation"];
  r.b1 = g["B-1"].get<double>();
  r.b2 = g["B-2"].get<double>();
  r.b4 = g["B-4"].get<double>();
  r.r1 = g["R-1"].get<double>();
  r.r2 = g["R-2"].get<double>();
  r.e_p = g["E-P"].get<double>();
  r.e_r = g["E-R"].get<double>();
  r.e_f1 = g["E-F1"].get<double>();
  const auto& f = j["flow"];
  r.topk = f["topk"].get<int>();
  if (!f["R@k"].is_null()) r.r_at_k = f["R@k"].get<double>();
  r.wf1 = f["Weighted-F1"].get<double>();
  for (int a = 0; a < kNumActs; ++a) {
    const auto& pa = f["per_act"][static_cast<std::size_t>(a)];
    r.per_act[static_cast<std::size_t>(a)] = {pa["precision"].get<double>(),
                                              pa["recall"].get<double>(),
                                              pa["f1"].get<double>(),
                                              pa["support"].get<int>()};
    r.thresholds[static_cast<std::size_t>(a)] = pa["threshold"].get<double>();
  }
  const auto& b = j["baselines"];
  if (!b["random_ranking_R@k"].is_null())
    r.random_r_at_k = b["random_ranking_R@k"].get<double>();
  r.majority_wf1 = b["majority_act_Weighted-F1"].get<double>();
  r.majority_act = b["majority_act"].get<std::string>();
  for (const auto& v : j["gate"]["avg_per_layer"]) r.avg_gate.push_back(v.get<double>());
  return r;
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  auto fmt = [](double v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%6.2f", v);
    return std::string(buf);
  };
  os << "  B-1    B-2    B-4    R-1    R-2    E-P    E-R    E-F1\n";
  os << fmt(b1) << " " << fmt(b2) << " " << fmt(b4) << " " << fmt(r1) << " " << fmt(r2) << " "
     << fmt(e_p) << " " << fmt(e_r) << " " << fmt(e_f1) << "\n\n";
  os << "  Weighted-F1   R@" << topk << "          (baselines: majority "
     << fmt(majority_wf1);
  if (random_r_at_k) os << ", random " << fmt(*random_r_at_k);
  os << ")\n";
  os << fmt(wf1) << "        " << (r_at_k ? fmt(*r_at_k) : "   n/a") << "\n\n";
  os << "  per-act F1 (threshold, support):\n";
  for (int a = 0; a < kNumActs; ++a) {
    const ActF1& f = per_act[static_cast<std::size_t>(a)];
    os << "    " << act_name(static_cast<ActLabel>(a)) << ": " << fmt(f.f1) << " ("
       << thresholds[static_cast<std::size_t>(a)] << ", " << f.support << ")\n";
  }
  if (!avg_gate.empty()) {
    os << "  decoder gate mean per layer:";
    for (double gv : avg_gate) os << " " << fmt(gv);
    os << "\n";
  }
  return os.str();
}

}  // namespace dfmed
