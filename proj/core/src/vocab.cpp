#include "dfmed/vocab.hpp"

#include <set>
#include <stdexcept>

namespace dfmed {

namespace {

std::vector<std::string> special_tokens() {
  std::vector<std::string> v = {"[PAD]", "[BOS]", "[EOS]", "[UNK]", "[P]", "[D]"};
  for (int i = 0; i < kNumActs; ++i) v.push_back(act_token(static_cast<ActLabel>(i)));
  return v;
}

}  // namespace

Vocab Vocab::build(const Corpus& corpus, const KnowledgeGraph& kg) {
  std::set<std::string> words;
  for (const auto& d : corpus)
    for (const auto& u : d.utterances)
      for (const auto& t : u.tokens) words.insert(t);
  for (int id = 0; id < kg.size(); ++id)
    for (const auto& t : kg.name(id)) words.insert(t);

  std::vector<std::string> all = special_tokens();
  for (const auto& w : words) all.push_back(w);
  return from_tokens(all);
}

Vocab Vocab::from_tokens(const std::vector<std::string>& all_tokens) {
  Vocab v;
  std::vector<std::string> specials = special_tokens();
  if (all_tokens.size() < specials.size())
    throw std::invalid_argument("vocab: token list shorter than the special inventory");
  for (std::size_t i = 0; i < specials.size(); ++i)
    if (all_tokens[i] != specials[i])
      throw std::invalid_argument("vocab: token " + std::to_string(i) + " must be " + specials[i]);
  v.tokens_ = all_tokens;
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.ids_.emplace(v.tokens_[i], static_cast<int>(i)).second)
      throw std::invalid_argument("vocab: duplicate token " + v.tokens_[i]);
  }
  return v;
}

int Vocab::id(const std::string& tok) const {
  auto it = ids_.find(tok);
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<int> Vocab::encode(const std::vector<std::string>& toks) const {
  std::vector<int> out;
  out.reserve(toks.size());
  for (const auto& t : toks) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

}  // namespace dfmed
