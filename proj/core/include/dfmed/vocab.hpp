#pragma once

#include <map>
#include <string>
#include <vector>

#include "dfmed/dialogue.hpp"
#include "dfmed/kg.hpp"

namespace dfmed {

/// Closed whitespace-token vocabulary: specials, the seven act guidance
/// tokens, then the sorted word inventory of the corpus and KG names.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kPatient = 4;  // [P]
  static constexpr int kDoctor = 5;   // [D]
  static constexpr int kActBase = 6;  // 7 act tokens follow
  static constexpr int kFirstWord = kActBase + kNumActs;

  Vocab() = default;

  static Vocab build(const Corpus& corpus, const KnowledgeGraph& kg);
  /// Rebuild from a stored token list (checkpoint manifests).
  static Vocab from_tokens(const std::vector<std::string>& all_tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  /// kUnk for unknown tokens.
  int id(const std::string& tok) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int act_id(ActLabel a) const { return kActBase + static_cast<int>(a); }

  std::vector<int> encode(const std::vector<std::string>& toks) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

}  // namespace dfmed
