#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dfmed {

/// The seven dialogue acts, in canonical order. The first five are the
/// medical SOAP-note functions, the last two general open-domain acts.
enum class ActLabel : int {
  Inquire = 0,
  MakeDiagnosis = 1,
  PrescribeMedications = 2,
  StateRequiredTest = 3,
  ProvideDailyPrecautions = 4,
  Inform = 5,
  Chitchat = 6,
};

inline constexpr int kNumActs = 7;

/// Canonical name used in corpus files and reports.
const std::string& act_name(ActLabel a);
/// Reserved guidance token, e.g. "[ACT_INQUIRE]".
const std::string& act_token(ActLabel a);
std::optional<ActLabel> act_from_name(const std::string& name);

/// Small set of acts with canonical-order iteration.
struct ActSet {
  std::uint32_t bits{0};

  static ActSet of(std::initializer_list<ActLabel> acts) {
    ActSet s;
    for (ActLabel a : acts) s.insert(a);
    return s;
  }

  void insert(ActLabel a) { bits |= 1u << static_cast<int>(a); }
  bool contains(ActLabel a) const { return bits & (1u << static_cast<int>(a)); }
  bool empty() const { return bits == 0; }
  int size() const { return __builtin_popcount(bits); }
  bool operator==(const ActSet& o) const = default;

  std::vector<ActLabel> list() const {
    std::vector<ActLabel> v;
    for (int i = 0; i < kNumActs; ++i)
      if (bits & (1u << i)) v.push_back(static_cast<ActLabel>(i));
    return v;
  }
};

enum class Role { Patient, Doctor };

struct Utterance {
  Role role{Role::Patient};
  std::vector<std::string> tokens;
  std::vector<std::string> entities;  // KG entity names, may be empty
  ActSet acts;                        // doctor only, nonempty there
};

/// Alternating utterances starting with a patient turn: P_1, D_1, P_2, ...
struct Dialogue {
  std::string id;
  std::vector<Utterance> utterances;

  /// Number of complete (patient, doctor) rounds.
  int rounds() const { return static_cast<int>(utterances.size()) / 2; }
  const Utterance& patient(int k) const { return utterances[static_cast<std::size_t>(2 * (k - 1))]; }
  const Utterance& doctor(int k) const { return utterances[static_cast<std::size_t>(2 * k - 1)]; }
};

using Corpus = std::vector<Dialogue>;

/// Throws std::invalid_argument naming the dialogue and field on violation
/// of the structural invariants (alternation, acts emptiness/nonemptiness).
void validate_dialogue(const Dialogue& d);

}  // namespace dfmed
