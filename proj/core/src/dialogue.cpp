#include "dfmed/dialogue.hpp"

#include <array>
#include <stdexcept>

namespace dfmed {

namespace {

const std::array<std::string, kNumActs> kActNames = {
    "Inquire",  "MakeDiagnosis", "PrescribeMedications", "StateRequiredTest",
    "ProvideDailyPrecautions", "Inform", "Chitchat"};

const std::array<std::string, kNumActs> kActTokens = {
    "[ACT_INQUIRE]",  "[ACT_MAKE_DIAGNOSIS]", "[ACT_PRESCRIBE_MEDICATIONS]",
    "[ACT_STATE_REQUIRED_TEST]", "[ACT_PROVIDE_DAILY_PRECAUTIONS]", "[ACT_INFORM]",
    "[ACT_CHITCHAT]"};

}  // namespace

const std::string& act_name(ActLabel a) { return kActNames[static_cast<std::size_t>(a)]; }
const std::string& act_token(ActLabel a) { return kActTokens[static_cast<std::size_t>(a)]; }

std::optional<ActLabel> act_from_name(const std::string& name) {
  for (int i = 0; i < kNumActs; ++i)
    if (kActNames[static_cast<std::size_t>(i)] == name) return static_cast<ActLabel>(i);
  return std::nullopt;
}

void validate_dialogue(const Dialogue& d) {
  auto fail = [&d](const std::string& what) {
    throw std::invalid_argument("dialogue '" + d.id + "': " + what);
  };
  if (d.utterances.size() < 2) fail("needs at least one (patient, doctor) pair");
  if (d.utterances.size() % 2 != 0) fail("must end on a doctor utterance");
  for (std::size_t i = 0; i < d.utterances.size(); ++i) {
    const Utterance& u = d.utterances[i];
    Role expect = (i % 2 == 0) ? Role::Patient : Role::Doctor;
    if (u.role != expect)
      fail("field 'role': utterance " + std::to_string(i) + " breaks patient/doctor alternation");
    if (u.role == Role::Patient && !u.acts.empty())
      fail("field 'acts': patient utterance " + std::to_string(i) + " must have no acts");
    if (u.role == Role::Doctor && u.acts.empty())
      fail("field 'acts': doctor utterance " + std::to_string(i) + " must have at least one act");
    if (u.tokens.empty())
      fail("field 'tokens': utterance " + std::to_string(i) + " is empty");
  }
}

}  // namespace dfmed
