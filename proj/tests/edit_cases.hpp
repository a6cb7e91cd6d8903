#pragma once

// Hand-written apply_script cases shared by the unit tests and the acceptance run.

#include <optional>
#include <string>
#include <vector>

#include "edif/edit.hpp"
#include "edif/vocab.hpp"

namespace cases {

struct ApplyCase {
  const char* caption;
  const char* script;  // sentinel first: "K", "D", "R(w)", "I(w)"
  const char* expected;  // nullptr = must throw
};

inline const std::vector<ApplyCase>& apply_cases() {
  static const std::vector<ApplyCase> table{
      {"a cat sat mat", "K K R(dog) D I(red)", "a dog mat red"},
      {"a b c", "K K K K", "a b c"},
      {"red cat", "I(a) K K", "a red cat"},
      {"a b c", "K D D D", ""},
      {"", "K", ""},
      {"", "I(a)", "a"},
      {"a", "K R(b)", "b"},
      {"a b", "K K I(c)", "a b c"},
      {"a b", "I(x) I(y) I(z)", "x a y b z"},
      {"a b c", "K R(x) R(y) R(z)", "x y z"},
      {"a b c", "K D K K", "b c"},
      {"a b c", "K K K D", "a b"},
      {"a b", "I(x) D D", "x"},
      {"a b c d", "K R(x) I(y) D K", "x b y d"},
      {"a", "K I(a)", "a a"},
      {"a b", "K R(a) K", "a b"},
      {"a b c d e", "K D K D K D", "b d"},
      {"b", "I(a) D", "a"},
      {"the cat sat on the mat", "K K K R(lay) K K R(rug)", "the cat lay on the rug"},
      {"a b c", "I(x) I(y) I(z) I(w)", "x a y b z c w"},
      {"a b c d e", "K K D D D K", "a e"},
      {"a b", "K R(c) D", "c"},
      {"a", "K D", ""},
      {"a b", "K K", nullptr},
      {"a b", "K K K K", nullptr},
      {"a", "R(x) K", nullptr},
      {"a", "D K", nullptr},
      {"a", "K I", nullptr},
      {"a", "K K(x)", nullptr},
      {"a b", "K R D", nullptr},
  };
  return table;
}

inline edif::Vocabulary case_vocab() {
  std::vector<std::string> words{"a", "b", "c", "d", "e", "x", "y", "z", "w", "cat", "dog", "sat", "mat",
                                 "red", "the", "on", "lay", "rug"};
  return edif::Vocabulary::build(words);
}

/// Parses "K R(dog) I(red)" into slots.
inline edif::EditScript parse_script(const std::string& text, const edif::Vocabulary& v) {
  edif::EditScript s;
  for (const auto& item : edif::split_words(text)) {
    edif::EditSlot slot;
    slot.op = edif::parse_op(item.substr(0, 1));
    if (auto open = item.find('('); open != std::string::npos) {
      slot.content = v.encode(item.substr(open + 1, item.size() - open - 2));
    }
    s.slots.push_back(slot);
  }
  return s;
}

/// Runs one case. Returns true when the outcome matches the table.
inline bool run_case(const ApplyCase& c, const edif::Vocabulary& v) {
  const auto state = edif::CaptionState::from_ids(v.encode_text(c.caption), edif::Origin::Original, 3);
  const auto script = parse_script(c.script, v);
  try {
    const auto out = edif::apply_script(state, script, true);
    return c.expected != nullptr && v.decode_text(out.ids()) == c.expected && out.step == 2;
  } catch (const std::invalid_argument&) {
    return c.expected == nullptr;
  }
}

}  // namespace cases
