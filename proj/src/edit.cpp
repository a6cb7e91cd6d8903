#include "edif/edit.hpp"

#include <algorithm>
#include <stdexcept>

namespace edif {

std::string_view op_name(EditOp op) {
  switch (op) {
    case EditOp::Keep: return "KEEP";
    case EditOp::Replace: return "REPLACE";
    case EditOp::Insert: return "INSERT";
    case EditOp::Delete: return "DELETE";
  }
  return "?";
}

char op_letter(EditOp op) { return op_name(op)[0]; }

EditOp parse_op(std::string_view name) {
  for (auto op : kAllEditOps) {
    if (name == op_name(op) || (name.size() == 1 && name[0] == op_letter(op))) return op;
  }
  throw std::invalid_argument("unknown edit op '" + std::string(name) + "'");
}

CaptionState CaptionState::from_ids(std::span<const TokenId> ids, Origin origin, int step) {
  CaptionState c;
  c.step = step;
  c.tokens.reserve(ids.size());
  for (auto id : ids) c.tokens.push_back({id, origin});
  return c;
}

std::vector<TokenId> CaptionState::ids() const {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.id);
  return out;
}

std::string EditScript::render(const Vocabulary* vocab) const {
  std::string out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (i) out += ' ';
    out += op_letter(slots[i].op);
    if (slots[i].content) {
      out += '(';
      out += vocab ? vocab->decode(*slots[i].content) : std::to_string(*slots[i].content);
      out += ')';
    }
  }
  return out;
}

void validate_script(const EditScript& s, std::size_t caption_len) {
  if (s.slots.size() != caption_len + 1) {
    throw std::invalid_argument("edit script has " + std::to_string(s.slots.size()) +
                                " slots for a caption of length " + std::to_string(caption_len));
  }
  const auto& sentinel = s.slots.front().op;
  if (sentinel == EditOp::Delete || sentinel == EditOp::Replace) {
    throw std::invalid_argument("sentinel slot only admits KEEP or INSERT");
  }
  for (std::size_t i = 0; i < s.slots.size(); ++i) {
    const auto& slot = s.slots[i];
    if (carries_content(slot.op) != slot.content.has_value()) {
      throw std::invalid_argument("slot " + std::to_string(i) + ": " + std::string(op_name(slot.op)) +
                                  (slot.content ? " must not carry content" : " requires a content word"));
    }
  }
}

CaptionState apply_script(const CaptionState& c, const EditScript& s, bool decrement_step,
                          Origin content_origin) {
  validate_script(s, c.size());
  CaptionState out;
  out.gt_len_hint = c.gt_len_hint;
  out.step = decrement_step ? std::max(0, c.step - 1) : c.step + 1;
  out.tokens.reserve(c.size() + s.size());

  if (s.slots[0].op == EditOp::Insert) out.tokens.push_back({*s.slots[0].content, content_origin});
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& slot = s.slots[i + 1];
    switch (slot.op) {
      case EditOp::Keep:
        out.tokens.push_back(c.tokens[i]);
        break;
      case EditOp::Delete:
        break;
      case EditOp::Replace:
        out.tokens.push_back({*slot.content, content_origin});
        break;
      case EditOp::Insert:
        out.tokens.push_back(c.tokens[i]);
        out.tokens.push_back({*slot.content, content_origin});
        break;
    }
  }
  return out;
}

std::vector<std::optional<std::size_t>> surviving_positions(const EditScript& s) {
  std::vector<std::optional<std::size_t>> out(s.slots.size() > 0 ? s.slots.size() - 1 : 0);
  std::size_t pos = s.slots.empty() || s.slots[0].op != EditOp::Insert ? 0 : 1;
  for (std::size_t i = 1; i < s.slots.size(); ++i) {
    switch (s.slots[i].op) {
      case EditOp::Keep: out[i - 1] = pos++; break;
      case EditOp::Insert: out[i - 1] = pos; pos += 2; break;
      case EditOp::Replace: ++pos; break;
      case EditOp::Delete: break;
    }
  }
  return out;
}

NoiseSchedule::NoiseSchedule(int steps, EditWeights weights, int target_len, double clamp_lo,
                             double clamp_hi)
    : steps_(steps), weights_(weights), target_len_(target_len), clamp_lo_(clamp_lo), clamp_hi_(clamp_hi) {
  if (steps < 1) throw std::invalid_argument("noise schedule needs T >= 1");
  if (weights.replace < 0 || weights.del < 0 || weights.insert < 0) {
    throw std::invalid_argument("edit weights must be non-negative");
  }
  const double sum = weights.replace + weights.del + weights.insert;
  if (sum > 1.0 + 1e-12) throw std::invalid_argument("edit weights must sum to at most 1");
  if (sum <= 0) throw std::invalid_argument("edit weights sum to zero; the final step cannot absorb");
  if (target_len < 1) throw std::invalid_argument("target length must be positive");
  if (!(clamp_lo > 0 && clamp_lo <= 1.0 && clamp_hi >= 1.0)) {
    throw std::invalid_argument("length clamp must satisfy 0 < lo <= 1 <= hi");
  }
}

StepRates step_rates(const NoiseSchedule& sch, int t, std::size_t len) {
  if (t < 1 || t > sch.steps()) {
    throw std::out_of_range("noising step " + std::to_string(t) + " outside [1, " +
                            std::to_string(sch.steps()) + "]");
  }
  const double nu = 1.0 / static_cast<double>(sch.steps() - t + 1);
  const double l = static_cast<double>(std::max<std::size_t>(len, 1));
  const double target = static_cast<double>(sch.target_len());
  const double grow = std::clamp(target / l, sch.clamp_lo(), sch.clamp_hi());
  const double shrink = std::clamp(l / target, sch.clamp_lo(), sch.clamp_hi());

  const auto& w = sch.weights();
  double replace = w.replace;
  double del = w.del * shrink;
  double insert = w.insert * grow;
  const double z = replace + del + insert;

  StepRates r;
  r.replace = nu * replace / z;
  r.del = nu * del / z;
  r.insert = nu * insert / z;
  r.keep = 1.0 - nu;
  return r;
}

NoisingStep sample_noising_step(const CaptionState& c, const NoiseSchedule& sch, int t,
                                const Vocabulary& vocab, Rng& rng) {
  if (c.step != t - 1) {
    throw std::invalid_argument("noising step " + std::to_string(t) + " applied to a state at step " +
                                std::to_string(c.step));
  }
  const StepRates r = step_rates(sch, t, c.size());

  NoisingStep out;
  out.script = EditScript::all_keep(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c.tokens[i].origin == Origin::RandomWord) continue;
    const double u = uniform01(rng);
    auto& slot = out.script.slots[i + 1];
    if (u < r.replace) {
      slot.op = EditOp::Replace;
    } else if (u < r.replace + r.del) {
      slot.op = EditOp::Delete;
    } else if (u < 1.0 - r.keep) {
      slot.op = EditOp::Insert;
    }
    if (carries_content(slot.op)) slot.content = vocab.sample_random_word(rng);
  }

  out.next = apply_script(c, out.script, /*decrement_step=*/false, Origin::RandomWord);
  // An INSERT anchor counts as noised: it joins the absorbing state.
  const auto landed = surviving_positions(out.script);
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (out.script.slots[i + 1].op == EditOp::Insert) out.next.tokens[*landed[i]].origin = Origin::RandomWord;
  }
  return out;
}

}  // namespace edif
