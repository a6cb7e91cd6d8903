#include "edif/diffusion.hpp"

#include <json.hpp>
#include <stdexcept>

#include "edif/error.hpp"

namespace edif {

std::vector<CaptionState> noise_trajectory(std::span<const TokenId> x0, const NoiseSchedule& sch,
                                           const Vocabulary& vocab, Rng& rng) {
  if (x0.empty()) throw std::invalid_argument("cannot noise an empty caption");
  std::vector<CaptionState> states;
  states.reserve(static_cast<std::size_t>(sch.steps()) + 1);
  states.push_back(CaptionState::from_ids(x0, Origin::Original, 0));
  states.back().gt_len_hint = x0.size();
  for (int t = 1; t <= sch.steps(); ++t) {
    states.push_back(sample_noising_step(states.back(), sch, t, vocab, rng).next);
  }
  return states;
}

TrainingExample sample_training_example(std::span<const TokenId> x0, const NoiseSchedule& sch,
                                        const Vocabulary& vocab, Rng& rng) {
  if (x0.empty()) throw std::invalid_argument("cannot noise an empty caption");
  TrainingExample ex;
  ex.t = static_cast<int>(1 + uniform_index(rng, static_cast<std::size_t>(sch.steps())));
  ex.xt = CaptionState::from_ids(x0, Origin::Original, 0);
  ex.xt.gt_len_hint = x0.size();
  for (int t = 1; t <= ex.t; ++t) ex.xt = sample_noising_step(ex.xt, sch, t, vocab, rng).next;
  return ex;
}

CaptionState make_random_sequence(std::size_t n, const Vocabulary& vocab, int step, Rng& rng) {
  if (n < 1) throw std::invalid_argument("random sequence length must be at least 1");
  CaptionState c;
  c.step = step;
  c.tokens.reserve(n);
  for (std::size_t i = 0; i < n; ++i) c.tokens.push_back({vocab.sample_random_word(rng), Origin::RandomWord});
  return c;
}

DenoiseResult denoise_loop(const ScriptPredictor& model, std::span<const TokenId> condition,
                           CaptionState c, int steps, const PinMap& pins, PinMode mode) {
  if (steps < 1) throw std::invalid_argument("denoising needs at least one step");
  for (const auto& [pos, word] : pins) {
    if (pos >= c.size()) {
      throw std::out_of_range("pinned position " + std::to_string(pos) + " outside caption of length " +
                              std::to_string(c.size()));
    }
    if (word < 0 || static_cast<std::size_t>(word) >= model.vocab_size()) {
      throw std::invalid_argument("pinned word outside the model vocabulary");
    }
    c.tokens[pos] = {word, Origin::Original};
  }
  for (const auto& tok : c.tokens) {
    if (tok.id < 0 || static_cast<std::size_t>(tok.id) >= model.vocab_size()) {
      throw FormatError("caption token " + std::to_string(tok.id) + " outside the model vocabulary of size " +
                        std::to_string(model.vocab_size()));
    }
  }

  std::vector<std::size_t> pinned;
  for (const auto& entry : pins) pinned.push_back(entry.first);

  DenoiseResult result;
  result.trace.reserve(static_cast<std::size_t>(steps));
  for (int t = steps; t >= 1; --t) {
    EditScript script = model.predict_script(condition, c, std::min(t, model.max_step()));
    if (mode == PinMode::Hard) {
      for (auto pos : pinned) script.slots[pos + 1] = {EditOp::Keep, std::nullopt};
    }
    CaptionState next = apply_script(c, script, /*decrement_step=*/true, Origin::Original);
    if (mode == PinMode::Hard) {
      const auto landed = surviving_positions(script);
      for (auto& pos : pinned) pos = *landed[pos];
    }
    result.trace.push_back({t, std::move(script), std::move(c), next});
    c = std::move(next);
  }
  result.caption = std::move(c);
  return result;
}

void write_trace_jsonl(std::ostream& out, std::span<const TraceStep> trace, const Vocabulary& vocab) {
  for (const auto& step : trace) {
    nlohmann::json ops = nlohmann::json::array();
    nlohmann::json words = nlohmann::json::array();
    for (const auto& slot : step.script.slots) {
      ops.push_back(std::string(op_name(slot.op)));
      words.push_back(slot.content ? nlohmann::json(vocab.decode(*slot.content)) : nlohmann::json());
    }
    nlohmann::json row;
    row["t"] = step.t;
    row["ops"] = std::move(ops);
    row["words"] = std::move(words);
    row["caption_before"] = vocab.decode_text(step.before.ids());
    row["caption_after"] = vocab.decode_text(step.after.ids());
    out << row.dump() << '\n';
  }
}

}  // namespace edif
