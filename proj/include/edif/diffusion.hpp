#pragma once

#include <map>
#include <ostream>
#include <span>
#include <vector>

#include "edif/edit.hpp"
#include "edif/random.hpp"
#include "edif/vocab.hpp"

namespace edif {

/// States x_0 ... x_T of one forward trajectory. x_0 is all Original and
/// every state carries gt_len_hint = |x0|.
std::vector<CaptionState> noise_trajectory(std::span<const TokenId> x0, const NoiseSchedule& sch,
                                           const Vocabulary& vocab, Rng& rng);

struct TrainingExample {
  CaptionState xt;
  int t = 0;
};

/// t ~ U{1..T}, then x_t from a fresh trajectory run forward t steps.
TrainingExample sample_training_example(std::span<const TokenId> x0, const NoiseSchedule& sch,
                                        const Vocabulary& vocab, Rng& rng);

/// n uniform random words, all in the absorbing state, at step `step`.
CaptionState make_random_sequence(std::size_t n, const Vocabulary& vocab, int step, Rng& rng);

/// Anything that can propose a denoising script for a caption at step t.
class ScriptPredictor {
 public:
  virtual ~ScriptPredictor() = default;
  virtual EditScript predict_script(std::span<const TokenId> condition, const CaptionState& c,
                                    int t) const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual int max_step() const = 0;
};

enum class PinMode { Soft, Hard };

/// caption position -> control word
using PinMap = std::map<std::size_t, TokenId>;

struct TraceStep {
  int t = 0;
  EditScript script;
  CaptionState before;
  CaptionState after;
};

struct DenoiseResult {
  CaptionState caption;
  std::vector<TraceStep> trace;
};

/// Runs `steps` denoising iterations with time index t = steps, ..., 1 (clamped
/// to the predictor's horizon). Pinned words are written into the input
/// first; in hard mode their slots are forced to KEEP at every step.
DenoiseResult denoise_loop(const ScriptPredictor& model, std::span<const TokenId> condition,
                           CaptionState c, int steps, const PinMap& pins = {},
                           PinMode mode = PinMode::Soft);

/// One JSON object per step: {t, ops, words, caption_before, caption_after}.
void write_trace_jsonl(std::ostream& out, std::span<const TraceStep> trace, const Vocabulary& vocab);

}  // namespace edif
