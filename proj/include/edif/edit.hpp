#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "edif/random.hpp"
#include "edif/vocab.hpp"

namespace edif {

/// The four Levenshtein edit operations. Enumerator order is the
/// tie-breaking order (KEEP < REPLACE < INSERT < DELETE) and also the
/// column order of the model's edit head.
enum class EditOp : std::uint8_t { Keep = 0, Replace = 1, Insert = 2, Delete = 3 };

inline constexpr std::size_t kNumEditOps = 4;
inline constexpr std::array<EditOp, kNumEditOps> kAllEditOps{EditOp::Keep, EditOp::Replace,
                                                             EditOp::Insert, EditOp::Delete};

std::string_view op_name(EditOp op);
char op_letter(EditOp op);
EditOp parse_op(std::string_view name);
inline bool carries_content(EditOp op) { return op == EditOp::Insert || op == EditOp::Replace; }

/// RandomWord marks a token in the absorbing state: noising never touches it again.
enum class Origin : std::uint8_t { Original, RandomWord };

struct Token {
  TokenId id = 0;
  Origin origin = Origin::Original;

  friend bool operator==(const Token&, const Token&) = default;
};

struct CaptionState {
  std::vector<Token> tokens;
  int step = 0;
  std::optional<std::size_t> gt_len_hint;

  static CaptionState from_ids(std::span<const TokenId> ids, Origin origin = Origin::Original,
                               int step = 0);
  std::size_t size() const { return tokens.size(); }
  std::vector<TokenId> ids() const;

  friend bool operator==(const CaptionState&, const CaptionState&) = default;
};

struct EditSlot {
  EditOp op = EditOp::Keep;
  std::optional<TokenId> content;

  friend bool operator==(const EditSlot&, const EditSlot&) = default;
};

/// One slot per caption token plus the front sentinel at index 0.
struct EditScript {
  std::vector<EditSlot> slots;

  static EditScript all_keep(std::size_t caption_len) { return {std::vector<EditSlot>(caption_len + 1)}; }
  std::size_t size() const { return slots.size(); }

  /// "K K R(dog) D I(red)"; words are rendered as ids without a vocabulary.
  std::string render(const Vocabulary* vocab = nullptr) const;

  friend bool operator==(const EditScript&, const EditScript&) = default;
};

/// Throws std::invalid_argument when `s` cannot be applied to a caption of
/// length `caption_len`.
void validate_script(const EditScript& s, std::size_t caption_len);

/// Applies `s` left to right. Content words take `content_origin`.
/// The step index is decremented (clamped at 0) when denoising and
/// incremented when recording a noising step.
CaptionState apply_script(const CaptionState& c, const EditScript& s, bool decrement_step,
                          Origin content_origin = Origin::Original);

/// For every slot i >= 1 whose token survives, the index it lands at in the
/// output; nullopt for deleted/replaced tokens.
std::vector<std::optional<std::size_t>> surviving_positions(const EditScript& s);

struct EditWeights {
  double replace = 0.5;
  double del = 0.25;
  double insert = 0.25;
};

struct StepRates {
  double replace = 0;  // alpha
  double del = 0;      // beta
  double insert = 0;   // gamma
  double keep = 1;     // delta
};

/// Parameterizes the per-step transition over edit operations.
class NoiseSchedule {
 public:
  NoiseSchedule() : NoiseSchedule(10, EditWeights{}) {}
  NoiseSchedule(int steps, EditWeights weights, int target_len = 10, double clamp_lo = 0.5,
                double clamp_hi = 2.0);

  int steps() const { return steps_; }
  const EditWeights& weights() const { return weights_; }
  int target_len() const { return target_len_; }
  double clamp_lo() const { return clamp_lo_; }
  double clamp_hi() const { return clamp_hi_; }

 private:
  int steps_;
  EditWeights weights_;
  int target_len_;
  double clamp_lo_;
  double clamp_hi_;
};

/// Rates for noising step t (1-based) of a caption currently `len` tokens long.
/// The absorbed mass nu_t = 1/(T-t+1) is split by the edit weights, with
/// INSERT/DELETE tilted toward the target length.
StepRates step_rates(const NoiseSchedule& sch, int t, std::size_t len);

struct NoisingStep {
  EditScript script;
  CaptionState next;
};

/// Samples x_t from x_{t-1} = c. RandomWord tokens always KEEP; each Original
/// token draws an op from step_rates, and REPLACE/INSERT content is a fresh
/// random word. The anchor of a noising INSERT enters the absorbing state too.
NoisingStep sample_noising_step(const CaptionState& c, const NoiseSchedule& sch, int t,
                                const Vocabulary& vocab, Rng& rng);

}  // namespace edif
