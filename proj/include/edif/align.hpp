#pragma once

#include <optional>
#include <span>
#include <vector>

#include "edif/edit.hpp"
#include "edif/vocab.hpp"

namespace edif {

inline constexpr int kReplaceCost = 2;
inline constexpr int kIndelCost = 1;

/// Minimum of #INSERT + #DELETE + 2 * #REPLACE turning `a` into `b`.
int weighted_ldist(std::span<const TokenId> a, std::span<const TokenId> b);

/// (m + n - ldist) / (m + n); two empty sequences have ratio 1.
double lev_ratio(std::span<const TokenId> a, std::span<const TokenId> b);

/// One step of an optimal alignment. For KEEP/REPLACE/DELETE, `source` is the
/// 1-based position in the source sequence. For INSERT it is the gap the word
/// goes into: after source token `source`, with 0 meaning the front.
struct AlignedOp {
  EditOp op = EditOp::Keep;
  std::size_t source = 0;
  std::optional<TokenId> word;
};

/// A minimum-cost path in source order, ties broken KEEP > REPLACE > INSERT > DELETE
/// at each step from the front, so unmatched stretches line up from their left end.
std::vector<AlignedOp> optimal_path(std::span<const TokenId> source, std::span<const TokenId> target);

int path_cost(std::span<const AlignedOp> path);

/// Ground-truth single-step script moving `source` toward `target`. Insertion
/// runs are cut to their first word, and dropped entirely behind a REPLACE or
/// DELETE; the remainder is left for later denoising steps.
EditScript align(std::span<const TokenId> source, std::span<const TokenId> target);
EditScript align(const CaptionState& xt, std::span<const TokenId> x0);

}  // namespace edif
