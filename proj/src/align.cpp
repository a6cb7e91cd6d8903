#include "edif/align.hpp"

#include <algorithm>

namespace edif {

namespace {

class CostGrid {
 public:
  CostGrid(std::span<const TokenId> a, std::span<const TokenId> b)
      : rows_(a.size() + 1), cols_(b.size() + 1), cost_(rows_ * cols_) {
    for (std::size_t i = 0; i < rows_; ++i) at(i, 0) = static_cast<int>(i) * kIndelCost;
    for (std::size_t j = 0; j < cols_; ++j) at(0, j) = static_cast<int>(j) * kIndelCost;
    for (std::size_t i = 1; i < rows_; ++i) {
      for (std::size_t j = 1; j < cols_; ++j) {
        const int diag = at(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : kReplaceCost);
        at(i, j) = std::min({diag, at(i, j - 1) + kIndelCost, at(i - 1, j) + kIndelCost});
      }
    }
  }

  int at(std::size_t i, std::size_t j) const { return cost_[i * cols_ + j]; }
  int& at(std::size_t i, std::size_t j) { return cost_[i * cols_ + j]; }
  int total() const { return at(rows_ - 1, cols_ - 1); }

 private:
  std::size_t rows_, cols_;
  std::vector<int> cost_;
};

}  // namespace

int weighted_ldist(std::span<const TokenId> a, std::span<const TokenId> b) {
  return CostGrid(a, b).total();
}

double lev_ratio(std::span<const TokenId> a, std::span<const TokenId> b) {
  const auto total = a.size() + b.size();
  if (total == 0) return 1.0;
  return static_cast<double>(static_cast<int>(total) - weighted_ldist(a, b)) / static_cast<double>(total);
}

std::vector<AlignedOp> optimal_path(std::span<const TokenId> source, std::span<const TokenId> target) {
  // The grid over reversed inputs holds suffix costs, so the path is traced from the front.
  const std::vector<TokenId> rs(source.rbegin(), source.rend());
  const std::vector<TokenId> rt(target.rbegin(), target.rend());
  const CostGrid grid(rs, rt);
  const std::size_t m = source.size();
  const std::size_t n = target.size();
  auto rest = [&](std::size_t i, std::size_t j) { return grid.at(m - i, n - j); };
  std::vector<AlignedOp> path;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < m || j < n) {
    const int here = rest(i, j);
    if (i < m && j < n && source[i] == target[j] && here == rest(i + 1, j + 1)) {
      path.push_back({EditOp::Keep, i + 1, std::nullopt});
      ++i, ++j;
    } else if (i < m && j < n && source[i] != target[j] && here == rest(i + 1, j + 1) + kReplaceCost) {
      path.push_back({EditOp::Replace, i + 1, target[j]});
      ++i, ++j;
    } else if (j < n && here == rest(i, j + 1) + kIndelCost) {
      path.push_back({EditOp::Insert, i, target[j]});
      ++j;
    } else {
      path.push_back({EditOp::Delete, i + 1, std::nullopt});
      ++i;
    }
  }
  return path;
}

int path_cost(std::span<const AlignedOp> path) {
  int cost = 0;
  for (const auto& step : path) {
    if (step.op == EditOp::Replace) cost += kReplaceCost;
    if (step.op == EditOp::Insert || step.op == EditOp::Delete) cost += kIndelCost;
  }
  return cost;
}

EditScript align(std::span<const TokenId> source, std::span<const TokenId> target) {
  const auto path = optimal_path(source, target);

  // Per source position: its own op, and the first word of the insertion gap after it.
  std::vector<EditOp> own(source.size() + 1, EditOp::Keep);
  std::vector<std::optional<TokenId>> replacement(source.size() + 1);
  std::vector<std::optional<TokenId>> first_gap_word(source.size() + 1);
  for (const auto& step : path) {
    if (step.op == EditOp::Insert) {
      if (!first_gap_word[step.source]) first_gap_word[step.source] = step.word;
    } else {
      own[step.source] = step.op;
      if (step.op == EditOp::Replace) replacement[step.source] = step.word;
    }
  }

  EditScript script = EditScript::all_keep(source.size());
  if (first_gap_word[0]) script.slots[0] = {EditOp::Insert, first_gap_word[0]};
  for (std::size_t i = 1; i <= source.size(); ++i) {
    auto& slot = script.slots[i];
    switch (own[i]) {
      case EditOp::Keep:
        if (first_gap_word[i]) slot = {EditOp::Insert, first_gap_word[i]};
        break;
      case EditOp::Replace:
        slot = {EditOp::Replace, replacement[i]};
        break;
      case EditOp::Delete:
        slot = {EditOp::Delete, std::nullopt};
        break;
      case EditOp::Insert:
        break;
    }
  }
  return script;
}

EditScript align(const CaptionState& xt, std::span<const TokenId> x0) {
  const auto ids = xt.ids();
  return align(ids, x0);
}

}  // namespace edif
