#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "edif/diffusion.hpp"
#include "edif/edit.hpp"
#include "edif/world.hpp"

#include <json.hpp>

namespace edif {

using Sentence = std::span<const TokenId>;

double exact_match(Sentence hyp, Sentence ref);
/// F1 over token multisets. Throws on an empty reference.
double token_f1(Sentence hyp, Sentence ref);
/// Mean lev_ratio over (hyp, ref) pairs; 0 for no pairs.
double mean_ratio(std::span<const std::pair<std::vector<TokenId>, std::vector<TokenId>>> pairs);

inline constexpr double kBleuEpsilon = 1e-9;

/// Sentence BLEU-N with brevity penalty against the closest reference length.
/// Zero match counts are replaced by kBleuEpsilon. Empty hypothesis scores 0.
double bleu(Sentence hyp, std::span<const std::vector<TokenId>> refs, int n = 4);
/// Corpus BLEU-N: counts and lengths pooled before the geometric mean.
double corpus_bleu(std::span<const std::vector<TokenId>> hyps, std::span<const std::vector<TokenId>> refs,
                   int n = 4);

/// True if `pins` appear in `output` as a subsequence in the given order.
bool retains_in_order(Sentence output, Sentence pins);
/// Fraction of outputs retaining their pins in order. 0 for no outputs.
double retention_rate(std::span<const std::vector<TokenId>> outputs, std::span<const std::vector<TokenId>> pins);

enum class EvalMode { InDomain, Ood, RandomRef, Control };

std::string eval_mode_name(EvalMode m);
EvalMode parse_eval_mode(const std::string& s);

struct EvalOptions {
  EvalMode mode = EvalMode::RandomRef;
  int steps = 10;
  std::uint64_t seed = 1;
  /// OOD corruption ratio.
  double ratio = 0.5;
  /// Random reference length (random_ref and control).
  std::size_t random_len = 10;
  /// Control words per example.
  std::size_t num_pins = 2;
  PinMode pin_mode = PinMode::Hard;
  /// 0 = all examples of the split.
  std::size_t limit = 0;
  unsigned threads = 1;
  /// Noise schedule used to build in-domain references.
  NoiseSchedule schedule{};
};

struct EvalRow {
  int scene_id = 0;
  std::vector<TokenId> input;
  std::vector<TokenId> output;
  std::vector<TokenId> reference;
  std::vector<TokenId> pins;
  double exact_match = 0.0;
  double f1 = 0.0;
  double ratio = 0.0;
  double input_ratio = 0.0;
};

struct Report {
  std::string mode;
  int steps = 0;
  std::uint64_t seed = 0;
  std::vector<EvalRow> rows;
  /// Fixed order: output metrics, then the same metrics for the inputs.
  std::vector<std::pair<std::string, double>> aggregates;
  std::vector<std::pair<std::string, std::string>> config;

  double aggregate(const std::string& name) const;
};

/// Builds a starting sequence per example from `mode`, denoises it for
/// `steps` iterations, and scores input and output against the ground truth.
/// Example i draws from make_rng(seed, i), so results do not depend on
/// the thread count.
Report evaluate(const ScriptPredictor& model, std::span<const Example> examples, const Vocabulary& vocab,
                const EvalOptions& opts);

nlohmann::json report_json(const Report& report, const Vocabulary& vocab);
/// One header line, then one line per report: label columns followed by aggregates.
void write_aggregates_csv(std::ostream& out, std::span<const Report> reports,
                          const std::vector<std::string>& label_names,
                          const std::vector<std::vector<std::string>>& labels);

}  // namespace edif
