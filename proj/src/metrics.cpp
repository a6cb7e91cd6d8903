#include "edif/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <thread>

#include "edif/align.hpp"
#include "edif/config.hpp"

namespace edif {

namespace {

using NGram = std::vector<TokenId>;

std::map<NGram, std::size_t> ngram_counts(Sentence s, int n) {
  std::map<NGram, std::size_t> counts;
  const auto k = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + k <= s.size(); ++i) ++counts[NGram(s.begin() + i, s.begin() + i + k)];
  return counts;
}

struct BleuStats {
  std::vector<double> matches;
  std::vector<double> totals;
  double hyp_len = 0.0;
  double ref_len = 0.0;
};

void accumulate(BleuStats& st, Sentence hyp, std::span<const std::vector<TokenId>> refs, int n) {
  for (int k = 1; k <= n; ++k) {
    auto hyp_counts = ngram_counts(hyp, k);
    std::map<NGram, std::size_t> max_ref;
    for (const auto& r : refs)
      for (const auto& [g, c] : ngram_counts(r, k)) max_ref[g] = std::max(max_ref[g], c);
    std::size_t matched = 0, total = 0;
    for (const auto& [g, c] : hyp_counts) {
      total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) matched += std::min(c, it->second);
    }
    st.matches[k - 1] += static_cast<double>(matched);
    st.totals[k - 1] += static_cast<double>(total);
  }
  st.hyp_len += static_cast<double>(hyp.size());
  // Closest reference length, shorter on ties.
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [&](std::size_t len) { return len > hyp.size() ? len - hyp.size() : hyp.size() - len; };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  st.ref_len += static_cast<double>(best);
}

double finish(const BleuStats& st, int n) {
  if (st.hyp_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    const double m = st.matches[k] == 0.0 ? kBleuEpsilon : st.matches[k];
    log_sum += std::log(m / std::max(st.totals[k], 1.0));
  }
  const double bp = st.hyp_len > st.ref_len ? 1.0 : std::exp(1.0 - st.ref_len / st.hyp_len);
  return std::clamp(bp * std::exp(log_sum / n), 0.0, 1.0);
}

void check_n(int n) {
  if (n < 1 || n > 4) throw std::invalid_argument("BLEU order must be in 1..4");
}

std::string text(const Vocabulary& vocab, Sentence ids) { return vocab.decode_text(ids); }

// Control words: `count` distinct ground-truth positions, mapped in order onto
// the random sequence proportionally to their place in the caption.
PinMap make_pins(Sentence gt, std::size_t len, std::size_t count, Rng& rng) {
  count = std::min({count, gt.size(), len});
  std::vector<std::size_t> idx(gt.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  PinMap pins;
  std::size_t next_free = 0;
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t pos = idx[k] * len / gt.size();
    pos = std::max(pos, next_free);
    pos = std::min(pos, len - (count - k));
    pins[pos] = gt[idx[k]];
    next_free = pos + 1;
  }
  return pins;
}

EvalRow run_one(const ScriptPredictor& model, const Example& ex, const Vocabulary& vocab, const EvalOptions& opts,
                std::size_t index) {
  Rng rng = make_rng(opts.seed, index);
  const int steps = opts.steps;
  CaptionState start;
  PinMap pins;
  switch (opts.mode) {
    case EvalMode::InDomain: {
      const auto traj = noise_trajectory(ex.caption, opts.schedule, vocab, rng);
      start = traj[static_cast<std::size_t>((opts.schedule.steps() + 1) / 2)];
      start.step = steps;
      start.gt_len_hint.reset();
      break;
    }
    case EvalMode::Ood:
      start = CaptionState::from_ids(corrupt_to_ratio(ex.caption, opts.ratio, vocab, rng), Origin::RandomWord,
                                     steps);
      break;
    case EvalMode::RandomRef:
      start = make_random_sequence(opts.random_len, vocab, steps, rng);
      break;
    case EvalMode::Control:
      start = make_random_sequence(opts.random_len, vocab, steps, rng);
      pins = make_pins(ex.caption, opts.random_len, opts.num_pins, rng);
      break;
  }

  EvalRow row;
  row.scene_id = ex.scene.scene_id;
  row.reference = ex.caption;
  for (const auto& [pos, id] : pins) row.pins.push_back(id);
  auto input = start;
  for (const auto& [pos, id] : pins) input.tokens[pos] = Token{id, Origin::Original};
  row.input = input.ids();
  auto result = denoise_loop(model, ex.condition, std::move(start), steps, pins, opts.pin_mode);
  row.output = result.caption.ids();
  row.exact_match = exact_match(row.output, row.reference);
  row.f1 = token_f1(row.output, row.reference);
  row.ratio = lev_ratio(row.output, row.reference);
  row.input_ratio = lev_ratio(row.input, row.reference);
  return row;
}

void add_quality(std::vector<std::pair<std::string, double>>& agg, const std::string& prefix,
                 const std::vector<std::vector<TokenId>>& hyps, const std::vector<std::vector<TokenId>>& refs) {
  double em = 0.0, f1 = 0.0, ratio = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    em += exact_match(hyps[i], refs[i]);
    f1 += token_f1(hyps[i], refs[i]);
    ratio += lev_ratio(hyps[i], refs[i]);
  }
  const double n = std::max<double>(1.0, static_cast<double>(hyps.size()));
  agg.emplace_back(prefix + "exact_match", em / n);
  agg.emplace_back(prefix + "f1", f1 / n);
  for (int k = 1; k <= 4; ++k) agg.emplace_back(prefix + "bleu" + std::to_string(k), corpus_bleu(hyps, refs, k));
  agg.emplace_back(prefix + "ratio", ratio / n);
}

}  // namespace

double exact_match(Sentence hyp, Sentence ref) {
  if (ref.empty()) throw std::invalid_argument("empty reference");
  return std::equal(hyp.begin(), hyp.end(), ref.begin(), ref.end()) ? 1.0 : 0.0;
}

double token_f1(Sentence hyp, Sentence ref) {
  if (ref.empty()) throw std::invalid_argument("empty reference");
  if (hyp.empty()) return 0.0;
  std::map<TokenId, std::size_t> counts;
  for (auto id : ref) ++counts[id];
  std::size_t overlap = 0;
  for (auto id : hyp) {
    auto it = counts.find(id);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double p = static_cast<double>(overlap) / static_cast<double>(hyp.size());
  const double r = static_cast<double>(overlap) / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

double mean_ratio(std::span<const std::pair<std::vector<TokenId>, std::vector<TokenId>>> pairs) {
  if (pairs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [h, r] : pairs) sum += lev_ratio(h, r);
  return sum / static_cast<double>(pairs.size());
}

double bleu(Sentence hyp, std::span<const std::vector<TokenId>> refs, int n) {
  check_n(n);
  if (refs.empty()) throw std::invalid_argument("bleu needs at least one reference");
  if (hyp.empty()) return 0.0;
  BleuStats st{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  accumulate(st, hyp, refs, n);
  return finish(st, n);
}

double corpus_bleu(std::span<const std::vector<TokenId>> hyps, std::span<const std::vector<TokenId>> refs, int n) {
  check_n(n);
  if (hyps.size() != refs.size()) throw std::invalid_argument("hypothesis/reference count mismatch");
  BleuStats st{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  for (std::size_t i = 0; i < hyps.size(); ++i) accumulate(st, hyps[i], std::span(&refs[i], 1), n);
  return finish(st, n);
}

bool retains_in_order(Sentence output, Sentence pins) {
  std::size_t k = 0;
  for (auto id : output)
    if (k < pins.size() && id == pins[k]) ++k;
  return k == pins.size();
}

double retention_rate(std::span<const std::vector<TokenId>> outputs, std::span<const std::vector<TokenId>> pins) {
  if (outputs.size() != pins.size()) throw std::invalid_argument("each output needs its pin list");
  if (outputs.empty()) return 0.0;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) kept += retains_in_order(outputs[i], pins[i]) ? 1 : 0;
  return static_cast<double>(kept) / static_cast<double>(outputs.size());
}

std::string eval_mode_name(EvalMode m) {
  switch (m) {
    case EvalMode::InDomain: return "indomain";
    case EvalMode::Ood: return "ood";
    case EvalMode::RandomRef: return "random";
    case EvalMode::Control: return "control";
  }
  return "?";
}

EvalMode parse_eval_mode(const std::string& s) {
  for (auto m : {EvalMode::InDomain, EvalMode::Ood, EvalMode::RandomRef, EvalMode::Control})
    if (eval_mode_name(m) == s) return m;
  throw std::invalid_argument("unknown eval mode '" + s + "' (indomain, ood, random, control)");
}

double Report::aggregate(const std::string& name) const {
  for (const auto& [k, v] : aggregates)
    if (k == name) return v;
  throw std::out_of_range("no aggregate named " + name);
}

Report evaluate(const ScriptPredictor& model, std::span<const Example> examples, const Vocabulary& vocab,
                const EvalOptions& opts) {
  if (opts.steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (model.vocab_size() != vocab.size()) throw std::invalid_argument("checkpoint does not match the vocabulary");
  if (opts.mode == EvalMode::Ood && (opts.ratio < 0.0 || opts.ratio > 1.0))
    throw std::invalid_argument("ood ratio must be in [0, 1]");
  if ((opts.mode == EvalMode::RandomRef || opts.mode == EvalMode::Control) && opts.random_len == 0)
    throw std::invalid_argument("random reference length must be positive");

  const std::size_t n = opts.limit == 0 ? examples.size() : std::min(opts.limit, examples.size());
  Report report;
  report.mode = eval_mode_name(opts.mode);
  report.steps = opts.steps;
  report.seed = opts.seed;
  report.rows.resize(n);

  const unsigned threads = std::max(1u, std::min<unsigned>(opts.threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) report.rows[i] = run_one(model, examples[i], vocab, opts, i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += threads) report.rows[i] = run_one(model, examples[i], vocab, opts, i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<std::vector<TokenId>> outs, ins, refs, pins;
  for (const auto& r : report.rows) {
    outs.push_back(r.output);
    ins.push_back(r.input);
    refs.push_back(r.reference);
    pins.push_back(r.pins);
  }
  report.aggregates.emplace_back("examples", static_cast<double>(n));
  add_quality(report.aggregates, "", outs, refs);
  if (opts.mode == EvalMode::Control) {
    report.aggregates.emplace_back("retention", retention_rate(outs, pins));
    report.aggregates.emplace_back("input_retention", retention_rate(ins, pins));
  }
  add_quality(report.aggregates, "input_", ins, refs);

  auto& cfg = report.config;
  cfg.emplace_back("mode", report.mode);
  cfg.emplace_back("steps", std::to_string(opts.steps));
  cfg.emplace_back("seed", std::to_string(opts.seed));
  if (opts.mode == EvalMode::Ood) cfg.emplace_back("ratio", format_double(opts.ratio));
  if (opts.mode == EvalMode::RandomRef || opts.mode == EvalMode::Control)
    cfg.emplace_back("random_len", std::to_string(opts.random_len));
  if (opts.mode == EvalMode::Control) {
    cfg.emplace_back("num_pins", std::to_string(opts.num_pins));
    cfg.emplace_back("pin_mode", opts.pin_mode == PinMode::Hard ? "hard" : "soft");
  }
  if (opts.mode == EvalMode::InDomain) cfg.emplace_back("noise_T", std::to_string(opts.schedule.steps()));
  cfg.emplace_back("examples", std::to_string(n));
  return report;
}

nlohmann::json report_json(const Report& report, const Vocabulary& vocab) {
  nlohmann::json j;
  j["mode"] = report.mode;
  j["steps"] = report.steps;
  j["seed"] = report.seed;
  auto& cfg = j["config"] = nlohmann::json::object();
  for (const auto& [k, v] : report.config) cfg[k] = v;
  auto& agg = j["aggregates"] = nlohmann::json::object();
  for (const auto& [k, v] : report.aggregates) agg[k] = v;
  auto& rows = j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json row{{"scene_id", r.scene_id},
                       {"input", text(vocab, r.input)},
                       {"output", text(vocab, r.output)},
                       {"reference", text(vocab, r.reference)},
                       {"exact_match", r.exact_match},
                       {"f1", r.f1},
                       {"ratio", r.ratio},
                       {"input_ratio", r.input_ratio}};
    if (!r.pins.empty()) row["pins"] = text(vocab, r.pins);
    rows.push_back(std::move(row));
  }
  return j;
}

void write_aggregates_csv(std::ostream& out, std::span<const Report> reports,
                          const std::vector<std::string>& label_names,
                          const std::vector<std::vector<std::string>>& labels) {
  if (labels.size() != reports.size()) throw std::invalid_argument("one label row per report");
  std::vector<std::string> header = label_names;
  if (!reports.empty())
    for (const auto& [k, v] : reports.front().aggregates) header.push_back(k);
  out << join(header, ",") << '\n';
  for (std::size_t i = 0; i < reports.size(); ++i) {
    std::vector<std::string> cells = labels[i];
    for (const auto& [k, v] : reports[i].aggregates) cells.push_back(format_double(v));
    out << join(cells, ",") << '\n';
  }
}

}  // namespace edif
