#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "edif/align.hpp"
#include "edif/metrics.hpp"

using namespace edif;

namespace {

using Ids = std::vector<TokenId>;

// Looks the caption up from the condition and emits the aligning script.
struct LookupOracle : ScriptPredictor {
  std::map<Ids, Ids> table;
  std::size_t k = 0;
  EditScript predict_script(std::span<const TokenId> cond, const CaptionState& c, int) const override {
    return align(c, table.at(Ids(cond.begin(), cond.end())));
  }
  std::size_t vocab_size() const override { return k; }
  int max_step() const override { return 10; }
};

struct KeepAll : ScriptPredictor {
  std::size_t k = 0;
  EditScript predict_script(std::span<const TokenId>, const CaptionState& c, int) const override {
    return EditScript::all_keep(c.size());
  }
  std::size_t vocab_size() const override { return k; }
  int max_step() const override { return 10; }
};

// Straight from the definition: exp(mean log p_n) times brevity penalty.
double bleu_oracle(const Ids& hyp, const Ids& ref, int n) {
  double log_sum = 0.0;
  for (int g = 1; g <= n; ++g) {
    std::map<Ids, int> hc, rc;
    for (std::size_t i = 0; i + g <= hyp.size(); ++i) ++hc[Ids(hyp.begin() + i, hyp.begin() + i + g)];
    for (std::size_t i = 0; i + g <= ref.size(); ++i) ++rc[Ids(ref.begin() + i, ref.begin() + i + g)];
    int match = 0, total = 0;
    for (auto& [gram, c] : hc) {
      total += c;
      match += std::min(c, rc.count(gram) ? rc[gram] : 0);
    }
    // A zero match count becomes epsilon; an empty n-gram total counts as one.
    log_sum += std::log((match == 0 ? kBleuEpsilon : match) / std::max(1.0, static_cast<double>(total)));
  }
  const double bp = hyp.size() >= ref.size() ? 1.0 : std::exp(1.0 - static_cast<double>(ref.size()) / hyp.size());
  return bp * std::exp(log_sum / n);
}

}  // namespace

TEST_CASE("exact match and F1") {
  CHECK(exact_match(Ids{1, 2}, Ids{1, 2}) == 1.0);
  CHECK(exact_match(Ids{1, 2}, Ids{2, 1}) == 0.0);
  CHECK(exact_match(Ids{1}, Ids{1, 2}) == 0.0);
  CHECK(token_f1(Ids{1, 2}, Ids{1, 3}) == doctest::Approx(0.5));
  CHECK(token_f1(Ids{2, 1}, Ids{1, 2}) == 1.0);
  CHECK(token_f1(Ids{}, Ids{1}) == 0.0);
  // Multiset: one of the two 5s matches.
  CHECK(token_f1(Ids{5, 5}, Ids{5}) == doctest::Approx(2.0 * 0.5 * 1.0 / 1.5));
  CHECK_THROWS_AS(token_f1(Ids{1}, Ids{}), std::invalid_argument);
  CHECK_THROWS_AS(exact_match(Ids{1}, Ids{}), std::invalid_argument);
}

TEST_CASE("mean ratio") {
  std::vector<std::pair<Ids, Ids>> pairs{{{1, 2}, {1, 2}}, {{1}, {2}}};
  CHECK(mean_ratio(pairs) == doctest::Approx(0.5));
  CHECK(mean_ratio(std::span<const std::pair<Ids, Ids>>{}) == 0.0);
}

TEST_CASE("bleu") {
  const std::vector<Ids> ref{{1, 2, 3, 4, 5}};
  CHECK(bleu(Ids{1, 2, 3, 4, 5}, ref) == doctest::Approx(1.0));
  CHECK(bleu(Ids{9, 8, 7, 6, 5 + 10}, ref) < 1e-8);
  CHECK(bleu(Ids{}, ref) == 0.0);
  CHECK(bleu(Ids{1, 2, 3}, std::vector<Ids>{{1, 2, 4}}, 1) == doctest::Approx(2.0 / 3.0));
  // Short hypothesis pays the brevity penalty.
  CHECK(bleu(Ids{1, 2}, ref, 1) == doctest::Approx(std::exp(1.0 - 2.5)));
  // Closest reference length wins.
  CHECK(bleu(Ids{1, 2}, std::vector<Ids>{{1, 2, 3, 4, 5}, {1, 2}}, 1) == doctest::Approx(1.0));
  CHECK_THROWS_AS(bleu(Ids{1}, ref, 0), std::invalid_argument);
  CHECK_THROWS_AS(bleu(Ids{1}, ref, 5), std::invalid_argument);

  Rng rng = make_rng(12);
  for (int i = 0; i < 300; ++i) {
    Ids h(1 + uniform_index(rng, 8)), r(1 + uniform_index(rng, 8));
    for (auto& x : h) x = static_cast<TokenId>(uniform_index(rng, 4));
    for (auto& x : r) x = static_cast<TokenId>(uniform_index(rng, 4));
    for (int n = 1; n <= 4; ++n)
      REQUIRE(bleu(h, std::vector<Ids>{r}, n) == doctest::Approx(bleu_oracle(h, r, n)).epsilon(1e-9));
  }
}

TEST_CASE("corpus bleu pools counts") {
  const std::vector<Ids> hyps{{1, 2}, {3, 4}};
  const std::vector<Ids> refs{{1, 2}, {3, 5}};
  // 3 of 4 unigrams match, lengths equal.
  CHECK(corpus_bleu(hyps, refs, 1) == doctest::Approx(0.75));
  CHECK_THROWS(corpus_bleu(hyps, std::vector<Ids>{{1}}, 1));
}

TEST_CASE("retention") {
  CHECK(retains_in_order(Ids{1, 2, 3, 4}, Ids{2, 4}));
  CHECK_FALSE(retains_in_order(Ids{1, 2, 3, 4}, Ids{4, 2}));
  CHECK(retains_in_order(Ids{1}, Ids{}));
  CHECK_FALSE(retains_in_order(Ids{1}, Ids{1, 1}));
  const std::vector<Ids> outs{{1, 2}, {3}};
  const std::vector<Ids> pins{{1}, {4}};
  CHECK(retention_rate(outs, pins) == doctest::Approx(0.5));
}

TEST_CASE("mode names") {
  for (auto m : {EvalMode::InDomain, EvalMode::Ood, EvalMode::RandomRef, EvalMode::Control})
    CHECK(parse_eval_mode(eval_mode_name(m)) == m);
  CHECK_THROWS_AS(parse_eval_mode("bogus"), std::invalid_argument);
}

TEST_CASE("evaluate with an oracle denoiser") {
  const auto corpus = make_corpus(WorldSpec::defaults(), 300, 6);
  LookupOracle oracle;
  oracle.k = corpus.vocab.size();
  for (const auto& ex : corpus.test) oracle.table[ex.condition] = ex.caption;

  for (auto mode : {EvalMode::InDomain, EvalMode::Ood, EvalMode::RandomRef, EvalMode::Control}) {
    CAPTURE(eval_mode_name(mode));
    EvalOptions o;
    o.mode = mode;
    o.steps = 12;
    // The oracle ignores pins, so soft mode must reach the target exactly.
    o.pin_mode = PinMode::Soft;
    const auto rep = evaluate(oracle, corpus.test, corpus.vocab, o);
    CHECK(rep.rows.size() == corpus.test.size());
    CHECK(rep.aggregate("examples") == doctest::Approx(corpus.test.size()));
    CHECK(rep.aggregate("exact_match") == 1.0);
    CHECK(rep.aggregate("ratio") == 1.0);
    CHECK(rep.aggregate("bleu4") == doctest::Approx(1.0));
    for (const auto& row : rep.rows) {
      CHECK(row.output == row.reference);
      CHECK(row.input_ratio == doctest::Approx(lev_ratio(row.input, row.reference)));
    }
    if (mode == EvalMode::Control) {
      for (const auto& row : rep.rows) {
        CHECK(row.pins.size() == 2);
        CHECK(retains_in_order(row.reference, row.pins));
      }
      CHECK(rep.aggregate("retention") == 1.0);
    }
    if (mode == EvalMode::Control) {
      // Forced KEEP can fight the oracle's alignment, but never loses a pin.
      o.pin_mode = PinMode::Hard;
      const auto hard = evaluate(oracle, corpus.test, corpus.vocab, o);
      CHECK(hard.aggregate("retention") == 1.0);
      CHECK(hard.aggregate("exact_match") > 0.5);
    }
    if (mode == EvalMode::Ood) CHECK(rep.aggregate("input_ratio") == doctest::Approx(0.5).epsilon(0.05));
  }
}

TEST_CASE("evaluate: identity model, schema and threads") {
  const auto corpus = make_corpus(WorldSpec::defaults(), 300, 6);
  KeepAll keep;
  keep.k = corpus.vocab.size();
  EvalOptions o;
  o.mode = EvalMode::Ood;
  o.ratio = 0.7;
  o.limit = 17;
  const auto one = evaluate(keep, corpus.test, corpus.vocab, o);
  o.threads = 4;
  const auto four = evaluate(keep, corpus.test, corpus.vocab, o);
  REQUIRE(one.rows.size() == 17);
  for (std::size_t i = 0; i < one.rows.size(); ++i) {
    CHECK(one.rows[i].input == four.rows[i].input);
    CHECK(one.rows[i].output == one.rows[i].input);
  }
  CHECK(one.aggregates == four.aggregates);
  CHECK(one.aggregate("ratio") == doctest::Approx(one.aggregate("input_ratio")));
  for (const auto& [name, v] : one.aggregates) {
    if (name == "examples") continue;
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS(one.aggregate("nope"));

  const auto j = report_json(one, corpus.vocab);
  CHECK(j.at("mode") == "ood");
  CHECK(j.at("rows").size() == 17);
  CHECK(j.at("rows")[0].contains("output"));
  CHECK(j.at("aggregates").contains("bleu4"));

  std::ostringstream csv;
  std::vector<Report> reps{one};
  write_aggregates_csv(csv, reps, {"ratio"}, {{"0.7"}});
  const auto text = csv.str();
  CHECK(text.rfind("ratio,", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
}
