#include <doctest.h>

#include <cmath>

#include "edif/diffusion.hpp"
#include "edif/edit.hpp"
#include "edit_cases.hpp"

using namespace edif;

TEST_CASE("apply_script table") {
  const auto v = cases::case_vocab();
  const auto& table = cases::apply_cases();
  REQUIRE(table.size() >= 20);
  for (const auto& c : table) {
    INFO(c.caption, " | ", c.script);
    CHECK(cases::run_case(c, v));
  }
}

TEST_CASE("output length law") {
  const auto v = cases::case_vocab();
  for (const auto& c : cases::apply_cases()) {
    if (!c.expected) continue;
    const auto state = CaptionState::from_ids(v.encode_text(c.caption));
    const auto s = cases::parse_script(c.script, v);
    std::size_t expect = s.slots[0].op == EditOp::Insert ? 1 : 0;
    for (std::size_t i = 1; i < s.size(); ++i) {
      switch (s.slots[i].op) {
        case EditOp::Keep:
        case EditOp::Replace: expect += 1; break;
        case EditOp::Insert: expect += 2; break;
        case EditOp::Delete: break;
      }
    }
    CHECK(apply_script(state, s, true).size() == expect);
  }
}

TEST_CASE("origins and step bookkeeping") {
  const auto v = cases::case_vocab();
  auto c = CaptionState::from_ids(v.encode_text("a b"), Origin::Original, 0);
  c.tokens[1].origin = Origin::RandomWord;
  c.gt_len_hint = 7;
  const auto s = cases::parse_script("I(x) K R(y)", v);
  auto noised = apply_script(c, s, false, Origin::RandomWord);
  CHECK(noised.step == 1);
  CHECK(noised.gt_len_hint == std::optional<std::size_t>(7));
  CHECK(noised.tokens[0].origin == Origin::RandomWord);
  CHECK(noised.tokens[1].origin == Origin::Original);
  CHECK(noised.tokens[2].origin == Origin::RandomWord);
  auto denoised = apply_script(c, s, true);
  CHECK(denoised.step == 0);
  CHECK(denoised.tokens[0].origin == Origin::Original);
  CHECK(denoised.tokens[2].origin == Origin::Original);
}

TEST_CASE("surviving positions") {
  const auto v = cases::case_vocab();
  const auto s = cases::parse_script("I(x) K R(y) I(z) D K", v);
  const auto pos = surviving_positions(s);
  REQUIRE(pos.size() == 5);
  CHECK(pos[0] == std::optional<std::size_t>(1));
  CHECK_FALSE(pos[1].has_value());
  CHECK(pos[2] == std::optional<std::size_t>(3));
  CHECK_FALSE(pos[3].has_value());
  CHECK(pos[4] == std::optional<std::size_t>(5));
}

TEST_CASE("render and parse ops") {
  const auto v = cases::case_vocab();
  const auto s = cases::parse_script("K K R(dog) D I(red)", v);
  CHECK(s.render(&v) == "K K R(dog) D I(red)");
  CHECK(parse_op("INSERT") == EditOp::Insert);
  CHECK(parse_op("D") == EditOp::Delete);
  CHECK_THROWS_AS(parse_op("X"), std::invalid_argument);
  CHECK(static_cast<int>(EditOp::Keep) < static_cast<int>(EditOp::Replace));
  CHECK(static_cast<int>(EditOp::Replace) < static_cast<int>(EditOp::Insert));
  CHECK(static_cast<int>(EditOp::Insert) < static_cast<int>(EditOp::Delete));
}

TEST_CASE("schedule validation") {
  CHECK_THROWS_AS(NoiseSchedule(0, EditWeights{}), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule(10, EditWeights{0, 0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule(10, EditWeights{0.6, 0.3, 0.3}), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule(10, EditWeights{-0.1, 0.5, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule(10, EditWeights{}, 10, 1.5, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule(10, EditWeights{}, 10, 0.5, 0.9), std::invalid_argument);
  CHECK_NOTHROW(NoiseSchedule(10, EditWeights{0.2, 0.1, 0.1}));
}

TEST_CASE("step rates") {
  NoiseSchedule sch;
  SUBCASE("final step absorbs everything") {
    for (std::size_t len : {0u, 1u, 5u, 10u, 30u}) {
      auto r = step_rates(sch, 10, len);
      CHECK(r.replace + r.del + r.insert == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(r.keep == 0.0);
    }
  }
  SUBCASE("first step") {
    auto r = step_rates(sch, 1, 10);
    CHECK(r.replace + r.del + r.insert == doctest::Approx(0.1));
    CHECK(r.keep == doctest::Approx(0.9));
  }
  SUBCASE("at the target length the weights pass through") {
    for (int t = 1; t <= 10; ++t) {
      const double nu = 1.0 / (10 - t + 1);
      auto r = step_rates(sch, t, 10);
      CHECK(r.replace == doctest::Approx(0.5 * nu));
      CHECK(r.del == doctest::Approx(0.25 * nu));
      CHECK(r.insert == doctest::Approx(0.25 * nu));
    }
  }
  SUBCASE("length tilt") {
    // l = 5: insert factor clamp(2) = 2, delete factor clamp(0.5) = 0.5.
    auto r = step_rates(sch, 10, 5);
    const double z = 0.5 + 0.25 * 0.5 + 0.25 * 2.0;
    CHECK(r.insert == doctest::Approx(0.5 / z));
    CHECK(r.del == doctest::Approx(0.125 / z));
    auto s = step_rates(sch, 10, 40);
    CHECK(s.del > s.insert);
  }
  CHECK_THROWS_AS(step_rates(sch, 0, 3), std::out_of_range);
  CHECK_THROWS_AS(step_rates(sch, 11, 3), std::out_of_range);
}

TEST_CASE("noising step rules") {
  const auto v = cases::case_vocab();
  Rng rng = make_rng(5);
  SUBCASE("replace-only schedule at t = T replaces every token") {
    NoiseSchedule sch(1, EditWeights{1.0, 0.0, 0.0});
    auto c = CaptionState::from_ids(v.encode_text("a cat sat on the mat"));
    auto step = sample_noising_step(c, sch, 1, v, rng);
    CHECK(step.next.size() == c.size());
    for (const auto& tok : step.next.tokens) CHECK(tok.origin == Origin::RandomWord);
    for (std::size_t i = 1; i < step.script.size(); ++i) CHECK(step.script.slots[i].op == EditOp::Replace);
  }
  SUBCASE("absorbed captions are left alone") {
    NoiseSchedule sch;
    auto c = CaptionState::from_ids(v.encode_text("a cat sat"), Origin::RandomWord, 9);
    auto step = sample_noising_step(c, sch, 10, v, rng);
    CHECK(step.script == EditScript::all_keep(3));
    CHECK(step.next.tokens == c.tokens);
  }
  SUBCASE("sentinel stays KEEP and step must match") {
    NoiseSchedule sch;
    auto c = CaptionState::from_ids(v.encode_text("a b c d e"));
    for (int i = 0; i < 200; ++i) {
      auto step = sample_noising_step(c, sch, 1, v, rng);
      CHECK(step.script.slots[0].op == EditOp::Keep);
      CHECK(step.next.step == 1);
    }
    CHECK_THROWS_AS(sample_noising_step(c, sch, 2, v, rng), std::invalid_argument);
  }
}

TEST_CASE("absorbed tokens persist along trajectories") {
  const auto v = cases::case_vocab();
  NoiseSchedule sch;
  Rng rng = make_rng(11);
  const auto x0 = v.encode_text("the cat sat on the mat");
  for (int trial = 0; trial < 300; ++trial) {
    auto c = CaptionState::from_ids(x0);
    for (int t = 1; t <= sch.steps(); ++t) {
      auto step = sample_noising_step(c, sch, t, v, rng);
      const auto landed = surviving_positions(step.script);
      for (std::size_t i = 0; i < c.size(); ++i) {
        if (c.tokens[i].origin != Origin::RandomWord) continue;
        REQUIRE(step.script.slots[i + 1].op == EditOp::Keep);
        REQUIRE(step.next.tokens[*landed[i]] == c.tokens[i]);
      }
      c = std::move(step.next);
    }
    for (const auto& tok : c.tokens) REQUIRE(tok.origin == Origin::RandomWord);
  }
}

TEST_CASE("surviving fraction follows 1 - t/T") {
  const auto v = cases::case_vocab();
  NoiseSchedule sch;
  Rng rng = make_rng(17);
  const auto x0 = v.encode_text("a b c d e x y z w cat");
  const int trials = 4000;
  std::vector<double> survivors(11, 0.0);
  for (int trial = 0; trial < trials; ++trial) {
    const auto traj = noise_trajectory(x0, sch, v, rng);
    for (int t = 0; t <= 10; ++t) {
      int n = 0;
      for (const auto& tok : traj[static_cast<std::size_t>(t)].tokens) n += tok.origin == Origin::Original;
      survivors[static_cast<std::size_t>(t)] += n / 10.0;
    }
  }
  for (int t = 0; t <= 10; ++t) {
    INFO("t = ", t);
    CHECK(std::abs(survivors[static_cast<std::size_t>(t)] / trials - (1.0 - t / 10.0)) <= 0.03);
  }
}

TEST_CASE("terminal length stays within the clamp band") {
  const auto v = cases::case_vocab();
  NoiseSchedule sch;
  Rng rng = make_rng(23);
  for (const char* text : {"a b c d e x", "a b c d e x y z w cat", "a b c d e x y z w cat the on mat rug dog"}) {
    const auto x0 = v.encode_text(text);
    double total = 0.0;
    const int runs = 10000;
    for (int i = 0; i < runs; ++i) total += static_cast<double>(noise_trajectory(x0, sch, v, rng).back().size());
    const double mean = total / runs;
    INFO(text, " mean length ", mean);
    CHECK(mean >= 10 * sch.clamp_lo());
    CHECK(mean <= 10 * sch.clamp_hi());
  }
}

TEST_CASE("short captions cannot reach the band") {
  // Each original token is noised once, so a length-l caption ends with at most 2l words.
  const auto v = cases::case_vocab();
  NoiseSchedule sch;
  Rng rng = make_rng(24);
  const auto x0 = v.encode_text("a b c");
  double total = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const auto n = noise_trajectory(x0, sch, v, rng).back().size();
    REQUIRE(n <= 6);
    total += static_cast<double>(n);
  }
  CHECK(total / 10000 < 10 * sch.clamp_lo());
}
