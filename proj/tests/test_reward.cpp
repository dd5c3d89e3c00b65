#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "palmr/reward.hpp"

using namespace palmr;

namespace {

FusionConfig with(FusionStrategy s) {
  FusionConfig c;
  c.strategy = s;
  return c;
}

}  // namespace

TEST_CASE("fusion tables over the boolean cube") {
  // Rows: (s_vis, s_ans, s_fmt) -> vanilla, palmr, visual_bonus, visual_mix.
  struct Row {
    int v, a, f;
    double vanilla, palmr, bonus, mix;
  };
  const std::vector<Row> table = {
      {0, 0, 0, 0.0, 0.0, 0.0, 0.0}, {0, 0, 1, 0.1, 0.0, 0.1, 0.1},
      {0, 1, 0, 0.9, 0.0, 0.9, 0.7}, {0, 1, 1, 1.0, 0.0, 1.0, 0.8},
      {1, 0, 0, 0.0, 0.0, 0.0, 0.2}, {1, 0, 1, 0.1, 0.1, 0.1, 0.3},
      {1, 1, 0, 0.9, 0.9, 1.4, 0.9}, {1, 1, 1, 1.0, 1.0, 1.5, 1.0},
  };
  for (const Row& r : table) {
    const ComponentScores s{r.v, r.a, r.f};
    CHECK(fuse(s, with(FusionStrategy::kVanilla)) == doctest::Approx(r.vanilla).epsilon(1e-15));
    CHECK(fuse(s, with(FusionStrategy::kPalmr)) == doctest::Approx(r.palmr).epsilon(1e-15));
    CHECK(fuse(s, with(FusionStrategy::kVisualBonus)) == doctest::Approx(r.bonus).epsilon(1e-15));
    CHECK(fuse(s, with(FusionStrategy::kVisualMix)) == doctest::Approx(r.mix).epsilon(1e-15));
    if (r.v == 0) CHECK(fuse(s, with(FusionStrategy::kPalmr)) == 0.0);
  }
}

TEST_CASE("fusion properties") {
  for (int v = 0; v <= 1; ++v) {
    for (int a = 0; a <= 1; ++a) {
      for (int f = 0; f <= 1; ++f) {
        for (int k = 0; k < kNumStrategies; ++k) {
          const FusionConfig cfg = with(static_cast<FusionStrategy>(k));
          const double r = fuse({v, a, f}, cfg);
          const double upper = cfg.strategy == FusionStrategy::kVisualBonus ? 1.0 + cfg.bonus : 1.0;
          CHECK(r >= 0.0);
          CHECK(r <= upper + 1e-12);
          // Monotone in each component.
          if (v == 0) CHECK(fuse({1, a, f}, cfg) >= r);
          if (a == 0) CHECK(fuse({v, 1, f}, cfg) >= r);
          if (f == 0) CHECK(fuse({v, a, 1}, cfg) >= r);
        }
      }
    }
  }
  FusionConfig unconditional = with(FusionStrategy::kVisualBonus);
  unconditional.unconditional_bonus = true;
  CHECK(fuse({1, 0, 0}, unconditional) == doctest::Approx(0.5));
  CHECK(fuse({1, 0, 0}, with(FusionStrategy::kVisualBonus)) == 0.0);

  const RewardBreakdown b = make_breakdown({1, 1, 0}, with(FusionStrategy::kPalmr));
  CHECK(b.s_vis == 1);
  CHECK(b.s_ans == 1);
  CHECK(b.s_fmt == 0);
  CHECK(b.fused == doctest::Approx(0.9));
}

TEST_CASE("fusion config and score validation") {
  CHECK_NOTHROW(FusionConfig{}.validate());
  FusionConfig c;
  c.answer_weight = 0.8;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = FusionConfig{};
  c.bonus = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = with(FusionStrategy::kVisualMix);
  c.mix_vis_weight = 0.3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.strategy = FusionStrategy::kPalmr;  // mix weights only matter for the mix
  CHECK_NOTHROW(c.validate());
  c = FusionConfig{};
  c.format_weight = std::nan("");
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  CHECK_THROWS_AS(fuse({2, 0, 0}, FusionConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(fuse({0, -1, 0}, FusionConfig{}), std::invalid_argument);

  for (int k = 0; k < kNumStrategies; ++k) {
    const auto s = static_cast<FusionStrategy>(k);
    CHECK(strategy_from_name(strategy_name(s)) == s);
  }
  CHECK_FALSE(strategy_from_name("grpo").has_value());
}
