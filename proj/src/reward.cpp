#include "palmr/reward.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace palmr {

namespace {

constexpr std::array<std::string_view, kNumStrategies> kStrategyNames = {
    "vanilla", "palmr", "visual_bonus", "visual_mix"};

bool is_binary(int v) { return v == 0 || v == 1; }

}  // namespace

std::string_view strategy_name(FusionStrategy s) {
  return kStrategyNames.at(static_cast<std::size_t>(s));
}

std::optional<FusionStrategy> strategy_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kStrategyNames.size(); ++i) {
    if (kStrategyNames[i] == name) return static_cast<FusionStrategy>(i);
  }
  return std::nullopt;
}

void FusionConfig::validate() const {
  for (double w : {answer_weight, format_weight, mix_vis_weight, mix_ans_weight,
                   mix_fmt_weight, bonus}) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("fusion: weights must be finite and non-negative");
    }
  }
  if (std::abs(answer_weight + format_weight - 1.0) > kWeightSumTolerance) {
    throw std::invalid_argument("fusion: answer_weight + format_weight must equal 1");
  }
  if (strategy == FusionStrategy::kVisualMix &&
      std::abs(mix_vis_weight + mix_ans_weight + mix_fmt_weight - 1.0) > kWeightSumTolerance) {
    throw std::invalid_argument("fusion: visual mix weights must sum to 1");
  }
}

double fuse(const ComponentScores& s, const FusionConfig& cfg) {
  if (!is_binary(s.s_vis) || !is_binary(s.s_ans) || !is_binary(s.s_fmt)) {
    throw std::invalid_argument("fuse: component scores must be 0 or 1");
  }
  const double base = cfg.answer_weight * s.s_ans + cfg.format_weight * s.s_fmt;
  switch (cfg.strategy) {
    case FusionStrategy::kVanilla:
      return base;
    case FusionStrategy::kPalmr:
      return s.s_vis * base;
    case FusionStrategy::kVisualBonus: {
      const bool earned = cfg.unconditional_bonus ? s.s_vis == 1 : (s.s_vis == 1 && s.s_ans == 1);
      return base + (earned ? cfg.bonus : 0.0);
    }
    case FusionStrategy::kVisualMix:
      return cfg.mix_vis_weight * s.s_vis + cfg.mix_ans_weight * s.s_ans +
             cfg.mix_fmt_weight * s.s_fmt;
  }
  throw std::invalid_argument("fuse: unknown strategy");
}

RewardBreakdown make_breakdown(const ComponentScores& s, const FusionConfig& cfg) {
  return {s.s_vis, s.s_ans, s.s_fmt, fuse(s, cfg)};
}

}  // namespace palmr
