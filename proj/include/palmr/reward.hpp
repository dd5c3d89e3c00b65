#ifndef PALMR_REWARD_HPP_
#define PALMR_REWARD_HPP_

// Fusion of the visual-fidelity, answer and format scores into one reward.

#include <cstdint>
#include <optional>
#include <string_view>

namespace palmr {

enum class FusionStrategy : std::uint8_t { kVanilla, kPalmr, kVisualBonus, kVisualMix };
inline constexpr int kNumStrategies = 4;

std::string_view strategy_name(FusionStrategy s);
std::optional<FusionStrategy> strategy_from_name(std::string_view name);

struct ComponentScores {
  int s_vis = 0;
  int s_ans = 0;
  int s_fmt = 0;
};

struct RewardBreakdown {
  int s_vis = 0;
  int s_ans = 0;
  int s_fmt = 0;
  double fused = 0.0;
};

struct FusionConfig {
  FusionStrategy strategy = FusionStrategy::kPalmr;
  double answer_weight = 0.9;
  double format_weight = 0.1;
  double mix_vis_weight = 0.2;
  double mix_ans_weight = 0.7;
  double mix_fmt_weight = 0.1;
  double bonus = 0.5;
  // Pays the bonus whenever s_vis = 1, regardless of the answer.
  bool unconditional_bonus = false;

  // Throws std::invalid_argument: weights negative, answer + format != 1,
  // or mix weights not summing to 1.
  void validate() const;
};

// Weight sums are compared against 1 with this tolerance.
inline constexpr double kWeightSumTolerance = 1e-9;

// cfg must be valid; scores must be 0 or 1.
double fuse(const ComponentScores& scores, const FusionConfig& cfg);
RewardBreakdown make_breakdown(const ComponentScores& scores, const FusionConfig& cfg);

}  // namespace palmr

#endif  // PALMR_REWARD_HPP_
