#ifndef PALMR_GRPO_HPP_
#define PALMR_GRPO_HPP_

// Group rollouts, group-relative advantages, the clipped surrogate and the
// training loop.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "palmr/judge.hpp"
#include "palmr/padlayer.hpp"
#include "palmr/policy.hpp"
#include "palmr/reward.hpp"

namespace palmr {

struct RolloutGroup {
  std::string sample_id;
  std::vector<Trajectory> trajectories;
  std::vector<RewardBreakdown> breakdowns;
  std::vector<double> rewards;
  // Claims checked against the true scene; used for metrics only.
  std::vector<FidelityProfile> truth;
};

struct AdvantageSet {
  std::vector<double> advantages;
};

// (r - mean) / population std; all zeros when std = 0. Throws
// std::invalid_argument for fewer than two rewards.
AdvantageSet compute_advantages(const std::vector<double>& rewards);

struct SurrogateOptions {
  double clip_epsilon = 0.2;
  double temperature = 1.0;
  // Average over all tokens of the group at once instead of per trajectory
  // first and then over the group.
  bool flat_token_average = false;
};

struct SurrogateResult {
  double loss = 0.0;
  PolicyParams grad;
};

// Adds scale * d(loss)/d(params) into grad and returns scale * loss.
double accumulate_surrogate(const PolicyParams& params, const Sample& prompt,
                            const std::vector<Trajectory>& trajectories,
                            const AdvantageSet& advantages, const SurrogateOptions& opts,
                            double scale, PolicyParams& grad);

// Loss -mean_i mean_t min(psi A_i, clip(psi, 1-eps, 1+eps) A_i) with
// psi = exp(new - old logprob), and its exact gradient. Throws
// std::invalid_argument on mismatched sizes.
SurrogateResult surrogate_loss_and_grad(const PolicyParams& params, const Sample& prompt,
                                        const std::vector<Trajectory>& trajectories,
                                        const AdvantageSet& advantages,
                                        const SurrogateOptions& opts);

struct TrainConfig {
  double learning_rate = 100.0;
  int group_size = 8;
  int batch_size = 16;
  int rollout_batch_size = 16;
  int epochs = 20;
  int steps = 200;  // when > 0 overrides epochs
  double clip_epsilon = 0.2;
  double temperature = 1.0;
  int max_len = kDefaultMaxLen;
  bool kl_enabled = false;
  bool flat_token_average = false;
  std::uint64_t seed = 1;

  // Throws std::invalid_argument.
  void validate() const;
  int updates_per_wave() const { return rollout_batch_size / batch_size; }
  int total_steps(std::size_t dataset_size) const;
};

// G rollouts per sample, scored against the sample's reference. wave_seed
// fixes every random choice in the wave.
std::vector<RolloutGroup> rollout_wave(const PolicyParams& params,
                                       const std::vector<const AugmentedSample*>& batch,
                                       const TrainConfig& cfg, Judge& judge,
                                       const FusionConfig& fusion, std::uint64_t wave_seed,
                                       FailurePolicy policy = FailurePolicy::kScoreZeroAndLog,
                                       JudgeStats* stats = nullptr);

inline constexpr int kMetricsSchemaVersion = 1;

struct MetricRecord {
  int step = 0;
  double mean_reward = 0.0;
  double mean_s_vis = 0.0;
  double mean_s_ans = 0.0;
  double mean_s_fmt = 0.0;
  // Fraction of rollouts with at least one claim the scene contradicts.
  double hallucination_rate = 0.0;
  // Contradicted claims over all claims made.
  double contradicted_claim_rate = 0.0;
  double mean_length = 0.0;
  double mean_claims = 0.0;
  // Sampled at the training temperature with seeds fixed across steps.
  std::optional<double> holdout_accuracy;
  std::optional<double> holdout_greedy_accuracy;
  double grad_norm = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricRecord& r);

// Fraction of samples the greedy policy answers correctly.
double greedy_accuracy(const PolicyParams& params, const std::vector<Sample>& samples,
                       const SamplingConfig& sampling, std::uint64_t seed);

// Fraction of samples answered correctly by one sampled rollout each.
double sampled_accuracy(const PolicyParams& params, const std::vector<Sample>& samples,
                        const SamplingConfig& sampling, std::uint64_t seed);

struct TrainResult {
  PolicyParams params;
  std::vector<MetricRecord> metrics;
  std::vector<double> step_wall_ms;
};

// Called after each step with the number of completed steps.
using StepCallback = std::function<void(int completed, const PolicyParams& params,
                                        const MetricRecord& record)>;

struct TrainOptions {
  int start_step = 0;  // resume point; must fall on a wave boundary
  int stop_step = -1;  // stop before this step (wave boundary); -1 runs to the end
  StepCallback on_step;
  FailurePolicy judge_policy = FailurePolicy::kScoreZeroAndLog;
  JudgeStats* stats = nullptr;
};

// Metrics of step s describe the policy before that step's update; the
// holdout is greedily decoded with the same parameters.
TrainResult train(const std::vector<AugmentedSample>& dataset,
                  const std::vector<Sample>& holdout, const TrainConfig& cfg,
                  const FusionConfig& fusion, Judge& judge, const PolicyParams& init,
                  const TrainOptions& options = {});

}  // namespace palmr

#endif  // PALMR_GRPO_HPP_
