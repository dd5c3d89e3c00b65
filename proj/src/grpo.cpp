#include "palmr/grpo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "palmr/rng.hpp"

namespace palmr {

AdvantageSet compute_advantages(const std::vector<double>& rewards) {
  if (rewards.size() < 2) {
    throw std::invalid_argument("compute_advantages: a group needs at least two rewards");
  }
  AdvantageSet out;
  out.advantages.assign(rewards.size(), 0.0);
  // Equal rewards carry no signal. Tested exactly: a rounded mean of equal
  // values can differ from them and leave a spurious sd of order 1e-17.
  const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
  if (*lo == *hi) return out;
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  for (std::size_t i = 0; i < rewards.size(); ++i) out.advantages[i] = (rewards[i] - mean) / sd;
  return out;
}

double accumulate_surrogate(const PolicyParams& params, const Sample& prompt,
                            const std::vector<Trajectory>& trajectories,
                            const AdvantageSet& advantages, const SurrogateOptions& opts,
                            double scale, PolicyParams& grad) {
  if (trajectories.empty() || trajectories.size() != advantages.advantages.size()) {
    throw std::invalid_argument("surrogate: need one advantage per trajectory");
  }
  if (!(opts.clip_epsilon > 0.0 && opts.clip_epsilon < 1.0)) {
    throw std::invalid_argument("surrogate: clip_epsilon must lie in (0, 1)");
  }
  std::size_t total_tokens = 0;
  for (const Trajectory& t : trajectories) {
    if (t.old_logprobs.size() != t.tokens.size()) {
      throw std::invalid_argument("surrogate: old_logprobs length does not match tokens");
    }
    total_tokens += t.tokens.size();
  }
  const double lo = 1.0 - opts.clip_epsilon;
  const double hi = 1.0 + opts.clip_epsilon;
  const double g = static_cast<double>(trajectories.size());

  double loss = 0.0;
  std::vector<double> weights;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const Trajectory& t = trajectories[i];
    const double a = advantages.advantages[i];
    if (t.tokens.empty()) continue;
    const double c = opts.flat_token_average ? 1.0 / static_cast<double>(total_tokens)
                                             : 1.0 / (g * static_cast<double>(t.tokens.size()));
    const std::vector<double> lp = logprob(params, prompt, t.tokens, opts.temperature);
    weights.assign(t.tokens.size(), 0.0);
    bool any = false;
    for (std::size_t k = 0; k < lp.size(); ++k) {
      const double psi = std::exp(lp[k] - t.old_logprobs[k]);
      const double clipped = std::clamp(psi, lo, hi);
      loss -= c * std::min(psi * a, clipped * a);
      // The unclipped branch is the active one exactly when it is the minimum;
      // otherwise the term is constant in the parameters.
      const bool active = (a > 0.0 && psi <= hi) || (a < 0.0 && psi >= lo);
      if (active) {
        weights[k] = -scale * c * psi * a;
        any = true;
      }
    }
    if (any) accumulate_grad_logprob(params, prompt, t.tokens, opts.temperature, weights, grad);
  }
  return scale * loss;
}

SurrogateResult surrogate_loss_and_grad(const PolicyParams& params, const Sample& prompt,
                                        const std::vector<Trajectory>& trajectories,
                                        const AdvantageSet& advantages,
                                        const SurrogateOptions& opts) {
  SurrogateResult out;
  out.loss = accumulate_surrogate(params, prompt, trajectories, advantages, opts, 1.0, out.grad);
  return out;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("train: learning_rate must be finite and >= 0");
  }
  if (group_size < 2) throw std::invalid_argument("train: group_size must be >= 2");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (rollout_batch_size < batch_size || rollout_batch_size % batch_size != 0) {
    throw std::invalid_argument("train: rollout_batch_size must be a multiple of batch_size");
  }
  if (epochs < 1 && steps < 1) throw std::invalid_argument("train: need epochs or steps >= 1");
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) {
    throw std::invalid_argument("train: clip_epsilon must lie in (0, 1)");
  }
  SamplingConfig{temperature, max_len}.validate();
  if (kl_enabled) throw std::invalid_argument("train: the KL term is not supported");
}

int TrainConfig::total_steps(std::size_t dataset_size) const {
  if (steps > 0) return steps;
  const std::size_t waves_per_epoch =
      (dataset_size + static_cast<std::size_t>(rollout_batch_size) - 1) /
      static_cast<std::size_t>(rollout_batch_size);
  return static_cast<int>(static_cast<std::size_t>(epochs) * waves_per_epoch *
                          static_cast<std::size_t>(updates_per_wave()));
}

std::vector<RolloutGroup> rollout_wave(const PolicyParams& params,
                                       const std::vector<const AugmentedSample*>& batch,
                                       const TrainConfig& cfg, Judge& judge,
                                       const FusionConfig& fusion, std::uint64_t wave_seed,
                                       FailurePolicy policy, JudgeStats* stats) {
  const SamplingConfig sampling{cfg.temperature, cfg.max_len};
  const auto g = static_cast<std::size_t>(cfg.group_size);
  std::vector<RolloutGroup> groups(batch.size());
  std::vector<PairwiseQuery> queries;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<ParsedTrajectory>> parsed(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const AugmentedSample& s = *batch[i];
    const ParsedTrajectory reference = parse(s.reference);
    RolloutGroup& group = groups[i];
    group.sample_id = s.sample.sample_id;
    for (std::size_t k = 0; k < g; ++k) {
      group.trajectories.push_back(
          sample_trajectory(params, s.sample, sampling, derive_seed(wave_seed, {i, k})));
      parsed[i].push_back(parse(group.trajectories.back()));
      queries.push_back({s.sample.question, s.pseudo_gt, parsed[i].back(), reference});
      seeds.push_back(derive_seed(wave_seed, {i, k, 0x5e}));
    }
  }
  const std::vector<int> s_vis = pairwise_scores(judge, std::move(queries), seeds, policy, stats);

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const AugmentedSample& s = *batch[i];
    const FactSet truth = enumerate_facts(s.sample.scene);
    RolloutGroup& group = groups[i];
    for (std::size_t k = 0; k < g; ++k) {
      const ParsedTrajectory& p = parsed[i][k];
      const ComponentScores scores{s_vis[i * g + k], answer_score(p, s.sample.question.gold_answer),
                                   format_score(p)};
      group.breakdowns.push_back(make_breakdown(scores, fusion));
      group.rewards.push_back(group.breakdowns.back().fused);
      group.truth.push_back(fidelity_profile(p.claims, truth));
    }
  }
  return groups;
}

namespace {

std::string optional_field(const std::optional<double>& v) {
  return v ? fmt::format("{:.17g}", *v) : std::string();
}

}  // namespace

std::string metrics_csv_header() {
  return "schema_version,step,mean_reward,mean_s_vis,mean_s_ans,mean_s_fmt,"
         "hallucination_rate,contradicted_claim_rate,mean_length,mean_claims,"
         "holdout_accuracy,holdout_greedy_accuracy,grad_norm";
}

std::string metrics_csv_row(const MetricRecord& r) {
  return fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{},{},{:.17g}",
                     kMetricsSchemaVersion, r.step, r.mean_reward, r.mean_s_vis, r.mean_s_ans,
                     r.mean_s_fmt, r.hallucination_rate, r.contradicted_claim_rate,
                     r.mean_length, r.mean_claims,
                     optional_field(r.holdout_accuracy), optional_field(r.holdout_greedy_accuracy),
                     r.grad_norm);
}

double greedy_accuracy(const PolicyParams& params, const std::vector<Sample>& samples,
                       const SamplingConfig& sampling, std::uint64_t seed) {
  if (samples.empty()) return 0.0;
  int correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Trajectory t = greedy_trajectory(params, samples[i], sampling, derive_seed(seed, {i}));
    correct += answer_score(parse(t), samples[i].question.gold_answer);
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

double sampled_accuracy(const PolicyParams& params, const std::vector<Sample>& samples,
                        const SamplingConfig& sampling, std::uint64_t seed) {
  if (samples.empty()) return 0.0;
  int correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Trajectory t = sample_trajectory(params, samples[i], sampling, derive_seed(seed, {i}));
    correct += answer_score(parse(t), samples[i].question.gold_answer);
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

namespace {

MetricRecord summarize(int step, std::span<const RolloutGroup> groups) {
  MetricRecord m;
  m.step = step;
  double n = 0, claims = 0, contradicted = 0;
  for (const RolloutGroup& grp : groups) {
    for (std::size_t k = 0; k < grp.trajectories.size(); ++k) {
      const RewardBreakdown& b = grp.breakdowns[k];
      const FidelityProfile& f = grp.truth[k];
      m.mean_reward += b.fused;
      m.mean_s_vis += b.s_vis;
      m.mean_s_ans += b.s_ans;
      m.mean_s_fmt += b.s_fmt;
      m.hallucination_rate += f.contradicted > 0 ? 1.0 : 0.0;
      m.mean_length += static_cast<double>(grp.trajectories[k].tokens.size());
      const int made = f.verified + f.contradicted + f.unverifiable;
      claims += made;
      contradicted += f.contradicted;
      n += 1;
    }
  }
  if (n > 0) {
    m.mean_reward /= n;
    m.mean_s_vis /= n;
    m.mean_s_ans /= n;
    m.mean_s_fmt /= n;
    m.hallucination_rate /= n;
    m.mean_length /= n;
    m.mean_claims = claims / n;
  }
  m.contradicted_claim_rate = claims > 0 ? contradicted / claims : 0.0;
  return m;
}

}  // namespace

TrainResult train(const std::vector<AugmentedSample>& dataset,
                  const std::vector<Sample>& holdout, const TrainConfig& cfg,
                  const FusionConfig& fusion, Judge& judge, const PolicyParams& init,
                  const TrainOptions& options) {
  cfg.validate();
  fusion.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  const int total = cfg.total_steps(dataset.size());
  const int per_wave = cfg.updates_per_wave();
  if (options.start_step < 0 || options.start_step > total || options.start_step % per_wave != 0) {
    throw std::invalid_argument(
        fmt::format("train: cannot resume at step {} (waves of {} steps, {} total)",
                    options.start_step, per_wave, total));
  }
  const int stop = options.stop_step < 0 ? total : std::min(options.stop_step, total);
  if (stop < options.start_step || (stop < total && stop % per_wave != 0)) {
    throw std::invalid_argument(fmt::format("train: cannot stop at step {}", options.stop_step));
  }
  const SamplingConfig sampling{cfg.temperature, cfg.max_len};
  const SurrogateOptions sopts{cfg.clip_epsilon, cfg.temperature, cfg.flat_token_average};

  TrainResult result;
  result.params = init;
  result.params.validate();
  PolicyParams grad;
  std::vector<RolloutGroup> groups;
  std::vector<const AugmentedSample*> batch;
  for (int step = options.start_step; step < stop; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const int wave = step / per_wave;
    const int update = step % per_wave;
    if (update == 0) {
      // Rollout samples for this wave, uniformly without replacement.
      std::vector<std::size_t> order(dataset.size());
      std::iota(order.begin(), order.end(), 0);
      Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(wave), 0x5a}));
      const std::size_t take =
          std::min<std::size_t>(static_cast<std::size_t>(cfg.rollout_batch_size), order.size());
      for (std::size_t i = 0; i < take; ++i) {
        std::swap(order[i], order[i + rng.below(order.size() - i)]);
      }
      batch.clear();
      for (std::size_t i = 0; i < take; ++i) batch.push_back(&dataset[order[i]]);
      groups = rollout_wave(result.params, batch, cfg, judge, fusion,
                            derive_seed(cfg.seed, {static_cast<std::uint64_t>(wave), 0x7a}),
                            options.judge_policy, options.stats);
    }
    const std::size_t begin = std::min(groups.size(), static_cast<std::size_t>(update) *
                                                          static_cast<std::size_t>(cfg.batch_size));
    const std::size_t end =
        std::min(groups.size(), begin + static_cast<std::size_t>(cfg.batch_size));
    const std::span<const RolloutGroup> slice(groups.data() + begin, end - begin);

    MetricRecord record = summarize(step, slice);
    if (!holdout.empty()) {
      record.holdout_accuracy =
          sampled_accuracy(result.params, holdout, sampling, derive_seed(cfg.seed, {0x402}));
      record.holdout_greedy_accuracy =
          greedy_accuracy(result.params, holdout, sampling, derive_seed(cfg.seed, {0x401}));
    }

    std::fill(grad.data().begin(), grad.data().end(), 0.0);
    const double scale = slice.empty() ? 0.0 : 1.0 / static_cast<double>(slice.size());
    for (std::size_t i = 0; i < slice.size(); ++i) {
      accumulate_surrogate(result.params, batch[begin + i]->sample, slice[i].trajectories,
                           compute_advantages(slice[i].rewards), sopts, scale, grad);
    }
    double norm2 = 0.0;
    auto& theta = result.params.data();
    const auto& d = grad.data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      norm2 += d[k] * d[k];
      theta[k] -= cfg.learning_rate * d[k];
    }
    record.grad_norm = std::sqrt(norm2);

    result.metrics.push_back(record);
    result.step_wall_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    if (options.on_step) options.on_step(step + 1, result.params, record);
  }
  return result;
}

}  // namespace palmr
