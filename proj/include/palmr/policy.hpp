#ifndef PALMR_POLICY_HPP_
#define PALMR_POLICY_HPP_

// Tabular-softmax autoregressive policy with exact log-probabilities and
// analytic gradients. Decoding is grammar-constrained: at every step the
// softmax runs over the tokens the response grammar allows next.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "palmr/scene.hpp"
#include "palmr/trajectory.hpp"

namespace palmr {

struct SamplingConfig {
  double temperature = 1.0;
  int max_len = kDefaultMaxLen;

  // Throws std::invalid_argument.
  void validate() const;
};

enum class PrevClass : std::uint8_t {
  kNone,
  kThinkOpen,
  kThinkClose,
  kClaim,
  kAnswer,
  kEnd,
};

// Context schema: (template, position bucket, previous token class, percept).
// Inside a think span the position bucket is the exact position (capped), so
// the policy knows which object it is looking at; elsewhere it is 0.
// The percept is what the policy sees at that step: the attributes of the
// gazed object while thinking, the question-relevant reading of the scene
// after </think>, and nothing otherwise.
inline constexpr int kNumPositionBuckets = kMaxObjectsLimit + 2;
inline constexpr int kNumPrevClasses = 6;
inline constexpr int kAbsentPercept = kNumShapes * kNumColors * kNumSizes;
inline constexpr int kNumPercepts = kAbsentPercept + 1;
inline constexpr int kNumContexts =
    kNumTemplates * kNumPositionBuckets * kNumPrevClasses * kNumPercepts;

struct ContextFeature {
  QuestionTemplate template_id = QuestionTemplate::kCount;
  int bucket = 0;
  PrevClass prev = PrevClass::kNone;
  int percept = 0;

  int index() const;
  static ContextFeature from_index(int index);
  friend bool operator==(const ContextFeature&, const ContextFeature&) = default;
};

PrevClass prev_class(std::optional<TokenId> prev);

// Everything the policy can observe about a prompt, precomputed once.
struct Perception {
  QuestionTemplate template_id = QuestionTemplate::kCount;
  int num_objects = 0;
  std::array<int, kMaxObjectsLimit> object_percepts{};
  int answer_percept = 0;
  std::vector<TokenId> answer_candidates;

  static Perception of(const Sample& sample);
};

ContextFeature context_of(const Perception& perception, int position,
                          std::optional<TokenId> prev);
ContextFeature context_of(const Sample& prompt, int position, std::optional<TokenId> prev);

// Tokens the grammar allows at this step; never empty.
std::vector<TokenId> legal_tokens(const Perception& perception, int position,
                                  std::optional<TokenId> prev);

class PolicyParams {
 public:
  PolicyParams();  // all logits 0: the uniform policy

  double& at(int context, TokenId token) { return logits_[offset(context, token)]; }
  double at(int context, TokenId token) const { return logits_[offset(context, token)]; }
  std::span<double> row(int context);
  std::span<const double> row(int context) const;
  std::vector<double>& data() { return logits_; }
  const std::vector<double>& data() const { return logits_; }

  // Throws std::invalid_argument on a non-finite entry.
  void validate() const;

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  static std::size_t offset(int context, TokenId token);
  std::vector<double> logits_;
};

// Hash of the table layout, written into checkpoints.
std::uint64_t policy_schema_hash();

void save_params(const PolicyParams& params, const std::filesystem::path& path);
// Throws std::runtime_error on a missing file, bad magic or schema mismatch.
PolicyParams load_params(const std::filesystem::path& path);

// Biases standing in for a pretrained model: it tends to open a think span,
// describe what it sees, close the span on empty cells and read the answer
// off its percept.
struct PriorConfig {
  double open_bias = 3.0;
  double perceive_bias = 2.0;
  double close_bias = 1.5;
  double close_no_object_bias = 2.0;
  double answer_bias = 1.0;
};

PolicyParams base_prior_params(const PriorConfig& cfg);

Trajectory sample_trajectory(const PolicyParams& params, const Sample& prompt,
                             const SamplingConfig& cfg, std::uint64_t seed);

// Highest-probability token at each step; ties broken by the seed.
Trajectory greedy_trajectory(const PolicyParams& params, const Sample& prompt,
                             const SamplingConfig& cfg, std::uint64_t seed);

// Per-token log-probabilities at the given temperature. Throws
// std::invalid_argument on an unknown token or one the grammar forbids.
std::vector<double> logprob(const PolicyParams& params, const Sample& prompt,
                            std::span<const TokenId> tokens, double temperature = 1.0);

// grad += sum_t weights[t] * d logprob_t / d logits.
void accumulate_grad_logprob(const PolicyParams& params, const Sample& prompt,
                             std::span<const TokenId> tokens, double temperature,
                             std::span<const double> weights, PolicyParams& grad);

// Gradient of the summed log-probability.
PolicyParams grad_logprob(const PolicyParams& params, const Sample& prompt,
                          std::span<const TokenId> tokens, double temperature = 1.0);

}  // namespace palmr

#endif  // PALMR_POLICY_HPP_
