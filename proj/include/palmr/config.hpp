#ifndef PALMR_CONFIG_HPP_
#define PALMR_CONFIG_HPP_

// Run configuration: one JSON file with sections for every module.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "palmr/grpo.hpp"
#include "palmr/judge.hpp"
#include "palmr/padlayer.hpp"
#include "palmr/policy.hpp"
#include "palmr/remote_judge.hpp"
#include "palmr/reward.hpp"

namespace palmr {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Backend : std::uint8_t { kOracle, kRemote };
std::string_view backend_name(Backend b);
std::optional<Backend> backend_from_name(std::string_view name);

struct JudgeSection {
  Backend backend = Backend::kOracle;
  FailurePolicy failure_policy = FailurePolicy::kScoreZeroAndLog;
  EndpointConfig endpoint;
  std::string prompts_dir;  // empty: built-in prompts
  ThinkMarkers think_markers;
  VerdictPatterns verdict_patterns;
};

struct CaptionerSection {
  Backend backend = Backend::kOracle;
  double noise_rate = 0.0;  // oracle only
  EndpointConfig endpoint;
  std::string prompt_file;  // empty: built-in prompt
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "runs/default";
  BuildConfig data;
  PriorConfig prior;
  TrainConfig train;
  int checkpoint_every = 50;
  FusionConfig fusion;
  JudgeSection judge;
  CaptionerSection captioner;
  std::vector<FusionStrategy> ablate_strategies = {
      FusionStrategy::kVanilla, FusionStrategy::kPalmr, FusionStrategy::kVisualBonus,
      FusionStrategy::kVisualMix};
  int eval_samples_per_item = 4;

  // Cross-field checks; throws ConfigError.
  void validate() const;
};

// Command-line overrides applied before validation.
struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<FusionStrategy> strategy;
  std::optional<Backend> judge;
};

// Replaces ${NAME} with the environment variable; an unset variable is a
// ConfigError.
std::string interpolate_env(const std::string& text);

RunConfig parse_run_config(const nlohmann::json& j, const ConfigOverrides& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path,
                          const ConfigOverrides& overrides = {});

// The resolved configuration, with secrets redacted.
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace palmr

#endif  // PALMR_CONFIG_HPP_
