#ifndef PALMR_COMMANDS_HPP_
#define PALMR_COMMANDS_HPP_

// The CLI verbs: gen-data, train, eval, ablate, report.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "palmr/config.hpp"

namespace palmr {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfigError = 1,
  kExitRuntimeError = 2,
  kExitJudgeEndpoint = 3,
};

struct CommandOptions {
  std::filesystem::path config;
  ConfigOverrides overrides;
  bool resume = false;               // train: continue from the last checkpoint
  std::optional<int> stop_after;     // train: stop once this many steps are done
  std::string checkpoint;            // eval: a path, "prior" or "uniform"
  std::filesystem::path dataset;     // eval: JSONL of samples (default: holdout)
};

// Output layout under RunConfig::output_dir.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path train_jsonl() const { return data_dir() / "train.jsonl"; }
  std::filesystem::path holdout_jsonl() const { return data_dir() / "holdout.jsonl"; }
  std::filesystem::path manifest() const { return data_dir() / "manifest.json"; }
  std::filesystem::path train_dir(FusionStrategy s) const {
    return root / "train" / std::string(strategy_name(s));
  }
  std::filesystem::path eval_dir() const { return root / "eval"; }
  std::filesystem::path ablate_dir() const { return root / "ablate"; }
  std::filesystem::path report() const { return root / "report.md"; }
};

// Writes to a temporary sibling and renames it into place.
void atomic_write(const std::filesystem::path& path, const std::string& content);

std::unique_ptr<Judge> make_judge(const RunConfig& cfg);
std::unique_ptr<Captioner> make_captioner(const RunConfig& cfg);

std::vector<AugmentedSample> read_train_jsonl(const std::filesystem::path& path);
// Accepts plain samples or augmented samples, one JSON object per line.
std::vector<Sample> read_samples_jsonl(const std::filesystem::path& path);

void cmd_gen_data(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg, bool resume, std::optional<int> stop_after);
nlohmann::json cmd_eval(const RunConfig& cfg, const std::string& checkpoint,
                        const std::filesystem::path& dataset);
void cmd_ablate(const RunConfig& cfg);
void cmd_report(const RunConfig& cfg);

// Loads the config, runs the verb and maps failures to exit codes.
int run_command(std::string_view verb, const CommandOptions& options);

}  // namespace palmr

#endif  // PALMR_COMMANDS_HPP_
