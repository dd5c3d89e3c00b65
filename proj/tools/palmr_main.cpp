// palmr: dataset construction, training, evaluation and ablation runs.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "palmr/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"palmr: perception-aligned reinforcement learning on synthetic scenes"};
  app.require_subcommand(1);
  app.fallthrough();  // --log-level may follow the verb

  palmr::CommandOptions options;
  std::string log_level = "info";
  std::optional<std::uint64_t> seed;
  std::string strategy, judge;

  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", options.config, "run configuration (JSON)")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--judge", judge, "override the judge backend (oracle or remote)");
  };
  auto add_strategy = [&](CLI::App* sub) {
    sub->add_option("--strategy", strategy,
                    "reward fusion strategy (vanilla, palmr, visual_bonus, visual_mix)");
  };

  auto* gen = app.add_subcommand("gen-data", "build the training set and holdout");
  add_common(gen);

  auto* train = app.add_subcommand("train", "run GRPO training for one strategy");
  add_common(train);
  add_strategy(train);
  train->add_flag("--resume", options.resume, "continue from the last checkpoint");
  train->add_option("--stop-after", options.stop_after,
                    "stop once this many steps are done (a wave boundary)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval);
  add_strategy(eval);
  eval->add_option("--checkpoint", options.checkpoint,
                   "checkpoint path, 'prior' or 'uniform' (default: the strategy's final.bin)");
  eval->add_option("--dataset", options.dataset, "samples JSONL (default: the holdout)");

  auto* ablate = app.add_subcommand("ablate", "train every configured fusion strategy");
  add_common(ablate);

  auto* report = app.add_subcommand("report", "summarize a run directory as markdown");
  add_common(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? palmr::kExitOk : palmr::kExitConfigError;
  }

  spdlog::set_level(spdlog::level::from_str(log_level));
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");

  options.overrides.seed = seed;
  if (!strategy.empty()) {
    options.overrides.strategy = palmr::strategy_from_name(strategy);
    if (!options.overrides.strategy) {
      spdlog::error("unknown strategy '{}'", strategy);
      return palmr::kExitConfigError;
    }
  }
  if (!judge.empty()) {
    options.overrides.judge = palmr::backend_from_name(judge);
    if (!options.overrides.judge) {
      spdlog::error("unknown judge backend '{}'", judge);
      return palmr::kExitConfigError;
    }
  }
  return palmr::run_command(app.get_subcommands().front()->get_name(), options);
}
