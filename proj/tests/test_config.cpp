#include <cstdlib>

#include "doctest.h"
#include "palmr/config.hpp"

using namespace palmr;
using nlohmann::json;

namespace {

const std::filesystem::path kSource = PALMR_SOURCE_DIR;

}  // namespace

TEST_CASE("an empty config yields the documented defaults") {
  const RunConfig cfg = parse_run_config(json::object());
  CHECK(cfg.seed == 1);
  CHECK(cfg.train.learning_rate == 100.0);
  CHECK(cfg.train.group_size == 8);
  CHECK(cfg.train.batch_size == 16);
  CHECK(cfg.train.rollout_batch_size == 16);
  CHECK(cfg.train.steps == 200);
  CHECK(cfg.train.clip_epsilon == doctest::Approx(0.2));
  CHECK(cfg.fusion.strategy == FusionStrategy::kPalmr);
  CHECK(cfg.judge.backend == Backend::kOracle);
  CHECK(cfg.data.domains.size() == 6);
  CHECK(cfg.ablate_strategies.size() == 4);
}

TEST_CASE("shipped configs load") {
  for (const char* name : {"default.json", "tiny.json"}) {
    CAPTURE(name);
    CHECK_NOTHROW(load_run_config(kSource / "configs" / name));
  }
  // The remote example needs its environment variables.
  ::setenv("JUDGE_BASE_URL", "http://127.0.0.1:9", 1);
  ::setenv("JUDGE_API_KEY", "sk-test", 1);
  const RunConfig remote = load_run_config(kSource / "configs" / "remote_judge.json");
  CHECK(remote.judge.backend == Backend::kRemote);
  CHECK(remote.judge.endpoint.base_url == "http://127.0.0.1:9");
  CHECK(remote.judge.endpoint.api_key == "sk-test");
  CHECK(to_json(remote)["judge"]["endpoint"]["api_key"] == "<redacted>");
  ::unsetenv("JUDGE_BASE_URL");
  ::unsetenv("JUDGE_API_KEY");
  CHECK_THROWS_AS(load_run_config(kSource / "configs" / "remote_judge.json"), ConfigError);
}

TEST_CASE("unknown keys are rejected at every level") {
  CHECK_THROWS_AS(parse_run_config(json{{"sed", 1}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"train", {{"learning_rat", 1.0}}}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"data", {{"filter", {{"k", 8}}}}}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"judge", {{"endpoint", {{"url", "x"}}}}}}), ConfigError);
}

TEST_CASE("invalid values are config errors") {
  // Visual-mix weights must sum to 1, for the trained strategy or an ablated one.
  const json bad_mix = {{"mix_vis_weight", 0.5}, {"mix_ans_weight", 0.4}, {"mix_fmt_weight", 0.2}};
  json fusion = bad_mix;
  fusion["strategy"] = "visual_mix";
  CHECK_THROWS_AS(parse_run_config(json{{"fusion", fusion}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"fusion", bad_mix}}), ConfigError);

  CHECK_THROWS_AS(parse_run_config(json{{"fusion", {{"strategy", "best"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"train", {{"kl_enabled", true}}}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"train", {{"rollout_batch_size", 24}}}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"train", {{"group_size", "eight"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"data", {{"filter", {{"min_accuracy", 0.9},
                                                               {"max_accuracy", 0.1}}}}}}),
                  ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"captioner", {{"noise_rate", 1.5}}}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"judge", {{"failure_policy", "ignore"}}}}), ConfigError);
  CHECK_THROWS_AS(
      parse_run_config(json{{"judge", {{"verdict_patterns", {{"a", json::array({"[["})}}}}}}),
      ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"ablate", {{"strategies", {"palmr", "palmr"}}}}}),
                  ConfigError);
  // Checkpoints only land on wave boundaries.
  CHECK_THROWS_AS(parse_run_config(json{{"train", {{"batch_size", 4},
                                                   {"rollout_batch_size", 8},
                                                   {"checkpoint_every", 3}}}}),
                  ConfigError);
  // A remote judge needs an endpoint.
  ::unsetenv("JUDGE_BASE_URL");
  CHECK_THROWS_AS(parse_run_config(json{{"judge", {{"backend", "remote"}}}}), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("environment interpolation") {
  ::setenv("PALMR_TEST_HOST", "judge.local", 1);
  CHECK(interpolate_env("https://${PALMR_TEST_HOST}:8443/v1") == "https://judge.local:8443/v1");
  CHECK(interpolate_env("${PALMR_TEST_HOST}${PALMR_TEST_HOST}") == "judge.localjudge.local");
  CHECK(interpolate_env("no variables") == "no variables");
  CHECK(interpolate_env("$PALMR_TEST_HOST") == "$PALMR_TEST_HOST");
  ::unsetenv("PALMR_TEST_HOST");
  CHECK_THROWS_AS(interpolate_env("${PALMR_TEST_HOST}"), ConfigError);
}

TEST_CASE("overrides apply before validation and seeds propagate") {
  ConfigOverrides o;
  o.seed = 7;
  o.strategy = FusionStrategy::kVanilla;
  const RunConfig cfg = parse_run_config(json{{"seed", 3}}, o);
  CHECK(cfg.seed == 7);
  CHECK(cfg.data.seed == 7);
  CHECK(cfg.train.seed == 7);
  CHECK(cfg.fusion.strategy == FusionStrategy::kVanilla);

  // The resolved config reloads to the same thing.
  const RunConfig again = parse_run_config(to_json(cfg));
  CHECK(to_json(again) == to_json(cfg));
}
