#include "palmr/config.hpp"

#include <cstdlib>
#include <fstream>
#include <regex>
#include <set>

#include <fmt/format.h>

namespace palmr {

std::string_view backend_name(Backend b) { return b == Backend::kOracle ? "oracle" : "remote"; }

std::optional<Backend> backend_from_name(std::string_view name) {
  if (name == "oracle") return Backend::kOracle;
  if (name == "remote") return Backend::kRemote;
  return std::nullopt;
}

std::string interpolate_env(const std::string& text) {
  static const std::regex kVar(R"(\$\{([A-Za-z_][A-Za-z0-9_]*)\})");
  std::string out;
  auto begin = std::sregex_iterator(text.begin(), text.end(), kVar);
  std::size_t last = 0;
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    const std::string name = (*it)[1].str();
    const char* value = std::getenv(name.c_str());
    if (!value) throw ConfigError("environment variable " + name + " is not set");
    out.append(text, last, static_cast<std::size_t>(it->position(0)) - last);
    out += value;
    last = static_cast<std::size_t>(it->position(0) + it->length(0));
  }
  out.append(text, last);
  return out;
}

namespace {

// Reads the keys of one JSON object and rejects any it did not consume.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(fmt::format("{}.{}: {}", path_, key, e.what()));
    }
  }

  const nlohmann::json* sub(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  std::string path(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.contains(key)) throw ConfigError("unknown config key " + path_ + "." + key);
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_endpoint(const nlohmann::json& j, const std::string& path, EndpointConfig& e) {
  Section s(j, path);
  s.get("base_url", e.base_url);
  s.get("model", e.model);
  s.get("api_key", e.api_key);
  s.get("timeout_s", e.timeout_s);
  s.get("max_retries", e.max_retries);
  s.get("backoff_initial_s", e.backoff_initial_s);
  s.get("backoff_multiplier", e.backoff_multiplier);
  s.get("max_in_flight", e.max_in_flight);
  s.get("temperature", e.temperature);
  s.get("max_tokens", e.max_tokens);
  s.finish();
  // Secrets come from the environment, never from the file itself.
  e.base_url = interpolate_env(e.base_url);
  e.model = interpolate_env(e.model);
  e.api_key = interpolate_env(e.api_key);
}

void env_fallback(EndpointConfig& e) {
  if (e.base_url.empty()) {
    if (const char* v = std::getenv("JUDGE_BASE_URL")) e.base_url = v;
  }
  if (e.api_key.empty()) {
    if (const char* v = std::getenv("JUDGE_API_KEY")) e.api_key = v;
  }
}

Backend read_backend(Section& s, Backend fallback) {
  std::string name(backend_name(fallback));
  s.get("backend", name);
  const auto b = backend_from_name(name);
  if (!b) throw ConfigError("unknown backend '" + name + "' (oracle|remote)");
  return *b;
}

std::vector<DomainSpec> read_domains(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("data.domains must be an array");
  std::vector<DomainSpec> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    Section s(j[i], fmt::format("data.domains[{}]", i));
    DomainSpec d;
    std::vector<std::string> templates;
    s.get("tag", d.tag);
    s.get("category", d.category);
    s.get("templates", templates);
    s.get("pool_scenes", d.pool_scenes);
    s.finish();
    for (const auto& name : templates) {
      const auto t = template_from_name(name);
      if (!t) throw ConfigError("unknown question template '" + name + "'");
      d.templates.push_back(*t);
    }
    out.push_back(std::move(d));
  }
  return out;
}

void read_data(const nlohmann::json& j, BuildConfig& d) {
  Section s(j, "data");
  if (const auto* domains = s.sub("domains")) d.domains = read_domains(*domains);
  if (const auto* scene = s.sub("scene")) {
    Section sc(*scene, "data.scene");
    sc.get("grid_size", d.scene.grid_size);
    sc.get("min_objects", d.scene.min_objects);
    sc.get("max_objects", d.scene.max_objects);
    sc.finish();
  }
  s.get("questions_per_scene", d.questions_per_scene);
  s.get("per_domain_n", d.per_domain_n);
  if (const auto* filter = s.sub("filter")) {
    Section f(*filter, "data.filter");
    f.get("rollouts_per_sample", d.filter.rollouts_per_sample);
    f.get("min_accuracy", d.filter.min_accuracy);
    f.get("max_accuracy", d.filter.max_accuracy);
    f.finish();
  }
  s.get("best_of_n", d.best_of_n);
  s.get("holdout_size", d.holdout_size);
  if (const auto* sampling = s.sub("sampling")) {
    Section sa(*sampling, "data.sampling");
    sa.get("temperature", d.sampling.temperature);
    sa.get("max_len", d.sampling.max_len);
    sa.finish();
  }
  s.finish();
}

void read_train(const nlohmann::json& j, RunConfig& cfg) {
  TrainConfig& t = cfg.train;
  Section s(j, "train");
  s.get("learning_rate", t.learning_rate);
  s.get("group_size", t.group_size);
  s.get("batch_size", t.batch_size);
  s.get("rollout_batch_size", t.rollout_batch_size);
  s.get("epochs", t.epochs);
  s.get("steps", t.steps);
  s.get("clip_epsilon", t.clip_epsilon);
  s.get("temperature", t.temperature);
  s.get("max_len", t.max_len);
  s.get("kl_enabled", t.kl_enabled);
  s.get("flat_token_average", t.flat_token_average);
  s.get("checkpoint_every", cfg.checkpoint_every);
  s.finish();
}

void read_fusion(const nlohmann::json& j, FusionConfig& f) {
  Section s(j, "fusion");
  std::string strategy(strategy_name(f.strategy));
  s.get("strategy", strategy);
  const auto parsed = strategy_from_name(strategy);
  if (!parsed) throw ConfigError("unknown fusion strategy '" + strategy + "'");
  f.strategy = *parsed;
  s.get("answer_weight", f.answer_weight);
  s.get("format_weight", f.format_weight);
  s.get("mix_vis_weight", f.mix_vis_weight);
  s.get("mix_ans_weight", f.mix_ans_weight);
  s.get("mix_fmt_weight", f.mix_fmt_weight);
  s.get("bonus", f.bonus);
  s.get("unconditional_bonus", f.unconditional_bonus);
  s.finish();
}

void read_judge(const nlohmann::json& j, JudgeSection& judge) {
  Section s(j, "judge");
  judge.backend = read_backend(s, judge.backend);
  std::string policy = "score_zero";
  s.get("failure_policy", policy);
  if (policy == "score_zero") {
    judge.failure_policy = FailurePolicy::kScoreZeroAndLog;
  } else if (policy == "fail_run") {
    judge.failure_policy = FailurePolicy::kFailRun;
  } else {
    throw ConfigError("judge.failure_policy must be score_zero or fail_run");
  }
  if (const auto* e = s.sub("endpoint")) read_endpoint(*e, "judge.endpoint", judge.endpoint);
  s.get("prompts_dir", judge.prompts_dir);
  if (const auto* m = s.sub("think_markers")) {
    Section ms(*m, "judge.think_markers");
    ms.get("open", judge.think_markers.open);
    ms.get("close", judge.think_markers.close);
    ms.finish();
  }
  if (const auto* p = s.sub("verdict_patterns")) {
    Section ps(*p, "judge.verdict_patterns");
    ps.get("a", judge.verdict_patterns.slot_a);
    ps.get("b", judge.verdict_patterns.slot_b);
    ps.finish();
  }
  s.finish();
}

void read_captioner(const nlohmann::json& j, CaptionerSection& c) {
  Section s(j, "captioner");
  c.backend = read_backend(s, c.backend);
  s.get("noise_rate", c.noise_rate);
  if (const auto* e = s.sub("endpoint")) read_endpoint(*e, "captioner.endpoint", c.endpoint);
  s.get("prompt_file", c.prompt_file);
  s.finish();
}

// Library validators throw std::invalid_argument; report them as config errors.
template <typename F>
void check(F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j, const ConfigOverrides& overrides) {
  RunConfig cfg;
  Section s(j, "config");
  s.get("seed", cfg.seed);
  std::string out = cfg.output_dir.string();
  s.get("output_dir", out);
  cfg.output_dir = out;
  if (const auto* d = s.sub("data")) read_data(*d, cfg.data);
  if (const auto* p = s.sub("prior")) {
    Section ps(*p, "prior");
    ps.get("open_bias", cfg.prior.open_bias);
    ps.get("perceive_bias", cfg.prior.perceive_bias);
    ps.get("close_bias", cfg.prior.close_bias);
    ps.get("close_no_object_bias", cfg.prior.close_no_object_bias);
    ps.get("answer_bias", cfg.prior.answer_bias);
    ps.finish();
  }
  if (const auto* t = s.sub("train")) read_train(*t, cfg);
  if (const auto* f = s.sub("fusion")) read_fusion(*f, cfg.fusion);
  if (const auto* jd = s.sub("judge")) read_judge(*jd, cfg.judge);
  if (const auto* c = s.sub("captioner")) read_captioner(*c, cfg.captioner);
  if (const auto* a = s.sub("ablate")) {
    Section as(*a, "ablate");
    std::vector<std::string> names;
    as.get("strategies", names);
    as.finish();
    if (a->contains("strategies")) {
      cfg.ablate_strategies.clear();
      for (const auto& n : names) {
        const auto st = strategy_from_name(n);
        if (!st) throw ConfigError("unknown ablation strategy '" + n + "'");
        cfg.ablate_strategies.push_back(*st);
      }
    }
  }
  if (const auto* e = s.sub("eval")) {
    Section es(*e, "eval");
    es.get("samples_per_item", cfg.eval_samples_per_item);
    es.finish();
  }
  s.finish();

  if (overrides.seed) cfg.seed = *overrides.seed;
  if (overrides.strategy) cfg.fusion.strategy = *overrides.strategy;
  if (overrides.judge) cfg.judge.backend = *overrides.judge;
  cfg.data.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  env_fallback(cfg.judge.endpoint);
  env_fallback(cfg.captioner.endpoint);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, const ConfigOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return parse_run_config(j, overrides);
}

void RunConfig::validate() const {
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  check([&] { data.validate(); });
  check([&] { train.validate(); });
  if (checkpoint_every < 0 ||
      (checkpoint_every > 0 && checkpoint_every % train.updates_per_wave() != 0)) {
    throw ConfigError("train.checkpoint_every must be >= 0 and a multiple of the steps per wave");
  }
  check([&] { fusion.validate(); });
  if (ablate_strategies.empty()) throw ConfigError("ablate.strategies must not be empty");
  std::set<FusionStrategy> seen;
  for (FusionStrategy s : ablate_strategies) {
    if (!seen.insert(s).second) throw ConfigError("ablate.strategies has duplicates");
    FusionConfig f = fusion;
    f.strategy = s;
    check([&] { f.validate(); });
  }
  if (judge.backend == Backend::kRemote) check([&] { judge.endpoint.validate(); });
  if (judge.think_markers.open.empty() || judge.think_markers.close.empty()) {
    throw ConfigError("judge.think_markers must be non-empty");
  }
  for (const auto* list : {&judge.verdict_patterns.slot_a, &judge.verdict_patterns.slot_b}) {
    if (list->empty()) throw ConfigError("judge.verdict_patterns lists must be non-empty");
    for (const auto& p : *list) {
      try {
        std::regex re(p);
      } catch (const std::regex_error& e) {
        throw ConfigError("bad verdict pattern '" + p + "': " + e.what());
      }
    }
  }
  if (!(captioner.noise_rate >= 0.0 && captioner.noise_rate <= 1.0)) {
    throw ConfigError("captioner.noise_rate must be in [0, 1]");
  }
  if (captioner.backend == Backend::kRemote) check([&] { captioner.endpoint.validate(); });
  if (eval_samples_per_item < 1) throw ConfigError("eval.samples_per_item must be >= 1");
}

namespace {

nlohmann::json endpoint_json(const EndpointConfig& e) {
  return {{"base_url", e.base_url},
          {"model", e.model},
          {"api_key", e.api_key.empty() ? "" : "<redacted>"},
          {"timeout_s", e.timeout_s},
          {"max_retries", e.max_retries},
          {"backoff_initial_s", e.backoff_initial_s},
          {"backoff_multiplier", e.backoff_multiplier},
          {"max_in_flight", e.max_in_flight},
          {"temperature", e.temperature},
          {"max_tokens", e.max_tokens}};
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& d : c.data.domains) {
    std::vector<std::string> templates;
    for (auto t : d.templates) templates.emplace_back(template_name(t));
    domains.push_back({{"tag", d.tag},
                       {"category", d.category},
                       {"templates", templates},
                       {"pool_scenes", d.pool_scenes}});
  }
  std::vector<std::string> strategies;
  for (auto s : c.ablate_strategies) strategies.emplace_back(strategy_name(s));
  const auto& t = c.train;
  const auto& f = c.fusion;
  return {
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()},
      {"data",
       {{"domains", domains},
        {"scene",
         {{"grid_size", c.data.scene.grid_size},
          {"min_objects", c.data.scene.min_objects},
          {"max_objects", c.data.scene.max_objects}}},
        {"questions_per_scene", c.data.questions_per_scene},
        {"per_domain_n", c.data.per_domain_n},
        {"filter",
         {{"rollouts_per_sample", c.data.filter.rollouts_per_sample},
          {"min_accuracy", c.data.filter.min_accuracy},
          {"max_accuracy", c.data.filter.max_accuracy}}},
        {"best_of_n", c.data.best_of_n},
        {"holdout_size", c.data.holdout_size},
        {"sampling",
         {{"temperature", c.data.sampling.temperature}, {"max_len", c.data.sampling.max_len}}}}},
      {"prior",
       {{"open_bias", c.prior.open_bias},
        {"perceive_bias", c.prior.perceive_bias},
        {"close_bias", c.prior.close_bias},
        {"close_no_object_bias", c.prior.close_no_object_bias},
        {"answer_bias", c.prior.answer_bias}}},
      {"train",
       {{"learning_rate", t.learning_rate},
        {"group_size", t.group_size},
        {"batch_size", t.batch_size},
        {"rollout_batch_size", t.rollout_batch_size},
        {"epochs", t.epochs},
        {"steps", t.steps},
        {"clip_epsilon", t.clip_epsilon},
        {"temperature", t.temperature},
        {"max_len", t.max_len},
        {"kl_enabled", t.kl_enabled},
        {"flat_token_average", t.flat_token_average},
        {"checkpoint_every", c.checkpoint_every}}},
      {"fusion",
       {{"strategy", strategy_name(f.strategy)},
        {"answer_weight", f.answer_weight},
        {"format_weight", f.format_weight},
        {"mix_vis_weight", f.mix_vis_weight},
        {"mix_ans_weight", f.mix_ans_weight},
        {"mix_fmt_weight", f.mix_fmt_weight},
        {"bonus", f.bonus},
        {"unconditional_bonus", f.unconditional_bonus}}},
      {"judge",
       {{"backend", backend_name(c.judge.backend)},
        {"failure_policy",
         c.judge.failure_policy == FailurePolicy::kFailRun ? "fail_run" : "score_zero"},
        {"endpoint", endpoint_json(c.judge.endpoint)},
        {"prompts_dir", c.judge.prompts_dir},
        {"think_markers", {{"open", c.judge.think_markers.open}, {"close", c.judge.think_markers.close}}},
        {"verdict_patterns",
         {{"a", c.judge.verdict_patterns.slot_a}, {"b", c.judge.verdict_patterns.slot_b}}}}},
      {"captioner",
       {{"backend", backend_name(c.captioner.backend)},
        {"noise_rate", c.captioner.noise_rate},
        {"endpoint", endpoint_json(c.captioner.endpoint)},
        {"prompt_file", c.captioner.prompt_file}}},
      {"ablate", {{"strategies", strategies}}},
      {"eval", {{"samples_per_item", c.eval_samples_per_item}}},
  };
}

}  // namespace palmr
