#include "palmr/commands.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "palmr/rng.hpp"

namespace palmr {

namespace fs = std::filesystem;

void atomic_write(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing dataset file " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(fmt::format("{}:{}: {}", path.string(), n, e.what()));
    }
  }
  return out;
}

void save_params_atomic(const PolicyParams& params, const fs::path& path) {
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  save_params(params, tmp);
  fs::rename(tmp, path);
}

std::string csv_text(const std::vector<std::string>& rows, const std::string& header) {
  std::string out = header + "\n";
  for (const auto& r : rows) out += r + "\n";
  return out;
}

double mean_of(const std::vector<MetricRecord>& m, std::size_t from, double MetricRecord::*field) {
  if (from >= m.size()) return 0.0;
  double s = 0;
  for (std::size_t i = from; i < m.size(); ++i) s += m[i].*field;
  return s / static_cast<double>(m.size() - from);
}

}  // namespace

std::unique_ptr<Judge> make_judge(const RunConfig& cfg) {
  if (cfg.judge.backend == Backend::kOracle) return std::make_unique<OracleJudge>();
  JudgePrompts prompts = cfg.judge.prompts_dir.empty()
                             ? JudgePrompts::defaults()
                             : JudgePrompts::load(cfg.judge.prompts_dir);
  return std::make_unique<RemoteJudge>(cfg.judge.endpoint, std::move(prompts),
                                       cfg.judge.think_markers, cfg.judge.verdict_patterns);
}

std::unique_ptr<Captioner> make_captioner(const RunConfig& cfg) {
  if (cfg.captioner.backend == Backend::kOracle) {
    return std::make_unique<OracleCaptioner>(cfg.captioner.noise_rate);
  }
  const std::string prompt = cfg.captioner.prompt_file.empty()
                                 ? default_caption_prompt()
                                 : read_text(cfg.captioner.prompt_file);
  return std::make_unique<RemoteCaptioner>(cfg.captioner.endpoint, prompt);
}

std::vector<AugmentedSample> read_train_jsonl(const fs::path& path) {
  std::vector<AugmentedSample> out;
  for (const auto& j : read_jsonl(path)) out.push_back(augmented_sample_from_json(j));
  if (out.empty()) throw std::runtime_error("dataset " + path.string() + " is empty");
  return out;
}

std::vector<Sample> read_samples_jsonl(const fs::path& path) {
  std::vector<Sample> out;
  for (const auto& j : read_jsonl(path)) {
    out.push_back(j.contains("format_version") ? augmented_sample_from_json(j).sample
                                               : sample_from_json(j));
  }
  return out;
}

void cmd_gen_data(const RunConfig& cfg) {
  const RunPaths paths{cfg.output_dir};
  auto judge = make_judge(cfg);
  auto captioner = make_captioner(cfg);
  JudgeStats stats;
  spdlog::info("building dataset: {} domains, {} per domain, seed {}", cfg.data.domains.size(),
               cfg.data.per_domain_n, cfg.seed);
  BuiltDataset ds = build_dataset(cfg.data, base_prior_params(cfg.prior), *captioner, *judge,
                                  cfg.judge.failure_policy, &stats);
  ds.manifest["judge"] = {{"backend", backend_name(cfg.judge.backend)},
                          {"comparisons", stats.comparisons.load()},
                          {"extraction_failures", stats.extraction_failures.load()},
                          {"endpoint_failures", stats.endpoint_failures.load()}};
  std::string train, holdout;
  for (const auto& s : ds.train) train += to_json(s).dump() + "\n";
  for (const auto& s : ds.holdout) holdout += to_json(s).dump() + "\n";
  atomic_write(paths.train_jsonl(), train);
  atomic_write(paths.holdout_jsonl(), holdout);
  atomic_write(paths.data_dir() / "config.json", to_json(cfg).dump(2) + "\n");
  atomic_write(paths.manifest(), ds.manifest.dump(2) + "\n");
  spdlog::info("kept {} of {} samples; holdout {}; wrote {}",
               ds.manifest["total"]["kept"].get<int>(), ds.manifest["total"]["sampled"].get<int>(),
               ds.holdout.size(), paths.data_dir().string());
}

void cmd_train(const RunConfig& cfg, bool resume, std::optional<int> stop_after) {
  const RunPaths paths{cfg.output_dir};
  const auto dataset = read_train_jsonl(paths.train_jsonl());
  const auto holdout = read_samples_jsonl(paths.holdout_jsonl());
  const fs::path dir = paths.train_dir(cfg.fusion.strategy);
  const fs::path state_path = dir / "state.json";
  const int total = cfg.train.total_steps(dataset.size());

  PolicyParams init = base_prior_params(cfg.prior);
  std::vector<std::string> metric_rows, timing_rows;
  int start = 0;
  if (resume) {
    if (!fs::exists(state_path)) throw std::runtime_error("nothing to resume in " + dir.string());
    const auto state = nlohmann::json::parse(read_text(state_path));
    start = state.at("step").get<int>();
    init = load_params(dir / state.at("checkpoint").get<std::string>());
    // Keep the rows logged before the checkpoint.
    for (auto [file, rows] : {std::pair{"metrics.csv", &metric_rows},
                              std::pair{"timing.csv", &timing_rows}}) {
      std::istringstream in(read_text(dir / file));
      std::string line;
      std::getline(in, line);  // header
      while (std::getline(in, line) && static_cast<int>(rows->size()) < start) {
        rows->push_back(line);
      }
    }
    if (static_cast<int>(metric_rows.size()) != start) {
      throw std::runtime_error("metrics.csv is shorter than the checkpoint step");
    }
    spdlog::info("resuming {} at step {}", strategy_name(cfg.fusion.strategy), start);
  }

  auto judge = make_judge(cfg);
  JudgeStats stats;
  auto write_state = [&](int step, const std::string& checkpoint) {
    atomic_write(dir / "metrics.csv", csv_text(metric_rows, metrics_csv_header()));
    atomic_write(dir / "timing.csv", csv_text(timing_rows, "step,wall_ms"));
    const nlohmann::json state = {{"step", step},
                                  {"total_steps", total},
                                  {"strategy", strategy_name(cfg.fusion.strategy)},
                                  {"checkpoint", checkpoint},
                                  {"judge_extraction_failures", stats.extraction_failures.load()},
                                  {"judge_endpoint_failures", stats.endpoint_failures.load()}};
    atomic_write(state_path, state.dump(2) + "\n");
  };
  TrainOptions opts;
  opts.start_step = start;
  opts.stop_step = stop_after ? *stop_after : -1;
  opts.judge_policy = cfg.judge.failure_policy;
  opts.stats = &stats;
  const auto t0 = std::chrono::steady_clock::now();
  opts.on_step = [&](int done, const PolicyParams& params, const MetricRecord& m) {
    metric_rows.push_back(metrics_csv_row(m));
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    timing_rows.push_back(fmt::format("{},{:.3f}", m.step, ms));
    if (done % 10 == 0 || done == total) {
      spdlog::info("step {:4d}/{} reward {:.3f} halluc {:.3f} len {:.2f} holdout {:.3f}", done,
                   total, m.mean_reward, m.hallucination_rate, m.mean_length,
                   m.holdout_accuracy.value_or(0.0));
    }
    const bool at_stop = stop_after && done == *stop_after;
    if (done == total) {
      save_params_atomic(params, dir / "final.bin");
      write_state(done, "final.bin");
    } else if ((cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) || at_stop) {
      const std::string name = fmt::format("checkpoints/step_{:06d}.bin", done);
      save_params_atomic(params, dir / name);
      write_state(done, name);
    }
  };
  fs::create_directories(dir);
  if (!resume) atomic_write(dir / "config.json", to_json(cfg).dump(2) + "\n");
  train(dataset, holdout, cfg.train, cfg.fusion, *judge, init, opts);
  if (stats.extraction_failures + stats.endpoint_failures > 0) {
    spdlog::warn("judge failures scored as 0: {} extraction, {} endpoint",
                 stats.extraction_failures.load(), stats.endpoint_failures.load());
  }
}

nlohmann::json cmd_eval(const RunConfig& cfg, const std::string& checkpoint,
                        const fs::path& dataset) {
  const RunPaths paths{cfg.output_dir};
  PolicyParams params;
  std::string name;
  if (checkpoint == "prior") {
    params = base_prior_params(cfg.prior);
    name = "prior";
  } else if (checkpoint == "uniform") {
    name = "uniform";
  } else {
    const fs::path path =
        checkpoint.empty() ? paths.train_dir(cfg.fusion.strategy) / "final.bin" : fs::path(checkpoint);
    params = load_params(path);
    name = checkpoint.empty() ? std::string(strategy_name(cfg.fusion.strategy))
                              : path.parent_path().filename().string() + "_" +
                                    path.stem().string();
  }
  const fs::path data_path = dataset.empty() ? paths.holdout_jsonl() : dataset;
  const auto samples = read_samples_jsonl(data_path);
  if (samples.empty()) throw std::runtime_error("no samples in " + data_path.string());

  const SamplingConfig sampling{cfg.train.temperature, cfg.train.max_len};
  const int k = cfg.eval_samples_per_item;
  struct Tally {
    int count = 0;
    double greedy_correct = 0, greedy_halluc = 0, sampled_correct = 0, sampled_halluc = 0;
  };
  std::map<std::string, Tally> by_domain;
  Tally all;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const FactSet truth = enumerate_facts(s.scene);
    auto score = [&](const Trajectory& t, double& correct, double& halluc, double w) {
      const ParsedTrajectory p = parse(t);
      correct += w * answer_score(p, s.question.gold_answer);
      halluc += w * (fidelity_profile(p.claims, truth).contradicted > 0 ? 1 : 0);
    };
    Tally one;
    one.count = 1;
    score(greedy_trajectory(params, s, sampling, derive_seed(cfg.seed, {0xe1, i})),
          one.greedy_correct, one.greedy_halluc, 1.0);
    for (int r = 0; r < k; ++r) {
      score(sample_trajectory(params, s, sampling,
                              derive_seed(cfg.seed, {0xe2, i, static_cast<std::uint64_t>(r)})),
            one.sampled_correct, one.sampled_halluc, 1.0 / k);
    }
    for (Tally* t : {&by_domain[s.domain_tag], &all}) {
      t->count += one.count;
      t->greedy_correct += one.greedy_correct;
      t->greedy_halluc += one.greedy_halluc;
      t->sampled_correct += one.sampled_correct;
      t->sampled_halluc += one.sampled_halluc;
    }
  }
  auto summary = [](const Tally& t) {
    return nlohmann::json{{"count", t.count},
                          {"greedy_accuracy", t.greedy_correct / t.count},
                          {"greedy_hallucination_rate", t.greedy_halluc / t.count},
                          {"sampled_accuracy", t.sampled_correct / t.count},
                          {"sampled_hallucination_rate", t.sampled_halluc / t.count}};
  };
  nlohmann::json report = summary(all);
  report["checkpoint"] = name;
  report["dataset"] = data_path.filename().string();
  report["samples_per_item"] = k;
  report["domains"] = nlohmann::json::object();
  for (const auto& [domain, t] : by_domain) report["domains"][domain] = summary(t);
  atomic_write(paths.eval_dir() / (name + ".json"), report.dump(2) + "\n");
  spdlog::info("eval {}: greedy accuracy {:.3f}, sampled hallucination rate {:.3f} over {} items",
               name, report["greedy_accuracy"].get<double>(),
               report["sampled_hallucination_rate"].get<double>(), all.count);
  return report;
}

void cmd_ablate(const RunConfig& cfg) {
  const RunPaths paths{cfg.output_dir};
  const auto dataset = read_train_jsonl(paths.train_jsonl());
  const auto holdout = read_samples_jsonl(paths.holdout_jsonl());
  std::string summary =
      "strategy,steps,final_hallucination_rate,final_quartile_hallucination_rate,"
      "final_quartile_mean_length,final_quartile_mean_reward,final_holdout_accuracy,"
      "final_greedy_accuracy\n";
  const SamplingConfig sampling{cfg.train.temperature, cfg.train.max_len};
  for (FusionStrategy strategy : cfg.ablate_strategies) {
    FusionConfig fusion = cfg.fusion;
    fusion.strategy = strategy;
    auto judge = make_judge(cfg);
    TrainOptions opts;
    opts.judge_policy = cfg.judge.failure_policy;
    spdlog::info("ablation run: {}", strategy_name(strategy));
    const TrainResult r =
        train(dataset, holdout, cfg.train, fusion, *judge, base_prior_params(cfg.prior), opts);
    std::vector<std::string> rows;
    for (const auto& m : r.metrics) rows.push_back(metrics_csv_row(m));
    atomic_write(paths.ablate_dir() / fmt::format("curve_{}.csv", strategy_name(strategy)),
                 csv_text(rows, metrics_csv_header()));
    const std::size_t q = r.metrics.size() - r.metrics.size() / 4;
    const double final_acc =
        holdout.empty() ? 0.0 : sampled_accuracy(r.params, holdout, sampling, derive_seed(cfg.seed, {0x402}));
    const double greedy =
        holdout.empty() ? 0.0 : greedy_accuracy(r.params, holdout, sampling, derive_seed(cfg.seed, {0x401}));
    summary += fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n",
                           strategy_name(strategy), r.metrics.size(),
                           r.metrics.back().hallucination_rate,
                           mean_of(r.metrics, q, &MetricRecord::hallucination_rate),
                           mean_of(r.metrics, q, &MetricRecord::mean_length),
                           mean_of(r.metrics, q, &MetricRecord::mean_reward), final_acc, greedy);
  }
  atomic_write(paths.ablate_dir() / "summary.csv", summary);
  spdlog::info("wrote {}", (paths.ablate_dir() / "summary.csv").string());
}

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::string markdown_table(const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty()) return "";
  std::string out = "| " + fmt::format("{}", fmt::join(rows[0], " | ")) + " |\n|";
  for (std::size_t i = 0; i < rows[0].size(); ++i) out += " --- |";
  out += "\n";
  for (std::size_t r = 1; r < rows.size(); ++r) {
    out += "| " + fmt::format("{}", fmt::join(rows[r], " | ")) + " |\n";
  }
  return out;
}

}  // namespace

void cmd_report(const RunConfig& cfg) {
  const RunPaths paths{cfg.output_dir};
  std::string md = fmt::format("# Run report\n\nOutput directory: `{}`, seed {}.\n",
                               cfg.output_dir.string(), cfg.seed);
  bool any = false;
  if (fs::exists(paths.manifest())) {
    any = true;
    const auto m = nlohmann::json::parse(read_text(paths.manifest()));
    std::vector<std::vector<std::string>> rows = {
        {"domain", "category", "sampled", "kept", "too_hard", "too_easy", "unverifiable"}};
    for (const auto& d : m.at("domains")) {
      const auto& r = d.at("rejected");
      rows.push_back({d.at("tag").get<std::string>(), d.at("category").get<std::string>(),
                      d.at("sampled").dump(), d.at("kept").dump(), r.at("too_hard").dump(),
                      r.at("too_easy").dump(), r.at("unverifiable").dump()});
    }
    md += "\n## Dataset\n\n" + markdown_table(rows);
    std::vector<std::vector<std::string>> cats = {{"category", "kept", "share"}};
    for (const auto& c : m.at("categories")) {
      cats.push_back({c.at("category").get<std::string>(), c.at("kept").dump(),
                      fmt::format("{:.3f}", c.at("share").get<double>())});
    }
    md += "\n" + markdown_table(cats);
  }
  if (fs::exists(paths.ablate_dir() / "summary.csv")) {
    any = true;
    md += "\n## Reward-strategy ablation\n\n" +
          markdown_table(read_csv(paths.ablate_dir() / "summary.csv"));
  }
  if (fs::exists(paths.eval_dir())) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(paths.eval_dir())) {
      if (e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (!files.empty()) {
      any = true;
      std::vector<std::vector<std::string>> rows = {
          {"checkpoint", "items", "greedy_accuracy", "greedy_hallucination", "sampled_accuracy",
           "sampled_hallucination"}};
      for (const auto& f : files) {
        const auto e = nlohmann::json::parse(read_text(f));
        rows.push_back({e.at("checkpoint").get<std::string>(), e.at("count").dump(),
                        fmt::format("{:.3f}", e.at("greedy_accuracy").get<double>()),
                        fmt::format("{:.3f}", e.at("greedy_hallucination_rate").get<double>()),
                        fmt::format("{:.3f}", e.at("sampled_accuracy").get<double>()),
                        fmt::format("{:.3f}", e.at("sampled_hallucination_rate").get<double>())});
      }
      md += "\n## Evaluations\n\n" + markdown_table(rows);
    }
  }
  if (!any) {
    throw std::runtime_error("nothing to report in " + cfg.output_dir.string() +
                             " (run gen-data, ablate or eval first)");
  }
  atomic_write(paths.report(), md);
  spdlog::info("wrote {}", paths.report().string());
}

int run_command(std::string_view verb, const CommandOptions& options) {
  try {
    const RunConfig cfg = load_run_config(options.config, options.overrides);
    if (verb == "gen-data") {
      cmd_gen_data(cfg);
    } else if (verb == "train") {
      cmd_train(cfg, options.resume, options.stop_after);
    } else if (verb == "eval") {
      cmd_eval(cfg, options.checkpoint, options.dataset);
    } else if (verb == "ablate") {
      cmd_ablate(cfg);
    } else if (verb == "report") {
      cmd_report(cfg);
    } else {
      spdlog::error("unknown command '{}'", verb);
      return kExitConfigError;
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kExitConfigError;
  } catch (const JudgeEndpointError& e) {
    spdlog::error("judge endpoint failure: {}", e.what());
    return kExitJudgeEndpoint;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntimeError;
  }
}

}  // namespace palmr
