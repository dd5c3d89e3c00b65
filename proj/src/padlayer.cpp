#include "palmr/padlayer.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "palmr/rng.hpp"

namespace palmr {

std::vector<DomainSpec> default_domains() {
  using T = QuestionTemplate;
  return {
      {"count-basic", "counting", {T::kCount}, 200},
      {"count-compare", "counting", {T::kCount, T::kComparison}, 200},
      {"attr-lookup", "attribute", {T::kAttributeLookup}, 200},
      {"compare", "comparison", {T::kComparison}, 200},
      {"spatial", "spatial", {T::kRelation}, 200},
      {"layout", "spatial", {T::kRelation, T::kAttributeLookup}, 200},
  };
}

DomainPool generate_pool(const DomainSpec& spec, const SceneConfig& scene_cfg,
                         int questions_per_scene, std::uint64_t seed) {
  if (spec.templates.empty()) {
    throw std::invalid_argument("domain '" + spec.tag + "' has no question templates");
  }
  DomainPool pool{spec.tag, {}};
  for (int k = 0; k < spec.pool_scenes; ++k) {
    const Scene scene = generate_scene(derive_seed(seed, {static_cast<std::uint64_t>(k)}),
                                       scene_cfg);
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(k), 1}));
    std::vector<Question> asked;
    for (int q = 0; q < questions_per_scene; ++q) {
      const QuestionTemplate t = spec.templates[rng.below(spec.templates.size())];
      Question question;
      try {
        question = generate_question(
            scene, t, derive_seed(seed, {static_cast<std::uint64_t>(k), 2,
                                         static_cast<std::uint64_t>(q)}));
      } catch (const TemplateNotApplicable&) {
        continue;
      }
      if (std::find(asked.begin(), asked.end(), question) != asked.end()) continue;
      asked.push_back(question);
      pool.samples.push_back(
          {fmt::format("{}-{:04d}-{}", spec.tag, k, q), scene, question, spec.tag});
    }
  }
  return pool;
}

std::vector<Sample> balanced_sample(const std::vector<DomainPool>& pools, int per_domain_n,
                                    std::uint64_t seed) {
  if (per_domain_n < 0) throw std::invalid_argument("balanced_sample: per_domain_n < 0");
  std::vector<Sample> out;
  for (std::size_t d = 0; d < pools.size(); ++d) {
    const auto& samples = pools[d].samples;
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, {d}));
    const std::size_t take = std::min<std::size_t>(per_domain_n, samples.size());
    // Partial Fisher-Yates: the first `take` slots are a uniform subset.
    for (std::size_t i = 0; i < take; ++i) {
      std::swap(order[i], order[i + rng.below(order.size() - i)]);
    }
    std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
    for (std::size_t i = 0; i < take; ++i) out.push_back(samples[order[i]]);
  }
  return out;
}

void FilterConfig::validate() const {
  if (rollouts_per_sample < 1) throw std::invalid_argument("filter: rollouts_per_sample < 1");
  if (!(min_accuracy >= 0.0 && min_accuracy <= max_accuracy && max_accuracy <= 1.0)) {
    throw std::invalid_argument("filter: need 0 <= min_accuracy <= max_accuracy <= 1");
  }
}

std::string_view reject_reason_name(RejectReason r) {
  switch (r) {
    case RejectReason::kTooHard: return "too_hard";
    case RejectReason::kTooEasy: return "too_easy";
    case RejectReason::kUnverifiable: return "unverifiable";
  }
  return "unknown";
}

PolicyResponder::PolicyResponder(const PolicyParams& params, SamplingConfig cfg)
    : params_(params), cfg_(cfg) {
  cfg_.validate();
}

Trajectory PolicyResponder::rollout(const Sample& sample, int /*index*/, std::uint64_t seed) {
  return sample_trajectory(params_, sample, cfg_, seed);
}

bool is_rule_checkable(const Question& question) {
  const auto token = answer_token(canonical_answer(question.gold_answer));
  if (!token) return false;
  const auto candidates = answer_candidates(question);
  return std::find(candidates.begin(), candidates.end(), *token) != candidates.end();
}

FilterResult learnability_filter(const std::vector<Sample>& samples, Responder& responder,
                                 const FilterConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  FilterResult result;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (!is_rule_checkable(s.question)) {
      result.rejected.push_back({s, RejectReason::kUnverifiable, 0.0});
      continue;
    }
    int correct = 0;
    for (int k = 0; k < cfg.rollouts_per_sample; ++k) {
      const Trajectory t =
          responder.rollout(s, k, derive_seed(seed, {i, static_cast<std::uint64_t>(k)}));
      correct += answer_score(parse(t), s.question.gold_answer);
    }
    const double acc = static_cast<double>(correct) / cfg.rollouts_per_sample;
    if (acc < cfg.min_accuracy) {
      result.rejected.push_back({s, RejectReason::kTooHard, acc});
    } else if (acc > cfg.max_accuracy) {
      result.rejected.push_back({s, RejectReason::kTooEasy, acc});
    } else {
      result.kept.push_back({s, acc});
    }
  }
  return result;
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

OracleCaptioner::OracleCaptioner(double noise_rate) : noise_rate_(noise_rate) {
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) {
    throw std::invalid_argument("captioner: noise_rate must be in [0, 1]");
  }
}

StructuredCaption OracleCaptioner::caption(const Scene& scene) {
  if (noise_rate_ == 0.0) return render_pseudo_gt(scene);
  Scene noisy = scene;
  Rng rng(derive_seed(fnv1a(scene.scene_id), {0xca9}));
  for (Object& o : noisy.objects) {
    if (rng.uniform() < noise_rate_) {
      const int shift = 1 + static_cast<int>(rng.below(kNumColors - 1));
      o.color = static_cast<Color>((static_cast<int>(o.color) + shift) % kNumColors);
    }
  }
  return render_pseudo_gt(noisy);
}

std::string default_caption_prompt() {
  return "Describe the image as a structured list of facts. Write one line per object, "
         "ordered by object id, in the form 'object <id>: <size> <color> <shape> at "
         "(<row>,<col>)'. Do not add commentary.";
}

RemoteCaptioner::RemoteCaptioner(EndpointConfig endpoint, std::string prompt)
    : client_(std::move(endpoint)), prompt_(std::move(prompt)) {}

StructuredCaption RemoteCaptioner::caption(const Scene& scene) {
  return {client_.complete(prompt_, to_json(scene).dump())};
}

const StructuredCaption& CaptionCache::caption(const Scene& scene) {
  std::lock_guard lock(mutex_);
  auto it = cache_.find(scene.scene_id);
  if (it == cache_.end()) {
    it = cache_.emplace(scene.scene_id, captioner_.caption(scene)).first;
    ++generated_;
  }
  return it->second;
}

StructuredCaption attach_pseudo_gt(const Sample& sample, Captioner& captioner) {
  return captioner.caption(sample.scene);
}

Trajectory select_reference(const Sample& sample, const StructuredCaption& pseudo_gt,
                            Responder& responder, int n, Judge& judge, std::uint64_t seed,
                            FailurePolicy policy, JudgeStats* stats) {
  if (n < 1) throw std::invalid_argument("select_reference: n must be >= 1");
  std::vector<Trajectory> candidates;
  for (int k = 0; k < n; ++k) {
    candidates.push_back(
        responder.rollout(sample, k, derive_seed(seed, {static_cast<std::uint64_t>(k)})));
  }
  std::size_t champion = 0;
  for (std::size_t k = 1; k < candidates.size(); ++k) {
    PairwiseQuery q{sample.question, pseudo_gt, parse(candidates[k]),
                    parse(candidates[champion])};
    if (pairwise_score(judge, q, derive_seed(seed, {k, 0x7e}), policy, stats) == 1) {
      champion = k;
    }
  }
  return candidates[champion];
}

nlohmann::json to_json(const AugmentedSample& s) {
  return {{"format_version", kDatasetFormatVersion},
          {"sample", to_json(s.sample)},
          {"pseudo_gt", s.pseudo_gt.text},
          {"reference", to_json(s.reference)},
          {"rollout_accuracy", s.rollout_accuracy}};
}

AugmentedSample augmented_sample_from_json(const nlohmann::json& j) {
  const int version = j.at("format_version").get<int>();
  if (version != kDatasetFormatVersion) {
    throw std::invalid_argument(fmt::format("unsupported dataset format_version {}", version));
  }
  AugmentedSample s;
  s.sample = sample_from_json(j.at("sample"));
  s.pseudo_gt.text = j.at("pseudo_gt").get<std::string>();
  s.reference = trajectory_from_json(j.at("reference"));
  s.rollout_accuracy = j.at("rollout_accuracy").get<double>();
  if (s.reference.prompt_ref != s.sample.sample_id) {
    throw std::invalid_argument("reference prompt_ref does not match sample " +
                                s.sample.sample_id);
  }
  return s;
}

void BuildConfig::validate() const {
  if (domains.empty()) throw std::invalid_argument("build: no domains");
  std::set<std::string> tags;
  for (const auto& d : domains) {
    if (d.tag.empty() || !tags.insert(d.tag).second) {
      throw std::invalid_argument("build: domain tags must be non-empty and unique");
    }
    if (d.templates.empty()) throw std::invalid_argument("build: domain without templates");
    if (d.pool_scenes < 1) throw std::invalid_argument("build: pool_scenes must be >= 1");
  }
  scene.validate();
  if (questions_per_scene < 1) throw std::invalid_argument("build: questions_per_scene < 1");
  if (per_domain_n < 1) throw std::invalid_argument("build: per_domain_n < 1");
  filter.validate();
  if (best_of_n < 1) throw std::invalid_argument("build: best_of_n < 1");
  if (holdout_size < 0) throw std::invalid_argument("build: holdout_size < 0");
  sampling.validate();
}

BuiltDataset build_dataset(const BuildConfig& cfg, const PolicyParams& base_policy,
                           Captioner& captioner, Judge& judge, FailurePolicy policy,
                           JudgeStats* stats) {
  cfg.validate();
  std::vector<DomainPool> pools;
  for (std::size_t d = 0; d < cfg.domains.size(); ++d) {
    pools.push_back(generate_pool(cfg.domains[d], cfg.scene, cfg.questions_per_scene,
                                  derive_seed(cfg.seed, {0x9001, d})));
  }
  const std::vector<Sample> sampled =
      balanced_sample(pools, cfg.per_domain_n, derive_seed(cfg.seed, {0x9002}));

  PolicyResponder responder(base_policy, cfg.sampling);
  const FilterResult filtered =
      learnability_filter(sampled, responder, cfg.filter, derive_seed(cfg.seed, {0x9003}));

  BuiltDataset out;
  CaptionCache captions(captioner);
  for (std::size_t i = 0; i < filtered.kept.size(); ++i) {
    const auto& [sample, acc] = filtered.kept[i];
    AugmentedSample a;
    a.sample = sample;
    a.pseudo_gt = captions.caption(sample.scene);
    a.reference = select_reference(sample, a.pseudo_gt, responder, cfg.best_of_n, judge,
                                   derive_seed(cfg.seed, {0x9004, i}), policy, stats);
    a.rollout_accuracy = acc;
    out.train.push_back(std::move(a));
  }
  out.holdout = build_holdout(cfg);

  // Manifest: per-domain and per-category accounting.
  struct Counts {
    int pool = 0, sampled = 0, kept = 0, too_hard = 0, too_easy = 0, unverifiable = 0;
  };
  std::map<std::string, Counts> by_domain;
  for (const auto& p : pools) by_domain[p.domain_tag].pool = static_cast<int>(p.samples.size());
  for (const auto& s : sampled) ++by_domain[s.domain_tag].sampled;
  for (const auto& k : filtered.kept) ++by_domain[k.sample.domain_tag].kept;
  for (const auto& r : filtered.rejected) {
    Counts& c = by_domain[r.sample.domain_tag];
    switch (r.reason) {
      case RejectReason::kTooHard: ++c.too_hard; break;
      case RejectReason::kTooEasy: ++c.too_easy; break;
      case RejectReason::kUnverifiable: ++c.unverifiable; break;
    }
  }
  nlohmann::json domains = nlohmann::json::array();
  std::map<std::string, int> category_kept;
  std::vector<std::string> category_order;
  for (const auto& spec : cfg.domains) {
    const Counts& c = by_domain[spec.tag];
    domains.push_back({{"tag", spec.tag},
                       {"category", spec.category},
                       {"pool", c.pool},
                       {"sampled", c.sampled},
                       {"kept", c.kept},
                       {"rejected",
                        {{"too_hard", c.too_hard},
                         {"too_easy", c.too_easy},
                         {"unverifiable", c.unverifiable}}}});
    if (!category_kept.contains(spec.category)) category_order.push_back(spec.category);
    category_kept[spec.category] += c.kept;
  }
  const int total_kept = static_cast<int>(filtered.kept.size());
  nlohmann::json categories = nlohmann::json::array();
  for (const auto& name : category_order) {
    const int kept = category_kept[name];
    categories.push_back(
        {{"category", name},
         {"kept", kept},
         {"share", total_kept > 0 ? static_cast<double>(kept) / total_kept : 0.0}});
  }
  out.manifest = {{"format_version", kDatasetFormatVersion},
                  {"seed", cfg.seed},
                  {"domains", domains},
                  {"categories", categories},
                  {"total",
                   {{"sampled", sampled.size()},
                    {"kept", total_kept},
                    {"rejected", filtered.rejected.size()}}},
                  {"holdout", out.holdout.size()},
                  {"captions_generated", captions.generated()},
                  {"best_of_n", cfg.best_of_n}};
  return out;
}

std::vector<Sample> build_holdout(const BuildConfig& cfg) {
  cfg.validate();
  std::vector<Sample> out;
  if (cfg.holdout_size == 0) return out;
  const std::size_t n_domains = cfg.domains.size();
  const int per_domain =
      static_cast<int>((static_cast<std::size_t>(cfg.holdout_size) + n_domains - 1) / n_domains);
  std::vector<std::vector<Sample>> per;
  for (std::size_t d = 0; d < n_domains; ++d) {
    DomainSpec spec = cfg.domains[d];
    // Some templates do not apply to every scene; over-generate.
    spec.pool_scenes = 2 * per_domain;
    DomainPool pool = generate_pool(spec, cfg.scene, 1, derive_seed(cfg.seed, {0x40, d}));
    for (auto& s : pool.samples) s.sample_id = "holdout-" + s.sample_id;
    per.push_back(std::move(pool.samples));
  }
  // Round-robin across domains so any prefix stays balanced.
  for (std::size_t i = 0; out.size() < static_cast<std::size_t>(cfg.holdout_size); ++i) {
    bool any = false;
    for (auto& v : per) {
      if (i < v.size() && out.size() < static_cast<std::size_t>(cfg.holdout_size)) {
        out.push_back(v[i]);
        any = true;
      }
    }
    if (!any) break;
  }
  return out;
}

}  // namespace palmr
