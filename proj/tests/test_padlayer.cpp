#include <map>
#include <set>

#include "doctest.h"
#include "palmr/padlayer.hpp"
#include "palmr/rng.hpp"

using namespace palmr;

namespace {

Trajectory answer_only(const Sample& s, TokenId answer) {
  Trajectory t;
  t.tokens = {kThinkOpenToken, kThinkCloseToken, answer, kEndToken};
  t.old_logprobs.assign(t.tokens.size(), 0.0);
  t.prompt_ref = s.sample_id;
  return t;
}

TokenId wrong_answer(const Sample& s) {
  const TokenId right = *answer_token(canonical_answer(s.question.gold_answer));
  for (TokenId c : answer_candidates(s.question)) {
    if (c != right) return c;
  }
  throw std::logic_error("no wrong answer available");
}

// Answers sample i correctly on the first round(accuracy[i] * K) rollouts.
class RiggedResponder : public Responder {
 public:
  RiggedResponder(std::map<std::string, double> accuracy, int k)
      : accuracy_(std::move(accuracy)), k_(k) {}
  Trajectory rollout(const Sample& s, int index, std::uint64_t) override {
    const int correct = static_cast<int>(std::lround(accuracy_.at(s.sample_id) * k_));
    const TokenId right = *answer_token(canonical_answer(s.question.gold_answer));
    return answer_only(s, index < correct ? right : wrong_answer(s));
  }

 private:
  std::map<std::string, double> accuracy_;
  int k_;
};

class CountingCaptioner : public Captioner {
 public:
  StructuredCaption caption(const Scene& scene) override {
    ++calls;
    return render_pseudo_gt(scene);
  }
  int calls = 0;
};

std::vector<Sample> some_samples(int n, std::uint64_t seed) {
  DomainSpec spec{"d", "c", {QuestionTemplate::kCount}, n};
  auto pool = generate_pool(spec, SceneConfig{}, 1, seed).samples;
  pool.resize(static_cast<std::size_t>(n));
  return pool;
}

}  // namespace

TEST_CASE("domain pools are deterministic and tagged") {
  const auto domains = default_domains();
  std::set<std::string> tags;
  for (const auto& d : domains) {
    CHECK(tags.insert(d.tag).second);
    CHECK_FALSE(d.templates.empty());
  }
  const DomainPool a = generate_pool(domains[5], SceneConfig{}, 2, 9);
  const DomainPool b = generate_pool(domains[5], SceneConfig{}, 2, 9);
  CHECK(a.samples == b.samples);
  CHECK(a.samples.size() > 0);
  std::set<std::string> ids;
  for (const auto& s : a.samples) {
    CHECK(s.domain_tag == domains[5].tag);
    CHECK(ids.insert(s.sample_id).second);
    const auto& allowed = domains[5].templates;
    CHECK(std::find(allowed.begin(), allowed.end(), s.question.template_id) != allowed.end());
  }
}

TEST_CASE("balanced_sample takes min(n, |pool|) per domain") {
  std::vector<DomainPool> pools;
  for (int d = 0; d < 3; ++d) {
    DomainSpec spec{"d" + std::to_string(d), "c", {QuestionTemplate::kCount}, 10 * (d + 1)};
    pools.push_back(generate_pool(spec, SceneConfig{}, 1, 100 + d));
  }
  const auto picked = balanced_sample(pools, 15, 5);
  std::map<std::string, int> per;
  for (const auto& s : picked) ++per[s.domain_tag];
  CHECK(per["d0"] == std::min<int>(15, pools[0].samples.size()));
  CHECK(per["d1"] == 15);
  CHECK(per["d2"] == 15);
  CHECK(balanced_sample(pools, 15, 5) == picked);
  CHECK(balanced_sample(pools, 15, 6) != picked);

  // Every pool member is equally likely to be chosen.
  std::vector<int> hits(pools[2].samples.size(), 0);
  const int trials = 2000;
  for (int t = 0; t < trials; ++t) {
    for (const auto& s : balanced_sample({pools[2]}, 15, 1000 + t)) {
      for (std::size_t i = 0; i < hits.size(); ++i) hits[i] += pools[2].samples[i] == s;
    }
  }
  const double p = 15.0 / static_cast<double>(hits.size());
  const double sigma = std::sqrt(trials * p * (1 - p));
  for (int h : hits) CHECK(std::abs(h - trials * p) <= 5 * sigma);
}

TEST_CASE("learnability filter keeps only samples inside the bounds") {
  const auto samples = some_samples(8, 3);
  const std::vector<double> planted = {0.0, 0.25, 0.5, 1.0, 0.0, 0.25, 0.5, 1.0};
  std::map<std::string, double> acc;
  for (std::size_t i = 0; i < samples.size(); ++i) acc[samples[i].sample_id] = planted[i];
  RiggedResponder rigged(acc, 8);
  const FilterResult r = learnability_filter(samples, rigged, FilterConfig{}, 1);
  REQUIRE(r.kept.size() == 4);
  for (const auto& k : r.kept) {
    CHECK((k.rollout_accuracy == 0.25 || k.rollout_accuracy == 0.5));
    CHECK(acc[k.sample.sample_id] == k.rollout_accuracy);
  }
  int hard = 0, easy = 0;
  for (const auto& j : r.rejected) {
    hard += j.reason == RejectReason::kTooHard;
    easy += j.reason == RejectReason::kTooEasy;
  }
  CHECK(hard == 2);
  CHECK(easy == 2);

  Sample odd = samples[0];
  odd.question.gold_answer = "maybe";
  CHECK_FALSE(is_rule_checkable(odd.question));
  const FilterResult u = learnability_filter({odd}, rigged, FilterConfig{}, 1);
  REQUIRE(u.rejected.size() == 1);
  CHECK(u.rejected[0].reason == RejectReason::kUnverifiable);

  FilterConfig bad;
  bad.min_accuracy = 0.95;
  CHECK_THROWS_AS(learnability_filter(samples, rigged, bad, 1), std::invalid_argument);
}

TEST_CASE("captions are generated once per scene") {
  DomainSpec spec{"d", "c", {QuestionTemplate::kCount, QuestionTemplate::kAttributeLookup}, 20};
  const auto pool = generate_pool(spec, SceneConfig{}, 3, 4).samples;
  std::set<std::string> scenes;
  for (const auto& s : pool) scenes.insert(s.scene.scene_id);
  REQUIRE(pool.size() > scenes.size());
  CountingCaptioner counting;
  CaptionCache cache(counting);
  for (const auto& s : pool) CHECK(cache.caption(s.scene) == render_pseudo_gt(s.scene));
  CHECK(counting.calls == static_cast<int>(scenes.size()));
  CHECK(cache.generated() == static_cast<int>(scenes.size()));
  CHECK(attach_pseudo_gt(pool[0], counting) == render_pseudo_gt(pool[0].scene));
}

TEST_CASE("noisy oracle captioner misreports colors only") {
  const Scene scene = generate_scene(77, SceneConfig{2, 4, 4});
  CHECK(OracleCaptioner(0.0).caption(scene) == render_pseudo_gt(scene));
  const FactSet truth = enumerate_facts(scene);
  const FactSet noisy = parse_caption(OracleCaptioner(1.0).caption(scene));
  int changed = 0;
  const int color = static_cast<int>(AttributeKind::kColor);
  for (const auto& f : truth.facts()) {
    const auto v = noisy.find(f.key);
    REQUIRE(v.has_value());
    if (*v == f.value) continue;
    // Only facts that depend on colors may differ.
    const bool color_dependent =
        (f.key.predicate == Predicate::kAttributeOf && f.key.b == color) ||
        (f.key.predicate == Predicate::kCountByAttribute && f.key.a == color) ||
        f.key.predicate == Predicate::kHasObject;
    CHECK(color_dependent);
    changed += f.key.predicate == Predicate::kAttributeOf;
  }
  CHECK(changed == 4);
  CHECK_THROWS_AS(OracleCaptioner(1.5), std::invalid_argument);
}

TEST_CASE("select_reference returns an undominated candidate") {
  const PolicyParams prior = base_prior_params(PriorConfig{});
  PolicyResponder responder(prior, SamplingConfig{});
  OracleJudge judge;
  for (const auto& s : some_samples(30, 8)) {
    const StructuredCaption gt = render_pseudo_gt(s.scene);
    const Trajectory best = select_reference(s, gt, responder, 8, judge, 21);
    const ParsedTrajectory pb = parse(best);
    const FactSet facts = enumerate_facts(s.scene);
    bool found = false;
    for (int k = 0; k < 8; ++k) {
      const Trajectory c = responder.rollout(s, k, derive_seed(21, {static_cast<std::uint64_t>(k)}));
      found |= c == best;
      const ParsedTrajectory pc = parse(c);
      const FidelityProfile fb = fidelity_profile(pb.claims, facts);
      const FidelityProfile fc = fidelity_profile(pc.claims, facts);
      CHECK(at_least_as_faithful(fb, pb.well_formed, fc, pc.well_formed));
    }
    CHECK(found);
  }
  CHECK_THROWS_AS(select_reference(some_samples(1, 1)[0], {}, responder, 0, judge, 1),
                  std::invalid_argument);
}

TEST_CASE("augmented sample JSON round-trip") {
  const Sample s = some_samples(1, 2)[0];
  AugmentedSample a{s, render_pseudo_gt(s.scene), answer_only(s, wrong_answer(s)), 0.375};
  const AugmentedSample back = augmented_sample_from_json(to_json(a));
  CHECK(back.sample == a.sample);
  CHECK(back.pseudo_gt == a.pseudo_gt);
  CHECK(back.reference == a.reference);
  CHECK(back.rollout_accuracy == a.rollout_accuracy);

  auto j = to_json(a);
  j["reference"]["prompt_ref"] = "other";
  CHECK_THROWS_AS(augmented_sample_from_json(j), std::invalid_argument);
  j = to_json(a);
  j["format_version"] = 99;
  CHECK_THROWS_AS(augmented_sample_from_json(j), std::invalid_argument);
}

TEST_CASE("build_dataset: manifest conserves totals and runs are reproducible") {
  BuildConfig cfg;
  for (auto& d : cfg.domains) d.pool_scenes = 20;
  cfg.per_domain_n = 12;
  cfg.holdout_size = 30;
  cfg.seed = 3;
  const PolicyParams prior = base_prior_params(PriorConfig{});
  OracleCaptioner captioner;
  OracleJudge judge;
  const BuiltDataset a = build_dataset(cfg, prior, captioner, judge);
  const BuiltDataset b = build_dataset(cfg, prior, captioner, judge);
  CHECK(a.manifest == b.manifest);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(to_json(a.train[i]) == to_json(b.train[i]));

  const auto& m = a.manifest;
  int sampled = 0, kept = 0, rejected = 0;
  for (const auto& d : m.at("domains")) {
    const auto& r = d.at("rejected");
    const int rej = r.at("too_hard").get<int>() + r.at("too_easy").get<int>() +
                    r.at("unverifiable").get<int>();
    CHECK(d.at("sampled").get<int>() == d.at("kept").get<int>() + rej);
    CHECK(d.at("sampled").get<int>() <= cfg.per_domain_n);
    sampled += d.at("sampled").get<int>();
    kept += d.at("kept").get<int>();
    rejected += rej;
  }
  CHECK(m.at("total").at("sampled") == sampled);
  CHECK(m.at("total").at("kept") == kept);
  CHECK(m.at("total").at("rejected") == rejected);
  CHECK(kept == static_cast<int>(a.train.size()));
  double share = 0;
  int category_kept = 0;
  for (const auto& c : m.at("categories")) {
    share += c.at("share").get<double>();
    category_kept += c.at("kept").get<int>();
  }
  CHECK(share == doctest::Approx(1.0));
  CHECK(category_kept == kept);

  for (const auto& t : a.train) {
    CHECK(t.reference.prompt_ref == t.sample.sample_id);
    CHECK(t.pseudo_gt == render_pseudo_gt(t.sample.scene));
    CHECK(t.rollout_accuracy >= cfg.filter.min_accuracy);
    CHECK(t.rollout_accuracy <= cfg.filter.max_accuracy);
  }
  // The holdout is balanced, exactly sized and shares no scene with training.
  CHECK(a.holdout.size() == 30);
  std::set<std::string> train_scenes;
  for (const auto& t : a.train) train_scenes.insert(t.sample.scene.scene_id);
  for (const auto& h : a.holdout) CHECK_FALSE(train_scenes.contains(h.scene.scene_id));

  BuildConfig bad = cfg;
  bad.domains.push_back(bad.domains[0]);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
