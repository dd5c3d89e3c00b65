#ifndef PALMR_PADLAYER_HPP_
#define PALMR_PADLAYER_HPP_

// Data curation: balanced domain sampling, learnability filtering, pseudo
// ground-truth captions and Best-of-N reference selection.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "palmr/judge.hpp"
#include "palmr/policy.hpp"
#include "palmr/remote_judge.hpp"
#include "palmr/scene.hpp"
#include "palmr/trajectory.hpp"

namespace palmr {

inline constexpr int kDatasetFormatVersion = 1;

struct DomainSpec {
  std::string tag;
  std::string category;
  std::vector<QuestionTemplate> templates;
  int pool_scenes = 200;
};

// A default set of synthetic domains grouped into categories.
std::vector<DomainSpec> default_domains();

struct DomainPool {
  std::string domain_tag;
  std::vector<Sample> samples;
};

// Generates pool_scenes scenes, each asked up to questions_per_scene
// questions drawn from the domain's templates.
DomainPool generate_pool(const DomainSpec& spec, const SceneConfig& scene_cfg,
                         int questions_per_scene, std::uint64_t seed);

// min(per_domain_n, |pool|) samples per pool, uniformly without replacement.
std::vector<Sample> balanced_sample(const std::vector<DomainPool>& pools, int per_domain_n,
                                    std::uint64_t seed);

struct FilterConfig {
  int rollouts_per_sample = 8;
  double min_accuracy = 0.1;
  double max_accuracy = 0.9;

  // Throws std::invalid_argument.
  void validate() const;
};

enum class RejectReason : std::uint8_t { kTooHard, kTooEasy, kUnverifiable };
std::string_view reject_reason_name(RejectReason r);

// Source of stochastic answers to a sample.
class Responder {
 public:
  virtual ~Responder() = default;
  virtual Trajectory rollout(const Sample& sample, int index, std::uint64_t seed) = 0;
};

class PolicyResponder : public Responder {
 public:
  PolicyResponder(const PolicyParams& params, SamplingConfig cfg);
  Trajectory rollout(const Sample& sample, int index, std::uint64_t seed) override;

 private:
  const PolicyParams& params_;
  SamplingConfig cfg_;
};

struct ScoredSample {
  Sample sample;
  double rollout_accuracy = 0.0;
};

struct Rejection {
  Sample sample;
  RejectReason reason = RejectReason::kTooHard;
  double rollout_accuracy = 0.0;
};

struct FilterResult {
  std::vector<ScoredSample> kept;
  std::vector<Rejection> rejected;
};

// Whether the gold answer can be produced and checked by the answer rules.
bool is_rule_checkable(const Question& question);

FilterResult learnability_filter(const std::vector<Sample>& samples, Responder& responder,
                                 const FilterConfig& cfg, std::uint64_t seed);

class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual StructuredCaption caption(const Scene& scene) = 0;
};

// Renders the exact pseudo ground truth. With noise_rate > 0 each object's
// color is misreported with that probability (seeded by the scene id).
class OracleCaptioner : public Captioner {
 public:
  explicit OracleCaptioner(double noise_rate = 0.0);
  StructuredCaption caption(const Scene& scene) override;

 private:
  double noise_rate_;
};

// Sends the caption prompt plus a textual scene description to a chat
// endpoint and stores the reply verbatim.
class RemoteCaptioner : public Captioner {
 public:
  RemoteCaptioner(EndpointConfig endpoint, std::string prompt);
  StructuredCaption caption(const Scene& scene) override;

 private:
  ChatClient client_;
  std::string prompt_;
};

std::string default_caption_prompt();

// One caption per scene, shared by every question asked about it.
class CaptionCache {
 public:
  explicit CaptionCache(Captioner& captioner) : captioner_(captioner) {}
  const StructuredCaption& caption(const Scene& scene);
  int generated() const { return generated_; }

 private:
  Captioner& captioner_;
  std::mutex mutex_;
  std::map<std::string, StructuredCaption> cache_;
  int generated_ = 0;
};

StructuredCaption attach_pseudo_gt(const Sample& sample, Captioner& captioner);

// Sequential single-elimination tournament over N rollouts: the champion
// meets each next candidate, and the judge's winner advances.
Trajectory select_reference(const Sample& sample, const StructuredCaption& pseudo_gt,
                            Responder& responder, int n, Judge& judge, std::uint64_t seed,
                            FailurePolicy policy = FailurePolicy::kScoreZeroAndLog,
                            JudgeStats* stats = nullptr);

struct AugmentedSample {
  Sample sample;
  StructuredCaption pseudo_gt;
  Trajectory reference;
  double rollout_accuracy = 0.0;
};

nlohmann::json to_json(const AugmentedSample& s);
AugmentedSample augmented_sample_from_json(const nlohmann::json& j);

struct BuildConfig {
  std::vector<DomainSpec> domains = default_domains();
  SceneConfig scene;
  int questions_per_scene = 2;
  int per_domain_n = 60;
  FilterConfig filter;
  int best_of_n = 4;
  int holdout_size = 200;
  SamplingConfig sampling;
  std::uint64_t seed = 1;

  void validate() const;
};

struct BuiltDataset {
  std::vector<AugmentedSample> train;
  std::vector<Sample> holdout;
  nlohmann::json manifest;
};

BuiltDataset build_dataset(const BuildConfig& cfg, const PolicyParams& base_policy,
                           Captioner& captioner, Judge& judge,
                           FailurePolicy policy = FailurePolicy::kScoreZeroAndLog,
                           JudgeStats* stats = nullptr);

// Fresh samples over all domains, disjoint from the training pools.
std::vector<Sample> build_holdout(const BuildConfig& cfg);

}  // namespace palmr

#endif  // PALMR_PADLAYER_HPP_
