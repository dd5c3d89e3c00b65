#include "palmr/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>

#include "palmr/rng.hpp"

namespace palmr {

void SamplingConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("sampling: temperature must be positive");
  }
  if (max_len < 1) throw std::invalid_argument("sampling: max_len must be positive");
}

int ContextFeature::index() const {
  return ((static_cast<int>(template_id) * kNumPositionBuckets + bucket) * kNumPrevClasses +
          static_cast<int>(prev)) *
             kNumPercepts +
         percept;
}

ContextFeature ContextFeature::from_index(int index) {
  if (index < 0 || index >= kNumContexts) {
    throw std::invalid_argument("context index out of range");
  }
  ContextFeature c;
  c.percept = index % kNumPercepts;
  index /= kNumPercepts;
  c.prev = static_cast<PrevClass>(index % kNumPrevClasses);
  index /= kNumPrevClasses;
  c.bucket = index % kNumPositionBuckets;
  c.template_id = static_cast<QuestionTemplate>(index / kNumPositionBuckets);
  return c;
}

PrevClass prev_class(std::optional<TokenId> prev) {
  if (!prev) return PrevClass::kNone;
  switch (token_class(*prev)) {
    case TokenClass::kThinkOpen: return PrevClass::kThinkOpen;
    case TokenClass::kThinkClose: return PrevClass::kThinkClose;
    case TokenClass::kClaim: return PrevClass::kClaim;
    case TokenClass::kAnswer: return PrevClass::kAnswer;
    case TokenClass::kEnd: return PrevClass::kEnd;
    case TokenClass::kUnknown: break;
  }
  return PrevClass::kNone;
}

namespace {

int count_matching(const Scene& scene, AttributeKind kind, int value) {
  return static_cast<int>(std::count_if(
      scene.objects.begin(), scene.objects.end(),
      [&](const Object& o) { return o.value_of(kind) == value; }));
}

const Object* find_object(const Scene& scene, int id) {
  for (const Object& o : scene.objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

int read_answer_percept(const Sample& sample) {
  const Scene& scene = sample.scene;
  const auto& p = sample.question.params;
  switch (sample.question.template_id) {
    case QuestionTemplate::kCount:
      return count_matching(scene, static_cast<AttributeKind>(p[0]), p[1]);
    case QuestionTemplate::kAttributeLookup: {
      const Object* o = find_object(scene, p[0]);
      return o ? o->value_of(static_cast<AttributeKind>(p[1])) : 0;
    }
    case QuestionTemplate::kComparison: {
      const auto kind = static_cast<AttributeKind>(p[0]);
      const int a = count_matching(scene, kind, p[1]);
      const int b = count_matching(scene, kind, p[2]);
      return a < b ? 0 : (a == b ? 1 : 2);
    }
    case QuestionTemplate::kRelation: {
      const Object* oi = find_object(scene, p[1]);
      const Object* oj = find_object(scene, p[2]);
      if (!oi || !oj) return 0;
      return p[0] == 0 ? (oi->position.col < oj->position.col ? 1 : 0)
                       : (oi->position.row < oj->position.row ? 1 : 0);
    }
  }
  return 0;
}

bool in_think(PrevClass prev) {
  return prev == PrevClass::kThinkOpen || prev == PrevClass::kClaim;
}

}  // namespace

Perception Perception::of(const Sample& sample) {
  Perception out;
  out.template_id = sample.question.template_id;
  out.num_objects = static_cast<int>(sample.scene.objects.size());
  out.object_percepts.fill(kAbsentPercept);
  for (const Object& o : sample.scene.objects) {
    if (o.id < 0 || o.id >= kMaxObjectsLimit) continue;
    out.object_percepts[static_cast<std::size_t>(o.id)] =
        (static_cast<int>(o.shape) * kNumColors + static_cast<int>(o.color)) * kNumSizes +
        static_cast<int>(o.size);
  }
  out.answer_percept = read_answer_percept(sample);
  out.answer_candidates = palmr::answer_candidates(sample.question);
  return out;
}

ContextFeature context_of(const Perception& perception, int position,
                          std::optional<TokenId> prev) {
  ContextFeature c;
  c.template_id = perception.template_id;
  c.prev = prev_class(prev);
  if (in_think(c.prev)) {
    c.bucket = std::clamp(position, 0, kNumPositionBuckets - 1);
    const int gaze = position - 1;
    c.percept = gaze >= 0 && gaze < kMaxObjectsLimit
                    ? perception.object_percepts[static_cast<std::size_t>(gaze)]
                    : kAbsentPercept;
  } else if (c.prev == PrevClass::kThinkClose) {
    c.percept = perception.answer_percept;
  }
  return c;
}

ContextFeature context_of(const Sample& prompt, int position, std::optional<TokenId> prev) {
  return context_of(Perception::of(prompt), position, prev);
}

std::vector<TokenId> legal_tokens(const Perception& perception, int position,
                                  std::optional<TokenId> prev) {
  std::vector<TokenId> out;
  switch (prev_class(prev)) {
    case PrevClass::kNone:
      out.push_back(kThinkOpenToken);
      out.insert(out.end(), perception.answer_candidates.begin(),
                 perception.answer_candidates.end());
      break;
    case PrevClass::kThinkOpen:
    case PrevClass::kClaim: {
      const int gaze = position - 1;
      if (gaze >= 0 && gaze < kMaxObjectsLimit) {
        for (int cls = 0; cls < kNumAttributeClasses; ++cls) {
          out.push_back(claim_token(gaze, class_kind(cls), class_value(cls)));
        }
      }
      out.push_back(kThinkCloseToken);
      break;
    }
    case PrevClass::kThinkClose:
      out = perception.answer_candidates;
      break;
    case PrevClass::kAnswer:
    case PrevClass::kEnd:
      out.push_back(kEndToken);
      break;
  }
  return out;
}

PolicyParams::PolicyParams()
    : logits_(static_cast<std::size_t>(kNumContexts) * kVocabSize, 0.0) {}

std::size_t PolicyParams::offset(int context, TokenId token) {
  return static_cast<std::size_t>(context) * kVocabSize + static_cast<std::size_t>(token);
}

std::span<double> PolicyParams::row(int context) {
  return {logits_.data() + offset(context, 0), static_cast<std::size_t>(kVocabSize)};
}

std::span<const double> PolicyParams::row(int context) const {
  return {logits_.data() + offset(context, 0), static_cast<std::size_t>(kVocabSize)};
}

void PolicyParams::validate() const {
  for (double v : logits_) {
    if (!std::isfinite(v)) throw std::invalid_argument("policy params: non-finite logit");
  }
}

std::uint64_t policy_schema_hash() {
  // FNV-1a over a description of the layout.
  const std::string schema = fmt::format(
      "palmr-policy/v1 templates={} buckets={} prev={} percepts={} vocab={} "
      "answers={} claims={}",
      kNumTemplates, kNumPositionBuckets, kNumPrevClasses, kNumPercepts, kVocabSize,
      kNumAnswerTokens, kNumClaimTokens);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : schema) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

constexpr char kMagic[8] = {'P', 'L', 'M', 'R', 'P', 'O', 'L', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return v;
}

}  // namespace

void save_params(const PolicyParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, policy_schema_hash());
  write_pod(out, static_cast<std::uint32_t>(kNumContexts));
  write_pod(out, static_cast<std::uint32_t>(kVocabSize));
  const auto& data = params.data();
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

PolicyParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a policy checkpoint: " + path.string());
  }
  if (read_pod<std::uint64_t>(in) != policy_schema_hash()) {
    throw std::runtime_error("checkpoint schema hash mismatch: " + path.string());
  }
  const auto contexts = read_pod<std::uint32_t>(in);
  const auto vocab = read_pod<std::uint32_t>(in);
  if (contexts != static_cast<std::uint32_t>(kNumContexts) ||
      vocab != static_cast<std::uint32_t>(kVocabSize)) {
    throw std::runtime_error("checkpoint dimensions mismatch: " + path.string());
  }
  PolicyParams params;
  auto& data = params.data();
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint truncated: " + path.string());
  params.validate();
  return params;
}

PolicyParams base_prior_params(const PriorConfig& cfg) {
  PolicyParams params;
  for (int t = 0; t < kNumTemplates; ++t) {
    const auto tmpl = static_cast<QuestionTemplate>(t);
    for (int b = 0; b < kNumPositionBuckets; ++b) {
      for (int p = 0; p < kNumPercepts; ++p) {
        params.at(ContextFeature{tmpl, b, PrevClass::kNone, p}.index(), kThinkOpenToken) +=
            cfg.open_bias;

        for (PrevClass prev : {PrevClass::kThinkOpen, PrevClass::kClaim}) {
          const int ctx = ContextFeature{tmpl, b, prev, p}.index();
          params.at(ctx, kThinkCloseToken) += cfg.close_bias;
          if (p == kAbsentPercept) {
            params.at(ctx, kThinkCloseToken) += cfg.close_no_object_bias;
            continue;
          }
          const int gaze = b - 1;
          if (gaze < 0 || gaze >= kMaxObjectsLimit) continue;
          const int shape = p / (kNumColors * kNumSizes);
          const int color = (p / kNumSizes) % kNumColors;
          const int size = p % kNumSizes;
          params.at(ctx, claim_token(gaze, AttributeKind::kShape, shape)) += cfg.perceive_bias;
          params.at(ctx, claim_token(gaze, AttributeKind::kColor, color)) += cfg.perceive_bias;
          params.at(ctx, claim_token(gaze, AttributeKind::kSize, size)) += cfg.perceive_bias;
        }

        // Read the answer off the percept; the grammar mask keeps only the
        // candidates of the asked attribute kind.
        const int ctx = ContextFeature{tmpl, b, PrevClass::kThinkClose, p}.index();
        std::vector<std::string> answers;
        switch (tmpl) {
          case QuestionTemplate::kCount:
            if (p <= kMaxObjectsLimit) answers.push_back(std::to_string(p));
            break;
          case QuestionTemplate::kAttributeLookup:
            for (int k = 0; k < kNumAttributeKinds; ++k) {
              const auto kind = static_cast<AttributeKind>(k);
              if (p < num_values(kind)) answers.emplace_back(value_name(kind, p));
            }
            break;
          case QuestionTemplate::kComparison:
            answers.emplace_back(p == 2 ? "yes" : "no");
            break;
          case QuestionTemplate::kRelation:
            answers.emplace_back(p == 1 ? "yes" : "no");
            break;
        }
        for (const auto& a : answers) params.at(ctx, *answer_token(a)) += cfg.answer_bias;
      }
    }
  }
  return params;
}

namespace {

// Log-softmax of logits/temperature restricted to the legal set.
struct StepDistribution {
  std::vector<TokenId> legal;
  std::vector<double> logp;  // aligned with legal
};

StepDistribution step_distribution(const PolicyParams& params, const Perception& perception,
                                   int position, std::optional<TokenId> prev,
                                   double temperature, int* context_out = nullptr) {
  StepDistribution d;
  d.legal = legal_tokens(perception, position, prev);
  const int ctx = context_of(perception, position, prev).index();
  if (context_out) *context_out = ctx;
  const auto row = params.row(ctx);
  d.logp.resize(d.legal.size());
  double max_z = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < d.legal.size(); ++k) {
    d.logp[k] = row[static_cast<std::size_t>(d.legal[k])] / temperature;
    max_z = std::max(max_z, d.logp[k]);
  }
  double sum = 0.0;
  for (double z : d.logp) sum += std::exp(z - max_z);
  const double log_norm = max_z + std::log(sum);
  for (double& z : d.logp) z -= log_norm;
  return d;
}

template <typename Pick>
Trajectory decode_with(const PolicyParams& params, const Sample& prompt,
                       const SamplingConfig& cfg, Pick&& pick) {
  cfg.validate();
  const Perception perception = Perception::of(prompt);
  Trajectory traj;
  traj.prompt_ref = prompt.sample_id;
  std::optional<TokenId> prev;
  for (int pos = 0; pos < cfg.max_len; ++pos) {
    const StepDistribution d = step_distribution(params, perception, pos, prev, cfg.temperature);
    const std::size_t k = pick(d);
    traj.tokens.push_back(d.legal[k]);
    traj.old_logprobs.push_back(d.logp[k]);
    prev = d.legal[k];
    if (*prev == kEndToken) break;
  }
  return traj;
}

}  // namespace

Trajectory sample_trajectory(const PolicyParams& params, const Sample& prompt,
                             const SamplingConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return decode_with(params, prompt, cfg, [&](const StepDistribution& d) {
    const double u = rng.uniform();
    double cum = 0.0;
    for (std::size_t k = 0; k < d.logp.size(); ++k) {
      cum += std::exp(d.logp[k]);
      if (u < cum) return k;
    }
    return d.logp.size() - 1;
  });
}

Trajectory greedy_trajectory(const PolicyParams& params, const Sample& prompt,
                             const SamplingConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return decode_with(params, prompt, cfg, [&](const StepDistribution& d) {
    const double best = *std::max_element(d.logp.begin(), d.logp.end());
    std::vector<std::size_t> ties;
    for (std::size_t k = 0; k < d.logp.size(); ++k) {
      if (d.logp[k] == best) ties.push_back(k);
    }
    return ties.size() == 1 ? ties[0] : ties[rng.below(ties.size())];
  });
}

namespace {

std::size_t legal_index(const StepDistribution& d, TokenId token, int position) {
  if (!is_known_token(token)) {
    throw std::invalid_argument(fmt::format("unknown token id {} at position {}", token, position));
  }
  const auto it = std::find(d.legal.begin(), d.legal.end(), token);
  if (it == d.legal.end()) {
    throw std::invalid_argument(
        fmt::format("token {} not allowed at position {}", token_text(token), position));
  }
  return static_cast<std::size_t>(it - d.legal.begin());
}

}  // namespace

std::vector<double> logprob(const PolicyParams& params, const Sample& prompt,
                            std::span<const TokenId> tokens, double temperature) {
  const Perception perception = Perception::of(prompt);
  std::vector<double> out;
  out.reserve(tokens.size());
  std::optional<TokenId> prev;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const int pos = static_cast<int>(t);
    const StepDistribution d = step_distribution(params, perception, pos, prev, temperature);
    out.push_back(d.logp[legal_index(d, tokens[t], pos)]);
    prev = tokens[t];
  }
  return out;
}

void accumulate_grad_logprob(const PolicyParams& params, const Sample& prompt,
                             std::span<const TokenId> tokens, double temperature,
                             std::span<const double> weights, PolicyParams& grad) {
  if (weights.size() != tokens.size()) {
    throw std::invalid_argument("accumulate_grad_logprob: weights length mismatch");
  }
  const Perception perception = Perception::of(prompt);
  std::optional<TokenId> prev;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const int pos = static_cast<int>(t);
    int ctx = 0;
    const StepDistribution d =
        step_distribution(params, perception, pos, prev, temperature, &ctx);
    const std::size_t taken = legal_index(d, tokens[t], pos);
    prev = tokens[t];
    const double w = weights[t] / temperature;
    if (w == 0.0) continue;
    auto row = grad.row(ctx);
    for (std::size_t k = 0; k < d.legal.size(); ++k) {
      const double indicator = k == taken ? 1.0 : 0.0;
      row[static_cast<std::size_t>(d.legal[k])] += w * (indicator - std::exp(d.logp[k]));
    }
  }
}

PolicyParams grad_logprob(const PolicyParams& params, const Sample& prompt,
                          std::span<const TokenId> tokens, double temperature) {
  PolicyParams grad;
  const std::vector<double> ones(tokens.size(), 1.0);
  accumulate_grad_logprob(params, prompt, tokens, temperature, ones, grad);
  return grad;
}

}  // namespace palmr
