#include "palmr/judge.hpp"

#include <regex>

#include <fmt/format.h>

#include "palmr/rng.hpp"

namespace palmr {

const ParsedTrajectory& PairwiseQuery::slot_a() const {
  return presentation == Presentation::kTargetFirst ? target : reference;
}

const ParsedTrajectory& PairwiseQuery::slot_b() const {
  return presentation == Presentation::kTargetFirst ? reference : target;
}

std::string_view slot_name(Slot slot) { return slot == Slot::kA ? "A" : "B"; }

FidelityProfile fidelity_profile(const ClaimSet& claims, const FactSet& facts) {
  FidelityProfile p;
  for (const VisualClaim& claim : claims.claims) {
    const auto value = facts.find(claim.key);
    if (!value) {
      ++p.unverifiable;
    } else if (*value == claim.value) {
      ++p.verified;
    } else {
      ++p.contradicted;
    }
  }
  return p;
}

bool at_least_as_faithful(const FidelityProfile& a, bool a_well_formed,
                          const FidelityProfile& b, bool b_well_formed) {
  if (a.contradicted != b.contradicted) return a.contradicted < b.contradicted;
  if (a.verified != b.verified) return a.verified > b.verified;
  if (a_well_formed != b_well_formed) return a_well_formed;
  return true;
}

namespace {

FactSet parse_pseudo_gt(const StructuredCaption& caption) {
  try {
    return parse_caption(caption);
  } catch (const CaptionParseError& e) {
    throw JudgeConfigError(fmt::format("pseudo ground truth does not parse: {}", e.what()));
  }
}

Verdict decide(const PairwiseQuery& q, const FactSet& facts) {
  const FidelityProfile target = fidelity_profile(q.target.claims, facts);
  const FidelityProfile reference = fidelity_profile(q.reference.claims, facts);
  const bool target_wins =
      at_least_as_faithful(target, q.target.well_formed, reference, q.reference.well_formed);
  const bool target_in_a = q.presentation == Presentation::kTargetFirst;
  return {target_wins == target_in_a ? Slot::kA : Slot::kB, std::nullopt};
}

}  // namespace

Verdict oracle_compare(const PairwiseQuery& query) {
  return decide(query, parse_pseudo_gt(query.pseudo_gt));
}

const FactSet& OracleJudge::facts_for(const StructuredCaption& caption) {
  std::lock_guard lock(mutex_);
  auto it = cache_.find(caption.text);
  if (it == cache_.end()) it = cache_.emplace(caption.text, parse_pseudo_gt(caption)).first;
  return it->second;
}

Verdict OracleJudge::compare(const PairwiseQuery& query) {
  return decide(query, facts_for(query.pseudo_gt));
}

std::string strip_think(std::string_view text, const ThinkMarkers& markers) {
  std::string out(text);
  if (markers.open.empty() || markers.close.empty()) return out;
  while (true) {
    const auto open = out.find(markers.open);
    if (open != std::string::npos) {
      const auto close = out.find(markers.close, open + markers.open.size());
      if (close != std::string::npos) {
        out.erase(open, close + markers.close.size() - open);
      } else {
        out.erase(open, markers.open.size());
      }
      continue;
    }
    const auto close = out.find(markers.close);
    if (close == std::string::npos) break;
    out.erase(close, markers.close.size());
  }
  return out;
}

namespace {

std::vector<std::regex> compile_all(const std::vector<std::string>& patterns) {
  std::vector<std::regex> out;
  out.reserve(patterns.size());
  for (const auto& p : patterns) out.emplace_back(p);
  return out;
}

// Start offset of the last match of any pattern, or -1.
std::ptrdiff_t last_match(const std::string& text, const std::vector<std::regex>& patterns) {
  std::ptrdiff_t best = -1;
  for (const auto& re : patterns) {
    for (auto it = std::sregex_iterator(text.begin(), text.end(), re);
         it != std::sregex_iterator(); ++it) {
      best = std::max(best, it->position(0));
    }
  }
  return best;
}

}  // namespace

std::optional<Verdict> try_extract_verdict(std::string_view text,
                                           const VerdictPatterns& patterns) {
  const std::string s(text);
  const std::ptrdiff_t a = last_match(s, compile_all(patterns.slot_a));
  const std::ptrdiff_t b = last_match(s, compile_all(patterns.slot_b));
  if (a < 0 && b < 0) return std::nullopt;
  return Verdict{a > b ? Slot::kA : Slot::kB, s};
}

Verdict extract_verdict(std::string_view text, const VerdictPatterns& patterns) {
  auto v = try_extract_verdict(text, patterns);
  if (!v) throw VerdictExtractionError("no verdict candidate in judge output");
  return *v;
}

bool target_preferred(Judge& judge, PairwiseQuery query, Presentation presentation) {
  query.presentation = presentation;
  const Verdict v = judge.compare(query);
  const Slot target_slot = presentation == Presentation::kTargetFirst ? Slot::kA : Slot::kB;
  return v.preferred == target_slot;
}

Presentation presentation_for_seed(std::uint64_t seed) {
  return Rng(derive_seed(seed, {0x5107})).coin() ? Presentation::kReferenceFirst
                                                  : Presentation::kTargetFirst;
}

bool shuffle_and_map(Judge& judge, const PairwiseQuery& query, std::uint64_t seed) {
  return target_preferred(judge, query, presentation_for_seed(seed));
}

std::vector<JudgeOutcome> Judge::compare_many(const std::vector<PairwiseQuery>& queries) {
  std::vector<JudgeOutcome> out(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    try {
      out[i].verdict = compare(queries[i]);
    } catch (...) {
      out[i].error = std::current_exception();
    }
  }
  return out;
}

std::vector<int> pairwise_scores(Judge& judge, std::vector<PairwiseQuery> queries,
                                 const std::vector<std::uint64_t>& seeds, FailurePolicy policy,
                                 JudgeStats* stats) {
  if (seeds.size() != queries.size()) {
    throw std::invalid_argument("pairwise_scores: one seed per query required");
  }
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (queries[i].target.raw.prompt_ref != queries[i].reference.raw.prompt_ref) {
      throw std::invalid_argument(
          "pairwise_score: target and reference answer different samples");
    }
    queries[i].presentation = presentation_for_seed(seeds[i]);
  }
  const std::vector<JudgeOutcome> outcomes = judge.compare_many(queries);
  std::vector<int> scores(queries.size(), 0);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (stats) ++stats->comparisons;
    try {
      if (outcomes[i].error) std::rethrow_exception(outcomes[i].error);
      const Slot target_slot =
          queries[i].presentation == Presentation::kTargetFirst ? Slot::kA : Slot::kB;
      scores[i] = outcomes[i].verdict->preferred == target_slot ? 1 : 0;
    } catch (const VerdictExtractionError&) {
      if (stats) ++stats->extraction_failures;
    } catch (const JudgeEndpointError&) {
      if (stats) ++stats->endpoint_failures;
      if (policy == FailurePolicy::kFailRun) throw;
    }
  }
  return scores;
}

int pairwise_score(Judge& judge, const PairwiseQuery& query, std::uint64_t seed,
                   FailurePolicy policy, JudgeStats* stats) {
  return pairwise_scores(judge, {query}, {seed}, policy, stats).front();
}

}  // namespace palmr
