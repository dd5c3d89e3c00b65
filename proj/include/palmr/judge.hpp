#ifndef PALMR_JUDGE_HPP_
#define PALMR_JUDGE_HPP_

// Pairwise visual-fidelity judging: the deterministic oracle, verdict text
// handling shared with the remote judge, and positional-bias shuffling.

#include <atomic>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "palmr/scene.hpp"
#include "palmr/trajectory.hpp"

namespace palmr {

enum class Presentation : std::uint8_t { kTargetFirst, kReferenceFirst };
enum class Slot : std::uint8_t { kA, kB };

struct PairwiseQuery {
  Question question;
  StructuredCaption pseudo_gt;
  ParsedTrajectory target;
  ParsedTrajectory reference;
  Presentation presentation = Presentation::kTargetFirst;

  const ParsedTrajectory& slot_a() const;
  const ParsedTrajectory& slot_b() const;
};

struct Verdict {
  Slot preferred = Slot::kA;
  std::optional<std::string> raw_text;
};

struct FidelityProfile {
  int verified = 0;
  int contradicted = 0;
  int unverifiable = 0;

  friend bool operator==(const FidelityProfile&, const FidelityProfile&) = default;
};

FidelityProfile fidelity_profile(const ClaimSet& claims, const FactSet& facts);

// True when (a, a_well_formed) is at least as good as (b, b_well_formed):
// fewer contradicted claims, then more verified ones, then well-formed over
// malformed. Exact ties return true.
bool at_least_as_faithful(const FidelityProfile& a, bool a_well_formed,
                          const FidelityProfile& b, bool b_well_formed);

// The pseudo ground truth cannot be parsed.
class JudgeConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// No verdict candidate in the judge's text.
class VerdictExtractionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The remote endpoint kept failing after all retries.
class JudgeEndpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Result of one comparison in a batch; error is set when it threw.
struct JudgeOutcome {
  std::optional<Verdict> verdict;
  std::exception_ptr error;
};

class Judge {
 public:
  virtual ~Judge() = default;
  // Returns the preferred slot for the query as presented.
  virtual Verdict compare(const PairwiseQuery& query) = 0;
  // Outcomes in query order. The default runs the queries one by one.
  virtual std::vector<JudgeOutcome> compare_many(const std::vector<PairwiseQuery>& queries);
};

class OracleJudge : public Judge {
 public:
  Verdict compare(const PairwiseQuery& query) override;

 private:
  const FactSet& facts_for(const StructuredCaption& caption);

  std::mutex mutex_;
  std::map<std::string, FactSet> cache_;
};

// Stateless form of the oracle's rule.
Verdict oracle_compare(const PairwiseQuery& query);

struct ThinkMarkers {
  std::string open = "<think>";
  std::string close = "</think>";
};

// Removes every open...close span and every bare marker until none remain.
std::string strip_think(std::string_view text, const ThinkMarkers& markers = {});

struct VerdictPatterns {
  std::vector<std::string> slot_a = {R"(\[\[A\]\])", R"(\[A\])", R"(\(A\))", R"(\bA\b)"};
  std::vector<std::string> slot_b = {R"(\[\[B\]\])", R"(\[B\])", R"(\(B\))", R"(\bB\b)"};
};

// Scans all patterns; the match starting latest in the text wins.
std::optional<Verdict> try_extract_verdict(std::string_view text,
                                           const VerdictPatterns& patterns = {});
// Throws VerdictExtractionError on zero matches.
Verdict extract_verdict(std::string_view text, const VerdictPatterns& patterns = {});

// Whether the target wins when presented in the given order.
bool target_preferred(Judge& judge, PairwiseQuery query, Presentation presentation);

// Randomizes presentation order from the seed and maps the verdict back.
bool shuffle_and_map(Judge& judge, const PairwiseQuery& query, std::uint64_t seed);
Presentation presentation_for_seed(std::uint64_t seed);

enum class FailurePolicy : std::uint8_t { kFailRun, kScoreZeroAndLog };

struct JudgeStats {
  std::atomic<long> comparisons{0};
  std::atomic<long> extraction_failures{0};
  std::atomic<long> endpoint_failures{0};
};

// S_vis: 1 iff the target is preferred over the reference. Extraction
// failures score 0 and are counted; endpoint failures follow the policy.
int pairwise_score(Judge& judge, const PairwiseQuery& query, std::uint64_t seed,
                   FailurePolicy policy = FailurePolicy::kScoreZeroAndLog,
                   JudgeStats* stats = nullptr);

// Batched form; seeds[i] shuffles queries[i]. The judge may run the batch
// concurrently.
std::vector<int> pairwise_scores(Judge& judge, std::vector<PairwiseQuery> queries,
                                 const std::vector<std::uint64_t>& seeds,
                                 FailurePolicy policy = FailurePolicy::kScoreZeroAndLog,
                                 JudgeStats* stats = nullptr);

std::string_view slot_name(Slot slot);

}  // namespace palmr

#endif  // PALMR_JUDGE_HPP_
