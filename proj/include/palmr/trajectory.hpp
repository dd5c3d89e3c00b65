#ifndef PALMR_TRAJECTORY_HPP_
#define PALMR_TRAJECTORY_HPP_

// Closed token vocabulary, response grammar, and the rule-based format and
// answer scores.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "palmr/scene.hpp"

namespace palmr {

using TokenId = int;

enum class TokenClass : std::uint8_t {
  kThinkOpen,
  kThinkClose,
  kEnd,
  kAnswer,
  kClaim,
  kUnknown,
};

// Vocabulary layout:
//   0 <think>, 1 </think>, 2 <end>,
//   3..21  one boxed answer per candidate,
//   22..85 one attribute_of claim per (object < 8, attribute class).
inline constexpr TokenId kThinkOpenToken = 0;
inline constexpr TokenId kThinkCloseToken = 1;
inline constexpr TokenId kEndToken = 2;
inline constexpr TokenId kFirstAnswerToken = 3;
inline constexpr int kNumAnswerTokens = 9 + kNumShapes + kNumColors + kNumSizes + 2;
inline constexpr TokenId kFirstClaimToken = kFirstAnswerToken + kNumAnswerTokens;
inline constexpr int kNumClaimTokens = kMaxObjectsLimit * kNumAttributeClasses;
inline constexpr int kVocabSize = kFirstClaimToken + kNumClaimTokens;

TokenClass token_class(TokenId id);
bool is_known_token(TokenId id);

// Canonical answer string of an answer token ("3", "red", "yes", ...).
std::string_view answer_of_token(TokenId id);
std::optional<TokenId> answer_token(std::string_view canonical_answer);

// Answer tokens a question can be answered with.
std::vector<TokenId> answer_candidates(const Question& question);

TokenId claim_token(int obj, AttributeKind kind, int value);
VisualClaim claim_of_token(TokenId id);

// Stable surface form, e.g. "<think>", "\boxed{3}",
// "[attribute_of(2,color)=red]".
std::string token_text(TokenId id);
std::string decode(std::span<const TokenId> tokens);
// Inverse of decode; throws std::invalid_argument on an unknown token.
std::vector<TokenId> encode(std::string_view text);

struct Trajectory {
  std::vector<TokenId> tokens;
  std::vector<double> old_logprobs;
  std::string prompt_ref;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

inline constexpr int kDefaultMaxLen = 64;

// Throws std::invalid_argument when a Trajectory invariant is violated.
void validate_trajectory(const Trajectory& traj, int max_len = kDefaultMaxLen);

struct ClaimSet {
  std::vector<VisualClaim> claims;  // sorted, unique
  int dropped = 0;                  // ill-formed tokens inside a think span

  friend bool operator==(const ClaimSet&, const ClaimSet&) = default;
};

struct ParsedTrajectory {
  bool well_formed = false;
  ClaimSet claims;
  std::optional<std::string> answer;
  Trajectory raw;
};

// Total and deterministic over any token sequence.
ParsedTrajectory parse(const Trajectory& traj);

ClaimSet extract_claims(const ParsedTrajectory& parsed);

int format_score(const ParsedTrajectory& parsed);
int answer_score(const ParsedTrajectory& parsed, std::string_view gold);

// Trim, ASCII case-fold, drop leading zeros of an all-digit answer.
std::string canonical_answer(std::string_view answer);

nlohmann::json to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const nlohmann::json& j);

}  // namespace palmr

#endif  // PALMR_TRAJECTORY_HPP_
