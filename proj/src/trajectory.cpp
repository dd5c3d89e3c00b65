#include "palmr/trajectory.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

namespace palmr {

namespace {

constexpr std::array<std::string_view, kNumAnswerTokens> kAnswerStrings = {
    "0",      "1",      "2",        "3",   "4",    "5",     "6",
    "7",      "8",      "circle",   "square", "triangle", "red", "blue",
    "green",  "small",  "large",    "yes", "no"};

constexpr int kShapeAnswerOffset = 9;
constexpr int kColorAnswerOffset = kShapeAnswerOffset + kNumShapes;
constexpr int kSizeAnswerOffset = kColorAnswerOffset + kNumColors;
constexpr int kYesAnswerOffset = kSizeAnswerOffset + kNumSizes;

TokenId answer_offset(int offset) { return kFirstAnswerToken + offset; }

}  // namespace

bool is_known_token(TokenId id) { return id >= 0 && id < kVocabSize; }

TokenClass token_class(TokenId id) {
  if (id == kThinkOpenToken) return TokenClass::kThinkOpen;
  if (id == kThinkCloseToken) return TokenClass::kThinkClose;
  if (id == kEndToken) return TokenClass::kEnd;
  if (id >= kFirstAnswerToken && id < kFirstClaimToken) return TokenClass::kAnswer;
  if (id >= kFirstClaimToken && id < kVocabSize) return TokenClass::kClaim;
  return TokenClass::kUnknown;
}

std::string_view answer_of_token(TokenId id) {
  if (token_class(id) != TokenClass::kAnswer) {
    throw std::invalid_argument(fmt::format("token {} is not an answer token", id));
  }
  return kAnswerStrings[static_cast<std::size_t>(id - kFirstAnswerToken)];
}

std::optional<TokenId> answer_token(std::string_view answer) {
  for (std::size_t i = 0; i < kAnswerStrings.size(); ++i) {
    if (kAnswerStrings[i] == answer) return kFirstAnswerToken + static_cast<TokenId>(i);
  }
  return std::nullopt;
}

std::vector<TokenId> answer_candidates(const Question& q) {
  std::vector<TokenId> out;
  auto range = [&](int offset, int n) {
    for (int i = 0; i < n; ++i) out.push_back(answer_offset(offset + i));
  };
  switch (q.template_id) {
    case QuestionTemplate::kCount:
      range(0, kMaxObjectsLimit + 1);
      break;
    case QuestionTemplate::kAttributeLookup:
      switch (static_cast<AttributeKind>(q.params[1])) {
        case AttributeKind::kShape: range(kShapeAnswerOffset, kNumShapes); break;
        case AttributeKind::kColor: range(kColorAnswerOffset, kNumColors); break;
        case AttributeKind::kSize: range(kSizeAnswerOffset, kNumSizes); break;
      }
      break;
    case QuestionTemplate::kComparison:
    case QuestionTemplate::kRelation:
      range(kYesAnswerOffset, 2);
      break;
  }
  return out;
}

TokenId claim_token(int obj, AttributeKind kind, int value) {
  if (obj < 0 || obj >= kMaxObjectsLimit || value < 0 || value >= num_values(kind)) {
    throw std::invalid_argument("claim_token: argument out of range");
  }
  return kFirstClaimToken + obj * kNumAttributeClasses + attribute_class(kind, value);
}

VisualClaim claim_of_token(TokenId id) {
  if (token_class(id) != TokenClass::kClaim) {
    throw std::invalid_argument(fmt::format("token {} is not a claim token", id));
  }
  const int offset = id - kFirstClaimToken;
  const int obj = offset / kNumAttributeClasses;
  const int cls = offset % kNumAttributeClasses;
  return {{Predicate::kAttributeOf, obj, static_cast<int>(class_kind(cls))},
          class_value(cls)};
}

std::string token_text(TokenId id) {
  switch (token_class(id)) {
    case TokenClass::kThinkOpen: return "<think>";
    case TokenClass::kThinkClose: return "</think>";
    case TokenClass::kEnd: return "<end>";
    case TokenClass::kAnswer: return fmt::format("\\boxed{{{}}}", answer_of_token(id));
    case TokenClass::kClaim: return "[" + to_string(claim_of_token(id)) + "]";
    case TokenClass::kUnknown: break;
  }
  return fmt::format("<unk:{}>", id);
}

std::string decode(std::span<const TokenId> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += token_text(tokens[i]);
  }
  return out;
}

std::vector<TokenId> encode(std::string_view text) {
  static const std::vector<std::string> kTexts = [] {
    std::vector<std::string> t;
    for (TokenId id = 0; id < kVocabSize; ++id) t.push_back(token_text(id));
    return t;
  }();
  std::vector<TokenId> out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    auto it = std::find(kTexts.begin(), kTexts.end(), word);
    if (it == kTexts.end()) throw std::invalid_argument("encode: unknown token " + word);
    out.push_back(static_cast<TokenId>(it - kTexts.begin()));
  }
  return out;
}

void validate_trajectory(const Trajectory& traj, int max_len) {
  if (traj.tokens.empty()) throw std::invalid_argument("trajectory: no tokens");
  if (static_cast<int>(traj.tokens.size()) > max_len) {
    throw std::invalid_argument("trajectory: longer than max_len");
  }
  if (traj.old_logprobs.size() != traj.tokens.size()) {
    throw std::invalid_argument("trajectory: old_logprobs length mismatch");
  }
  for (TokenId id : traj.tokens) {
    if (!is_known_token(id)) throw std::invalid_argument("trajectory: unknown token id");
  }
  for (double lp : traj.old_logprobs) {
    if (!(lp <= 0.0)) throw std::invalid_argument("trajectory: old_logprob > 0 or NaN");
  }
}

namespace {

ClaimSet claims_from_tokens(std::span<const TokenId> tokens) {
  ClaimSet out;
  bool inside = false;
  for (TokenId id : tokens) {
    switch (token_class(id)) {
      case TokenClass::kThinkOpen: inside = true; break;
      case TokenClass::kThinkClose: inside = false; break;
      case TokenClass::kClaim:
        if (inside) out.claims.push_back(claim_of_token(id));
        break;
      default:
        if (inside) ++out.dropped;
        break;
    }
  }
  std::sort(out.claims.begin(), out.claims.end());
  out.claims.erase(std::unique(out.claims.begin(), out.claims.end()), out.claims.end());
  return out;
}

}  // namespace

ParsedTrajectory parse(const Trajectory& traj) {
  ParsedTrajectory out;
  out.raw = traj;
  out.claims = claims_from_tokens(traj.tokens);

  const auto& tokens = traj.tokens;
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(tokens.size()) - 1;
  bool structural_error = false;
  bool inside = false;
  int opens = 0;
  int closes = 0;
  int answers = 0;
  std::ptrdiff_t close_pos = -1;
  std::ptrdiff_t answer_pos = -1;

  for (std::ptrdiff_t i = 0; i <= last; ++i) {
    const TokenId id = tokens[static_cast<std::size_t>(i)];
    switch (token_class(id)) {
      case TokenClass::kThinkOpen:
        ++opens;
        if (inside || i != 0) structural_error = true;
        inside = true;
        break;
      case TokenClass::kThinkClose:
        ++closes;
        if (!inside) structural_error = true;
        inside = false;
        close_pos = i;
        break;
      case TokenClass::kClaim:
        if (!inside) structural_error = true;
        break;
      case TokenClass::kAnswer:
        if (!inside) {
          ++answers;
          answer_pos = i;
          out.answer = std::string(answer_of_token(id));
        }
        break;
      case TokenClass::kEnd:
        if (!inside && i != last) structural_error = true;
        break;
      case TokenClass::kUnknown:
        if (!inside) structural_error = true;
        break;
    }
  }
  if (inside) structural_error = true;

  const bool answer_terminal =
      answer_pos == last ||
      (answer_pos == last - 1 && tokens[static_cast<std::size_t>(last)] == kEndToken);
  out.well_formed = !structural_error && out.claims.dropped == 0 && opens == 1 &&
                    closes == 1 && answers == 1 && answer_pos == close_pos + 1 &&
                    answer_terminal;
  return out;
}

ClaimSet extract_claims(const ParsedTrajectory& parsed) {
  return claims_from_tokens(parsed.raw.tokens);
}

int format_score(const ParsedTrajectory& parsed) { return parsed.well_formed ? 1 : 0; }

std::string canonical_answer(std::string_view answer) {
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!answer.empty() && is_space(answer.front())) answer.remove_prefix(1);
  while (!answer.empty() && is_space(answer.back())) answer.remove_suffix(1);
  std::string out;
  out.reserve(answer.size());
  for (char c : answer) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  const bool all_digits =
      !out.empty() && std::all_of(out.begin(), out.end(), [](char c) {
        return std::isdigit(static_cast<unsigned char>(c)) != 0;
      });
  if (all_digits) {
    const auto first = out.find_first_not_of('0');
    out = first == std::string::npos ? "0" : out.substr(first);
  }
  return out;
}

int answer_score(const ParsedTrajectory& parsed, std::string_view gold) {
  if (!parsed.answer) return 0;
  return canonical_answer(*parsed.answer) == canonical_answer(gold) ? 1 : 0;
}

nlohmann::json to_json(const Trajectory& traj) {
  return {{"prompt_ref", traj.prompt_ref},
          {"tokens", traj.tokens},
          {"text", decode(traj.tokens)},
          {"old_logprobs", traj.old_logprobs}};
}

Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory t;
  t.prompt_ref = j.at("prompt_ref").get<std::string>();
  t.tokens = j.at("tokens").get<std::vector<TokenId>>();
  t.old_logprobs = j.at("old_logprobs").get<std::vector<double>>();
  return t;
}

}  // namespace palmr
