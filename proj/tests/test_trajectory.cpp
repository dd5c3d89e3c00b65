#include <regex>
#include <set>

#include "doctest.h"
#include "palmr/rng.hpp"
#include "palmr/trajectory.hpp"

using namespace palmr;

namespace {

Trajectory make(std::vector<TokenId> tokens) {
  Trajectory t;
  t.old_logprobs.assign(tokens.size(), -0.5);
  t.tokens = std::move(tokens);
  t.prompt_ref = "p";
  return t;
}

TokenId box(const char* answer) { return *answer_token(answer); }

TokenId red_obj(int obj) { return claim_token(obj, AttributeKind::kColor, int(Color::kRed)); }

// Second parser: map tokens to one character per class and use a regex for
// well-formedness; claims and the answer are read off the character string.
struct OracleParse {
  bool well_formed;
  std::set<std::string> claims;
  int dropped;
  std::string answer;  // empty when absent
};

OracleParse oracle_parse(const std::vector<TokenId>& tokens) {
  std::string shape;
  for (TokenId id : tokens) {
    if (id == 0) shape += 'O';
    else if (id == 1) shape += 'C';
    else if (id == 2) shape += 'E';
    else if (id >= 3 && id < 22) shape += 'A';
    else if (id >= 22 && id < 86) shape += 'c';
    else shape += '?';
  }
  static const std::regex kGrammar("^Oc*CAE?$");
  OracleParse out{std::regex_match(shape, kGrammar), {}, 0, ""};
  // A position is inside a think span when the closest O/C before it is O.
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const auto prev = shape.find_last_of("OC", i == 0 ? std::string::npos : i - 1);
    const bool inside = i > 0 && prev != std::string::npos && shape[prev] == 'O';
    const char ch = shape[i];
    if (ch == 'O' || ch == 'C') continue;
    if (inside) {
      if (ch == 'c') {
        out.claims.insert(token_text(tokens[i]));
      } else {
        ++out.dropped;
      }
    } else if (ch == 'A') {
      out.answer = token_text(tokens[i]);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("vocabulary layout") {
  CHECK(kVocabSize == 86);
  CHECK(kFirstClaimToken == 22);
  for (TokenId id = 0; id < kVocabSize; ++id) {
    REQUIRE(encode(token_text(id)) == std::vector<TokenId>{id});
  }
  CHECK(token_text(box("3")) == "\\boxed{3}");
  CHECK(token_text(red_obj(2)) == "[attribute_of(2,color)=red]");
  CHECK_THROWS_AS(encode("<bogus>"), std::invalid_argument);
  CHECK(token_class(-1) == TokenClass::kUnknown);
  CHECK(token_class(kVocabSize) == TokenClass::kUnknown);
}

TEST_CASE("parse: grammar examples") {
  auto p = parse(make({kThinkOpenToken, red_obj(0), kThinkCloseToken, box("3")}));
  CHECK(p.well_formed);
  CHECK(p.claims.claims.size() == 1);
  CHECK(p.answer == "3");
  CHECK(format_score(p) == 1);

  p = parse(make({kThinkOpenToken, red_obj(0), kThinkCloseToken, kEndToken}));
  CHECK_FALSE(p.well_formed);
  CHECK_FALSE(p.answer.has_value());

  p = parse(make({kThinkOpenToken, kThinkCloseToken, kThinkOpenToken, kThinkCloseToken,
                  box("3")}));
  CHECK_FALSE(p.well_formed);

  p = parse(make({kThinkOpenToken, red_obj(0), box("3")}));
  CHECK(format_score(p) == 0);

  p = parse(make({kThinkOpenToken, kThinkCloseToken, box("yes"), kEndToken}));
  CHECK(format_score(p) == 1);
  CHECK(p.claims.claims.empty());

  // A direct answer without a think span is not well formed but is scored.
  p = parse(make({box("2"), kEndToken}));
  CHECK_FALSE(p.well_formed);
  CHECK(answer_score(p, "2") == 1);
}

TEST_CASE("answer_score canonicalization") {
  const auto p = parse(make({kThinkOpenToken, kThinkCloseToken, box("3")}));
  CHECK(answer_score(p, "3") == 1);
  CHECK(answer_score(p, " 03 ") == 1);
  CHECK(answer_score(p, "4") == 0);
  const auto blue = parse(make({kThinkOpenToken, kThinkCloseToken, box("blue")}));
  CHECK(answer_score(blue, "BLUE") == 1);
  CHECK(answer_score(blue, "cyan") == 0);
  const auto none = parse(make({kThinkOpenToken, kThinkCloseToken}));
  CHECK(answer_score(none, "3") == 0);
  CHECK(canonical_answer("000") == "0");
  CHECK(canonical_answer("  Yes\t") == "yes");
}

TEST_CASE("extract_claims dedups and drops ill-formed tokens") {
  auto p = parse(make({kThinkOpenToken, red_obj(1), red_obj(1), kThinkCloseToken, box("1")}));
  CHECK(extract_claims(p).claims.size() == 1);
  CHECK(extract_claims(p).dropped == 0);

  p = parse(make({kThinkOpenToken, red_obj(1), box("2"), kThinkCloseToken, box("1")}));
  CHECK(extract_claims(p).claims.size() == 1);
  CHECK(extract_claims(p).dropped == 1);
  CHECK_FALSE(p.well_formed);

  // Claims outside the think span are not extracted.
  p = parse(make({red_obj(1), kThinkOpenToken, kThinkCloseToken, box("1")}));
  CHECK(extract_claims(p).claims.empty());
}

TEST_CASE("parse agrees with an independent parser on a fuzz corpus") {
  Rng rng(2024);
  for (int n = 0; n < 1000; ++n) {
    std::vector<TokenId> tokens;
    const int len = rng.between(1, 14);
    for (int i = 0; i < len; ++i) {
      // Bias toward structural tokens so well-formed cases appear.
      const int r = rng.between(0, 9);
      if (r < 2) tokens.push_back(rng.between(0, 2));
      else if (r < 4) tokens.push_back(rng.between(3, 21));
      else if (r < 9) tokens.push_back(rng.between(22, 85));
      else tokens.push_back(rng.between(-3, 90));
    }
    if (n % 3 == 0) {
      // Planted well-formed shape.
      tokens = {kThinkOpenToken};
      for (int c = rng.between(0, 5); c > 0; --c) tokens.push_back(rng.between(22, 85));
      tokens.push_back(kThinkCloseToken);
      tokens.push_back(rng.between(3, 21));
      if (rng.coin()) tokens.push_back(kEndToken);
    }
    const auto got = parse(make(tokens));
    const auto want = oracle_parse(tokens);
    REQUIRE(got.well_formed == want.well_formed);
    REQUIRE(got.claims.dropped == want.dropped);
    std::set<std::string> claims;
    for (const auto& c : got.claims.claims) claims.insert("[" + to_string(c) + "]");
    REQUIRE(claims == want.claims);
    REQUIRE(got.claims.claims.size() == want.claims.size());
    REQUIRE((got.answer ? "\\boxed{" + *got.answer + "}" : "") == want.answer);
    REQUIRE(format_score(got) >= 0);
    REQUIRE(format_score(got) <= 1);
    REQUIRE(got.claims == extract_claims(got));
    if (got.well_formed) {
      // Serialize through decoded text and back.
      const auto again = parse(make(encode(decode(tokens))));
      REQUIRE(again.claims == got.claims);
      REQUIRE(again.answer == got.answer);
    }
  }
}

TEST_CASE("trajectory validation and JSON") {
  Trajectory t = make({kThinkOpenToken, kThinkCloseToken, box("1")});
  CHECK_NOTHROW(validate_trajectory(t));
  CHECK(trajectory_from_json(to_json(t)) == t);
  CHECK(to_json(t)["text"] == "<think> </think> \\boxed{1}");

  Trajectory bad = t;
  bad.old_logprobs.pop_back();
  CHECK_THROWS_AS(validate_trajectory(bad), std::invalid_argument);
  bad = t;
  bad.old_logprobs[0] = 0.1;
  CHECK_THROWS_AS(validate_trajectory(bad), std::invalid_argument);
  bad = t;
  bad.tokens[0] = 99;
  CHECK_THROWS_AS(validate_trajectory(bad), std::invalid_argument);
  CHECK_THROWS_AS(validate_trajectory(make({})), std::invalid_argument);
  CHECK_THROWS_AS(validate_trajectory(t, 2), std::invalid_argument);
}
