#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "doctest.h"
#include "palmr/remote_judge.hpp"
#include "stub_server.hpp"

using namespace palmr;
using palmr::testing::StubServer;

namespace {

EndpointConfig endpoint(const StubServer& s) {
  EndpointConfig e;
  e.base_url = s.base_url();
  e.model = "stub-judge";
  e.api_key = "secret";
  e.timeout_s = 0.3;
  e.max_retries = 3;
  e.backoff_initial_s = 0.01;
  return e;
}

PairwiseQuery make_query() {
  Scene scene;
  scene.scene_id = "stub";
  scene.objects = {{0, Shape::kCircle, Color::kRed, Size::kSmall, {0, 0}}};
  const Question q = generate_question(scene, QuestionTemplate::kCount, 1);
  auto traj = [](std::vector<TokenId> tokens) {
    Trajectory t;
    t.tokens = std::move(tokens);
    t.old_logprobs.assign(t.tokens.size(), 0.0);
    t.prompt_ref = "stub-q";
    return parse(t);
  };
  const TokenId red = claim_token(0, AttributeKind::kColor, int(Color::kRed));
  const TokenId blue = claim_token(0, AttributeKind::kColor, int(Color::kBlue));
  return {q, render_pseudo_gt(scene),
          traj({kThinkOpenToken, red, kThinkCloseToken, *answer_token("1"), kEndToken}),
          traj({kThinkOpenToken, blue, kThinkCloseToken, *answer_token("1"), kEndToken})};
}

}  // namespace

TEST_CASE("remote judge maps verdicts through the presentation order") {
  StubServer server([](int, const nlohmann::json&, httplib::Response& res) {
    StubServer::reply(res, "Response B is more faithful. [[B]]");
  });
  RemoteJudge judge(endpoint(server), JudgePrompts::defaults());
  const PairwiseQuery q = make_query();
  CHECK_FALSE(target_preferred(judge, q, Presentation::kTargetFirst));
  CHECK(target_preferred(judge, q, Presentation::kReferenceFirst));

  // The request carries the model, the key and both rendered responses,
  // with the policy's think markers removed.
  CHECK(server.last_auth() == "Bearer secret");
  const nlohmann::json body = server.last_body();
  CHECK(body.at("model") == "stub-judge");
  const std::string user = body.at("messages").at(1).at("content").get<std::string>();
  CHECK(user.find(q.pseudo_gt.text) != std::string::npos);
  CHECK(user.find(question_text(q.question)) != std::string::npos);
  CHECK(user.find("<think>") == std::string::npos);
  CHECK(user.find("{response_a}") == std::string::npos);
  CHECK(user.find(render_response_for_judge(q.target)) != std::string::npos);
}

TEST_CASE("remote judge ignores verdicts inside its own think span") {
  StubServer server([](int, const nlohmann::json&, httplib::Response& res) {
    StubServer::reply(res, "<think>A claims red, B claims blue... [[B]]? no.</think>\nFinal: [[A]]");
  });
  RemoteJudge judge(endpoint(server), JudgePrompts::defaults());
  const Verdict v = judge.compare(make_query());
  CHECK(v.preferred == Slot::kA);
  CHECK(v.raw_text->find("<think>") == 0);
}

TEST_CASE("remote judge retries through two timeouts") {
  StubServer server([](int call, const nlohmann::json&, httplib::Response& res) {
    if (call < 2) std::this_thread::sleep_for(std::chrono::milliseconds(800));
    StubServer::reply(res, "[[A]]");
  });
  RemoteJudge judge(endpoint(server), JudgePrompts::defaults());
  const Verdict v = judge.compare(make_query());
  CHECK(v.preferred == Slot::kA);
  CHECK(judge.last_retries() == 2);
  CHECK(judge.total_retries() == 2);
  CHECK(server.calls() == 3);
}

TEST_CASE("remote judge endpoint failures") {
  SUBCASE("server errors exhaust the retries") {
    StubServer server([](int, const nlohmann::json&, httplib::Response& res) {
      res.status = 503;
    });
    EndpointConfig e = endpoint(server);
    e.max_retries = 2;
    RemoteJudge judge(e, JudgePrompts::defaults());
    const PairwiseQuery q = make_query();
    CHECK_THROWS_AS(judge.compare(q), JudgeEndpointError);
    CHECK(server.calls() == 3);

    JudgeStats stats;
    CHECK_THROWS_AS(pairwise_score(judge, q, 1, FailurePolicy::kFailRun, &stats),
                    JudgeEndpointError);
    CHECK(pairwise_score(judge, q, 1, FailurePolicy::kScoreZeroAndLog, &stats) == 0);
    CHECK(stats.endpoint_failures == 2);
  }
  SUBCASE("client errors are not retried") {
    StubServer server([](int, const nlohmann::json&, httplib::Response& res) {
      res.status = 401;
    });
    RemoteJudge judge(endpoint(server), JudgePrompts::defaults());
    CHECK_THROWS_AS(judge.compare(make_query()), JudgeEndpointError);
    CHECK(server.calls() == 1);
  }
  SUBCASE("a reply without a verdict scores zero") {
    StubServer server([](int, const nlohmann::json&, httplib::Response& res) {
      StubServer::reply(res, "I cannot decide.");
    });
    RemoteJudge judge(endpoint(server), JudgePrompts::defaults());
    JudgeStats stats;
    CHECK(pairwise_score(judge, make_query(), 1, FailurePolicy::kFailRun, &stats) == 0);
    CHECK(stats.extraction_failures == 1);
  }
  SUBCASE("malformed JSON is an endpoint error") {
    StubServer server([](int, const nlohmann::json&, httplib::Response& res) {
      res.set_content("{\"choices\": []}", "application/json");
    });
    RemoteJudge judge(endpoint(server), JudgePrompts::defaults());
    CHECK_THROWS_AS(judge.compare(make_query()), JudgeEndpointError);
  }
}

TEST_CASE("remote judge bounds concurrent requests") {
  StubServer server([](int, const nlohmann::json&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    StubServer::reply(res, "[[A]]");
  });
  EndpointConfig e = endpoint(server);
  e.max_in_flight = 3;
  RemoteJudge judge(e, JudgePrompts::defaults());
  const std::vector<PairwiseQuery> queries(12, make_query());
  const auto outcomes = judge.compare_many(queries);
  for (const auto& o : outcomes) {
    REQUIRE(o.verdict.has_value());
    CHECK(o.verdict->preferred == Slot::kA);
  }
  CHECK(server.calls() == 12);
  CHECK(server.max_in_flight() <= 3);
  CHECK(server.max_in_flight() >= 2);
}

TEST_CASE("endpoint config and templates") {
  EndpointConfig e;
  e.base_url = "localhost:8000";
  CHECK_THROWS_AS(e.validate(), std::invalid_argument);
  e.base_url = "https://api.example.com/v1";
  CHECK_NOTHROW(e.validate());
  e.timeout_s = 0;
  CHECK_THROWS_AS(e.validate(), std::invalid_argument);

  CHECK(fill_template("{a}-{b}-{c}", {{"a", "1"}, {"b", "{a}"}}) == "1-{a}-{c}");
  const JudgePrompts p = JudgePrompts::defaults();
  for (const char* key : {"{question}", "{visual_ground_truth}", "{response_a}", "{response_b}"}) {
    CHECK(p.user.find(key) != std::string::npos);
  }
}
