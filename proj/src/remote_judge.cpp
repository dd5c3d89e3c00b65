#include "palmr/remote_judge.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

namespace palmr {

void EndpointConfig::validate() const {
  static const std::regex kUrl(R"(^https?://[^/\s]+(/\S*)?$)");
  if (!std::regex_match(base_url, kUrl)) {
    throw std::invalid_argument("endpoint: base_url must be an http(s) URL: '" + base_url + "'");
  }
  if (!(timeout_s > 0.0)) throw std::invalid_argument("endpoint: timeout_s must be positive");
  if (max_retries < 0) throw std::invalid_argument("endpoint: max_retries must be >= 0");
  if (backoff_initial_s < 0.0 || backoff_multiplier < 1.0) {
    throw std::invalid_argument("endpoint: bad backoff settings");
  }
  if (max_in_flight < 1) throw std::invalid_argument("endpoint: max_in_flight must be >= 1");
  if (max_tokens < 1) throw std::invalid_argument("endpoint: max_tokens must be >= 1");
}

ChatClient::ChatClient(EndpointConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  static const std::regex kSplit(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  std::regex_match(cfg_.base_url, m, kSplit);
  origin_ = m[1].str();
  std::string prefix = m[2].matched ? m[2].str() : "";
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  path_ = prefix + "/chat/completions";
}

namespace {

bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

std::string ChatClient::complete(const std::string& system, const std::string& user,
                                 int* retries_used) const {
  const nlohmann::json body = {
      {"model", cfg_.model},
      {"messages",
       {{{"role", "system"}, {"content", system}}, {{"role", "user"}, {"content", user}}}},
      {"temperature", cfg_.temperature},
      {"max_tokens", cfg_.max_tokens},
  };
  const std::string payload = body.dump();
  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

  const auto timeout = std::chrono::duration<double>(cfg_.timeout_s);
  const auto timeout_us = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
  if (retries_used) *retries_used = 0;
  std::string last_error;
  double backoff = cfg_.backoff_initial_s;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) {
      ++total_retries_;
      if (retries_used) *retries_used = attempt;
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= cfg_.backoff_multiplier;
    }
    httplib::Client client(origin_);
    client.set_connection_timeout(timeout_us);
    client.set_read_timeout(timeout_us);
    client.set_write_timeout(timeout_us);
    const auto res = client.Post(path_, headers, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (retryable_status(res->status)) {
      last_error = fmt::format("HTTP {}", res->status);
      continue;
    }
    if (res->status != 200) {
      throw JudgeEndpointError(fmt::format("judge endpoint returned HTTP {}: {}", res->status,
                                           res->body.substr(0, 200)));
    }
    try {
      const auto reply = nlohmann::json::parse(res->body);
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw JudgeEndpointError(fmt::format("malformed chat-completion reply: {}", e.what()));
    }
  }
  throw JudgeEndpointError(fmt::format("judge endpoint {}{} failed after {} retries: {}",
                                       origin_, path_, cfg_.max_retries, last_error));
}

JudgePrompts JudgePrompts::defaults() {
  return {
      "You are an impartial judge of visual faithfulness. You are given a question about an "
      "image, a structured description of the image that is known to be correct (the visual "
      "ground truth), and two responses labelled A and B. Each response reasons about the "
      "image before answering.\n"
      "Check every visual statement made in each response's reasoning against the visual "
      "ground truth. Prefer the response whose reasoning contradicts the ground truth less "
      "often. If both contradict it equally often, prefer the one that correctly states more "
      "facts about the image. Do not judge whether the final answer is correct, and do not "
      "favour a response because of its position or length.\n"
      "End your reply with the verdict on its own line: [[A]] if response A is more "
      "faithful, [[B]] if response B is.",
      "Question:\n{question}\n\n"
      "Visual ground truth:\n{visual_ground_truth}\n\n"
      "Response A:\n{response_a}\n\n"
      "Response B:\n{response_b}\n\n"
      "Which response is more faithful to the visual ground truth? Reply with [[A]] or [[B]].",
  };
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read prompt template: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

JudgePrompts JudgePrompts::load(const std::filesystem::path& dir) {
  return {read_file(dir / "judge_system.txt"), read_file(dir / "judge_user.txt")};
}

std::string fill_template(std::string text,
                          const std::vector<std::pair<std::string, std::string>>& values) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    bool replaced = false;
    if (text[i] == '{') {
      for (const auto& [name, value] : values) {
        const std::string key = "{" + name + "}";
        if (text.compare(i, key.size(), key) == 0) {
          out += value;
          i += key.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += text[i++];
  }
  return out;
}

std::string render_response_for_judge(const ParsedTrajectory& response) {
  std::vector<TokenId> kept;
  for (TokenId id : response.raw.tokens) {
    const TokenClass c = token_class(id);
    if (c != TokenClass::kThinkOpen && c != TokenClass::kThinkClose && c != TokenClass::kEnd) {
      kept.push_back(id);
    }
  }
  return decode(kept);
}

RemoteJudge::RemoteJudge(EndpointConfig endpoint, JudgePrompts prompts, ThinkMarkers markers,
                         VerdictPatterns patterns)
    : client_(std::move(endpoint)),
      prompts_(std::move(prompts)),
      markers_(std::move(markers)),
      patterns_(std::move(patterns)) {}

std::pair<std::string, std::string> RemoteJudge::build_messages(
    const PairwiseQuery& query) const {
  const std::vector<std::pair<std::string, std::string>> values = {
      {"question", question_text(query.question)},
      {"visual_ground_truth", query.pseudo_gt.text},
      {"response_a", render_response_for_judge(query.slot_a())},
      {"response_b", render_response_for_judge(query.slot_b())},
  };
  return {fill_template(prompts_.system, values), fill_template(prompts_.user, values)};
}

Verdict RemoteJudge::compare(const PairwiseQuery& query) {
  const auto [system, user] = build_messages(query);
  int retries = 0;
  const std::string reply = client_.complete(system, user, &retries);
  last_retries_ = retries;
  Verdict v = extract_verdict(strip_think(reply, markers_), patterns_);
  v.raw_text = reply;
  return v;
}

std::vector<JudgeOutcome> RemoteJudge::compare_many(const std::vector<PairwiseQuery>& queries) {
  std::vector<JudgeOutcome> out(queries.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < queries.size(); i = next++) {
      try {
        out[i].verdict = compare(queries[i]);
      } catch (...) {
        out[i].error = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::min<std::size_t>(
      static_cast<std::size_t>(client_.config().max_in_flight), queries.size());
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < n_workers; ++w) workers.emplace_back(worker);
  for (auto& t : workers) t.join();
  return out;
}

}  // namespace palmr
