#ifndef PALMR_REMOTE_JUDGE_HPP_
#define PALMR_REMOTE_JUDGE_HPP_

// Chat-completion client and the LLM-backed pairwise judge.

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "palmr/judge.hpp"

namespace palmr {

struct EndpointConfig {
  std::string base_url;  // e.g. http://localhost:8000/v1
  std::string model;
  std::string api_key;   // sent as a bearer token when non-empty
  double timeout_s = 60.0;
  int max_retries = 3;
  double backoff_initial_s = 0.5;
  double backoff_multiplier = 2.0;
  int max_in_flight = 4;
  double temperature = 0.0;
  int max_tokens = 1024;

  // Throws std::invalid_argument.
  void validate() const;
};

// POSTs {base_url}/chat/completions and returns choices[0].message.content.
// Connection errors, timeouts, 429 and 5xx are retried with exponential
// backoff; anything else, or running out of retries, throws
// JudgeEndpointError.
class ChatClient {
 public:
  explicit ChatClient(EndpointConfig cfg);

  std::string complete(const std::string& system, const std::string& user,
                       int* retries_used = nullptr) const;

  const EndpointConfig& config() const { return cfg_; }
  long total_retries() const { return total_retries_.load(); }

 private:
  EndpointConfig cfg_;
  std::string origin_;  // scheme://host[:port]
  std::string path_;    // path prefix + /chat/completions
  mutable std::atomic<long> total_retries_{0};
};

struct JudgePrompts {
  std::string system;
  std::string user;  // {question} {visual_ground_truth} {response_a} {response_b}

  static JudgePrompts defaults();
  // Reads judge_system.txt and judge_user.txt from dir.
  static JudgePrompts load(const std::filesystem::path& dir);
};

// Replaces every {name} with its value; unknown placeholders stay as they are.
std::string fill_template(std::string text,
                          const std::vector<std::pair<std::string, std::string>>& values);

// Response text shown to the judge: the decoded tokens with the policy's
// think markers removed, so they cannot switch the judge into thinking mode.
std::string render_response_for_judge(const ParsedTrajectory& response);

class RemoteJudge : public Judge {
 public:
  RemoteJudge(EndpointConfig endpoint, JudgePrompts prompts, ThinkMarkers markers = {},
              VerdictPatterns patterns = {});

  Verdict compare(const PairwiseQuery& query) override;
  // Runs up to endpoint.max_in_flight comparisons at once.
  std::vector<JudgeOutcome> compare_many(const std::vector<PairwiseQuery>& queries) override;

  // Both prompts as they would be sent for this query.
  std::pair<std::string, std::string> build_messages(const PairwiseQuery& query) const;

  long total_retries() const { return client_.total_retries(); }
  int last_retries() const { return last_retries_.load(); }

 private:
  ChatClient client_;
  JudgePrompts prompts_;
  ThinkMarkers markers_;
  VerdictPatterns patterns_;
  std::atomic<int> last_retries_{0};
};

}  // namespace palmr

#endif  // PALMR_REMOTE_JUDGE_HPP_
