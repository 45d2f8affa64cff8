#include <atomic>
#include <chrono>
#include <cstdlib>
#include <thread>

#include <nlohmann/json.hpp>

#include "httplib.h"
#include "x2x/score.hpp"
#include "x2x/subprocess.hpp"

namespace x2x {

namespace {

using nlohmann::json;

ScoreOutcome outcome_from_reply(const json& reply, const ScoreScale& scale) {
  ScoreOutcome outcome;
  if (reply.contains("error")) {
    outcome.error = reply["error"].is_string() ? reply["error"].get<std::string>()
                                               : reply["error"].dump();
    return outcome;
  }
  if (!reply.contains("score") || !reply["score"].is_number()) {
    outcome.error = "reply has no numeric score";
    return outcome;
  }
  const double value = reply["score"].get<double>();
  if (!scale.contains(value)) {
    outcome.out_of_range = true;
    outcome.error = "score " + std::to_string(value) + " outside declared scale";
    return outcome;
  }
  outcome.score = value;
  return outcome;
}

class HttpScorer : public Scorer {
 public:
  explicit HttpScorer(ScorerEndpoint endpoint) : endpoint_(std::move(endpoint)) {
    if (endpoint_.endpoint.empty()) throw Error("http scorer needs an endpoint");
    const auto scheme = endpoint_.endpoint.find("://");
    if (scheme == std::string::npos)
      throw Error("endpoint must include a scheme: " + endpoint_.endpoint);
    const auto slash = endpoint_.endpoint.find('/', scheme + 3);
    base_ = endpoint_.endpoint.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : endpoint_.endpoint.substr(slash);
  }

  std::string id() const override { return "http-scorer"; }
  ScoreScale scale() const override { return endpoint_.scale; }

  std::vector<ScoreOutcome> score_batch(
      const std::vector<ScoreRequest>& requests) override {
    std::vector<ScoreOutcome> out(requests.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
      for (std::size_t i; (i = next.fetch_add(1)) < requests.size();)
        out[i] = score_one(requests[i]);
    };
    const std::size_t workers = std::min<std::size_t>(
        static_cast<std::size_t>(std::max(1, endpoint_.max_in_flight)), requests.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    if (workers > 0) work();
    for (auto& thread : pool) thread.join();
    return out;
  }

 private:
  ScoreOutcome score_one(const ScoreRequest& request) {
    const json body{{"id", request.id},
                    {"reference", request.reference_text},
                    {"candidate", request.candidate_text},
                    {"lang", request.tgt_lang.code}};
    std::string last_error;
    for (int attempt = 0; attempt < endpoint_.retry.max_attempts; ++attempt) {
      if (attempt > 0)
        std::this_thread::sleep_for(std::chrono::milliseconds(
            static_cast<long long>(endpoint_.retry.backoff_ms) << (attempt - 1)));
      httplib::Client client(base_);
      client.set_connection_timeout(endpoint_.timeout_ms / 1000,
                                    (endpoint_.timeout_ms % 1000) * 1000);
      client.set_read_timeout(endpoint_.timeout_ms / 1000,
                              (endpoint_.timeout_ms % 1000) * 1000);
      if (!endpoint_.auth_env.empty()) {
        if (const char* token = std::getenv(endpoint_.auth_env.c_str()))
          client.set_bearer_token_auth(token);
      }
      auto res = client.Post(path_, body.dump(), "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "http " + std::to_string(res->status);
        continue;
      }
      ScoreOutcome outcome;
      if (res->status < 200 || res->status >= 300) {
        outcome.error = "http " + std::to_string(res->status) + ": " +
                        res->body.substr(0, 200);
        return outcome;
      }
      try {
        return outcome_from_reply(json::parse(res->body), endpoint_.scale);
      } catch (const json::exception& e) {
        outcome.error = std::string("unparseable reply: ") + e.what();
        return outcome;
      }
    }
    ScoreOutcome outcome;
    outcome.error = "exhausted retries: " + last_error;
    return outcome;
  }

  ScorerEndpoint endpoint_;
  std::string base_;
  std::string path_;
};

class SubprocessScorer : public Scorer {
 public:
  explicit SubprocessScorer(ScorerEndpoint endpoint) : endpoint_(std::move(endpoint)) {
    if (endpoint_.command.empty()) throw Error("subprocess scorer needs a command");
  }

  std::string id() const override { return "subprocess-scorer"; }
  ScoreScale scale() const override { return endpoint_.scale; }

  std::vector<ScoreOutcome> score_batch(
      const std::vector<ScoreRequest>& requests) override {
    std::vector<ScoreOutcome> out(requests.size());
    std::vector<std::size_t> pending(requests.size());
    for (std::size_t i = 0; i < pending.size(); ++i) pending[i] = i;

    std::string last_note = "child produced no reply";
    for (int pass = 0; pass < endpoint_.retry.max_attempts && !pending.empty(); ++pass) {
      if (pass > 0)
        std::this_thread::sleep_for(std::chrono::milliseconds(
            static_cast<long long>(endpoint_.retry.backoff_ms) << (pass - 1)));
      std::vector<std::string> lines, ids;
      lines.reserve(pending.size());
      ids.reserve(pending.size());
      for (std::size_t index : pending) {
        const auto& request = requests[index];
        ids.push_back(std::to_string(index));
        lines.push_back(json{{"id", ids.back()},
                             {"reference", request.reference_text},
                             {"candidate", request.candidate_text},
                             {"lang", request.tgt_lang.code}}
                            .dump());
      }
      const auto result = run_line_protocol(endpoint_.command, lines, ids,
                                            endpoint_.timeout_ms,
                                            endpoint_.max_in_flight);
      std::size_t replied = 0;
      for (const auto& reply : result.replies)
        if (reply) ++replied;
      if (result.exit_code == 127 && replied == 0)
        throw EnvironmentError(
            "scorer command not found: " + endpoint_.command +
            (result.stderr_tail.empty() ? "" : " (" + result.stderr_tail + ")"));
      last_note = result.timed_out ? "timed out waiting for replies"
                                   : "child produced no reply";
      if (!result.stderr_tail.empty()) last_note += "; stderr: " + result.stderr_tail;

      std::vector<std::size_t> still_pending;
      for (std::size_t j = 0; j < pending.size(); ++j) {
        const std::size_t index = pending[j];
        if (!result.replies[j]) {
          still_pending.push_back(index);
          continue;
        }
        try {
          out[index] = outcome_from_reply(json::parse(*result.replies[j]),
                                          endpoint_.scale);
        } catch (const json::exception& e) {
          out[index].error = std::string("unparseable reply: ") + e.what();
        }
      }
      pending = std::move(still_pending);
    }
    for (std::size_t index : pending)
      out[index].error = "exhausted retries: " + last_note;
    return out;
  }

 private:
  ScorerEndpoint endpoint_;
};

}  // namespace

std::unique_ptr<Scorer> make_http_scorer(const ScorerEndpoint& endpoint) {
  return std::make_unique<HttpScorer>(endpoint);
}

std::unique_ptr<Scorer> make_subprocess_scorer(const ScorerEndpoint& endpoint) {
  return std::make_unique<SubprocessScorer>(endpoint);
}

}  // namespace x2x
