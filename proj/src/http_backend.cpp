#include <cstdlib>
#include <nlohmann/json.hpp>

#include "httplib.h"
#include "x2x/backend_impl.hpp"
#include "x2x/rng.hpp"

namespace x2x {

namespace {

using nlohmann::json;

struct EndpointParts {
  std::string base;  // scheme://host[:port]
  std::string path;  // /v1/chat/completions
};

EndpointParts split_endpoint(const std::string& endpoint) {
  const auto scheme = endpoint.find("://");
  if (scheme == std::string::npos)
    throw Error("endpoint must include a scheme: " + endpoint);
  const auto slash = endpoint.find('/', scheme + 3);
  if (slash == std::string::npos) return {endpoint, "/"};
  return {endpoint.substr(0, slash), endpoint.substr(slash)};
}

std::string body_snippet(const std::string& body) {
  constexpr std::size_t kMax = 200;
  if (body.size() <= kMax) return body;
  return body.substr(0, kMax) + "...";
}

// OpenAI-compatible chat completions client. One request per prompt; the
// pooled base supplies concurrency and retries.
class HttpChatBackend : public PooledBackendBase {
 public:
  explicit HttpChatBackend(BackendDescriptor descriptor)
      : descriptor_(std::move(descriptor)), parts_(split_endpoint(descriptor_.endpoint)) {}

  std::string id() const override { return "http:" + descriptor_.model; }

 protected:
  void check_configuration() const override {
    if (!descriptor_.auth_env.empty() && !std::getenv(descriptor_.auth_env.c_str()))
      throw EnvironmentError("auth environment variable '" + descriptor_.auth_env +
                             "' is not set");
  }

  int concurrent_requests() const override { return descriptor_.max_in_flight; }
  RetryPolicy retry_policy() const override { return descriptor_.retry; }

  std::vector<std::string> attempt_once(const RenderedPrompt& prompt,
                                        const SamplingParams& params,
                                        std::uint64_t attempt_seed,
                                        Usage& usage) override {
    if (descriptor_.supports_n || params.num_samples == 1)
      return call_once(prompt, params, params.num_samples, attempt_seed, usage);
    // Server cannot multi-sample: issue n independent single-sample calls.
    std::vector<std::string> samples;
    samples.reserve(static_cast<std::size_t>(params.num_samples));
    for (int i = 0; i < params.num_samples; ++i) {
      auto one = call_once(prompt, params, 1,
                           mix_seed(attempt_seed, {static_cast<std::uint64_t>(i)}), usage);
      samples.push_back(std::move(one.front()));
    }
    return samples;
  }

 private:
  std::vector<std::string> call_once(const RenderedPrompt& prompt,
                                     const SamplingParams& params, int n,
                                     std::uint64_t seed, Usage& usage) {
    json request{{"model", descriptor_.model},
                 {"temperature", params.temperature},
                 {"top_p", params.top_p},
                 {"n", n}};
    auto& messages = request["messages"] = json::array();
    for (const auto& message : prompt.messages)
      messages.push_back({{"role", role_name(message.role)}, {"content", message.text}});
    if (descriptor_.send_seed) request["seed"] = seed;

    httplib::Client client(parts_.base);
    client.set_connection_timeout(descriptor_.timeout_ms / 1000,
                                  (descriptor_.timeout_ms % 1000) * 1000);
    client.set_read_timeout(descriptor_.timeout_ms / 1000,
                            (descriptor_.timeout_ms % 1000) * 1000);
    if (!descriptor_.auth_env.empty()) {
      if (const char* token = std::getenv(descriptor_.auth_env.c_str()))
        client.set_bearer_token_auth(token);
    }

    auto res = client.Post(parts_.path, request.dump(), "application/json");
    if (!res)
      throw TransientFailure("transport error: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500)
      throw TransientFailure("http " + std::to_string(res->status) + ": " +
                             body_snippet(res->body));
    if (res->status < 200 || res->status >= 300)
      throw PermanentFailure("http " + std::to_string(res->status) + ": " +
                             body_snippet(res->body));

    json reply;
    try {
      reply = json::parse(res->body);
    } catch (const json::exception& e) {
      throw PermanentFailure(std::string("unparseable response body: ") + e.what());
    }
    if (!reply.contains("choices") || !reply["choices"].is_array() ||
        reply["choices"].empty())
      throw PermanentFailure("response has no choices: " + body_snippet(res->body));

    std::vector<std::string> samples;
    for (const auto& choice : reply["choices"]) {
      if (!choice.contains("message") || !choice["message"].contains("content") ||
          !choice["message"]["content"].is_string())
        throw PermanentFailure("choice without message.content");
      samples.push_back(choice["message"]["content"].get<std::string>());
    }
    if (static_cast<int>(samples.size()) != n)
      throw PermanentFailure("expected " + std::to_string(n) + " choices, got " +
                             std::to_string(samples.size()));

    if (reply.contains("usage") && reply["usage"].is_object()) {
      const auto& u = reply["usage"];
      if (u.contains("prompt_tokens") && u["prompt_tokens"].is_number()) {
        if (usage.prompt_tokens < 0) usage.prompt_tokens = 0;
        usage.prompt_tokens += u["prompt_tokens"].get<long>();
      }
      if (u.contains("completion_tokens") && u["completion_tokens"].is_number()) {
        if (usage.completion_tokens < 0) usage.completion_tokens = 0;
        usage.completion_tokens += u["completion_tokens"].get<long>();
      }
    }
    return samples;
  }

  BackendDescriptor descriptor_;
  EndpointParts parts_;
};

}  // namespace

std::unique_ptr<Backend> make_http_chat_backend(const BackendDescriptor& descriptor) {
  return std::make_unique<HttpChatBackend>(descriptor);
}

}  // namespace x2x
