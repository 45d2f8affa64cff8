#include <chrono>
#include <nlohmann/json.hpp>
#include <thread>

#include "x2x/backend_impl.hpp"
#include "x2x/rng.hpp"
#include "x2x/subprocess.hpp"

namespace x2x {

namespace {

using nlohmann::json;

// Generation over a local child process speaking line-delimited JSON:
//   request  {"id", "messages":[{"role","text"},...], "params":{...}[, "seed"]}
//   reply    {"id", "samples":[...]} or {"id", "error": "..."}
// The whole batch goes through one child per pass; indices without a reply
// are retried in a fresh pass.
class SubprocessBackend : public Backend {
 public:
  explicit SubprocessBackend(BackendDescriptor descriptor)
      : descriptor_(std::move(descriptor)) {}

  std::string id() const override { return "subprocess"; }

  std::vector<GenerationResult> generate_batch(
      const std::vector<RenderedPrompt>& prompts, const SamplingParams& params,
      const std::vector<std::uint64_t>& request_seeds) override {
    if (prompts.empty()) throw Error("generate_batch: prompts must be non-empty");
    if (request_seeds.size() != prompts.size())
      throw Error("generate_batch: one seed per prompt required");
    params.validate();

    std::vector<GenerationResult> results(prompts.size());
    for (std::size_t i = 0; i < results.size(); ++i) results[i].request_index = i;

    std::vector<std::size_t> pending(prompts.size());
    for (std::size_t i = 0; i < pending.size(); ++i) pending[i] = i;

    std::string last_note;
    for (int pass = 0; pass < descriptor_.retry.max_attempts && !pending.empty(); ++pass) {
      if (pass > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(
            static_cast<long long>(descriptor_.retry.backoff_ms) << (pass - 1)));
      }
      std::vector<std::string> lines, ids;
      lines.reserve(pending.size());
      ids.reserve(pending.size());
      for (std::size_t index : pending) {
        ids.push_back(std::to_string(index));
        lines.push_back(request_line(prompts[index], params,
                                     mix_seed(request_seeds[index],
                                              {static_cast<std::uint64_t>(pass)}),
                                     ids.back()));
      }

      const auto outcome = run_line_protocol(descriptor_.command, lines, ids,
                                             descriptor_.timeout_ms,
                                             descriptor_.max_in_flight);
      std::size_t replied = 0;
      for (const auto& reply : outcome.replies)
        if (reply) ++replied;
      if (outcome.exit_code == 127 && replied == 0)
        throw EnvironmentError(
            "subprocess command not found: " + descriptor_.command +
            (outcome.stderr_tail.empty() ? "" : " (" + outcome.stderr_tail + ")"));

      last_note = outcome.timed_out ? "timed out waiting for replies" : "child produced no reply";
      if (!outcome.stderr_tail.empty()) last_note += "; stderr: " + outcome.stderr_tail;

      std::vector<std::size_t> still_pending;
      for (std::size_t j = 0; j < pending.size(); ++j) {
        const std::size_t index = pending[j];
        if (!outcome.replies[j]) {
          still_pending.push_back(index);
          continue;
        }
        results[index].attempts = pass + 1;
        absorb_reply(*outcome.replies[j], results[index]);
      }
      pending = std::move(still_pending);
    }

    for (std::size_t index : pending) {
      results[index].attempts = descriptor_.retry.max_attempts;
      results[index].error = GenerationError{"exhausted retries: " + last_note};
    }
    return results;
  }

 private:
  std::string request_line(const RenderedPrompt& prompt, const SamplingParams& params,
                           std::uint64_t seed, const std::string& id) const {
    json request{{"id", id},
                 {"params",
                  {{"temperature", params.temperature},
                   {"top_p", params.top_p},
                   {"n", params.num_samples}}}};
    auto& messages = request["messages"] = json::array();
    for (const auto& message : prompt.messages)
      messages.push_back({{"role", role_name(message.role)}, {"text", message.text}});
    if (descriptor_.send_seed) request["seed"] = seed;
    return request.dump();
  }

  static void absorb_reply(const std::string& line, GenerationResult& result) {
    json reply;
    try {
      reply = json::parse(line);
    } catch (const json::exception& e) {
      result.error = GenerationError{std::string("unparseable reply: ") + e.what()};
      return;
    }
    if (reply.contains("error")) {
      result.error = GenerationError{reply["error"].is_string()
                                         ? reply["error"].get<std::string>()
                                         : reply["error"].dump()};
      return;
    }
    if (!reply.contains("samples") || !reply["samples"].is_array() ||
        reply["samples"].empty()) {
      result.error = GenerationError{"reply has no samples"};
      return;
    }
    for (const auto& sample : reply["samples"]) {
      if (!sample.is_string()) {
        result.samples.clear();
        result.error = GenerationError{"non-string sample in reply"};
        return;
      }
      result.samples.push_back(sample.get<std::string>());
    }
    if (reply.contains("usage") && reply["usage"].is_object()) {
      const auto& u = reply["usage"];
      if (u.contains("prompt_tokens") && u["prompt_tokens"].is_number())
        result.usage.prompt_tokens = u["prompt_tokens"].get<long>();
      if (u.contains("completion_tokens") && u["completion_tokens"].is_number())
        result.usage.completion_tokens = u["completion_tokens"].get<long>();
    }
  }

  BackendDescriptor descriptor_;
};

}  // namespace

std::unique_ptr<Backend> make_subprocess_backend(const BackendDescriptor& descriptor) {
  return std::make_unique<SubprocessBackend>(descriptor);
}

}  // namespace x2x
