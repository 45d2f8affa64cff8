#include "x2x/backend.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <thread>

#include "x2x/rng.hpp"
#include "x2x/backend_impl.hpp"

namespace x2x {

void SamplingParams::validate() const {
  if (num_samples < 1) throw Error("num_samples must be >= 1");
  if (temperature < 0.0) throw Error("temperature must be >= 0");
  if (!(top_p > 0.0) || top_p > 1.0) throw Error("top_p must be in (0, 1]");
}

SamplingParams rm_sampling() { return SamplingParams{1.0, 1.0, 4}; }
SamplingParams x2x_sampling() { return SamplingParams{0.9, 0.6, 4}; }

void BackendDescriptor::validate() const {
  if (max_in_flight < 1) throw Error("max_in_flight must be >= 1");
  if (retry.max_attempts < 1) throw Error("retry.max_attempts must be >= 1");
  if (timeout_ms < 1) throw Error("timeout_ms must be >= 1");
  if (kind == BackendKind::http_chat && endpoint.empty())
    throw Error("http_chat backend needs an endpoint");
  if (kind == BackendKind::subprocess && command.empty())
    throw Error("subprocess backend needs a command");
}

std::string to_chatml(const RenderedPrompt& prompt) {
  std::string out;
  for (const auto& message : prompt.messages) {
    out += "<|im_start|>";
    out += role_name(message.role);
    out += "\n";
    out += message.text;
    out += "<|im_end|>\n";
  }
  out += "<|im_start|>assistant\n";
  return out;
}

GenerationResult PooledBackendBase::run_with_retries(std::size_t index,
                                                     const RenderedPrompt& prompt,
                                                     const SamplingParams& params,
                                                     std::uint64_t seed) {
  GenerationResult result;
  result.request_index = index;
  const RetryPolicy policy = retry_policy();
  std::string last_failure;
  for (int attempt = 0; attempt < policy.max_attempts; ++attempt) {
    try {
      result.samples =
          attempt_once(prompt, params, mix_seed(seed, {static_cast<std::uint64_t>(attempt)}),
                       result.usage);
      result.attempts = attempt + 1;
      return result;
    } catch (const PermanentFailure& failure) {
      result.attempts = attempt + 1;
      result.error = GenerationError{failure.what()};
      return result;
    } catch (const TransientFailure& failure) {
      last_failure = failure.what();
      if (attempt + 1 < policy.max_attempts) {
        auto delay = std::chrono::milliseconds(
            static_cast<long long>(policy.backoff_ms) << attempt);
        std::this_thread::sleep_for(delay);
      }
    }
  }
  result.attempts = policy.max_attempts;
  result.error = GenerationError{"exhausted retries: " + last_failure};
  return result;
}

std::vector<GenerationResult> PooledBackendBase::generate_batch(
    const std::vector<RenderedPrompt>& prompts, const SamplingParams& params,
    const std::vector<std::uint64_t>& request_seeds) {
  if (prompts.empty()) throw Error("generate_batch: prompts must be non-empty");
  if (request_seeds.size() != prompts.size())
    throw Error("generate_batch: one seed per prompt required");
  params.validate();
  check_configuration();

  std::vector<GenerationResult> results(prompts.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < prompts.size();)
      results[i] = run_with_retries(i, prompts[i], params, request_seeds[i]);
  };

  std::size_t workers = std::min<std::size_t>(
      static_cast<std::size_t>(std::max(1, concurrent_requests())), prompts.size());
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& thread : pool) thread.join();
  return results;
}

std::vector<GenerationResult> generate_batch(Backend& backend,
                                             const std::vector<RenderedPrompt>& prompts,
                                             const SamplingParams& params,
                                             std::uint64_t seed) {
  std::vector<std::uint64_t> seeds(prompts.size());
  for (std::size_t i = 0; i < seeds.size(); ++i)
    seeds[i] = mix_seed(seed, {static_cast<std::uint64_t>(i)});
  return backend.generate_batch(prompts, params, seeds);
}

std::unique_ptr<Backend> make_backend(const BackendDescriptor& descriptor,
                                      const TemplateRegistry& registry) {
  descriptor.validate();
  switch (descriptor.kind) {
    case BackendKind::mock: {
      auto backend = std::make_unique<MockBackend>(registry, descriptor.mock);
      backend->set_max_in_flight(descriptor.max_in_flight);
      return backend;
    }
    case BackendKind::http_chat:
      return make_http_chat_backend(descriptor);
    case BackendKind::subprocess:
      return make_subprocess_backend(descriptor);
  }
  throw Error("unknown backend kind");
}

}  // namespace x2x
