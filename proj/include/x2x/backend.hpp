#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "x2x/base.hpp"
#include "x2x/prompts.hpp"

namespace x2x {

struct SamplingParams {
  double temperature = 1.0;
  double top_p = 1.0;
  int num_samples = 1;

  void validate() const;
};

// Named presets.
SamplingParams rm_sampling();   // temperature 1.0, top_p 1.0, 4 samples
SamplingParams x2x_sampling();  // temperature 0.9, top_p 0.6, 4 samples

struct RetryPolicy {
  int max_attempts = 3;
  int backoff_ms = 250;  // exponential: backoff_ms * 2^attempt
};

struct Usage {
  long prompt_tokens = -1;      // -1 = not reported
  long completion_tokens = -1;
};

struct GenerationError {
  std::string reason;
};

struct GenerationResult {
  std::size_t request_index = 0;
  std::vector<std::string> samples;  // |samples| == num_samples on success
  Usage usage;
  int attempts = 0;
  std::optional<GenerationError> error;

  bool ok() const { return !error.has_value(); }
};

// Thrown inside backends; the batch driver converts them into per-request
// error records. Transient failures are retried per policy.
struct TransientFailure : Error {
  using Error::Error;
};
struct PermanentFailure : Error {
  using Error::Error;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string id() const = 0;

  // Results come back in input order regardless of completion order. Each
  // request's stochastic choices derive from its entry in request_seeds, so
  // outputs are independent of concurrency and scheduling. Per-request
  // failures are recorded in place; only configuration errors throw.
  virtual std::vector<GenerationResult> generate_batch(
      const std::vector<RenderedPrompt>& prompts, const SamplingParams& params,
      const std::vector<std::uint64_t>& request_seeds) = 0;
};

// Convenience wrapper: derives per-request seeds from a batch seed, validates
// inputs, delegates.
std::vector<GenerationResult> generate_batch(Backend& backend,
                                             const std::vector<RenderedPrompt>& prompts,
                                             const SamplingParams& params,
                                             std::uint64_t seed);

// Shared driver for backends that serve one request per call: a bounded
// worker pool pulls request indices, retries transient failures with
// exponential backoff and writes results by index, so output order equals
// input order whatever the completion order.
class PooledBackendBase : public Backend {
 public:
  std::vector<GenerationResult> generate_batch(
      const std::vector<RenderedPrompt>& prompts, const SamplingParams& params,
      const std::vector<std::uint64_t>& request_seeds) override;

 protected:
  virtual std::vector<std::string> attempt_once(const RenderedPrompt& prompt,
                                                const SamplingParams& params,
                                                std::uint64_t attempt_seed,
                                                Usage& usage) = 0;
  virtual int concurrent_requests() const = 0;
  virtual RetryPolicy retry_policy() const = 0;
  // Throws for configuration errors; runs before any request is issued.
  virtual void check_configuration() const {}

 private:
  GenerationResult run_with_retries(std::size_t index, const RenderedPrompt& prompt,
                                    const SamplingParams& params, std::uint64_t seed);
};

// chatml serialization of a rendered prompt (the wire-side concern; templates
// themselves stay serialization-agnostic).
std::string to_chatml(const RenderedPrompt& prompt);

struct MockConfig {
  double quality_direct = 0.78;
  double quality_pivot = 0.80;
  double quality_eaxt = 0.82;
  double noise_sigma = 0.05;
  // Quality drop per sample index; gives multi-sample requests a known
  // best-to-worst spread for selection tests.
  double sample_decay = 0.08;
  // Fraction of characters corrupted scales with (1 - quality).
  double corruption_strength = 1.0;
  int latency_max_ms = 0;      // deterministic per-request jitter
  double failure_rate = 0.0;   // injected terminal failures
};

enum class BackendKind { http_chat, subprocess, mock };

struct BackendDescriptor {
  BackendKind kind = BackendKind::mock;
  std::string endpoint;  // http_chat: full URL of the chat-completions route
  std::string model;     // http_chat: model identifier
  std::string command;   // subprocess: shell command line
  std::string auth_env;  // name of env var holding the bearer token
  int timeout_ms = 30000;
  int max_in_flight = 4;
  RetryPolicy retry;
  // When false, an n-sample request is expanded into n single-sample calls
  // with derived seeds; either path yields exactly n samples.
  bool supports_n = true;
  // When true, http requests carry a "seed" field (honored by endpoints that
  // support it; ignored otherwise).
  bool send_seed = false;
  MockConfig mock;

  void validate() const;
};

// Seeded deterministic mock speaking the same template language as real
// endpoints: translation prompts are recovered through the registry's inverse
// matching and answered with pseudo-translations carrying a direction tag and
// an embedded quality marker; judge prompts echo the candidate's marker as a
// 0-100 score.
class MockBackend : public PooledBackendBase {
 public:
  MockBackend(const TemplateRegistry& registry, MockConfig config);

  std::string id() const override { return "mock"; }

  void set_max_in_flight(int n);
  int max_in_flight() const { return max_in_flight_; }

  // Captured copies of every prompt handled, in input order per batch.
  std::vector<RenderedPrompt> captured() const;
  void clear_captured();

  // Marker helpers shared with the marker-extraction scorer.
  static std::string format_marker(double quality);
  static std::optional<double> extract_marker(const std::string& text);

 protected:
  std::vector<std::string> attempt_once(const RenderedPrompt& prompt,
                                        const SamplingParams& params,
                                        std::uint64_t attempt_seed,
                                        Usage& usage) override;
  int concurrent_requests() const override { return max_in_flight_; }
  RetryPolicy retry_policy() const override { return RetryPolicy{1, 0}; }

 private:
  std::string answer_judge(const std::string& candidate_text,
                           std::uint64_t attempt_seed) const;
  std::string answer_translation(const RenderedPrompt& prompt,
                                 const TemplateKind kind,
                                 const std::map<std::string, std::string>& fields,
                                 int sample_index, std::uint64_t sample_seed) const;

  const TemplateRegistry& registry_;
  MockConfig config_;
  int max_in_flight_ = 4;
  mutable std::mutex capture_mutex_;
  std::vector<RenderedPrompt> captured_;
};

std::unique_ptr<Backend> make_backend(const BackendDescriptor& descriptor,
                                      const TemplateRegistry& registry);

}  // namespace x2x
