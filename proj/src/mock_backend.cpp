#include <algorithm>
#include <chrono>
#include <cstdio>
#include <thread>

#include "x2x/backend.hpp"
#include "x2x/corpus.hpp"
#include "x2x/rng.hpp"

namespace x2x {

namespace {

constexpr const char* kMarkerOpen = " [[q=";
constexpr const char* kMarkerClose = "]]";

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Replaces whole UTF-8 characters so corrupted output stays valid text.
std::string corrupt_text(const std::string& text, double rate, DetRng& rng) {
  static const char* replacements[] = {"~", "#", "%", "*", "?", "^", "+", "="};
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t len = 1;
    const unsigned char lead = static_cast<unsigned char>(text[i]);
    if (lead >= 0xF0)
      len = 4;
    else if (lead >= 0xE0)
      len = 3;
    else if (lead >= 0xC0)
      len = 2;
    len = std::min(len, text.size() - i);
    if (text[i] != ' ' && rng.next_double() < rate)
      out += replacements[rng.next_below(8)];
    else
      out.append(text, i, len);
    i += len;
  }
  return out;
}

}  // namespace

MockBackend::MockBackend(const TemplateRegistry& registry, MockConfig config)
    : registry_(registry), config_(config) {}

void MockBackend::set_max_in_flight(int n) {
  if (n < 1) throw Error("max_in_flight must be >= 1");
  max_in_flight_ = n;
}

std::vector<RenderedPrompt> MockBackend::captured() const {
  std::lock_guard<std::mutex> lock(capture_mutex_);
  return captured_;
}

void MockBackend::clear_captured() {
  std::lock_guard<std::mutex> lock(capture_mutex_);
  captured_.clear();
}

std::string MockBackend::format_marker(double quality) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%s%.6f%s", kMarkerOpen, quality, kMarkerClose);
  return buf;
}

std::optional<double> MockBackend::extract_marker(const std::string& text) {
  const auto open = text.rfind(kMarkerOpen);
  if (open == std::string::npos) return std::nullopt;
  const auto start = open + std::char_traits<char>::length(kMarkerOpen);
  const auto close = text.find(kMarkerClose, start);
  if (close == std::string::npos) return std::nullopt;
  try {
    return std::stod(text.substr(start, close - start));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::string MockBackend::answer_judge(const std::string& candidate_text,
                                      std::uint64_t attempt_seed) const {
  char buf[32];
  if (auto quality = extract_marker(candidate_text)) {
    std::snprintf(buf, sizeof(buf), "%.2f", clamp01(*quality) * 100.0);
    return buf;
  }
  // Foreign candidate without a marker: a stable pseudo-score keyed on the
  // text itself, so repeated judging agrees.
  (void)attempt_seed;
  const double score = 40.0 + static_cast<double>(fnv1a64(candidate_text) % 5501) / 100.0;
  std::snprintf(buf, sizeof(buf), "%.2f", score);
  return buf;
}

std::string MockBackend::answer_translation(
    const RenderedPrompt& prompt, const TemplateKind kind,
    const std::map<std::string, std::string>& fields, int sample_index,
    std::uint64_t sample_seed) const {
  double base = config_.quality_direct;
  std::string src_code = "xx";
  const auto src_it = fields.find("src_lang_name");
  if (src_it != fields.end()) {
    if (auto tag = language_tag_for_display_name(src_it->second)) src_code = tag->code;
  }
  if (kind == TemplateKind::eaxt)
    base = config_.quality_eaxt;
  else if (src_code == "en")
    base = config_.quality_pivot;

  DetRng rng(sample_seed);
  const double quality = clamp01(base - config_.sample_decay * sample_index +
                                 config_.noise_sigma * rng.next_gaussian());

  std::string tgt_code = "xx";
  const auto tgt_it = fields.find("tgt_lang_name");
  if (tgt_it != fields.end()) {
    if (auto tag = language_tag_for_display_name(tgt_it->second)) tgt_code = tag->code;
  }
  const auto text_it = fields.find("source_text");
  const std::string& payload =
      text_it != fields.end() ? text_it->second : prompt.messages.back().text;

  std::string out = "[mock:" + src_code + "-" + tgt_code + ":" +
                    std::to_string(sample_index) + "] ";
  const double rate = (1.0 - quality) * config_.corruption_strength;
  out += corrupt_text(payload, std::min(1.0, std::max(0.0, rate)), rng);
  out += format_marker(quality);
  return out;
}

std::vector<std::string> MockBackend::attempt_once(const RenderedPrompt& prompt,
                                                   const SamplingParams& params,
                                                   std::uint64_t attempt_seed,
                                                   Usage& usage) {
  {
    std::lock_guard<std::mutex> lock(capture_mutex_);
    captured_.push_back(prompt);
  }
  DetRng control(mix_seed(attempt_seed, {fnv1a64("mock-control")}));
  if (config_.latency_max_ms > 0) {
    std::this_thread::sleep_for(std::chrono::milliseconds(
        control.next_below(static_cast<std::uint64_t>(config_.latency_max_ms) + 1)));
  }
  if (config_.failure_rate > 0.0 && control.next_double() < config_.failure_rate)
    throw PermanentFailure("mock backend injected failure");

  const auto match = registry_.extract(prompt);
  if (!match)
    throw PermanentFailure("prompt does not match any registered template");

  usage.prompt_tokens = 0;
  for (const auto& message : prompt.messages)
    usage.prompt_tokens += static_cast<long>(message.text.size()) / 4;
  usage.completion_tokens = 0;

  std::vector<std::string> samples;
  samples.reserve(static_cast<std::size_t>(params.num_samples));
  if (match->kind == TemplateKind::judge) {
    const auto cand = match->values.find("candidate_text");
    const std::string candidate = cand != match->values.end() ? cand->second : "";
    for (int i = 0; i < params.num_samples; ++i)
      samples.push_back(answer_judge(candidate, attempt_seed));
  } else {
    for (int i = 0; i < params.num_samples; ++i) {
      const std::uint64_t sample_seed =
          mix_seed(attempt_seed, {fnv1a64("sample"), static_cast<std::uint64_t>(i)});
      samples.push_back(answer_translation(prompt, match->kind, match->values, i,
                                           sample_seed));
    }
  }
  for (const auto& sample : samples)
    usage.completion_tokens += static_cast<long>(sample.size()) / 4;
  return samples;
}

}  // namespace x2x
