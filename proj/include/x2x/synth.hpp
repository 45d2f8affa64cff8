#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "x2x/backend.hpp"
#include "x2x/corpus.hpp"
#include "x2x/prompts.hpp"

namespace x2x {

enum class Strategy { direct, pivot, eaxt };

std::string strategy_name(Strategy strategy);
Strategy parse_strategy(std::string_view name);

// One generation unit: translate one example into one non-English target.
struct SynthTask {
  std::string example_id;
  LanguageTag src;
  LanguageTag tgt;
  Strategy strategy = Strategy::direct;

  bool operator==(const SynthTask&) const = default;
};

struct Candidate {
  SynthTask task;
  int sample_index = 0;
  std::string text;
  // Empty after normalization, or byte-identical to the source text. Kept in
  // the store; the preference builder decides what degenerates may be used for.
  bool degenerate = false;
  // Pivot strategy: the English text the tgt leg translated.
  std::optional<std::string> pivot_intermediate;
  std::string template_name;
  SamplingParams params;
  std::string backend_id;
};

struct RejectedTask {
  std::string example_id;
  LanguageTag tgt;
  std::string reason;
};

struct PlanResult {
  std::vector<SynthTask> tasks;
  std::vector<RejectedTask> rejected;
};

// For each example, one task per non-English language in `langs` other than
// the example's own; order is corpus order crossed with sorted targets.
PlanResult plan_expansion(const Corpus& corpus, const std::vector<LanguageTag>& langs,
                          Strategy strategy);

struct SynthOptions {
  std::filesystem::path run_dir;
  std::uint64_t seed = 0;
  SamplingParams params = x2x_sampling();
  // Pivot normally translates the English reference directly; this switches
  // to a model-generated x->en leg first, for corpora whose English side is
  // untrusted.
  bool two_stage_pivot = false;
  std::size_t batch_size = 64;
};

struct SynthSummary {
  std::size_t planned = 0;
  std::size_t completed = 0;
  std::size_t resumed = 0;  // found complete in the ledger, not re-run
  std::size_t failed = 0;
  std::size_t candidates = 0;

  double failure_rate() const {
    return planned == 0 ? 0.0 : static_cast<double>(failed) / static_cast<double>(planned);
  }
};

// Seed for one task's generation, independent of batch composition so an
// interrupted run resumes onto byte-identical candidates.
std::uint64_t task_seed(std::uint64_t run_seed, const SynthTask& task);

std::filesystem::path candidate_ledger_path(const std::filesystem::path& run_dir,
                                            Strategy strategy, const Direction& direction);

// Runs every planned task not already completed in the run_dir ledgers.
// Candidates are appended per-direction; incomplete task groups left by an
// interrupted run are dropped on load and re-run.
SynthSummary synthesize(const Corpus& corpus, const PlanResult& plan, Strategy strategy,
                        Backend& backend, const TemplateRegistry& registry,
                        const SynthOptions& options);

// Candidate store read-back, sorted by (src, tgt, example_id, sample_index).
std::vector<Candidate> read_candidates(const std::filesystem::path& run_dir,
                                       Strategy strategy);
std::vector<Candidate> read_candidates(const std::filesystem::path& run_dir,
                                       Strategy strategy, const Direction& direction);

}  // namespace x2x
